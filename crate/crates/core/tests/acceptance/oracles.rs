//! Reference implementations computed along routes independent of the crate.

/// Exhaustive threshold search: every observed value is tried, rates are
/// counted by full scans and candidates compared as exact fractions.
pub fn threshold_oracle(members: &[f64], nonmembers: &[f64]) -> (f64, f64) {
    let (nm, nn) = (members.len() as i128, nonmembers.len() as i128);
    let mut best: Option<(f64, i128, i128)> = None;
    for &t in members.iter().chain(nonmembers) {
        let tp = members.iter().filter(|&&v| v >= t).count() as i128;
        let tn = nonmembers.iter().filter(|&&v| v < t).count() as i128;
        best = match best {
            None => Some((t, tp, tn)),
            Some((bt, btp, btn)) => {
                // tp/nm + tn/nn against btp/nm + btn/nn
                let lhs = tp * nn + tn * nm;
                let rhs = btp * nn + btn * nm;
                if lhs > rhs || (lhs == rhs && t > bt) {
                    Some((t, tp, tn))
                } else {
                    Some((bt, btp, btn))
                }
            }
        };
    }
    let (t, tp, tn) = best.expect("nonempty inputs");
    let ba = (tp as f64 / nm as f64 + tn as f64 / nn as f64) / 2.0;
    (t, ba)
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.5 by the Lanczos approximation (g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = (a + b) / 2.0;
    let (lm, rm) = ((a + m) / 2.0, (m + b) / 2.0);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
        return left + right + (left + right - whole) / 15.0;
    }
    let half = (eps / 2.0).max(1e-15);
    adaptive(f, a, m, fa, flm, fm, left, half, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, half, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f((a + b) / 2.0), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, eps, 40)
}

/// Two-sided Student-t tail probability by integrating the density over
/// `[|t|, ∞)`, mapped onto `(0, 1]` with `x = |t| / u`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let t = t.abs();
    let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let mapped = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            density(t / u) * t / (u * u)
        }
    };
    // split the unit interval so the peak near u = 1 is resolved
    let cuts = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0];
    let tail: f64 = cuts
        .windows(2)
        .map(|w| integrate(&mapped, w[0], w[1], 1e-13))
        .sum();
    (2.0 * tail).min(1.0)
}

/// Welch test of a 0/1 vector against the all-ones vector, written in its
/// one-sample closed form: the reference has zero variance, so
/// `t = (1 - mean) / sqrt(s² / N)` with `N - 1` degrees of freedom.
pub fn welch_oracle(bits: &[u8]) -> f64 {
    let n = bits.len() as f64;
    let ones = bits.iter().filter(|&&b| b == 1).count() as f64;
    let mean = ones / n;
    let s2 = (ones * (1.0 - mean).powi(2) + (n - ones) * mean.powi(2)) / (n - 1.0);
    let t = (1.0 - mean) / (s2 / n).sqrt();
    student_t_two_sided(t, n - 1.0)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
