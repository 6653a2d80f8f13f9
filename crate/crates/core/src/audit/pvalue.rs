//! Dataset-level test: membership bits against an all-ones reference.

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Reported when every bit is zero and the t statistic is unbounded.
pub const MIN_P_VALUE: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch unequal-variance t-test.
///
/// Returns `None` when either sample has fewer than two values or both
/// variances are zero, since the statistic is undefined there.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return None;
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    // P(|T| ≥ |t|) = I_{df/(df+t²)}(df/2, 1/2)
    let p_value = beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Some(WelchTest { t, df, p_value })
}

/// p-value of a Welch test between `bits` and an all-ones vector of equal length.
///
/// Degenerate inputs: fewer than two bits, or all ones, give 1.0; all zeros
/// (with at least two bits) give [`MIN_P_VALUE`].
pub fn dataset_pvalue(bits: &[u8]) -> Result<f64> {
    if bits.is_empty() {
        return Err(Error::Domain("membership vector is empty".into()));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::Domain(format!("membership bit {b} is not binary")));
    }
    if bits.len() < 2 {
        return Ok(1.0);
    }
    let ones = bits.iter().filter(|&&b| b == 1).count();
    if ones == bits.len() {
        return Ok(1.0);
    }
    if ones == 0 {
        return Ok(MIN_P_VALUE);
    }
    let a: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
    let reference = vec![1.0; bits.len()];
    Ok(welch_t_test(&a, &reference)
        .expect("mixed bits have positive variance")
        .p_value)
}
