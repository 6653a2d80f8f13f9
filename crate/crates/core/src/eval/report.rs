use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::plot::{render, LinePlot, Scale, Series};
use super::suite::{ResultRow, TimingTable};
use crate::error::{Error, Result};

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Ordered key of a trained model in the store.
#[derive(Debug, Clone, PartialEq)]
struct ModelKey {
    method_rank: usize,
    method: String,
    k: f64,
}

impl ModelKey {
    fn of(row: &ResultRow) -> Self {
        let method_rank = ["independent_teacher", "independent_student", "afs_without_audit", "afs"]
            .iter()
            .position(|m| *m == row.method)
            .unwrap_or(usize::MAX);
        Self {
            method_rank,
            method: row.method.clone(),
            k: row.k,
        }
    }

    fn label(&self) -> String {
        if self.k >= 1.0 {
            self.method.clone()
        } else {
            format!("{} (k={:.2})", self.method, self.k)
        }
    }
}

/// Rows aggregated over seeds.
struct Aggregate {
    models: Vec<ModelKey>,
    p: BTreeMap<(String, String, usize), f64>,
    utility: BTreeMap<String, (f64, f64, usize)>,
    columns: BTreeMap<String, BTreeSet<usize>>,
}

fn aggregate(rows: &[ResultRow]) -> Aggregate {
    let mut models: Vec<ModelKey> = Vec::new();
    let mut p_raw: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    let mut util_raw: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    let mut columns: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, u64)> = BTreeSet::new();
    for row in rows {
        let key = ModelKey::of(row);
        let label = key.label();
        if !models.contains(&key) {
            models.push(key);
        }
        p_raw
            .entry((label.clone(), row.query_kind.clone(), row.n))
            .or_default()
            .push(row.p_value);
        columns.entry(row.query_kind.clone()).or_default().insert(row.n);
        // accuracy repeats on every query row of a model
        if seen.insert((label.clone(), row.seed)) {
            let u = util_raw.entry(label).or_insert((Vec::new(), Vec::new(), row.params));
            u.0.push(row.accuracy);
            u.1.push(row.f1);
        }
    }
    // full-pool models first within a method, then ascending k
    models.sort_by(|a, b| {
        (a.method_rank, &a.method, a.k < 1.0)
            .cmp(&(b.method_rank, &b.method, b.k < 1.0))
            .then(a.k.total_cmp(&b.k))
    });
    Aggregate {
        models,
        p: p_raw.into_iter().map(|(k, v)| (k, median(&v))).collect(),
        utility: util_raw
            .into_iter()
            .map(|(k, (a, f, params))| (k, (median(&a), median(&f), params)))
            .collect(),
        columns,
    }
}

fn fmt_p(p: Option<&f64>) -> String {
    p.map(|p| format!("{p:.2e}")).unwrap_or_else(|| "-".into())
}

fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}

fn audit_table(agg: &Aggregate) -> String {
    let mut columns: Vec<(String, usize)> = Vec::new();
    for kind in ["QO", "QNO"] {
        if let Some(ns) = agg.columns.get(kind) {
            columns.extend(ns.iter().map(|&n| (kind.to_string(), n)));
        }
    }
    let mut header = vec!["method".to_string()];
    header.extend(columns.iter().map(|(k, n)| format!("{k}_N{n}")));
    let rows: Vec<Vec<String>> = agg
        .models
        .iter()
        .map(|m| {
            let label = m.label();
            let mut row = vec![label.clone()];
            row.extend(
                columns
                    .iter()
                    .map(|(kind, n)| fmt_p(agg.p.get(&(label.clone(), kind.clone(), *n)))),
            );
            row
        })
        .collect();
    markdown(&header, &rows)
}

fn forgetting_table(agg: &Aggregate) -> String {
    let sizes = agg.columns.get("QF").cloned().unwrap_or_default();
    let (small, large) = (sizes.iter().next().copied(), sizes.iter().last().copied());
    let header: Vec<String> = ["method", "p_QF_small", "p_QF_large", "accuracy", "f1"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = agg
        .models
        .iter()
        .map(|m| {
            let label = m.label();
            let p = |n: Option<usize>| fmt_p(n.and_then(|n| agg.p.get(&(label.clone(), "QF".into(), n))));
            let (acc, f1, _) = agg.utility[&label];
            vec![
                label.clone(),
                p(small),
                p(large),
                format!("{acc:.4}"),
                format!("{f1:.4}"),
            ]
        })
        .collect();
    markdown(&header, &rows)
}

fn compression_table(agg: &Aggregate, timing: Option<&TimingTable>) -> String {
    let header = vec!["method".to_string(), "params".to_string()];
    let rows: Vec<Vec<String>> = agg
        .models
        .iter()
        .map(|m| vec![m.label(), agg.utility[&m.label()].2.to_string()])
        .collect();
    let mut out = markdown(&header, &rows);
    if let Some(t) = timing {
        let _ = writeln!(out, "\nInference time for {} samples:\n", t.batch);
        let header: Vec<String> = ["role", "params", "mean (µs)", "std (µs)", "repeats"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = t
            .entries
            .iter()
            .map(|e| {
                vec![
                    format!("{:?}", e.role).to_lowercase(),
                    e.params.to_string(),
                    format!("{:.1}", e.timing.mean_seconds * 1e6),
                    format!("{:.1}", e.timing.std_seconds * 1e6),
                    e.timing.repeats.to_string(),
                ]
            })
            .collect();
        out.push_str(&markdown(&header, &rows));
    }
    out
}

fn log_p(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).log10()
}

fn p_vs_n(agg: &Aggregate) -> String {
    let series: Vec<Series> = agg
        .models
        .iter()
        .map(|m| {
            let label = m.label();
            let points = agg
                .p
                .iter()
                .filter(|((l, kind, _), _)| *l == label && kind == "QNO")
                .map(|((_, _, n), &p)| (*n as f64, log_p(p)))
                .collect();
            Series { label, points }
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    render(&LinePlot {
        title: "QNO p-value vs query size",
        x_label: "N",
        y_label: "log10 p",
        x_scale: Scale::Log10,
        series: &series,
    })
}

fn p_vs_k(agg: &Aggregate) -> String {
    let method = ["afs", "afs_without_audit", "independent_student"]
        .into_iter()
        .find(|m| agg.models.iter().filter(|k| k.method == *m).count() > 0)
        .or_else(|| agg.models.first().map(|m| m.method.as_str()))
        .unwrap_or("")
        .to_string();
    let series: Vec<Series> = agg
        .columns
        .iter()
        .map(|(kind, ns)| {
            let n = *ns.iter().last().expect("nonempty");
            let points = agg
                .models
                .iter()
                .filter(|m| m.method == method)
                .filter_map(|m| agg.p.get(&(m.label(), kind.clone(), n)).map(|&p| (m.k, log_p(p))))
                .collect();
            Series {
                label: format!("{kind} N={n}"),
                points,
            }
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    render(&LinePlot {
        title: &format!("{method}: p-value vs training fraction k"),
        x_label: "k",
        y_label: "log10 p",
        x_scale: Scale::Linear,
        series: &series,
    })
}

fn purity(agg: &Aggregate) -> String {
    let series: Vec<Series> = agg
        .models
        .iter()
        .map(|m| {
            let label = m.label();
            let points = agg
                .p
                .iter()
                .filter(|((l, _, _), _)| *l == label)
                .filter_map(|((_, kind, _), &p)| {
                    kind.strip_prefix("QM_k")
                        .and_then(|k| k.parse::<f64>().ok())
                        .map(|k| (k, log_p(p)))
                })
                .collect();
            Series { label, points }
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    render(&LinePlot {
        title: "QM p-value vs query overlap",
        x_label: "overlap fraction of the query",
        y_label: "log10 p",
        x_scale: Scale::Linear,
        series: &series,
    })
}

/// Writes tables and trend plots for a results store into `out_dir`.
pub fn emit_report(rows: &[ResultRow], timing: Option<&TimingTable>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Precondition("results store is empty".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let agg = aggregate(rows);
    let files = [
        ("audit_table.md", audit_table(&agg)),
        ("forgetting_table.md", forgetting_table(&agg)),
        ("compression_table.md", compression_table(&agg, timing)),
        ("p_vs_n.svg", p_vs_n(&agg)),
        ("p_vs_k.svg", p_vs_k(&agg)),
        ("purity.svg", purity(&agg)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, k: f64, kind: &str, n: usize, p: f64, seed: u64) -> ResultRow {
        ResultRow {
            method: method.into(),
            k,
            query_kind: kind.into(),
            n,
            p_value: p,
            accuracy: 0.9,
            f1: 0.88,
            params: 100,
            seed,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn single_row_store() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[row("afs", 0.5, "QF", 1000, 1e-20, 0)], None, dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let table = std::fs::read_to_string(dir.path().join("forgetting_table.md")).unwrap();
        assert_eq!(table.lines().count(), 3);
        assert!(table.starts_with("| method | p_QF_small | p_QF_large | accuracy | f1 |"));
        assert!(table.contains("1.00e-20"));
        let plot = std::fs::read_to_string(dir.path().join("p_vs_k.svg")).unwrap();
        assert_eq!(plot.matches("<circle").count(), 1);
    }

    #[test]
    fn k_trend_has_line_per_kind() {
        let mut rows = Vec::new();
        for k in [0.25, 0.5, 0.75] {
            for kind in ["QO", "QNO", "QF"] {
                rows.push(row("afs", k, kind, 1000, 1e-3 * k, 0));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        emit_report(&rows, None, dir.path()).unwrap();
        let plot = std::fs::read_to_string(dir.path().join("p_vs_k.svg")).unwrap();
        assert_eq!(plot.matches("<polyline").count(), 3);
    }

    #[test]
    fn empty_store_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&[], None, dir.path()), Err(Error::Precondition(_))));
    }
}
