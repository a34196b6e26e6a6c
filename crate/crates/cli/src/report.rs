//! CSV and JSON writers. Floats are written with Rust's shortest round-trip
//! formatting, so equal values always produce equal bytes.

use crate::error::CliError;
use mvsim_core::estimators::{Histogram, RateEstimate, RatePoint};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn trajectory_csv(rows: &[(f64, Vec<f64>)]) -> String {
    let mut out = String::from("t,particle,x\n");
    for (t, x) in rows {
        for (i, v) in x.iter().enumerate() {
            let _ = writeln!(out, "{t},{i},{v}");
        }
    }
    out
}

pub fn terminal_csv(x: &[f64]) -> String {
    let mut out = String::from("particle,x\n");
    for (i, v) in x.iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

pub fn rates_csv(points: &[RatePoint]) -> String {
    let mut out = String::from("d,strong_err,strong_ci,weak_err,weak_ci\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.d, p.strong.value, p.strong.ci, p.weak.value, p.weak.ci
        );
    }
    out
}

pub fn mean_abs_csv(points: &[RatePoint]) -> String {
    let mut out = String::from("d,mean_abs_err,mean_abs_ci\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.d, p.mean_abs.value, p.mean_abs.ci);
    }
    out
}

/// Fit summary `{slope, intercept, stderr, d_list, n_replicates, seed}`.
pub fn fit_json(rate: &RateEstimate, replicates: usize, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "slope": rate.slope,
        "intercept": rate.intercept,
        "stderr": rate.slope_stderr,
        "d_list": rate.d_list,
        "errors": rate.errors,
        "ci_halfwidths": rate.ci_halfwidths,
        "n_replicates": replicates,
        "seed": seed,
    })
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right,mass\n");
    for (k, m) in h.mass.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", h.edges[k], h.edges[k + 1], m);
    }
    out
}

pub fn multiindex_csv(rows: &[(u64, usize, u128, u128)]) -> String {
    let mut out = String::from("n,p,count,bound\n");
    for (n, p, count, bound) in rows {
        let _ = writeln!(out, "{n},{p},{count},{bound}");
    }
    out
}

pub fn moments_csv(rows: &[(usize, u32, f64, f64)]) -> String {
    let mut out = String::from("d,p,moment,ci\n");
    for (d, p, m, ci) in rows {
        let _ = writeln!(out, "{d},{p},{m},{ci}");
    }
    out
}
