//! Monte Carlo estimators for strong and weak errors between coupled d and
//! 2d particle systems, log-log rate fits, moments and histograms.
//!
//! Replicates run in parallel; per-replicate results land in slots indexed
//! by replicate id and are reduced in index order.

use crate::engine::{init_particles, simulate, simulate_coupled, SimGrid};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Observable};
use crate::noise::NoisePlan;
use crate::summation::{compensated_mean, compensated_sum, mean_and_variance};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Per-replicate quantities of one coupled pair; averages run over the
/// `d` shared particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub d: usize,
    pub replicate: usize,
    /// `(1/d) Σ_i (X_i^{2d} − X_i^d)²`
    pub strong_sq: f64,
    /// `(1/d) Σ_i |X_i^{2d} − X_i^d|`
    pub strong_abs: f64,
    /// `(1/d) Σ_i g(X_i^d)`
    pub weak_small: f64,
    /// `(1/d) Σ_{i ≤ d} g(X_i^{2d})`
    pub weak_big: f64,
}

/// A point estimate with its 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci: f64,
}

/// Runs `f(replicate)` for every replicate in parallel and returns the
/// results in replicate order; the lowest-index failure wins.
pub(crate) fn par_replicates<T, F>(replicates: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let slots: Vec<Result<T>> = (0..replicates).into_par_iter().map(f).collect();
    slots.into_iter().collect()
}

pub fn coupled_sample(
    model: &ModelSpec,
    g: &Observable,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicate: usize,
) -> Result<ErrorSample> {
    let pair = simulate_coupled(model, d, grid, noise, replicate)?;
    let shared = &pair.big.x[..d];
    let diffs = || shared.iter().zip(&pair.small.x).map(|(b, s)| b - s);
    let inv = d as f64;
    Ok(ErrorSample {
        d,
        replicate,
        strong_sq: compensated_sum(diffs().map(|e| e * e)) / inv,
        strong_abs: compensated_sum(diffs().map(f64::abs)) / inv,
        weak_small: compensated_sum(pair.small.x.iter().map(|&x| g.eval(x))) / inv,
        weak_big: compensated_sum(shared.iter().map(|&x| g.eval(x))) / inv,
    })
}

/// Error samples for replicates `0..replicates`.
pub fn collect_samples(
    model: &ModelSpec,
    g: &Observable,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Vec<ErrorSample>> {
    par_replicates(replicates, |r| coupled_sample(model, g, d, grid, noise, r))
}

fn check_replicates(replicates: usize) -> Result<()> {
    if replicates < 2 {
        return Err(Error::Domain(format!("need at least 2 replicates, got {replicates}")));
    }
    Ok(())
}

/// Root of the mean of `strong_sq`, with a delta-method interval.
pub fn strong_from_samples(samples: &[ErrorSample]) -> Estimate {
    let sq: Vec<f64> = samples.iter().map(|s| s.strong_sq).collect();
    let (mean, var) = mean_and_variance(&sq);
    let value = mean.sqrt();
    let ci = if mean > 0.0 {
        Z95 * (var / sq.len() as f64).sqrt() / (2.0 * value)
    } else {
        0.0
    };
    Estimate { value, ci }
}

/// `|mean(weak_big − weak_small)|` with an interval from the replicate
/// variance of the signed difference.
pub fn weak_from_samples(samples: &[ErrorSample]) -> Estimate {
    let diff: Vec<f64> = samples.iter().map(|s| s.weak_big - s.weak_small).collect();
    let (mean, var) = mean_and_variance(&diff);
    Estimate {
        value: mean.abs(),
        ci: Z95 * (var / diff.len() as f64).sqrt(),
    }
}

/// Mean absolute gap `E|X^{2d} − X^d|`.
pub fn mean_abs_from_samples(samples: &[ErrorSample]) -> Estimate {
    let a: Vec<f64> = samples.iter().map(|s| s.strong_abs).collect();
    let (mean, var) = mean_and_variance(&a);
    Estimate {
        value: mean,
        ci: Z95 * (var / a.len() as f64).sqrt(),
    }
}

/// RMS gap between particle `i` of the d-system and of the coupled 2d-system.
pub fn strong_error(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Estimate> {
    check_replicates(replicates)?;
    let g = Observable::Constant { value: 0.0 };
    Ok(strong_from_samples(&collect_samples(model, &g, d, grid, noise, replicates)?))
}

/// `|E[g(X_i^{2d}) − g(X_i^d)]|` on the coupled pair.
pub fn weak_error(
    model: &ModelSpec,
    g: &Observable,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Estimate> {
    check_replicates(replicates)?;
    Ok(weak_from_samples(&collect_samples(model, g, d, grid, noise, replicates)?))
}

/// Least-squares fit `log₂ error = slope · log₂ d + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn fit_rate(d_list: &[usize], errors: &[f64]) -> Result<PowerFit> {
    if d_list.len() != errors.len() {
        return Err(Error::Domain(format!(
            "{} d values but {} errors",
            d_list.len(),
            errors.len()
        )));
    }
    if d_list.len() < 3 {
        return Err(Error::Domain("need at least 3 points to fit a rate".into()));
    }
    if let Some((index, &value)) = errors.iter().enumerate().find(|(_, e)| !(**e > 0.0)) {
        return Err(Error::NonPositiveError { index, value });
    }
    let xs: Vec<f64> = d_list.iter().map(|&d| (d as f64).log2()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log2()).collect();
    let n = xs.len() as f64;
    let mx = compensated_mean(&xs);
    let my = compensated_mean(&ys);
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = compensated_sum(xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = compensated_sum(
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2)),
    );
    Ok(PowerFit {
        slope,
        intercept,
        slope_stderr: (ssr / (n - 2.0) / sxx).sqrt(),
    })
}

/// Error curve over particle counts and its fitted slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub d_list: Vec<usize>,
    pub errors: Vec<f64>,
    pub ci_halfwidths: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

impl RateEstimate {
    pub fn from_estimates(d_list: &[usize], estimates: &[Estimate]) -> Result<Self> {
        let errors: Vec<f64> = estimates.iter().map(|e| e.value).collect();
        let fit = fit_rate(d_list, &errors)?;
        Ok(Self {
            d_list: d_list.to_vec(),
            ci_halfwidths: estimates.iter().map(|e| e.ci).collect(),
            errors,
            slope: fit.slope,
            intercept: fit.intercept,
            slope_stderr: fit.slope_stderr,
        })
    }
}

/// Estimates at one particle count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub d: usize,
    pub replicates: usize,
    pub strong: Estimate,
    pub weak: Estimate,
    pub mean_abs: Estimate,
}

fn check_d_list(d_list: &[usize]) -> Result<()> {
    if d_list.is_empty() || d_list[0] == 0 {
        return Err(Error::Domain("d_list must be non-empty and positive".into()));
    }
    if d_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("d_list must be ascending".into()));
    }
    Ok(())
}

/// Per-d estimates; each d draws from its own fork of `noise`.
pub fn rate_points(
    model: &ModelSpec,
    g: &Observable,
    d_list: &[usize],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Vec<RatePoint>> {
    check_d_list(d_list)?;
    check_replicates(replicates)?;
    d_list
        .iter()
        .map(|&d| {
            let samples = collect_samples(model, g, d, grid, &noise.fork(d as u64), replicates)?;
            Ok(RatePoint {
                d,
                replicates,
                strong: strong_from_samples(&samples),
                weak: weak_from_samples(&samples),
                mean_abs: mean_abs_from_samples(&samples),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub strong: RateEstimate,
    pub weak: RateEstimate,
    pub mean_abs: RateEstimate,
}

impl RateStudy {
    pub fn from_points(points: &[RatePoint]) -> Result<Self> {
        let d_list: Vec<usize> = points.iter().map(|p| p.d).collect();
        let pick = |f: fn(&RatePoint) -> Estimate| points.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            strong: RateEstimate::from_estimates(&d_list, &pick(|p| p.strong))?,
            weak: RateEstimate::from_estimates(&d_list, &pick(|p| p.weak))?,
            mean_abs: RateEstimate::from_estimates(&d_list, &pick(|p| p.mean_abs))?,
        })
    }
}

/// Strong and weak error curves with fitted slopes. Fails with
/// [`Error::NonPositiveError`] when some error is exactly zero, e.g. for
/// non-interacting models.
pub fn rate_study(
    model: &ModelSpec,
    g: &Observable,
    d_list: &[usize],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<RateStudy> {
    RateStudy::from_points(&rate_points(model, g, d_list, grid, noise, replicates)?)
}

/// Particle average of `|x|^{2p}` for one state.
pub fn state_moment(x: &[f64], p: u32) -> f64 {
    compensated_mean(&x.iter().map(|v| v.abs().powi(2 * p as i32)).collect::<Vec<_>>())
}

fn check_moment_order(p: u32) -> Result<()> {
    if p == 0 || 2 * p > 8 {
        return Err(Error::Domain(format!("moment order 2p must be in 2..=8, got p = {p}")));
    }
    Ok(())
}

fn moment_from_replicates(per_rep: &[f64]) -> Estimate {
    let (mean, var) = mean_and_variance(per_rep);
    Estimate {
        value: mean,
        ci: Z95 * (var / per_rep.len() as f64).sqrt(),
    }
}

/// `E|X^d(T)|^{2p}`, averaged over particles and replicates.
pub fn moment_estimate(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
    p: u32,
) -> Result<Estimate> {
    check_moment_order(p)?;
    check_replicates(replicates)?;
    let per_rep = par_replicates(replicates, |r| {
        simulate(model, d, grid, noise, r).map(|s| state_moment(&s.x, p))
    })?;
    Ok(moment_from_replicates(&per_rep))
}

/// `E|X^d(0)|^{2p}` from the initial draws.
pub fn initial_moment_estimate(
    model: &ModelSpec,
    d: usize,
    noise: &NoisePlan,
    replicates: usize,
    p: u32,
) -> Result<Estimate> {
    check_moment_order(p)?;
    check_replicates(replicates)?;
    let per_rep: Vec<f64> = (0..replicates)
        .map(|r| state_moment(&init_particles(model, d, noise, r).x, p))
        .collect();
    Ok(moment_from_replicates(&per_rep))
}

/// Terminal positions of replicates `0..replicates`, concatenated in
/// replicate order.
pub fn terminal_samples(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Vec<f64>> {
    let states = par_replicates(replicates, |r| simulate(model, d, grid, noise, r))?;
    Ok(states.into_iter().flat_map(|s| s.x).collect())
}

/// Equal-width histogram; masses are fractions of the in-range samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
    /// Samples falling outside an explicitly requested range.
    pub excluded: usize,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.mass.len()
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    /// Index of the heaviest bin (first one on ties).
    pub fn modal_bin(&self) -> usize {
        let mut best = 0;
        for (k, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = k;
            }
        }
        best
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.mass.iter().copied())
    }

    /// Number of peaks of the 3-bin running mean whose topographic
    /// prominence is at least `min_prominence` times the highest peak.
    pub fn count_modes(&self, min_prominence: f64) -> usize {
        let n = self.mass.len();
        let smooth: Vec<f64> = (0..n)
            .map(|k| {
                let lo = k.saturating_sub(1);
                let hi = (k + 2).min(n);
                self.mass[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let top = smooth.iter().cloned().fold(0.0, f64::max);
        if top <= 0.0 {
            return 0;
        }
        let mut modes = 0;
        let mut k = 0;
        while k < n {
            // plateau [k, e)
            let mut e = k + 1;
            while e < n && smooth[e] == smooth[k] {
                e += 1;
            }
            let h = smooth[k];
            let left_lower = k == 0 || smooth[k - 1] < h;
            let right_lower = e == n || smooth[e] < h;
            if left_lower && right_lower && h > 0.0 {
                // lowest point on each side before reaching higher ground
                let mut left_min = h;
                let mut j = k;
                while j > 0 && smooth[j - 1] <= h {
                    j -= 1;
                    left_min = left_min.min(smooth[j]);
                }
                // walking off the histogram reaches zero mass
                let left_base = if j == 0 { 0.0 } else { left_min };
                let mut right_min = h;
                let mut j = e - 1;
                while j + 1 < n && smooth[j + 1] <= h {
                    j += 1;
                    right_min = right_min.min(smooth[j]);
                }
                let right_base = if j + 1 == n { 0.0 } else { right_min };
                let prominence = h - left_base.max(right_base);
                if prominence >= min_prominence * top {
                    modes += 1;
                }
            }
            k = e;
        }
        modes
    }
}

pub fn build_histogram(samples: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_bins == 0 {
        return Err(Error::Domain("n_bins must be at least 1".into()));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite sample {bad}")));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::Domain(format!("empty histogram range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
    };
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=n_bins)
        .map(|k| if k == n_bins && hi > lo { hi } else { lo + k as f64 * width })
        .collect();
    let mut counts = vec![0usize; n_bins];
    let mut excluded = 0;
    for &v in samples {
        if v < lo || v > hi {
            excluded += 1;
            continue;
        }
        // last bin closed on the right
        let k = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let kept = samples.len() - excluded;
    if kept == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(Histogram {
        edges,
        mass: counts.iter().map(|&c| c as f64 / kept as f64).collect(),
        excluded,
    })
}
