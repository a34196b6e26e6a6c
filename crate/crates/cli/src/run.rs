//! Maps a validated [`RunConfig`] onto library calls and writes results.

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::report;
use mvsim_core::combinatorics::{bound, count_no_unique, growth_exponent, MAX_P};
use mvsim_core::engine::{simulate_observed, MeanFieldMethod};
use mvsim_core::estimators::{
    build_histogram, moment_estimate, rate_points, terminal_samples, RatePoint, RateStudy,
};
use mvsim_core::model::{observable_get, ModelSpec, Observable};
use mvsim_core::noise::ALGORITHM_ID;
use mvsim_core::variations::{
    value_gradient, variation_moment_check, variation_moment_study, ParticleSde, VectorObservable,
};
use mvsim_core::{engine::init_particles, NoisePlan, SimGrid};
use serde_json::{json, Value};
use std::fs;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Files written by a run, relative names inside the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub summary: Value,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    model: ModelSpec,
    grid: SimGrid,
    noise: NoisePlan,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        report::write_text(&self.cfg.output_dir.join(name), text)?;
        self.files.push(name.into());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        report::write_json(&self.cfg.output_dir.join(name), value)?;
        self.files.push(name.into());
        Ok(())
    }

    fn observable(&self) -> Result<Observable, CliError> {
        observable_get(&self.cfg.observable).map_err(|e| CliError::Config {
            path: "/observable".into(),
            message: e.to_string(),
        })
    }
}

/// Executes `cfg`, writing result files and `manifest.json` into
/// `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let mut ctx = Ctx {
        cfg,
        model: cfg.model.resolve()?,
        grid: SimGrid::new(cfg.t_end, cfg.n_steps)?,
        noise: NoisePlan::new(cfg.seed),
        files: Vec::new(),
    };
    let summary = match cfg.command {
        Command::Simulate => run_simulate(&mut ctx)?,
        Command::Histogram => run_histogram(&mut ctx)?,
        Command::StrongRate | Command::WeakRate | Command::RateStudy => run_rates(&mut ctx)?,
        Command::Moments => run_moments(&mut ctx)?,
        Command::VariationsCheck => run_variations(&mut ctx)?,
        Command::CountMultiindex => run_multiindex(&mut ctx)?,
    };
    let manifest = json!({
        "tool": "mvsim",
        "version": env!("CARGO_PKG_VERSION"),
        "rng": ALGORITHM_ID,
        "config": cfg,
        "started_unix_seconds": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        "wall_clock_seconds": clock.elapsed().as_secs_f64(),
        "files": ctx.files,
        "summary": summary,
    });
    report::write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome {
        output_dir: cfg.output_dir.clone(),
        files: ctx.files,
        summary,
    })
}

fn run_simulate(ctx: &mut Ctx) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let mut terminal_means = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let mut rows = Vec::new();
        let record = cfg.trajectory && r == 0;
        let state = simulate_observed(
            &ctx.model,
            cfg.d,
            &ctx.grid,
            &ctx.noise,
            r,
            MeanFieldMethod::Auto,
            |_, s| {
                if record {
                    rows.push((s.t, s.x.clone()));
                }
            },
        )?;
        if record {
            ctx.write("trajectory.csv", &report::trajectory_csv(&rows))?;
        }
        let name = if cfg.replicates == 1 {
            "terminal.csv".to_string()
        } else {
            format!("terminal_r{r}.csv")
        };
        ctx.write(&name, &report::terminal_csv(&state.x))?;
        terminal_means.push(state.x.iter().sum::<f64>() / cfg.d as f64);
    }
    Ok(json!({"d": cfg.d, "replicates": cfg.replicates, "terminal_means": terminal_means}))
}

fn run_histogram(ctx: &mut Ctx) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let samples = terminal_samples(&ctx.model, cfg.d, &ctx.grid, &ctx.noise, cfg.replicates)?;
    let hist = build_histogram(&samples, cfg.n_bins, cfg.range.map(|[lo, hi]| (lo, hi)))?;
    ctx.write("histogram.csv", &report::histogram_csv(&hist))?;
    let modal = hist.modal_bin();
    let inside = samples.iter().filter(|&&x| (-0.5..=0.85).contains(&x)).count();
    Ok(json!({
        "d": cfg.d,
        "replicates": cfg.replicates,
        "samples": samples.len(),
        "excluded": hist.excluded,
        "modal_bin_center": hist.bin_center(modal),
        "modes": hist.count_modes(0.1),
        "total_mass": hist.total_mass(),
        "mass_in_core_window": inside as f64 / samples.len() as f64,
    }))
}

fn run_rates(ctx: &mut Ctx) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let g = ctx.observable()?;
    let points: Vec<RatePoint> = rate_points(&ctx.model, &g, &cfg.d_list, &ctx.grid, &ctx.noise, cfg.replicates)?;
    ctx.write("rates.csv", &report::rates_csv(&points))?;
    ctx.write("rates_mean_abs.csv", &report::mean_abs_csv(&points))?;
    let study = RateStudy::from_points(&points);
    let mut summary = json!({"d_list": cfg.d_list, "replicates": cfg.replicates});
    let fits: &[(&str, bool)] = &[
        ("strong", cfg.command != Command::WeakRate),
        ("weak", cfg.command != Command::StrongRate),
        ("mean_abs", cfg.command != Command::WeakRate),
    ];
    // a zero error (e.g. a non-interacting model) is reported, not fitted
    match study {
        Ok(study) => {
            for &(name, wanted) in fits {
                if !wanted {
                    continue;
                }
                let rate = match name {
                    "strong" => &study.strong,
                    "weak" => &study.weak,
                    _ => &study.mean_abs,
                };
                let fit = report::fit_json(rate, cfg.replicates, cfg.seed);
                ctx.write_json(&format!("fit_{name}.json"), &fit)?;
                summary[name] = json!({"slope": rate.slope, "stderr": rate.slope_stderr});
            }
        }
        Err(e) => summary["fit_error"] = json!(e.to_string()),
    }
    Ok(summary)
}

fn run_moments(ctx: &mut Ctx) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = cfg.p.unwrap_or(2);
    let mut rows = Vec::new();
    for &d in &cfg.d_list {
        let e = moment_estimate(&ctx.model, d, &ctx.grid, &ctx.noise.fork(d as u64), cfg.replicates, p)?;
        rows.push((d, p, e.value, e.ci));
    }
    ctx.write("moments.csv", &report::moments_csv(&rows))?;
    let hi = rows.iter().map(|r| r.2).fold(f64::MIN, f64::max);
    let lo = rows.iter().map(|r| r.2).fold(f64::MAX, f64::min);
    Ok(json!({"p": p, "d_list": cfg.d_list, "max_over_min": hi / lo}))
}

fn run_variations(ctx: &mut Ctx) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let p = cfg.p.unwrap_or(2);
    let g = match cfg.observable.as_str() {
        "sum" => VectorObservable::Sum,
        "sum-sin" => VectorObservable::SumSin,
        other => {
            return Err(CliError::Config {
                path: "/observable".into(),
                message: format!("unknown vector observable `{other}`, expected sum or sum-sin"),
            })
        }
    };
    let sde = ParticleSde::new(ctx.model.clone(), cfg.d)?;
    let x0 = init_particles(&ctx.model, cfg.d, &ctx.noise, 0).x;
    let moments = variation_moment_check(&sde, &x0, &ctx.grid, &ctx.noise, cfg.replicates, p)?;
    let grad = value_gradient(&sde, &g, &x0, &ctx.grid, &ctx.noise, cfg.replicates)?;
    let study = variation_moment_study(&ctx.model, &cfg.d_list, &ctx.grid, &ctx.noise, cfg.replicates, p)?;
    let maxima: Vec<f64> = study.reports.iter().map(|r| r.max()).collect();
    let report = json!({
        "d": cfg.d,
        "p": p,
        "seed": cfg.seed,
        "replicates": cfg.replicates,
        "x0": x0,
        "estimates": {
            "moments": moments.moments,
            "diag_max": moments.diag_max,
            "offdiag_max": moments.offdiag_max,
            "value_gradient": grad.gradient,
            "study_d_list": cfg.d_list,
            "study_maxima": maxima,
            "study_spread": study.spread,
        },
        "ci": {
            "moments": moments.ci,
            "value_gradient": grad.ci,
        },
    });
    ctx.write_json("variations.json", &report)?;
    Ok(json!({
        "diag_max": moments.diag_max,
        "offdiag_max": moments.offdiag_max,
        "study_spread": study.spread,
        "within_factor_3": study.within_factor(3.0),
    }))
}

fn run_multiindex(ctx: &mut Ctx) -> Result<Value, CliError> {
    let cfg = ctx.cfg;
    let ps: Vec<usize> = match cfg.p {
        Some(p) => vec![p as usize],
        None => (2..=MAX_P).collect(),
    };
    let mut rows = Vec::new();
    let mut growth = serde_json::Map::new();
    for &p in &ps {
        rows.push((cfg.n, p, count_no_unique(cfg.n, p)?, bound(cfg.n, p)?));
        if p <= 8 {
            growth.insert(p.to_string(), json!(growth_exponent(p)?));
        }
    }
    ctx.write("multiindex.csv", &report::multiindex_csv(&rows))?;
    Ok(json!({"n": cfg.n, "growth_exponents": growth}))
}
