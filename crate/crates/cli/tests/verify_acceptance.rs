//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Takes roughly 15 minutes on one core.

use mvsim::{run, validate_config, RunConfig};
use mvsim_core::combinatorics::{count_no_unique, growth_exponent};
use mvsim_core::engine::{em_step, init_particles, simulate, simulate_coupled, simulate_observed, MeanFieldMethod};
use mvsim_core::model::{decoupled_linear, paper_example, smooth_gauss, ModelSpec};
use mvsim_core::noise::CHANNEL_INCREMENT;
use mvsim_core::variations::{
    simulate_variation, value_fd_gradient, value_gradient, LinearSde, ParticleSde, VectorObservable,
};
use mvsim_core::{NoisePlan, ParticleState, SimGrid};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const D_LIST: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];
const REF_STRONG: [f64; 7] = [0.012933, 0.008023, 0.005226, 0.003563, 0.002463, 0.001723, 0.001205];
const REF_WEAK: [f64; 7] = [
    0.013503125,
    0.00643125,
    0.002975,
    0.0015796875,
    0.0008419921875,
    0.000401953125,
    0.000196337890625,
];
const STRONG_SLOPE: (f64, f64) = (-0.65, -0.42);
const WEAK_SLOPE: (f64, f64) = (-1.15, -0.85);
const RATE_REPLICATES: usize = 4096;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }

    fn info(&self, id: &str, detail: String) {
        println!("INFO {id}: {detail}");
    }
}

fn out_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn config(v: Value, name: &str) -> RunConfig {
    let mut v = v;
    v["output_dir"] = json!(out_dir(name).display().to_string());
    validate_config(&v).unwrap()
}

fn read_json(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn in_window(x: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&x)
}

fn pointwise(report: &mut Report, id: &str, errors: &[f64], ci: &[f64], reference: &[f64], tol: f64) {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for k in 0..reference.len() {
        let rel = errors[k] / reference[k] - 1.0;
        worst = worst.max(rel.abs());
        lines.push(format!(
            "d={} {:.6}±{:.6} ref {:.6} ({:+.1}%)",
            D_LIST[k],
            errors[k],
            ci[k],
            reference[k],
            100.0 * rel
        ));
    }
    report.check(
        id,
        worst <= tol,
        format!("max relative deviation {:.1}% (limit {:.0}%); {}", 100.0 * worst, 100.0 * tol, lines.join(", ")),
    );
}

fn rate_study(n_steps: usize) -> (Value, Value, Value) {
    let name = format!("rate-study-n{n_steps}");
    let cfg = config(
        json!({
            "command": "rate-study",
            "model": "paper-example",
            "d_list": D_LIST,
            "n_steps": n_steps,
            "t_end": 1.0,
            "replicates": RATE_REPLICATES,
            "seed": 0,
        }),
        &name,
    );
    run(&cfg).unwrap();
    let dir = out_dir(&name);
    (
        read_json(&dir, "fit_strong.json"),
        read_json(&dir, "fit_weak.json"),
        read_json(&dir, "fit_mean_abs.json"),
    )
}

fn criteria_rates(report: &mut Report) {
    let clock = Instant::now();
    let (strong, weak, mean_abs) = rate_study(64);
    let slope = |v: &Value| v["slope"].as_f64().unwrap();
    let stderr = |v: &Value| v["stderr"].as_f64().unwrap();

    pointwise(
        report,
        "1 strong RMS pointwise",
        &floats(&strong["errors"]),
        &floats(&strong["ci_halfwidths"]),
        &REF_STRONG,
        0.20,
    );
    report.check(
        "1 strong slope",
        in_window(slope(&strong), STRONG_SLOPE),
        format!("{:.4} ± {:.4} in [{}, {}]", slope(&strong), stderr(&strong), STRONG_SLOPE.0, STRONG_SLOPE.1),
    );
    let ma = floats(&mean_abs["errors"]);
    let ratios: Vec<String> = ma.iter().zip(REF_STRONG).map(|(e, r)| format!("{:.3}", e / r)).collect();
    report.info(
        "1 mean-abs strong error",
        format!("ratio to reference per d [{}], slope {:.4}", ratios.join(", "), slope(&mean_abs)),
    );

    pointwise(
        report,
        "2 weak pointwise",
        &floats(&weak["errors"]),
        &floats(&weak["ci_halfwidths"]),
        &REF_WEAK,
        0.30,
    );
    report.check(
        "2 weak slope",
        in_window(slope(&weak), WEAK_SLOPE),
        format!("{:.4} ± {:.4} in [{}, {}]", slope(&weak), stderr(&weak), WEAK_SLOPE.0, WEAK_SLOPE.1),
    );
    report.info("1-2 runtime N=64", format!("{:.0} s, {RATE_REPLICATES} replicates", clock.elapsed().as_secs_f64()));

    let clock = Instant::now();
    let (strong, weak, _) = rate_study(32);
    report.check(
        "2 slopes at N=32",
        in_window(slope(&strong), STRONG_SLOPE) && in_window(slope(&weak), WEAK_SLOPE),
        format!(
            "strong {:.4} ± {:.4}, weak {:.4} ± {:.4}",
            slope(&strong),
            stderr(&strong),
            slope(&weak),
            stderr(&weak)
        ),
    );
    report.info("2 runtime N=32", format!("{:.0} s", clock.elapsed().as_secs_f64()));
}

fn criterion_histogram(report: &mut Report) {
    let cfg = config(
        json!({"command": "histogram", "model": "paper-example", "d": 2048, "n_steps": 64, "replicates": 64, "n_bins": 99}),
        "histogram",
    );
    let s = run(&cfg).unwrap().summary;
    let modes = s["modes"].as_u64().unwrap();
    let centre = s["modal_bin_center"].as_f64().unwrap();
    let core = s["mass_in_core_window"].as_f64().unwrap();
    let total = s["total_mass"].as_f64().unwrap();
    report.check(
        "3 histogram shape",
        modes == 1 && in_window(centre, (0.25, 0.35)) && core >= 0.99 && (total - 1.0).abs() <= 1e-12,
        format!(
            "modes {modes}, modal bin centre {centre:.4}, mass in [-0.5, 0.85] {:.4}%, total mass {total}",
            100.0 * core
        ),
    );
}

fn criterion_moments(report: &mut Report) {
    let clock = Instant::now();
    let cfg = config(
        json!({"command": "moments", "model": "paper-example", "d_list": [16, 256, 2048], "n_steps": 64, "replicates": 64, "p": 2}),
        "moments",
    );
    let s = run(&cfg).unwrap().summary;
    let secs = clock.elapsed().as_secs_f64();
    let spread = s["max_over_min"].as_f64().unwrap();
    let csv = std::fs::read_to_string(out_dir("moments").join("moments.csv")).unwrap();
    let values: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    report.check(
        "4 fourth-moment stability",
        spread <= 2.0 && secs < 120.0,
        format!("E|X|^4 = [{}], max/min {spread:.3}, {secs:.1} s", values.join(", ")),
    );
}

fn brute_force_count(n: u32, p: u32) -> u128 {
    let mut count = 0;
    let mut tuple = vec![0u32; p as usize];
    let mut seen = vec![0u32; n as usize];
    for mut code in 0..(n as u64).pow(p) {
        for t in tuple.iter_mut() {
            *t = (code % n as u64) as u32;
            code /= n as u64;
        }
        seen.fill(0);
        for &t in &tuple {
            seen[t as usize] += 1;
        }
        if seen.iter().all(|&c| c != 1) {
            count += 1;
        }
    }
    count
}

fn criterion_combinatorics(report: &mut Report) {
    let clock = Instant::now();
    let mut mismatches = Vec::new();
    for n in 1..=6u32 {
        for p in 2..=6u32 {
            let fast = count_no_unique(n as u64, p as usize).unwrap();
            let slow = brute_force_count(n, p);
            if fast != slow {
                mismatches.push(format!("(n={n}, p={p}) {fast} vs {slow}"));
            }
        }
    }
    for n in 1..=1000u64 {
        for p in [2, 3] {
            if count_no_unique(n, p).unwrap() != n as u128 {
                mismatches.push(format!("(n={n}, p={p}) != n"));
            }
        }
    }
    let mut exponents = Vec::new();
    let mut growth_ok = true;
    for p in 2..=8usize {
        let e = growth_exponent(p).unwrap();
        growth_ok &= (e - (p / 2) as f64).abs() <= 0.1;
        exponents.push(format!("p={p}: {e:.3}"));
    }
    let secs = clock.elapsed().as_secs_f64();
    report.check(
        "5 combinatorics oracle",
        mismatches.is_empty() && growth_ok && secs < 30.0,
        format!(
            "{} mismatches {:?}; growth exponents {}; {secs:.2} s",
            mismatches.len(),
            mismatches,
            exponents.join(", ")
        ),
    );
}

fn criteria_variations(report: &mut Report) {
    let model = smooth_gauss();
    let d = 4;
    let grid = SimGrid::new(1.0, 64).unwrap();
    let sde = ParticleSde::new(model.clone(), d).unwrap();
    let h = 1e-5;

    let mut worst: f64 = 0.0;
    for start in 0..20u64 {
        let x0 = init_particles(&model, d, &NoisePlan::new(1000 + start), 0).x;
        let noise = NoisePlan::new(start);
        let flow = simulate_variation(&sde, &x0, &grid, &noise, 0, 1).unwrap();
        for j in 0..d {
            let mut up = x0.clone();
            let mut down = x0.clone();
            up[j] += h;
            down[j] -= h;
            let a = simulate_variation(&sde, &up, &grid, &noise, 0, 0).unwrap().x;
            let b = simulate_variation(&sde, &down, &grid, &noise, 0, 0).unwrap().x;
            let column: Vec<f64> = (0..d).map(|i| flow.first_at(i, j)).collect();
            let scale = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = (0..d).fold(0.0f64, |m, i| m.max(((a[i] - b[i]) / (2.0 * h) - column[i]).abs()));
            worst = worst.max(err / scale);
        }
    }
    report.check(
        "6 first variation vs finite differences",
        worst <= 1e-3,
        format!("max relative column error {worst:.3e} over 20 starts (limit 1e-3)"),
    );

    let x0 = init_particles(&model, d, &NoisePlan::new(7), 0).x;
    let noise = NoisePlan::new(11);
    let replicates = 4000;
    let g = VectorObservable::SumSin;
    let pathwise = value_gradient(&sde, &g, &x0, &grid, &noise, replicates).unwrap();
    let fd = value_fd_gradient(&sde, &g, &x0, &grid, &noise.fork(1), replicates, 1e-2).unwrap();
    let mut ok = true;
    let mut rows = Vec::new();
    for j in 0..d {
        let limit = 3.0 * (pathwise.ci[j].powi(2) + fd.ci[j].powi(2)).sqrt();
        let gap = (pathwise.gradient[j] - fd.gradient[j]).abs();
        ok &= gap <= limit;
        rows.push(format!(
            "j={j}: {:.5}±{:.5} vs {:.5}±{:.5}",
            pathwise.gradient[j], pathwise.ci[j], fd.gradient[j], fd.ci[j]
        ));
    }
    report.check("6 value gradient vs FD of value", ok, format!("{}; limit 3 combined CIs", rows.join(", ")));

    let mut worst: f64 = 0.0;
    for (lambda, n_steps) in [(-1.3, 64), (0.7, 64), (2.0, 32), (-0.25, 100)] {
        let grid = SimGrid::new(1.0, n_steps).unwrap();
        let sde = LinearSde::scalar_decoupled(3, lambda, 0.4);
        let state = simulate_variation(&sde, &[0.1, -0.5, 2.0], &grid, &NoisePlan::new(5), 0, 2).unwrap();
        let exact = (1.0 + lambda * grid.dt()).powi(n_steps as i32);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { exact } else { 0.0 };
                worst = worst.max((state.first_at(i, j) - want).abs() / exact.abs());
                for jp in 0..3 {
                    worst = worst.max(state.second_at(i, j, jp).unwrap().abs());
                }
            }
        }
    }
    report.check(
        "6 linear closed form (1+λdt)^N",
        worst <= 1e-12,
        format!("max relative error {worst:.3e} (limit 1e-12)"),
    );
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

fn dir_bytes(dir: &Path, files: &[String]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    let mut perms = vec![(0..d).rev().collect(), (0..d).map(|i| (i + 1) % d).collect()];
    // a stride walk when the stride is coprime to d
    if d % 3 != 0 {
        perms.push((0..d).map(|i| (3 * i + 1) % d).collect());
    }
    perms
}

fn criterion_determinism(report: &mut Report) {
    let mut failures = Vec::new();

    let cases = [
        json!({"command": "rate-study", "d_list": [8, 16, 32, 64], "n_steps": 16, "replicates": 40, "seed": 3}),
        json!({"command": "histogram", "d": 300, "n_steps": 16, "replicates": 5}),
        json!({"command": "moments", "d_list": [16, 64], "n_steps": 16, "replicates": 8}),
        json!({"command": "variations-check", "d": 3, "d_list": [2, 3], "n_steps": 16, "replicates": 20}),
        json!({"command": "simulate", "model": "smooth-gauss", "d": 300, "n_steps": 8}),
    ];
    for case in &cases {
        let mut outputs = Vec::new();
        for threads in [1, 2, 4] {
            let name = format!("threads-{}-{threads}", case["command"].as_str().unwrap());
            let cfg = config(case.clone(), &name);
            let files = in_pool(threads, || run(&cfg)).unwrap().files;
            outputs.push(dir_bytes(&out_dir(&name), &files));
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            failures.push(format!("thread count changes {}", case["command"]));
        }
    }

    let grid = SimGrid::new(1.0, 32).unwrap();
    let noise = NoisePlan::new(13);
    let models: [ModelSpec; 3] = [paper_example(), smooth_gauss(), decoupled_linear(-0.5, 0.3)];
    let mut n_perms = 0;
    for m in &models {
        for d in 1..=8 {
            let x0 = init_particles(m, d, &noise, 1).x;
            for perm in permutations(d) {
                let permute = |v: &[f64]| -> Vec<f64> { perm.iter().map(|&p| v[p]).collect() };
                let mut a = ParticleState { t: 0.0, x: x0.clone() };
                let mut b = ParticleState { t: 0.0, x: permute(&x0) };
                for n in 0..grid.n_steps {
                    let g: Vec<f64> = (0..d).map(|i| noise.gaussian(1, i, n, CHANNEL_INCREMENT)).collect();
                    a = em_step(m, &a, grid.dt(), &g).unwrap();
                    b = em_step(m, &b, grid.dt(), &permute(&g)).unwrap();
                }
                n_perms += 1;
                if bits(&b.x) != bits(&permute(&a.x)) {
                    failures.push(format!("{} d={d} not permutation equivariant", m.name));
                }
            }
        }
    }

    let (lambda, s) = (0.7, 0.3);
    let m = decoupled_linear(lambda, s);
    let grid = SimGrid::new(1.0, 64).unwrap();
    let d = 12;
    let mut x = init_particles(&m, d, &noise, 2).x;
    for n in 0..grid.n_steps {
        for (i, xi) in x.iter_mut().enumerate() {
            let g = noise.gaussian(2, i, n, CHANNEL_INCREMENT);
            *xi = *xi + (lambda * *xi) * grid.dt() + (s * grid.dt().sqrt()) * g;
        }
    }
    for method in [MeanFieldMethod::Auto, MeanFieldMethod::Direct] {
        let sim = simulate_observed(&m, d, &grid, &noise, 2, method, |_, _| {}).unwrap();
        if bits(&sim.x) != bits(&x) {
            failures.push(format!("decoupled oracle differs ({method:?})"));
        }
    }

    let m = paper_example();
    for d in [1, 5, 16, 64, 256] {
        let pair = simulate_coupled(&m, d, &grid, &noise, 4).unwrap();
        let small = simulate(&m, d, &grid, &noise, 4).unwrap();
        let big = simulate(&m, 2 * d, &grid, &noise, 4).unwrap();
        let mut increments_shared = true;
        for n in [0, 17, 63] {
            let mut gs = vec![0.0; d];
            let mut gb = vec![0.0; 2 * d];
            noise.fill_increments(4, n, 0, &mut gs);
            noise.fill_increments(4, n, 0, &mut gb);
            increments_shared &= bits(&gs) == bits(&gb[..d]);
        }
        let init_shared = bits(&init_particles(&m, d, &noise, 4).x) == bits(&init_particles(&m, 2 * d, &noise, 4).x[..d]);
        if pair.small != small || pair.big != big || !increments_shared || !init_shared {
            failures.push(format!("coupled prefix streams differ at d={d}"));
        }
    }

    report.check(
        "7 determinism and exchangeability",
        failures.is_empty(),
        format!(
            "{} failures {:?}; thread counts 1/2/4 on {} commands, {n_perms} permutations, decoupled oracle, coupled prefix",
            failures.len(),
            failures,
            cases.len()
        ),
    );
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };
    criterion_combinatorics(&mut report);
    criterion_determinism(&mut report);
    criteria_variations(&mut report);
    criterion_histogram(&mut report);
    criterion_moments(&mut report);
    criteria_rates(&mut report);
    if report.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} check(s) failed", report.failed);
        ExitCode::FAILURE
    }
}
