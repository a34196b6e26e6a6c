//! Euler–Maruyama integration of the d-particle system, alone or as a
//! coupled d / 2d pair.
//!
//! Mean-field sums are taken over the particle values in ascending order
//! (ties are equal values, hence equal terms), so the result for a particle
//! depends only on its own value and the multiset of all values. Relabelling
//! particles together with their noise coordinates permutes the trajectory
//! exactly.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ScalarField2};
use crate::noise::NoisePlan;
use crate::summation::NeumaierSum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Uniform time grid on `[0, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl SimGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Domain(format!("t_end must be positive, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(Error::Domain("n_steps must be positive".into()));
        }
        Ok(Self { t_end, n_steps })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    /// Time after `k` steps; exactly `t_end` at `k = n_steps`.
    pub fn time_at(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }
}

impl Default for SimGrid {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            n_steps: 64,
        }
    }
}

/// Particle positions at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    pub x: Vec<f64>,
}

impl ParticleState {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Terminal states of a d-particle system and a 2d-particle system whose
/// first d particles share initial data and Brownian increments with it.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub small: ParticleState,
    pub big: ParticleState,
    pub shared_prefix: usize,
}

/// How kernel averages are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanFieldMethod {
    /// Windowed moment sums for low-order bump kernels, direct sums otherwise.
    #[default]
    Auto,
    /// Direct compensated sum over all particles.
    Direct,
}

/// Bump kernels up to this order use windowed power sums.
const MOMENT_MAX_ORDER: u32 = 2;
const N_MAX: usize = (2 * MOMENT_MAX_ORDER + 1) as usize;
const PASCAL: [[f64; N_MAX]; N_MAX] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];
/// Direct sums are split across threads above this many pair evaluations.
const PARALLEL_PAIRS: usize = 1 << 16;

/// Reusable buffers for kernel averages.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    order: Vec<usize>,
    sorted: Vec<f64>,
    sums: Vec<NeumaierSum>,
    prefix: Vec<f64>,
    chunk_of: Vec<usize>,
    chunk_start: Vec<usize>,
    chunk_center: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn sort(&mut self, x: &[f64]) {
        let d = x.len();
        // The previous order is a good starting point between time steps; the
        // comparator is a total order, so the result does not depend on it.
        if self.order.len() != d {
            self.order.clear();
            self.order.extend(0..d);
        }
        self.order
            .sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        self.sorted.clear();
        self.sorted.extend(self.order.iter().map(|&i| x[i]));
    }
}

#[inline]
fn direct_sum(kernel: &ScalarField2, xi: f64, values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for &v in values {
        acc.add(kernel.eval(xi, v));
    }
    acc.value()
}

/// `(1/d) Σ_j kernel(x_i, x_j)` for a single particle, by direct summation
/// in ascending value order. `i` is zero-based.
pub fn mean_field(kernel: &ScalarField2, i: usize, x: &[f64]) -> f64 {
    assert!(i < x.len(), "particle index {i} out of range for d = {}", x.len());
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    direct_sum(kernel, x[i], &sorted) / x.len() as f64
}

/// Kernel averages for every particle. `ws` must hold the sort of `x`.
fn mean_field_sorted(
    kernel: &ScalarField2,
    x: &[f64],
    ws: &mut Workspace,
    method: MeanFieldMethod,
    out: &mut [f64],
) {
    let d = x.len();
    let inv_d = d as f64;
    match (*kernel, method) {
        (ScalarField2::Zero, _) => out.fill(0.0),
        (ScalarField2::Bump { r, scale }, MeanFieldMethod::Auto) if r <= MOMENT_MAX_ORDER => {
            bump_window_moments(r, scale, ws, out);
            for v in out.iter_mut() {
                *v /= inv_d;
            }
        }
        (ScalarField2::Bump { scale, .. }, MeanFieldMethod::Auto) => {
            // terms outside the support are exact zeros, which leave a
            // compensated sum unchanged
            let sorted = &ws.sorted;
            let mut lo = 0;
            let mut hi = 0;
            for (k, &i) in ws.order.iter().enumerate() {
                let xi = sorted[k];
                while (xi - sorted[lo]).abs() * scale > 1.0 {
                    lo += 1;
                }
                hi = hi.max(k + 1);
                while hi < d && (sorted[hi] - xi).abs() * scale <= 1.0 {
                    hi += 1;
                }
                out[i] = direct_sum(kernel, xi, &sorted[lo..hi]) / inv_d;
            }
        }
        _ => {
            let sorted = &ws.sorted;
            let f = |(i, o): (usize, &mut f64)| *o = direct_sum(kernel, x[i], sorted) / inv_d;
            if d * d >= PARALLEL_PAIRS {
                out.par_iter_mut().enumerate().for_each(f);
            } else {
                out.iter_mut().enumerate().for_each(f);
            }
        }
    }
}

/// `Σ_j φ_r(scale |x_i − x_j|)` for all i (unnormalised) from windowed
/// power sums of the sorted values. The support window of each particle is
/// found with the same predicate `scale·|x_i − x_j| ≤ 1` used by `φ_r`.
fn bump_window_moments(r: u32, scale: f64, ws: &mut Workspace, out: &mut [f64]) {
    let d = ws.sorted.len();
    let n_pow = (2 * r + 1) as usize;

    // Chunks of sorted particles spanning at most one kernel radius, each with
    // prefix power sums of z = scale · (x − center) that restart at zero.
    ws.chunk_of.clear();
    ws.chunk_start.clear();
    ws.chunk_center.clear();
    let mut k0 = 0;
    while k0 < d {
        let mut k1 = k0 + 1;
        while k1 < d && (ws.sorted[k1] - ws.sorted[k0]) * scale <= 1.0 {
            k1 += 1;
        }
        ws.chunk_start.push(k0);
        ws.chunk_center.push(0.5 * (ws.sorted[k0] + ws.sorted[k1 - 1]));
        ws.chunk_of.extend(std::iter::repeat(ws.chunk_start.len() - 1).take(k1 - k0));
        k0 = k1;
    }
    ws.chunk_start.push(d);

    // prefix[m * (d + 1) + k + 1] = Σ_{chunk start ≤ l ≤ k} z_l^m
    ws.prefix.clear();
    ws.prefix.resize(n_pow * (d + 1), 0.0);
    for (b, w) in ws.chunk_start.windows(2).enumerate() {
        let center = ws.chunk_center[b];
        ws.sums.clear();
        ws.sums.resize(n_pow, NeumaierSum::new());
        for k in w[0]..w[1] {
            let z = (ws.sorted[k] - center) * scale;
            let mut p = 1.0;
            for m in 0..n_pow {
                ws.sums[m].add(p);
                ws.prefix[m * (d + 1) + k + 1] = ws.sums[m].value();
                p *= z;
            }
        }
    }
    let mut centered = [0.0f64; N_MAX];
    let mut lo = 0;
    let mut hi = 0;
    for (k, &i) in ws.order.iter().enumerate() {
        let xi = ws.sorted[k];
        while (xi - ws.sorted[lo]).abs() * scale > 1.0 {
            lo += 1;
        }
        hi = hi.max(k + 1);
        while hi < d && (ws.sorted[hi] - xi).abs() * scale <= 1.0 {
            hi += 1;
        }
        if r == 0 {
            out[i] = (hi - lo) as f64;
            continue;
        }
        // centered[n] = Σ_{j in window} (z_j − z_i)^n, accumulated per chunk
        centered.iter_mut().for_each(|c| *c = 0.0);
        let mut a = lo;
        while a < hi {
            let b = ws.chunk_of[a];
            let end = ws.chunk_start[b + 1].min(hi);
            let shift = -(xi - ws.chunk_center[b]) * scale;
            let start = ws.chunk_start[b];
            let mut raw = [0.0f64; N_MAX];
            let mut shift_pow = [1.0f64; N_MAX];
            raw[0] = (end - a) as f64;
            for m in 1..n_pow {
                let upper = ws.prefix[m * (d + 1) + end];
                raw[m] = if a == start { upper } else { upper - ws.prefix[m * (d + 1) + a] };
                shift_pow[m] = shift_pow[m - 1] * shift;
            }
            for n in (0..n_pow).step_by(2) {
                let mut acc = 0.0;
                for m in 0..=n {
                    acc += PASCAL[n][m] * raw[m] * shift_pow[n - m];
                }
                centered[n] += acc;
            }
            a = end;
        }
        let mut total = 0.0;
        let mut sign = 1.0;
        for q in 0..=r {
            total += PASCAL[r as usize][q as usize] * sign * centered[2 * q as usize];
            sign = -sign;
        }
        out[i] = total;
    }
}

/// Kernel averages `(κ̄₁, κ̄₂)` for every particle of `x`.
pub fn mean_fields(
    model: &ModelSpec,
    x: &[f64],
    method: MeanFieldMethod,
    ws: &mut Workspace,
    m1: &mut [f64],
    m2: &mut [f64],
) {
    ws.sort(x);
    mean_field_sorted(&model.kernel1, x, ws, method, m1);
    mean_field_sorted(&model.kernel2, x, ws, method, m2);
}

/// Draws the initial positions from `model.initial` at noise coordinates
/// `(replicate, i, 0, 0)`.
pub fn init_particles(model: &ModelSpec, d: usize, noise: &NoisePlan, replicate: usize) -> ParticleState {
    ParticleState {
        t: 0.0,
        x: (0..d)
            .map(|i| model.initial.sample(noise.initial_uniform(replicate, i)))
            .collect(),
    }
}

/// Single-system stepper with its own buffers.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    model: &'a ModelSpec,
    method: MeanFieldMethod,
    ws: Workspace,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a ModelSpec, method: MeanFieldMethod) -> Self {
        Self {
            model,
            method,
            ws: Workspace::new(),
            m1: Vec::new(),
            m2: Vec::new(),
        }
    }

    /// One Euler–Maruyama step in place; `gaussians` are standard normals.
    pub fn step(&mut self, x: &mut [f64], dt: f64, gaussians: &[f64], step: usize) -> Result<()> {
        let d = x.len();
        assert_eq!(gaussians.len(), d, "one gaussian per particle");
        self.m1.resize(d, 0.0);
        self.m2.resize(d, 0.0);
        mean_fields(self.model, x, self.method, &mut self.ws, &mut self.m1, &mut self.m2);
        let sqrt_dt = dt.sqrt();
        let (a, s) = (&self.model.drift, &self.model.diffusion);
        for i in 0..d {
            let xi = x[i];
            x[i] = xi + a.eval(xi, self.m1[i]) * dt + s.eval(xi, self.m2[i]) * sqrt_dt * gaussians[i];
        }
        if let Some(p) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                particle: p,
                value: x[p],
            });
        }
        Ok(())
    }
}

/// One Euler–Maruyama step of the whole system, mean fields taken from the
/// pre-step state.
pub fn em_step(model: &ModelSpec, state: &ParticleState, dt: f64, gaussians: &[f64]) -> Result<ParticleState> {
    let mut x = state.x.clone();
    Stepper::new(model, MeanFieldMethod::Auto).step(&mut x, dt, gaussians, 0)?;
    Ok(ParticleState { t: state.t + dt, x })
}

/// Terminal state of the d-particle system.
pub fn simulate(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicate: usize,
) -> Result<ParticleState> {
    simulate_observed(model, d, grid, noise, replicate, MeanFieldMethod::Auto, |_, _| {})
}

/// As [`simulate`], calling `observer(step, state)` at `t = 0` and after every step.
pub fn simulate_observed(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicate: usize,
    method: MeanFieldMethod,
    mut observer: impl FnMut(usize, &ParticleState),
) -> Result<ParticleState> {
    let mut state = init_particles(model, d, noise, replicate);
    observer(0, &state);
    let mut stepper = Stepper::new(model, method);
    let dt = grid.dt();
    let mut g = vec![0.0; d];
    for step in 0..grid.n_steps {
        noise.fill_increments(replicate, step, 0, &mut g);
        stepper.step(&mut state.x, dt, &g, step)?;
        state.t = grid.time_at(step + 1);
        observer(step + 1, &state);
    }
    Ok(state)
}

/// Runs the d- and 2d-particle systems in lockstep on shared noise: particle
/// `i` of either system uses noise particle-coordinate `i`, so the first `d`
/// particles of the big system see exactly the streams of the small one.
pub fn simulate_coupled(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicate: usize,
) -> Result<CoupledPair> {
    simulate_coupled_with(model, d, grid, noise, replicate, MeanFieldMethod::Auto)
}

pub fn simulate_coupled_with(
    model: &ModelSpec,
    d: usize,
    grid: &SimGrid,
    noise: &NoisePlan,
    replicate: usize,
    method: MeanFieldMethod,
) -> Result<CoupledPair> {
    if d == 0 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    let mut big = init_particles(model, 2 * d, noise, replicate);
    let mut small = ParticleState {
        t: 0.0,
        x: big.x[..d].to_vec(),
    };
    let mut small_stepper = Stepper::new(model, method);
    let mut big_stepper = Stepper::new(model, method);
    let dt = grid.dt();
    let mut g = vec![0.0; 2 * d];
    for step in 0..grid.n_steps {
        noise.fill_increments(replicate, step, 0, &mut g);
        small_stepper.step(&mut small.x, dt, &g[..d], step)?;
        big_stepper.step(&mut big.x, dt, &g, step)?;
    }
    small.t = grid.t_end;
    big.t = grid.t_end;
    Ok(CoupledPair {
        small,
        big,
        shared_prefix: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{decoupled_linear, paper_example, smooth_gauss, InitialLaw};

    fn constant_model(a: f64, s: f64) -> ModelSpec {
        ModelSpec {
            drift: ScalarField2::constant(a),
            diffusion: ScalarField2::constant(s),
            ..decoupled_linear(0.0, 0.0)
        }
    }

    #[test]
    fn grid_time_is_exact_at_end() {
        let g = SimGrid::new(1.0, 64).unwrap();
        assert_eq!(g.dt(), 1.0 / 64.0);
        assert_eq!(g.time_at(64), 1.0);
        let odd = SimGrid::new(0.7, 3).unwrap();
        assert_eq!(odd.time_at(3), 0.7);
        assert!(SimGrid::new(0.0, 3).is_err());
        assert!(SimGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn mean_field_examples() {
        let k1 = paper_example().kernel1;
        assert_eq!(mean_field(&k1, 0, &[0.3; 5]), 1.0);
        assert_eq!(mean_field(&k1, 0, &[0.0, 0.05]), 0.875);
        assert_eq!(mean_field(&k1, 0, &[0.0, 0.5]), 0.5);
    }

    #[test]
    fn em_step_examples() {
        let m = constant_model(1.0, 0.0);
        let s = ParticleState { t: 0.0, x: vec![0.0, 0.0] };
        let out = em_step(&m, &s, 1.0 / 64.0, &[0.3, -0.7]).unwrap();
        assert_eq!(out.x, vec![1.0 / 64.0; 2]);
        assert_eq!(out.t, 1.0 / 64.0);

        let m = constant_model(0.0, 1.0);
        let out = em_step(&m, &s, 0.25, &[2.0, -2.0]).unwrap();
        assert_eq!(out.x, vec![1.0, -1.0]);

        let h = 1.0 / 64.0;
        let s = ParticleState { t: 0.0, x: vec![0.2; 4] };
        let out = em_step(&paper_example(), &s, h, &[0.0; 4]).unwrap();
        for v in out.x {
            assert_eq!(v, 0.2 + h);
        }
    }

    #[test]
    fn non_finite_is_reported() {
        let m = constant_model(f64::INFINITY, 0.0);
        let s = ParticleState { t: 0.0, x: vec![0.0; 3] };
        match em_step(&m, &s, 0.1, &[0.0; 3]) {
            Err(Error::NonFinite { particle: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn init_is_deterministic_and_prefix_stable() {
        let m = paper_example();
        let noise = NoisePlan::new(5);
        let a = init_particles(&m, 3, &noise, 0);
        let b = init_particles(&m, 3, &noise, 0);
        let c = init_particles(&m, 5, &noise, 0);
        assert_eq!(a, b);
        assert_eq!(a.x[..], c.x[..3]);
        assert!(a.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn init_mean_is_centered() {
        let m = paper_example();
        let s = init_particles(&m, 100_000, &NoisePlan::new(17), 0);
        let mean = crate::summation::compensated_mean(&s.x);
        // 3 σ/√n with σ² = 1/3
        assert!(mean.abs() < 3.0 * (1.0f64 / 3.0 / 1e5).sqrt(), "{mean}");
    }

    #[test]
    fn explicit_euler_on_linear_growth() {
        let mut m = decoupled_linear(1.0, 0.0);
        m.initial = InitialLaw::Point { value: 1.0 };
        let grid = SimGrid::new(1.0, 64).unwrap();
        let out = simulate(&m, 1, &grid, &NoisePlan::new(0), 0).unwrap();
        let exact = (1.0f64 + 1.0 / 64.0).powi(64);
        assert!((out.x[0] - exact).abs() < 1e-12 * exact);
        assert_eq!(out.t, 1.0);
    }

    fn spread_states() -> Vec<Vec<f64>> {
        let noise = NoisePlan::new(99);
        let mut states = Vec::new();
        for (k, width) in [0.05, 0.3, 1.0, 6.0].into_iter().enumerate() {
            for d in [1usize, 2, 7, 64, 300] {
                let x: Vec<f64> = (0..d)
                    .map(|i| 0.2 + width * (2.0 * noise.uniform(k, i, d, 0) - 1.0))
                    .collect();
                states.push(x);
            }
        }
        let mut ties = vec![0.1; 10];
        ties.extend([0.2, 0.2, 0.3, 0.1 + 0.1, 0.0]);
        states.push(ties);
        states
    }

    #[test]
    fn windowed_moments_agree_with_direct_sums() {
        let kernels = [
            ScalarField2::Bump { r: 0, scale: 10.0 },
            ScalarField2::Bump { r: 1, scale: 10.0 },
            ScalarField2::Bump { r: 1, scale: 5.0 },
            ScalarField2::Bump { r: 2, scale: 3.0 },
            ScalarField2::Bump { r: 3, scale: 4.0 },
        ];
        for x in spread_states() {
            let d = x.len();
            let mut ws = Workspace::new();
            ws.sort(&x);
            for k in &kernels {
                let mut fast = vec![0.0; d];
                let mut direct = vec![0.0; d];
                mean_field_sorted(k, &x, &mut ws, MeanFieldMethod::Auto, &mut fast);
                mean_field_sorted(k, &x, &mut ws, MeanFieldMethod::Direct, &mut direct);
                for i in 0..d {
                    assert!((fast[i] - direct[i]).abs() < 1e-12, "{k:?} d={d} i={i}: {} vs {}", fast[i], direct[i]);
                    if matches!(k, ScalarField2::Bump { r: 0, .. } | ScalarField2::Bump { r: 3, .. }) {
                        assert_eq!(fast[i].to_bits(), direct[i].to_bits());
                    }
                    assert_eq!(direct[i].to_bits(), mean_field(k, i, &x).to_bits());
                }
            }
        }
    }

    #[test]
    fn coupled_runs_share_prefix_noise() {
        let m = paper_example();
        let grid = SimGrid::new(1.0, 16).unwrap();
        let noise = NoisePlan::new(3);
        let pair = simulate_coupled(&m, 8, &grid, &noise, 2).unwrap();
        assert_eq!(pair.shared_prefix, 8);
        let alone = simulate(&m, 8, &grid, &noise, 2).unwrap();
        assert_eq!(alone, pair.small);
        let big = simulate(&m, 16, &grid, &noise, 2).unwrap();
        assert_eq!(big, pair.big);
    }

    #[test]
    fn direct_and_windowed_trajectories_stay_close() {
        let grid = SimGrid::new(1.0, 64).unwrap();
        let noise = NoisePlan::new(11);
        for m in [paper_example(), smooth_gauss()] {
            let a = simulate_observed(&m, 64, &grid, &noise, 0, MeanFieldMethod::Auto, |_, _| {}).unwrap();
            let b = simulate_observed(&m, 64, &grid, &noise, 0, MeanFieldMethod::Direct, |_, _| {}).unwrap();
            for (u, v) in a.x.iter().zip(&b.x) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn observer_sees_every_step() {
        let grid = SimGrid::new(1.0, 8).unwrap();
        let mut seen = Vec::new();
        simulate_observed(&paper_example(), 4, &grid, &NoisePlan::new(0), 0, MeanFieldMethod::Auto, |k, s| {
            seen.push((k, s.t))
        })
        .unwrap();
        assert_eq!(seen.len(), 9);
        assert_eq!(seen[8], (8, 1.0));
    }
}
