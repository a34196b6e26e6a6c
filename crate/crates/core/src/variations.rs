//! First and second variations of the Euler–Maruyama flow with respect to
//! the initial condition, and Monte Carlo value-function gradients.
//!
//! The variations are exact derivatives of the discrete map
//! `x ↦ x + ν(x) dt + ς(x) ΔW`, so they agree with finite differences of
//! the simulated paths up to the finite-difference truncation error.

use crate::engine::SimGrid;
use crate::error::{Error, Result};
use crate::estimators::{par_replicates, Estimate, Z95};
use crate::model::{ModelSpec, ScalarField2};
use crate::noise::NoisePlan;
use crate::summation::{mean_and_variance, NeumaierSum};
use serde::{Deserialize, Serialize};

/// Largest dimension accepted for second variations.
pub const MAX_SECOND_ORDER_DIM: usize = 16;

/// `dX = ν(X) dt + ς(X) dW` with `X ∈ ℝ^d` and `W ∈ ℝ^{d′}`.
///
/// Layouts are row-major: `diffusion[i·d′ + m]`, `drift_jacobian[i·d + k]`,
/// `diffusion_jacobian[(i·d′ + m)·d + k]`, `drift_hessian[(i·d + k)·d + l]`
/// and `diffusion_hessian[((i·d′ + m)·d + k)·d + l]`.
pub trait GeneralSde: Sync {
    fn dim(&self) -> usize;
    fn driver_dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn has_second_derivatives(&self) -> bool {
        false
    }
    fn drift_hessian(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingDerivative("drift hessian".into()))
    }
    fn diffusion_hessian(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingDerivative("diffusion hessian".into()))
    }
}

/// `ν(x) = A x + b` with a state-independent diffusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde {
    pub dim: usize,
    pub driver_dim: usize,
    /// `d × d`, row-major.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `d × d′`, row-major.
    pub sigma: Vec<f64>,
}

impl LinearSde {
    /// `dX_i = λ X_i dt + s dW_i` for each coordinate.
    pub fn scalar_decoupled(d: usize, lambda: f64, s: f64) -> Self {
        let mut a = vec![0.0; d * d];
        let mut sigma = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = lambda;
            sigma[i * d + i] = s;
        }
        Self {
            dim: d,
            driver_dim: d,
            a,
            b: vec![0.0; d],
            sigma,
        }
    }
}

impl GeneralSde for LinearSde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn driver_dim(&self) -> usize {
        self.driver_dim
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = self.b[i] + (0..d).map(|k| self.a[i * d + k] * x[k]).sum::<f64>();
        }
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }

    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.a);
        Ok(())
    }

    fn diffusion_jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn has_second_derivatives(&self) -> bool {
        true
    }

    fn drift_hessian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn diffusion_hessian(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// The d-particle system of a [`ModelSpec`] as a general SDE with
/// `ν_i(x) = a(x_i, κ̄₁,i)` and `ς_im(x) = δ_im σ(x_i, κ̄₂,i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSde {
    pub model: ModelSpec,
    pub d: usize,
}

/// Mean-field value with its first and second partials in the particle
/// coordinates, for one particle `i`.
struct FieldDerivs {
    value: f64,
    /// `(1/d) Σ_j κ_x(x_i, x_j)`
    sum_x: f64,
    /// `(1/d) Σ_j κ_xx(x_i, x_j)`
    sum_xx: f64,
}

impl ParticleSde {
    pub fn new(model: ModelSpec, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("d must be at least 1".into()));
        }
        Ok(Self { model, d })
    }

    /// Neighbour values in ascending order, so that sums do not depend on
    /// particle labels.
    fn sorted(x: &[f64]) -> Vec<f64> {
        let mut s = x.to_vec();
        s.sort_unstable_by(f64::total_cmp);
        s
    }

    fn average(sorted: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for &v in sorted {
            acc.add(f(v));
        }
        acc.value() / sorted.len() as f64
    }

    fn field(kernel: &ScalarField2, xi: f64, sorted: &[f64]) -> f64 {
        Self::average(sorted, |v| kernel.eval(xi, v))
    }

    fn field_derivs(kernel: &ScalarField2, xi: f64, sorted: &[f64], second: bool) -> Result<FieldDerivs> {
        let missing = || Error::MissingDerivative(format!("kernel {kernel:?}"));
        kernel.gradient(xi, xi).ok_or_else(missing)?;
        let sum_xx = if second {
            kernel.hessian(xi, xi).ok_or_else(missing)?;
            Self::average(sorted, |v| kernel.hessian(xi, v).map_or(0.0, |h| h[0]))
        } else {
            0.0
        };
        Ok(FieldDerivs {
            value: Self::field(kernel, xi, sorted),
            sum_x: Self::average(sorted, |v| kernel.gradient(xi, v).map_or(0.0, |g| g[0])),
            sum_xx,
        })
    }

    /// Jacobian `J[i·d + k]` of `F_i(x) = f(x_i, κ̄_i)`.
    fn composed_jacobian(&self, f: &ScalarField2, kernel: &ScalarField2, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        let sorted = Self::sorted(x);
        let inv_d = 1.0 / d as f64;
        out.fill(0.0);
        for i in 0..d {
            let fd = Self::field_derivs(kernel, x[i], &sorted, false)?;
            let [fx, fy] = f
                .gradient(x[i], fd.value)
                .ok_or_else(|| Error::MissingDerivative(format!("coefficient {f:?}")))?;
            for k in 0..d {
                let ky = kernel.gradient(x[i], x[k]).map_or(0.0, |g| g[1]);
                out[i * d + k] = fy * ky * inv_d;
            }
            out[i * d + i] += fx + fy * fd.sum_x;
        }
        Ok(())
    }

    /// Hessian `H[(i·d + k)·d + l]` of `F_i(x) = f(x_i, κ̄_i)`.
    fn composed_hessian(&self, f: &ScalarField2, kernel: &ScalarField2, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        let sorted = Self::sorted(x);
        let inv_d = 1.0 / d as f64;
        let missing = |what: &ScalarField2| Error::MissingDerivative(format!("{what:?}"));
        out.fill(0.0);
        let mut dy = vec![0.0; d];
        for i in 0..d {
            let xi = x[i];
            let fd = Self::field_derivs(kernel, xi, &sorted, true)?;
            let [_, fy] = f.gradient(xi, fd.value).ok_or_else(|| missing(f))?;
            let [fxx, fxy, fyy] = f.hessian(xi, fd.value).ok_or_else(|| missing(f))?;
            // ∂κ̄_i/∂x_k
            for k in 0..d {
                dy[k] = kernel.gradient(xi, x[k]).map_or(0.0, |g| g[1]) * inv_d;
            }
            dy[i] += fd.sum_x;
            let block = &mut out[i * d * d..(i + 1) * d * d];
            for k in 0..d {
                for l in 0..d {
                    block[k * d + l] = fyy * dy[k] * dy[l];
                }
                // ∂²κ̄_i/∂x_k∂x_k from the κ_yy term
                let h = kernel.hessian(xi, x[k]).ok_or_else(|| missing(kernel))?;
                block[k * d + k] += fy * h[2] * inv_d;
            }
            for k in 0..d {
                let kxy = kernel.hessian(xi, x[k]).ok_or_else(|| missing(kernel))?[1] * inv_d;
                // row and column i carry the a_xy and κ_xy terms
                block[i * d + k] += fxy * dy[k] + fy * kxy;
                block[k * d + i] += fxy * dy[k] + fy * kxy;
            }
            block[i * d + i] += fxx + fy * fd.sum_xx;
        }
        Ok(())
    }
}

impl GeneralSde for ParticleSde {
    fn dim(&self) -> usize {
        self.d
    }

    fn driver_dim(&self) -> usize {
        self.d
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let sorted = Self::sorted(x);
        for i in 0..self.d {
            out[i] = self.model.drift.eval(x[i], Self::field(&self.model.kernel1, x[i], &sorted));
        }
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let sorted = Self::sorted(x);
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = self.model.diffusion.eval(x[i], Self::field(&self.model.kernel2, x[i], &sorted));
        }
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.composed_jacobian(&self.model.drift, &self.model.kernel1, x, out)
    }

    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        let mut j = vec![0.0; d * d];
        self.composed_jacobian(&self.model.diffusion, &self.model.kernel2, x, &mut j)?;
        out.fill(0.0);
        for i in 0..d {
            out[(i * d + i) * d..(i * d + i + 1) * d].copy_from_slice(&j[i * d..(i + 1) * d]);
        }
        Ok(())
    }

    fn has_second_derivatives(&self) -> bool {
        let m = &self.model;
        [&m.drift, &m.diffusion, &m.kernel1, &m.kernel2]
            .iter()
            .all(|f| f.hessian(0.0, 0.5).is_some())
    }

    fn drift_hessian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.composed_hessian(&self.model.drift, &self.model.kernel1, x, out)
    }

    fn diffusion_hessian(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        let mut h = vec![0.0; d * d * d];
        self.composed_hessian(&self.model.diffusion, &self.model.kernel2, x, &mut h)?;
        out.fill(0.0);
        for i in 0..d {
            let dst = (i * d + i) * d * d;
            out[dst..dst + d * d].copy_from_slice(&h[i * d * d..(i + 1) * d * d]);
        }
        Ok(())
    }
}

/// Flow state with `first[i·d + j] = ∂X_i/∂x_j` and
/// `second[(i·d + j)·d + j′] = ∂²X_i/∂x_j∂x_j′`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationState {
    pub t: f64,
    pub x: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Option<Vec<f64>>,
}

impl VariationState {
    /// State at `t = 0`: identity first variation, zero second variation
    /// when `order == 2`. `order == 0` tracks the position only.
    pub fn start(x0: &[f64], order: usize) -> Self {
        let d = x0.len();
        let mut first = vec![0.0; if order >= 1 { d * d } else { 0 }];
        if order >= 1 {
            for i in 0..d {
                first[i * d + i] = 1.0;
            }
        }
        Self {
            t: 0.0,
            x: x0.to_vec(),
            first,
            second: (order >= 2).then(|| vec![0.0; d * d * d]),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn first_at(&self, i: usize, j: usize) -> f64 {
        self.first[i * self.dim() + j]
    }

    pub fn second_at(&self, i: usize, j: usize, jp: usize) -> Option<f64> {
        let d = self.dim();
        self.second.as_ref().map(|s| s[(i * d + j) * d + jp])
    }
}

fn check_order(sde: &dyn GeneralSde, order: usize) -> Result<()> {
    match order {
        0 | 1 => Ok(()),
        2 if sde.dim() > MAX_SECOND_ORDER_DIM => Err(Error::Domain(format!(
            "second variations need d ≤ {MAX_SECOND_ORDER_DIM}, got {}",
            sde.dim()
        ))),
        2 if !sde.has_second_derivatives() => Err(Error::MissingDerivative(
            "second partials required for order 2".into(),
        )),
        2 => Ok(()),
        _ => Err(Error::Domain(format!("variation order must be 0, 1 or 2, got {order}"))),
    }
}

/// Buffers for repeated steps of one SDE.
struct StepBuffers {
    nu: Vec<f64>,
    sigma: Vec<f64>,
    m: Vec<f64>,
    jnu: Vec<f64>,
    jsigma: Vec<f64>,
    h: Vec<f64>,
    hnu: Vec<f64>,
    hsigma: Vec<f64>,
}

impl StepBuffers {
    fn new(sde: &dyn GeneralSde, order: usize) -> Self {
        let (d, dp) = (sde.dim(), sde.driver_dim());
        let first = order >= 1;
        let second = order >= 2;
        Self {
            nu: vec![0.0; d],
            sigma: vec![0.0; d * dp],
            m: vec![0.0; if first { d * d } else { 0 }],
            jnu: vec![0.0; if first { d * d } else { 0 }],
            jsigma: vec![0.0; if first { d * dp * d } else { 0 }],
            h: vec![0.0; if second { d * d * d } else { 0 }],
            hnu: vec![0.0; if second { d * d * d } else { 0 }],
            hsigma: vec![0.0; if second { d * dp * d * d } else { 0 }],
        }
    }
}

fn step_in_place(
    sde: &dyn GeneralSde,
    state: &mut VariationState,
    dt: f64,
    gaussians: &[f64],
    buf: &mut StepBuffers,
) -> Result<()> {
    let (d, dp) = (sde.dim(), sde.driver_dim());
    if state.x.len() != d || gaussians.len() != dp {
        return Err(Error::Domain(format!(
            "expected state of length {d} and {dp} gaussians, got {} and {}",
            state.x.len(),
            gaussians.len()
        )));
    }
    let sqrt_dt = dt.sqrt();
    let dw: Vec<f64> = gaussians.iter().map(|g| g * sqrt_dt).collect();
    let has_first = !state.first.is_empty();
    // Contractions over state coordinates (and over drivers, when they are
    // one per coordinate) run in ascending order of the pre-step position,
    // which keeps the scheme exactly equivariant under relabelling.
    let mut ks: Vec<usize> = (0..d).collect();
    ks.sort_by(|&a, &b| state.x[a].total_cmp(&state.x[b]).then(a.cmp(&b)));
    let ms: Vec<usize> = if dp == d { ks.clone() } else { (0..dp).collect() };

    // All derivatives are taken at the pre-step position.
    if has_first {
        sde.drift_jacobian(&state.x, &mut buf.jnu)?;
        sde.diffusion_jacobian(&state.x, &mut buf.jsigma)?;
        for i in 0..d {
            for k in 0..d {
                let mut v = buf.jnu[i * d + k] * dt;
                for &m in &ms {
                    v += buf.jsigma[(i * dp + m) * d + k] * dw[m];
                }
                buf.m[i * d + k] = v;
            }
        }
    }
    if let Some(second) = state.second.as_mut() {
        sde.drift_hessian(&state.x, &mut buf.hnu)?;
        sde.diffusion_hessian(&state.x, &mut buf.hsigma)?;
        for i in 0..d {
            for kl in 0..d * d {
                let mut v = buf.hnu[i * d * d + kl] * dt;
                for &m in &ms {
                    v += buf.hsigma[(i * dp + m) * d * d + kl] * dw[m];
                }
                buf.h[i * d * d + kl] = v;
            }
        }
        let y = &state.first;
        let mut next = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for jp in j..d {
                    let mut v = second[(i * d + j) * d + jp];
                    for &k in &ks {
                        v += buf.m[i * d + k] * second[(k * d + j) * d + jp];
                    }
                    for &k in &ks {
                        let ykj = y[k * d + j];
                        if ykj == 0.0 {
                            continue;
                        }
                        for &l in &ks {
                            v += buf.h[(i * d + k) * d + l] * ykj * y[l * d + jp];
                        }
                    }
                    next[(i * d + j) * d + jp] = v;
                    next[(i * d + jp) * d + j] = v;
                }
            }
        }
        *second = next;
    }
    if has_first {
        let y = &state.first;
        let mut next = y.clone();
        for i in 0..d {
            for j in 0..d {
                for &k in &ks {
                    next[i * d + j] += buf.m[i * d + k] * y[k * d + j];
                }
            }
        }
        state.first = next;
    }

    sde.drift(&state.x, &mut buf.nu);
    sde.diffusion(&state.x, &mut buf.sigma);
    for i in 0..d {
        let mut v = state.x[i] + buf.nu[i] * dt;
        for &m in &ms {
            v += buf.sigma[i * dp + m] * dw[m];
        }
        state.x[i] = v;
    }
    if let Some(p) = state.x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            particle: p,
            value: state.x[p],
        });
    }
    state.t += dt;
    Ok(())
}

/// One Euler step of the position and of the variations requested by
/// `order` (0, 1 or 2).
pub fn em_step_variation(
    sde: &dyn GeneralSde,
    state: &VariationState,
    dt: f64,
    gaussians: &[f64],
    order: usize,
) -> Result<VariationState> {
    check_order(sde, order)?;
    let mut next = state.clone();
    next.first = if order >= 1 {
        if state.first.is_empty() {
            VariationState::start(&state.x, 1).first
        } else {
            state.first.clone()
        }
    } else {
        Vec::new()
    };
    next.second = match order {
        2 => Some(
            state
                .second
                .clone()
                .unwrap_or_else(|| vec![0.0; sde.dim().pow(3)]),
        ),
        _ => None,
    };
    step_in_place(sde, &mut next, dt, gaussians, &mut StepBuffers::new(sde, order))?;
    Ok(next)
}

/// Propagates from `(0, x0, I, 0)` to `grid.t_end`. Driver `m` at step `n`
/// uses the noise coordinate `(replicate, m, n, increment channel)`.
pub fn simulate_variation(
    sde: &dyn GeneralSde,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicate: usize,
    order: usize,
) -> Result<VariationState> {
    check_order(sde, order)?;
    if x0.len() != sde.dim() {
        return Err(Error::Domain(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            sde.dim()
        )));
    }
    let dt = grid.dt();
    let mut state = VariationState::start(x0, order);
    let mut buf = StepBuffers::new(sde, order);
    let mut g = vec![0.0; sde.driver_dim()];
    for n in 0..grid.n_steps {
        noise.fill_increments(replicate, n, 0, &mut g);
        step_in_place(sde, &mut state, dt, &g, &mut buf).map_err(|e| match e {
            Error::NonFinite { particle, value, .. } => Error::NonFinite {
                step: n,
                particle,
                value,
            },
            other => other,
        })?;
    }
    state.t = grid.time_at(grid.n_steps);
    Ok(state)
}

/// Moments `E|∂X_i/∂x_j(T)|^p` over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationMomentReport {
    pub d: usize,
    pub p: u32,
    pub replicates: usize,
    /// `moments[i·d + j]`
    pub moments: Vec<f64>,
    pub ci: Vec<f64>,
    pub diag_max: f64,
    pub offdiag_max: f64,
}

impl VariationMomentReport {
    pub fn max(&self) -> f64 {
        self.diag_max.max(self.offdiag_max)
    }
}

pub fn variation_moment_check(
    sde: &dyn GeneralSde,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
    p: u32,
) -> Result<VariationMomentReport> {
    if p != 2 && p != 4 {
        return Err(Error::Domain(format!("moment order p must be 2 or 4, got {p}")));
    }
    if replicates < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let d = sde.dim();
    let firsts = par_replicates(replicates, |r| {
        simulate_variation(sde, x0, grid, noise, r, 1).map(|s| s.first)
    })?;
    let mut moments = vec![0.0; d * d];
    let mut ci = vec![0.0; d * d];
    let mut diag_max: f64 = 0.0;
    let mut offdiag_max: f64 = 0.0;
    for ij in 0..d * d {
        let vals: Vec<f64> = firsts.iter().map(|f| f[ij].abs().powi(p as i32)).collect();
        let (mean, var) = mean_and_variance(&vals);
        moments[ij] = mean;
        ci[ij] = Z95 * (var / replicates as f64).sqrt();
        if ij / d == ij % d {
            diag_max = diag_max.max(mean);
        } else {
            offdiag_max = offdiag_max.max(mean);
        }
    }
    Ok(VariationMomentReport {
        d,
        p,
        replicates,
        moments,
        ci,
        diag_max,
        offdiag_max,
    })
}

/// Variation moments of a particle model across particle counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationMomentStudy {
    pub reports: Vec<VariationMomentReport>,
    /// Largest over smallest of the per-d maxima.
    pub spread: f64,
}

impl VariationMomentStudy {
    pub fn within_factor(&self, factor: f64) -> bool {
        self.spread <= factor
    }
}

/// Runs [`variation_moment_check`] on the particle system of `model` for
/// each d, starting from initial positions drawn for replicate 0.
pub fn variation_moment_study(
    model: &ModelSpec,
    d_list: &[usize],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
    p: u32,
) -> Result<VariationMomentStudy> {
    if d_list.is_empty() {
        return Err(Error::Domain("d_list must not be empty".into()));
    }
    let reports = d_list
        .iter()
        .map(|&d| {
            let sde = ParticleSde::new(model.clone(), d)?;
            let x0 = crate::engine::init_particles(model, d, noise, 0).x;
            variation_moment_check(&sde, &x0, grid, &noise.fork(d as u64), replicates, p)
        })
        .collect::<Result<Vec<_>>>()?;
    let maxima: Vec<f64> = reports.iter().map(|r| r.max()).collect();
    let hi = maxima.iter().cloned().fold(f64::MIN, f64::max);
    let lo = maxima.iter().cloned().fold(f64::MAX, f64::min);
    Ok(VariationMomentStudy {
        reports,
        spread: hi / lo,
    })
}

/// Observables of the whole state with analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VectorObservable {
    /// `Σ_i x_i`
    Sum,
    /// `Σ_i sin x_i`
    SumSin,
    Constant { value: f64 },
}

impl VectorObservable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Sum => x.iter().sum(),
            Self::SumSin => x.iter().map(|v| v.sin()).sum(),
            Self::Constant { value } => value,
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Self::Sum => out.fill(1.0),
            Self::SumSin => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.cos();
                }
            }
            Self::Constant { .. } => out.fill(0.0),
        }
    }
}

/// `∂u/∂x_j` for `u(x) = E g(X^x(T))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGradEstimate {
    pub gradient: Vec<f64>,
    pub ci: Vec<f64>,
    pub replicates: usize,
}

/// Per-replicate pathwise gradients `Σ_i g_{x_i}(X(T)) · first_ij(T)`.
pub fn pathwise_gradients(
    sde: &dyn GeneralSde,
    g: &VectorObservable,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = sde.dim();
    par_replicates(replicates, |r| {
        let s = simulate_variation(sde, x0, grid, noise, r, 1)?;
        let mut dg = vec![0.0; d];
        g.gradient(&s.x, &mut dg);
        Ok((0..d)
            .map(|j| {
                let mut acc = NeumaierSum::new();
                for i in 0..d {
                    acc.add(dg[i] * s.first[i * d + j]);
                }
                acc.value()
            })
            .collect())
    })
}

pub fn value_gradient(
    sde: &dyn GeneralSde,
    g: &VectorObservable,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<ValueGradEstimate> {
    if replicates < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let per_rep = pathwise_gradients(sde, g, x0, grid, noise, replicates)?;
    let d = sde.dim();
    let mut gradient = vec![0.0; d];
    let mut ci = vec![0.0; d];
    for j in 0..d {
        let col: Vec<f64> = per_rep.iter().map(|v| v[j]).collect();
        let (mean, var) = mean_and_variance(&col);
        gradient[j] = mean;
        ci[j] = Z95 * (var / replicates as f64).sqrt();
    }
    Ok(ValueGradEstimate {
        gradient,
        ci,
        replicates,
    })
}

/// Per-replicate values `g(X^x(T))`.
pub fn value_samples(
    sde: &dyn GeneralSde,
    g: &VectorObservable,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Vec<f64>> {
    par_replicates(replicates, |r| {
        simulate_variation(sde, x0, grid, noise, r, 0).map(|s| g.eval(&s.x))
    })
}

/// Plain Monte Carlo estimate of `u(x0) = E g(X^x0(T))`.
pub fn value_estimate(
    sde: &dyn GeneralSde,
    g: &VectorObservable,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
) -> Result<Estimate> {
    if replicates < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let v = value_samples(sde, g, x0, grid, noise, replicates)?;
    let (mean, var) = mean_and_variance(&v);
    Ok(Estimate {
        value: mean,
        ci: Z95 * (var / replicates as f64).sqrt(),
    })
}

/// Central difference `(u(x0 + h e_j) − u(x0 − h e_j)) / 2h` on common
/// random numbers, with its CI from the per-replicate differences.
pub fn value_fd_gradient(
    sde: &dyn GeneralSde,
    g: &VectorObservable,
    x0: &[f64],
    grid: &SimGrid,
    noise: &NoisePlan,
    replicates: usize,
    h: f64,
) -> Result<ValueGradEstimate> {
    if replicates < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let d = sde.dim();
    let mut gradient = vec![0.0; d];
    let mut ci = vec![0.0; d];
    for j in 0..d {
        let mut up = x0.to_vec();
        let mut down = x0.to_vec();
        up[j] += h;
        down[j] -= h;
        let a = value_samples(sde, g, &up, grid, noise, replicates)?;
        let b = value_samples(sde, g, &down, grid, noise, replicates)?;
        let diff: Vec<f64> = a.iter().zip(&b).map(|(u, v)| (u - v) / (2.0 * h)).collect();
        let (mean, var) = mean_and_variance(&diff);
        gradient[j] = mean;
        ci[j] = Z95 * (var / replicates as f64).sqrt();
    }
    Ok(ValueGradEstimate {
        gradient,
        ci,
        replicates,
    })
}
