//! Forward-in-time integration of parabolic problems of the form
//! `v_t = div(c(x,t) grad v) + D v + S(x,t,v)` with `D` a spectral diagonal
//! operator. Used both to manufacture reference data and to integrate the
//! reversed-time reconstruction problem.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{analyze, synthesize, DomainSpec, GridField, SpectralField};

/// A scalar coefficient field `c(x,t)` with recorded bounds.
///
/// The bounds are data, not recomputed: constructors record them and the
/// perturbation machinery updates them by interval arithmetic, so solver
/// admissibility checks are cheap and exact for the registered families.
#[derive(Clone)]
pub struct Coefficient {
    eval: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    /// When true, the value ignores `x`; enables the pure spectral solver path.
    x_independent: bool,
    min: f64,
    max: f64,
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coefficient")
            .field("x_independent", &self.x_independent)
            .field("min", &self.min)
            .field("max", &self.max)
            .finish_non_exhaustive()
    }
}

impl Coefficient {
    pub fn constant(v: f64) -> Self {
        Self { eval: Arc::new(move |_, _| v), x_independent: true, min: v, max: v }
    }

    /// Time-only coefficient with caller-recorded range.
    pub fn of_time(f: impl Fn(f64) -> f64 + Send + Sync + 'static, min: f64, max: f64) -> Self {
        Self { eval: Arc::new(move |_, t| f(t)), x_independent: true, min, max }
    }

    /// Space-time coefficient with caller-recorded range.
    pub fn of_space_time(
        f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        min: f64,
        max: f64,
    ) -> Self {
        Self { eval: Arc::new(move |x, t| f(x, t)), x_independent: false, min, max }
    }

    /// Force the slower x-dependent solver path even for an x-independent
    /// value (used by the solver-order verification to exercise that path).
    pub fn treat_as_space_dependent(mut self) -> Self {
        self.x_independent = false;
        self
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    /// Value at a time for x-independent coefficients.
    pub fn value_at_time(&self, t: f64) -> f64 {
        debug_assert!(self.x_independent);
        (self.eval)(&[], t)
    }

    pub fn is_x_independent(&self) -> bool {
        self.x_independent
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Shifted coefficient `(x,t) -> c(x,t) + s(t)` with bounds widened by
    /// the recorded range of `s`.
    pub fn shifted_by_time(
        &self,
        s: impl Fn(f64) -> f64 + Send + Sync + 'static,
        s_min: f64,
        s_max: f64,
    ) -> Self {
        let base = Arc::clone(&self.eval);
        Self {
            eval: Arc::new(move |x, t| base(x, t) + s(t)),
            x_independent: self.x_independent,
            min: self.min + s_min,
            max: self.max + s_max,
        }
    }

    /// Reflected coefficient `(x,t) -> m - c(x,t)` with matching bounds.
    pub fn reflected(&self, m: f64) -> Self {
        let base = Arc::clone(&self.eval);
        Self {
            eval: Arc::new(move |x, t| m - base(x, t)),
            x_independent: self.x_independent,
            min: m - self.max,
            max: m - self.min,
        }
    }

    /// Time-reversed coefficient `(x,t) -> c(x, T - t)`; bounds unchanged.
    pub fn time_reversed(&self, t_horizon: f64) -> Self {
        let base = Arc::clone(&self.eval);
        Self {
            eval: Arc::new(move |x, t| base(x, t_horizon - t)),
            x_independent: self.x_independent,
            min: self.min,
            max: self.max,
        }
    }
}

/// Pointwise source term `S(x, t, v)` in the form a stepper consumes:
/// a plain closure, already carrying any time reversal, negation, or
/// stiffness smoothing.
#[derive(Clone)]
pub struct StepSource {
    eval: Arc<dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for StepSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StepSource { .. }")
    }
}

impl StepSource {
    /// Step with `S = F` (the source's stepping evaluator).
    pub fn from_spec(spec: &crate::sources::SourceSpec) -> Result<Self> {
        Ok(Self { eval: spec.stepping_closure()? })
    }

    /// Step with `S(x, t, v) = -F(x, T - t, v)` — the source as it appears
    /// in the reversed-time problem.
    pub fn reversed_negated(spec: &crate::sources::SourceSpec, t_horizon: f64) -> Result<Self> {
        let f = spec.stepping_closure()?;
        Ok(Self { eval: Arc::new(move |x, t, v| -f(x, t_horizon - t, v)) })
    }

    pub fn from_closure(f: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(f) }
    }

    pub fn value(&self, x: &[f64], t: f64, v: f64) -> f64 {
        (self.eval)(x, t, v)
    }
}

/// Default number of time steps for a horizon-T problem: `T / 200` spacing.
pub const DEFAULT_STEPS: usize = 200;
/// Default blow-up guard: abort when the norm exceeds this multiple of the
/// initial norm.
pub const DEFAULT_GUARD: f64 = 1e6;

/// A parabolic initial-value problem
/// `v_t = div(c(x,t) grad v) + D v + S(x,t,v)`, `v(0)` given, on `[0, T]`.
#[derive(Debug, Clone)]
pub struct EvolutionProblem {
    /// Diffusion coefficient `c`; `None` disables the diffusion term.
    pub diffusion: Option<Coefficient>,
    /// Per-mode multiplier of the diagonal operator `D`; `None` means `D = 0`.
    pub diagonal: Option<Vec<f64>>,
    /// Source `S`; `None` means `S = 0`.
    pub source: Option<StepSource>,
    pub initial: SpectralField,
    pub t_horizon: f64,
    pub steps: usize,
    /// Blow-up guard as a multiple of the initial norm.
    pub guard_factor: f64,
}

impl EvolutionProblem {
    /// Pure heat-flow problem (`D = 0`, `S = 0`) with unit diffusion.
    pub fn heat(initial: SpectralField, t_horizon: f64, steps: usize) -> Self {
        Self {
            diffusion: Some(Coefficient::constant(1.0)),
            diagonal: None,
            source: None,
            initial,
            t_horizon,
            steps,
            guard_factor: DEFAULT_GUARD,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_horizon.is_finite() && self.t_horizon > 0.0) {
            return Err(Error::NonPositive { name: "T", value: self.t_horizon });
        }
        if self.steps == 0 {
            return Err(Error::TimeGrid(0));
        }
        if let Some(c) = &self.diffusion {
            if !(c.min() > 0.0) {
                return Err(Error::NonPositive { name: "c_min", value: c.min() });
            }
        }
        if let Some(d) = &self.diagonal {
            if d.len() != self.initial.basis().len() {
                return Err(Error::BasisMismatch);
            }
            if let Some(i) = d.iter().position(|m| !m.is_finite()) {
                return Err(Error::NonFinite { name: "D multiplier", value: d[i] });
            }
        }
        if !(self.guard_factor.is_finite() && self.guard_factor > 1.0) {
            return Err(Error::NonPositive { name: "guard_factor", value: self.guard_factor });
        }
        Ok(())
    }
}

/// A time-indexed sequence of spectral states on a shared basis.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<SpectralField>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<SpectralField>) -> Result<Self> {
        if times.len() != states.len() || times.len() < 2 {
            return Err(Error::TimeGrid(times.len()));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[SpectralField] {
        &self.states
    }

    pub fn basis(&self) -> &Arc<crate::spectral::EigenBasis> {
        self.states[0].basis()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn initial_state(&self) -> &SpectralField {
        &self.states[0]
    }

    pub fn final_state(&self) -> &SpectralField {
        self.states.last().expect("trajectory is non-empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State at a node time; `t` must coincide with a grid node.
    pub fn state_at_time(&self, t: f64) -> Result<&SpectralField> {
        let dt = self.dt();
        let k = ((t - self.times[0]) / dt).round();
        let idx = k as isize;
        if idx < 0 || idx as usize >= self.times.len() {
            return Err(Error::TimeNotOnGrid { t, dt });
        }
        let idx = idx as usize;
        if (self.times[idx] - t).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::TimeNotOnGrid { t, dt });
        }
        Ok(&self.states[idx])
    }

    /// Re-index by `t -> T - t` (states reversed, times unchanged).
    pub fn time_reversed(mut self) -> Self {
        self.states.reverse();
        self
    }
}

/// Integrate the problem from `t = 0` to `t = T`.
///
/// Splitting: the source is advanced explicitly at the current state; the
/// diffusion term implicitly (exactly per mode when `c` is x-independent,
/// via a conservative finite-difference solve when it varies in x); the
/// diagonal operator exactly by its integrating factor. First order in the
/// step, second order in the grid spacing.
pub fn solve_forward(p: &EvolutionProblem) -> Result<Trajectory> {
    p.validate()?;
    let spectral_path = p.diffusion.as_ref().map_or(true, Coefficient::is_x_independent);
    if spectral_path {
        solve_spectral(p)
    } else {
        solve_grid(p)
    }
}

fn guard_threshold(p: &EvolutionProblem) -> f64 {
    let n0: f64 = p.initial.coeffs().iter().map(|c| c * c).sum::<f64>().sqrt();
    if n0 > 0.0 {
        p.guard_factor * n0
    } else {
        p.guard_factor
    }
}

fn coeff_norm(c: &[f64]) -> f64 {
    c.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `phi1(z) = (e^z - 1)/z`, the first exponential-integrator weight.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-300 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// Exponential stepping per mode: exact for the linear autonomous part,
/// explicit in the source.
fn solve_spectral(p: &EvolutionProblem) -> Result<Trajectory> {
    let basis = Arc::clone(p.initial.basis());
    let dt = p.t_horizon / p.steps as f64;
    let guard = guard_threshold(p);
    let lambdas = basis.eigenvalues();
    let zero_d;
    let d_mult: &[f64] = match &p.diagonal {
        Some(d) => d,
        None => {
            zero_d = vec![0.0; basis.len()];
            &zero_d
        }
    };
    let coords = precompute_coords(&basis);

    let mut times = Vec::with_capacity(p.steps + 1);
    let mut states = Vec::with_capacity(p.steps + 1);
    times.push(0.0);
    states.push(p.initial.clone());

    let mut current = p.initial.clone();
    for k in 0..p.steps {
        let t_k = k as f64 * dt;
        let t_mid = t_k + 0.5 * dt;
        let c_mid = p.diffusion.as_ref().map_or(0.0, |c| c.value_at_time(t_mid));

        // Source coefficients at the current state (grid round-trip).
        let s_coeffs = match &p.source {
            Some(s) => {
                let grid = synthesize(&current);
                let mut vals = grid.values().to_vec();
                for (i, v) in vals.iter_mut().enumerate() {
                    *v = s.value(&coords[i], t_k, *v);
                    if !v.is_finite() {
                        return Err(Error::StepSolve {
                            step: k,
                            reason: format!("source produced a non-finite value at node {i}"),
                        });
                    }
                }
                Some(analyze(&GridField::from_values(&basis, vals)?))
            }
            None => None,
        };

        let next: Vec<f64> = current
            .coeffs()
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                let a = -c_mid * lambdas[m] + d_mult[m];
                let mut v = (a * dt).exp() * c;
                if let Some(s) = &s_coeffs {
                    v += dt * phi1(a * dt) * s.coeffs()[m];
                }
                v
            })
            .collect();

        let norm = coeff_norm(&next);
        if !norm.is_finite() || norm > guard {
            return Err(Error::Divergence {
                step: k + 1,
                time: t_k + dt,
                norm,
                guard: p.guard_factor,
            });
        }
        current = SpectralField::from_coeffs(&basis, next)?;
        times.push((k + 1) as f64 * dt);
        states.push(current.clone());
    }
    Trajectory::new(times, states)
}

fn precompute_coords(basis: &Arc<crate::spectral::EigenBasis>) -> Vec<Vec<f64>> {
    let domain = basis.domain();
    (0..domain.grid_len()).map(|i| domain.coords(i)).collect()
}

/// Finite-difference stepping for x-dependent diffusion: explicit source,
/// implicit conservative diffusion (tridiagonal in 1-d, conjugate gradient
/// in 2-d), exact diagonal factor via a transform round-trip.
fn solve_grid(p: &EvolutionProblem) -> Result<Trajectory> {
    let basis = Arc::clone(p.initial.basis());
    let domain = basis.domain().clone();
    let dt = p.t_horizon / p.steps as f64;
    let guard = guard_threshold(p);
    let coords = precompute_coords(&basis);
    let c = p.diffusion.as_ref().expect("grid path requires a diffusion coefficient");

    let mut times = Vec::with_capacity(p.steps + 1);
    let mut states = Vec::with_capacity(p.steps + 1);
    times.push(0.0);
    states.push(p.initial.clone());

    let mut current = p.initial.clone();
    for k in 0..p.steps {
        let t_k = k as f64 * dt;
        let t_mid = t_k + 0.5 * dt;

        let grid = synthesize(&current);
        let mut rhs = grid.values().to_vec();
        if let Some(s) = &p.source {
            for (i, v) in rhs.iter_mut().enumerate() {
                let sv = s.value(&coords[i], t_k, *v);
                if !sv.is_finite() {
                    return Err(Error::StepSolve {
                        step: k,
                        reason: format!("source produced a non-finite value at node {i}"),
                    });
                }
                *v += dt * sv;
            }
        }

        let solved = match domain.dim() {
            1 => implicit_diffusion_1d(&domain, c, t_mid, dt, &rhs, k)?,
            2 => implicit_diffusion_2d(&domain, c, t_mid, dt, &rhs, k)?,
            _ => unreachable!("dimension checked at construction"),
        };

        let mut next = analyze(&GridField::from_values(&basis, solved)?);
        if let Some(d) = &p.diagonal {
            for (m, v) in next.coeffs_mut().iter_mut().enumerate() {
                *v *= (d[m] * dt).exp();
            }
        }

        let norm = coeff_norm(next.coeffs());
        if !norm.is_finite() || norm > guard {
            return Err(Error::Divergence {
                step: k + 1,
                time: t_k + dt,
                norm,
                guard: p.guard_factor,
            });
        }
        current = next;
        times.push((k + 1) as f64 * dt);
        states.push(current.clone());
    }
    Trajectory::new(times, states)
}

/// Solve `(I - dt * L_c) w = rhs` in one dimension by the tridiagonal
/// (Thomas) algorithm; `L_c` is the conservative second-order stencil with
/// `c` sampled at cell faces and Dirichlet walls.
fn implicit_diffusion_1d(
    domain: &DomainSpec,
    c: &Coefficient,
    t_mid: f64,
    dt: f64,
    rhs: &[f64],
    step: usize,
) -> Result<Vec<f64>> {
    let n = domain.grid()[0];
    let h = domain.spacing(0);
    let r = dt / (h * h);
    // faces[i] = c at x_{i+1/2} = (i+1) h + h/2 for i in -1..n-1 shifted by 1:
    // faces[i] = c((i + 0.5) h), i = 0..=n.
    let mut faces = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let x = (i as f64 + 0.5) * h;
        let v = c.value(&[x], t_mid);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::StepSolve {
                step,
                reason: format!("diffusion coefficient {v} at x = {x:.6} is not positive"),
            });
        }
        faces.push(v);
    }
    let mut diag = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n - 1);
    for i in 0..n {
        diag.push(1.0 + r * (faces[i] + faces[i + 1]));
        if i + 1 < n {
            upper.push(-r * faces[i + 1]);
        }
    }
    // Thomas elimination (the matrix is symmetric: lower[i] = upper[i]).
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let mut denom = diag[0];
    c_prime[0] = if n > 1 { upper[0] / denom } else { 0.0 };
    d_prime[0] = rhs[0] / denom;
    for i in 1..n {
        let lower = upper[i - 1];
        denom = diag[i] - lower * c_prime[i - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::StepSolve {
                step,
                reason: format!("tridiagonal pivot vanished at row {i}"),
            });
        }
        if i < n - 1 {
            c_prime[i] = upper[i] / denom;
        }
        d_prime[i] = (rhs[i] - lower * d_prime[i - 1]) / denom;
    }
    let mut w = vec![0.0; n];
    w[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        w[i] = d_prime[i] - c_prime[i] * w[i + 1];
    }
    Ok(w)
}

/// Solve `(I - dt * L_c) w = rhs` in two dimensions by conjugate gradient on
/// the matrix-free conservative 5-point operator (symmetric positive
/// definite for positive `c`).
fn implicit_diffusion_2d(
    domain: &DomainSpec,
    c: &Coefficient,
    t_mid: f64,
    dt: f64,
    rhs: &[f64],
    step: usize,
) -> Result<Vec<f64>> {
    let (n0, n1) = (domain.grid()[0], domain.grid()[1]);
    let (h0, h1) = (domain.spacing(0), domain.spacing(1));
    let (r0, r1) = (dt / (h0 * h0), dt / (h1 * h1));

    // Face coefficients along each axis.
    let mut faces0 = vec![0.0; (n0 + 1) * n1]; // index [i0 face][i1]
    for i0 in 0..=n0 {
        for i1 in 0..n1 {
            let x = [(i0 as f64 + 0.5) * h0, (i1 as f64 + 1.0) * h1];
            let v = c.value(&x, t_mid);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::StepSolve {
                    step,
                    reason: format!("diffusion coefficient {v} at ({:.4}, {:.4}) is not positive", x[0], x[1]),
                });
            }
            faces0[i0 * n1 + i1] = v;
        }
    }
    let mut faces1 = vec![0.0; n0 * (n1 + 1)]; // index [i0][i1 face]
    for i0 in 0..n0 {
        for i1 in 0..=n1 {
            let x = [(i0 as f64 + 1.0) * h0, (i1 as f64 + 0.5) * h1];
            let v = c.value(&x, t_mid);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::StepSolve {
                    step,
                    reason: format!("diffusion coefficient {v} at ({:.4}, {:.4}) is not positive", x[0], x[1]),
                });
            }
            faces1[i0 * (n1 + 1) + i1] = v;
        }
    }

    let apply = |v: &[f64], out: &mut [f64]| {
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                let idx = i0 * n1 + i1;
                let vc = v[idx];
                let up = if i0 + 1 < n0 { v[idx + n1] } else { 0.0 };
                let down = if i0 > 0 { v[idx - n1] } else { 0.0 };
                let right = if i1 + 1 < n1 { v[idx + 1] } else { 0.0 };
                let left = if i1 > 0 { v[idx - 1] } else { 0.0 };
                let f0m = faces0[i0 * n1 + i1];
                let f0p = faces0[(i0 + 1) * n1 + i1];
                let f1m = faces1[i0 * (n1 + 1) + i1];
                let f1p = faces1[i0 * (n1 + 1) + i1 + 1];
                let lap = r0 * (f0p * (up - vc) - f0m * (vc - down))
                    + r1 * (f1p * (right - vc) - f1m * (vc - left));
                out[idx] = vc - lap;
            }
        }
    };

    // Conjugate gradient from the rhs as initial guess.
    let size = n0 * n1;
    let mut x = rhs.to_vec();
    let mut ax = vec![0.0; size];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
    let mut p_dir = r.clone();
    let b_norm = coeff_norm(rhs).max(1e-300);
    let tol = 1e-12 * b_norm;
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 100 + 10 * (size as f64).sqrt() as usize;
    for _ in 0..max_iter {
        if rs_old.sqrt() <= tol {
            return Ok(x);
        }
        apply(&p_dir, &mut ax);
        let p_ap: f64 = p_dir.iter().zip(&ax).map(|(&p, &a)| p * a).sum();
        if p_ap <= 0.0 {
            return Err(Error::StepSolve {
                step,
                reason: format!("conjugate gradient lost positive definiteness (p^T A p = {p_ap:.3e})"),
            });
        }
        let alpha = rs_old / p_ap;
        for i in 0..size {
            x[i] += alpha * p_dir[i];
            r[i] -= alpha * ax[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs_old;
        for i in 0..size {
            p_dir[i] = r[i] + beta * p_dir[i];
        }
        rs_old = rs_new;
    }
    if rs_old.sqrt() <= tol * 100.0 {
        // Accept a slightly stale residual rather than failing a long run.
        return Ok(x);
    }
    Err(Error::StepSolve {
        step,
        reason: format!(
            "conjugate gradient stalled: residual {:.3e} vs tolerance {:.3e}",
            rs_old.sqrt(),
            tol
        ),
    })
}

/// Direction of the exact unit-diffusion propagator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `c_j -> e^{-lambda_j t} c_j` (forward heat flow).
    Decay,
    /// `c_j -> e^{+lambda_j t} c_j` (backward factor; overflows loudly).
    Growth,
}

/// Apply the exact constant-unit-diffusion propagator for time `t >= 0`.
pub fn propagate_exact(f: &SpectralField, t: f64, dir: Direction) -> Result<SpectralField> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::NonFinite { name: "t", value: t });
    }
    let mut out = f.clone();
    let lambdas: Vec<f64> = f.basis().eigenvalues().to_vec();
    for (m, v) in out.coeffs_mut().iter_mut().enumerate() {
        if *v == 0.0 {
            continue;
        }
        let exponent = match dir {
            Direction::Decay => -lambdas[m] * t,
            Direction::Growth => lambdas[m] * t,
        };
        let next = exponent.exp() * *v;
        if !next.is_finite() {
            return Err(Error::PropagationOverflow { mode: m + 1, exponent });
        }
        *v = next;
    }
    Ok(out)
}
