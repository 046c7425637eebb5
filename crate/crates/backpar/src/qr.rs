//! Quasi-reversible inversion of the final-time observation.
//!
//! The backward-in-time problem is replaced by a well-posed evolution in
//! reversed time: writing `v(x, t) = u(x, T - t)`, the field `v` satisfies a
//! forward parabolic equation with diffusion `M - a(x, T - t)`, a bounded
//! diagonal drift obtained by damping the backward generator with a parameter
//! `beta`, and the original reaction term negated and evaluated at reversed
//! time.  Solving that problem from the observed final state and reading the
//! trajectory backwards yields the reconstruction; its final-time value
//! reproduces the observation exactly by construction.
//!
//! Two treatments of the reaction term are supported: clipping a locally
//! Lipschitz source at a radius chosen from the noise level, and using a
//! source whose declared structural inequalities (sign, growth, one-sided
//! monotonicity) are verified numerically before the solve.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::evolve::{solve_forward, Coefficient, EvolutionProblem, StepSource, Trajectory};
use crate::sources::{
    clip, lipschitz_bound, verify_structural, SourceKind, SourceSpec,
};
use crate::spectral::{norm, p_beta_admissible_bound, p_beta_multiplier, EigenBasis, NormKind};
use crate::stochastic::NoisyObservation;

/// Default number of time steps for the reversed solve.
pub const DEFAULT_QR_STEPS: usize = 200;

/// Interval on which declared structural inequalities are spot-checked
/// before a structural-mode solve.
const STRUCTURAL_CHECK_RANGE: f64 = 8.0;

/// Parameters of the damped backward solve.
///
/// `beta` controls how strongly the backward generator is damped: the
/// diagonal drift is bounded by `(1/T) ln(1/beta)`, so smaller `beta` lets
/// the reversed evolution amplify more (tracking the exact backward flow
/// more closely) at the price of amplifying the observation noise.
#[derive(Debug, Clone)]
pub struct QRParams {
    /// Noise level of the observation.
    pub delta: f64,
    /// Time horizon `T`.
    pub t_horizon: f64,
    /// Diffusion cap `M`; must exceed the supremum of the coefficient.
    pub m_cap: f64,
    /// Number of retained observation modes `N`.
    pub n_modes: usize,
    /// Damping parameter of the backward generator.
    pub beta: f64,
    /// Smoothness exponent of the final state used by the error envelope.
    pub gamma: f64,
    /// Spatial dimension the parameter rule was evaluated for.
    pub dim: usize,
    /// Cap on the clipped-source Lipschitz constant, `ln(ln N) / (k T)`,
    /// when the rule produced one (`N >= 3`).
    pub rate_cap: Option<f64>,
    /// `(c, m, k)` exponents of the selection rule when rule-chosen.
    pub tuning: Option<(f64, f64, f64)>,
}

impl QRParams {
    /// Parameter set with everything pinned by hand.  The envelope needs a
    /// positive smoothness exponent and therefore rejects manual sets; the
    /// solver itself only uses `t_horizon`, `m_cap`, `n_modes` and `beta`.
    pub fn manual(
        delta: f64,
        t_horizon: f64,
        m_cap: f64,
        n_modes: usize,
        beta: f64,
    ) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::OutOfRange { name: "delta", value: delta, range: "[0, inf)" });
        }
        if !(t_horizon.is_finite() && t_horizon > 0.0) {
            return Err(Error::NonPositive { name: "T", value: t_horizon });
        }
        if !(m_cap.is_finite() && m_cap > 0.0) {
            return Err(Error::NonPositive { name: "M", value: m_cap });
        }
        if n_modes == 0 {
            return Err(Error::Dimension(0));
        }
        if !(beta.is_finite() && beta > 0.0 && beta < 1.0) {
            return Err(Error::OutOfRange { name: "beta", value: beta, range: "(0, 1)" });
        }
        Ok(Self {
            delta,
            t_horizon,
            m_cap,
            n_modes,
            beta,
            gamma: 0.0,
            dim: 1,
            rate_cap: None,
            tuning: None,
        })
    }

    /// Exponent `2 m c (1/2 - c) t / T` of the predicted mean integrated
    /// squared error decay `delta^(2 m c (1/2 - c) t / T)` at time `t`
    /// (times a slowly varying logarithmic factor).  `None` for manual
    /// parameter sets.
    pub fn predicted_mise_exponent(&self, t: f64) -> Option<f64> {
        let (c, m, _) = self.tuning?;
        Some(2.0 * m * c * (0.5 - c) * t / self.t_horizon)
    }

    /// The three quantities the selection rule drives to zero as the noise
    /// vanishes: `(delta sqrt(N) / beta, lambda_top^(-gamma) / beta, beta)`.
    /// `lambda_top` is the largest retained eigenvalue of the observation
    /// band.
    pub fn limit_quantities(&self, lambda_top: f64) -> (f64, f64, f64) {
        let n = self.n_modes as f64;
        (
            self.delta * n.sqrt() / self.beta,
            lambda_top.powf(-self.gamma) / self.beta,
            self.beta,
        )
    }
}

/// Choose the damped-solve parameters from the noise level.
///
/// `N = ceil((1/delta)^(m (1/2 - c)))`, `beta = N^(-c)` with exponents
/// `0 < c < min(1/2, 2 gamma / dim)` and `0 < m < 1`; the Lipschitz cap for
/// the clipped reaction term is `ln(ln N) / (k_gen T)`.  The choice is
/// rejected when `beta` reaches the admissibility bound
/// `1 - e^(-M T lambda_min)`, above which the diagonal drift of the reversed
/// problem would stop being bounded by `(1/T) ln(1/beta)`.
#[allow(clippy::too_many_arguments)]
pub fn choose_params_qr(
    delta: f64,
    c_exp: f64,
    m_exp: f64,
    gamma: f64,
    dim: usize,
    k_gen: f64,
    t_horizon: f64,
    m_cap: f64,
    lambda_min: f64,
) -> Result<QRParams> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange { name: "delta", value: delta, range: "(0, 1)" });
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::NonPositive { name: "gamma", value: gamma });
    }
    if dim != 1 && dim != 2 {
        return Err(Error::Dimension(dim));
    }
    if !(k_gen.is_finite() && k_gen > 0.0) {
        return Err(Error::NonPositive { name: "k_gen", value: k_gen });
    }
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::NonPositive { name: "T", value: t_horizon });
    }
    if !(m_cap.is_finite() && m_cap > 0.0) {
        return Err(Error::NonPositive { name: "M", value: m_cap });
    }
    if !(lambda_min.is_finite() && lambda_min > 0.0) {
        return Err(Error::NonPositive { name: "lambda_min", value: lambda_min });
    }
    let c_limit = (0.5f64).min(2.0 * gamma / dim as f64);
    if !(c_exp > 0.0 && c_exp < c_limit) {
        return Err(Error::ExponentConstraint {
            detail: format!(
                "c must lie in (0, min(1/2, 2 gamma / dim)) = (0, {c_limit}), got {c_exp}"
            ),
        });
    }
    if !(m_exp > 0.0 && m_exp < 1.0) {
        return Err(Error::OutOfRange { name: "m", value: m_exp, range: "(0, 1)" });
    }

    let n_raw = delta.recip().powf(m_exp * (0.5 - c_exp));
    if !(n_raw.is_finite() && n_raw < 1e9) {
        return Err(Error::OutOfRange { name: "N", value: n_raw, range: "[1, 1e9)" });
    }
    // Ceiling with a relative slack so that exact integer powers are not
    // bumped to the next integer by floating-point dust.
    let n_modes = ((n_raw - 1e-9 * n_raw).ceil()).max(1.0) as usize;
    let beta = (n_modes as f64).powf(-c_exp);

    let bound = p_beta_admissible_bound(lambda_min, m_cap, t_horizon);
    if beta >= bound {
        return Err(Error::BetaInadmissible { beta, bound });
    }

    let rate_cap = if n_modes >= 3 {
        Some((n_modes as f64).ln().ln() / (k_gen * t_horizon))
    } else {
        None
    };

    Ok(QRParams {
        delta,
        t_horizon,
        m_cap,
        n_modes,
        beta,
        gamma,
        dim,
        rate_cap,
        tuning: Some((c_exp, m_exp, k_gen)),
    })
}

/// Largest clipping radius whose restricted Lipschitz constant stays within
/// the rule cap `ln(ln N) / (k_gen T)`.  Solved by bisection on the
/// (nondecreasing) Lipschitz bound of the source; fails when even radius
/// zero exceeds the cap or when the parameters were not rule-chosen.
pub fn clip_radius_for_rule(spec: &SourceSpec, params: &QRParams) -> Result<f64> {
    let cap = params.rate_cap.ok_or_else(|| {
        Error::Config(
            "the clipping-radius rule needs rule-chosen parameters with N >= 3".to_string(),
        )
    })?;
    let k_at = |r: f64| -> Result<f64> { Ok(lipschitz_bound(spec, r)?.k_r) };
    let tiny = 1e-12;
    if k_at(tiny)? > cap {
        return Err(Error::Config(format!(
            "the source's Lipschitz constant near zero already exceeds the rule cap {cap}; \
             decrease the generic rule constant"
        )));
    }
    // Bracket the cap, growing the right endpoint geometrically; sources
    // whose constant never reaches the cap get the largest probed radius.
    let mut lo = tiny;
    let mut hi = 1.0;
    let mut bracketed = false;
    for _ in 0..60 {
        if k_at(hi)? >= cap {
            bracketed = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !bracketed {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if k_at(mid)? <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-13 * hi {
            break;
        }
    }
    Ok(lo)
}

/// How the reaction term enters the reversed solve.
#[derive(Debug, Clone, Copy)]
pub enum QRSourceMode<'a> {
    /// Clip a locally Lipschitz source at the radius given by
    /// [`clip_radius_for_rule`].
    Clipped(&'a SourceSpec),
    /// Use the source as declared; its structural constants are verified on
    /// a symmetric interval before the solve.
    Structural(&'a SourceSpec),
}

/// Assemble the well-posed reversed evolution for the damped backward solve.
///
/// The returned problem evolves `v(t) = u(T - t)` from `v(0) = Gbar`:
/// diffusion `M - a(x, T - t)`, diagonal drift
/// `D_j = -(1/T) ln(beta + e^(-M T lambda_j))` (positive, bounded by
/// `(1/T) ln(1/beta)` for admissible `beta`), and source
/// `-f(x, T - t, v)`.  The observation is embedded into `basis`, which sets
/// the resolution of the inversion and must contain the observation band.
pub fn assemble_reversed(
    obs: &NoisyObservation,
    a_delta: &Coefficient,
    params: &QRParams,
    source: &SourceSpec,
    basis: &Arc<EigenBasis>,
    steps: usize,
) -> Result<EvolutionProblem> {
    if params.m_cap <= a_delta.max() {
        return Err(Error::CoefficientRange {
            min: a_delta.min(),
            max: a_delta.max(),
            m_cap: params.m_cap,
        });
    }
    let bound = p_beta_admissible_bound(basis.lambda_min(), params.m_cap, params.t_horizon);
    if params.beta >= bound {
        return Err(Error::BetaInadmissible { beta: params.beta, bound });
    }

    let gbar = obs.field.embed(basis)?;
    let reversed_diffusion =
        a_delta.reflected(params.m_cap).time_reversed(params.t_horizon);
    let drift: Vec<f64> = basis
        .eigenvalues()
        .iter()
        .map(|&l| -p_beta_multiplier(l, params.beta, params.m_cap, params.t_horizon))
        .collect();
    let reversed_source = match source.kind() {
        SourceKind::GloballyLipschitz { k } if k == 0.0 => None,
        _ => Some(StepSource::reversed_negated(source, params.t_horizon)?),
    };

    Ok(EvolutionProblem {
        diffusion: Some(reversed_diffusion),
        diagonal: Some(drift),
        source: reversed_source,
        ..EvolutionProblem::heat(gbar, params.t_horizon, steps)
    })
}

/// Result of a damped backward solve.
#[derive(Debug)]
pub struct QRSolution {
    /// Reconstruction indexed by original time: `state_at_time(t)`
    /// approximates `u(t)`, and `state_at_time(T)` equals the observation.
    pub trajectory: Trajectory,
    /// Clipping radius actually used (clipped mode only).
    pub clip_radius: Option<f64>,
    /// Growth constant entering the error envelope: the Lipschitz constant
    /// of the clipped source, or the declared one-sided monotonicity
    /// constant in structural mode.
    pub growth_constant: f64,
    /// Largest spatial norm along the reconstruction, as a stability
    /// diagnostic.
    pub sup_norm: f64,
}

/// Run the damped backward solve.
///
/// Clipped mode derives the radius from the parameter rule, freezes the
/// source outside it, and records the restricted Lipschitz constant.
/// Structural mode checks the declared sign, growth, and one-sided
/// monotonicity inequalities on a sample of `[-8, 8]` and records the
/// monotonicity constant.  Either way the reversed evolution is solved
/// forward and re-indexed so the result reads in original time.
pub fn solve_qr(
    obs: &NoisyObservation,
    a_delta: &Coefficient,
    params: &QRParams,
    mode: QRSourceMode<'_>,
    basis: &Arc<EigenBasis>,
    steps: usize,
) -> Result<QRSolution> {
    let (problem, clip_radius, growth_constant);
    match mode {
        QRSourceMode::Clipped(spec) => {
            if let SourceKind::Structural(_) = spec.kind() {
                return Err(Error::NotLocallyLipschitz(spec.name().to_string()));
            }
            let radius = clip_radius_for_rule(spec, params)?;
            let clipped = clip(spec, radius)?;
            clip_radius = Some(radius);
            growth_constant = clipped.lipschitz().k_r;
            problem = assemble_reversed(obs, a_delta, params, clipped.spec(), basis, steps)?;
        }
        QRSourceMode::Structural(spec) => {
            let constants = spec.structural_constants().ok_or_else(|| {
                Error::Config(format!(
                    "source '{}' declares no structural constants; use clipped mode",
                    spec.name()
                ))
            })?;
            let report = verify_structural(spec, STRUCTURAL_CHECK_RANGE, constants)?;
            if !report.pass {
                return Err(Error::Config(format!(
                    "declared structural constants fail on [-{r}, {r}]: {v}",
                    r = STRUCTURAL_CHECK_RANGE,
                    v = report.verdict()
                )));
            }
            clip_radius = None;
            growth_constant = constants.gamma_bar;
            problem = assemble_reversed(obs, a_delta, params, spec, basis, steps)?;
        }
    }

    let reversed = solve_forward(&problem)?;
    let mut sup_norm = 0.0f64;
    for s in reversed.states() {
        sup_norm = sup_norm.max(norm(s, NormKind::L2)?);
    }
    Ok(QRSolution {
        trajectory: reversed.time_reversed(),
        clip_radius,
        growth_constant,
        sup_norm,
    })
}

/// Problem-dependent constants entering the error envelope.
#[derive(Debug, Clone, Copy)]
pub struct QREnvelopeInputs {
    /// Squared smoothness norm of the noiseless final state, with the
    /// eigenvalue weight `lambda^(2 gamma)`.
    pub g_smooth_sq: f64,
    /// Squared supremum over time of the exponentially weighted norm of the
    /// true solution (weight `e^(2 M T lambda)` per mode).  May be infinite;
    /// the envelope then reports infinity.
    pub u_gevrey_sq: f64,
    /// Squared supremum over time of the gradient norm of the true solution.
    pub u_grad_sq: f64,
    /// Lower bound of the reversed diffusion `M - a`.
    pub b_floor: f64,
    /// Largest eigenvalue of the observation band.
    pub lambda_band_top: f64,
}

/// Mean-squared-error envelope of the damped backward solve at time `t`:
///
/// `beta^(2 t / T) e^((2 G + 1) T) C(delta)` with
/// `C = delta^2 N / beta^2 + lambda_top^(-2 gamma) ||g||^2 / beta^2
///    + ||u||_W^2 + (delta^2 T^3 / b0) ||u'||^2 / beta^2`,
///
/// where `G` is the growth constant recorded by the solve (clipped
/// Lipschitz constant or structural monotonicity constant).  Needs a
/// rule-chosen parameter set (positive smoothness exponent).
pub fn qr_envelope(
    params: &QRParams,
    t: f64,
    growth_constant: f64,
    inputs: &QREnvelopeInputs,
) -> Result<f64> {
    if !(params.gamma > 0.0) {
        return Err(Error::NonPositive { name: "gamma", value: params.gamma });
    }
    if !(t >= 0.0 && t <= params.t_horizon) {
        return Err(Error::OutOfRange { name: "t", value: t, range: "[0, T]" });
    }
    if !growth_constant.is_finite() {
        return Err(Error::NonFinite { name: "growth_constant", value: growth_constant });
    }
    if !(inputs.b_floor > 0.0) {
        return Err(Error::NonPositive { name: "b_floor", value: inputs.b_floor });
    }
    if !(inputs.lambda_band_top > 0.0) {
        return Err(Error::NonPositive { name: "lambda_band_top", value: inputs.lambda_band_top });
    }
    for (name, v) in [
        ("g_smooth_sq", inputs.g_smooth_sq),
        ("u_gevrey_sq", inputs.u_gevrey_sq),
        ("u_grad_sq", inputs.u_grad_sq),
    ] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::OutOfRange { name, value: v, range: "[0, inf]" });
        }
    }

    let t_h = params.t_horizon;
    let beta_sq = params.beta * params.beta;
    let data = params.delta * params.delta * params.n_modes as f64 / beta_sq;
    let tail = inputs.lambda_band_top.powf(-2.0 * params.gamma) / beta_sq * inputs.g_smooth_sq;
    let coefficient_noise =
        params.delta * params.delta * t_h.powi(3) / inputs.b_floor / beta_sq * inputs.u_grad_sq;
    let c_delta = data + tail + inputs.u_gevrey_sq + coefficient_noise;
    Ok(params.beta.powf(2.0 * t / t_h)
        * ((2.0 * growth_constant + 1.0) * t_h).exp()
        * c_delta)
}

/// Ratio of the clipped-mode envelope to the structural-mode envelope for
/// the same data: `e^(2 (G_clip - gamma_bar) T)`.
pub fn envelope_ratio(clip_growth: f64, gamma_bar: f64, t_horizon: f64) -> f64 {
    (2.0 * (clip_growth - gamma_bar) * t_horizon).exp()
}

/// For each rule-chosen parameter set, the clipped-mode growth cap, and the
/// factor by which the clipped-mode envelope overshoots a structural-mode
/// envelope with monotonicity constant `gamma_bar`: rows of
/// `(delta, rate_cap, ratio)`.  The ratio grows without bound as the noise
/// vanishes, quantifying how much the structural inequalities buy.
pub fn compare_case2_case3(
    params_per_delta: &[QRParams],
    gamma_bar: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    params_per_delta
        .iter()
        .map(|p| {
            let cap = p.rate_cap.ok_or_else(|| {
                Error::Config(
                    "envelope comparison needs rule-chosen parameters with N >= 3".to_string(),
                )
            })?;
            Ok((p.delta, cap, envelope_ratio(cap, gamma_bar, p.t_horizon)))
        })
        .collect()
}
