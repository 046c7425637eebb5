//! Monte Carlo error studies: manufactured ground truths, mean integrated
//! squared error (MISE) sweeps over noise levels, log-log rate fitting, the
//! blow-up demonstration for the unregularized backward problem, and CSV
//! report emission.
//!
//! The reference solution for every error is a forward-manufactured
//! trajectory computed at (at least) twice the inversion resolution in both
//! space and time; all smoothness constants entering the theoretical
//! envelopes are recomputed from that trajectory, never assumed.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evolve::{
    propagate_exact, solve_forward, Coefficient, Direction, EvolutionProblem, StepSource,
    Trajectory,
};
use crate::qr::{
    choose_params_qr, clip_radius_for_rule, qr_envelope, solve_qr, QREnvelopeInputs, QRSourceMode,
};
use crate::sources::{clip, lipschitz_bound, SourceSpec};
use crate::spectral::{
    build_basis, log_squared_norm, norm, synthesize, DomainSpec, EigenBasis, NormKind,
    SpectralField,
};
use crate::stochastic::{
    derive_seed, mise_bound, observe_final, NoiseConfig, StreamPurpose,
};
use crate::truncation::{
    choose_n_illposed, choose_params_truncation, error_report, solution_regularity_constant,
    solve_backward_truncated, truncation_envelope, MildSolveConfig, TruncationParams,
};

/// Default Monte Carlo trial count.
pub const DEFAULT_TRIALS: usize = 200;
/// Default noise grid.
pub const DEFAULT_DELTAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// Bit-exact header of the MISE CSV schema.
pub const CSV_HEADER: &str = "method,delta,t,trials,mise_mean,mise_stderr,envelope,slope,slope_ci";

/// Default evaluation times `{T/4, T/2, 3T/4}`.
pub fn default_t_list(t_horizon: f64) -> [f64; 3] {
    [0.25 * t_horizon, 0.5 * t_horizon, 0.75 * t_horizon]
}

/// Smoothness bookkeeping requested when a case is built: the exponent of
/// the eigenvalue weight in the bias constant, the extra analyticity margin
/// `r` for the strengthened constant, and the diffusion cap `M` whose
/// exponential weight the reversed-solve envelope uses.
#[derive(Debug, Clone, Copy)]
pub struct SmoothnessSpec {
    pub beta_smooth: f64,
    pub r_margin: f64,
    pub m_cap: f64,
}

/// Constants recomputed from the manufactured reference trajectory.
#[derive(Debug, Clone, Copy)]
pub struct CaseConstants {
    /// Squared Sobolev norm of the final state with weight `lambda^(2 gamma)`.
    pub g_smooth_sq: f64,
    /// Largest value over time of `sum_j lambda_j^(2 beta) e^(2 t lambda_j) c_j^2`.
    pub a_prime: f64,
    /// Exponent `beta` used for `a_prime`.
    pub beta_smooth: f64,
    /// Largest value over time of `sum_j e^(2 (t + r) lambda_j) c_j^2`.
    pub a_double_prime: f64,
    /// Margin `r` used for `a_double_prime`.
    pub r_margin: f64,
    /// Largest squared Gevrey-weighted norm along the trajectory, weight
    /// `e^(2 M T lambda)`; may overflow to infinity.
    pub u_gevrey_sq: f64,
    /// Natural log of `u_gevrey_sq`, finite even when the value overflows.
    pub u_gevrey_log_sq: f64,
    /// Largest squared gradient norm along the trajectory.
    pub u_grad_sq: f64,
    /// Diffusion cap `M` used for the Gevrey weight.
    pub m_cap: f64,
    /// Largest pointwise amplitude of the true solution (clip diagnostics).
    pub sup_abs_u: f64,
}

/// A manufactured ground truth: initial state, dynamics, the forward
/// reference trajectory, the resulting exact final state, and the recomputed
/// smoothness constants.
#[derive(Debug)]
pub struct ManufacturedCase {
    pub name: String,
    pub u0: SpectralField,
    pub coefficient: Coefficient,
    /// Reaction term as the inversion methods see it.
    pub source: SourceSpec,
    pub t_horizon: f64,
    /// Smoothness exponent of the final state used by parameter rules.
    pub gamma: f64,
    pub dim: usize,
    /// Forward truth at (at least) twice the inversion resolution.
    pub reference: Trajectory,
    /// Exact final state `u(T)` on the reference basis.
    pub g: SpectralField,
    /// Basis on which reversed solves run.
    pub inversion_basis: Arc<EigenBasis>,
    /// Time steps for reversed solves.
    pub inversion_steps: usize,
    pub constants: CaseConstants,
}

impl ManufacturedCase {
    /// Solve the forward problem and record every constant.  The reference
    /// resolution must be at least twice the inversion resolution in every
    /// grid axis and in time.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        name: &str,
        u0: SpectralField,
        coefficient: Coefficient,
        source: SourceSpec,
        truth_source: &SourceSpec,
        t_horizon: f64,
        forward_steps: usize,
        inversion_basis: Arc<EigenBasis>,
        inversion_steps: usize,
        gamma: f64,
        smoothness: SmoothnessSpec,
    ) -> Result<Self> {
        let ref_grid = u0.basis().domain().grid().to_vec();
        let inv_grid = inversion_basis.domain().grid();
        if ref_grid.len() != inv_grid.len() {
            return Err(Error::BasisMismatch);
        }
        for (a, (&rg, &ig)) in ref_grid.iter().zip(inv_grid).enumerate() {
            if rg < 2 * ig {
                return Err(Error::Config(format!(
                    "reference grid must be at least twice the inversion grid \
                     (axis {a}: {rg} < 2 * {ig})"
                )));
            }
        }
        if forward_steps < 2 * inversion_steps {
            return Err(Error::Config(format!(
                "reference time stepping must be at least twice the inversion's \
                 ({forward_steps} < 2 * {inversion_steps})"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::NonPositive { name: "gamma", value: gamma });
        }

        let problem = EvolutionProblem {
            diffusion: Some(coefficient.clone()),
            source: Some(StepSource::from_spec(truth_source)?),
            ..EvolutionProblem::heat(u0.clone(), t_horizon, forward_steps)
        };
        let reference = solve_forward(&problem)?;
        let g = reference.final_state().clone();
        let dim = u0.basis().domain().dim();

        let g_smooth_sq = log_squared_norm(&g, NormKind::Sobolev(2.0 * gamma))?.exp();
        let a_prime = solution_regularity_constant(&reference, smoothness.beta_smooth)?;

        let mut a_double_log = f64::NEG_INFINITY;
        let mut gevrey_log = f64::NEG_INFINITY;
        let mut grad_log = f64::NEG_INFINITY;
        let mut sup_abs_u = 0.0f64;
        let sigma = smoothness.m_cap * t_horizon;
        for (t, state) in reference.times().iter().zip(reference.states()) {
            a_double_log =
                a_double_log.max(log_squared_norm(state, NormKind::Gevrey(t + smoothness.r_margin))?);
            gevrey_log = gevrey_log.max(log_squared_norm(state, NormKind::Gevrey(sigma))?);
            grad_log = grad_log.max(log_squared_norm(state, NormKind::Sobolev(1.0))?);
            let amp = synthesize(state)
                .values()
                .iter()
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            sup_abs_u = sup_abs_u.max(amp);
        }

        Ok(Self {
            name: name.to_string(),
            u0,
            coefficient,
            source,
            t_horizon,
            gamma,
            dim,
            reference,
            g,
            inversion_basis,
            inversion_steps,
            constants: CaseConstants {
                g_smooth_sq,
                a_prime,
                beta_smooth: smoothness.beta_smooth,
                a_double_prime: a_double_log.exp(),
                r_margin: smoothness.r_margin,
                u_gevrey_sq: gevrey_log.exp(),
                u_gevrey_log_sq: gevrey_log,
                u_grad_sq: grad_log.exp(),
                m_cap: smoothness.m_cap,
                sup_abs_u,
            },
        })
    }

    /// Three low modes evolved under unit diffusion and the double-well
    /// reaction `u - u^3` (frozen outside `[-1, 1]`, inactive on the
    /// solution's actual range): the standard demonstration case.
    pub fn cubic_demo() -> Result<Self> {
        let ref_basis = build_basis(&DomainSpec::interval(128)?, 8)?;
        let mut c = vec![0.0; ref_basis.len()];
        c[0] = 0.10;
        c[1] = 0.02;
        c[2] = 0.01;
        let u0 = SpectralField::from_coeffs(&ref_basis, c)?;
        let gl = SourceSpec::ginzburg_landau();
        let truth = clip(&gl, 1.0)?;
        Self::build(
            "cubic",
            u0,
            Coefficient::constant(1.0),
            gl,
            truth.spec(),
            0.35,
            400,
            build_basis(&DomainSpec::interval(64)?, 8)?,
            200,
            4.0,
            SmoothnessSpec { beta_smooth: 1.0, r_margin: 0.1, m_cap: 1.6 / 0.35 },
        )
    }

    /// Same geometry with the odd-root reaction `u^(1/3)`, whose structural
    /// inequalities hold with a zero one-sided monotonicity constant.
    pub fn odd_root_demo() -> Result<Self> {
        let ref_basis = build_basis(&DomainSpec::interval(128)?, 8)?;
        let mut c = vec![0.0; ref_basis.len()];
        c[0] = 0.10;
        c[1] = 0.02;
        c[2] = 0.01;
        let u0 = SpectralField::from_coeffs(&ref_basis, c)?;
        let cr = SourceSpec::cube_root();
        Self::build(
            "odd-root",
            u0,
            Coefficient::constant(1.0),
            cr.clone(),
            &cr,
            0.35,
            400,
            build_basis(&DomainSpec::interval(64)?, 8)?,
            200,
            4.0,
            SmoothnessSpec { beta_smooth: 1.0, r_margin: 0.1, m_cap: 1.6 / 0.35 },
        )
    }
}

/// Inversion method run by a MISE sweep, with its parameter-rule inputs.
#[derive(Debug, Clone, Copy)]
pub enum Method {
    /// Spectral cutoff plus stabilized mild solve.  The reaction is clipped
    /// at `clip_radius` when it is only locally Lipschitz; `a_exp`/`b_exp`
    /// feed the cutoff rule.
    Truncation { clip_radius: f64, a_exp: f64, b_exp: f64 },
    /// Damped reversed evolution with the reaction clipped at the
    /// noise-driven rule radius.
    QrClipped { c_exp: f64, m_exp: f64, k_gen: f64, m_cap: f64 },
    /// Damped reversed evolution with a structurally verified reaction.
    QrStructural { c_exp: f64, m_exp: f64, k_gen: f64, m_cap: f64 },
    /// Exact linear backward propagation of every observed mode, with the
    /// observation band chosen as aggressively as the blow-up construction
    /// suggests.  Diverges as the noise shrinks; kept as the cautionary
    /// baseline.
    NaiveBackward,
    /// No inversion at all: reports the data misfit `||Gbar - g||^2`
    /// at `t = T`, using the cutoff rule's band.
    ObserveOnly { a_exp: f64, b_exp: f64 },
}

impl Method {
    /// Stable identifier used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Truncation { .. } => "truncation",
            Method::QrClipped { .. } => "qr-clipped",
            Method::QrStructural { .. } => "qr-structural",
            Method::NaiveBackward => "naive-backward",
            Method::ObserveOnly { .. } => "observe-only",
        }
    }
}

/// One `(method, delta, t)` line of a MISE report.
#[derive(Debug, Clone, PartialEq)]
pub struct MISERow {
    pub method: String,
    pub delta: f64,
    pub t: f64,
    pub trials: usize,
    pub mise_mean: f64,
    pub mise_stderr: f64,
    /// Theoretical envelope where one exists, `NaN` otherwise.
    pub envelope: f64,
    /// Fitted slope of `ln MISE` against `ln delta` for this `(method, t)`
    /// group; `NaN` when fewer than three positive points exist.
    pub slope: f64,
    /// Two standard errors of the fitted slope.
    pub slope_ci: f64,
}

/// Aggregated Monte Carlo error study.
#[derive(Debug, Clone)]
pub struct MISEReport {
    pub case_name: String,
    pub rows: Vec<MISERow>,
    /// True when more than 10% of attempted trials failed.
    pub flagged: bool,
    /// One line per failed trial.
    pub failures: Vec<String>,
}

impl MISEReport {
    /// Concatenate several reports (e.g. one per method) into one.
    pub fn merged(reports: Vec<MISEReport>) -> MISEReport {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        let mut flagged = false;
        let mut case_name = String::new();
        for r in reports {
            if case_name.is_empty() {
                case_name = r.case_name;
            }
            flagged |= r.flagged;
            rows.extend(r.rows);
            failures.extend(r.failures);
        }
        MISEReport { case_name, rows, flagged, failures }
    }
}

/// Truncation-rule parameters for a given noise level; zero noise falls
/// back to a manual full-band, no-cutoff parameter set (the deterministic
/// bias baseline).
fn truncation_params_for(
    case: &ManufacturedCase,
    k_lip: f64,
    a_exp: f64,
    b_exp: f64,
    delta: f64,
) -> Result<TruncationParams> {
    if delta == 0.0 {
        TruncationParams::manual(
            0.0,
            k_lip,
            case.t_horizon,
            case.g.basis().len(),
            f64::INFINITY,
        )
    } else {
        choose_params_truncation(delta, k_lip, case.t_horizon, case.gamma, case.dim, a_exp, b_exp)
    }
}

/// The solve-facing reaction and its global Lipschitz constant for the
/// truncation method: already-global sources pass through, locally
/// Lipschitz ones are clipped at the method's radius.
fn truncation_source_for(case: &ManufacturedCase, clip_radius: f64) -> Result<(SourceSpec, f64)> {
    match case.source.global_lipschitz() {
        Some(k) => Ok((case.source.clone(), k)),
        None => {
            let clipped = clip(&case.source, clip_radius)?;
            Ok((clipped.spec().clone(), clipped.lipschitz().k_r))
        }
    }
}

/// Squared distance between an estimate and a reference state, aligned by
/// embedding the narrower band into the wider.
fn sq_err(estimate: &SpectralField, reference: &SpectralField) -> Result<f64> {
    let diff = if estimate.basis().len() <= reference.basis().len() {
        estimate.embed(reference.basis())?.sub(reference)?
    } else {
        estimate.sub(&reference.embed(estimate.basis())?)?
    };
    let n = norm(&diff, NormKind::L2)?;
    Ok(n * n)
}

/// Run one Monte Carlo MISE sweep for one method.
///
/// For each noise level and trial, a fresh observation of the case's final
/// state is drawn, inverted, and compared (squared spatial norm) against the
/// reference trajectory at each requested time.  Trials run in parallel;
/// aggregation is sequential in trial order, so reports are bit-identical
/// for a given `(config, seed)` regardless of worker count.  Failed trials
/// are itemized; more than 10% of them flags the report.
pub fn run_mise(
    case: &ManufacturedCase,
    method: &Method,
    deltas: &[f64],
    t_list: &[f64],
    trials: usize,
    seed: u64,
) -> Result<MISEReport> {
    if deltas.is_empty() {
        return Err(Error::Config("the noise grid is empty".to_string()));
    }
    for &d in deltas {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::OutOfRange { name: "delta", value: d, range: "[0, inf)" });
        }
    }
    if trials == 0 || trials > 1_000_000 {
        return Err(Error::Config(format!("trials must be in [1, 1e6], got {trials}")));
    }
    let randomized = deltas.iter().any(|&d| d > 0.0);
    if randomized && trials < 30 {
        return Err(Error::Config(format!(
            "randomized sweeps need at least 30 trials per reported line, got {trials}"
        )));
    }
    let t_h = case.t_horizon;
    for &t in t_list {
        if !(0.0..=t_h).contains(&t) {
            return Err(Error::OutOfRange { name: "t", value: t, range: "[0, T]" });
        }
    }
    if t_list.is_empty() && !matches!(method, Method::ObserveOnly { .. }) {
        return Err(Error::Config("the evaluation-time list is empty".to_string()));
    }

    let mut rows: Vec<MISERow> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut attempted = 0usize;

    for (di, &delta) in deltas.iter().enumerate() {
        // Per-noise-level setup: observation band, per-trial inversion
        // closure, and the envelope inputs.  Rule failures here are
        // configuration errors, not trial failures.
        let eval = build_method_eval(case, method, delta)?;
        let trial_times: Vec<f64> = match method {
            Method::ObserveOnly { .. } => vec![t_h],
            _ => t_list.to_vec(),
        };

        let effective_trials = if delta == 0.0 { 1 } else { trials };
        attempted += effective_trials;
        let results: Vec<std::result::Result<Vec<f64>, String>> = (0..effective_trials)
            .into_par_iter()
            .map(|trial| {
                let index = (di as u64) << 32 | trial as u64;
                let trial_seed = derive_seed(seed, StreamPurpose::Observation, index);
                let cfg = NoiseConfig { delta, n_obs: eval.n_obs, seed: trial_seed };
                let obs = observe_final(&case.g, &cfg).map_err(|e| e.to_string())?;
                (eval.invert)(&obs, &trial_times).map_err(|e| e.to_string())
            })
            .collect();

        let mut per_t_sums: Vec<Vec<f64>> = vec![Vec::new(); trial_times.len()];
        for (trial, r) in results.into_iter().enumerate() {
            match r {
                Ok(errs) => {
                    for (slot, e) in per_t_sums.iter_mut().zip(errs) {
                        slot.push(e);
                    }
                }
                Err(msg) => failures.push(format!(
                    "method {} delta {delta} trial {trial}: {msg}",
                    method.name()
                )),
            }
        }

        for (ti, &t) in trial_times.iter().enumerate() {
            let samples = &per_t_sums[ti];
            if samples.is_empty() {
                continue;
            }
            let n = samples.len();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var =
                    samples.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            rows.push(MISERow {
                method: method.name().to_string(),
                delta,
                t,
                trials: n,
                mise_mean: mean,
                mise_stderr: stderr,
                envelope: (eval.envelope)(t)?,
                slope: f64::NAN,
                slope_ci: f64::NAN,
            });
        }
    }

    // Slope per (method, t) group across the noise grid.
    let group_times: Vec<f64> = {
        let mut ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    };
    for &t in &group_times {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.t == t && r.delta > 0.0 && r.mise_mean > 0.0)
            .map(|r| (r.delta, r.mise_mean))
            .collect();
        if let Ok(fit) = fit_rate(&points) {
            for r in rows.iter_mut().filter(|r| r.t == t) {
                r.slope = fit.slope;
                r.slope_ci = 2.0 * fit.slope_stderr;
            }
        }
    }

    let flagged = failures.len() * 10 > attempted;
    Ok(MISEReport { case_name: case.name.clone(), rows, flagged, failures })
}

/// Reject parameter rules whose mode count exceeds the case's observed
/// band: silently clamping would change the estimator the rule describes
/// and understate its error.
fn check_rule_band(rule: &str, n_modes: usize, band: usize, delta: f64) -> Result<()> {
    if n_modes > band {
        return Err(Error::Config(format!(
            "the {rule} rule wants {n_modes} modes at noise level {delta} but the case \
             observes only {band}; raise the smallest noise level, soften the rule \
             exponents, or build the case with a wider band"
        )));
    }
    Ok(())
}

/// Per-noise-level inversion machinery: observation band width, the
/// per-trial inversion returning squared errors at the requested times, and
/// the theoretical envelope.
struct MethodEval<'a> {
    n_obs: usize,
    invert: Box<dyn Fn(&crate::stochastic::NoisyObservation, &[f64]) -> Result<Vec<f64>> + Sync + 'a>,
    envelope: Box<dyn Fn(f64) -> Result<f64> + 'a>,
}

fn build_method_eval<'a>(
    case: &'a ManufacturedCase,
    method: &Method,
    delta: f64,
) -> Result<MethodEval<'a>> {
    let t_h = case.t_horizon;
    let cc = case.constants;
    match *method {
        Method::Truncation { clip_radius, a_exp, b_exp } => {
            let (solve_spec, k_lip) = truncation_source_for(case, clip_radius)?;
            let params = truncation_params_for(case, k_lip, a_exp, b_exp, delta)?;
            check_rule_band("cutoff", params.n_modes, case.g.basis().len(), delta)?;
            let n_obs = params.n_modes;
            let lambda_top = case.g.basis().eigenvalue(n_obs - 1);
            let params_env = params.clone();
            Ok(MethodEval {
                n_obs,
                invert: Box::new(move |obs, times| {
                    let sol = solve_backward_truncated(
                        obs,
                        &solve_spec,
                        &params,
                        &MildSolveConfig::default(),
                    )?;
                    let report =
                        error_report(&sol.trajectory, &case.reference, NormKind::L2, times)?;
                    Ok(report.into_iter().map(|(_, e)| e * e).collect())
                }),
                envelope: Box::new(move |t| {
                    if params_env.gamma <= 0.0 {
                        return Ok(f64::NAN);
                    }
                    Ok(truncation_envelope(
                        &params_env,
                        t,
                        lambda_top,
                        cc.g_smooth_sq,
                        cc.a_prime,
                        cc.beta_smooth,
                    )?
                    .uniform_gronwall)
                }),
            })
        }
        Method::QrClipped { c_exp, m_exp, k_gen, m_cap }
        | Method::QrStructural { c_exp, m_exp, k_gen, m_cap } => {
            let structural = matches!(method, Method::QrStructural { .. });
            if delta <= 0.0 {
                return Err(Error::Config(
                    "the damped reversed solve needs a positive noise level".to_string(),
                ));
            }
            let params = choose_params_qr(
                delta,
                c_exp,
                m_exp,
                case.gamma,
                case.dim,
                k_gen,
                t_h,
                m_cap,
                case.inversion_basis.lambda_min(),
            )?;
            check_rule_band("damping", params.n_modes, case.g.basis().len(), delta)?;
            let n_obs = params.n_modes;
            let lambda_top = case.g.basis().eigenvalue(n_obs - 1);
            let growth = if structural {
                case.source
                    .structural_constants()
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "source '{}' declares no structural constants",
                            case.source.name()
                        ))
                    })?
                    .gamma_bar
            } else {
                let radius = clip_radius_for_rule(&case.source, &params)?;
                lipschitz_bound(&case.source, radius)?.k_r
            };
            let params_env = params.clone();
            Ok(MethodEval {
                n_obs,
                invert: Box::new(move |obs, times| {
                    let mode = if structural {
                        QRSourceMode::Structural(&case.source)
                    } else {
                        QRSourceMode::Clipped(&case.source)
                    };
                    let sol = solve_qr(
                        obs,
                        &case.coefficient,
                        &params,
                        mode,
                        &case.inversion_basis,
                        case.inversion_steps,
                    )?;
                    let report =
                        error_report(&sol.trajectory, &case.reference, NormKind::L2, times)?;
                    Ok(report.into_iter().map(|(_, e)| e * e).collect())
                }),
                envelope: Box::new(move |t| {
                    let inputs = QREnvelopeInputs {
                        g_smooth_sq: cc.g_smooth_sq,
                        u_gevrey_sq: cc.u_gevrey_sq,
                        u_grad_sq: cc.u_grad_sq,
                        b_floor: params_env.m_cap - case.coefficient.max(),
                        lambda_band_top: lambda_top,
                    };
                    qr_envelope(&params_env, t, growth, &inputs)
                }),
            })
        }
        Method::NaiveBackward => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::Config(
                    "the naive backward flow needs a noise level in (0, 1)".to_string(),
                ));
            }
            let choice = choose_n_illposed(delta, t_h)?;
            let n_obs = choice.n_modes.min(case.g.basis().len()).max(1);
            Ok(MethodEval {
                n_obs,
                invert: Box::new(move |obs, times| {
                    let mut errs = Vec::with_capacity(times.len());
                    for &t in times {
                        let est = propagate_exact(&obs.field, t_h - t, Direction::Growth)?;
                        let truth = case.reference.state_at_time(t)?;
                        errs.push(sq_err(&est, truth)?);
                    }
                    Ok(errs)
                }),
                envelope: Box::new(|_| Ok(f64::NAN)),
            })
        }
        Method::ObserveOnly { a_exp, b_exp } => {
            let params = truncation_params_for(case, 1.0, a_exp, b_exp, delta)?;
            let n_obs = params.n_modes.min(case.g.basis().len());
            let lambda_top = case.g.basis().eigenvalue(n_obs - 1);
            let gamma = case.gamma;
            Ok(MethodEval {
                n_obs,
                invert: Box::new(move |obs, _| Ok(vec![sq_err(&obs.field, &case.g)?])),
                envelope: Box::new(move |_| {
                    Ok(mise_bound(delta, n_obs, gamma, cc.g_smooth_sq.sqrt(), lambda_top))
                }),
            })
        }
    }
}

/// Result of a single observation-and-inversion run.
#[derive(Debug, Clone)]
pub struct InvertOutcome {
    /// `(t, squared error against the reference)` per requested time.
    pub rows: Vec<(f64, f64)>,
    /// Width of the observation band.
    pub n_obs: usize,
    /// Human-readable line of the derived method parameters.
    pub diagnostics: String,
}

/// Draw one observation and run one inversion, reporting squared errors
/// against the case's reference at each requested time plus the derived
/// parameters of the method's rule.
pub fn invert_once(
    case: &ManufacturedCase,
    method: &Method,
    delta: f64,
    t_list: &[f64],
    seed: u64,
) -> Result<InvertOutcome> {
    let eval = build_method_eval(case, method, delta)?;
    let times: Vec<f64> = match method {
        Method::ObserveOnly { .. } => vec![case.t_horizon],
        _ => t_list.to_vec(),
    };
    let trial_seed = derive_seed(seed, StreamPurpose::Observation, 0);
    let obs = observe_final(&case.g, &NoiseConfig { delta, n_obs: eval.n_obs, seed: trial_seed })?;
    let errs = (eval.invert)(&obs, &times)?;
    Ok(InvertOutcome {
        rows: times.into_iter().zip(errs).collect(),
        n_obs: eval.n_obs,
        diagnostics: method_diagnostics(case, method, delta)?,
    })
}

/// Derived rule parameters for one method at one noise level, e.g.
/// `N = 4, beta = ..., R_delta = ..., K_R = ...` for the damped reversed
/// solve with a clipped reaction.
pub fn method_diagnostics(case: &ManufacturedCase, method: &Method, delta: f64) -> Result<String> {
    match *method {
        Method::Truncation { clip_radius, a_exp, b_exp } => {
            let (_, k_lip) = truncation_source_for(case, clip_radius)?;
            let p = truncation_params_for(case, k_lip, a_exp, b_exp, delta)?;
            Ok(format!("N = {}, alpha = {}, k_lip = {}", p.n_modes, p.alpha, p.k_lip))
        }
        Method::QrClipped { c_exp, m_exp, k_gen, m_cap } => {
            let p = choose_params_qr(
                delta,
                c_exp,
                m_exp,
                case.gamma,
                case.dim,
                k_gen,
                case.t_horizon,
                m_cap,
                case.inversion_basis.lambda_min(),
            )?;
            let radius = clip_radius_for_rule(&case.source, &p)?;
            let k_r = lipschitz_bound(&case.source, radius)?.k_r;
            Ok(format!(
                "N = {}, beta = {}, R_delta = {}, K_R = {}",
                p.n_modes, p.beta, radius, k_r
            ))
        }
        Method::QrStructural { c_exp, m_exp, k_gen, m_cap } => {
            let p = choose_params_qr(
                delta,
                c_exp,
                m_exp,
                case.gamma,
                case.dim,
                k_gen,
                case.t_horizon,
                m_cap,
                case.inversion_basis.lambda_min(),
            )?;
            let gamma_bar = case
                .source
                .structural_constants()
                .map(|c| c.gamma_bar)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "source '{}' declares no structural constants",
                        case.source.name()
                    ))
                })?;
            Ok(format!(
                "N = {}, beta = {}, gamma_bar = {}",
                p.n_modes, p.beta, gamma_bar
            ))
        }
        Method::NaiveBackward => {
            let choice = choose_n_illposed(delta, case.t_horizon)?;
            Ok(format!("N = {} (inflated band, no stabilization)", choice.n_modes))
        }
        Method::ObserveOnly { a_exp, b_exp } => {
            let p = truncation_params_for(case, 1.0, a_exp, b_exp, delta)?;
            Ok(format!("N = {} (no inversion)", p.n_modes.min(case.g.basis().len())))
        }
    }
}

/// One noise level of the blow-up demonstration.
#[derive(Debug, Clone)]
pub struct IllposedRow {
    pub delta: f64,
    /// Mode count the narrative rule states, `sqrt(ln(1/delta) / (2T))`.
    pub n_stated: f64,
    /// Mode count actually simulated (the inflated rule's ceiling).
    pub n_modes: usize,
    /// Monte Carlo mean of the observed pure-noise data energy.
    pub g_energy_mc: f64,
    pub g_energy_se: f64,
    /// Analytic mean of the simulated energy, `delta^2 n_modes`.
    pub g_energy_pred: f64,
    /// The stated rule's trend column, `delta^2 n_stated` (vanishes).
    pub g_energy_stated: f64,
    /// Monte Carlo mean of `sup_t ||V(t)||^2` for the fixed-point solution.
    pub v_sup_mc: f64,
    pub v_sup_se: f64,
    /// Blow-up lower bound `(2/5) / delta`.
    pub v_lower_bound: f64,
    pub note: String,
}

/// Demonstrate ill-posedness: pure-noise data `delta xi_j` on the rule's
/// band makes the data energy vanish with the noise while the backward
/// fixed-point solution's energy explodes past `(2/5)/delta`.
///
/// `delta = 1` is degenerate (the rule retains no modes) and is reported as
/// a skipped row.
pub fn illposed_demo(
    t_horizon: f64,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<IllposedRow>> {
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::NonPositive { name: "T", value: t_horizon });
    }
    if trials < 30 || trials > 1_000_000 {
        return Err(Error::Config(format!("trials must be in [30, 1e6], got {trials}")));
    }
    let f0 = SourceSpec::spectral_diagonal(t_horizon)?;
    let k_f0 = crate::sources::spectral_f0_lipschitz(1.0, t_horizon);
    let mut rows = Vec::with_capacity(deltas.len());
    for (di, &delta) in deltas.iter().enumerate() {
        let choice = choose_n_illposed(delta, t_horizon)?;
        if choice.n_modes == 0 {
            rows.push(IllposedRow {
                delta,
                n_stated: choice.n_stated,
                n_modes: 0,
                g_energy_mc: f64::NAN,
                g_energy_se: f64::NAN,
                g_energy_pred: 0.0,
                g_energy_stated: 0.0,
                v_sup_mc: f64::NAN,
                v_sup_se: f64::NAN,
                v_lower_bound: choice.solution_energy_bound,
                note: "degenerate: the rule retains no modes at delta = 1; skipped".to_string(),
            });
            continue;
        }
        let n = choice.n_modes;
        let grid = (4 * n + 2).max(32);
        let basis = build_basis(&DomainSpec::interval(grid)?, n)?;
        let zero = SpectralField::zeros(&basis);
        let params =
            TruncationParams::manual(delta, k_f0, t_horizon, n, f64::INFINITY)?;

        let samples: Vec<std::result::Result<(f64, f64), String>> = (0..trials)
            .into_par_iter()
            .map(|trial| {
                let index = (di as u64) << 32 | trial as u64;
                let trial_seed = derive_seed(seed, StreamPurpose::Observation, index);
                let cfg = NoiseConfig { delta, n_obs: n, seed: trial_seed };
                let obs = observe_final(&zero, &cfg).map_err(|e| e.to_string())?;
                let g_energy: f64 = obs.field.coeffs().iter().map(|c| c * c).sum();
                let sol = solve_backward_truncated(
                    &obs,
                    &f0,
                    &params,
                    &MildSolveConfig::default(),
                )
                .map_err(|e| e.to_string())?;
                let mut sup = 0.0f64;
                for s in sol.trajectory.states() {
                    let e: f64 = s.coeffs().iter().map(|c| c * c).sum();
                    sup = sup.max(e);
                }
                Ok((g_energy, sup))
            })
            .collect();

        let mut gs = Vec::with_capacity(trials);
        let mut vs = Vec::with_capacity(trials);
        for r in samples {
            let (ge, vsup) = r.map_err(Error::Config)?;
            gs.push(ge);
            vs.push(vsup);
        }
        let mean_se = |xs: &[f64]| -> (f64, f64) {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        };
        let (g_mc, g_se) = mean_se(&gs);
        let (v_mc, v_se) = mean_se(&vs);
        rows.push(IllposedRow {
            delta,
            n_stated: choice.n_stated,
            n_modes: n,
            g_energy_mc: g_mc,
            g_energy_se: g_se,
            g_energy_pred: delta * delta * n as f64,
            g_energy_stated: delta * delta * choice.n_stated,
            v_sup_mc: v_mc,
            v_sup_se: v_se,
            v_lower_bound: choice.solution_energy_bound,
            note: String::new(),
        });
    }
    Ok(rows)
}

/// Least-squares power-law fit.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    /// Slope of `ln mise` against `ln delta`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope estimate.
    pub slope_stderr: f64,
}

/// Fit `ln mise = slope * ln delta + intercept` by least squares.  Needs at
/// least three strictly positive points.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::FitTooFewPoints { needed: 3, got: points.len() });
    }
    for &(d, m) in points {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::OutOfRange { name: "delta", value: d, range: "(0, inf)" });
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::OutOfRange { name: "mise", value: m, range: "(0, inf)" });
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar) * (x - x_bar)).sum();
    if sxx == 0.0 {
        return Err(Error::Config(
            "rate fitting needs at least two distinct noise levels".to_string(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_bar) * (y - y_bar)).sum();
    let syy: f64 = ys.iter().map(|y| (y - y_bar) * (y - y_bar)).sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - rss / syy };
    let dof = points.len() as f64 - 2.0;
    let slope_stderr = if dof > 0.0 { (rss / dof / sxx).sqrt() } else { 0.0 };
    Ok(RateFit { slope, intercept, r_squared, slope_stderr })
}

/// Write a report as CSV (schema per [`CSV_HEADER`]) plus a human-readable
/// summary file next to it (`<stem>.summary.txt`).  Returns the summary
/// text.  Floating-point fields use the shortest round-trip decimal form,
/// so identical reports produce bit-identical files.
pub fn emit_report(report: &MISEReport, path: &Path) -> Result<String> {
    let mut csv = String::with_capacity(64 * (report.rows.len() + 1));
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.delta,
            r.t,
            r.trials,
            r.mise_mean,
            r.mise_stderr,
            r.envelope,
            r.slope,
            r.slope_ci
        );
    }
    std::fs::write(path, &csv)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "case: {}", report.case_name);
    let _ = writeln!(summary, "rows: {}", report.rows.len());
    for r in &report.rows {
        let _ = writeln!(
            summary,
            "  {} delta={} t={}: mise {} (se {}), envelope {}, slope {} +/- {}",
            r.method, r.delta, r.t, r.mise_mean, r.mise_stderr, r.envelope, r.slope, r.slope_ci
        );
    }
    if report.flagged {
        let _ = writeln!(
            summary,
            "FLAGGED: {} failed trials (more than 10% of attempts)",
            report.failures.len()
        );
    } else if !report.failures.is_empty() {
        let _ = writeln!(summary, "failed trials: {}", report.failures.len());
    }
    for f in &report.failures {
        let _ = writeln!(summary, "  failure: {f}");
    }
    std::fs::write(path.with_extension("summary.txt"), &summary)?;
    Ok(summary)
}

/// Parse the rows of a CSV written by [`emit_report`].  The header must
/// match the schema exactly.
pub fn parse_report_rows(path: &Path) -> Result<Vec<MISERow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::ReportParse {
                line: 1,
                reason: format!("header mismatch: got '{h}'"),
            })
        }
        None => return Err(Error::ReportParse { line: 1, reason: "empty file".to_string() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(Error::ReportParse {
                line: i + 1,
                reason: format!("expected 9 fields, got {}", parts.len()),
            });
        }
        let field = |j: usize| -> Result<f64> {
            parts[j].parse::<f64>().map_err(|e| Error::ReportParse {
                line: i + 1,
                reason: format!("field {}: {e}", j + 1),
            })
        };
        rows.push(MISERow {
            method: parts[0].to_string(),
            delta: field(1)?,
            t: field(2)?,
            trials: parts[3].parse::<usize>().map_err(|e| Error::ReportParse {
                line: i + 1,
                reason: format!("field 4: {e}"),
            })?,
            mise_mean: field(4)?,
            mise_stderr: field(5)?,
            envelope: field(6)?,
            slope: field(7)?,
            slope_ci: field(8)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows_bit_equal(a: &MISERow, b: &MISERow) -> bool {
        a.method == b.method
            && a.delta.to_bits() == b.delta.to_bits()
            && a.t.to_bits() == b.t.to_bits()
            && a.trials == b.trials
            && a.mise_mean.to_bits() == b.mise_mean.to_bits()
            && a.mise_stderr.to_bits() == b.mise_stderr.to_bits()
            && a.envelope.to_bits() == b.envelope.to_bits()
            && a.slope.to_bits() == b.slope.to_bits()
            && a.slope_ci.to_bits() == b.slope_ci.to_bits()
    }

    #[test]
    fn rate_fit_recovers_exact_and_noisy_power_laws() {
        let exact: Vec<(f64, f64)> =
            [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&d| (d, d * d)).collect();
        let fit = fit_rate(&exact).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-12);

        let constant: Vec<(f64, f64)> =
            [1e-1, 1e-2, 1e-3].iter().map(|&d| (d, 0.7)).collect();
        let fit = fit_rate(&constant).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);

        // mise = delta^1.5 with +/-10% deterministic wobble.
        let noisy: Vec<(f64, f64)> = [1e-1f64, 1e-2, 1e-3, 1e-4, 1e-5]
            .iter()
            .enumerate()
            .map(|(i, &d)| (d, d.powf(1.5) * if i % 2 == 0 { 1.1 } else { 0.9 }))
            .collect();
        let fit = fit_rate(&noisy).unwrap();
        assert!((fit.slope - 1.5).abs() < 0.2, "slope {}", fit.slope);

        assert!(matches!(
            fit_rate(&[(1e-1, 1.0), (1e-2, 0.5)]),
            Err(Error::FitTooFewPoints { needed: 3, got: 2 })
        ));
        assert!(fit_rate(&[(1e-1, 1.0), (1e-2, -0.5), (1e-3, 0.2)]).is_err());
    }

    #[test]
    fn csv_roundtrip_is_exact_and_header_is_pinned() {
        let report = MISEReport {
            case_name: "demo".to_string(),
            rows: vec![
                MISERow {
                    method: "truncation".to_string(),
                    delta: 0.01,
                    t: 0.175,
                    trials: 30,
                    mise_mean: 2.423_543_1e-4,
                    mise_stderr: 1.1e-5,
                    envelope: 0.037_219,
                    slope: 0.55,
                    slope_ci: 0.08,
                },
                MISERow {
                    method: "naive-backward".to_string(),
                    delta: 0.001,
                    t: 0.0875,
                    trials: 30,
                    mise_mean: 160.25,
                    mise_stderr: 12.5,
                    envelope: f64::NAN,
                    slope: -0.74,
                    slope_ci: 0.2,
                },
            ],
            flagged: false,
            failures: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let summary = emit_report(&report, &path).unwrap();
        assert!(summary.contains("case: demo"));
        assert!(dir.path().join("report.summary.txt").exists());

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(CSV_HEADER.split(',').count(), 9);

        let parsed = parse_report_rows(&path).unwrap();
        assert_eq!(parsed.len(), report.rows.len());
        for (a, b) in parsed.iter().zip(&report.rows) {
            assert!(rows_bit_equal(a, b), "{a:?} vs {b:?}");
        }

        // Empty report: header-only file.
        let empty = MISEReport {
            case_name: "empty".to_string(),
            rows: vec![],
            flagged: false,
            failures: vec![],
        };
        let path2 = dir.path().join("empty.csv");
        emit_report(&empty, &path2).unwrap();
        assert_eq!(std::fs::read_to_string(&path2).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(parse_report_rows(&path2).unwrap().is_empty());

        // A corrupted header is rejected with the line number.
        std::fs::write(&path2, "method,delta\n").unwrap();
        assert!(matches!(
            parse_report_rows(&path2),
            Err(Error::ReportParse { line: 1, .. })
        ));
    }

    #[test]
    fn cubic_case_constants_are_recomputed_not_assumed() {
        let case = ManufacturedCase::cubic_demo().unwrap();
        let cc = case.constants;
        assert!(cc.g_smooth_sq > 15.0 && cc.g_smooth_sq < 25.0, "{}", cc.g_smooth_sq);
        assert!(cc.a_prime > 150.0 && cc.a_prime < 250.0, "{}", cc.a_prime);
        assert!(cc.u_grad_sq > 0.011 && cc.u_grad_sq < 0.014, "{}", cc.u_grad_sq);
        assert!(
            cc.u_gevrey_log_sq > 160.0 && cc.u_gevrey_log_sq < 175.0,
            "{}",
            cc.u_gevrey_log_sq
        );
        assert!(cc.a_double_prime > 1e3 && cc.a_double_prime < 1e5, "{}", cc.a_double_prime);
        assert!(cc.sup_abs_u > 0.07 && cc.sup_abs_u < 0.10, "{}", cc.sup_abs_u);
        assert_eq!(case.g.basis().len(), 8);

        // An inversion resolution too close to the reference is refused.
        let ref_basis = build_basis(&DomainSpec::interval(128).unwrap(), 8).unwrap();
        let u0 = SpectralField::basis_vector(&ref_basis, 1).unwrap();
        let zero = SourceSpec::zero();
        let err = ManufacturedCase::build(
            "bad",
            u0,
            Coefficient::constant(1.0),
            zero.clone(),
            &zero,
            0.35,
            400,
            build_basis(&DomainSpec::interval(100).unwrap(), 8).unwrap(),
            200,
            4.0,
            SmoothnessSpec { beta_smooth: 1.0, r_margin: 0.1, m_cap: 1.0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    /// Small linear case (no reaction) for the deterministic checks.
    fn linear_case() -> ManufacturedCase {
        let ref_basis = build_basis(&DomainSpec::interval(64).unwrap(), 4).unwrap();
        let u0 = SpectralField::basis_vector(&ref_basis, 1).unwrap();
        let zero = SourceSpec::zero();
        ManufacturedCase::build(
            "linear",
            u0,
            Coefficient::constant(1.0),
            zero.clone(),
            &zero,
            0.5,
            200,
            build_basis(&DomainSpec::interval(32).unwrap(), 4).unwrap(),
            100,
            1.0,
            SmoothnessSpec { beta_smooth: 1.0, r_margin: 0.1, m_cap: 2.0 },
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_truncation_is_deterministic_bias_only() {
        let case = linear_case();
        let method = Method::Truncation { clip_radius: 1.0, a_exp: 1.0, b_exp: 0.3 };
        let report = run_mise(&case, &method, &[0.0], &[0.25], 1, 99).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.trials, 1);
        assert_eq!(row.mise_stderr, 0.0);
        // Exact linear inversion of noiseless data: only floating-point dust.
        assert!(row.mise_mean < 1e-20, "bias {}", row.mise_mean);
        assert!(!report.flagged);

        // Identical inputs give identical rows, bit for bit.
        let again = run_mise(&case, &method, &[0.0], &[0.25], 1, 99).unwrap();
        assert!(rows_bit_equal(&report.rows[0], &again.rows[0]));
    }

    #[test]
    fn observe_only_matches_the_analytic_expectation() {
        let case = ManufacturedCase::cubic_demo().unwrap();
        let method = Method::ObserveOnly { a_exp: 7.0, b_exp: 0.017 };
        let delta = 1e-2;
        let report = run_mise(&case, &method, &[delta], &[], 64, 4242).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.t, case.t_horizon);

        // E||Gbar - g||^2 = delta^2 N + sum of the squared dropped modes.
        let n = choose_params_truncation(delta, 1.0, 0.35, 4.0, 1, 7.0, 0.017)
            .unwrap()
            .n_modes;
        let tail: f64 = case.g.coeffs()[n..].iter().map(|c| c * c).sum();
        let analytic = delta * delta * n as f64 + tail;
        assert!(
            (row.mise_mean - analytic).abs() <= 3.0 * row.mise_stderr,
            "mean {} vs analytic {} (se {})",
            row.mise_mean,
            analytic,
            row.mise_stderr
        );
        // The recorded envelope is an upper bound for the measured misfit.
        assert!(row.mise_mean <= row.envelope);
    }

    #[test]
    fn naive_backward_diverges_where_truncation_converges() {
        let case = ManufacturedCase::cubic_demo().unwrap();
        let deltas = [1e-2, 1e-3, 1e-4];
        let t_quarter = [0.25 * case.t_horizon];

        let naive = run_mise(&case, &Method::NaiveBackward, &deltas, &t_quarter, 30, 7).unwrap();
        let trunc = run_mise(
            &case,
            &Method::Truncation { clip_radius: 1.0, a_exp: 7.0, b_exp: 0.017 },
            &deltas,
            &t_quarter,
            30,
            7,
        )
        .unwrap();

        let naive_slope = naive.rows[0].slope;
        let trunc_slope = trunc.rows[0].slope;
        assert!(naive_slope < 0.0, "naive slope {naive_slope} should be negative (growth)");
        assert!(trunc_slope > 0.0, "truncation slope {trunc_slope} should be positive");
        assert!(!naive.flagged && !trunc.flagged);
        // Naive error grows monotonically as the noise falls.
        for w in naive.rows.windows(2) {
            assert!(w[1].mise_mean > w[0].mise_mean);
        }
        // Truncation stays below its envelope with the standard slack.
        for r in &trunc.rows {
            assert!(r.mise_mean <= 10.0 * r.envelope, "{} > 10 x {}", r.mise_mean, r.envelope);
        }
    }

    #[test]
    fn illposed_demo_shows_vanishing_data_and_exploding_solutions() {
        let rows = illposed_demo(1.0, &[1e-1, 1e-2, 1.0], 100, 31).unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows[..2] {
            assert!(row.note.is_empty());
            // Mean data energy within 3 standard errors of the analytic mean
            // of what is simulated.
            assert!(
                (row.g_energy_mc - row.g_energy_pred).abs() <= 3.0 * row.g_energy_se,
                "delta {}: {} vs {}",
                row.delta,
                row.g_energy_mc,
                row.g_energy_pred
            );
            // Fixed-point energy clears the blow-up bound with 2 sigma slack.
            assert!(
                row.v_sup_mc - 2.0 * row.v_sup_se >= row.v_lower_bound,
                "delta {}: {} vs bound {}",
                row.delta,
                row.v_sup_mc,
                row.v_lower_bound
            );
        }
        // The stated-rule data column vanishes as the noise falls.
        assert!(rows[1].g_energy_stated < rows[0].g_energy_stated);
        // delta = 1 is degenerate and skipped with a note.
        let degenerate = &rows[2];
        assert_eq!(degenerate.n_modes, 0);
        assert!(degenerate.note.contains("degenerate"));
        assert!(degenerate.g_energy_mc.is_nan());
    }

    #[test]
    fn single_inversions_report_errors_and_rule_diagnostics() {
        // Noiseless linear truncation recovers the initial state.
        let case = linear_case();
        let method = Method::Truncation { clip_radius: 1.0, a_exp: 1.0, b_exp: 0.3 };
        let out = invert_once(&case, &method, 0.0, &[0.0, 0.25], 5).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].0, 0.0);
        assert!(out.rows[0].1.sqrt() < 1e-6, "t=0 error {}", out.rows[0].1.sqrt());
        assert!(out.diagnostics.starts_with("N = "));

        // The damped reversed solve's diagnostics expose the derived rule
        // values, frozen from independent arithmetic.
        let case = ManufacturedCase::cubic_demo().unwrap();
        let method = Method::QrClipped {
            c_exp: 0.25,
            m_exp: 0.9,
            k_gen: 0.21,
            m_cap: 1.6 / 0.35,
        };
        let diag = method_diagnostics(&case, &method, 1e-2).unwrap();
        assert!(diag.contains("N = 3"), "{diag}");
        assert!(diag.contains("beta = 0.7598356856515925"), "{diag}");
        assert!(diag.contains("R_delta = 0.305266157366"), "{diag}");
        assert!(diag.contains("K_R = 1.279562280499"), "{diag}");
    }

    #[test]
    fn damped_reversed_sweep_lands_in_the_expected_window() {
        let case = ManufacturedCase::cubic_demo().unwrap();
        let method = Method::QrClipped {
            c_exp: 0.25,
            m_exp: 0.9,
            k_gen: 0.21,
            m_cap: 1.6 / 0.35,
        };
        let report =
            run_mise(&case, &method, &[1e-2], &[0.5 * case.t_horizon], 30, 11).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert!(!report.flagged, "failures: {:?}", report.failures);
        // Window around the independently computed value ~3.3e-3.
        assert!(
            row.mise_mean > 1.5e-3 && row.mise_mean < 6e-3,
            "mise {}",
            row.mise_mean
        );
        // The envelope is astronomically loose here (its Gevrey-weighted
        // factor is huge for any admissible damping), but it must be a
        // finite, honest upper bound.
        assert!(row.envelope.is_finite());
        assert!(row.mise_mean <= row.envelope);
    }

    #[test]
    fn randomized_sweeps_require_thirty_trials() {
        let case = linear_case();
        let err = run_mise(
            &case,
            &Method::ObserveOnly { a_exp: 1.0, b_exp: 0.3 },
            &[1e-2],
            &[],
            10,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    /// A parameter rule whose mode count outgrows the case's observed band
    /// must be rejected up front (clamping would change the estimator), and
    /// the message must name the counts involved.
    #[test]
    fn rules_exceeding_the_observation_band_are_rejected() {
        let case = ManufacturedCase::cubic_demo().unwrap(); // observes 8 modes
        // Cutoff rule at delta = 1e-3: N = ceil(1000^0.45) = 23 > 8.
        let err = run_mise(
            &case,
            &Method::Truncation { clip_radius: 1.0, a_exp: 1.0, b_exp: 0.3 },
            &[1e-3],
            &[0.1],
            30,
            1,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("23") && msg.contains("only 8") && msg.contains("0.001"),
            "cutoff-band message should name both mode counts and the noise level: {msg}"
        );

        // Damping rule at delta = 1e-6: N = ceil((1e6)^0.225) = 23 > 8.
        let err = invert_once(
            &case,
            &Method::QrClipped {
                c_exp: 0.25,
                m_exp: 0.9,
                k_gen: 0.21,
                m_cap: case.constants.m_cap,
            },
            1e-6,
            &[0.1],
            1,
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("observes only 8"),
            "damping-band message should name the band: {err}"
        );
    }
}
