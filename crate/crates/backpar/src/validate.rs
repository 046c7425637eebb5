//! End-to-end consistency checks runnable from the command line: one quick,
//! deterministic check per core invariant of the library.  Each check
//! reports pass/fail with a one-line detail; a clean build passes all of
//! them in well under a second.

use std::sync::Arc;

use crate::error::Result;
use crate::evolve::{
    propagate_exact, solve_forward, Coefficient, Direction, EvolutionProblem,
};
use crate::experiments::{emit_report, fit_rate, parse_report_rows, MISEReport, MISERow};
use crate::qr::{choose_params_qr, solve_qr, QRSourceMode};
use crate::sources::{clip, verify_structural, SourceSpec};
use crate::spectral::{
    analyze, build_basis, norm, synthesize, DomainSpec, EigenBasis, NormKind, SpectralField,
};
use crate::stochastic::{observe_final, NoiseConfig};
use crate::truncation::{
    solve_backward_truncated, MildSolveConfig, TruncationParams,
};

/// Outcome of one invariant check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn run(name: &'static str, f: impl FnOnce() -> Result<String>) -> Check {
        match f() {
            Ok(detail) => Check { name, pass: true, detail },
            Err(e) => Check { name, pass: false, detail: e.to_string() },
        }
    }
}

/// Results of the whole validation suite.
#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub checks: Vec<Check>,
}

impl ValidationOutcome {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn fail(detail: String) -> crate::error::Error {
    crate::error::Error::Config(detail)
}

fn test_basis() -> Result<Arc<EigenBasis>> {
    build_basis(&DomainSpec::interval(64)?, 8)
}

fn check_transform_roundtrip(seed: u64) -> Result<String> {
    let basis = test_basis()?;
    let mut rng = crate::stochastic::substream(seed, crate::stochastic::StreamPurpose::FieldDraw, 0);
    use rand::Rng;
    let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = SpectralField::from_coeffs(&basis, coeffs)?;
    let back = analyze(&synthesize(&f));
    let err = f
        .coeffs()
        .iter()
        .zip(back.coeffs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if err > 1e-12 {
        return Err(fail(format!("transform round trip drifted by {err}")));
    }
    Ok(format!("max coefficient drift {err:.2e}"))
}

fn check_observation_determinism(seed: u64) -> Result<String> {
    let basis = test_basis()?;
    let g = SpectralField::basis_vector(&basis, 1)?;
    let cfg = NoiseConfig { delta: 1e-2, n_obs: 8, seed };
    let a = observe_final(&g, &cfg)?;
    let b = observe_final(&g, &cfg)?;
    if a.field.coeffs() != b.field.coeffs() {
        return Err(fail("identical seeds produced different observations".to_string()));
    }
    let c = observe_final(&g, &NoiseConfig { seed: seed + 1, ..cfg })?;
    if a.field.coeffs() == c.field.coeffs() {
        return Err(fail("different seeds produced identical observations".to_string()));
    }
    Ok("same seed reproduces, fresh seed varies".to_string())
}

fn check_noise_energy(seed: u64) -> Result<String> {
    let basis = test_basis()?;
    let g = SpectralField::zeros(&basis);
    let delta = 0.1;
    let n_obs = 8;
    let trials = 400;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for i in 0..trials {
        let obs = observe_final(&g, &NoiseConfig { delta, n_obs, seed: seed + i })?;
        let e: f64 = obs.field.coeffs().iter().map(|c| c * c).sum();
        sum += e;
        sumsq += e * e;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = (sumsq - n * mean * mean) / (n - 1.0);
    let se = (var / n).sqrt();
    let expected = delta * delta * n_obs as f64;
    if (mean - expected).abs() > 4.0 * se {
        return Err(fail(format!(
            "noise energy {mean} is not within 4 se ({se}) of {expected}"
        )));
    }
    Ok(format!("mean noise energy {mean:.4e} vs expected {expected:.4e}"))
}

fn check_clip_certificate() -> Result<String> {
    let clipped = clip(&SourceSpec::ginzburg_landau(), 1.0)?;
    let k = clipped.lipschitz().k_r;
    let spec = clipped.spec();
    let mut worst: f64 = 0.0;
    let m = 160;
    for i in 0..m {
        let x = -2.0 + 4.0 * i as f64 / (m - 1) as f64;
        for j in (i + 1)..m {
            let y = -2.0 + 4.0 * j as f64 / (m - 1) as f64;
            let num = (spec.eval(&[0.5], 0.0, x)? - spec.eval(&[0.5], 0.0, y)?).abs();
            worst = worst.max(num / (x - y).abs());
        }
    }
    if worst > k * (1.0 + 1e-9) {
        return Err(fail(format!("sampled slope {worst} exceeds certificate {k}")));
    }
    Ok(format!("sampled slope {worst:.6} within certificate {k}"))
}

fn check_structural_inequalities() -> Result<String> {
    let cr = SourceSpec::cube_root();
    let constants = cr
        .structural_constants()
        .ok_or_else(|| fail("odd-root source lost its structural constants".to_string()))?;
    let report = verify_structural(&cr, 8.0, constants)?;
    if !report.pass {
        return Err(fail(format!("structural verification failed: {}", report.verdict())));
    }
    Ok("one-sided and growth inequalities hold on the sampled range".to_string())
}

fn check_forward_exactness() -> Result<String> {
    let basis = test_basis()?;
    let mut coeffs = vec![0.0; basis.len()];
    coeffs[0] = 1.0;
    coeffs[2] = 0.5;
    let u0 = SpectralField::from_coeffs(&basis, coeffs)?;
    let t = 0.4;
    let problem = EvolutionProblem::heat(u0.clone(), t, 200);
    let traj = solve_forward(&problem)?;
    let exact = propagate_exact(&u0, t, Direction::Decay)?;
    let diff = traj.final_state().sub(&exact)?;
    let err = norm(&diff, NormKind::L2)?;
    if err > 1e-12 {
        return Err(fail(format!("constant-coefficient step drifted by {err}")));
    }
    Ok(format!("exponential stepping matches the exact propagator to {err:.2e}"))
}

fn check_noiseless_truncation() -> Result<String> {
    let basis = test_basis()?;
    let u0 = SpectralField::basis_vector(&basis, 1)?;
    let t_horizon = 0.5;
    let g = propagate_exact(&u0, t_horizon, Direction::Decay)?;
    let obs = observe_final(&g, &NoiseConfig { delta: 0.0, n_obs: 4, seed: 0 })?;
    let params = TruncationParams::manual(0.0, 0.0, t_horizon, 4, f64::INFINITY)?;
    let sol = solve_backward_truncated(
        &obs,
        &SourceSpec::zero(),
        &params,
        &MildSolveConfig::default(),
    )?;
    let est = sol.trajectory.initial_state();
    let diff = est.embed(u0.basis())?.sub(&u0)?;
    let err = norm(&diff, NormKind::L2)?;
    if err > 1e-6 {
        return Err(fail(format!("noiseless linear inversion missed by {err}")));
    }
    Ok(format!("noiseless linear inversion error {err:.2e}"))
}

fn check_reversed_final_condition(seed: u64) -> Result<String> {
    let basis = test_basis()?;
    let u0 = SpectralField::basis_vector(&basis, 1)?;
    let t_horizon = 0.35;
    let g = propagate_exact(&u0, t_horizon, Direction::Decay)?;
    let params = choose_params_qr(1e-2, 0.25, 0.9, 4.0, 1, 0.21, t_horizon, 1.6 / 0.35, 1.0)?;
    let obs = observe_final(&g, &NoiseConfig { delta: 1e-2, n_obs: params.n_modes, seed })?;
    let gl = SourceSpec::ginzburg_landau();
    let sol = solve_qr(
        &obs,
        &Coefficient::constant(1.0),
        &params,
        QRSourceMode::Clipped(&gl),
        &basis,
        100,
    )?;
    let at_t = sol.trajectory.state_at_time(t_horizon)?;
    for (m, (&have, &want)) in at_t.coeffs()[..params.n_modes]
        .iter()
        .zip(obs.field.coeffs())
        .enumerate()
    {
        if have.to_bits() != want.to_bits() {
            return Err(fail(format!("mode {m} of the final condition drifted")));
        }
    }
    Ok("reconstruction matches the observation at the final time bit for bit".to_string())
}

fn check_rate_fit() -> Result<String> {
    let points: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3, 1e-4].iter().map(|&d| (d, d * d)).collect();
    let fit = fit_rate(&points)?;
    if (fit.slope - 2.0).abs() > 1e-12 || (fit.r_squared - 1.0).abs() > 1e-12 {
        return Err(fail(format!(
            "exact square law fitted as slope {} r2 {}",
            fit.slope, fit.r_squared
        )));
    }
    Ok(format!("exact square law recovered: slope {}", fit.slope))
}

fn check_report_roundtrip() -> Result<String> {
    let report = MISEReport {
        case_name: "validation".to_string(),
        rows: vec![MISERow {
            method: "truncation".to_string(),
            delta: 1e-2,
            t: 0.175,
            trials: 30,
            mise_mean: 2.5e-4,
            mise_stderr: 1e-5,
            envelope: 0.04,
            slope: 0.5,
            slope_ci: 0.1,
        }],
        flagged: false,
        failures: vec![],
    };
    let path = std::env::temp_dir().join(format!(
        "backpar-validate-{}-{}.csv",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0)
    ));
    let result = (|| -> Result<String> {
        emit_report(&report, &path)?;
        let rows = parse_report_rows(&path)?;
        if rows.len() != 1 || rows[0] != report.rows[0] {
            return Err(fail("report did not round trip through CSV".to_string()));
        }
        Ok("report rows round trip through CSV exactly".to_string())
    })();
    let _ = std::fs::remove_file(&path);
    let _ = std::fs::remove_file(path.with_extension("summary.txt"));
    result
}

/// Run every invariant check.  `seed` feeds the randomized ones, so the
/// whole suite is deterministic for a fixed seed.
pub fn run_all(seed: u64) -> ValidationOutcome {
    let checks = vec![
        Check::run("transform-roundtrip", || check_transform_roundtrip(seed)),
        Check::run("observation-determinism", || check_observation_determinism(seed)),
        Check::run("noise-energy", || check_noise_energy(seed)),
        Check::run("clip-certificate", check_clip_certificate),
        Check::run("structural-inequalities", check_structural_inequalities),
        Check::run("forward-exactness", check_forward_exactness),
        Check::run("noiseless-inversion", check_noiseless_truncation),
        Check::run("reversed-final-condition", || check_reversed_final_condition(seed)),
        Check::run("rate-fit", check_rate_fit),
        Check::run("report-roundtrip", check_report_roundtrip),
    ];
    ValidationOutcome { checks }
}
