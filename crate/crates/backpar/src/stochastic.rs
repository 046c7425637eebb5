//! Reproducible randomness: white-noise observation of the final state,
//! the truncated noisy data it induces, Brownian perturbation of the
//! diffusion coefficient, and the observation-error bound.
//!
//! Every random object is a pure function of `(inputs, seed)`. One global
//! seed expands into independent substreams keyed by `(purpose, index)` via
//! a counter-based split, so adding trials or reordering work never perturbs
//! the draws of existing trials.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::evolve::Coefficient;
use crate::spectral::{build_basis, EigenBasis, SpectralField};

/// What a substream is for; part of the stream key so distinct uses of the
/// same trial index never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// White noise added to the observed final-state coefficients.
    Observation,
    /// Brownian path perturbing the diffusion coefficient.
    CoefficientNoise,
    /// Auxiliary field draws (validation suites, random initializations).
    FieldDraw,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Observation => 0x6f62_7365_7276_6531,
            StreamPurpose::CoefficientNoise => 0x636f_6566_6e6f_6973,
            StreamPurpose::FieldDraw => 0x6669_656c_6464_7277,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, purpose, index)`.
///
/// The key is derived by a splitmix64 chain absorbing the purpose tag and
/// the index, then expanded to 256 bits; collisions across distinct keys are
/// astronomically unlikely, and identical keys are bit-reproducible across
/// platforms.
pub fn substream(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha12Rng {
    let mut state = seed;
    let _ = splitmix64(&mut state);
    state ^= purpose.tag();
    let _ = splitmix64(&mut state);
    state ^= index;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Derive a child seed (for nesting substreams inside per-trial work).
pub fn derive_seed(seed: u64, purpose: StreamPurpose, index: u64) -> u64 {
    let mut state = seed;
    let _ = splitmix64(&mut state);
    state ^= purpose.tag();
    let _ = splitmix64(&mut state);
    state ^= index;
    splitmix64(&mut state)
}

/// Parameters of the white-noise observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Noise amplitude per coefficient (>= 0).
    pub delta: f64,
    /// Number of observed coefficients (>= 1).
    pub n_obs: usize,
    /// Stream seed; the observation is a pure function of `(g, self)`.
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(delta: f64, n_obs: usize, seed: u64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::NonFinite { name: "delta", value: delta });
        }
        if n_obs == 0 {
            return Err(Error::ObservationBand { requested: 0, capacity: 0 });
        }
        Ok(Self { delta, n_obs, seed })
    }
}

/// The truncated noisy data: first `n_obs` coefficients of the final state,
/// each corrupted by an independent `N(0, delta^2)` draw.
#[derive(Debug, Clone)]
pub struct NoisyObservation {
    pub field: SpectralField,
    pub config: NoiseConfig,
}

/// Observe the final state `g` through the white-noise model:
/// coefficient `j` of the result is `<g, phi_j> + delta * xi_j`,
/// `xi_j` i.i.d. standard normal, for the `n_obs` lowest modes.
///
/// Modes of the observation band missing from `g` read as zero (pure noise);
/// the band must fit the grid of `g`'s domain.
pub fn observe_final(g: &SpectralField, cfg: &NoiseConfig) -> Result<NoisyObservation> {
    let obs_basis = observation_basis(g.basis(), cfg.n_obs)?;
    let mut rng = substream(cfg.seed, StreamPurpose::Observation, 0);
    let mut coeffs = Vec::with_capacity(obs_basis.len());
    for m in 0..obs_basis.len() {
        let true_coeff = g
            .basis()
            .position_of(obs_basis.mode(m))
            .map_or(0.0, |p| g.coeffs()[p]);
        let xi: f64 = rng.sample(StandardNormal);
        coeffs.push(true_coeff + cfg.delta * xi);
    }
    Ok(NoisyObservation {
        field: SpectralField::from_coeffs(&obs_basis, coeffs)?,
        config: *cfg,
    })
}

/// Basis carrying exactly the observation band over `g`'s domain (reuses
/// `g`'s basis when the band width already matches).
fn observation_basis(basis: &Arc<EigenBasis>, n_obs: usize) -> Result<Arc<EigenBasis>> {
    if basis.len() == n_obs {
        return Ok(Arc::clone(basis));
    }
    build_basis(basis.domain(), n_obs).map_err(|e| match e {
        Error::BandExceedsGrid { requested, capacity } => {
            Error::ObservationBand { requested, capacity }
        }
        other => other,
    })
}

/// Mean-integrated-squared-error bound for the truncated noisy data:
/// `delta^2 N + lambda_N^{-2 gamma} ||g||^2_{H^{2 gamma}}`
/// (variance of the observed band plus the smoothness-controlled tail).
pub fn mise_bound(delta: f64, n_obs: usize, gamma: f64, g_norm_h2gamma: f64, lambda_n: f64) -> f64 {
    delta * delta * n_obs as f64 + lambda_n.powf(-2.0 * gamma) * g_norm_h2gamma * g_norm_h2gamma
}

/// A sampled Brownian path on `[0, T]`, piecewise-linear between nodes.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

/// Sample a standard Brownian path at `k_steps + 1` uniform nodes on
/// `[0, t_horizon]`: `psi(0) = 0`, independent Gaussian increments of
/// variance equal to the node spacing.
pub fn brownian_path(t_horizon: f64, k_steps: usize, seed: u64) -> Result<BrownianPath> {
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::NonPositive { name: "T", value: t_horizon });
    }
    if k_steps == 0 {
        return Err(Error::TimeGrid(0));
    }
    let mut rng = substream(seed, StreamPurpose::CoefficientNoise, 0);
    let dt = t_horizon / k_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut times = Vec::with_capacity(k_steps + 1);
    let mut values = Vec::with_capacity(k_steps + 1);
    times.push(0.0);
    values.push(0.0);
    let mut acc = 0.0;
    for k in 1..=k_steps {
        let xi: f64 = rng.sample(StandardNormal);
        acc += sqrt_dt * xi;
        times.push(k as f64 * dt);
        values.push(acc);
    }
    Ok(BrownianPath { times, values })
}

impl BrownianPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("path has at least one node")
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Piecewise-linear evaluation; clamps outside `[0, T]`.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        // times are uniform; index arithmetic avoids a search
        let dt = self.times[1] - self.times[0];
        let k = ((t / dt) as usize).min(n - 2);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }
}

/// A diffusion coefficient observed through Brownian noise, together with
/// its reflection `b = M - a` and the recorded bounds the reversed-time
/// solver needs.
#[derive(Debug, Clone)]
pub struct PerturbedCoefficient {
    /// `a_delta(x,t) = a(x,t) + delta * psi(t)`.
    pub a_delta: Coefficient,
    /// `b_delta(x,t) = M - a_delta(x,t)`.
    pub b_delta: Coefficient,
    /// Lower bound `b_0 = M - max a_delta` (> 0 when valid).
    pub b_lower: f64,
    /// The cap `M`.
    pub m_cap: f64,
}

/// Perturb the coefficient `a` by `delta * psi(t)` and derive `b = M - a`.
///
/// The trial is invalid (error, not clamped) when the perturbed coefficient
/// leaves `(0, M)` anywhere on the path: the reversed-time theory requires
/// `0 < b_0 <= b_delta <= M`, and clamping would silently change the model.
pub fn perturb_coefficient(
    a: &Coefficient,
    delta: f64,
    psi: &BrownianPath,
    m_cap: f64,
) -> Result<PerturbedCoefficient> {
    if !(m_cap.is_finite() && m_cap > 0.0) {
        return Err(Error::NonPositive { name: "M", value: m_cap });
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::NonFinite { name: "delta", value: delta });
    }
    // Piecewise-linear extremes sit at nodes: interval arithmetic is exact.
    let (lo, hi) = (a.min() + delta * psi.min(), a.max() + delta * psi.max());
    if !(lo > 0.0 && hi < m_cap) {
        return Err(Error::CoefficientRange { min: lo, max: hi, m_cap });
    }
    let psi_dev = psi.clone();
    let a_delta = a.shifted_by_time(
        move |t| delta * psi_dev.value_at(t),
        delta * psi.min(),
        delta * psi.max(),
    );
    let b_delta = a_delta.reflected(m_cap);
    let b_lower = m_cap - a_delta.max();
    Ok(PerturbedCoefficient { a_delta, b_delta, b_lower, m_cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{l2_distance, norm, DomainSpec, NormKind};

    fn basis_1d(n: usize, modes: usize) -> Arc<EigenBasis> {
        build_basis(&DomainSpec::interval(n).unwrap(), modes).unwrap()
    }

    #[test]
    fn noiseless_observation_reproduces_and_zero_pads() {
        let basis = basis_1d(64, 3);
        let g = SpectralField::from_amplitudes(&basis, &[(1, 1.0), (3, 0.5)]).unwrap();
        let cfg = NoiseConfig::new(0.0, 5, 7).unwrap();
        let obs = observe_final(&g, &cfg).unwrap();
        assert_eq!(obs.field.basis().len(), 5);
        assert_eq!(obs.field.coeffs()[..3], [1.0, 0.0, 0.5]);
        assert_eq!(obs.field.coeffs()[3..], [0.0, 0.0], "padding modes carry pure zero");
    }

    #[test]
    fn observation_is_bit_deterministic_per_seed() {
        let basis = basis_1d(64, 16);
        let g = SpectralField::basis_vector(&basis, 1).unwrap();
        let cfg = NoiseConfig::new(0.01, 16, 12345).unwrap();
        let a = observe_final(&g, &cfg).unwrap();
        let b = observe_final(&g, &cfg).unwrap();
        assert_eq!(a.field.coeffs(), b.field.coeffs(), "same seed must be bit-identical");
        let cfg2 = NoiseConfig::new(0.01, 16, 12346).unwrap();
        let c = observe_final(&g, &cfg2).unwrap();
        assert_ne!(a.field.coeffs(), c.field.coeffs(), "different seed must differ");
    }

    #[test]
    fn substreams_are_independent_of_enumeration_order() {
        let take = |i: u64| {
            let mut r = substream(99, StreamPurpose::Observation, i);
            (0..4).map(|_| r.gen::<u64>()).collect::<Vec<_>>()
        };
        let early = take(3);
        // draw other indices in between; index 3 must not move
        let _ = take(0);
        let _ = take(7);
        assert_eq!(take(3), early);
        assert_ne!(take(2), take(4));
        // purposes separate streams at equal index
        let mut obs = substream(99, StreamPurpose::Observation, 0);
        let mut brown = substream(99, StreamPurpose::CoefficientNoise, 0);
        assert_ne!(obs.gen::<u64>(), brown.gen::<u64>());
    }

    #[test]
    fn observation_error_matches_analytic_expectation() {
        // E ||Gbar - g||^2 = delta^2 * N when g lies inside the band.
        let basis = basis_1d(64, 16);
        let g = SpectralField::from_amplitudes(&basis, &[(1, 1.0), (3, 0.5)]).unwrap();
        let trials = 1000;
        let delta = 0.01;
        let g_obs = g.embed(&basis_1d(64, 16)).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for trial in 0..trials {
            let cfg = NoiseConfig {
                delta,
                n_obs: 16,
                seed: derive_seed(42, StreamPurpose::Observation, trial),
            };
            let obs = observe_final(&g, &cfg).unwrap();
            let err = l2_distance(&obs.field, &g_obs).unwrap();
            sum += err * err;
            sumsq += err * err * err * err;
        }
        let mean = sum / trials as f64;
        let var = (sumsq - sum * sum / trials as f64) / (trials as f64 - 1.0);
        let se = (var / trials as f64).sqrt();
        let analytic = delta * delta * 16.0;
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "MC mean {mean} vs analytic {analytic} (3SE = {})",
            3.0 * se
        );
        // ... and stays below the observation-error bound with the tail term.
        // ||g||_{H^2}^2 = lambda_1^2 * 1 + lambda_3^2 * 0.25 = 1 + 81/4 = 21.25.
        let g_h2 = norm(&g, NormKind::Sobolev(2.0)).unwrap();
        assert!((g_h2 * g_h2 - 21.25).abs() < 1e-12, "H^2 norm oracle: {}", g_h2 * g_h2);
        let bound = mise_bound(delta, 16, 1.0, g_h2, basis_1d(64, 16).lambda_max());
        assert!(mean <= bound, "MC mean {mean} must sit below the bound {bound}");
    }

    #[test]
    fn per_coefficient_mean_and_variance_match_the_model() {
        // Unbiasedness and variance of individual coefficients at 1e4 trials.
        let basis = basis_1d(32, 4);
        let g = SpectralField::from_amplitudes(&basis, &[(2, 0.7)]).unwrap();
        let trials = 10_000usize;
        let delta = 0.05;
        let mut sums = [0.0f64; 4];
        let mut sumsq = [0.0f64; 4];
        for trial in 0..trials {
            let cfg = NoiseConfig {
                delta,
                n_obs: 4,
                seed: derive_seed(7, StreamPurpose::Observation, trial as u64),
            };
            let obs = observe_final(&g, &cfg).unwrap();
            for (j, &c) in obs.field.coeffs().iter().enumerate() {
                sums[j] += c;
                sumsq[j] += c * c;
            }
        }
        let t = trials as f64;
        for j in 0..4 {
            let mean = sums[j] / t;
            let var = (sumsq[j] - sums[j] * sums[j] / t) / (t - 1.0);
            let truth = if j == 1 { 0.7 } else { 0.0 };
            let se_mean = delta / t.sqrt();
            assert!(
                (mean - truth).abs() <= 3.0 * se_mean,
                "coeff {j}: mean {mean} vs {truth} (3SE {})",
                3.0 * se_mean
            );
            // SE of the sample variance of a normal: var * sqrt(2/(t-1)).
            let se_var = delta * delta * (2.0 / (t - 1.0)).sqrt();
            assert!(
                (var - delta * delta).abs() <= 3.0 * se_var,
                "coeff {j}: variance {var} vs {} (3SE {})",
                delta * delta,
                3.0 * se_var
            );
        }
    }

    #[test]
    fn observation_band_must_fit_the_grid() {
        let basis = basis_1d(16, 4); // grid capacity (16-2)/2 = 7
        let g = SpectralField::basis_vector(&basis, 1).unwrap();
        let cfg = NoiseConfig::new(0.01, 8, 1).unwrap();
        match observe_final(&g, &cfg) {
            Err(Error::ObservationBand { requested, capacity }) => {
                assert_eq!((requested, capacity), (8, 7));
            }
            other => panic!("expected ObservationBand error, got {other:?}"),
        }
    }

    #[test]
    fn mise_bound_examples() {
        // Pure bias at delta = 0.
        assert_eq!(mise_bound(0.0, 99, 1.0, 1.0, 256.0), 256.0f64.powf(-2.0));
        assert!((mise_bound(0.0, 99, 1.0, 1.0, 256.0) - 1.52587890625e-05).abs() < 1e-20);
        // gamma = 0 collapses the weights.
        assert!((mise_bound(0.01, 16, 0.0, 1.0, 256.0) - 1.0016).abs() < 1e-15);
        // Full example, frozen from direct evaluation of the formula.
        let b = mise_bound(0.01, 16, 1.0, 1.0, 256.0);
        assert!(
            (b - 0.0016152587890625).abs() < 1e-18,
            "bound {b} vs frozen 0.0016152587890625"
        );
    }

    #[test]
    fn brownian_path_basics() {
        let p = brownian_path(2.0, 100, 5).unwrap();
        assert_eq!(p.values()[0], 0.0, "psi(0) must be 0");
        assert_eq!(p.times().len(), 101);
        assert_eq!(p.times()[100], 2.0);
        let q = brownian_path(2.0, 100, 5).unwrap();
        assert_eq!(p.values(), q.values(), "same seed, same path");
        let r = brownian_path(2.0, 100, 6).unwrap();
        assert_ne!(p.values(), r.values());
        // linear interpolation between nodes
        let mid = 0.5 * (p.values()[3] + p.values()[4]);
        let t_mid = 0.5 * (p.times()[3] + p.times()[4]);
        assert!((p.value_at(t_mid) - mid).abs() < 1e-14);
        assert_eq!(p.value_at(-1.0), 0.0, "clamped before 0");
        assert_eq!(p.value_at(3.0), p.final_value(), "clamped after T");
    }

    #[test]
    fn brownian_terminal_variance_and_increment_normality() {
        let t_horizon = 0.7;
        let trials = 10_000;
        let mut sq = 0.0;
        for s in 0..trials {
            let p = brownian_path(t_horizon, 8, derive_seed(11, StreamPurpose::CoefficientNoise, s)).unwrap();
            sq += p.final_value() * p.final_value();
        }
        let mean_sq = sq / trials as f64;
        // Var(psi(T)^2) = 2 T^2 for a Gaussian, so 3 SE = 3 T sqrt(2/trials).
        let tol = 3.0 * t_horizon * (2.0 / trials as f64).sqrt();
        assert!(
            (mean_sq - t_horizon).abs() <= tol,
            "E psi(T)^2 = {mean_sq} vs T = {t_horizon} (3SE {tol})"
        );

        // Kurtosis of pooled normalized increments near 3.
        let mut incs = Vec::with_capacity(10_000);
        let big = brownian_path(1.0, 10_000, 999).unwrap();
        let dt = big.times()[1];
        for k in 1..big.values().len() {
            incs.push((big.values()[k] - big.values()[k - 1]) / dt.sqrt());
        }
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let m2 = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = incs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let kurt = m4 / (m2 * m2);
        let tol_kurt = 3.0 * (24.0 / n).sqrt();
        assert!(
            (kurt - 3.0).abs() <= tol_kurt,
            "increment kurtosis {kurt} vs 3 (3SE {tol_kurt})"
        );
    }

    #[test]
    fn perturbation_arithmetic_and_validity() {
        let a = Coefficient::constant(1.0);
        let psi = brownian_path(1.0, 50, 3).unwrap();

        // delta = 0 leaves the coefficient untouched.
        let p0 = perturb_coefficient(&a, 0.0, &psi, 2.0).unwrap();
        assert_eq!(p0.a_delta.value(&[0.5], 0.3), 1.0);
        assert_eq!(p0.b_delta.value(&[0.5], 0.3), 1.0);
        assert_eq!(p0.b_lower, 1.0);

        // a == 1, M = 2: b_delta(t) = 1 - delta psi(t) at the nodes.
        let delta = 1e-3;
        let p = perturb_coefficient(&a, delta, &psi, 2.0).unwrap();
        for (k, &t) in psi.times().iter().enumerate() {
            let expect = 1.0 - delta * psi.values()[k];
            let got = p.b_delta.value(&[0.1], t);
            assert!(
                (got - expect).abs() < 1e-15,
                "b_delta({t}) = {got}, expected {expect}"
            );
        }
        assert!(p.b_lower > 0.0 && p.b_lower <= 2.0);
        assert!(p.a_delta.is_x_independent());

        // Validity flag: a path excursion beyond M - sup a must reject.
        let m_tight = 1.0 + delta * psi.max() / 2.0;
        match perturb_coefficient(&a, delta, &psi, m_tight) {
            Err(Error::CoefficientRange { max, m_cap, .. }) => {
                assert!(max >= m_cap, "reported range {max} must exceed the cap {m_cap}");
            }
            Err(e) => panic!("expected CoefficientRange, got {e:?}"),
            Ok(_) if psi.max() > 0.0 => panic!("out-of-range coefficient must be rejected"),
            Ok(_) => {} // a path that never goes positive cannot trip this cap
        }
    }

    #[test]
    fn observation_norms_are_finite_and_reasonable() {
        // A smoke check tying the pieces together: noisy observation of a
        // two-mode state keeps its norm near the true one for small delta.
        let basis = basis_1d(64, 16);
        let g = SpectralField::from_amplitudes(&basis, &[(1, 1.0), (3, 0.5)]).unwrap();
        let cfg = NoiseConfig::new(1e-4, 16, 2024).unwrap();
        let obs = observe_final(&g, &cfg).unwrap();
        let n = norm(&obs.field, NormKind::L2).unwrap();
        let truth = 1.25f64.sqrt();
        assert!((n - truth).abs() < 1e-2, "norm {n} vs {truth}");
    }
}
