//! The nonlinearity library: pointwise sources with structural metadata,
//! the clipping transform that makes a locally Lipschitz source globally
//! Lipschitz, and the diagonal spectral source used by the ill-posedness
//! demonstration.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectral::{analyze, synthesize, GridField, SpectralField};

/// Smoothing half-width used only inside time steppers for sources whose
/// derivative blows up at zero (odd root). The evaluator itself stays exact.
pub const STEP_SMOOTHING_EPS: f64 = 1e-8;

type EvalFn = Arc<dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync>;
type KrFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Constants of the sign/growth/one-sided-monotonicity structural conditions:
/// `z F(z) >= c1 |z|^p - c1_prime`, `|F(z)| <= c2 (1 + |z|^{p-1})`,
/// `(z1 - z2)(F(z1) - F(z2)) >= -gamma_bar (z1 - z2)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralConstants {
    pub p: f64,
    pub c1: f64,
    pub c1_prime: f64,
    pub c2: f64,
    pub gamma_bar: f64,
}

/// How a source is allowed to enter the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// `|F(u) - F(v)| <= k |u - v|` everywhere.
    GloballyLipschitz { k: f64 },
    /// Lipschitz on every bounded set (constant grows with the radius).
    LocallyLipschitz,
    /// No Lipschitz property; sign/growth/monotonicity constants instead.
    Structural(StructuralConstants),
}

/// A pointwise source `F(x, t, u)` with its structural metadata, or the
/// diagonal spectral source (which has no pointwise evaluation).
#[derive(Clone)]
pub struct SourceSpec {
    name: String,
    eval: EvalFn,
    /// Replacement evaluator for time steppers (smoothed near stiff points);
    /// `None` means the exact evaluator is fine to step with.
    step_eval: Option<EvalFn>,
    kind: SourceKind,
    /// Closed-form Lipschitz constant on `[-R, R]`, when known.
    kr_closed: Option<KrFn>,
    /// Whether the evaluator reads `x` (affects numeric Lipschitz sampling).
    x_dependent: bool,
    /// `Some(T)`: diagonal spectral source with multiplier
    /// `e^{-T lambda_j} / (2T)`; pointwise evaluation is an error.
    spectral_horizon: Option<f64>,
}

impl std::fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("x_dependent", &self.x_dependent)
            .field("spectral_horizon", &self.spectral_horizon)
            .finish_non_exhaustive()
    }
}

impl SourceSpec {
    fn pointwise(name: &str, kind: SourceKind, eval: EvalFn) -> Self {
        Self {
            name: name.to_string(),
            eval,
            step_eval: None,
            kind,
            kr_closed: None,
            x_dependent: false,
            spectral_horizon: None,
        }
    }

    /// The zero source.
    pub fn zero() -> Self {
        Self::pointwise("zero", SourceKind::GloballyLipschitz { k: 0.0 }, Arc::new(|_, _, _| 0.0))
    }

    /// `F(u) = k u` (test and calibration source).
    pub fn linear(k: f64) -> Self {
        let mut s = Self::pointwise(
            "linear",
            SourceKind::GloballyLipschitz { k: k.abs() },
            Arc::new(move |_, _, u| k * u),
        );
        s.kr_closed = Some(Arc::new(move |_| k.abs()));
        s
    }

    /// The bistable cubic `F(u) = u - u^3`.
    pub fn ginzburg_landau() -> Self {
        let mut s = Self::pointwise(
            "ginzburg-landau",
            SourceKind::LocallyLipschitz,
            Arc::new(|_, _, u| u - u * u * u),
        );
        // sup |1 - 3u^2| over [-R, R] = max(1, 3R^2 - 1) <= 1 + 3R^2; the
        // registered constant uses the standard 1 + 3R^2 form.
        s.kr_closed = Some(Arc::new(|r| 1.0 + 3.0 * r * r));
        s
    }

    /// The real odd root `F(u) = sign(u) |u|^{1/3}`: monotone, not locally
    /// Lipschitz at zero; carries its structural constants.
    pub fn cube_root() -> Self {
        let mut s = Self::pointwise(
            "cube-root",
            SourceKind::Structural(StructuralConstants {
                p: 4.0 / 3.0,
                c1: 1.0,
                c1_prime: 0.0,
                c2: 1.0,
                gamma_bar: 0.0,
            }),
            Arc::new(|_, _, u| u.cbrt()),
        );
        // Steppers use u / (eps^2 + u^2)^{1/3}, which matches the exact root
        // away from zero and has a finite slope at zero.
        s.step_eval = Some(Arc::new(|_, _, u| {
            u / (STEP_SMOOTHING_EPS * STEP_SMOOTHING_EPS + u * u).cbrt()
        }));
        s
    }

    /// Logistic reaction `F(x, u) = gamma(x) u^2 - mu(x) u` with constant
    /// coefficients. No structural claim is attached: the quadratic term
    /// violates the one-sided sign condition for positive `gamma`.
    pub fn logistic_constant(gamma: f64, mu: f64) -> Self {
        let mut s = Self::pointwise(
            "logistic",
            SourceKind::LocallyLipschitz,
            Arc::new(move |_, _, u| gamma * u * u - mu * u),
        );
        s.kr_closed = Some(Arc::new(move |r| 2.0 * gamma.abs() * r + mu.abs()));
        s
    }

    /// Logistic reaction with spatially varying coefficients sampled on a
    /// grid; evaluation at arbitrary `x` reads the nearest grid node.
    pub fn logistic_from_grids(gamma: &GridField, mu: &GridField) -> Result<Self> {
        if !std::sync::Arc::ptr_eq(gamma.basis(), mu.basis())
            && gamma.basis().domain() != mu.basis().domain()
        {
            return Err(Error::BasisMismatch);
        }
        let sup_gamma = gamma.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let sup_mu = mu.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let g = gamma.clone();
        let m = mu.clone();
        let lookup = move |field: &GridField, x: &[f64]| -> f64 {
            let domain = field.basis().domain();
            let mut flat = 0usize;
            for a in 0..domain.dim() {
                let h = domain.spacing(a);
                let n = domain.grid()[a];
                let i = ((x[a] / h - 1.0).round().max(0.0) as usize).min(n - 1);
                flat = flat * n + i;
            }
            field.values()[flat]
        };
        let mut s = Self::pointwise(
            "logistic",
            SourceKind::LocallyLipschitz,
            Arc::new(move |x, _, u| lookup(&g, x) * u * u - lookup(&m, x) * u),
        );
        s.x_dependent = true;
        s.kr_closed = Some(Arc::new(move |r| 2.0 * sup_gamma * r + sup_mu));
        Ok(s)
    }

    /// The diagonal spectral source with multiplier `e^{-T lambda_j} / (2T)`
    /// (the contraction example of the ill-posedness analysis). Only
    /// [`apply_to_field`] can evaluate it.
    pub fn spectral_diagonal(t_horizon: f64) -> Result<Self> {
        if !(t_horizon.is_finite() && t_horizon > 0.0) {
            return Err(Error::NonPositive { name: "T", value: t_horizon });
        }
        Ok(Self {
            name: "spectral-diagonal".to_string(),
            eval: Arc::new(|_, _, _| f64::NAN),
            step_eval: None,
            // Operator norm on L2 is the largest multiplier.
            kind: SourceKind::GloballyLipschitz { k: f64::NAN },
            kr_closed: None,
            x_dependent: false,
            spectral_horizon: Some(t_horizon),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral_horizon.is_some()
    }

    pub fn is_x_dependent(&self) -> bool {
        self.x_dependent
    }

    /// Exact pointwise evaluation `F(x, t, u)`.
    pub fn eval(&self, x: &[f64], t: f64, u: f64) -> Result<f64> {
        if self.spectral_horizon.is_some() {
            return Err(Error::NonPointwiseSource);
        }
        if !u.is_finite() {
            return Err(Error::NonFinite { name: "u", value: u });
        }
        let v = (self.eval)(x, t, u);
        if !v.is_finite() {
            return Err(Error::NonFinite { name: "F(u)", value: v });
        }
        Ok(v)
    }

    /// The evaluator a time stepper should difference: exact for most
    /// sources, smoothed near stiff points where registered.
    pub fn stepping_closure(&self) -> Result<EvalFn> {
        if self.spectral_horizon.is_some() {
            return Err(Error::NonPointwiseSource);
        }
        Ok(self.step_eval.clone().unwrap_or_else(|| Arc::clone(&self.eval)))
    }

    /// Global Lipschitz constant if the source carries one.
    pub fn global_lipschitz(&self) -> Option<f64> {
        match self.kind {
            SourceKind::GloballyLipschitz { k } if k.is_finite() => Some(k),
            _ => None,
        }
    }

    /// Structural constants if the source carries them.
    pub fn structural_constants(&self) -> Option<StructuralConstants> {
        match self.kind {
            SourceKind::Structural(c) => Some(c),
            _ => None,
        }
    }
}

/// A Lipschitz constant for a source restricted to `[-R, R]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzBound {
    /// The constant itself (closed form) or the raw sampled supremum.
    pub k_r: f64,
    /// `k_r` times the safety factor; equals `k_r` for certified bounds.
    pub padded: f64,
    /// True when the value comes from a registered closed form.
    pub certified: bool,
}

const ESTIMATE_SAFETY: f64 = 10.0;

/// Lipschitz constant of `spec` on `[-R, R]`: the registered closed form
/// when available, otherwise the supremum of difference quotients over a
/// 100 x 100 sample of `[-R, R]^2` (an estimate, reported with a 10x
/// safety pad, never a certificate).
pub fn lipschitz_bound(spec: &SourceSpec, radius: f64) -> Result<LipschitzBound> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::ClipRadius(radius));
    }
    if spec.spectral_horizon.is_some() {
        return Err(Error::NonPointwiseSource);
    }
    if let Some(kr) = &spec.kr_closed {
        let k = kr(radius);
        return Ok(LipschitzBound { k_r: k, padded: k, certified: true });
    }
    if spec.x_dependent {
        return Err(Error::Config(
            "numeric Lipschitz sampling needs an x-independent source; register a closed form"
                .to_string(),
        ));
    }
    let n = 100usize;
    let mut sup: f64 = 0.0;
    let at = |i: usize| -radius + 2.0 * radius * i as f64 / (n - 1) as f64;
    for i in 0..n {
        let u = at(i);
        let fu = spec.eval(&[], 0.0, u)?;
        for j in (i + 1)..n {
            let v = at(j);
            let fv = spec.eval(&[], 0.0, v)?;
            let q = ((fu - fv) / (u - v)).abs();
            sup = sup.max(q);
        }
    }
    Ok(LipschitzBound { k_r: sup, padded: ESTIMATE_SAFETY * sup, certified: false })
}

/// A source frozen to constants outside `[-R, R]`, globally Lipschitz with
/// the restricted constant.
#[derive(Debug, Clone)]
pub struct ClippedSource {
    spec: SourceSpec,
    radius: f64,
    bound: LipschitzBound,
}

/// Clip `spec` to `[-R, R]`: identical inside, frozen to the boundary values
/// outside. Requires a source with a finite Lipschitz constant on `[-R, R]`.
pub fn clip(spec: &SourceSpec, radius: f64) -> Result<ClippedSource> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::ClipRadius(radius));
    }
    if spec.spectral_horizon.is_some() {
        return Err(Error::NonPointwiseSource);
    }
    match spec.kind {
        SourceKind::GloballyLipschitz { .. } | SourceKind::LocallyLipschitz => {}
        SourceKind::Structural(_) => {
            return Err(Error::NotLocallyLipschitz(spec.name.clone()));
        }
    }
    let bound = lipschitz_bound(spec, radius)?;
    let base_eval = Arc::clone(&spec.eval);
    let clipped_eval: EvalFn =
        Arc::new(move |x, t, u| base_eval(x, t, u.clamp(-radius, radius)));
    let base_step = spec.step_eval.clone();
    let clipped_step: Option<EvalFn> = base_step.map(|f| {
        let f = Arc::clone(&f);
        Arc::new(move |x: &[f64], t: f64, u: f64| f(x, t, u.clamp(-radius, radius))) as EvalFn
    });
    let clipped = SourceSpec {
        name: format!("{}-clipped", spec.name),
        eval: clipped_eval,
        step_eval: clipped_step,
        kind: SourceKind::GloballyLipschitz { k: bound.k_r },
        kr_closed: spec.kr_closed.clone(),
        x_dependent: spec.x_dependent,
        spectral_horizon: None,
    };
    Ok(ClippedSource { spec: clipped, radius, bound })
}

impl ClippedSource {
    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lipschitz(&self) -> LipschitzBound {
        self.bound
    }

    pub fn eval(&self, x: &[f64], t: f64, u: f64) -> Result<f64> {
        self.spec.eval(x, t, u)
    }
}

/// Apply a source to a whole field at time `t`: pointwise sources go through
/// a grid round-trip (synthesize, evaluate, analyze); the diagonal spectral
/// source multiplies coefficients directly.
pub fn apply_to_field(spec: &SourceSpec, f: &SpectralField, t: f64) -> Result<SpectralField> {
    if let Some(t_ref) = spec.spectral_horizon {
        return spectral_f0(f, t_ref);
    }
    let grid = synthesize(f);
    let domain = f.basis().domain();
    let mut values = Vec::with_capacity(grid.values().len());
    if spec.x_dependent {
        for (i, &v) in grid.values().iter().enumerate() {
            values.push(spec.eval(&domain.coords(i), t, v)?);
        }
    } else {
        for &v in grid.values() {
            values.push(spec.eval(&[], t, v)?);
        }
    }
    Ok(analyze(&GridField::from_values(f.basis(), values)?))
}

/// The diagonal spectral source: `c_j -> (e^{-T lambda_j} / (2T)) c_j`.
/// Defined on the unit interval `(0, pi)` in one dimension.
pub fn spectral_f0(f: &SpectralField, t_horizon: f64) -> Result<SpectralField> {
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::NonPositive { name: "T", value: t_horizon });
    }
    let domain = f.basis().domain();
    if domain.dim() != 1 {
        return Err(Error::Dimension(domain.dim()));
    }
    if (domain.lengths()[0] - std::f64::consts::PI).abs() > 1e-12 {
        return Err(Error::Length(domain.lengths()[0]));
    }
    Ok(f.map_modes(|l, c| (-t_horizon * l).exp() / (2.0 * t_horizon) * c))
}

/// Operator norm of the diagonal spectral source on the given band:
/// its largest multiplier, `e^{-T lambda_1} / (2T)`.
pub fn spectral_f0_lipschitz(lambda_min: f64, t_horizon: f64) -> f64 {
    (-t_horizon * lambda_min).exp() / (2.0 * t_horizon)
}

/// Worst margins of the three structural inequalities on a dense sample.
#[derive(Debug, Clone)]
pub struct StructuralReport {
    /// Claimed constants under test.
    pub constants: StructuralConstants,
    /// Worst (most negative) margin of `z F - (c1 |z|^p - c1')` and its z.
    pub sign_margin: (f64, f64),
    /// Worst margin of `c2 (1 + |z|^{p-1}) - |F|` and its z.
    pub growth_margin: (f64, f64),
    /// Worst margin of `(dz)(dF) + gamma_bar (dz)^2`, normalized by `(dz)^2`,
    /// and the pair (z1, z2).
    pub monotone_margin: (f64, (f64, f64)),
    /// Degenerate constants (c1 <= 0 or p <= 1): the sign condition carries
    /// no information.
    pub degenerate: bool,
    /// All margins nonnegative up to rounding slack and not degenerate.
    pub pass: bool,
}

impl StructuralReport {
    /// Human-readable one-line verdict naming the worst inequality.
    pub fn verdict(&self) -> String {
        if self.degenerate {
            return "degenerate: sign constants carry no information (need c1 > 0, p > 1)"
                .to_string();
        }
        if self.pass {
            return format!(
                "pass (worst margins: sign {:.3e}, growth {:.3e}, monotone {:.3e})",
                self.sign_margin.0, self.growth_margin.0, self.monotone_margin.0
            );
        }
        let mut worst = ("sign", self.sign_margin.0, self.sign_margin.1);
        if self.growth_margin.0 < worst.1 {
            worst = ("growth", self.growth_margin.0, self.growth_margin.1);
        }
        if self.monotone_margin.0 < worst.1 {
            worst = ("monotone", self.monotone_margin.0, self.monotone_margin.1 .0);
        }
        format!(
            "FAIL: {} condition violated by {:.3e} near z = {:.6}",
            worst.0, -worst.1, worst.2
        )
    }
}

/// Check the three structural inequalities for `spec` with the supplied
/// constants on a dense sample of `[-range, range]` (1000 points for the
/// single-variable conditions, a 200 x 200 pair grid for monotonicity).
/// Violations come back as a failed report naming the witness, not an error.
pub fn verify_structural(
    spec: &SourceSpec,
    range: f64,
    constants: StructuralConstants,
) -> Result<StructuralReport> {
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::NonPositive { name: "range", value: range });
    }
    if spec.spectral_horizon.is_some() {
        return Err(Error::NonPointwiseSource);
    }
    let StructuralConstants { p, c1, c1_prime, c2, gamma_bar } = constants;
    let degenerate = !(c1 > 0.0 && p > 1.0);

    let n = 1000usize;
    let at = |i: usize, count: usize| -range + 2.0 * range * i as f64 / (count - 1) as f64;
    let mut sign_margin = (f64::INFINITY, 0.0f64);
    let mut growth_margin = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let z = at(i, n);
        let fz = spec.eval(&[], 0.0, z)?;
        let sign = z * fz - (c1 * z.abs().powf(p) - c1_prime);
        if sign < sign_margin.0 {
            sign_margin = (sign, z);
        }
        let growth = c2 * (1.0 + z.abs().powf(p - 1.0)) - fz.abs();
        if growth < growth_margin.0 {
            growth_margin = (growth, z);
        }
    }

    let m = 200usize;
    let mut monotone_margin = (f64::INFINITY, (0.0f64, 0.0f64));
    for i in 0..m {
        let z1 = at(i, m);
        let f1 = spec.eval(&[], 0.0, z1)?;
        for j in (i + 1)..m {
            let z2 = at(j, m);
            let f2 = spec.eval(&[], 0.0, z2)?;
            let dz = z1 - z2;
            let margin = ((z1 - z2) * (f1 - f2) + gamma_bar * dz * dz) / (dz * dz);
            if margin < monotone_margin.0 {
                monotone_margin = (margin, (z1, z2));
            }
        }
    }

    // Allow rounding slack proportional to the magnitudes involved.
    let slack = 1e-9 * (1.0 + range.powf(p.max(2.0)));
    let pass = !degenerate
        && sign_margin.0 >= -slack
        && growth_margin.0 >= -slack
        && monotone_margin.0 >= -slack;
    Ok(StructuralReport { constants, sign_margin, growth_margin, monotone_margin, degenerate, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, norm, DomainSpec, NormKind, SpectralField};
    use rand::Rng;

    fn basis_1d(n: usize, modes: usize) -> std::sync::Arc<crate::spectral::EigenBasis> {
        build_basis(&DomainSpec::interval(n).unwrap(), modes).unwrap()
    }

    #[test]
    fn pointwise_evaluations_match_closed_forms() {
        let gl = SourceSpec::ginzburg_landau();
        assert_eq!(gl.eval(&[], 0.0, 2.0).unwrap(), -6.0, "u - u^3 at 2");
        let cr = SourceSpec::cube_root();
        assert_eq!(cr.eval(&[], 0.0, 8.0).unwrap(), 2.0, "real cube root of 8");
        assert_eq!(cr.eval(&[], 0.0, -8.0).unwrap(), -2.0, "odd root of -8");
        let fk = SourceSpec::logistic_constant(1.0, 1.0);
        assert_eq!(fk.eval(&[], 0.0, 2.0).unwrap(), 2.0, "u^2 - u at 2");
        assert_eq!(SourceSpec::zero().eval(&[], 1.0, 5.0).unwrap(), 0.0);
        assert!(gl.eval(&[], 0.0, f64::NAN).is_err(), "non-finite u must be rejected");
        assert!(gl.eval(&[], 0.0, 1e200).is_err(), "overflowing F(u) must be rejected");
    }

    #[test]
    fn clip_freezes_outside_the_radius() {
        let gl = SourceSpec::ginzburg_landau();
        let c = clip(&gl, 1.0).unwrap();
        // outside: frozen at F(1) = 0
        assert_eq!(c.eval(&[], 0.0, 2.0).unwrap(), 0.0);
        assert_eq!(c.eval(&[], 0.0, -3.5).unwrap(), 0.0, "F(-1) = 0 as well");
        // inside: identical to the base
        for &u in &[-1.0, -0.73, 0.0, 0.31, 1.0] {
            assert_eq!(
                c.eval(&[], 0.0, u).unwrap(),
                gl.eval(&[], 0.0, u).unwrap(),
                "clip must be exact inside [-R, R] (u = {u})"
            );
        }
        assert!(clip(&gl, 0.0).is_err());
        assert!(clip(&gl, -2.0).is_err());
        assert!(
            matches!(clip(&SourceSpec::cube_root(), 1.0), Err(Error::NotLocallyLipschitz(_))),
            "no finite Lipschitz constant near zero, clipping must refuse"
        );
    }

    #[test]
    fn registered_lipschitz_constants() {
        let gl = SourceSpec::ginzburg_landau();
        let b1 = lipschitz_bound(&gl, 1.0).unwrap();
        assert!(b1.certified);
        assert_eq!(b1.k_r, 4.0, "1 + 3 R^2 at R = 1");
        let b2 = lipschitz_bound(&gl, 2.0).unwrap();
        assert_eq!(b2.k_r, 13.0, "1 + 3 R^2 at R = 2");
        let lin = SourceSpec::linear(1.0);
        assert_eq!(lipschitz_bound(&lin, 7.0).unwrap().k_r, 1.0);
        assert_eq!(lipschitz_bound(&lin, 0.01).unwrap().k_r, 1.0);
    }

    #[test]
    fn numeric_lipschitz_estimate_diverges_for_the_odd_root() {
        let cr = SourceSpec::cube_root();
        let wide = lipschitz_bound(&cr, 1e-1).unwrap();
        let tight = lipschitz_bound(&cr, 1e-4).unwrap();
        assert!(!wide.certified && !tight.certified);
        assert_eq!(wide.padded, 10.0 * wide.k_r, "estimates carry the 10x pad");
        assert!(
            tight.k_r > 10.0 * wide.k_r,
            "difference quotients near zero must blow up: {} vs {}",
            tight.k_r,
            wide.k_r
        );
    }

    #[test]
    fn clipped_source_satisfies_its_lipschitz_constant() {
        // Exhaustive randomized check: 1e5 random pairs, zero violations.
        let c = clip(&SourceSpec::ginzburg_landau(), 1.3).unwrap();
        let k = c.lipschitz().k_r;
        let mut rng = crate::stochastic::substream(5, crate::stochastic::StreamPurpose::FieldDraw, 0);
        for _ in 0..100_000 {
            let u = rng.gen_range(-6.0..6.0);
            let v = rng.gen_range(-6.0..6.0);
            let fu = c.eval(&[], 0.0, u).unwrap();
            let fv = c.eval(&[], 0.0, v).unwrap();
            assert!(
                (fu - fv).abs() <= k * (u - v).abs() + 1e-12,
                "Lipschitz violation at ({u}, {v}): |dF| = {} > {k} |du| = {}",
                (fu - fv).abs(),
                k * (u - v).abs()
            );
        }
    }

    #[test]
    fn lipschitz_constant_is_monotone_in_radius() {
        let gl = SourceSpec::ginzburg_landau();
        let fk = SourceSpec::logistic_constant(0.8, 1.2);
        let mut prev_gl = 0.0;
        let mut prev_fk = 0.0;
        for i in 1..=20 {
            let r = 0.25 * i as f64;
            let kg = lipschitz_bound(&gl, r).unwrap().k_r;
            let kf = lipschitz_bound(&fk, r).unwrap().k_r;
            assert!(kg >= prev_gl && kf >= prev_fk, "K_R must not decrease with R");
            prev_gl = kg;
            prev_fk = kf;
        }
    }

    #[test]
    fn spectral_source_multiplier_and_errors() {
        let basis = basis_1d(32, 4);
        let e1 = SpectralField::basis_vector(&basis, 1).unwrap();
        let f0 = spectral_f0(&e1, 1.0).unwrap();
        // Frozen oracle: e^{-1}/2.
        assert!(
            (f0.coeffs()[0] - 0.18393972058572117).abs() < 1e-16,
            "multiplier on mode 1 is e^{{-1}}/2, got {}",
            f0.coeffs()[0]
        );
        let zero = spectral_f0(&SpectralField::zeros(&basis), 1.0).unwrap();
        assert!(zero.coeffs().iter().all(|&c| c == 0.0));

        let spec = SourceSpec::spectral_diagonal(1.0).unwrap();
        assert!(matches!(spec.eval(&[], 0.0, 1.0), Err(Error::NonPointwiseSource)));
        let via_field = apply_to_field(&spec, &e1, 0.3).unwrap();
        assert_eq!(via_field.coeffs(), f0.coeffs());

        // 2-d domains are out of scope for this diagonal source.
        let basis2 = build_basis(&DomainSpec::square(16).unwrap(), 3).unwrap();
        let f2 = SpectralField::basis_vector(&basis2, 1).unwrap();
        assert!(spectral_f0(&f2, 1.0).is_err());
    }

    #[test]
    fn spectral_source_contracts_with_its_operator_norm() {
        let basis = basis_1d(64, 12);
        let mut rng = crate::stochastic::substream(9, crate::stochastic::StreamPurpose::FieldDraw, 1);
        let k = spectral_f0_lipschitz(basis.lambda_min(), 1.0);
        for _ in 0..50 {
            let v = SpectralField::from_coeffs(
                &basis,
                (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let w = SpectralField::from_coeffs(
                &basis,
                (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let dv = norm(&v.sub(&w).unwrap(), NormKind::L2).unwrap();
            let df = norm(
                &spectral_f0(&v, 1.0).unwrap().sub(&spectral_f0(&w, 1.0).unwrap()).unwrap(),
                NormKind::L2,
            )
            .unwrap();
            assert!(
                df <= k * dv + 1e-15,
                "diagonal source must contract by its largest multiplier {k}: {df} vs {dv}"
            );
        }
    }

    #[test]
    fn pointwise_application_matches_trigonometric_identity() {
        // u = c e_1 under u - u^3: the cubic folds into modes 1 and 3 with
        // coefficients c - 3c^3/(2 pi) and +c^3/(2 pi) (sin^3 identity).
        let basis = basis_1d(64, 8);
        let c = 0.3;
        let u = SpectralField::from_amplitudes(&basis, &[(1, c)]).unwrap();
        let f = apply_to_field(&SourceSpec::ginzburg_landau(), &u, 0.0).unwrap();
        assert!(
            (f.coeffs()[0] - 0.28710844960955645).abs() < 1e-13,
            "mode-1 coefficient {} vs frozen 0.28710844960955645",
            f.coeffs()[0]
        );
        assert!(
            (f.coeffs()[2] - 0.004297183463481174).abs() < 1e-13,
            "mode-3 coefficient {} vs frozen 0.004297183463481174",
            f.coeffs()[2]
        );
        for m in [1usize, 3, 4, 5, 6, 7] {
            assert!(
                f.coeffs()[m].abs() < 1e-13,
                "mode {} must stay empty, got {}",
                m + 1,
                f.coeffs()[m]
            );
        }
    }

    #[test]
    fn stepping_closure_smooths_only_the_stiff_source() {
        let gl = SourceSpec::ginzburg_landau();
        let step = gl.stepping_closure().unwrap();
        assert_eq!(step(&[], 0.0, 0.5), gl.eval(&[], 0.0, 0.5).unwrap());

        let cr = SourceSpec::cube_root();
        let step = cr.stepping_closure().unwrap();
        // Away from zero the smoothing is invisible at double precision...
        assert!((step(&[], 0.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((step(&[], 0.0, -8.0) + 2.0).abs() < 1e-10);
        // ...at zero the slope is finite instead of infinite.
        let h = 1e-12;
        let slope = (step(&[], 0.0, h) - step(&[], 0.0, 0.0)) / h;
        assert!(slope.is_finite() && slope > 0.0);
        assert_eq!(step(&[], 0.0, 0.0), 0.0);
    }

    #[test]
    fn structural_check_accepts_the_odd_root() {
        let cr = SourceSpec::cube_root();
        let consts = cr.structural_constants().unwrap();
        let report = verify_structural(&cr, 10.0, consts).unwrap();
        assert!(report.pass, "odd root must satisfy its constants: {}", report.verdict());
        assert!(!report.degenerate);
        assert!(report.monotone_margin.0 >= 0.0, "monotone increasing means gamma_bar = 0 works");
    }

    #[test]
    fn structural_check_catches_the_cubic_growth_violation() {
        // The unclipped bistable cubic grows like u^3; with p - 1 < 3 the
        // growth condition must fail and name a witness far from 0. The other
        // constants are chosen slack enough that growth is the only failure.
        let gl = SourceSpec::ginzburg_landau();
        let bad = StructuralConstants { p: 2.0, c1: 0.1, c1_prime: 700.0, c2: 1.0, gamma_bar: 100.0 };
        let report = verify_structural(&gl, 5.0, bad).unwrap();
        assert!(!report.pass);
        assert!(report.growth_margin.0 < 0.0, "growth margin must go negative");
        assert!(report.verdict().contains("growth"), "verdict: {}", report.verdict());
        assert!(
            report.growth_margin.1.abs() > 2.0,
            "witness should sit in the cubic-dominated region, got {}",
            report.growth_margin.1
        );
    }

    #[test]
    fn structural_check_accepts_the_clipped_range_constants() {
        // On [-1, 1] the bistable cubic satisfies the conditions with
        // gamma_bar = max(0, 3R^2 - 1) = 2, p = 2, c1 = c1' = c2 = 1.
        let gl = SourceSpec::ginzburg_landau();
        let consts = StructuralConstants { p: 2.0, c1: 1.0, c1_prime: 1.0, c2: 1.0, gamma_bar: 2.0 };
        let report = verify_structural(&gl, 1.0, consts).unwrap();
        assert!(report.pass, "{}", report.verdict());
    }

    #[test]
    fn structural_check_flags_degenerate_constants() {
        let zero = SourceSpec::zero();
        let consts = StructuralConstants { p: 1.0, c1: 0.0, c1_prime: 0.0, c2: 1.0, gamma_bar: 0.0 };
        let report = verify_structural(&zero, 1.0, consts).unwrap();
        assert!(report.degenerate);
        assert!(!report.pass, "degenerate constants cannot certify anything");
        assert!(report.verdict().contains("degenerate"));
    }

    #[test]
    fn logistic_grid_coefficients_are_read_at_nodes() {
        let basis = basis_1d(32, 4);
        let gamma = GridField::from_fn(&basis, |x| 1.0 + 0.5 * (x[0] / std::f64::consts::PI));
        let mu = GridField::from_fn(&basis, |_| 2.0);
        let fk = logistic_from_grids_helper(&gamma, &mu);
        let domain = basis.domain();
        // At an exact node the lookup is exact.
        let x0 = domain.coords(10);
        let g10 = gamma.values()[10];
        let got = fk.eval(&x0, 0.0, 3.0).unwrap();
        assert!(
            (got - (g10 * 9.0 - 2.0 * 3.0)).abs() < 1e-14,
            "grid-coefficient source at node 10: {got}"
        );
        assert!(fk.is_x_dependent());
        // The registered constant uses the supremum over the stored nodes.
        let sup_gamma = gamma.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let kr = lipschitz_bound(&fk, 2.0).unwrap();
        assert!(kr.certified && (kr.k_r - (2.0 * sup_gamma * 2.0 + 2.0)).abs() < 1e-12);
    }

    fn logistic_from_grids_helper(gamma: &GridField, mu: &GridField) -> SourceSpec {
        SourceSpec::logistic_from_grids(gamma, mu).unwrap()
    }
}
