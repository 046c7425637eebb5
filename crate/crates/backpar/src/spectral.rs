//! Dirichlet sine eigenbasis on rectangular boxes, spectral and grid fields,
//! the transforms between them, and the diagonal operators the reconstruction
//! methods are built from.
//!
//! On `(0, L_1) x ... x (0, L_d)` the negative Dirichlet Laplacian has
//! eigenfunctions `phi_j(x) = prod_a sqrt(2/L_a) sin(j_a pi x_a / L_a)` with
//! eigenvalues `lambda_j = sum_a (j_a pi / L_a)^2`. Everything the solvers
//! need is diagonal here, so the spectral coefficient vector is the source of
//! truth; grids exist only to evaluate pointwise nonlinearities. Transforms
//! use discrete sine orthogonality on the uniform interior grid, which is
//! exact (to rounding) for in-band fields.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 2;

/// Rectangular box with a uniform interior grid (homogeneous Dirichlet walls).
///
/// Interior nodes along axis `a` sit at `x_i = (i+1) h_a`, `h_a = L_a/(n_a+1)`,
/// `i = 0..n_a-1`; the boundary nodes `0` and `L_a` are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    lengths: Vec<f64>,
    grid: Vec<usize>,
}

impl DomainSpec {
    pub fn new(lengths: &[f64], grid: &[usize]) -> Result<Self> {
        let dim = lengths.len();
        if dim == 0 || dim > MAX_DIM || grid.len() != dim {
            return Err(Error::Dimension(if grid.len() != dim { grid.len() } else { dim }));
        }
        for &l in lengths {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Length(l));
            }
        }
        for &n in grid {
            if n < 4 {
                return Err(Error::Grid(n));
            }
        }
        Ok(Self { lengths: lengths.to_vec(), grid: grid.to_vec() })
    }

    /// `(0, pi)` with `n` interior points.
    pub fn interval(n: usize) -> Result<Self> {
        Self::new(&[std::f64::consts::PI], &[n])
    }

    /// `(0, pi)^2` with `n` interior points per axis.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(&[std::f64::consts::PI, std::f64::consts::PI], &[n, n])
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    /// Total number of interior grid nodes.
    pub fn grid_len(&self) -> usize {
        self.grid.iter().product()
    }

    /// Grid spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / (self.grid[axis] + 1) as f64
    }

    /// Volume of one grid cell (product of spacings); the quadrature weight.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Largest per-axis mode index the grid can carry with the anti-aliasing
    /// margin `n >= 2j + 2`.
    pub fn mode_capacity(&self, axis: usize) -> usize {
        (self.grid[axis] - 2) / 2
    }

    /// Coordinates of the interior node with flat index `flat`
    /// (axis 0 is the slow index).
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![(flat + 1) as f64 * self.spacing(0)],
            2 => {
                let n1 = self.grid[1];
                let i0 = flat / n1;
                let i1 = flat % n1;
                vec![
                    (i0 + 1) as f64 * self.spacing(0),
                    (i1 + 1) as f64 * self.spacing(1),
                ]
            }
            _ => unreachable!("dimension checked at construction"),
        }
    }
}

/// The first `len` Dirichlet eigenpairs on a domain, sorted by ascending
/// eigenvalue with lexicographic tie-breaking on the index tuple.
#[derive(Debug)]
pub struct EigenBasis {
    domain: DomainSpec,
    /// Per-mode 1-based per-axis indices, `modes[m].len() == domain.dim()`.
    modes: Vec<Vec<usize>>,
    /// Ascending eigenvalues, `eigenvalues[m]` belongs to `modes[m]`.
    eigenvalues: Vec<f64>,
    /// Lazily built per-axis sine tables (transforms are hot paths).
    tables: std::sync::OnceLock<Vec<Vec<Vec<f64>>>>,
}

/// Build the basis holding the `n_modes` smallest eigenpairs.
///
/// Fails if the grid cannot carry that many modes with the anti-aliasing
/// margin (per-axis index `j` needs `n >= 2j + 2` interior points).
pub fn build_basis(domain: &DomainSpec, n_modes: usize) -> Result<Arc<EigenBasis>> {
    if n_modes == 0 {
        return Err(Error::BandExceedsGrid { requested: 0, capacity: 0 });
    }
    let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
    match domain.dim() {
        1 => {
            let cap = domain.mode_capacity(0);
            for j in 1..=cap {
                candidates.push((axis_eigenvalue(domain, 0, j), vec![j]));
            }
        }
        2 => {
            let (c0, c1) = (domain.mode_capacity(0), domain.mode_capacity(1));
            for j0 in 1..=c0 {
                let l0 = axis_eigenvalue(domain, 0, j0);
                for j1 in 1..=c1 {
                    candidates.push((l0 + axis_eigenvalue(domain, 1, j1), vec![j0, j1]));
                }
            }
        }
        _ => unreachable!(),
    }
    if candidates.len() < n_modes {
        return Err(Error::BandExceedsGrid { requested: n_modes, capacity: candidates.len() });
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("eigenvalues are finite")
            .then_with(|| a.1.cmp(&b.1))
    });
    candidates.truncate(n_modes);
    let (eigenvalues, modes): (Vec<f64>, Vec<Vec<usize>>) = candidates.into_iter().unzip();
    Ok(Arc::new(EigenBasis {
        domain: domain.clone(),
        modes,
        eigenvalues,
        tables: std::sync::OnceLock::new(),
    }))
}

fn axis_eigenvalue(domain: &DomainSpec, axis: usize, j: usize) -> f64 {
    let k = j as f64 * std::f64::consts::PI / domain.lengths()[axis];
    k * k
}

impl EigenBasis {
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eigenvalue(&self, m: usize) -> f64 {
        self.eigenvalues[m]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode(&self, m: usize) -> &[usize] {
        &self.modes[m]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("basis is non-empty")
    }

    /// Two bases are interchangeable when they describe the same domain and
    /// mode list (pointer equality is the fast path).
    pub fn compatible(a: &Arc<EigenBasis>, b: &Arc<EigenBasis>) -> bool {
        Arc::ptr_eq(a, b) || (a.domain == b.domain && a.modes == b.modes)
    }

    /// Position of the mode with the given per-axis indices, if retained.
    pub fn position_of(&self, mode: &[usize]) -> Option<usize> {
        self.modes.iter().position(|m| m.as_slice() == mode)
    }

    /// Normalized per-axis sine tables for the retained band:
    /// `tables[a][j-1][i] = sqrt(2/L_a) * sin(j pi (i+1)/(n_a+1))`.
    /// Built once per basis and cached.
    fn sine_tables(&self) -> &Vec<Vec<Vec<f64>>> {
        self.tables.get_or_init(|| {
            let d = self.domain.dim();
            let mut tables = Vec::with_capacity(d);
            for a in 0..d {
                let n = self.domain.grid()[a];
                let jmax = self.modes.iter().map(|m| m[a]).max().unwrap_or(0);
                let scale = (2.0 / self.domain.lengths()[a]).sqrt();
                let mut axis = Vec::with_capacity(jmax);
                for j in 1..=jmax {
                    let mut row = Vec::with_capacity(n);
                    for i in 0..n {
                        let arg = (j * (i + 1)) as f64 * std::f64::consts::PI / (n + 1) as f64;
                        row.push(scale * arg.sin());
                    }
                    axis.push(row);
                }
                tables.push(axis);
            }
            tables
        })
    }
}

/// A field stored as coefficients against an [`EigenBasis`].
#[derive(Debug, Clone)]
pub struct SpectralField {
    basis: Arc<EigenBasis>,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(basis: &Arc<EigenBasis>) -> Self {
        Self { basis: Arc::clone(basis), coeffs: vec![0.0; basis.len()] }
    }

    /// Wrap an explicit coefficient vector (length must match the basis).
    pub fn from_coeffs(basis: &Arc<EigenBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::BasisMismatch);
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteField(i));
        }
        Ok(Self { basis: Arc::clone(basis), coeffs })
    }

    /// The `k`-th basis vector (1-based position in ascending-eigenvalue order).
    pub fn basis_vector(basis: &Arc<EigenBasis>, k: usize) -> Result<Self> {
        if k == 0 || k > basis.len() {
            return Err(Error::ObservationBand { requested: k, capacity: basis.len() });
        }
        let mut f = Self::zeros(basis);
        f.coeffs[k - 1] = 1.0;
        Ok(f)
    }

    /// Build from `(1-based position, amplitude)` pairs.
    pub fn from_amplitudes(basis: &Arc<EigenBasis>, pairs: &[(usize, f64)]) -> Result<Self> {
        let mut f = Self::zeros(basis);
        for &(k, a) in pairs {
            if k == 0 || k > basis.len() {
                return Err(Error::ObservationBand { requested: k, capacity: basis.len() });
            }
            if !a.is_finite() {
                return Err(Error::NonFiniteField(k - 1));
            }
            f.coeffs[k - 1] += a;
        }
        Ok(f)
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// New field with `c_j -> f(lambda_j, c_j)`.
    pub fn map_modes(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(&c, &l)| f(l, c))
            .collect();
        Self { basis: Arc::clone(&self.basis), coeffs }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_modes(|_, c| s * c)
    }

    /// `self + s * other` (same basis required).
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        if !EigenBasis::compatible(&self.basis, &other.basis) {
            return Err(Error::BasisMismatch);
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| a + s * b)
            .collect();
        Ok(Self { basis: Arc::clone(&self.basis), coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// Re-express on a wider basis over the same domain. Every retained mode
    /// must exist in the target; missing target modes get zero.
    pub fn embed(&self, target: &Arc<EigenBasis>) -> Result<Self> {
        if EigenBasis::compatible(&self.basis, target) {
            return Ok(Self { basis: Arc::clone(target), coeffs: self.coeffs.clone() });
        }
        if self.basis.domain().lengths() != target.domain().lengths()
            || self.basis.domain().dim() != target.domain().dim()
        {
            return Err(Error::BasisMismatch);
        }
        let mut out = Self::zeros(target);
        for (m, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let mode = self.basis.mode(m);
            match target.position_of(mode) {
                Some(p) => out.coeffs[p] = c,
                None => return Err(Error::ModeNotInBasis(mode.to_vec())),
            }
        }
        Ok(out)
    }
}

/// A field sampled on the interior grid of a domain (Dirichlet walls implied).
#[derive(Debug, Clone)]
pub struct GridField {
    basis: Arc<EigenBasis>,
    values: Vec<f64>,
}

impl GridField {
    pub fn from_values(basis: &Arc<EigenBasis>, values: Vec<f64>) -> Result<Self> {
        if values.len() != basis.domain().grid_len() {
            return Err(Error::BasisMismatch);
        }
        Ok(Self { basis: Arc::clone(basis), values })
    }

    /// Sample `f(x)` at every interior node.
    pub fn from_fn(basis: &Arc<EigenBasis>, f: impl Fn(&[f64]) -> f64) -> Self {
        let domain = basis.domain();
        let values = (0..domain.grid_len()).map(|i| f(&domain.coords(i))).collect();
        Self { basis: Arc::clone(basis), values }
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Discrete L2 norm: `sqrt(cell_volume * sum v_i^2)`. Matches the
    /// coefficient L2 norm exactly for in-band fields (discrete Parseval).
    pub fn l2_norm(&self) -> f64 {
        let q = self.basis.domain().cell_volume();
        (q * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// Evaluate a spectral field on its grid.
pub fn synthesize(f: &SpectralField) -> GridField {
    let basis = &f.basis;
    let domain = basis.domain();
    let tables = basis.sine_tables();
    let mut values = vec![0.0; domain.grid_len()];
    match domain.dim() {
        1 => {
            for (m, &c) in f.coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let row = &tables[0][basis.mode(m)[0] - 1];
                for (v, s) in values.iter_mut().zip(row) {
                    *v += c * s;
                }
            }
        }
        2 => {
            let n1 = domain.grid()[1];
            for (m, &c) in f.coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let mode = basis.mode(m);
                let r0 = &tables[0][mode[0] - 1];
                let r1 = &tables[1][mode[1] - 1];
                for (i0, &s0) in r0.iter().enumerate() {
                    let cs0 = c * s0;
                    let chunk = &mut values[i0 * n1..(i0 + 1) * n1];
                    for (v, &s1) in chunk.iter_mut().zip(r1) {
                        *v += cs0 * s1;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    GridField { basis: Arc::clone(basis), values }
}

/// Project a grid field onto the basis by discrete sine quadrature.
///
/// Exact inverse of [`synthesize`] for in-band fields thanks to the
/// orthogonality of the sine tables on the uniform interior grid.
pub fn analyze(g: &GridField) -> SpectralField {
    let basis = &g.basis;
    let domain = basis.domain();
    let tables = basis.sine_tables();
    let q = domain.cell_volume();
    let mut coeffs = vec![0.0; basis.len()];
    match domain.dim() {
        1 => {
            for (m, c) in coeffs.iter_mut().enumerate() {
                let row = &tables[0][basis.mode(m)[0] - 1];
                *c = q * g.values.iter().zip(row).map(|(&v, &s)| v * s).sum::<f64>();
            }
        }
        2 => {
            let n1 = domain.grid()[1];
            for (m, c) in coeffs.iter_mut().enumerate() {
                let mode = basis.mode(m);
                let r0 = &tables[0][mode[0] - 1];
                let r1 = &tables[1][mode[1] - 1];
                let mut acc = 0.0;
                for (i0, &s0) in r0.iter().enumerate() {
                    let chunk = &g.values[i0 * n1..(i0 + 1) * n1];
                    let inner: f64 = chunk.iter().zip(r1).map(|(&v, &s1)| v * s1).sum();
                    acc += s0 * inner;
                }
                *c = q * acc;
            }
        }
        _ => unreachable!(),
    }
    SpectralField { basis: Arc::clone(basis), coeffs }
}

/// Zero out every coefficient whose eigenvalue exceeds `alpha`.
///
/// `alpha = +inf` is the identity; `alpha < lambda_1` is the zero map.
pub fn project_truncate(f: &SpectralField, alpha: f64) -> Result<SpectralField> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::OutOfRange { name: "alpha", value: alpha, range: "[0, +inf]" });
    }
    Ok(f.map_modes(|l, c| if l <= alpha { c } else { 0.0 }))
}

/// `ln(1 + e^y)` without overflow.
fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

/// `ln(beta + e^{-x})` for `x >= 0`, `beta > 0`, without overflow or underflow
/// of the dominant part.
fn ln_beta_plus_exp_neg(x: f64, beta: f64) -> f64 {
    let lnb = beta.ln();
    if x + lnb <= 0.0 {
        // e^{-x} dominates: ln(e^{-x} (1 + beta e^{x}))
        -x + (x + lnb).exp().ln_1p()
    } else {
        // beta dominates: ln(beta (1 + e^{-x}/beta))
        lnb + (-x - lnb).exp().ln_1p()
    }
}

/// Multiplier of the bounded lifting operator:
/// `(1/T) ln(1 + beta e^{M T lambda})`, computed in a form stable for large
/// `M T lambda` (where it equals `M lambda + (1/T) ln(beta + e^{-M T lambda})`).
pub fn q_beta_multiplier(lambda: f64, beta: f64, m_cap: f64, t_horizon: f64) -> f64 {
    softplus(m_cap * t_horizon * lambda + beta.ln()) / t_horizon
}

/// Multiplier of the damped backward generator:
/// `(1/T) ln(beta + e^{-M T lambda})`. Equals `-M lambda` plus the
/// [`q_beta_multiplier`] exactly in real arithmetic.
pub fn p_beta_multiplier(lambda: f64, beta: f64, m_cap: f64, t_horizon: f64) -> f64 {
    ln_beta_plus_exp_neg(m_cap * t_horizon * lambda, beta) / t_horizon
}

/// Largest admissible `beta` for the damped backward generator:
/// `1 - e^{-M T lambda_min}` (exclusive).
pub fn p_beta_admissible_bound(lambda_min: f64, m_cap: f64, t_horizon: f64) -> f64 {
    -(-m_cap * t_horizon * lambda_min).exp_m1()
}

fn check_operator_params(beta: f64, m_cap: f64, t_horizon: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::NonPositive { name: "beta", value: beta });
    }
    if !(m_cap.is_finite() && m_cap > 0.0) {
        return Err(Error::NonPositive { name: "M", value: m_cap });
    }
    if !(t_horizon.is_finite() && t_horizon > 0.0) {
        return Err(Error::NonPositive { name: "T", value: t_horizon });
    }
    Ok(())
}

/// Apply the bounded lifting operator coefficientwise:
/// `c_j -> (1/T) ln(1 + beta e^{M T lambda_j}) c_j`.
pub fn apply_q_beta(f: &SpectralField, beta: f64, m_cap: f64, t_horizon: f64) -> Result<SpectralField> {
    check_operator_params(beta, m_cap, t_horizon)?;
    Ok(f.map_modes(|l, c| q_beta_multiplier(l, beta, m_cap, t_horizon) * c))
}

/// Apply the damped backward generator coefficientwise:
/// `c_j -> (1/T) ln(beta + e^{-M T lambda_j}) c_j`.
///
/// Requires `0 < beta < 1 - e^{-M T lambda_1}`, the range on which the
/// operator norm bound `(1/T) ln(1/beta)` holds.
pub fn apply_p_beta(f: &SpectralField, beta: f64, m_cap: f64, t_horizon: f64) -> Result<SpectralField> {
    check_operator_params(beta, m_cap, t_horizon)?;
    let bound = p_beta_admissible_bound(f.basis.lambda_min(), m_cap, t_horizon);
    if beta >= bound {
        return Err(Error::BetaInadmissible { beta, bound });
    }
    Ok(f.map_modes(|l, c| p_beta_multiplier(l, beta, m_cap, t_horizon) * c))
}

/// Which weighted coefficient norm to take.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// Plain coefficient L2.
    L2,
    /// `sqrt(sum lambda^p c^2)`; order `p >= 0`.
    Sobolev(f64),
    /// `sqrt(sum e^{2 sigma lambda} c^2)`; width `sigma > 0`. This is the
    /// analytic-smoothing class norm `W_sigma`.
    Gevrey(f64),
}

/// `ln(||f||^2)` in the requested norm (`-inf` for the zero field), always
/// finite-safe: Gevrey weights accumulate in log space.
pub fn log_squared_norm(f: &SpectralField, kind: NormKind) -> Result<f64> {
    let lam = f.basis.eigenvalues();
    match kind {
        NormKind::L2 => {
            let s: f64 = f.coeffs.iter().map(|c| c * c).sum();
            Ok(s.ln())
        }
        NormKind::Sobolev(p) => {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::SobolevOrder(p));
            }
            let s: f64 = f
                .coeffs
                .iter()
                .zip(lam)
                .map(|(&c, &l)| l.powf(p) * c * c)
                .sum();
            Ok(s.ln())
        }
        NormKind::Gevrey(sigma) => {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::GevreyWidth(sigma));
            }
            // log-sum-exp over terms 2*sigma*lambda + ln(c^2)
            let mut m = f64::NEG_INFINITY;
            for (&c, &l) in f.coeffs.iter().zip(lam) {
                if c != 0.0 {
                    m = m.max(2.0 * sigma * l + (c * c).ln());
                }
            }
            if m == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            let s: f64 = f
                .coeffs
                .iter()
                .zip(lam)
                .filter(|(&c, _)| c != 0.0)
                .map(|(&c, &l)| (2.0 * sigma * l + (c * c).ln() - m).exp())
                .sum();
            Ok(m + s.ln())
        }
    }
}

/// Weighted coefficient norm. Values beyond f64 range come back as `+inf`
/// (the log-space value is available via [`log_squared_norm`]).
pub fn norm(f: &SpectralField, kind: NormKind) -> Result<f64> {
    Ok((0.5 * log_squared_norm(f, kind)?).exp())
}

/// L2 distance between two fields on compatible bases.
pub fn l2_distance(a: &SpectralField, b: &SpectralField) -> Result<f64> {
    let d = a.sub(b)?;
    norm(&d, NormKind::L2)
}
