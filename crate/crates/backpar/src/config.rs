//! Experiment configuration: a flat key-value text file with sections
//! (TOML), fully validated before any computation starts.  Unknown keys are
//! rejected by name; every effective value — defaults included — can be
//! echoed into report headers for provenance.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evolve::{Coefficient, DEFAULT_STEPS};
use crate::experiments::{
    default_t_list, ManufacturedCase, Method, SmoothnessSpec, DEFAULT_DELTAS, DEFAULT_TRIALS,
};
use crate::sources::SourceSpec;
use crate::spectral::{build_basis, DomainSpec, EigenBasis, SpectralField};

/// Full experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub domain: DomainSection,
    pub case: CaseSection,
    #[serde(default)]
    pub method: Option<MethodSection>,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Spatial discretization of the inversion: grid points per axis and the
/// number of retained eigenmodes.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(default = "one")]
    pub dim: usize,
    /// Axis lengths; defaults to pi per axis.
    #[serde(default)]
    pub lengths: Option<Vec<f64>>,
    #[serde(default = "default_grid")]
    pub grid: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: usize,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self { dim: 1, lengths: None, grid: default_grid(), modes: default_modes() }
    }
}

/// Ground-truth selection: a canned case by name, or an inline description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    /// Canned case name (`cubic` or `odd-root`); overrides the inline keys.
    #[serde(default)]
    pub name: Option<String>,
    /// Initial state as `(1-based mode, amplitude)` pairs.
    #[serde(default)]
    pub u0: Option<Vec<(usize, f64)>>,
    /// Constant diffusion coefficient value.
    #[serde(default)]
    pub coefficient: Option<f64>,
    /// Reaction term: `zero`, `ginzburg-landau`, or `cube-root`.
    #[serde(default)]
    pub source: Option<String>,
    /// Time horizon.
    #[serde(default, rename = "T")]
    pub t_horizon: Option<f64>,
    /// Smoothness order of the final state assumed by parameter rules.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Reference (truth) grid; defaults to twice the inversion grid.
    #[serde(default)]
    pub forward_grid: Option<Vec<usize>>,
    /// Reference time steps; defaults to twice the inversion steps.
    #[serde(default)]
    pub forward_steps: Option<usize>,
    /// Reversed-solve time steps.
    #[serde(default)]
    pub inversion_steps: Option<usize>,
    /// Diffusion cap for the damped reversed solve; defaults to `1.6 / T`.
    #[serde(default)]
    pub m_cap: Option<f64>,
}

/// Inversion method and its parameter-rule inputs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    /// One of `truncation`, `qr-clipped`, `qr-structural`, `naive-backward`,
    /// `observe-only`.
    pub name: String,
    /// Clip radius for locally Lipschitz reactions under the cutoff method.
    #[serde(default = "default_clip_radius")]
    pub clip_radius: f64,
    /// Cutoff-rule exponent `a` (must stay below `2 gamma / d`).
    #[serde(default = "default_a_exp")]
    pub a_exp: f64,
    /// Cutoff-rule exponent `b` (must satisfy `b (a + 1/2)^2 < 1`).
    #[serde(default = "default_b_exp")]
    pub b_exp: f64,
    /// Damping-rule exponent `c` (must stay below `min(1/2, 2 gamma / d)`).
    #[serde(default = "default_c_exp")]
    pub c_exp: f64,
    /// Damping-rule exponent `m` in `(0, 1)`.
    #[serde(default = "default_m_exp")]
    pub m_exp: f64,
    /// Scale constant in the clip-radius growth cap.
    #[serde(default = "default_k_gen")]
    pub k_gen: f64,
    /// Diffusion cap override for the damped reversed solve.
    #[serde(default)]
    pub m_cap: Option<f64>,
}

/// Noise grid and Monte Carlo controls.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Evaluation times; defaults to `{T/4, T/2, 3T/4}`.
    #[serde(default)]
    pub t_list: Option<Vec<f64>>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { deltas: default_deltas(), trials: default_trials(), seed: 0, t_list: None }
    }
}

/// Where artifacts are written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

fn one() -> usize {
    1
}
fn default_grid() -> Vec<usize> {
    vec![64]
}
fn default_modes() -> usize {
    8
}
fn default_clip_radius() -> f64 {
    1.0
}
fn default_a_exp() -> f64 {
    1.0
}
fn default_b_exp() -> f64 {
    0.3
}
fn default_c_exp() -> f64 {
    0.25
}
fn default_m_exp() -> f64 {
    0.9
}
fn default_k_gen() -> f64 {
    0.21
}
fn default_deltas() -> Vec<f64> {
    DEFAULT_DELTAS.to_vec()
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Parse a configuration from text.  Unknown or malformed keys are rejected
/// with the offending key named in the message.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

const CANNED_CASES: [&str; 2] = ["cubic", "odd-root"];
const METHOD_NAMES: [&str; 5] =
    ["truncation", "qr-clipped", "qr-structural", "naive-backward", "observe-only"];

impl RunConfig {
    /// Structural validation that needs no computation.  Cross-field rules
    /// that depend on built objects are delegated to the module
    /// preconditions they belong to.
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if d.dim == 0 || d.dim > 2 {
            return Err(Error::Config(format!(
                "[domain] dim must be 1 or 2, got {}",
                d.dim
            )));
        }
        if d.grid.len() != d.dim {
            return Err(Error::Config(format!(
                "[domain] grid must list {} axis value(s), got {}",
                d.dim,
                d.grid.len()
            )));
        }
        if let Some(lengths) = &d.lengths {
            if lengths.len() != d.dim {
                return Err(Error::Config(format!(
                    "[domain] lengths must list {} value(s), got {}",
                    d.dim,
                    lengths.len()
                )));
            }
        }
        if d.modes == 0 {
            return Err(Error::Config("[domain] modes must be positive".to_string()));
        }

        if let Some(name) = &self.case.name {
            if !CANNED_CASES.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "[case] unknown case '{name}'; valid cases: {}",
                    CANNED_CASES.join(", ")
                )));
            }
        } else {
            if self.case.u0.is_none() {
                return Err(Error::Config(
                    "[case] missing required key 'u0' (or select a case by name)".to_string(),
                ));
            }
            if self.case.t_horizon.is_none() {
                return Err(Error::Config(
                    "[case] missing required key 'T' (or select a case by name)".to_string(),
                ));
            }
        }
        if let Some(src) = &self.case.source {
            if !["zero", "ginzburg-landau", "cube-root"].contains(&src.as_str()) {
                return Err(Error::Config(format!(
                    "[case] unknown source '{src}'; valid sources: zero, ginzburg-landau, \
                     cube-root"
                )));
            }
        }

        if let Some(m) = &self.method {
            if !METHOD_NAMES.contains(&m.name.as_str()) {
                return Err(Error::Config(format!(
                    "[method] unknown method '{}'; valid methods: {}",
                    m.name,
                    METHOD_NAMES.join(", ")
                )));
            }
        }

        for &delta in &self.noise.deltas {
            if !(delta.is_finite() && delta >= 0.0) {
                return Err(Error::Config(format!(
                    "[noise] deltas must be finite and nonnegative, got {delta}"
                )));
            }
        }
        if self.noise.deltas.is_empty() {
            return Err(Error::Config("[noise] deltas must not be empty".to_string()));
        }
        if self.noise.trials == 0 {
            return Err(Error::Config("[noise] trials must be positive".to_string()));
        }
        Ok(())
    }

    fn domain_spec(&self, grid: &[usize]) -> Result<DomainSpec> {
        match &self.domain.lengths {
            Some(lengths) => DomainSpec::new(lengths, grid),
            None => {
                let pi_each = vec![std::f64::consts::PI; grid.len()];
                DomainSpec::new(&pi_each, grid)
            }
        }
    }

    /// Basis the reversed solves run on.
    pub fn inversion_basis(&self) -> Result<Arc<EigenBasis>> {
        build_basis(&self.domain_spec(&self.domain.grid)?, self.domain.modes)
    }

    /// Build the manufactured case this configuration describes.
    pub fn build_case(&self) -> Result<ManufacturedCase> {
        if let Some(name) = &self.case.name {
            return match name.as_str() {
                "cubic" => ManufacturedCase::cubic_demo(),
                "odd-root" => ManufacturedCase::odd_root_demo(),
                other => Err(Error::Config(format!(
                    "unknown case '{other}'; valid cases: {}",
                    CANNED_CASES.join(", ")
                ))),
            };
        }
        let u0_pairs = self
            .case
            .u0
            .as_ref()
            .ok_or_else(|| Error::Config("[case] missing required key 'u0'".to_string()))?;
        let t_horizon = self
            .case
            .t_horizon
            .ok_or_else(|| Error::Config("[case] missing required key 'T'".to_string()))?;

        let inversion_basis = self.inversion_basis()?;
        let forward_grid = match &self.case.forward_grid {
            Some(g) => g.clone(),
            None => self.domain.grid.iter().map(|&n| 2 * n).collect(),
        };
        let forward_basis = build_basis(&self.domain_spec(&forward_grid)?, self.domain.modes)?;
        let u0 = SpectralField::from_amplitudes(&forward_basis, u0_pairs)?;

        let source = match self.case.source.as_deref() {
            None | Some("zero") => SourceSpec::zero(),
            Some("ginzburg-landau") => SourceSpec::ginzburg_landau(),
            Some("cube-root") => SourceSpec::cube_root(),
            Some(other) => {
                return Err(Error::Config(format!(
                    "unknown source '{other}'; valid sources: zero, ginzburg-landau, cube-root"
                )))
            }
        };
        let inversion_steps = self.case.inversion_steps.unwrap_or(DEFAULT_STEPS);
        let forward_steps = self.case.forward_steps.unwrap_or(2 * inversion_steps);
        let gamma = self.case.gamma.unwrap_or(1.0);
        let m_cap = self
            .method
            .as_ref()
            .and_then(|m| m.m_cap)
            .or(self.case.m_cap)
            .unwrap_or(1.6 / t_horizon);

        ManufacturedCase::build(
            "inline",
            u0,
            Coefficient::constant(self.case.coefficient.unwrap_or(1.0)),
            source.clone(),
            &source,
            t_horizon,
            forward_steps,
            inversion_basis,
            inversion_steps,
            gamma,
            SmoothnessSpec { beta_smooth: 1.0, r_margin: 0.1, m_cap },
        )
    }

    /// Resolve the method section against a built case.
    pub fn method(&self, case: &ManufacturedCase) -> Result<Method> {
        let m = self.method.as_ref().ok_or_else(|| {
            Error::Config("this command needs a [method] section".to_string())
        })?;
        let m_cap = m.m_cap.or(self.case.m_cap).unwrap_or(case.constants.m_cap);
        match m.name.as_str() {
            "truncation" => Ok(Method::Truncation {
                clip_radius: m.clip_radius,
                a_exp: m.a_exp,
                b_exp: m.b_exp,
            }),
            "qr-clipped" => Ok(Method::QrClipped {
                c_exp: m.c_exp,
                m_exp: m.m_exp,
                k_gen: m.k_gen,
                m_cap,
            }),
            "qr-structural" => Ok(Method::QrStructural {
                c_exp: m.c_exp,
                m_exp: m.m_exp,
                k_gen: m.k_gen,
                m_cap,
            }),
            "naive-backward" => Ok(Method::NaiveBackward),
            "observe-only" => Ok(Method::ObserveOnly { a_exp: m.a_exp, b_exp: m.b_exp }),
            other => Err(Error::Config(format!(
                "unknown method '{other}'; valid methods: {}",
                METHOD_NAMES.join(", ")
            ))),
        }
    }

    /// Evaluation times: the configured list or the standard default.
    pub fn t_list(&self, t_horizon: f64) -> Vec<f64> {
        match &self.noise.t_list {
            Some(ts) => ts.clone(),
            None => default_t_list(t_horizon).to_vec(),
        }
    }

    /// Echo of every effective value — defaults included — as comment
    /// lines, prepended to human-readable report files for provenance.
    pub fn provenance_header(&self) -> String {
        let mut s = String::new();
        s.push_str("# effective configuration\n");
        s.push_str(&format!("# domain.dim = {}\n", self.domain.dim));
        s.push_str(&format!("# domain.grid = {:?}\n", self.domain.grid));
        s.push_str(&format!("# domain.modes = {}\n", self.domain.modes));
        match &self.case.name {
            Some(n) => s.push_str(&format!("# case.name = {n}\n")),
            None => {
                s.push_str("# case = inline\n");
                if let Some(t) = self.case.t_horizon {
                    s.push_str(&format!("# case.T = {t}\n"));
                }
                s.push_str(&format!(
                    "# case.source = {}\n",
                    self.case.source.as_deref().unwrap_or("zero")
                ));
            }
        }
        if let Some(m) = &self.method {
            s.push_str(&format!("# method.name = {}\n", m.name));
            s.push_str(&format!("# method.clip_radius = {}\n", m.clip_radius));
            s.push_str(&format!("# method.a_exp = {}\n", m.a_exp));
            s.push_str(&format!("# method.b_exp = {}\n", m.b_exp));
            s.push_str(&format!("# method.c_exp = {}\n", m.c_exp));
            s.push_str(&format!("# method.m_exp = {}\n", m.m_exp));
            s.push_str(&format!("# method.k_gen = {}\n", m.k_gen));
        }
        s.push_str(&format!("# noise.deltas = {:?}\n", self.noise.deltas));
        s.push_str(&format!("# noise.trials = {}\n", self.noise.trials));
        s.push_str(&format!("# noise.seed = {}\n", self.noise.seed));
        match &self.noise.t_list {
            Some(ts) => s.push_str(&format!("# noise.t_list = {ts:?}\n")),
            None => s.push_str("# noise.t_list = default {T/4, T/2, 3T/4}\n"),
        }
        s.push_str(&format!("# output.dir = {}\n", self.output.dir.display()));
        s
    }
}
