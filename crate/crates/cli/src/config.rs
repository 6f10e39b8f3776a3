use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub lemma: Option<LemmaBlock>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Burgers,
    Ns2dVorticity,
    SurfaceGrowth,
    ScalarOde,
    SingleMode,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: ModelName,
    #[serde(default = "one")]
    pub dim: usize,
    /// Scalar initial value for `scalar-ode` and `single-mode`.
    pub u0: Option<f64>,
    pub lambda: Option<f64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub gamma: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub a3: Option<f64>,
    #[serde(default)]
    pub initial: Option<InitialBlock>,
    #[serde(default)]
    pub forcing: Option<ForcingBlock>,
}

/// Initial data in the weighted variables `χ_k(0)`.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum InitialBlock {
    /// `χ_k(0) = amplitude · exp(i phase · Σ k_j)` on the first component.
    Uniform { amplitude: f64, #[serde(default)] phase: f64 },
    /// Listed modes only; each value is `[re, im]` per component.
    Explicit { modes: Vec<ModeValue> },
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModeValue {
    pub k: Vec<i32>,
    pub value: Vec<[f64; 2]>,
}

/// Physical forcing `f_k(t)`, before the model's `γ` scaling.
#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum ForcingBlock {
    Zero,
    Steady { modes: Vec<ModeValue> },
    Oscillating { omega: f64, modes: Vec<ModeValue> },
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    pub t_final: f64,
    /// Output times; defaults to `[t_final]`.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub k_max: u32,
    #[serde(default)]
    pub exclude_zero: bool,
    pub alpha: Option<f64>,
    #[serde(default = "one_f")]
    pub c_f: f64,
    #[serde(default = "one_f")]
    pub c_b: f64,
    #[serde(default = "one_f")]
    pub lambda0: f64,
    /// Number of semi-implicit levels, `0` to skip the scheme.
    #[serde(default)]
    pub levels: usize,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    /// Ball radius for the small-data global check.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub prune_levels: Vec<u32>,
    /// Root modes; empty means every mode of the box.
    #[serde(default)]
    pub modes: Vec<Vec<i32>>,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            seed: 0,
            budget: default_budget(),
            prune_levels: Vec::new(),
            modes: Vec::new(),
            z_threshold: default_z(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum LemmaBlock {
    Convolution {
        alpha: f64,
        gamma: f64,
        dims: Vec<usize>,
        n_max: u32,
        k_max: u32,
    },
    Branching {
        k: Vec<i32>,
        window: f64,
        #[serde(default)]
        shared_stream: bool,
    },
    Extinction {
        k: Vec<i32>,
        horizons: Vec<f64>,
    },
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_tol() -> f64 {
    cascade_core::det::DEFAULT_PICARD_TOL
}
fn default_max_iter() -> usize {
    200
}
fn default_threshold() -> f64 {
    cascade_core::det::DEFAULT_BLOWUP_THRESHOLD
}
fn default_samples() -> usize {
    100_000
}
fn default_budget() -> usize {
    cascade_core::tree::DEFAULT_NODE_BUDGET
}
fn default_z() -> f64 {
    4.0
}
fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| bad(format!("parse error: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn times(&self) -> Vec<f64> {
        if self.numerics.times.is_empty() {
            vec![self.numerics.t_final]
        } else {
            self.numerics.times.clone()
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// Field checks that need no model construction.
    pub fn check(&self) -> Result<(), CliError> {
        let m = &self.model;
        let n = &self.numerics;
        positive("numerics.t_final", n.t_final)?;
        positive("numerics.dt", n.dt)?;
        positive("numerics.tol", n.tol)?;
        positive("numerics.blowup_threshold", n.blowup_threshold)?;
        positive("numerics.lambda0", n.lambda0)?;
        positive("numerics.c_b", n.c_b)?;
        if !(n.c_f >= 0.0 && n.c_f.is_finite()) {
            return Err(bad(format!("numerics.c_f must be nonnegative, got {}", n.c_f)));
        }
        if n.max_iter == 0 {
            return Err(bad("numerics.max_iter must be at least 1"));
        }
        for &t in &n.times {
            if !(t >= 0.0 && t <= n.t_final) {
                return Err(bad(format!("output time {t} outside [0, t_final]")));
            }
        }
        if let Some(delta) = n.delta {
            positive("numerics.delta", delta)?;
        }
        if !(1..=3).contains(&m.dim) {
            return Err(bad(format!("model.dim must be 1, 2 or 3, got {}", m.dim)));
        }
        let scalar = matches!(m.name, ModelName::ScalarOde | ModelName::SingleMode);
        if scalar {
            if m.u0.is_none() {
                return Err(bad("model.u0 is required for scalar models"));
            }
            if m.initial.is_some() || m.forcing.is_some() {
                return Err(bad("scalar models take u0 (and gamma), not initial/forcing blocks"));
            }
        } else {
            if n.k_max == 0 {
                return Err(bad("numerics.k_max must be at least 1 for lattice models"));
            }
            if n.alpha.is_none() {
                return Err(bad("numerics.alpha is required for lattice models"));
            }
            if m.initial.is_none() {
                return Err(bad("model.initial is required for lattice models"));
            }
            if m.u0.is_some() {
                return Err(bad("model.u0 only applies to scalar models; use model.initial"));
            }
        }
        let sm_only = [("lambda", m.lambda), ("p", m.p), ("q", m.q), ("gamma", m.gamma)];
        if m.name != ModelName::SingleMode {
            if let Some((name, _)) = sm_only.iter().find(|(_, v)| v.is_some()) {
                return Err(bad(format!("model.{name} only applies to single-mode")));
            }
        }
        let sg_only = [("a1", m.a1), ("a2", m.a2), ("a3", m.a3)];
        if m.name == ModelName::SurfaceGrowth {
            if let Some((name, _)) = sg_only.iter().find(|(_, v)| v.is_none()) {
                return Err(bad(format!("model.{name} is required for surface-growth")));
            }
        } else if let Some((name, _)) = sg_only.iter().find(|(_, v)| v.is_some()) {
            return Err(bad(format!("model.{name} only applies to surface-growth")));
        }
        if let Some(InitialBlock::Uniform { amplitude, phase }) = &m.initial {
            if !(amplitude.is_finite() && *amplitude >= 0.0 && phase.is_finite()) {
                return Err(bad("initial amplitude must be nonnegative and finite"));
            }
        }
        let mc = &self.mc;
        if mc.n_samples < 2 {
            return Err(bad("mc.n_samples must be at least 2"));
        }
        if mc.budget == 0 {
            return Err(bad("mc.budget must be positive"));
        }
        if mc.prune_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("mc.prune_levels must be strictly increasing"));
        }
        positive("mc.z_threshold", mc.z_threshold)?;
        if self.output.formats.is_empty() {
            return Err(bad("output.formats must not be empty"));
        }
        match &self.lemma {
            Some(LemmaBlock::Convolution { alpha, gamma, dims, n_max, k_max }) => {
                positive("lemma.alpha", *alpha)?;
                positive("lemma.gamma", *gamma)?;
                if dims.is_empty() || dims.iter().any(|d| !(1..=3).contains(d)) {
                    return Err(bad("lemma.dims must list dimensions in 1..=3"));
                }
                if *n_max == 0 || n_max > k_max {
                    return Err(bad("lemma needs 1 <= n_max <= k_max"));
                }
            }
            Some(LemmaBlock::Branching { window, .. }) => positive("lemma.window", *window)?,
            Some(LemmaBlock::Extinction { horizons, .. }) => {
                if horizons.is_empty() {
                    return Err(bad("lemma.horizons must not be empty"));
                }
                for &h in horizons {
                    positive("lemma horizon", h)?;
                }
            }
            None => {}
        }
        Ok(())
    }
}
