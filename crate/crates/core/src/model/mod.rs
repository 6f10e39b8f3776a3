//! The abstract mode-indexed system and its concrete instances.
//!
//! Each mode `k` carries an event rate `λ_k`, a flip probability `p_k`, a
//! table of branching masses `q_{k,l,m}` over pairs `l + m = k`, and the death
//! probability `d_k = 1 - p_k - q_k`. Masses are only summed over pairs inside
//! the truncation box, so the tree process is exact for the truncated system
//! that the deterministic solvers integrate.

mod builders;
mod diagnostics;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

pub use builders::*;
pub use diagnostics::{small_data_global_check, validate, SmallDataCheck, SystemDiagnostics};

use crate::error::{Error, Result};
use crate::modes::{ModeIndex, TruncationBox, MAX_DIM};
use crate::value::{CVec, MAX_R};

/// Target death probability used when suggesting a branching constant.
pub const SUGGESTED_MIN_DEATH: f64 = 0.05;

/// The bilinear action `B_{k,l,m}` attached to one branching pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BilinearOp {
    /// `B(x, y) = x y` for `r = 1`.
    Product,
    /// `B(x, y) = sign · x y` for `r = 1`, `sign = ±1`.
    Signed(f64),
    /// `B(x, y) = -i (x · e) y` with a real unit direction `e` (Burgers).
    Advection { direction: [f64; MAX_DIM] },
}

impl BilinearOp {
    #[inline]
    pub fn apply(&self, x: &CVec, y: &CVec) -> CVec {
        match self {
            BilinearOp::Product => CVec::scalar(x.0[0] * y.0[0]),
            BilinearOp::Signed(s) => CVec::scalar(x.0[0] * y.0[0] * *s),
            BilinearOp::Advection { direction } => {
                let proj = x.dot_real(direction);
                y.scale(Complex64::new(0.0, -1.0) * proj)
            }
        }
    }

    /// Whether `|B(x, y)| = |x||y|` holds identically for values in `C^r`.
    pub fn preserves_norm(&self, r: usize) -> bool {
        match self {
            BilinearOp::Product | BilinearOp::Signed(_) => true,
            BilinearOp::Advection { .. } => r == 1,
        }
    }
}

/// One positive-mass entry of a mode's branching table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEntry {
    /// Dense index of the first offspring mode `l`.
    pub l: u32,
    /// Dense index of the second offspring mode `m`.
    pub m: u32,
    pub mass: f64,
    /// Upper end of this entry's slice of `[0, 1)`; entries follow the flip
    /// slice `[0, p_k)` in lexicographic pair order.
    pub upper: f64,
    pub op: BilinearOp,
}

/// Un-normalized branching entry handed to [`AbstractSystem::from_parts`]:
/// the actual mass is `weight / C_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawBranch {
    pub l: ModeIndex,
    pub m: ModeIndex,
    pub weight: f64,
    pub op: BilinearOp,
}

/// Time-dependent source term before the per-mode rescaling into `γ_k`.
#[derive(Clone)]
pub enum ForcingSource {
    Zero,
    /// Constant in time, one value per mode in box order.
    Steady(Vec<CVec>),
    /// `f_k(t) = a_k cos(ω t)`.
    Oscillating { amplitude: Vec<CVec>, omega: f64 },
    /// Arbitrary `f(mode index, t)` with a declared bound `sup_t |f_k(t)|`.
    Custom {
        f: Arc<dyn Fn(usize, f64) -> CVec + Send + Sync>,
        sup: Vec<f64>,
    },
}

impl fmt::Debug for ForcingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForcingSource::Zero => write!(f, "Zero"),
            ForcingSource::Steady(v) => f.debug_tuple("Steady").field(&v.len()).finish(),
            ForcingSource::Oscillating { omega, .. } => write!(f, "Oscillating(omega={omega})"),
            ForcingSource::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl ForcingSource {
    fn value(&self, idx: usize, t: f64) -> CVec {
        match self {
            ForcingSource::Zero => CVec::ZERO,
            ForcingSource::Steady(v) => v[idx],
            ForcingSource::Oscillating { amplitude, omega } => amplitude[idx] * (omega * t).cos(),
            ForcingSource::Custom { f, .. } => f(idx, t),
        }
    }

    fn sup(&self, idx: usize) -> f64 {
        match self {
            ForcingSource::Zero => 0.0,
            ForcingSource::Steady(v) => v[idx].norm(),
            ForcingSource::Oscillating { amplitude, .. } => amplitude[idx].norm(),
            ForcingSource::Custom { sup, .. } => sup[idx],
        }
    }

    fn len(&self) -> Option<usize> {
        match self {
            ForcingSource::Zero => None,
            ForcingSource::Steady(v) => Some(v.len()),
            ForcingSource::Oscillating { amplitude, .. } => Some(amplitude.len()),
            ForcingSource::Custom { sup, .. } => Some(sup.len()),
        }
    }
}

/// How a source term is turned into `γ_k`.
#[derive(Debug, Clone)]
pub enum GammaScaling {
    /// `γ_k = f_k`.
    Identity,
    /// `γ_k = c_k f_k / d_k` (the recastings divide by the death probability).
    OverDeath(Vec<f64>),
}

/// Everything needed to assemble an [`AbstractSystem`].
#[derive(Debug, Clone)]
pub struct SystemParts {
    pub name: String,
    pub modes: TruncationBox,
    pub r: usize,
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
    pub branches: Vec<Vec<RawBranch>>,
    pub c_f: f64,
    pub c_b: f64,
    pub chi0: Vec<CVec>,
    pub forcing: ForcingSource,
    pub gamma_scaling: GammaScaling,
    /// Factor `χ_k = weight_k u_k` relating the weighted unknown to the
    /// physical Fourier coefficient; all ones for systems posed directly.
    pub weights: Vec<f64>,
}

/// One mode-indexed system, immutable once built.
#[derive(Debug, Clone)]
pub struct AbstractSystem {
    name: String,
    bx: TruncationBox,
    modes: Vec<ModeIndex>,
    r: usize,
    lambda: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    d: Vec<f64>,
    branches: Vec<Vec<BranchEntry>>,
    c_f: f64,
    c_b: f64,
    chi0: Vec<CVec>,
    forcing: ForcingSource,
    gamma_scale: Vec<f64>,
    weights: Vec<f64>,
    hermitian_data: bool,
}

impl AbstractSystem {
    pub fn from_parts(parts: SystemParts) -> Result<Self> {
        let modes = parts.modes.modes();
        let n = modes.len();
        let check_len = |what: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(Error::InvalidModel(format!("{what} has {len} entries for {n} modes")));
            }
            Ok(())
        };
        check_len("lambda", parts.lambda.len())?;
        check_len("p", parts.p.len())?;
        check_len("branches", parts.branches.len())?;
        check_len("chi0", parts.chi0.len())?;
        check_len("weights", parts.weights.len())?;
        if let Some(len) = parts.forcing.len() {
            check_len("forcing", len)?;
        }
        if parts.r == 0 || parts.r > MAX_R {
            return Err(Error::InvalidModel(format!("value dimension r = {} unsupported", parts.r)));
        }
        if !(parts.c_f >= 0.0 && parts.c_b > 0.0) {
            return Err(Error::InvalidModel(format!(
                "constants must satisfy C_f >= 0, C_b > 0 (C_f = {}, C_b = {})",
                parts.c_f, parts.c_b
            )));
        }
        for (k, &lam) in modes.iter().zip(&parts.lambda) {
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(Error::InvalidModel(format!("rate at mode {k} must be positive, got {lam}")));
            }
        }
        for (k, &p) in modes.iter().zip(&parts.p) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidModel(format!("flip probability at mode {k} is {p}, outside [0, 1]")));
            }
        }

        // Raw (C_b-free) branching totals, used both for d_k and for the
        // suggested constant when some d_k is negative.
        let raw_totals: Vec<f64> = parts
            .branches
            .iter()
            .map(|row| row.iter().map(|b| b.weight).sum())
            .collect();
        let suggestion = suggest_c_b(&parts.p, &raw_totals);

        let mut q = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut tables = Vec::with_capacity(n);
        for (i, row) in parts.branches.iter().enumerate() {
            let k = modes[i];
            let mut upper = parts.p[i];
            let mut table = Vec::with_capacity(row.len());
            for b in row {
                if !(b.weight >= 0.0 && b.weight.is_finite()) {
                    return Err(Error::InvalidModel(format!("negative or non-finite branch mass at mode {k}")));
                }
                if b.l.add(&b.m) != k {
                    return Err(Error::InvalidModel(format!("pair {} + {} does not sum to {k}", b.l, b.m)));
                }
                if b.weight == 0.0 {
                    continue;
                }
                let (Some(l), Some(m)) = (parts.modes.index_of(&b.l), parts.modes.index_of(&b.m)) else {
                    return Err(Error::InvalidModel(format!("pair ({}, {}) leaves the box", b.l, b.m)));
                };
                let mass = b.weight / parts.c_b;
                upper += mass;
                table.push(BranchEntry {
                    l: l as u32,
                    m: m as u32,
                    mass,
                    upper,
                    op: b.op,
                });
            }
            q[i] = table.iter().map(|e| e.mass).sum();
            let death = 1.0 - parts.p[i] - q[i];
            if death < -1e-12 {
                return Err(Error::ProbabilityOverflow {
                    mode: k,
                    mass: parts.p[i] + q[i],
                    death,
                    suggested_c_b: suggestion,
                });
            }
            d[i] = death.max(0.0);
            tables.push(table);
        }

        let gamma_scale = match &parts.gamma_scaling {
            GammaScaling::Identity => vec![1.0; n],
            GammaScaling::OverDeath(c) => {
                check_len("gamma scaling", c.len())?;
                let mut out = vec![0.0; n];
                for i in 0..n {
                    let f_sup = parts.forcing.sup(i);
                    if d[i] > 0.0 {
                        out[i] = c[i] / d[i];
                    } else if f_sup > 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "mode {} has d_k = 0 but nonzero forcing; increase C_b",
                            modes[i]
                        )));
                    }
                }
                out
            }
        };

        let hermitian_data = is_hermitian(&parts.modes, &modes, |i| parts.chi0[i])
            && match &parts.forcing {
                ForcingSource::Steady(v) | ForcingSource::Oscillating { amplitude: v, .. } => {
                    is_hermitian(&parts.modes, &modes, |i| v[i])
                }
                ForcingSource::Zero => true,
                ForcingSource::Custom { .. } => false,
            };

        Ok(Self {
            name: parts.name,
            bx: parts.modes,
            modes,
            r: parts.r,
            lambda: parts.lambda,
            p: parts.p,
            q,
            d,
            branches: tables,
            c_f: parts.c_f,
            c_b: parts.c_b,
            chi0: parts.chi0,
            forcing: parts.forcing,
            gamma_scale,
            weights: parts.weights,
            hermitian_data,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn truncation(&self) -> &TruncationBox {
        &self.bx
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.modes
    }

    pub fn mode(&self, idx: usize) -> ModeIndex {
        self.modes[idx]
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn index_of(&self, k: &ModeIndex) -> Result<usize> {
        self.bx
            .index_of(k)
            .ok_or_else(|| Error::Domain(format!("mode {k} is not part of system '{}'", self.name)))
    }

    /// Value dimension `r`.
    pub fn r(&self) -> usize {
        self.r
    }

    pub fn lambda(&self, idx: usize) -> f64 {
        self.lambda[idx]
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambda.iter().copied().fold(0.0, f64::max)
    }

    pub fn p(&self, idx: usize) -> f64 {
        self.p[idx]
    }

    pub fn q(&self, idx: usize) -> f64 {
        self.q[idx]
    }

    pub fn d(&self, idx: usize) -> f64 {
        self.d[idx]
    }

    pub fn c_f(&self) -> f64 {
        self.c_f
    }

    pub fn c_b(&self) -> f64 {
        self.c_b
    }

    pub fn branches(&self, idx: usize) -> &[BranchEntry] {
        &self.branches[idx]
    }

    /// Mass `q_{k,l,m}` of a given pair, zero when absent.
    pub fn branch_mass(&self, k: &ModeIndex, l: &ModeIndex, m: &ModeIndex) -> f64 {
        let (Ok(ki), Ok(li), Ok(mi)) = (self.index_of(k), self.index_of(l), self.index_of(m)) else {
            return 0.0;
        };
        self.branches[ki]
            .iter()
            .find(|e| e.l as usize == li && e.m as usize == mi)
            .map_or(0.0, |e| e.mass)
    }

    pub fn chi0(&self, idx: usize) -> CVec {
        self.chi0[idx]
    }

    pub fn chi0_sup(&self) -> f64 {
        self.chi0.iter().map(CVec::norm).fold(0.0, f64::max)
    }

    /// Forcing `γ_k(t)`.
    #[inline]
    pub fn gamma(&self, idx: usize, t: f64) -> CVec {
        let s = self.gamma_scale[idx];
        if s == 0.0 {
            return CVec::ZERO;
        }
        self.forcing.value(idx, t) * s
    }

    pub fn gamma_sup(&self, idx: usize) -> f64 {
        self.forcing.sup(idx) * self.gamma_scale[idx]
    }

    pub fn has_forcing(&self) -> bool {
        !matches!(self.forcing, ForcingSource::Zero)
    }

    /// Factor `w_k` with `χ_k = w_k u_k`.
    pub fn weight(&self, idx: usize) -> f64 {
        self.weights[idx]
    }

    /// True when `χ_{-k}(0) = conj χ_k(0)` (and likewise for tabulated
    /// forcing), i.e. the data come from real fields.
    pub fn hermitian_data(&self) -> bool {
        self.hermitian_data
    }

    /// Dense index of `-k`, if present.
    pub fn mirror(&self, idx: usize) -> Option<usize> {
        self.bx.index_of(&self.modes[idx].neg())
    }

    /// Whether every bilinear map is the plain product on scalars.
    pub fn is_plain_product(&self) -> bool {
        self.r == 1
            && self
                .branches
                .iter()
                .flatten()
                .all(|e| matches!(e.op, BilinearOp::Product))
    }

    /// Whether `|B(x, y)| = |x||y|` holds for every branching pair.
    pub fn preserves_norm(&self) -> bool {
        self.branches.iter().flatten().all(|e| e.op.preserves_norm(self.r))
    }
}

fn suggest_c_b(p: &[f64], raw_totals: &[f64]) -> Option<f64> {
    let mut best: f64 = 0.0;
    for (&pk, &raw) in p.iter().zip(raw_totals) {
        if raw == 0.0 {
            continue;
        }
        let room = 1.0 - SUGGESTED_MIN_DEATH - pk;
        if room <= 0.0 {
            return None;
        }
        best = best.max(raw / room);
    }
    Some(best)
}

fn is_hermitian(bx: &TruncationBox, modes: &[ModeIndex], value: impl Fn(usize) -> CVec) -> bool {
    modes.iter().enumerate().all(|(i, k)| {
        let Some(j) = bx.index_of(&k.neg()) else {
            return false;
        };
        let (a, b) = (value(i), value(j));
        (b - a.conj()).norm() <= 1e-12 * (1.0 + a.norm())
    })
}
