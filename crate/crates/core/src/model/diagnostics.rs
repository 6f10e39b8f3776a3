use num_complex::Complex64;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::{AbstractSystem, SUGGESTED_MIN_DEATH};
use crate::error::{Error, Result};
use crate::modes::ModeIndex;
use crate::value::CVec;

const PROBES: usize = 1000;
const PROBE_SEED: u64 = 0x5eed_b11e;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDiagnostics {
    /// `|p_k + q_k + d_k - 1|` per mode, in box order.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub min_d: f64,
    pub max_q: f64,
    /// Largest `|B(x, y)| / (|x||y|)` over random probes.
    pub bilinear_max_ratio: f64,
    /// Largest `| |B(x, y)| - |x||y| |` over probes with a nonzero inner
    /// product, for operators that preserve norms.
    pub bilinear_equality_gap: Option<f64>,
    /// `q_k ≤ d_k` and `p_k < 1` at every mode.
    pub simple_criterion: bool,
    pub flip_overflow_modes: Vec<ModeIndex>,
    pub low_death_modes: Vec<ModeIndex>,
    pub hermitian_data: bool,
}

pub fn validate(sys: &AbstractSystem) -> SystemDiagnostics {
    let n = sys.n_modes();
    let residuals: Vec<f64> = (0..n).map(|i| (sys.p(i) + sys.q(i) + sys.d(i) - 1.0).abs()).collect();
    let simple_criterion = (0..n).all(|i| sys.q(i) <= sys.d(i) && sys.p(i) < 1.0);
    let (ratio, gap) = probe_bilinear(sys);
    SystemDiagnostics {
        max_residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
        min_d: (0..n).map(|i| sys.d(i)).fold(f64::INFINITY, f64::min),
        max_q: (0..n).map(|i| sys.q(i)).fold(0.0, f64::max),
        bilinear_max_ratio: ratio,
        bilinear_equality_gap: gap,
        simple_criterion,
        flip_overflow_modes: (0..n).filter(|&i| sys.p(i) >= 1.0).map(|i| sys.mode(i)).collect(),
        low_death_modes: (0..n)
            .filter(|&i| sys.d(i) < SUGGESTED_MIN_DEATH)
            .map(|i| sys.mode(i))
            .collect(),
        hermitian_data: sys.hermitian_data(),
    }
}

fn random_unit(rng: &mut SmallRng, r: usize) -> CVec {
    let mut v = CVec::ZERO;
    for z in v.0.iter_mut().take(r) {
        *z = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    }
    let n = v.norm();
    v * (1.0 / n)
}

fn probe_bilinear(sys: &AbstractSystem) -> (f64, Option<f64>) {
    let entries: Vec<_> = (0..sys.n_modes()).flat_map(|i| sys.branches(i).iter()).collect();
    if entries.is_empty() {
        return (0.0, None);
    }
    let r = sys.r();
    let mut rng = SmallRng::seed_from_u64(PROBE_SEED);
    let mut ratio: f64 = 0.0;
    let mut gap: Option<f64> = None;
    for _ in 0..PROBES {
        let e = entries[rng.random_range(0..entries.len())];
        let scale_x = rng.random_range(0.1..10.0);
        let scale_y = rng.random_range(0.1..10.0);
        let x = random_unit(&mut rng, r) * scale_x;
        let y = random_unit(&mut rng, r) * scale_y;
        let bn = e.op.apply(&x, &y).norm();
        let xy = x.norm() * y.norm();
        ratio = ratio.max(bn / xy);
        if e.op.preserves_norm(r) {
            let g = (bn - xy).abs() / xy;
            gap = Some(gap.map_or(g, |old| old.max(g)));
        }
    }
    (ratio, gap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallDataCheck {
    pub per_mode: Vec<bool>,
    pub overall: bool,
}

/// Sufficient condition for the solution to stay in the `δ`-ball forever:
/// `d_k sup|γ_k| < δ(1 - C_f p_k) - C_b δ² q_k` at every mode and
/// `‖χ(0)‖_∞ ≤ δ`.
pub fn small_data_global_check(sys: &AbstractSystem, delta: f64) -> Result<SmallDataCheck> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let per_mode: Vec<bool> = (0..sys.n_modes())
        .map(|i| {
            let lhs = sys.d(i) * sys.gamma_sup(i);
            let rhs = delta * (1.0 - sys.c_f() * sys.p(i)) - sys.c_b() * delta * delta * sys.q(i);
            lhs < rhs
        })
        .collect();
    let overall = per_mode.iter().all(|&b| b) && sys.chi0_sup() <= delta;
    Ok(SmallDataCheck { per_mode, overall })
}
