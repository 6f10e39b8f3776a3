//! Statistical checks on the law of the tree process itself.

use super::stats::{bin_of, chi2_sf, contingency_chi2, quantile_bins};
use super::{chunk_ranges, map_chunks, sample_stream, McConfig};
use crate::error::{Error, Result};
use crate::model::{validate, AbstractSystem};
use crate::modes::ModeIndex;
use crate::rng::RandomSource;
use crate::tree::{simulate_tree, Event};

const FRESH_SALT: u64 = 0x0f1e_2d3c_4b5a_6978;
const BRANCH_SALT: u64 = 0x7a3d_91c4_e85b_2f06;
const MAX_ATTEMPTS_FACTOR: usize = 50;
const MIN_BIN_SHARE: f64 = 0.05;
const MIN_STRATUM: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct BranchingTestReport {
    /// Smaller of the two p-values.
    pub p_value: f64,
    /// Subtree-1 counts against fresh trees at the same mode.
    pub p_homogeneity: f64,
    pub chi2_homogeneity: f64,
    pub dof_homogeneity: usize,
    /// Subtree-1 counts against subtree-2 counts, stratified by offspring pair.
    pub p_independence: f64,
    pub chi2_independence: f64,
    pub dof_independence: usize,
    pub n_conditioned: usize,
    pub n_attempts: usize,
    pub n_excluded: usize,
}

#[derive(Clone, Copy)]
struct Conditioned {
    entry: u32,
    a: u64,
    b: u64,
    c: u64,
}

/// Tests the one-step branching property at the root.
///
/// Trees rooted at `k` are grown to `2 * window`. Among those whose root
/// branches before `window`, the number of nodes born within `window` of the
/// branch time is recorded for both subtrees, together with the same count
/// for a fresh tree at the first offspring mode. Counting over a fixed window
/// makes the conditional law free of the branch time.
///
/// With `shared_stream` set, the second subtree and the fresh tree reuse the
/// first subtree's randomness, which must be detected as dependence.
pub fn branching_property_test(
    sys: &AbstractSystem,
    k: &ModeIndex,
    window: f64,
    cfg: &McConfig,
    shared_stream: bool,
) -> Result<BranchingTestReport> {
    let k_idx = sys.index_of(k)?;
    if !(window > 0.0 && window.is_finite()) {
        return Err(Error::Domain(format!("window must be positive, got {window}")));
    }
    if sys.q(k_idx) == 0.0 {
        return Err(Error::Inconclusive(format!("mode {k} never branches")));
    }
    let target = cfg.n_samples;
    let max_attempts = target.saturating_mul(MAX_ATTEMPTS_FACTOR);
    let attempt = |i: usize| -> Result<Option<Option<Conditioned>>> {
        let stream = sample_stream(k_idx, i as u64);
        let mut src = RandomSource::new(cfg.seed ^ BRANCH_SALT, stream);
        if shared_stream {
            src = src.with_shared_children();
        }
        let tree = match simulate_tree(sys, k_idx, 2.0 * window, &src, cfg.budget) {
            Ok(t) => t,
            Err(Error::BudgetExceeded { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let root = tree.root();
        let Event::Branch { l, entry, .. } = root.event else {
            return Ok(Some(None));
        };
        if root.death >= window {
            return Ok(Some(None));
        }
        let a = tree.subtree(1)?.count_born(window)? as u64;
        let b = tree.subtree(2)?.count_born(window)? as u64;
        let fresh_src = if shared_stream {
            src
        } else {
            RandomSource::new(cfg.seed ^ FRESH_SALT, stream)
        };
        let c = match simulate_tree(sys, l as usize, window, &fresh_src, cfg.budget) {
            Ok(t) => t.len() as u64,
            Err(Error::BudgetExceeded { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some(Some(Conditioned { entry, a, b, c })))
    };

    let mut found: Vec<Conditioned> = Vec::with_capacity(target);
    let mut attempts = 0;
    let mut excluded = 0;
    while found.len() < target && attempts < max_attempts {
        let missing = target - found.len();
        let batch = (2 * missing).max(1024).min(max_attempts - attempts);
        let ranges = chunk_ranges(batch, &[]);
        let base = attempts;
        let outcomes = map_chunks(&ranges, cfg.threads, |r| {
            (base + r.start..base + r.end).map(&attempt).collect::<Result<Vec<_>>>()
        })?;
        for o in outcomes.into_iter().flatten() {
            attempts += 1;
            match o {
                None => excluded += 1,
                Some(Some(c)) => {
                    found.push(c);
                    if found.len() == target {
                        break;
                    }
                }
                Some(None) => {}
            }
        }
    }
    if found.len() < target {
        return Err(Error::Inconclusive(format!(
            "only {} of {target} conditioned samples after {attempts} attempts",
            found.len()
        )));
    }

    let pooled: Vec<u64> = found.iter().flat_map(|s| [s.a, s.c]).collect();
    let bins = quantile_bins(&pooled, MIN_BIN_SHARE);
    let mut table = vec![vec![0.0; bins.len()]; 2];
    for s in &found {
        table[0][bin_of(&bins, s.a)] += 1.0;
        table[1][bin_of(&bins, s.c)] += 1.0;
    }
    let (chi2_h, dof_h) = contingency_chi2(&table);

    let mut entries: Vec<u32> = found.iter().map(|s| s.entry).collect();
    entries.sort_unstable();
    entries.dedup();
    let (mut chi2_i, mut dof_i) = (0.0, 0);
    for e in entries {
        let stratum: Vec<&Conditioned> = found.iter().filter(|s| s.entry == e).collect();
        if stratum.len() < MIN_STRATUM {
            continue;
        }
        let a_vals: Vec<u64> = stratum.iter().map(|s| s.a).collect();
        let b_vals: Vec<u64> = stratum.iter().map(|s| s.b).collect();
        let (ba, bb) = (quantile_bins(&a_vals, MIN_BIN_SHARE), quantile_bins(&b_vals, MIN_BIN_SHARE));
        let mut t = vec![vec![0.0; bb.len()]; ba.len()];
        for s in &stratum {
            t[bin_of(&ba, s.a)][bin_of(&bb, s.b)] += 1.0;
        }
        let (x, d) = contingency_chi2(&t);
        chi2_i += x;
        dof_i += d;
    }
    if dof_h == 0 && dof_i == 0 {
        return Err(Error::Inconclusive("subtree counts are degenerate; no test possible".into()));
    }
    let p_h = chi2_sf(chi2_h, dof_h);
    let p_i = chi2_sf(chi2_i, dof_i);
    Ok(BranchingTestReport {
        p_value: p_h.min(p_i),
        p_homogeneity: p_h,
        chi2_homogeneity: chi2_h,
        dof_homogeneity: dof_h,
        p_independence: p_i,
        chi2_independence: chi2_i,
        dof_independence: dof_i,
        n_conditioned: found.len(),
        n_attempts: attempts,
        n_excluded: excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionReport {
    pub horizons: Vec<f64>,
    /// Share of trees with every particle dead before each horizon.
    pub fractions: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Extinction fractions of trees rooted at `k`. Refuses systems that do not
/// satisfy `q_k ≤ d_k, p_k < 1` at every mode.
pub fn extinction_test(
    sys: &AbstractSystem,
    k: &ModeIndex,
    horizons: &[f64],
    cfg: &McConfig,
) -> Result<ExtinctionReport> {
    let k_idx = sys.index_of(k)?;
    if !validate(sys).simple_criterion {
        return Err(Error::Domain(
            "extinction is only guaranteed when q_k <= d_k and p_k < 1 at every mode".into(),
        ));
    }
    if horizons.is_empty() || horizons.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
        return Err(Error::Domain("horizons must be finite and nonnegative".into()));
    }
    let max_h = horizons.iter().copied().fold(0.0, f64::max);
    let ranges = chunk_ranges(cfg.n_samples, &[]);
    let parts = map_chunks(&ranges, cfg.threads, |r| {
        let mut counts = vec![0usize; horizons.len()];
        let mut excluded = 0usize;
        for i in r {
            let src = RandomSource::new(cfg.seed, sample_stream(k_idx, i as u64));
            let tree = match simulate_tree(sys, k_idx, max_h, &src, cfg.budget) {
                Ok(t) => t,
                Err(Error::BudgetExceeded { .. }) => {
                    excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if let Some(te) = tree.extinction_time() {
                for (c, h) in counts.iter_mut().zip(horizons) {
                    if te < *h {
                        *c += 1;
                    }
                }
            }
        }
        Ok((counts, excluded))
    })?;
    let mut counts = vec![0usize; horizons.len()];
    let mut excluded = 0;
    for (c, e) in parts {
        excluded += e;
        for (acc, x) in counts.iter_mut().zip(c) {
            *acc += x;
        }
    }
    let n_used = cfg.n_samples - excluded;
    if n_used == 0 {
        return Err(Error::EstimationFailed("every tree exceeded the node budget".into()));
    }
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n_used as f64).collect();
    let std_errors = fractions
        .iter()
        .map(|f| (f * (1.0 - f) / n_used as f64).sqrt())
        .collect();
    Ok(ExtinctionReport {
        horizons: horizons.to_vec(),
        fractions,
        std_errors,
        n_used,
        n_excluded: excluded,
    })
}
