//! Monte Carlo estimation of tree functionals.
//!
//! Sample `i` of an estimate at mode `k` always uses the random stream
//! `(k << 40) | i`, and samples are processed in fixed chunks whose partial
//! statistics are merged in index order. Reports are therefore bit-identical
//! for any number of worker threads.

mod lemmas;
pub mod stats;

use std::ops::Range;

use rayon::prelude::*;

pub use lemmas::{branching_property_test, extinction_test, BranchingTestReport, ExtinctionReport};
pub use stats::{z_score, Accumulator, Z99};

use crate::det::SchemeFamily;
use crate::error::{Error, Result};
use crate::eval::{Evaluator, PruneVariant};
use crate::model::AbstractSystem;
use crate::modes::ModeIndex;
use crate::rng::RandomSource;
use crate::tree::{simulate_tree_into, RealizedTree, DEFAULT_NODE_BUDGET};
use crate::value::CVec;

const CHUNK: usize = 1024;
/// Checkpoints below this many samples are too noisy to judge stability.
const MIN_CHECKPOINT: usize = 100;
const STABILITY_SE: f64 = 5.0;
const UNTRUSTED_SHARE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub budget: usize,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

impl McConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            budget: DEFAULT_NODE_BUDGET,
            threads: 0,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    Direct,
    Comparison,
    Pruned { level: u32, variant: PruneVariant },
}

impl Functional {
    pub fn pruned(level: u32) -> Self {
        Functional::Pruned {
            level,
            variant: PruneVariant::Asymmetric,
        }
    }

    /// Level column of report tables: `-1` for unpruned functionals.
    pub fn level_code(&self) -> i64 {
        match self {
            Functional::Pruned { level, .. } => i64::from(*level),
            _ => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub mode: ModeIndex,
    pub t: f64,
    pub functional: Functional,
    pub r: usize,
    pub mean: CVec,
    /// Standard errors of `re_0, im_0, re_1, ...`.
    pub component_se: Vec<f64>,
    /// Largest component standard error.
    pub std_error: f64,
    /// 99% normal confidence radius.
    pub ci99: f64,
    pub n_samples: usize,
    pub n_used: usize,
    pub n_excluded: usize,
    pub max_abs: f64,
    /// False when some decade of samples moved the running mean by more
    /// than five standard errors measured at the start of that decade.
    pub stable: bool,
    /// False when more than 0.1% of the samples exceeded the node budget.
    pub trusted: bool,
}

impl EstimateReport {
    /// Largest component-wise `|z|` against a reference value.
    pub fn max_abs_z(&self, reference: &CVec) -> f64 {
        self.z_scores(reference).into_iter().map(f64::abs).fold(0.0, f64::max)
    }

    pub fn z_scores(&self, reference: &CVec) -> Vec<f64> {
        (0..self.r)
            .flat_map(|c| {
                let (m, r) = (self.mean.0[c], reference.0[c]);
                [
                    z_score(m.re, r.re, self.component_se[2 * c]),
                    z_score(m.im, r.im, self.component_se[2 * c + 1]),
                ]
            })
            .collect()
    }
}

/// Random stream of sample `i` rooted at dense mode `k`.
pub fn sample_stream(k: usize, i: u64) -> u64 {
    ((k as u64) << 40) | i
}

/// Sample indices at which running statistics are snapshotted.
fn checkpoints(n: usize) -> Vec<usize> {
    let mut cps = vec![(n / 10).max(2)];
    let mut c = n / 100;
    while c >= MIN_CHECKPOINT {
        cps.push(c);
        c /= 10;
    }
    cps.sort_unstable();
    cps.dedup();
    cps.retain(|&c| c < n);
    cps
}

/// Chunk ranges covering `0..n` that never straddle a checkpoint.
fn chunk_ranges(n: usize, cps: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for &end in cps.iter().chain(std::iter::once(&n)) {
        while start < end {
            let stop = (start + CHUNK).min(end);
            out.push(start..stop);
            start = stop;
        }
    }
    out
}

/// Map `work` over chunk ranges in parallel, returning results in order.
pub(crate) fn map_chunks<T, F>(ranges: &[Range<usize>], threads: usize, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync,
{
    let run = || ranges.par_iter().map(|r| work(r.clone())).collect::<Result<Vec<T>>>();
    if threads == 0 {
        return run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(run)
}

struct ChunkStats {
    accs: Vec<Accumulator>,
    excluded: usize,
}

/// Estimate several functionals at several times from one set of trees.
/// Reports are ordered by time, then functional.
pub fn estimate_many(
    sys: &AbstractSystem,
    k: &ModeIndex,
    times: &[f64],
    functionals: &[Functional],
    cfg: &McConfig,
) -> Result<Vec<EstimateReport>> {
    let k_idx = sys.index_of(k)?;
    if cfg.n_samples < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", cfg.n_samples)));
    }
    if times.is_empty() || functionals.is_empty() {
        return Err(Error::Domain("nothing to estimate".into()));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("estimation time must be finite and nonnegative, got {t}")));
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let n_targets = times.len() * functionals.len();
    let cps = checkpoints(cfg.n_samples);
    let ranges = chunk_ranges(cfg.n_samples, &cps);
    let chunks = map_chunks(&ranges, cfg.threads, |range| {
        let mut tree = RealizedTree::default();
        let mut stack = Vec::new();
        let mut ev = Evaluator::new();
        let mut accs = vec![Accumulator::default(); n_targets];
        let mut excluded = 0;
        for i in range {
            let src = RandomSource::new(cfg.seed, sample_stream(k_idx, i as u64));
            match simulate_tree_into(sys, k_idx, horizon, &src, cfg.budget, &mut tree, &mut stack) {
                Ok(()) => {}
                Err(Error::BudgetExceeded { .. }) => {
                    excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            for (ti, &t) in times.iter().enumerate() {
                for (fi, f) in functionals.iter().enumerate() {
                    let acc = &mut accs[ti * functionals.len() + fi];
                    match *f {
                        Functional::Direct => acc.push(&ev.evaluate(&tree, t, sys)?.value),
                        Functional::Comparison => acc.push_real(ev.evaluate_comparison(&tree, t, sys)?),
                        Functional::Pruned { level, variant } => {
                            acc.push(&ev.evaluate_pruned(&tree, level, t, sys, variant)?.value)
                        }
                    }
                }
            }
        }
        Ok(ChunkStats { accs, excluded })
    })?;

    let mut total = vec![Accumulator::default(); n_targets];
    let mut snapshots: Vec<Vec<Accumulator>> = Vec::with_capacity(cps.len());
    let mut excluded = 0;
    let mut next_cp = cps.iter().peekable();
    for (range, chunk) in ranges.iter().zip(&chunks) {
        for (acc, part) in total.iter_mut().zip(&chunk.accs) {
            acc.merge(part);
        }
        excluded += chunk.excluded;
        if next_cp.peek() == Some(&&range.end) {
            snapshots.push(total.clone());
            next_cp.next();
        }
    }

    let mut reports = Vec::with_capacity(n_targets);
    for (ti, &t) in times.iter().enumerate() {
        for (fi, f) in functionals.iter().enumerate() {
            let j = ti * functionals.len() + fi;
            let acc = &total[j];
            if acc.n < 2 {
                return Err(Error::EstimationFailed(format!(
                    "only {} of {} samples stayed within the node budget of {}",
                    acc.n, cfg.n_samples, cfg.budget
                )));
            }
            let r = if matches!(f, Functional::Comparison) { 1 } else { sys.r() };
            let component_se = acc.std_errors(r);
            let std_error = component_se.iter().copied().fold(0.0, f64::max);
            let mut history: Vec<&Accumulator> = snapshots.iter().map(|s| &s[j]).collect();
            history.push(acc);
            reports.push(EstimateReport {
                mode: *k,
                t,
                functional: *f,
                r,
                mean: acc.mean(),
                std_error,
                ci99: Z99 * std_error,
                component_se,
                n_samples: cfg.n_samples,
                n_used: acc.n as usize,
                n_excluded: excluded,
                max_abs: acc.max_abs,
                stable: running_mean_stable(&history, r),
                trusted: excluded as f64 <= UNTRUSTED_SHARE * cfg.n_samples as f64,
            });
        }
    }
    Ok(reports)
}

fn running_mean_stable(history: &[&Accumulator], r: usize) -> bool {
    history.windows(2).all(|w| {
        let (early, late) = (w[0], w[1]);
        if early.n < 2 {
            return true;
        }
        let se_early = early.std_errors(r).into_iter().fold(0.0, f64::max);
        let se = if se_early > 0.0 {
            se_early
        } else {
            late.std_errors(r).into_iter().fold(0.0, f64::max)
        };
        let (a, b) = (early.mean(), late.mean());
        (0..r).all(|c| {
            let d = a.0[c] - b.0[c];
            d.re.abs().max(d.im.abs()) <= STABILITY_SE * se
        })
    })
}

fn single(
    sys: &AbstractSystem,
    k: &ModeIndex,
    t: f64,
    f: Functional,
    cfg: &McConfig,
) -> Result<EstimateReport> {
    Ok(estimate_many(sys, k, &[t], &[f], cfg)?.remove(0))
}

/// Estimate of `χ_k(t) = E[R_t]`.
pub fn estimate_mode(sys: &AbstractSystem, k: &ModeIndex, t: f64, cfg: &McConfig) -> Result<EstimateReport> {
    single(sys, k, t, Functional::Direct, cfg)
}

/// Estimate of the level-`n` scheme value `E[R_{n,t}]`.
pub fn estimate_pruned(
    sys: &AbstractSystem,
    k: &ModeIndex,
    t: f64,
    level: u32,
    cfg: &McConfig,
) -> Result<EstimateReport> {
    single(sys, k, t, Functional::pruned(level), cfg)
}

/// Estimate of the comparison value `E[R̃_t]`.
pub fn estimate_comparison(sys: &AbstractSystem, k: &ModeIndex, t: f64, cfg: &McConfig) -> Result<EstimateReport> {
    single(sys, k, t, Functional::Comparison, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRow {
    pub level: u32,
    pub report: EstimateReport,
    pub deterministic: Option<CVec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStudy {
    pub rows: Vec<PruneRow>,
}

impl PruneStudy {
    /// `|mean_{i+1} - mean_i| / sqrt(se_i² + se_{i+1}²)` for consecutive levels.
    pub fn successive_z(&self) -> Vec<(u32, u32, f64)> {
        self.rows
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0].report, &w[1].report);
                let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
                let diff = (a.mean - b.mean).norm();
                (w[0].level, w[1].level, z_score(diff, 0.0, se).abs())
            })
            .collect()
    }
}

/// Pruned estimates at every level in `levels`, all from the same trees,
/// paired with the deterministic scheme when supplied.
pub fn pruning_study(
    sys: &AbstractSystem,
    k: &ModeIndex,
    t: f64,
    levels: &[u32],
    cfg: &McConfig,
    scheme: Option<&SchemeFamily>,
) -> Result<PruneStudy> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("prune levels must be nonempty and strictly increasing".into()));
    }
    let functionals: Vec<Functional> = levels.iter().map(|&n| Functional::pruned(n)).collect();
    let reports = estimate_many(sys, k, &[t], &functionals, cfg)?;
    let k_idx = sys.index_of(k)?;
    let rows = levels
        .iter()
        .zip(reports)
        .map(|(&level, report)| {
            let deterministic = match scheme {
                Some(f) if (level as usize) < f.levels.len() => Some(f.level(level as usize).value_at(k_idx, t)?),
                _ => None,
            };
            Ok(PruneRow {
                level,
                report,
                deterministic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PruneStudy { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det::{logistic_reference, solve_semi_implicit};
    use crate::model::{build_pure_decay, build_scalar_quadratic_ode};

    fn origin() -> ModeIndex {
        ModeIndex::zero(1)
    }

    #[test]
    fn chunking_respects_checkpoints() {
        let cps = checkpoints(100_000);
        assert_eq!(cps, vec![100, 1000, 10_000]);
        let ranges = chunk_ranges(100_000, &cps);
        assert_eq!(ranges.first().unwrap().start, 0);
        assert_eq!(ranges.last().unwrap().end, 100_000);
        for c in cps {
            assert!(ranges.iter().any(|r| r.end == c));
        }
        assert_eq!(checkpoints(5), vec![2]);
    }

    #[test]
    fn pure_decay_estimate() {
        let sys = build_pure_decay(2.0, 1.5, 0.0).unwrap();
        let rep = estimate_mode(&sys, &origin(), 0.5, &McConfig::new(20_000, 3)).unwrap();
        let exact = 1.5 * (-1.0f64).exp();
        assert!(rep.max_abs_z(&CVec::real(exact)) < 4.0);
        assert!(rep.stable && rep.trusted);
    }

    #[test]
    fn zero_data_is_exact() {
        let sys = build_scalar_quadratic_ode(0.0);
        for f in [Functional::Direct, Functional::Comparison, Functional::pruned(3)] {
            let rep = single(&sys, &origin(), 1.0, f, &McConfig::new(1000, 1)).unwrap();
            assert_eq!(rep.mean, CVec::ZERO);
            assert_eq!(rep.std_error, 0.0);
        }
    }

    #[test]
    fn logistic_estimate() {
        let sys = build_scalar_quadratic_ode(0.5);
        let rep = estimate_mode(&sys, &origin(), 1.0, &McConfig::new(20_000, 9)).unwrap();
        let exact = logistic_reference(0.5, 1.0).unwrap();
        assert!(rep.max_abs_z(&CVec::real(exact)) < 4.0, "{rep:?}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let sys = build_scalar_quadratic_ode(0.7);
        let fs = [Functional::Direct, Functional::pruned(2), Functional::Comparison];
        let a = estimate_many(&sys, &origin(), &[0.5, 1.0], &fs, &McConfig::new(5000, 4).with_threads(1)).unwrap();
        let b = estimate_many(&sys, &origin(), &[0.5, 1.0], &fs, &McConfig::new(5000, 4).with_threads(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deep_pruning_equals_direct_sample_for_sample() {
        let sys = build_scalar_quadratic_ode(0.6);
        let cfg = McConfig::new(4000, 12);
        let reps = estimate_many(&sys, &origin(), &[1.0], &[Functional::Direct, Functional::pruned(1_000_000)], &cfg)
            .unwrap();
        assert_eq!(reps[0].mean, reps[1].mean);
        assert_eq!(reps[0].component_se, reps[1].component_se);
    }

    #[test]
    fn level_zero_is_survival() {
        let sys = build_scalar_quadratic_ode(-2.0);
        let rep = estimate_pruned(&sys, &origin(), 1.0, 0, &McConfig::new(20_000, 5)).unwrap();
        assert!(rep.max_abs_z(&CVec::real(-2.0 * (-1.0f64).exp())) < 4.0);
    }

    #[test]
    fn budget_exclusions_are_counted() {
        let sys = build_scalar_quadratic_ode(0.5);
        let rep = estimate_mode(&sys, &origin(), 3.0, &McConfig::new(2000, 2).with_budget(40)).unwrap();
        assert!(rep.n_excluded > 0);
        assert_eq!(rep.n_used + rep.n_excluded, 2000);
        assert!(!rep.trusted);
        let err = estimate_mode(&sys, &origin(), 12.0, &McConfig::new(100, 2).with_budget(1)).unwrap_err();
        assert!(matches!(err, Error::EstimationFailed(_)));
    }

    #[test]
    fn prune_study_tracks_scheme() {
        let sys = build_scalar_quadratic_ode(0.5);
        let scheme = solve_semi_implicit(&sys, 10, 1.0, 1e-3).unwrap();
        let study = pruning_study(&sys, &origin(), 1.0, &[0, 2, 5, 10], &McConfig::new(20_000, 8), Some(&scheme)).unwrap();
        for row in &study.rows {
            let det = row.deterministic.unwrap();
            assert!(row.report.max_abs_z(&det) < 4.0, "level {}", row.level);
        }
        assert_eq!(study.successive_z().len(), 3);
        let one = pruning_study(&sys, &origin(), 1.0, &[0], &McConfig::new(100, 8), None).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(pruning_study(&sys, &origin(), 1.0, &[3, 2], &McConfig::new(100, 8), None).is_err());
    }

    #[test]
    fn heavy_tail_is_flagged() {
        let sys = build_scalar_quadratic_ode(1.5);
        let rep = estimate_comparison(&sys, &origin(), 2.0, &McConfig::new(100_000, 1)).unwrap();
        assert!(!rep.stable || rep.n_excluded > 0, "{rep:?}");
    }
}
