//! Evaluation functionals along a realized tree.
//!
//! All functionals are computed by one reverse sweep over the preorder node
//! array: children always sit after their parent, so by the time a node is
//! visited its children's values are known. No recursion, so deep trees are
//! fine on any thread stack.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::AbstractSystem;
use crate::tree::{Event, RealizedTree};
use crate::value::CVec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub value: CVec,
    pub nodes_visited: usize,
    /// Smallest depth at which level exhaustion replaced a subtree by zero.
    pub pruned_at: Option<u32>,
}

/// How levels are handed down in the pruned functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneVariant {
    /// Flip child and first branch child keep level `n`, the second branch
    /// child gets `n - 1`.
    #[default]
    Asymmetric,
    /// Every child gets `n - 1`.
    Symmetric,
}

/// Scratch buffers reused across many evaluations.
#[derive(Debug, Default)]
pub struct Evaluator {
    values: Vec<CVec>,
    reals: Vec<f64>,
    levels: Vec<i32>,
}

fn check_time(tree: &RealizedTree, t: f64) -> Result<()> {
    if !(t >= 0.0) || t > tree.horizon() {
        return Err(Error::Domain(format!(
            "evaluation time {t} outside [0, {}]",
            tree.horizon()
        )));
    }
    Ok(())
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// The functional `R_t`.
    pub fn evaluate(&mut self, tree: &RealizedTree, t: f64, sys: &AbstractSystem) -> Result<EvalOutcome> {
        check_time(tree, t)?;
        let nodes = tree.nodes();
        self.values.clear();
        self.values.resize(nodes.len(), CVec::ZERO);
        let mut visited = 0;
        for (i, n) in nodes.iter().enumerate().rev() {
            if i > 0 && n.birth >= t {
                continue;
            }
            visited += 1;
            let k = n.mode as usize;
            self.values[i] = if n.death >= t {
                sys.chi0(k)
            } else {
                match n.event {
                    Event::Death => sys.gamma(k, t - n.death),
                    Event::Flip => self.values[n.children[0] as usize] * sys.c_f(),
                    Event::Branch { entry, .. } => {
                        let op = sys.branches(k)[entry as usize].op;
                        let x = &self.values[n.children[0] as usize];
                        let y = &self.values[n.children[1] as usize];
                        op.apply(x, y) * sys.c_b()
                    }
                    Event::BeyondHorizon => unreachable!("alive nodes have death >= horizon >= t"),
                }
            };
        }
        Ok(EvalOutcome {
            value: self.values[0],
            nodes_visited: visited,
            pruned_at: None,
        })
    }

    /// The comparison functional `R̃_t`: moduli of the data and the plain
    /// product in place of every bilinear map.
    pub fn evaluate_comparison(&mut self, tree: &RealizedTree, t: f64, sys: &AbstractSystem) -> Result<f64> {
        check_time(tree, t)?;
        let nodes = tree.nodes();
        self.reals.clear();
        self.reals.resize(nodes.len(), 0.0);
        for (i, n) in nodes.iter().enumerate().rev() {
            if i > 0 && n.birth >= t {
                continue;
            }
            let k = n.mode as usize;
            self.reals[i] = if n.death >= t {
                sys.chi0(k).norm()
            } else {
                match n.event {
                    Event::Death => sys.gamma(k, t - n.death).norm(),
                    Event::Flip => sys.c_f() * self.reals[n.children[0] as usize],
                    Event::Branch { .. } => {
                        sys.c_b() * self.reals[n.children[0] as usize] * self.reals[n.children[1] as usize]
                    }
                    Event::BeyondHorizon => unreachable!("alive nodes have death >= horizon >= t"),
                }
            };
        }
        Ok(self.reals[0])
    }

    /// The level-`n` functional `R_{n,t}`.
    pub fn evaluate_pruned(
        &mut self,
        tree: &RealizedTree,
        level: u32,
        t: f64,
        sys: &AbstractSystem,
        variant: PruneVariant,
    ) -> Result<EvalOutcome> {
        check_time(tree, t)?;
        let nodes = tree.nodes();
        self.levels.clear();
        self.levels.resize(nodes.len(), -1);
        self.levels[0] = level.min(i32::MAX as u32) as i32;
        for (i, n) in nodes.iter().enumerate().skip(1) {
            let parent_level = self.levels[n.parent as usize];
            if parent_level <= 0 || n.birth >= t {
                continue;
            }
            self.levels[i] = match (variant, n.slot) {
                (PruneVariant::Asymmetric, 0 | 1) => parent_level,
                _ => parent_level - 1,
            };
        }
        self.values.clear();
        self.values.resize(nodes.len(), CVec::ZERO);
        let mut visited = 0;
        let mut pruned_at: Option<u32> = None;
        for (i, n) in nodes.iter().enumerate().rev() {
            let lvl = self.levels[i];
            if lvl < 0 {
                continue;
            }
            visited += 1;
            let k = n.mode as usize;
            self.values[i] = if n.death >= t {
                sys.chi0(k)
            } else if lvl == 0 {
                pruned_at = Some(pruned_at.map_or(n.depth, |d| d.min(n.depth)));
                CVec::ZERO
            } else {
                match n.event {
                    Event::Death => sys.gamma(k, t - n.death),
                    Event::Flip => self.values[n.children[0] as usize] * sys.c_f(),
                    Event::Branch { entry, .. } => {
                        let op = sys.branches(k)[entry as usize].op;
                        let x = &self.values[n.children[0] as usize];
                        let y = &self.values[n.children[1] as usize];
                        op.apply(x, y) * sys.c_b()
                    }
                    Event::BeyondHorizon => unreachable!("alive nodes have death >= horizon >= t"),
                }
            };
        }
        Ok(EvalOutcome {
            value: self.values[0],
            nodes_visited: visited,
            pruned_at,
        })
    }
}

pub fn evaluate(tree: &RealizedTree, t: f64, sys: &AbstractSystem) -> Result<EvalOutcome> {
    Evaluator::new().evaluate(tree, t, sys)
}

pub fn evaluate_comparison(tree: &RealizedTree, t: f64, sys: &AbstractSystem) -> Result<f64> {
    Evaluator::new().evaluate_comparison(tree, t, sys)
}

pub fn evaluate_pruned(
    tree: &RealizedTree,
    level: u32,
    t: f64,
    sys: &AbstractSystem,
    variant: PruneVariant,
) -> Result<EvalOutcome> {
    Evaluator::new().evaluate_pruned(tree, level, t, sys, variant)
}

/// `C_b^{#branches} C_f^{#flips} Π γ(t - τ) Π χ(0)` for scalar product systems.
pub fn evaluate_closed_form(tree: &RealizedTree, t: f64, sys: &AbstractSystem) -> Result<Complex64> {
    if !sys.is_plain_product() {
        return Err(Error::Domain(
            "closed form needs r = 1 and the plain product at every branch".into(),
        ));
    }
    check_time(tree, t)?;
    let (mut flips, mut branches) = (0i32, 0i32);
    let mut prod = Complex64::new(1.0, 0.0);
    for (i, n) in tree.nodes().iter().enumerate() {
        if i > 0 && n.birth >= t {
            continue;
        }
        let k = n.mode as usize;
        if n.death >= t {
            prod *= sys.chi0(k).0[0];
            continue;
        }
        match n.event {
            Event::Death => prod *= sys.gamma(k, t - n.death).0[0],
            Event::Flip => flips += 1,
            Event::Branch { .. } => branches += 1,
            Event::BeyondHorizon => unreachable!("alive nodes have death >= horizon >= t"),
        }
    }
    Ok(prod * sys.c_b().powi(branches) * sys.c_f().powi(flips))
}
