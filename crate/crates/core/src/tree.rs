//! Realized branching trees.
//!
//! A particle at mode `k` waits an `Exp(λ_k)` time, then flips (one child at
//! `k`), branches (children at `l` and `m`), or dies. Only nodes born before
//! the horizon are realized; a node still alive at the horizon is marked
//! [`Event::BeyondHorizon`] and has no children.
//!
//! Nodes are stored in depth-first preorder, so every subtree occupies a
//! contiguous index range and every child comes after its parent.

use std::fmt::{self, Write as _};

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::model::AbstractSystem;
use crate::modes::ModeIndex;
use crate::rng::{NodeKey, RandomSource};

pub const NO_NODE: u32 = u32::MAX;
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Death,
    Flip,
    /// Offspring at dense mode indices `l` (child 1) and `m` (child 2);
    /// `entry` is the position in the parent's branch table.
    Branch { l: u32, m: u32, entry: u32 },
    BeyondHorizon,
}

impl Event {
    pub fn tag(&self) -> &'static str {
        match self {
            Event::Death => "death",
            Event::Flip => "flip",
            Event::Branch { .. } => "branch",
            Event::BeyondHorizon => "alive",
        }
    }
}

/// Path from the root: digit 0 is a flip child, 1 and 2 are branch children.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Label(pub Vec<u8>);

impl Label {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The ancestor `α|_j`.
    pub fn prefix(&self, j: usize) -> Label {
        Label(self.0[..j.min(self.0.len())].to_vec())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for d in &self.0 {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizedNode {
    pub parent: u32,
    /// Digit of this node in its parent's label set (0 for the root).
    pub slot: u8,
    pub mode: u32,
    pub birth: f64,
    pub death: f64,
    pub event: Event,
    /// Flip child in slot 0, branch children in slots 0 and 1.
    pub children: [u32; 2],
    pub depth: u32,
}

#[derive(Debug, Clone, Default)]
pub struct RealizedTree {
    root_mode: u32,
    horizon: f64,
    nodes: Vec<RealizedNode>,
}

impl RealizedTree {
    pub fn root_mode(&self) -> usize {
        self.root_mode as usize
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nodes(&self) -> &[RealizedNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &RealizedNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &RealizedNode {
        &self.nodes[0]
    }

    pub fn label(&self, i: usize) -> Label {
        let mut digits = Vec::new();
        let mut cur = i;
        while cur != 0 {
            let n = &self.nodes[cur];
            digits.push(n.slot);
            cur = n.parent as usize;
        }
        digits.reverse();
        Label(digits)
    }

    /// Number of nodes with birth time `≤ s`.
    pub fn count_born(&self, s: f64) -> Result<usize> {
        if s > self.horizon {
            return Err(Error::Domain(format!("time {s} exceeds the tree horizon {}", self.horizon)));
        }
        Ok(self.nodes.iter().filter(|n| n.birth <= s).count())
    }

    /// Time after which no realized particle is alive, or `None` when some
    /// particle survives the horizon.
    pub fn extinction_time(&self) -> Option<f64> {
        let mut last: f64 = 0.0;
        for n in &self.nodes {
            if n.event == Event::BeyondHorizon {
                return None;
            }
            last = last.max(n.death);
        }
        Some(last)
    }

    /// Index one past the last node of the subtree rooted at `i`.
    pub fn subtree_end(&self, i: usize) -> usize {
        let depth = self.nodes[i].depth;
        self.nodes[i + 1..]
            .iter()
            .position(|n| n.depth <= depth)
            .map_or(self.nodes.len(), |p| i + 1 + p)
    }

    /// Descendants of the root's child `digit`, re-rooted with times shifted
    /// by the root's death time.
    pub fn subtree(&self, digit: u8) -> Result<RealizedTree> {
        let root = self.root();
        let slot = match (root.event, digit) {
            (Event::Flip, 0) => 0,
            (Event::Branch { .. }, 1) => 0,
            (Event::Branch { .. }, 2) => 1,
            (ev, _) => {
                return Err(Error::Domain(format!(
                    "root event '{}' has no child with digit {digit}",
                    ev.tag()
                )))
            }
        };
        let start = root.children[slot] as usize;
        let end = self.subtree_end(start);
        let shift = root.death;
        let offset = start as u32;
        let base_depth = self.nodes[start].depth;
        let relink = |c: u32| if c == NO_NODE { NO_NODE } else { c - offset };
        let nodes = self.nodes[start..end]
            .iter()
            .enumerate()
            .map(|(j, n)| RealizedNode {
                parent: if j == 0 { NO_NODE } else { n.parent - offset },
                slot: if j == 0 { 0 } else { n.slot },
                mode: n.mode,
                birth: n.birth - shift,
                death: n.death - shift,
                event: n.event,
                children: [relink(n.children[0]), relink(n.children[1])],
                depth: n.depth - base_depth,
            })
            .collect();
        Ok(RealizedTree {
            root_mode: self.nodes[start].mode,
            horizon: self.horizon - shift,
            nodes,
        })
    }

    /// One line per node: label, mode, birth, death, event.
    pub fn dump(&self, sys: &AbstractSystem) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                self.label(i),
                sys.mode(n.mode as usize),
                n.birth,
                n.death,
                n.event.tag()
            );
        }
        out
    }

    /// Build a tree from explicit nodes, for tests and tooling. Nodes must
    /// already be in preorder with consistent links.
    pub fn from_nodes(root_mode: usize, horizon: f64, nodes: Vec<RealizedNode>) -> Result<Self> {
        if nodes.is_empty() || nodes[0].mode as usize != root_mode {
            return Err(Error::Domain("tree needs a root at the given mode".into()));
        }
        for (i, n) in nodes.iter().enumerate().skip(1) {
            let p = n.parent as usize;
            if p >= i || nodes[p].death != n.birth {
                return Err(Error::Domain(format!("node {i} is not linked to an earlier parent")));
            }
        }
        Ok(Self {
            root_mode: root_mode as u32,
            horizon,
            nodes,
        })
    }
}

/// Event chosen by the uniform `u` at dense mode `k`.
#[inline]
pub fn choose_event(sys: &AbstractSystem, k: usize, u: f64) -> Event {
    if u < sys.p(k) {
        return Event::Flip;
    }
    let table = sys.branches(k);
    let j = table.partition_point(|e| e.upper <= u);
    match table.get(j) {
        Some(e) => Event::Branch {
            l: e.l,
            m: e.m,
            entry: j as u32,
        },
        None => Event::Death,
    }
}

/// Holding time and event of one particle at dense mode `k`.
pub fn sample_event<R: Rng + ?Sized>(sys: &AbstractSystem, k: usize, rng: &mut R) -> (f64, Event) {
    let e: f64 = rng.sample(Exp1);
    let u: f64 = rng.random();
    (e / sys.lambda(k), choose_event(sys, k, u))
}

/// Branch offspring as lattice points.
pub fn branch_modes(sys: &AbstractSystem, event: &Event) -> Option<(ModeIndex, ModeIndex)> {
    match *event {
        Event::Branch { l, m, .. } => Some((sys.mode(l as usize), sys.mode(m as usize))),
        _ => None,
    }
}

struct Pending {
    parent: u32,
    slot: u8,
    child_slot: u8,
    mode: u32,
    birth: f64,
    depth: u32,
    key: NodeKey,
}

/// Sample a tree rooted at dense mode `k` up to `horizon`.
pub fn simulate_tree(
    sys: &AbstractSystem,
    k: usize,
    horizon: f64,
    src: &RandomSource,
    budget: usize,
) -> Result<RealizedTree> {
    let mut tree = RealizedTree::default();
    let mut stack = Vec::new();
    simulate_tree_into(sys, k, horizon, src, budget, &mut tree, &mut stack)?;
    Ok(tree)
}

/// Reusable-buffer form of [`simulate_tree`].
pub fn simulate_tree_into(
    sys: &AbstractSystem,
    k: usize,
    horizon: f64,
    src: &RandomSource,
    budget: usize,
    tree: &mut RealizedTree,
    stack: &mut Vec<PendingNode>,
) -> Result<()> {
    if !(horizon >= 0.0) {
        return Err(Error::Domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    if budget == 0 {
        return Err(Error::Domain("node budget must be at least 1".into()));
    }
    if k >= sys.n_modes() {
        return Err(Error::Domain(format!("mode index {k} out of range")));
    }
    tree.root_mode = k as u32;
    tree.horizon = horizon;
    tree.nodes.clear();
    stack.clear();
    stack.push(PendingNode(Pending {
        parent: NO_NODE,
        slot: 0,
        child_slot: 0,
        mode: k as u32,
        birth: 0.0,
        depth: 0,
        key: src.root_key(),
    }));
    while let Some(PendingNode(p)) = stack.pop() {
        if tree.nodes.len() >= budget {
            return Err(Error::BudgetExceeded {
                budget,
                partial: tree.nodes.len(),
            });
        }
        let idx = tree.nodes.len() as u32;
        if p.parent != NO_NODE {
            tree.nodes[p.parent as usize].children[p.child_slot as usize] = idx;
        }
        let mut rng = src.node_rng(p.key);
        let hold: f64 = rng.sample::<f64, _>(Exp1) / sys.lambda(p.mode as usize);
        let death = p.birth + hold;
        let event = if death >= horizon {
            Event::BeyondHorizon
        } else {
            choose_event(sys, p.mode as usize, rng.random())
        };
        tree.nodes.push(RealizedNode {
            parent: p.parent,
            slot: p.slot,
            mode: p.mode,
            birth: p.birth,
            death,
            event,
            children: [NO_NODE; 2],
            depth: p.depth,
        });
        let child = |slot: u8, child_slot: u8, mode: u32| {
            PendingNode(Pending {
                parent: idx,
                slot,
                child_slot,
                mode,
                birth: death,
                depth: p.depth + 1,
                key: src.child_key(p.key, slot),
            })
        };
        match event {
            Event::Flip => stack.push(child(0, 0, p.mode)),
            Event::Branch { l, m, .. } => {
                stack.push(child(2, 1, m));
                stack.push(child(1, 0, l));
            }
            Event::Death | Event::BeyondHorizon => {}
        }
    }
    Ok(())
}

/// Opaque work item of the sampler's explicit stack.
pub struct PendingNode(Pending);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pure_decay, build_scalar_quadratic_ode, build_single_mode, SingleMode};
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    #[test]
    fn zero_horizon_gives_single_root() {
        let sys = build_scalar_quadratic_ode(0.5);
        let t = simulate_tree(&sys, 0, 0.0, &RandomSource::new(1, 0), 10).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.root().event, Event::BeyondHorizon);
        assert_eq!(t.count_born(0.0).unwrap(), 1);
    }

    #[test]
    fn pure_decay_dies_with_exponential_clock() {
        let sys = build_pure_decay(2.0, 1.0, 0.0).unwrap();
        let n = 40_000;
        let mut dead = 0;
        for i in 0..n {
            let t = simulate_tree(&sys, 0, 0.5, &RandomSource::new(3, i), 10).unwrap();
            assert_eq!(t.len(), 1);
            assert_eq!(t.count_born(0.5).unwrap(), 1);
            if t.root().event == Event::Death {
                dead += 1;
            }
        }
        let p = 1.0 - (-1.0f64).exp();
        let frac = dead as f64 / n as f64;
        assert!((frac - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn event_frequencies_match_table() {
        let sys = build_single_mode(&SingleMode {
            p: 0.2,
            q: 0.3,
            c_f: 2.0,
            ..SingleMode::default()
        })
        .unwrap();
        let mut rng = SmallRng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match sample_event(&sys, 0, &mut rng).1 {
                Event::Flip => counts[0] += 1,
                Event::Branch { .. } => counts[1] += 1,
                Event::Death => counts[2] += 1,
                Event::BeyondHorizon => unreachable!(),
            }
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 4.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn degenerate_event_laws() {
        let decay = build_pure_decay(1.0, 1.0, 0.0).unwrap();
        let ode = build_scalar_quadratic_ode(0.5);
        let mut rng = SmallRng::seed_from_u64(5);
        for _ in 0..1000 {
            assert_eq!(sample_event(&decay, 0, &mut rng).1, Event::Death);
            assert!(matches!(sample_event(&ode, 0, &mut rng).1, Event::Branch { l: 0, m: 0, .. }));
        }
    }

    #[test]
    fn yule_population_mean() {
        // binary Yule process: alive count has mean e^t, so total born is 2e^t - 1
        let sys = build_scalar_quadratic_ode(0.5);
        let n = 100_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let t = simulate_tree(&sys, 0, 1.0, &RandomSource::new(17, i), DEFAULT_NODE_BUDGET).unwrap();
            let c = t.count_born(1.0).unwrap() as f64;
            s += c;
            s2 += c * c;
        }
        let mean = s / n as f64;
        let var = (s2 - s * s / n as f64) / (n - 1) as f64;
        let expected = 2.0 * std::f64::consts::E - 1.0;
        assert!((mean - expected).abs() < 4.0 * (var / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn reproducible_and_time_coherent() {
        let sys = build_single_mode(&SingleMode {
            p: 0.3,
            q: 0.4,
            c_f: 1.0,
            ..SingleMode::default()
        })
        .unwrap();
        for i in 0..200 {
            let src = RandomSource::new(99, i);
            let a = simulate_tree(&sys, 0, 2.0, &src, 100_000).unwrap();
            let b = simulate_tree(&sys, 0, 2.0, &src, 100_000).unwrap();
            assert_eq!(a.nodes(), b.nodes());
            for (j, n) in a.nodes().iter().enumerate() {
                assert!(n.birth < n.death);
                assert!(n.birth < 2.0 || j == 0);
                assert_eq!(n.event == Event::BeyondHorizon, n.death >= 2.0);
                if j > 0 {
                    assert_eq!(a.node(n.parent as usize).death, n.birth);
                }
            }
        }
    }

    #[test]
    fn restriction_across_horizons() {
        let sys = build_scalar_quadratic_ode(0.5);
        for i in 0..100 {
            let src = RandomSource::new(4, i);
            let long = simulate_tree(&sys, 0, 1.5, &src, 100_000).unwrap();
            let short = simulate_tree(&sys, 0, 0.7, &src, 100_000).unwrap();
            let kept: Vec<_> = long.nodes().iter().filter(|n| n.birth < 0.7).collect();
            assert_eq!(kept.len(), short.len());
            for (a, b) in kept.iter().zip(short.nodes()) {
                assert_eq!((a.mode, a.birth, a.death), (b.mode, b.birth, b.death));
            }
        }
    }

    #[test]
    fn budget_is_reported() {
        let sys = build_scalar_quadratic_ode(0.5);
        let err = simulate_tree(&sys, 0, 20.0, &RandomSource::new(1, 1), 50).unwrap_err();
        assert_eq!(err, Error::BudgetExceeded { budget: 50, partial: 50 });
    }

    #[test]
    fn count_born_on_hand_tree() {
        let nodes = vec![
            RealizedNode {
                parent: NO_NODE,
                slot: 0,
                mode: 0,
                birth: 0.0,
                death: 0.3,
                event: Event::Branch { l: 0, m: 0, entry: 0 },
                children: [1, 2],
                depth: 0,
            },
            RealizedNode {
                parent: 0,
                slot: 1,
                mode: 0,
                birth: 0.3,
                death: 1.5,
                event: Event::BeyondHorizon,
                children: [NO_NODE; 2],
                depth: 1,
            },
            RealizedNode {
                parent: 0,
                slot: 2,
                mode: 0,
                birth: 0.3,
                death: 1.2,
                event: Event::BeyondHorizon,
                children: [NO_NODE; 2],
                depth: 1,
            },
        ];
        let t = RealizedTree::from_nodes(0, 1.0, nodes).unwrap();
        assert_eq!(t.count_born(1.0).unwrap(), 3);
        assert_eq!(t.count_born(0.0).unwrap(), 1);
        assert!(t.count_born(1.1).is_err());
        assert_eq!(t.label(2), Label(vec![2]));
        let sub = t.subtree(1).unwrap();
        assert!((sub.horizon() - 0.7).abs() < 1e-15);
        assert_eq!(sub.len(), 1);
        assert!(t.subtree(0).is_err());
    }

    #[test]
    fn subtree_shifts_and_matches_labels() {
        let sys = build_scalar_quadratic_ode(0.5);
        let mut checked = 0;
        for i in 0..300 {
            let t = simulate_tree(&sys, 0, 2.0, &RandomSource::new(8, i), 100_000).unwrap();
            match t.root().event {
                Event::Branch { .. } => {
                    let s = t.root().death;
                    let a = t.subtree(1).unwrap();
                    let b = t.subtree(2).unwrap();
                    assert_eq!(a.len() + b.len() + 1, t.len());
                    assert!((a.horizon() - (2.0 - s)).abs() < 1e-12);
                    assert_eq!(a.root().birth, 0.0);
                    assert!(t.subtree(0).is_err());
                    checked += 1;
                }
                _ => assert!(t.subtree(1).is_err()),
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn flip_root_rejects_branch_digit() {
        let sys = build_single_mode(&SingleMode {
            p: 1.0,
            c_f: 1.0,
            ..SingleMode::default()
        })
        .unwrap();
        let t = (0..)
            .map(|i| simulate_tree(&sys, 0, 5.0, &RandomSource::new(2, i), 1000).unwrap())
            .find(|t| t.root().event == Event::Flip)
            .unwrap();
        assert!(t.subtree(1).is_err());
        assert_eq!(t.subtree(0).unwrap().len(), t.len() - 1);
    }

    #[test]
    fn dump_lists_every_node() {
        let sys = build_scalar_quadratic_ode(0.5);
        let t = simulate_tree(&sys, 0, 1.0, &RandomSource::new(1, 2), 1000).unwrap();
        let text = t.dump(&sys);
        assert_eq!(text.lines().count(), t.len());
        assert!(text.starts_with("- (0) 0 "));
    }
}
