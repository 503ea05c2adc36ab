//! Explicit scenario trees: one node per atom of the period-t information.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;

pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("epsilon = {0} yields nonpositive demand multipliers")]
    EpsilonOutOfRange(f64),
    #[error("invalid scenario specification: {0}")]
    InvalidSpec(String),
    #[error("children of node {node} have probabilities summing to {sum}")]
    ProbabilitySum { node: usize, sum: f64 },
    #[error("leaf {node} sits at period {period}, expected {horizon}")]
    RaggedLeaves {
        node: usize,
        period: usize,
        horizon: usize,
    },
    #[error("unknown node {0}")]
    UnknownNode(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: NodeId,
    /// 1-based period.
    pub period: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub conditional_prob: f64,
    pub path_prob: f64,
    /// Net load realized at this node (MW).
    pub demand: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    nodes: Vec<TreeNode>,
    stages: Vec<Vec<NodeId>>,
    leaves: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPath {
    pub leaf: NodeId,
    pub nodes: Vec<NodeId>,
    pub probability: f64,
}

/// Incremental construction of arbitrary trees. Node ids handed out by the
/// builder are provisional; [`TreeBuilder::finish`] relabels breadth-first.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    parent: Vec<Option<usize>>,
    prob: Vec<f64>,
    demand: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl TreeBuilder {
    pub fn new(root_demand: f64) -> Self {
        Self {
            parent: vec![None],
            prob: vec![1.0],
            demand: vec![root_demand],
            children: vec![Vec::new()],
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn add_child(&mut self, parent: usize, conditional_prob: f64, demand: f64) -> usize {
        let id = self.parent.len();
        self.parent.push(Some(parent));
        self.prob.push(conditional_prob);
        self.demand.push(demand);
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn finish(self) -> Result<ScenarioTree, TreeError> {
        // Breadth-first relabelling keeps sibling insertion order.
        let mut order = vec![0usize];
        let mut head = 0;
        while head < order.len() {
            let n = order[head];
            head += 1;
            order.extend(self.children[n].iter().copied());
        }
        let mut new_id = vec![usize::MAX; self.parent.len()];
        for (k, &old) in order.iter().enumerate() {
            new_id[old] = k;
        }

        let mut nodes: Vec<TreeNode> = Vec::with_capacity(order.len());
        for (k, &old) in order.iter().enumerate() {
            let parent = self.parent[old].map(|p| NodeId(new_id[p]));
            let (period, path_prob) = match parent {
                None => (1, 1.0),
                Some(p) => {
                    let pn = &nodes[p.0];
                    (pn.period + 1, pn.path_prob * self.prob[old])
                }
            };
            nodes.push(TreeNode {
                id: NodeId(k),
                period,
                parent,
                children: self.children[old].iter().map(|&c| NodeId(new_id[c])).collect(),
                conditional_prob: if parent.is_none() { 1.0 } else { self.prob[old] },
                path_prob,
                demand: self.demand[old],
            });
        }
        ScenarioTree::from_nodes(nodes)
    }
}

impl ScenarioTree {
    fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self, TreeError> {
        for n in &nodes {
            if !n.children.is_empty() {
                let sum: f64 = n
                    .children
                    .iter()
                    .map(|c| nodes[c.0].conditional_prob)
                    .sum();
                if (sum - 1.0).abs() > PROB_TOLERANCE {
                    return Err(TreeError::ProbabilitySum { node: n.id.0, sum });
                }
            }
        }
        let horizon = nodes.iter().map(|n| n.period).max().unwrap_or(1);
        let mut stages = vec![Vec::new(); horizon];
        let mut leaves = Vec::new();
        for n in &nodes {
            stages[n.period - 1].push(n.id);
            if n.is_leaf() {
                if n.period != horizon {
                    return Err(TreeError::RaggedLeaves {
                        node: n.id.0,
                        period: n.period,
                        horizon,
                    });
                }
                leaves.push(n.id);
            }
        }
        Ok(Self {
            nodes,
            stages,
            leaves,
        })
    }

    /// A single deterministic path with the given per-period demands.
    pub fn chain(demands: &[f64]) -> Self {
        assert!(!demands.is_empty(), "chain needs at least one period");
        let mut b = TreeBuilder::new(demands[0]);
        let mut last = b.root();
        for &d in &demands[1..] {
            last = b.add_child(last, 1.0, d);
        }
        b.finish().expect("a chain is a valid tree")
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// Nodes at 1-based period `t`.
    pub fn stage(&self, t: usize) -> &[NodeId] {
        &self.stages[t - 1]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    /// Root-to-node path, root first.
    pub fn history(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Descendants of `id` (inclusive) sitting at 1-based period `t`.
    pub fn descendants_at(&self, id: NodeId, t: usize) -> Vec<NodeId> {
        let mut frontier = vec![id];
        let mut period = self.nodes[id.0].period;
        if t < period {
            return Vec::new();
        }
        while period < t {
            frontier = frontier
                .iter()
                .flat_map(|n| self.nodes[n.0].children.iter().copied())
                .collect();
            period += 1;
        }
        frontier
    }

    /// Maximum node demand at each period.
    pub fn max_demand_per_period(&self) -> Vec<f64> {
        self.stages
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|n| self.nodes[n.0].demand)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Tree made of the history of `id` (as a chain) followed by the full
    /// subtree rooted at `id`. Also returns, for every node of the new tree,
    /// the id of the node it copies.
    pub fn with_history_and_subtree(&self, id: NodeId) -> (ScenarioTree, Vec<NodeId>) {
        let history = self.history(id);
        let mut b = TreeBuilder::new(self.nodes[0].demand);
        let mut origin = vec![NodeId::ROOT];
        let mut last = b.root();
        for &h in &history[1..] {
            last = b.add_child(last, 1.0, self.nodes[h.0].demand);
            origin.push(h);
        }
        let mut stack = vec![(id, last)];
        while let Some((orig, built)) = stack.pop() {
            for &c in &self.nodes[orig.0].children {
                let cn = &self.nodes[c.0];
                let child = b.add_child(built, cn.conditional_prob, cn.demand);
                debug_assert_eq!(child, origin.len());
                origin.push(c);
                stack.push((c, child));
            }
        }
        // Map provisional ids onto the relabelled ones.
        let tree = b.clone().finish().expect("restriction of a valid tree");
        let relabel = bfs_relabel(&b);
        let mut mapped = vec![NodeId::ROOT; origin.len()];
        for (old, orig) in origin.into_iter().enumerate() {
            mapped[relabel[old]] = orig;
        }
        (tree, mapped)
    }

    /// Tab-separated debug dump: `node_id period parent cond_prob path_prob demand`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let parent = n
                .parent
                .map(|p| p.to_string())
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                n.id, n.period, parent, n.conditional_prob, n.path_prob, n.demand
            );
        }
        out
    }
}

fn bfs_relabel(b: &TreeBuilder) -> Vec<usize> {
    let mut order = vec![0usize];
    let mut head = 0;
    while head < order.len() {
        let n = order[head];
        head += 1;
        order.extend(b.children[n].iter().copied());
    }
    let mut new_id = vec![0; order.len()];
    for (k, &old) in order.iter().enumerate() {
        new_id[old] = k;
    }
    new_id
}

/// Materializes the instance's scenario specification at the given ε.
pub fn build_tree(inst: &Instance, epsilon: f64) -> Result<ScenarioTree, TreeError> {
    let spec = &inst.scenario;
    let offsets = spec.branch_offsets();
    if offsets.len() != spec.branch_probs.len() {
        return Err(TreeError::InvalidSpec(
            "offsets and branch_probs differ in length".into(),
        ));
    }
    let sum: f64 = spec.branch_probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(TreeError::InvalidSpec(format!(
            "branch probabilities sum to {sum}"
        )));
    }
    if spec.branch_periods.windows(2).any(|w| w[0] >= w[1])
        || spec
            .branch_periods
            .iter()
            .any(|&p| p < 2 || p > inst.horizon)
    {
        return Err(TreeError::InvalidSpec(format!(
            "branch periods {:?} must be strictly increasing within 2..={}",
            spec.branch_periods, inst.horizon
        )));
    }
    let multipliers: Vec<f64> = offsets.iter().map(|o| 1.0 + o * epsilon).collect();
    if !epsilon.is_finite()
        || epsilon < 0.0
        || (!spec.branch_periods.is_empty() && multipliers.iter().any(|&m| m <= 0.0))
    {
        return Err(TreeError::EpsilonOutOfRange(epsilon));
    }

    let d = &inst.base_demand;
    let mut b = TreeBuilder::new(d[0]);
    // (provisional id, block multiplier)
    let mut layer = vec![(b.root(), 1.0)];
    for t in 2..=inst.horizon {
        let branching = spec.branch_periods.contains(&t);
        let mut next = Vec::with_capacity(layer.len() * multipliers.len());
        for &(node, mult) in &layer {
            if branching {
                for (p, m) in spec.branch_probs.iter().zip(&multipliers) {
                    next.push((b.add_child(node, *p, m * d[t - 1]), *m));
                }
            } else {
                next.push((b.add_child(node, 1.0, mult * d[t - 1]), mult));
            }
        }
        layer = next;
    }
    b.finish()
}

/// One entry per leaf, in leaf order.
pub fn enumerate_paths(tree: &ScenarioTree) -> Vec<ScenarioPath> {
    tree.leaves()
        .iter()
        .map(|&leaf| ScenarioPath {
            leaf,
            nodes: tree.history(leaf),
            probability: tree.node(leaf).path_prob,
        })
        .collect()
}

/// Total demand Σ_t d_t along each root-to-leaf path, in leaf order.
pub fn total_demand_random_variable(tree: &ScenarioTree) -> Vec<f64> {
    enumerate_paths(tree)
        .iter()
        .map(|p| p.nodes.iter().map(|n| tree.node(*n).demand).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_tree(eps: f64) -> ScenarioTree {
        build_tree(&Instance::bundled(), eps).unwrap()
    }

    #[test]
    fn paper_tree_has_90_nodes_and_8_leaves() {
        for eps in [0.0, 0.1, 0.5] {
            let tree = paper_tree(eps);
            assert_eq!(tree.len(), 6 + 12 + 24 + 48);
            assert_eq!(tree.leaves().len(), 8);
            assert_eq!(tree.horizon(), 24);
            for leaf in tree.leaves() {
                assert!((tree.node(*leaf).path_prob - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scenario_one_period_seven() {
        let tree = paper_tree(0.1);
        let path = &enumerate_paths(&tree)[0];
        let n7 = tree.node(path.nodes[6]);
        assert_eq!(n7.period, 7);
        assert!((n7.demand - 1035.0).abs() < 1e-9);
    }

    #[test]
    fn leaf_order_matches_scenario_table() {
        let eps = 0.2;
        let tree = paper_tree(eps);
        let inst = Instance::bundled();
        for (s, path) in enumerate_paths(&tree).iter().enumerate() {
            // scenario s+1: bits (b7, b13, b19), 1 = (1+ε)
            for (block, start) in [7usize, 13, 19].iter().enumerate() {
                let up = (s >> (2 - block)) & 1 == 1;
                let m = if up { 1.0 + eps } else { 1.0 - eps };
                for t in *start..*start + 6 {
                    let got = tree.node(path.nodes[t - 1]).demand;
                    assert!((got - m * inst.base_demand[t - 1]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn first_block_is_deterministic() {
        let tree = paper_tree(0.4);
        for t in 1..=6 {
            assert_eq!(tree.stage(t).len(), 1);
        }
        assert_eq!(tree.stage(7).len(), 2);
    }

    #[test]
    fn epsilon_at_least_one_rejected() {
        let inst = Instance::bundled();
        assert_eq!(build_tree(&inst, 1.0), Err(TreeError::EpsilonOutOfRange(1.0)));
        assert!(build_tree(&inst, 0.99).is_ok());
    }

    #[test]
    fn single_scenario_tree() {
        let mut inst = Instance::bundled();
        inst.scenario = crate::instance::ScenarioSpec::deterministic();
        let tree = build_tree(&inst, 0.3).unwrap();
        let paths = enumerate_paths(&tree);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].nodes.len(), 24);
        assert_eq!(paths[0].probability, 1.0);
    }

    #[test]
    fn total_demand_values() {
        let totals = total_demand_random_variable(&paper_tree(0.0));
        assert!(totals.iter().all(|&d| (d - 27100.0).abs() < 1e-9));

        let totals = total_demand_random_variable(&paper_tree(0.1));
        assert!((totals[7] - 29275.0).abs() < 1e-9);
        assert!(((totals[0] + totals[7]) / 2.0 - 27100.0).abs() < 1e-9);
    }

    #[test]
    fn builder_rejects_bad_probabilities() {
        let mut b = TreeBuilder::new(1.0);
        b.add_child(0, 0.3, 1.0);
        b.add_child(0, 0.3, 1.0);
        assert!(matches!(b.finish(), Err(TreeError::ProbabilitySum { .. })));
    }

    #[test]
    fn builder_rejects_ragged_leaves() {
        let mut b = TreeBuilder::new(1.0);
        let a = b.add_child(0, 0.5, 1.0);
        b.add_child(0, 0.5, 1.0);
        b.add_child(a, 1.0, 1.0);
        assert!(matches!(b.finish(), Err(TreeError::RaggedLeaves { .. })));
    }

    #[test]
    fn history_and_subtree_restriction() {
        let tree = paper_tree(0.2);
        let n = tree.stage(13)[2];
        let (sub, origin) = tree.with_history_and_subtree(n);
        // 12 history nodes + 6 + 6*2 = 30
        assert_eq!(sub.len(), 12 + 6 + 12);
        assert_eq!(sub.leaves().len(), 2);
        for node in sub.nodes() {
            let orig = tree.node(origin[node.id.0]);
            assert_eq!(node.period, orig.period);
            assert_eq!(node.demand, orig.demand);
        }
        assert_eq!(origin[sub.stage(13)[0].0], n);
    }

    #[test]
    fn descendants() {
        let tree = paper_tree(0.1);
        let root = tree.root();
        assert_eq!(tree.descendants_at(root, 1), vec![root]);
        assert_eq!(tree.descendants_at(root, 7).len(), 2);
        assert_eq!(tree.descendants_at(root, 24).len(), 8);
        assert!(tree.descendants_at(tree.stage(3)[0], 2).is_empty());
    }

    #[test]
    fn dump_has_one_line_per_node() {
        let tree = paper_tree(0.1);
        let dump = tree.debug_dump();
        assert_eq!(dump.lines().count(), 90);
        assert!(dump.starts_with("0\t1\t-\t1\t1\t700\n"));
    }
}
