//! Conditional mean-upper semideviation, its nested composition over a
//! scenario tree, and the linear epigraph stencil used to embed it in a MILP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::milp::Sense;
use crate::scenario_tree::{NodeId, ScenarioTree, PROB_TOLERANCE};

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("empty outcome list")]
    Empty,
    #[error("{values} values but {probs} probabilities")]
    LengthMismatch { values: usize, probs: usize },
    #[error("probabilities sum to {0}")]
    ProbabilitySum(f64),
    #[error("lambda = {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("cost process has {costs} entries for a tree of {nodes} nodes")]
    ShapeMismatch { costs: usize, nodes: usize },
    #[error("node {0} is a leaf; its value is its own cost")]
    LeafNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    Expectation,
    MeanUpperSemideviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub kind: RiskKind,
    pub lambda: f64,
}

impl RiskSpec {
    pub fn expectation() -> Self {
        Self {
            kind: RiskKind::Expectation,
            lambda: 0.0,
        }
    }

    pub fn mean_upper_semideviation(lambda: f64) -> Result<Self, RiskError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(RiskError::LambdaOutOfRange(lambda));
        }
        Ok(Self {
            kind: RiskKind::MeanUpperSemideviation,
            lambda,
        })
    }

    /// Weight on the upper semideviation term; zero for plain expectation.
    pub fn effective_lambda(&self) -> f64 {
        match self.kind {
            RiskKind::Expectation => 0.0,
            RiskKind::MeanUpperSemideviation => self.lambda,
        }
    }
}

/// Realized stage cost Z_t at every node of a tree, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCostProcess(pub Vec<f64>);

impl TreeCostProcess {
    pub fn node_demands(tree: &ScenarioTree) -> Self {
        Self(tree.nodes().iter().map(|n| n.demand).collect())
    }
}

/// m + λ·Σ p·(v − m)₊ with m = Σ p·v.
pub fn conditional_musd(values: &[f64], probs: &[f64], lambda: f64) -> Result<f64, RiskError> {
    if values.is_empty() {
        return Err(RiskError::Empty);
    }
    if values.len() != probs.len() {
        return Err(RiskError::LengthMismatch {
            values: values.len(),
            probs: probs.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RiskError::LambdaOutOfRange(lambda));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOLERANCE {
        return Err(RiskError::ProbabilitySum(sum));
    }
    Ok(musd_unchecked(values, probs, lambda))
}

fn musd_unchecked(values: &[f64], probs: &[f64], lambda: f64) -> f64 {
    let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
    if lambda == 0.0 {
        return mean;
    }
    let upper: f64 = values
        .iter()
        .zip(probs)
        .map(|(v, p)| p * (v - mean).max(0.0))
        .sum();
    mean + lambda * upper
}

/// Nested value of every node: `value(n) = cost(n) + ρ(values of children)`.
pub fn node_values(
    tree: &ScenarioTree,
    costs: &TreeCostProcess,
    spec: &RiskSpec,
) -> Result<Vec<f64>, RiskError> {
    if costs.0.len() != tree.len() {
        return Err(RiskError::ShapeMismatch {
            costs: costs.0.len(),
            nodes: tree.len(),
        });
    }
    let lambda = spec.effective_lambda();
    if !(0.0..=1.0).contains(&lambda) {
        return Err(RiskError::LambdaOutOfRange(lambda));
    }
    let mut value = costs.0.clone();
    let mut vals = Vec::new();
    let mut probs = Vec::new();
    // Breadth-first order means children always follow their parent.
    for node in tree.nodes().iter().rev() {
        if node.is_leaf() {
            continue;
        }
        vals.clear();
        probs.clear();
        for c in &node.children {
            vals.push(value[c.0]);
            probs.push(tree.node(*c).conditional_prob);
        }
        value[node.id.0] += musd_unchecked(&vals, &probs, lambda);
    }
    Ok(value)
}

/// Composite risk ρ(Σ_t Z_t) of a tree-indexed cost process.
pub fn composite_risk(
    tree: &ScenarioTree,
    costs: &TreeCostProcess,
    spec: &RiskSpec,
) -> Result<f64, RiskError> {
    Ok(node_values(tree, costs, spec)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub trials: usize,
    pub violations: Vec<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const COHERENCE_TOLERANCE: f64 = 1e-9;

/// Randomized check of convexity, monotonicity, translational equivariance
/// and positive homogeneity of the one-step measure.
pub fn check_coherence(spec: &RiskSpec, trials: usize, seed: u64) -> PropertyReport {
    let lambda = spec.effective_lambda();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let rho = |v: &[f64], p: &[f64]| musd_unchecked(v, p, lambda);

    for trial in 0..trials {
        let k = rng.gen_range(1..=6);
        let mut probs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let z: Vec<f64> = (0..k).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let shift: f64 = rng.gen_range(-50.0..50.0);
        let scale: f64 = rng.gen_range(1e-3..10.0);

        let (rz, rw) = (rho(&z, &probs), rho(&w, &probs));

        let mix: Vec<f64> = z
            .iter()
            .zip(&w)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        let lhs = rho(&mix, &probs);
        if lhs > alpha * rz + (1.0 - alpha) * rw + COHERENCE_TOLERANCE {
            violations.push(format!("trial {trial}: convexity fails ({lhs} > mix of {rz}, {rw})"));
        }

        let dominated: Vec<f64> = z.iter().map(|v| v - rng.gen_range(0.0..20.0)).collect();
        let rd = rho(&dominated, &probs);
        if rd > rz + COHERENCE_TOLERANCE {
            violations.push(format!("trial {trial}: monotonicity fails ({rd} > {rz})"));
        }

        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let rs = rho(&shifted, &probs);
        if (rs - (rz + shift)).abs() > COHERENCE_TOLERANCE {
            violations.push(format!(
                "trial {trial}: translational equivariance fails ({rs} vs {})",
                rz + shift
            ));
        }

        let scaled: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let rc = rho(&scaled, &probs);
        if (rc - scale * rz).abs() > COHERENCE_TOLERANCE {
            violations.push(format!(
                "trial {trial}: positive homogeneity fails ({rc} vs {})",
                scale * rz
            ));
        }
    }
    PropertyReport { trials, violations }
}

/// Symbol referenced by an epigraph stencil row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StencilTerm {
    /// Cost-to-go θ of a node.
    Theta(NodeId),
    /// Conditional mean m of a node's children.
    Mean(NodeId),
    /// Upper deviation s ≥ 0 of a child above its parent's mean.
    Dev(NodeId),
    /// Stage cost of a node (an affine expression in the host model).
    Cost(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StencilRow {
    pub terms: Vec<(StencilTerm, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphStencil {
    pub node: NodeId,
    pub rows: Vec<StencilRow>,
}

/// Linear rows expressing θ_n ≥ cost_n + ρ(θ_children) for a non-leaf node:
///
/// ```text
/// m_n - Σ p_c θ_c                    = 0
/// s_c - θ_c + m_n                    ≥ 0   (each child; s_c ≥ 0 by bound)
/// θ_n - cost_n - m_n - λ Σ p_c s_c   = 0
/// ```
///
/// Exact under minimization of θ_root since each s_c settles at (θ_c − m_n)₊.
pub fn epigraph_coefficients(
    tree: &ScenarioTree,
    node: NodeId,
    spec: &RiskSpec,
) -> Result<EpigraphStencil, RiskError> {
    use StencilTerm::*;
    let n = tree.node(node);
    if n.is_leaf() {
        return Err(RiskError::LeafNode(node));
    }
    let lambda = spec.effective_lambda();
    let mut rows = Vec::with_capacity(n.children.len() + 2);

    let mut mean_terms = vec![(Mean(node), 1.0)];
    for c in &n.children {
        mean_terms.push((Theta(*c), -tree.node(*c).conditional_prob));
    }
    rows.push(StencilRow {
        terms: mean_terms,
        sense: Sense::Eq,
        rhs: 0.0,
    });

    for c in &n.children {
        rows.push(StencilRow {
            terms: vec![(Dev(*c), 1.0), (Theta(*c), -1.0), (Mean(node), 1.0)],
            sense: Sense::Ge,
            rhs: 0.0,
        });
    }

    let mut value_terms = vec![(Theta(node), 1.0), (Cost(node), -1.0), (Mean(node), -1.0)];
    for c in &n.children {
        value_terms.push((Dev(*c), -lambda * tree.node(*c).conditional_prob));
    }
    rows.push(StencilRow {
        terms: value_terms,
        sense: Sense::Eq,
        rhs: 0.0,
    });

    Ok(EpigraphStencil { node, rows })
}
