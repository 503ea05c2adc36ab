//! Random instance generators and brute-force oracles shared by the
//! integration tests.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use rauc::scenario_tree::TreeBuilder;
use rauc::{Instance, ScenarioTree};

/// Nested mean-upper-semideviation evaluated by plain recursion.
pub fn nested_risk(tree: &ScenarioTree, costs: &[f64], lambda: f64) -> f64 {
    fn value(tree: &ScenarioTree, costs: &[f64], lambda: f64, n: usize) -> f64 {
        let node = &tree.nodes()[n];
        if node.children.is_empty() {
            return costs[n];
        }
        let kids: Vec<(f64, f64)> = node
            .children
            .iter()
            .map(|c| (tree.nodes()[c.0].conditional_prob, value(tree, costs, lambda, c.0)))
            .collect();
        let mean: f64 = kids.iter().map(|(p, v)| p * v).sum();
        let upper: f64 = kids.iter().map(|(p, v)| p * (v - mean).max(0.0)).sum();
        costs[n] + mean + lambda * upper
    }
    value(tree, costs, lambda, 0)
}

/// `Σ_leaves P(path)·Σ_path cost`.
pub fn expected_path_cost(tree: &ScenarioTree, costs: &[f64]) -> f64 {
    tree.leaves()
        .iter()
        .map(|&leaf| {
            let hist = tree.history(leaf);
            let prob: f64 = hist.iter().skip(1).map(|h| tree.node(*h).conditional_prob).product();
            prob * hist.iter().map(|h| costs[h.0]).sum::<f64>()
        })
        .sum()
}

/// Random tree with `depth` periods where every node has 1 to `max_children` children.
pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize, max_children: usize) -> ScenarioTree {
    let mut b = TreeBuilder::new(rng.gen_range(0.0..100.0));
    let mut layer = vec![b.root()];
    for _ in 1..depth {
        let mut next = Vec::new();
        for &n in &layer {
            let k = rng.gen_range(1..=max_children);
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            for wi in w {
                next.push(b.add_child(n, wi / total, rng.gen_range(0.0..100.0)));
            }
        }
        layer = next;
    }
    b.finish().expect("valid random tree")
}

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp: f64,
    pub min_up: u32,
    pub min_down: u32,
    pub su: f64,
    pub sd: f64,
}

pub fn make_instance(gens: &[GenSpec], horizon: usize) -> Instance {
    let generators: Vec<_> = gens
        .iter()
        .map(|g| {
            json!({
                "a": g.a, "b": g.b, "c": g.c, "q_min": g.q_min, "q_max": g.q_max,
                "V_prime": g.ramp, "V": g.ramp, "B_prime": g.ramp, "B": g.ramp,
                "M": g.min_up, "L": g.min_down, "SU": g.su, "SD": g.sd
            })
        })
        .collect();
    let text = json!({
        "name": "random",
        "horizon": horizon,
        "generators": generators,
        "base_demand": vec![0.0; horizon],
        "scenario": { "branch_periods": [], "epsilon": 0.0, "branch_probs": [1.0] }
    });
    Instance::from_json_str(&text.to_string()).expect("valid random instance")
}

/// A toy instance: at most two generators, three periods and two scenarios.
/// Ramp limits equal capacity so they never bind.
pub struct Toy {
    pub gens: Vec<GenSpec>,
    pub inst: Instance,
    pub tree: ScenarioTree,
    pub lambda: f64,
}

pub fn random_toy(rng: &mut ChaCha8Rng) -> Toy {
    let ng = rng.gen_range(1..=2);
    let gens: Vec<GenSpec> = (0..ng)
        .map(|_| {
            let q_min = rng.gen_range(5.0..30.0_f64).round();
            let q_max = q_min + rng.gen_range(10.0..60.0_f64).round();
            GenSpec {
                a: rng.gen_range(0.0..80.0_f64).round(),
                b: rng.gen_range(1.0..10.0),
                c: if rng.gen_bool(0.5) { rng.gen_range(0.0..0.05) } else { 0.0 },
                q_min,
                q_max,
                ramp: q_max,
                min_up: rng.gen_range(0..=2),
                min_down: rng.gen_range(0..=2),
                su: if rng.gen_bool(0.7) { rng.gen_range(0.0..100.0_f64).round() } else { 0.0 },
                sd: if rng.gen_bool(0.5) { rng.gen_range(0.0..30.0_f64).round() } else { 0.0 },
            }
        })
        .collect();
    let horizon = rng.gen_range(1..=3);
    let cap: f64 = gens.iter().map(|g| g.q_max).sum();
    let demand = |rng: &mut ChaCha8Rng| (rng.gen_range(0.0..0.95) * cap).round();
    let mut b = TreeBuilder::new(demand(rng));
    let mut layer = vec![b.root()];
    let branch_at = if horizon >= 2 && rng.gen_bool(0.75) {
        Some(rng.gen_range(2..=horizon))
    } else {
        None
    };
    let p = (rng.gen_range(0.2..0.8_f64) * 100.0).round() / 100.0;
    for t in 2..=horizon {
        let mut next = Vec::new();
        for &n in &layer {
            if Some(t) == branch_at {
                next.push(b.add_child(n, p, demand(rng)));
                next.push(b.add_child(n, 1.0 - p, demand(rng)));
            } else {
                next.push(b.add_child(n, 1.0, demand(rng)));
            }
        }
        layer = next;
    }
    let tree = b.finish().expect("valid toy tree");
    let inst = make_instance(&gens, horizon);
    let lambda = [0.0, 0.3, 0.5, 1.0][rng.gen_range(0..4)];
    Toy { gens, inst, tree, lambda }
}

/// Cheapest cost of serving `demand` with the units in `on`, using four
/// equal secant segments above minimum output; `None` if capacity is short.
pub fn dispatch_cost(gens: &[GenSpec], on: &[bool], demand: f64) -> Option<f64> {
    let mut fixed = 0.0;
    let mut floor = 0.0;
    let mut segs: Vec<(f64, f64)> = Vec::new();
    for (g, &u) in gens.iter().zip(on) {
        if !u {
            continue;
        }
        fixed += g.a + g.b * g.q_min + g.c * g.q_min * g.q_min;
        floor += g.q_min;
        let len = (g.q_max - g.q_min) / 4.0;
        for k in 0..4 {
            let lo = g.q_min + len * k as f64;
            let hi = lo + len;
            if len > 0.0 {
                segs.push((g.b + g.c * (lo + hi), len));
            }
        }
    }
    let mut need = (demand - floor).max(0.0);
    segs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut cost = fixed;
    for (slope, len) in segs {
        if need <= 0.0 {
            break;
        }
        let take = need.min(len);
        cost += slope * take;
        need -= take;
    }
    (need <= 1e-9).then_some(cost)
}

/// Whether commitments `u[node][gen]` honour minimum up and down times,
/// starting from all units off with no residual obligation.
fn commitment_ok(gens: &[GenSpec], tree: &ScenarioTree, u: &[Vec<bool>]) -> bool {
    for node in tree.nodes() {
        let t = node.period;
        for (i, g) in gens.iter().enumerate() {
            let prev = node.parent.is_some_and(|p| u[p.0][i]);
            let now = u[node.id.0][i];
            if prev == now {
                continue;
            }
            let window = if now { g.min_up } else { g.min_down } as usize;
            for tau in t + 1..=(t + window).min(tree.horizon()) {
                if tree.descendants_at(node.id, tau).iter().any(|d| u[d.0][i] != now) {
                    return false;
                }
            }
        }
    }
    true
}

fn policy_value(toy: &Toy, u: &[Vec<bool>]) -> Option<f64> {
    if !commitment_ok(&toy.gens, &toy.tree, u) {
        return None;
    }
    let mut costs = Vec::with_capacity(toy.tree.len());
    for node in toy.tree.nodes() {
        let mut c = dispatch_cost(&toy.gens, &u[node.id.0], node.demand)?;
        for (i, g) in toy.gens.iter().enumerate() {
            let prev = node.parent.is_some_and(|p| u[p.0][i]);
            let now = u[node.id.0][i];
            if now && !prev {
                c += g.su;
            }
            if prev && !now {
                c += g.sd;
            }
        }
        costs.push(c);
    }
    Some(nested_risk(&toy.tree, &costs, toy.lambda))
}

/// Minimum over every node-wise commitment pattern.
pub fn oracle_ms(toy: &Toy) -> Option<f64> {
    let (nn, ng) = (toy.tree.len(), toy.gens.len());
    let mut best: Option<f64> = None;
    for mask in 0u64..(1 << (nn * ng)) {
        let u: Vec<Vec<bool>> = (0..nn)
            .map(|n| (0..ng).map(|i| mask >> (n * ng + i) & 1 == 1).collect())
            .collect();
        if let Some(v) = policy_value(toy, &u) {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// Minimum over commitment patterns that depend on the period only.
pub fn oracle_ts(toy: &Toy) -> Option<f64> {
    let (t, ng) = (toy.tree.horizon(), toy.gens.len());
    let mut best: Option<f64> = None;
    for mask in 0u64..(1 << (t * ng)) {
        let u: Vec<Vec<bool>> = toy
            .tree
            .nodes()
            .iter()
            .map(|node| (0..ng).map(|i| mask >> ((node.period - 1) * ng + i) & 1 == 1).collect())
            .collect();
        if let Some(v) = policy_value(toy, &u) {
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// Instance and tree satisfying the assumptions behind the analytical VMS
/// interval: linear stationary costs, and a first unit that covers every
/// node demand with free cycling and unlimited ramping.
pub fn random_linear_instance(rng: &mut ChaCha8Rng) -> (Instance, ScenarioTree, f64) {
    let ng = rng.gen_range(2..=3);
    let mut gens = Vec::new();
    for i in 0..ng {
        let q_min = rng.gen_range(5.0..20.0_f64).round();
        let q_max = q_min + rng.gen_range(if i == 0 { 60.0..120.0 } else { 10.0..60.0_f64 }).round();
        gens.push(GenSpec {
            a: rng.gen_range(5.0..80.0_f64).round(),
            b: rng.gen_range(1.0..12.0),
            c: 0.0,
            q_min,
            q_max,
            ramp: q_max,
            min_up: if i == 0 { 0 } else { rng.gen_range(0..=2) },
            min_down: if i == 0 { 0 } else { rng.gen_range(0..=2) },
            su: 0.0,
            sd: 0.0,
        });
    }
    let horizon = rng.gen_range(3..=5);
    let (lo, hi) = (gens[0].q_min, gens[0].q_max);
    let demand = |rng: &mut ChaCha8Rng| rng.gen_range(lo..=hi);
    let mut b = TreeBuilder::new(demand(rng));
    let mut layer = vec![b.root()];
    let branches: Vec<usize> = (2..=horizon).filter(|_| rng.gen_bool(0.5)).take(2).collect();
    for t in 2..=horizon {
        let mut next = Vec::new();
        for &n in &layer {
            if branches.contains(&t) {
                let p = rng.gen_range(0.2..0.8);
                next.push(b.add_child(n, p, demand(rng)));
                next.push(b.add_child(n, 1.0 - p, demand(rng)));
            } else {
                next.push(b.add_child(n, 1.0, demand(rng)));
            }
        }
        layer = next;
    }
    let tree = b.finish().expect("valid tree");
    let lambda = rng.gen_range(0.0..=1.0);
    (make_instance(&gens, horizon), tree, lambda)
}
