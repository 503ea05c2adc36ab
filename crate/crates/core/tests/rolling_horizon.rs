mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{oracle_ms, oracle_ts, random_toy};
use rauc::milp::SolveOptions;
use rauc::policy::{check_feasibility, rolling_horizon, RhOptions, RhSchedule};
use rauc::RiskSpec;

fn rh(toy: &common::Toy, schedule: RhSchedule) -> Option<(f64, usize)> {
    let spec = RiskSpec::mean_upper_semideviation(toy.lambda).unwrap();
    let opts = RhOptions {
        solve: SolveOptions { rel_gap: 1e-9, ..SolveOptions::default() },
        schedule,
        root_policy: None,
    };
    let out = rolling_horizon(&toy.inst, &toy.tree, &spec, &opts).ok()?;
    assert!(check_feasibility(&toy.inst, &toy.tree, &out.policy).is_empty());
    Some((out.value, out.solves))
}

#[test]
fn rolling_horizon_is_sandwiched_on_random_toys() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for _ in 0..20 {
        let toy = random_toy(&mut rng);
        let (Some(ms), Some(ts)) = (oracle_ms(&toy), oracle_ts(&toy)) else { continue };
        let (z, _) = rh(&toy, RhSchedule::Revelation).expect("recourse exists on toys with a feasible two-stage plan");
        let tol = 1e-6 * ts.abs().max(1.0);
        assert!(ms - tol <= z && z <= ts + tol, "{ms} <= {z} <= {ts}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn every_period_schedule_gives_the_same_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let toy = random_toy(&mut rng);
        let (Some((a, sa)), Some((b, sb))) = (rh(&toy, RhSchedule::Revelation), rh(&toy, RhSchedule::EveryPeriod)) else {
            continue;
        };
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        assert!(sa <= sb);
        assert_eq!(sb, toy.tree.len());
    }
}
