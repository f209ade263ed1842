use dprocess::process::{run, ProcessParams, ProcessState, StepEvent};
use dprocess::rng::{mix, rng_from_seed};
use dprocess::stats::chi_square_uniform;
use rand::Rng;

/// Replays one step from `base` with fresh seeds and tests the outcome
/// counts against uniform over the valid pairs.
fn replay_uniformity(base: &ProcessState, replays: u64, stream: u64) -> f64 {
    let pairs = base.valid_pairs();
    let mut counts = vec![0u64; pairs.len()];
    for i in 0..replays {
        let mut state = base.clone();
        state.reseed(mix(stream, i));
        let StepEvent::EdgeAdded { u, v, .. } = state.step() else {
            panic!("state has valid pairs");
        };
        let slot = pairs
            .binary_search(&(u.min(v), u.max(v)))
            .expect("sampled pair is valid");
        counts[slot] += 1;
    }
    let report = chi_square_uniform(&counts, 1e-3).unwrap();
    assert!(report.pass, "p = {:?}", report.p_value);
    report.p_value.unwrap()
}

#[test]
fn uniform_when_enumerating() {
    let params = ProcessParams::new(6, 2, 0).unwrap();
    let base = ProcessState::from_edges(params, &[(0, 1), (2, 3)]).unwrap();
    replay_uniformity(&base, 100_000, 1);
}

#[test]
fn uniform_when_rejecting() {
    // 80 unsaturated vertices, 40 of them paired off: above the enumeration threshold.
    let params = ProcessParams::new(80, 2, 0).unwrap();
    let edges: Vec<(usize, usize)> = (0..20).map(|v| (2 * v, 2 * v + 1)).collect();
    let base = ProcessState::from_edges(params, &edges).unwrap();
    assert!(base.unsaturated_count() > 64);
    replay_uniformity(&base, 200_000, 2);
}

#[test]
fn uniform_when_rejections_run_out() {
    // Complete graph on 70 vertices minus a perfect matching, d = 69: only
    // the 35 matching pairs are valid, so most draws are rejected and a fair
    // share of steps fall back to enumeration.
    let n = 70;
    let params = ProcessParams::new(n, n - 1, 0).unwrap();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|&(u, v)| !(u % 2 == 0 && v == u + 1))
        .collect();
    let base = ProcessState::from_edges(params, &edges).unwrap();
    assert_eq!(base.valid_pairs().len(), 35);
    replay_uniformity(&base, 50_000, 3);
}

/// Each step rebuilds the state and draws from the explicit list of valid pairs.
fn naive_run_is_stuck(n: usize, d: usize, seed: u64) -> bool {
    let params = ProcessParams::new(n, d, 0).unwrap();
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    loop {
        let state = ProcessState::from_edges(params, &edges).unwrap();
        let valid = state.valid_pairs();
        if valid.is_empty() {
            return (edges.len() as u64) < params.max_edges();
        }
        edges.push(valid[rng.random_range(0..valid.len())]);
    }
}

// Stuck runs are far more common at moderate n than the whp statement
// suggests; this checks that the fast sampler's rate is the process's rate.
#[test]
fn stuck_rate_matches_naive_sampler() {
    let (n, d, reps) = (40, 3, 3000u64);
    let fast = (0..reps)
        .filter(|&i| run(ProcessParams::new(n, d, mix(4, i)).unwrap(), &[]).unwrap().stuck)
        .count() as f64;
    let naive = (0..reps).filter(|&i| naive_run_is_stuck(n, d, mix(5, i))).count() as f64;
    let (p1, p2) = (fast / reps as f64, naive / reps as f64);
    let pooled = (fast + naive) / (2 * reps) as f64;
    let z = (p1 - p2) / (pooled * (1.0 - pooled) * 2.0 / reps as f64).sqrt();
    assert!(z.abs() < 4.0, "fast {p1}, naive {p2}, z = {z}");
    assert!(p1 > 0.2, "stuck fraction {p1}");
}

#[test]
fn stuck_fraction_at_moderate_n() {
    for (n, d) in [(1000, 2), (1000, 3)] {
        let stuck = (0..1000u64)
            .filter(|&i| run(ProcessParams::new(n, d, mix(6, i)).unwrap(), &[]).unwrap().stuck)
            .count();
        // Far above 1%, well below one half.
        assert!((50..400).contains(&stuck), "n = {n}, d = {d}: {stuck} stuck");
    }
}
