//! One run of the d-process.
//!
//! Starting from the empty graph on `n` vertices, each step adds an edge chosen
//! uniformly among all pairs of non-adjacent vertices that both have degree at
//! most `d - 1`. The state keeps the counters `S[j]` (number of vertices of
//! degree at most `j`, for `j < d`) exact after every step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, ProcessRng};

/// Format version written into serialized [`TrajectoryRecord`]s.
pub const TRAJECTORY_VERSION: u32 = 1;

/// Below this many unsaturated vertices the sampler enumerates valid pairs.
const ENUMERATION_THRESHOLD: usize = 64;
/// Consecutive rejected draws before falling back to enumeration.
const MAX_REJECTIONS: usize = 256;

const NOT_UNSATURATED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl ProcessParams {
    pub fn new(n: usize, d: usize, seed: u64) -> Result<Self> {
        let params = ProcessParams { n, d, seed };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!("n must be at least 2, got {}", self.n)));
        }
        if self.d < 1 {
            return Err(Error::InvalidParams("d must be at least 1".into()));
        }
        if self.d >= self.n {
            return Err(Error::InvalidParams(format!(
                "d must be smaller than n (d = {}, n = {})",
                self.d, self.n
            )));
        }
        if self.n >= NOT_UNSATURATED as usize {
            return Err(Error::InvalidParams(format!("n = {} is too large", self.n)));
        }
        Ok(())
    }

    /// Number of edges at saturation, `floor(d n / 2)`.
    pub fn max_edges(&self) -> u64 {
        (self.d as u64 * self.n as u64) / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    /// The endpoints are reported in uniformly random order together with
    /// their degrees just before the edge was added.
    EdgeAdded {
        u: usize,
        v: usize,
        deg_u_before: usize,
        deg_v_before: usize,
    },
    Stuck,
}

#[derive(Clone, Debug)]
pub struct ProcessState {
    params: ProcessParams,
    step: u64,
    deg: Vec<u32>,
    /// Flat `n * d` neighbor table; the first `deg[v]` slots of row `v` are used.
    nbrs: Vec<u32>,
    unsat: Vec<u32>,
    unsat_slot: Vec<u32>,
    s: Vec<u64>,
    hitting: Vec<Option<u64>>,
    stuck: bool,
    rng: ProcessRng,
}

impl ProcessState {
    /// Empty graph on `params.n` vertices.
    pub fn new(params: ProcessParams) -> Result<Self> {
        params.validate()?;
        let (n, d) = (params.n, params.d);
        Ok(ProcessState {
            params,
            step: 0,
            deg: vec![0; n],
            nbrs: vec![0; n * d],
            unsat: (0..n as u32).collect(),
            unsat_slot: (0..n as u32).collect(),
            s: vec![n as u64; d],
            hitting: vec![None; d.saturating_sub(1)],
            stuck: false,
            rng: rng_from_seed(params.seed),
        })
    }

    /// State reached by adding `edges` in order to the empty graph. The step
    /// counter equals `edges.len()`; hitting times are those of this sequence.
    pub fn from_edges(params: ProcessParams, edges: &[(usize, usize)]) -> Result<Self> {
        let mut state = Self::new(params)?;
        for &(u, v) in edges {
            if u >= params.n || v >= params.n || u == v {
                return Err(Error::InvalidParams(format!("invalid edge ({u}, {v})")));
            }
            let (u, v) = (u as u32, v as u32);
            if state.deg[u as usize] as usize >= params.d || state.deg[v as usize] as usize >= params.d {
                return Err(Error::InvalidParams(format!("edge ({u}, {v}) exceeds the degree cap")));
            }
            if state.are_adjacent(u as usize, v as usize) {
                return Err(Error::InvalidParams(format!("edge ({u}, {v}) repeated")));
            }
            state.add_edge(u, v);
        }
        Ok(state)
    }

    /// Replaces the random stream, keeping the graph.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = rng_from_seed(seed);
    }

    pub fn params(&self) -> &ProcessParams {
        &self.params
    }

    /// Number of edges added so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn degree(&self, v: usize) -> usize {
        self.deg[v] as usize
    }

    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.deg.iter().map(|&c| c as usize)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.params.d;
        self.nbrs[v * d..v * d + self.deg[v] as usize]
            .iter()
            .map(|&w| w as usize)
    }

    /// `S[j]` for `j in 0..d`.
    pub fn s(&self) -> &[u64] {
        &self.s
    }

    /// First step at which `S[l]` reached zero, for `l in 0..d-1`.
    pub fn hitting_times(&self) -> &[Option<u64>] {
        &self.hitting
    }

    /// Vertices of degree at most `d - 1`, in internal order.
    pub fn unsaturated(&self) -> impl Iterator<Item = usize> + '_ {
        self.unsat.iter().map(|&v| v as usize)
    }

    pub fn unsaturated_count(&self) -> usize {
        self.unsat.len()
    }

    pub fn is_stuck(&self) -> bool {
        self.stuck
    }

    pub fn is_saturated(&self) -> bool {
        self.step == self.params.max_edges()
    }

    pub fn are_adjacent(&self, u: usize, v: usize) -> bool {
        let (a, b) = if self.deg[u] <= self.deg[v] { (u, v) } else { (v, u) };
        let d = self.params.d;
        self.nbrs[a * d..a * d + self.deg[a] as usize].contains(&(b as u32))
    }

    /// Each edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.params.n).flat_map(move |u| self.neighbors(u).filter(move |&v| u < v).map(move |v| (u, v)))
    }

    /// Every valid pair `(u, v)` with `u < v`.
    pub fn valid_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, &u) in self.unsat.iter().enumerate() {
            for &v in &self.unsat[a + 1..] {
                if !self.are_adjacent(u as usize, v as usize) {
                    let (x, y) = (u.min(v) as usize, u.max(v) as usize);
                    out.push((x, y));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Adds one uniformly random valid edge. When no valid pair exists the
    /// state is marked stuck and left unchanged.
    pub fn step(&mut self) -> StepEvent {
        if self.stuck {
            return StepEvent::Stuck;
        }
        let Some((mut u, mut v)) = self.sample_pair() else {
            self.stuck = true;
            return StepEvent::Stuck;
        };
        if self.rng.random::<bool>() {
            std::mem::swap(&mut u, &mut v);
        }
        let deg_u_before = self.deg[u as usize] as usize;
        let deg_v_before = self.deg[v as usize] as usize;
        self.add_edge(u, v);
        StepEvent::EdgeAdded {
            u: u as usize,
            v: v as usize,
            deg_u_before,
            deg_v_before,
        }
    }

    fn sample_pair(&mut self) -> Option<(u32, u32)> {
        let m = self.unsat.len();
        if m < 2 {
            return None;
        }
        if m > ENUMERATION_THRESHOLD {
            let m = m as u32;
            for _ in 0..MAX_REJECTIONS {
                let a = self.rng.random_range(0..m);
                let mut b = self.rng.random_range(0..m - 1);
                if b >= a {
                    b += 1;
                }
                let (u, v) = (self.unsat[a as usize], self.unsat[b as usize]);
                if !self.are_adjacent(u as usize, v as usize) {
                    return Some((u, v));
                }
            }
        }
        self.sample_by_enumeration()
    }

    fn sample_by_enumeration(&mut self) -> Option<(u32, u32)> {
        let count = self.valid_pair_iter().count();
        if count == 0 {
            return None;
        }
        let k = self.rng.random_range(0..count as u64) as usize;
        self.valid_pair_iter().nth(k)
    }

    fn valid_pair_iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.unsat.iter().enumerate().flat_map(move |(a, &u)| {
            self.unsat[a + 1..]
                .iter()
                .filter(move |&&v| !self.are_adjacent(u as usize, v as usize))
                .map(move |&v| (u, v))
        })
    }

    fn add_edge(&mut self, u: u32, v: u32) {
        let d = self.params.d;
        self.step += 1;
        for (w, other) in [(u, v), (v, u)] {
            let w = w as usize;
            let c = self.deg[w] as usize;
            debug_assert!(c < d);
            self.nbrs[w * d + c] = other;
            self.deg[w] += 1;
            self.s[c] -= 1;
            if c + 1 < d {
                if self.s[c] == 0 && self.hitting[c].is_none() {
                    self.hitting[c] = Some(self.step);
                }
            } else {
                self.remove_unsaturated(w);
            }
        }
        debug_assert_eq!(
            self.s.iter().sum::<u64>(),
            d as u64 * self.params.n as u64 - 2 * self.step,
            "sum of S must equal dn - 2i"
        );
    }

    fn remove_unsaturated(&mut self, w: usize) {
        let slot = self.unsat_slot[w] as usize;
        let last = *self.unsat.last().expect("vertex was unsaturated");
        self.unsat.swap_remove(slot);
        if last as usize != w {
            self.unsat_slot[last as usize] = slot as u32;
        }
        self.unsat_slot[w] = NOT_UNSATURATED;
    }
}

/// `S` vector recorded at a scheduled step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub s: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub version: u32,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// `hitting_times[l]` is the first step with no vertex of degree `<= l`;
    /// `null` when the run got stuck first.
    pub hitting_times: Vec<Option<u64>>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_edges: u64,
    pub stuck: bool,
}

impl TrajectoryRecord {
    pub fn params(&self) -> ProcessParams {
        ProcessParams {
            n: self.n,
            d: self.d,
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Which steps a run records its `S` vector at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSchedule {
    Explicit(Vec<u64>),
    /// `K` steps whose distance to `floor(dn/2)` is geometrically spaced
    /// between `floor(dn/2)` (step 0) and 1.
    LogSpaced(usize),
}

impl CheckpointSchedule {
    pub fn resolve(&self, params: &ProcessParams) -> Result<Vec<u64>> {
        let max = params.max_edges();
        match self {
            CheckpointSchedule::Explicit(steps) => {
                if steps.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::InvalidParams("checkpoint steps must be sorted".into()));
                }
                if let Some(&last) = steps.last() {
                    if last > max {
                        return Err(Error::InvalidParams(format!(
                            "checkpoint {last} is past the final step {max}"
                        )));
                    }
                }
                let mut steps = steps.clone();
                steps.dedup();
                Ok(steps)
            }
            CheckpointSchedule::LogSpaced(count) => Ok(log_spaced_steps(0, max.saturating_sub(1), max, *count)),
        }
    }
}

/// `count` steps in `[lo, hi]` whose remaining distance to `end` is
/// geometrically spaced, deduplicated and sorted.
pub fn log_spaced_steps(lo: u64, hi: u64, end: u64, count: usize) -> Vec<u64> {
    if count == 0 || lo > hi || hi >= end {
        return Vec::new();
    }
    let far = (end - lo) as f64;
    let near = (end - hi) as f64;
    let mut out: Vec<u64> = (0..count)
        .map(|k| {
            let frac = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
            let remaining = (far.ln() + frac * (near.ln() - far.ln())).exp().round() as u64;
            end - remaining.clamp(end - hi, end - lo)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Runs the process to saturation or until stuck, recording `S` at each step
/// of `schedule`.
pub fn run(params: ProcessParams, schedule: &[u64]) -> Result<TrajectoryRecord> {
    run_observed(params, schedule, |_, _| {})
}

/// Like [`run`], calling `observer` with the state after every step.
pub fn run_observed<F>(params: ProcessParams, schedule: &[u64], mut observer: F) -> Result<TrajectoryRecord>
where
    F: FnMut(&ProcessState, &StepEvent),
{
    let schedule = CheckpointSchedule::Explicit(schedule.to_vec()).resolve(&params)?;
    let mut state = ProcessState::new(params)?;
    let max = params.max_edges();
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut pending = schedule.iter().copied().peekable();

    let mut record_due = |state: &ProcessState, checkpoints: &mut Vec<Checkpoint>| {
        while pending.peek() == Some(&state.step) {
            pending.next();
            checkpoints.push(Checkpoint {
                step: state.step,
                s: state.s.clone(),
            });
        }
    };

    record_due(&state, &mut checkpoints);
    while state.step < max {
        let event = state.step();
        observer(&state, &event);
        if event == StepEvent::Stuck {
            break;
        }
        record_due(&state, &mut checkpoints);
    }
    // A stuck graph stays frozen for the remaining steps.
    for step in pending {
        checkpoints.push(Checkpoint {
            step,
            s: state.s.clone(),
        });
    }

    Ok(TrajectoryRecord {
        version: TRAJECTORY_VERSION,
        n: params.n,
        d: params.d,
        seed: params.seed,
        hitting_times: state.hitting.clone(),
        checkpoints,
        final_edges: state.step,
        stuck: state.stuck,
    })
}

/// Edge counts by endpoint degree class, over edges whose endpoints both have
/// degree at most `d - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeClassCounts {
    /// `z[j1][j2]` for `j1 <= j2 < d`; entries below the diagonal stay zero.
    pub z: Vec<Vec<u64>>,
    pub total: u64,
}

pub fn edge_class_counts(state: &ProcessState) -> EdgeClassCounts {
    let d = state.params.d;
    let mut z = vec![vec![0u64; d]; d];
    let mut total = 0;
    for (u, v) in state.edges() {
        let (a, b) = (state.degree(u), state.degree(v));
        if a < d && b < d {
            z[a.min(b)][a.max(b)] += 1;
            total += 1;
        }
    }
    EdgeClassCounts { z, total }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: usize, d: usize, seed: u64) -> ProcessParams {
        ProcessParams::new(n, d, seed).unwrap()
    }

    #[test]
    fn new_process_is_empty() {
        let state = ProcessState::new(params(5, 2, 1)).unwrap();
        assert_eq!(state.s(), &[5, 5]);
        assert_eq!(state.step_count(), 0);
        assert_eq!(state.unsaturated_count(), 5);
        assert!(!state.is_stuck());

        let state = ProcessState::new(params(2, 1, 0)).unwrap();
        assert_eq!(state.s(), &[2]);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(matches!(ProcessParams::new(1, 1, 0), Err(Error::InvalidParams(_))));
        assert!(matches!(ProcessParams::new(5, 0, 0), Err(Error::InvalidParams(_))));
        assert!(matches!(ProcessParams::new(4, 4, 0), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn single_edge_saturates_pair() {
        let mut state = ProcessState::new(params(2, 1, 0)).unwrap();
        assert!(matches!(state.step(), StepEvent::EdgeAdded { .. }));
        assert_eq!(state.step(), StepEvent::Stuck);
        assert!(state.is_stuck());
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn valid_pairs_after_one_edge() {
        let state = ProcessState::from_edges(params(3, 2, 0), &[(0, 1)]).unwrap();
        assert_eq!(state.valid_pairs(), vec![(0, 2), (1, 2)]);
        assert_eq!(state.s(), &[1, 3]);
    }

    #[test]
    fn from_edges_rejects_bad_graphs() {
        let p = params(4, 1, 0);
        assert!(ProcessState::from_edges(p, &[(0, 1), (1, 2)]).is_err());
        assert!(ProcessState::from_edges(p, &[(0, 0)]).is_err());
        assert!(ProcessState::from_edges(params(4, 2, 0), &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn edge_classes_small_cases() {
        let empty = ProcessState::new(params(3, 2, 0)).unwrap();
        let counts = edge_class_counts(&empty);
        assert_eq!(counts.total, 0);

        let one = ProcessState::from_edges(params(3, 2, 0), &[(0, 1)]).unwrap();
        let counts = edge_class_counts(&one);
        assert_eq!(counts.z[1][1], 1);
        assert_eq!(counts.total, 1);

        // Path a-b-c: the middle vertex is saturated, so neither edge counts.
        let path = ProcessState::from_edges(params(3, 2, 0), &[(0, 1), (1, 2)]).unwrap();
        let brute: u64 = path
            .edges()
            .filter(|&(u, v)| path.degree(u) < 2 && path.degree(v) < 2)
            .count() as u64;
        assert_eq!(brute, 0);
        assert_eq!(edge_class_counts(&path).total, 0);
    }

    #[test]
    fn triangle_is_the_only_outcome_for_three_vertices() {
        for seed in 0..200 {
            let rec = run(params(3, 2, seed), &[]).unwrap();
            assert_eq!(rec.final_edges, 3);
            assert!(!rec.stuck);
            assert_eq!(rec.hitting_times, vec![Some(2)]);
        }
    }

    #[test]
    fn four_vertices_degree_one_always_perfect_matching() {
        for seed in 0..200 {
            let rec = run(params(4, 1, seed), &[]).unwrap();
            assert_eq!(rec.final_edges, 2);
            assert!(!rec.stuck);
        }
        let rec = run(params(2, 1, 3), &[]).unwrap();
        assert_eq!(rec.final_edges, 1);
    }

    #[test]
    fn checkpoints_recorded_and_frozen_when_stuck() {
        let rec = run(params(10, 2, 4), &[0, 3, 10]).unwrap();
        assert_eq!(
            rec.checkpoints[0],
            Checkpoint {
                step: 0,
                s: vec![10, 10]
            }
        );
        assert_eq!(rec.checkpoints.len(), 3);
        assert!(run(params(10, 2, 4), &[3, 1]).is_err());
        assert!(run(params(10, 2, 4), &[11]).is_err());

        // Stuck runs on (4, 2) (triangle plus isolated vertex) keep S frozen.
        let stuck = (0..500)
            .map(|seed| run(params(4, 2, seed), &[4]).unwrap())
            .find(|r| r.stuck)
            .expect("some run of (4, 2) gets stuck");
        assert_eq!(stuck.final_edges, 3);
        assert_eq!(stuck.checkpoints[0].step, 4);
        assert_eq!(stuck.checkpoints[0].s, vec![1, 1]);
        assert_eq!(stuck.hitting_times, vec![None]);
    }

    #[test]
    fn log_spaced_schedule_shape() {
        let p = params(1000, 3, 0);
        let steps = CheckpointSchedule::LogSpaced(20).resolve(&p).unwrap();
        assert_eq!(steps[0], 0);
        assert_eq!(*steps.last().unwrap(), 1499);
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert!(steps.len() <= 20);
    }

    #[test]
    fn trajectory_json_has_version_and_nulls() {
        let rec = run(params(4, 2, 1), &[]).unwrap();
        let json: serde_json::Value = serde_json::from_str(&rec.to_json().unwrap()).unwrap();
        assert_eq!(json["version"], 1);
        assert!(json["hitting_times"].is_array());
        let back: TrajectoryRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn counters_stay_consistent(n in 3usize..60, d in 1usize..5, seed in any::<u64>()) {
            prop_assume!(d < n);
            let p = params(n, d, seed);
            let mut state = ProcessState::new(p).unwrap();
            let mut prev = state.s().to_vec();
            loop {
                let event = state.step();
                let i = state.step_count();
                prop_assert_eq!(state.s().iter().sum::<u64>(), (d * n) as u64 - 2 * i);
                prop_assert_eq!(state.degrees().sum::<usize>() as u64, 2 * i);
                prop_assert!(state.degrees().all(|c| c <= d));
                prop_assert_eq!(state.unsaturated_count() as u64, state.s()[d - 1]);
                prop_assert!(state.unsaturated().all(|v| state.degree(v) < d));
                prop_assert!(state.s().windows(2).all(|w| w[0] <= w[1]));
                for (a, b) in prev.iter().zip(state.s()) {
                    prop_assert!(b <= a && a - b <= 2);
                }
                let z = edge_class_counts(&state);
                let s_top = state.s()[d - 1];
                prop_assert!(d as u64 * s_top >= (2 * z.total).max((d * n) as u64 - 2 * i));
                let y: Vec<u64> = (0..d).map(|j| state.degrees().filter(|&c| c == j).count() as u64).collect();
                for j in 0..d {
                    let incident: u64 = (0..=j).map(|k| z.z[k][j]).sum::<u64>() + (j..d).map(|k| z.z[j][k]).sum::<u64>();
                    prop_assert!(j as u64 * y[j] >= incident);
                }
                prev = state.s().to_vec();
                match event {
                    StepEvent::Stuck => break,
                    StepEvent::EdgeAdded { deg_u_before, deg_v_before, .. } => {
                        prop_assert!(deg_u_before < d && deg_v_before < d);
                    }
                }
            }
            prop_assert!(state.step_count() <= p.max_edges());
            let hit = state.hitting_times();
            if !state.is_stuck() || state.is_saturated() {
                let times: Vec<u64> = hit.iter().flatten().copied().collect();
                prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
            }
        }

        #[test]
        fn runs_are_deterministic(n in 3usize..200, d in 1usize..4, seed in any::<u64>()) {
            prop_assume!(d < n);
            let p = params(n, d, seed);
            let schedule = CheckpointSchedule::LogSpaced(8).resolve(&p).unwrap();
            prop_assert_eq!(run(p, &schedule).unwrap(), run(p, &schedule).unwrap());
        }
    }
}
