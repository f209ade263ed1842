//! Acceptance criteria, one line per criterion.
//!
//! Run with `cargo test -p dprocess --test acceptance`; numeric arguments
//! select a subset, e.g. `-- 2 5`.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_traits::ToPrimitive;

use dprocess::experiments::{
    binomial_ratio, exact_enumeration, extract_tail_sequence, simulate_rows, tail_law_report, CheckpointPolicy,
    ExperimentConfig, ExperimentPlan, ResultRow,
};
use dprocess::process::{run, run_observed, ProcessParams, ProcessState, StepEvent};
use dprocess::rng::mix;
use dprocess::stats::{
    chi_square_gof, chi_square_uniform, exp_cdf, independence_report, ks_statistic, IndependenceConfig, Sample,
};
use dprocess::theory::{eval_theory, eval_theory_gap, ode_crosscheck, ode_solve, s_asymptotic, Tolerances};
use dprocess::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

/// The first `count` saturated rows, taking trial indices in order.
fn saturated_rows(n: usize, d: usize, count: usize, master_seed: u64, r_grid: Vec<f64>) -> Result<Vec<ResultRow>> {
    let mut config = ExperimentConfig::new(n, d, 1, master_seed);
    config.checkpoints = CheckpointPolicy::None;
    config.r_grid = r_grid;
    let plan = ExperimentPlan::new(&config)?;
    let mut rows = Vec::with_capacity(count);
    let mut next = 0u64;
    while rows.len() < count {
        let batch: Vec<u64> = (next..next + (count - rows.len()) as u64 + 16).collect();
        next = *batch.last().unwrap() + 1;
        rows.extend(plan.run_trials(&batch)?.into_iter().filter(|r| !r.stuck));
    }
    rows.truncate(count);
    Ok(rows)
}

fn column(rows: &[ResultRow], l: usize) -> Vec<f64> {
    rows.iter()
        .map(|r| r.scaled[l].expect("saturated run has every hitting time"))
        .collect()
}

const LIMIT_TRIALS: usize = 2000;
const LIMIT_REPS: u64 = 5;
const LIMIT_SIZES: [usize; 3] = [1_000, 10_000, 100_000];

/// d = 2 rows for the limit-law criteria, per size and repetition.
fn limit_law_rows() -> &'static BTreeMap<(usize, u64), Vec<ResultRow>> {
    static DATA: OnceLock<BTreeMap<(usize, u64), Vec<ResultRow>>> = OnceLock::new();
    DATA.get_or_init(|| {
        let mut data = BTreeMap::new();
        for n in LIMIT_SIZES {
            for rep in 0..LIMIT_REPS {
                let rows = saturated_rows(n, 2, LIMIT_TRIALS, 7000 + rep, vec![0.5, 1.0, 2.0]).expect("simulation");
                data.insert((n, rep), rows);
            }
        }
        data
    })
}

fn criterion_1() -> Result<Outcome> {
    let (n, d) = (1000, 3);
    let mut checked = 0u64;
    let mut bad = 0u64;
    for trial in 0..100 {
        let params = ProcessParams::new(n, d, mix(1, trial))?;
        let start = ProcessState::new(params)?;
        let mut check = |state: &ProcessState| {
            checked += 1;
            let sum: u64 = state.s().iter().sum();
            bad += (sum != (d * n) as u64 - 2 * state.step_count()) as u64;
        };
        check(&start);
        run_observed(params, &[], |state, _| check(state))?;
    }
    outcome(bad == 0, format!("{checked} states checked, {bad} mismatches"))
}

fn criterion_2() -> Result<Outcome> {
    let params = ProcessParams::new(6, 2, 0)?;
    let base = ProcessState::from_edges(params, &[(0, 1), (2, 3)])?;
    let pairs = base.valid_pairs();
    let mut counts = vec![0u64; pairs.len()];
    for replay in 0..100_000u64 {
        let mut state = base.clone();
        state.reseed(mix(2, replay));
        match state.step() {
            StepEvent::EdgeAdded { u, v, .. } => {
                let key = (u.min(v), u.max(v));
                let slot = pairs.iter().position(|&p| p == key).expect("sampled pair is valid");
                counts[slot] += 1;
            }
            StepEvent::Stuck => unreachable!("state has valid pairs"),
        }
    }
    let report = chi_square_uniform(&counts, 1e-3)?;
    outcome(
        report.pass,
        format!(
            "{} valid pairs, chi2 = {:.3}, p = {:.4} (level 1e-3)",
            pairs.len(),
            report.statistic,
            report.p_value.unwrap_or(f64::NAN)
        ),
    )
}

fn gof<K: Ord + Copy>(observed: &BTreeMap<K, u64>, exact: &BTreeMap<K, f64>) -> Result<(bool, f64)> {
    let keys: Vec<K> = exact
        .keys()
        .chain(observed.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let counts: Vec<u64> = keys.iter().map(|k| observed.get(k).copied().unwrap_or(0)).collect();
    let probs: Vec<f64> = keys.iter().map(|k| exact.get(k).copied().unwrap_or(0.0)).collect();
    let report = chi_square_gof(&counts, &probs, 1e-3)?;
    Ok((report.pass, report.p_value.unwrap_or(f64::NAN)))
}

fn to_f64<K: Ord + Copy>(m: &BTreeMap<K, num_rational::BigRational>) -> BTreeMap<K, f64> {
    m.iter()
        .map(|(k, p)| (*k, p.to_f64().expect("probability fits f64")))
        .collect()
}

fn criterion_3() -> Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for (n, d) in [(3, 2), (4, 2), (4, 1), (5, 2)] {
        let exact = exact_enumeration(n, d)?;
        let mut hitting: Vec<BTreeMap<Option<u64>, u64>> = vec![BTreeMap::new(); d - 1];
        let mut finals: BTreeMap<u64, u64> = BTreeMap::new();
        for trial in 0..100_000 {
            let rec = run(ProcessParams::new(n, d, mix(3 + n as u64 * 10 + d as u64, trial))?, &[])?;
            for (l, t) in rec.hitting_times.iter().enumerate() {
                *hitting[l].entry(*t).or_default() += 1;
            }
            *finals.entry(rec.final_edges).or_default() += 1;
        }
        let mut ps = Vec::new();
        for (l, obs) in hitting.iter().enumerate() {
            let (ok, p) = gof(obs, &to_f64(&exact.hitting_times[l]))?;
            pass &= ok;
            ps.push(format!("T_{l} p={p:.3}"));
        }
        let (ok, p) = gof(&finals, &to_f64(&exact.final_edges))?;
        pass &= ok;
        ps.push(format!("edges p={p:.3}"));
        notes.push(format!("({n},{d}): {}", ps.join(" ")));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_4() -> Result<Outcome> {
    let tol = Tolerances::default();
    let mut worst8: f64 = 0.0;
    let mut worst7: f64 = 0.0;
    let mut pass = true;
    let mut worst_ode: f64 = 0.0;
    for d in 2..=6usize {
        let half = d as f64 / 2.0;
        for k in 0..1000 {
            let t = (half - 1e-6) * k as f64 / 999.0;
            let eval = eval_theory(d, t)?;
            worst8 = worst8.max(eval.residual_eq8 / d as f64);
            worst7 = worst7.max(eval.residual_eq7);
            pass &= eval.check(&tol).is_ok();
        }
        let grid: Vec<f64> = (0..=200).map(|k| (half - 0.05) * k as f64 / 200.0).collect();
        let ode = ode_solve(d, &grid, 1e-4)?;
        for (row, &t) in ode.iter().zip(&grid) {
            let exact = eval_theory(d, t)?;
            for (a, b) in row.iter().zip(&exact.s) {
                worst_ode = worst_ode.max((a - b).abs());
            }
        }
        ode_crosscheck(d, &grid, 1e-4)?;
    }
    pass &= worst8 < 1e-12 && worst7 < 1e-10 && worst_ode < 1e-6;
    outcome(
        pass,
        format!(
            "max eq8 residual / d = {worst8:.2e}, max eq7 residual = {worst7:.2e}, max ODE error = {worst_ode:.2e}"
        ),
    )
}

fn criterion_5() -> Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for d in 2..=4usize {
        let ratio = |gap: f64| -> Result<Vec<f64>> {
            let eval = eval_theory_gap(d, gap)?;
            Ok((0..d).map(|j| eval.s[j] / s_asymptotic(d, j, gap)).collect())
        };
        let (coarse, fine) = (ratio(1e-6)?, ratio(1e-9)?);
        for j in 0..d {
            let in_band = (0.6..=1.4).contains(&coarse[j]);
            let tightens = (fine[j] - 1.0).abs() <= (coarse[j] - 1.0).abs();
            pass &= in_band && tightens;
        }
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
        notes.push(format!("d={d} [{}] -> [{}]", fmt(&coarse), fmt(&fine)));
    }
    outcome(pass, format!("ratios at gap 1e-6 -> 1e-9: {}", notes.join("; ")))
}

fn criterion_6() -> Result<Outcome> {
    let mut config = ExperimentConfig::new(100_000, 3, 200, 6);
    config.r_grid = Vec::new();
    let plan = ExperimentPlan::new(&config)?;
    let rows = plan.run_trials(&(0..200).collect::<Vec<_>>())?;
    let mut checked = 0;
    let mut violating = 0;
    let mut worst: f64 = 0.0;
    for row in &rows {
        for v in row
            .envelope_violations
            .iter()
            .filter(|v| v.phase == dprocess::theory::Phase::First)
        {
            checked += (v.checkpoints > 0) as usize;
            violating += (v.violations > 0) as usize;
            worst = worst.max(v.max_normalized_deviation);
        }
    }
    let rate = violating as f64 / rows.len() as f64;
    outcome(
        checked == rows.len() && rate <= 0.05,
        format!(
            "{violating}/{} runs violate E_first (rate {rate:.3}, limit 0.05), max |S - ns|/E = {worst:.3}",
            rows.len()
        ),
    )
}

fn criterion_7() -> Result<Outcome> {
    let data = limit_law_rows();
    let mut medians = Vec::new();
    for n in LIMIT_SIZES {
        let mut ks: Vec<f64> = (0..LIMIT_REPS)
            .map(|rep| ks_statistic(&column(&data[&(n, rep)], 0), exp_cdf))
            .collect::<Result<_>>()?;
        ks.sort_by(f64::total_cmp);
        medians.push(ks[ks.len() / 2]);
    }
    let sample = column(&data[&(100_000, 0)], 0);
    let mean = Sample::new(sample.clone())?.mean();
    let ks = ks_statistic(&sample, exp_cdf)?;
    let a = (0.6..=1.4).contains(&mean);
    let b = ks <= 0.15;
    let c = medians.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        a && b && c,
        format!(
            "(a) mean V_0 = {mean:.4} in [0.6, 1.4]: {a}; (b) KS = {ks:.4} <= 0.15: {b}; (c) median KS {:.4} / {:.4} / {:.4} non-increasing: {c}",
            medians[0], medians[1], medians[2]
        ),
    )
}

/// All runs count here: the probe event is unconditional, and a stuck run
/// never brings `S_0` to zero.
fn criterion_8() -> Result<Outcome> {
    let mut config = ExperimentConfig::new(100_000, 2, 2000, 8);
    config.checkpoints = CheckpointPolicy::None;
    config.r_grid = vec![0.5, 1.0, 2.0];
    let rows = simulate_rows(&config)?;
    let stuck = rows.iter().filter(|r| r.stuck).count();
    let mut pass = true;
    let mut notes = Vec::new();
    for r in [0.5, 1.0, 2.0] {
        let hits = rows
            .iter()
            .filter(|row| row.zero_at_i_of_r.iter().any(|p| p.r == r && p.l == 0 && p.zero))
            .count();
        let freq = hits as f64 / rows.len() as f64;
        let expected = (-r).exp();
        pass &= (freq - expected).abs() <= 0.07;
        notes.push(format!("r={r}: {freq:.4} vs {expected:.4}"));
    }
    outcome(
        pass,
        format!(
            "{} ({} runs, {stuck} stuck, tolerance 0.07)",
            notes.join(", "),
            rows.len()
        ),
    )
}

fn criterion_9() -> Result<Outcome> {
    let rows = saturated_rows(100_000, 3, 2000, 9, Vec::new())?;
    let x = Sample::new(column(&rows, 0))?;
    let y = Sample::new(column(&rows, 1))?;
    let report = independence_report(&x, &y, &IndependenceConfig::default())?;
    outcome(
        report.pass,
        format!(
            "corr {:.4} (p {:.3}), joint CDF gap {:.4} (p {:.3}), level 0.01",
            report.correlation.statistic,
            report.correlation.p_value.unwrap_or(f64::NAN),
            report.joint_cdf.statistic,
            report.joint_cdf.p_value.unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_10() -> Result<Outcome> {
    let (l, j) = (20u64, 1000u64);
    let mut pass = true;
    let mut notes = Vec::new();
    for r in [0.5, 1.0] {
        let cut = 2 * j - 2 * (r * j as f64 / l as f64).ceil() as u64;
        let q = binomial_ratio(cut, l, 2 * j)?;
        let e = (-r).exp();
        pass &= (q - e).abs() <= 0.02 * e;
        notes.push(format!(
            "r={r}: {q:.4} vs {e:.4} (abs {:.4}, rel {:.1}%)",
            (q - e).abs(),
            100.0 * (q - e).abs() / e
        ));
    }
    let sequences = (0..500u64)
        .map(|i| extract_tail_sequence(ProcessParams::new(100_000, 2, mix(10, i))?, 0))
        .collect::<Result<Vec<_>>>()?;
    let report = tail_law_report(&sequences, 1.0)?;
    pass &= report.max_gap() <= 0.1;
    notes.push(format!(
        "process: empirical {:.4}, Q {:.4}, e^-1 {:.4}, max gap {:.4} ({} used, mean L {:.1})",
        report.empirical,
        report.q_prediction,
        report.exponential,
        report.max_gap(),
        report.used,
        report.mean_l
    ));
    outcome(pass, notes.join("; "))
}

type Criterion = (u32, &'static str, Duration, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 10] = [
        (1, "exact counter identity", Duration::from_secs(5), criterion_1),
        (2, "sampler uniformity", Duration::from_secs(5), criterion_2),
        (3, "oracle equivalence", Duration::from_secs(60), criterion_3),
        (4, "theory solver", Duration::from_secs(30), criterion_4),
        (5, "asymptotic consistency", Duration::from_secs(5), criterion_5),
        (6, "first-phase envelopes", minutes(10), criterion_6),
        (7, "limit law", minutes(30), criterion_7),
        (8, "zero-probe frequencies", minutes(30), criterion_8),
        (9, "independence of V_0, V_1", minutes(30), criterion_9),
        (10, "tail law", minutes(30), criterion_10),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed < budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as u32;
        println!(
            "criterion {id:>2} {} {name}: {detail} [{:.1}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
