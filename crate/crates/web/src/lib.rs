//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each exported function returns a JSON string. The `*_json` functions hold
//! the logic and are plain Rust so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dprocess::experiments::scale_hitting_time;
use dprocess::process::{log_spaced_steps, run, ProcessParams};
use dprocess::rng::mix;
use dprocess::stats::{exp_cdf, ks_statistic, mean};
use dprocess::theory::{eval_theory, eval_theory_at_step, MIN_GAP};
use dprocess::Result;

/// Largest n the page will simulate, to keep the tab responsive.
pub const MAX_N: usize = 200_000;
pub const MAX_TRIALS: usize = 5_000;

#[derive(Serialize)]
struct Curves {
    d: usize,
    t: Vec<f64>,
    /// `s[j][k]` at `t[k]`.
    s: Vec<Vec<f64>>,
}

pub fn theory_curves_json(d: usize, points: usize) -> Result<String> {
    let points = points.clamp(2, 4000);
    let end = d as f64 / 2.0 - MIN_GAP;
    let t: Vec<f64> = (0..points).map(|k| end * k as f64 / (points - 1) as f64).collect();
    let mut s = vec![Vec::with_capacity(points); d];
    for &tk in &t {
        let eval = eval_theory(d, tk)?;
        for (col, v) in s.iter_mut().zip(eval.s) {
            col.push(v);
        }
    }
    Ok(serde_json::to_string(&Curves { d, t, s })?)
}

#[derive(Serialize)]
struct Trajectory {
    n: usize,
    d: usize,
    seed: u64,
    final_edges: u64,
    stuck: bool,
    hitting_times: Vec<Option<u64>>,
    steps: Vec<u64>,
    /// Observed `S[j]` at each step.
    observed: Vec<Vec<u64>>,
    /// `n s_j(i/n)` at each step.
    predicted: Vec<Vec<f64>>,
}

fn check_n(n: usize) -> Result<()> {
    if n > MAX_N {
        return Err(dprocess::Error::InvalidParams(format!(
            "n is capped at {MAX_N} in the browser"
        )));
    }
    Ok(())
}

pub fn simulate_json(n: usize, d: usize, seed: u64, checkpoints: usize) -> Result<String> {
    check_n(n)?;
    let params = ProcessParams::new(n, d, seed)?;
    let end = params.max_edges();
    // Evenly spaced for the bulk, geometrically spaced near the end.
    let count = checkpoints.clamp(4, 2000) as u64;
    let mut schedule: Vec<u64> = (0..count / 2).map(|k| k * end / (count / 2)).collect();
    schedule.extend(log_spaced_steps(
        0,
        end.saturating_sub(1),
        end,
        (count - count / 2) as usize,
    ));
    schedule.sort_unstable();
    schedule.dedup();
    let record = run(params, &schedule)?;
    let mut observed = vec![Vec::new(); d];
    let mut predicted = vec![Vec::new(); d];
    let mut steps = Vec::new();
    for cp in &record.checkpoints {
        // The deterministic curve ends where 2i reaches dn.
        let Ok(eval) = eval_theory_at_step(n as u64, d, cp.step) else {
            continue;
        };
        steps.push(cp.step);
        for j in 0..d {
            observed[j].push(cp.s[j]);
            predicted[j].push(eval.ns[j]);
        }
    }
    Ok(serde_json::to_string(&Trajectory {
        n,
        d,
        seed,
        final_edges: record.final_edges,
        stuck: record.stuck,
        hitting_times: record.hitting_times,
        steps,
        observed,
        predicted,
    })?)
}

#[derive(Serialize)]
struct HittingSample {
    n: usize,
    d: usize,
    l: usize,
    trials: usize,
    stuck: usize,
    values: Vec<f64>,
    mean: Option<f64>,
    ks_exp: Option<f64>,
}

/// Scaled hitting times `V_l` over `trials` runs; stuck runs are counted and left out.
pub fn hitting_sample_json(n: usize, d: usize, l: usize, trials: usize, seed: u64) -> Result<String> {
    check_n(n)?;
    ProcessParams::new(n, d, seed)?;
    if d < 2 || l > d - 2 {
        return Err(dprocess::Error::InvalidParams(format!(
            "need d >= 2 and l <= d - 2 (d = {d}, l = {l})"
        )));
    }
    let trials = trials.clamp(1, MAX_TRIALS);
    let mut values = Vec::with_capacity(trials);
    let mut stuck = 0;
    for i in 0..trials {
        let record = run(ProcessParams::new(n, d, mix(seed, i as u64))?, &[])?;
        if record.stuck {
            stuck += 1;
            continue;
        }
        if let Some(t) = record.hitting_times.get(l).copied().flatten() {
            values.push(scale_hitting_time(t, l, n as u64, d)?);
        }
    }
    let (m, ks) = if values.is_empty() {
        (None, None)
    } else {
        (Some(mean(&values)), Some(ks_statistic(&values, exp_cdf)?))
    };
    Ok(serde_json::to_string(&HittingSample {
        n,
        d,
        l,
        trials,
        stuck,
        values,
        mean: m,
        ks_exp: ks,
    })?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn theory_curves(d: usize, points: usize) -> std::result::Result<String, JsError> {
    js(theory_curves_json(d, points))
}

#[wasm_bindgen]
pub fn simulate(n: usize, d: usize, seed: u64, checkpoints: usize) -> std::result::Result<String, JsError> {
    js(simulate_json(n, d, seed, checkpoints))
}

#[wasm_bindgen]
pub fn hitting_sample(n: usize, d: usize, l: usize, trials: usize, seed: u64) -> std::result::Result<String, JsError> {
    js(hitting_sample_json(n, d, l, trials, seed))
}
