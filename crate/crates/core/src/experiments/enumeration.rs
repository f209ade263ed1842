//! Exact law of the process on tiny instances.
//!
//! Trajectories that reach the same edge set have the same future, so the
//! tree of all trajectories is folded layer by layer into a map from edge
//! bitmask to exact probability.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::process::ProcessParams;

pub const ENUMERATION_MAX_N: usize = 8;
pub const ENUMERATION_MAX_EDGES: u64 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistribution {
    pub n: usize,
    pub d: usize,
    /// `hitting_times[l]` maps `Some(step)` or `None` (never reached) to its probability.
    pub hitting_times: Vec<BTreeMap<Option<u64>, BigRational>>,
    pub final_edges: BTreeMap<u64, BigRational>,
    pub stuck: BigRational,
}

#[derive(Serialize)]
struct Entry<K> {
    value: K,
    probability: String,
    approx: f64,
}

fn entries<K: Copy>(map: &BTreeMap<K, BigRational>) -> Vec<Entry<K>> {
    map.iter()
        .map(|(&value, p)| Entry {
            value,
            probability: p.to_string(),
            approx: p.to_f64().unwrap_or(f64::NAN),
        })
        .collect()
}

impl ExactDistribution {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        let hitting: Vec<_> = self.hitting_times.iter().map(entries).collect();
        Ok(serde_json::json!({
            "n": self.n,
            "d": self.d,
            "hitting_times": hitting,
            "final_edges": entries(&self.final_edges),
            "stuck": { "probability": self.stuck.to_string(), "approx": self.stuck.to_f64() },
        }))
    }
}

impl fmt::Display for ExactDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "exact law for n = {}, d = {}", self.n, self.d)?;
        for (l, dist) in self.hitting_times.iter().enumerate() {
            writeln!(f, "T_{l}:")?;
            for (t, p) in dist {
                let label = t.map_or("never".to_string(), |t| t.to_string());
                writeln!(f, "  {label:>6}  {p:>14}  {:.6}", p.to_f64().unwrap_or(f64::NAN))?;
            }
        }
        writeln!(f, "final edges:")?;
        for (e, p) in &self.final_edges {
            writeln!(f, "  {e:>6}  {p:>14}  {:.6}", p.to_f64().unwrap_or(f64::NAN))?;
        }
        write!(
            f,
            "P[stuck] = {} ({:.6})",
            self.stuck,
            self.stuck.to_f64().unwrap_or(f64::NAN)
        )
    }
}

pub fn exact_enumeration(n: usize, d: usize) -> Result<ExactDistribution> {
    let params = ProcessParams::new(n, d, 0)?;
    let max = params.max_edges();
    if n > ENUMERATION_MAX_N || max > ENUMERATION_MAX_EDGES {
        return Err(Error::Guard(format!(
            "exact enumeration needs n <= {ENUMERATION_MAX_N} and dn/2 <= {ENUMERATION_MAX_EDGES}, got n = {n}, d = {d}"
        )));
    }

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let degrees = |mask: u32| {
        let mut deg = vec![0usize; n];
        for (b, &(u, v)) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                deg[u] += 1;
                deg[v] += 1;
            }
        }
        deg
    };
    let levels = d - 1;

    let mut layer: BTreeMap<u32, BigRational> = BTreeMap::from([(0, BigRational::one())]);
    // P[T_l <= step], per step.
    let mut reached: Vec<Vec<BigRational>> = vec![Vec::new(); levels];
    let record_reached = |layer: &BTreeMap<u32, BigRational>, reached: &mut Vec<Vec<BigRational>>| {
        for (l, acc) in reached.iter_mut().enumerate() {
            let p = layer
                .iter()
                .filter(|(&mask, _)| degrees(mask).iter().all(|&g| g > l))
                .fold(BigRational::zero(), |a, (_, p)| a + p);
            acc.push(p);
        }
    };
    record_reached(&layer, &mut reached);

    for _ in 0..max {
        let mut next: BTreeMap<u32, BigRational> = BTreeMap::new();
        for (mask, p) in &layer {
            let deg = degrees(*mask);
            let valid: Vec<usize> = pairs
                .iter()
                .enumerate()
                .filter(|&(b, &(u, v))| mask >> b & 1 == 0 && deg[u] < d && deg[v] < d)
                .map(|(b, _)| b)
                .collect();
            if valid.is_empty() {
                *next.entry(*mask).or_insert_with(BigRational::zero) += p;
                continue;
            }
            let share = p / BigRational::from_integer(BigInt::from(valid.len()));
            for b in valid {
                *next.entry(mask | 1 << b).or_insert_with(BigRational::zero) += &share;
            }
        }
        layer = next;
        record_reached(&layer, &mut reached);
    }

    let hitting_times = reached
        .iter()
        .map(|cum| {
            let mut dist = BTreeMap::new();
            for step in 0..cum.len() {
                let prev = if step == 0 {
                    BigRational::zero()
                } else {
                    cum[step - 1].clone()
                };
                let p = &cum[step] - prev;
                if !p.is_zero() {
                    dist.insert(Some(step as u64), p);
                }
            }
            let never = BigRational::one() - cum.last().expect("at least one layer");
            if !never.is_zero() {
                dist.insert(None, never);
            }
            dist
        })
        .collect();

    let mut final_edges: BTreeMap<u64, BigRational> = BTreeMap::new();
    for (mask, p) in &layer {
        *final_edges
            .entry(mask.count_ones() as u64)
            .or_insert_with(BigRational::zero) += p;
    }
    let stuck = final_edges
        .iter()
        .filter(|(&e, _)| e < max)
        .fold(BigRational::zero(), |a, (_, p)| a + p);

    Ok(ExactDistribution {
        n,
        d,
        hitting_times,
        final_edges,
        stuck,
    })
}
