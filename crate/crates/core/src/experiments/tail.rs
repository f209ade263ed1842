//! The binary sequence of the last phase: one bit per picked vertex, set when
//! the vertex had degree exactly `k` just before its edge was added.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::process::{run_observed, ProcessParams, StepEvent};
use crate::theory::phase_bounds;

/// Bit string, serialized as a string of `0` and `1`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bits(pub Vec<bool>);

impl Bits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Ones among the first `len` bits.
    pub fn ones_in_prefix(&self, len: usize) -> usize {
        self.0.iter().take(len).filter(|&&b| b).count()
    }

    /// Number of positions `p` with bits `p` and `p + 1` both set.
    pub fn adjacent_ones(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] && w[1]).count()
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<std::result::Result<_, _>>()
            .map(Bits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSequence {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub k: usize,
    /// `i_before(k)`.
    pub t_start: u64,
    /// Last step of the run.
    pub t_end: u64,
    pub bits: Bits,
    /// Vertices of degree at most `k` at `t_start`; each contributes one set bit.
    pub l: u64,
    /// `floor(dn/2) - i_before(k)`.
    pub j: u64,
    pub stuck: bool,
}

/// Runs the process and records the degree-`k` indicator of every endpoint
/// picked after step `i_before(k)`, endpoints in the order the step chose them.
pub fn extract_tail_sequence(params: ProcessParams, k: usize) -> Result<TailSequence> {
    params.validate()?;
    let (n, d) = (params.n, params.d);
    if k + 2 > d {
        return Err(Error::InvalidParams(format!("k = {k} must be at most d - 2")));
    }
    let bounds = phase_bounds(n as u64, d)?;
    let start = bounds.i_before[k];
    if start < 0 {
        return Err(Error::Domain(format!(
            "i_before({k}) = {start} is negative for n = {n}"
        )));
    }
    let t_start = start as u64;
    let mut l = (t_start == 0).then_some(n as u64);
    let mut bits = Vec::new();
    let record = run_observed(params, &[], |state, event| {
        let step = state.step_count();
        if step == t_start {
            l = Some(state.s()[k]);
        }
        if let StepEvent::EdgeAdded {
            deg_u_before,
            deg_v_before,
            ..
        } = *event
        {
            if step > t_start {
                bits.push(deg_u_before == k);
                bits.push(deg_v_before == k);
            }
        }
    })?;
    let Some(l) = l else {
        return Err(Error::Guard(format!(
            "run got stuck after {} edges, before the window starts at {t_start}",
            record.final_edges
        )));
    };
    Ok(TailSequence {
        n,
        d,
        seed: params.seed,
        k,
        t_start,
        t_end: record.final_edges,
        bits: Bits(bits),
        l,
        j: bounds.final_step - t_start,
        stuck: record.stuck,
    })
}

/// `C(m, l) / C(total, l)`, the chance that `l` marked positions placed
/// uniformly among `total` all fall in the first `m`.
pub fn binomial_ratio(m: u64, l: u64, total: u64) -> Result<f64> {
    if m > total || l > total {
        return Err(Error::InvalidParams(format!(
            "need m, l <= total, got m = {m}, l = {l}, total = {total}"
        )));
    }
    if l > m {
        return Ok(0.0);
    }
    Ok((0..l).map(|i| (m - i) as f64 / (total - i) as f64).product())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailLawReport {
    pub r: f64,
    pub used: usize,
    /// Sequences with `L = 0` or from stuck runs.
    pub skipped: usize,
    pub mean_l: f64,
    /// Fraction of sequences whose `L` ones all fall before the cut.
    pub empirical: f64,
    /// Mean of `C(2(t_end - t_start), L) / C(2J, L)` with `t_end` the cut step.
    pub q_prediction: f64,
    pub exponential: f64,
    pub gap_empirical_q: f64,
    pub gap_empirical_exp: f64,
    pub gap_q_exp: f64,
}

impl TailLawReport {
    pub fn max_gap(&self) -> f64 {
        self.gap_empirical_q.max(self.gap_empirical_exp).max(self.gap_q_exp)
    }
}

/// Compares the chance that `S_k` is zero at `floor(dn/2 - rJ/L)` across the
/// sequences with the uniform-placement prediction and `e^-r`.
pub fn tail_law_report(sequences: &[TailSequence], r: f64) -> Result<TailLawReport> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParams(format!("r = {r} must be positive")));
    }
    if sequences.is_empty() {
        return Err(Error::EmptyInput("no tail sequences".into()));
    }
    let usable: Vec<&TailSequence> = sequences.iter().filter(|s| s.l > 0 && !s.stuck).collect();
    if usable.is_empty() {
        return Err(Error::Degenerate(
            "every sequence has L = 0 or comes from a stuck run".into(),
        ));
    }
    let mut hits = 0usize;
    let mut q = 0.0;
    for s in &usable {
        let cut = (s.d as f64 * s.n as f64 / 2.0 - r * s.j as f64 / s.l as f64).floor();
        let m = if cut <= s.t_start as f64 {
            0
        } else {
            2 * (cut as u64 - s.t_start).min(s.j)
        };
        hits += (s.bits.ones_in_prefix(m as usize) as u64 == s.l) as usize;
        q += binomial_ratio(m, s.l, 2 * s.j)?;
    }
    let count = usable.len() as f64;
    let empirical = hits as f64 / count;
    let q_prediction = q / count;
    let exponential = (-r).exp();
    Ok(TailLawReport {
        r,
        used: usable.len(),
        skipped: sequences.len() - usable.len(),
        mean_l: usable.iter().map(|s| s.l as f64).sum::<f64>() / count,
        empirical,
        q_prediction,
        exponential,
        gap_empirical_q: (empirical - q_prediction).abs(),
        gap_empirical_exp: (empirical - exponential).abs(),
        gap_q_exp: (q_prediction - exponential).abs(),
    })
}
