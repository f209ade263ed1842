//! Deterministic approximations to the scaled counters.
//!
//! With `t = i / n`, the functions `y_j(t)` and `s_j(t) = y_0 + ... + y_j`
//! approximate `Y_j / n` (vertices of degree exactly `j`) and `S_j / n`. They
//! solve
//!
//! ```text
//! ds_j/dt = -2 y_j / s_{d-1},     s_j(0) = 1,
//! ```
//!
//! whose solution is `y_j = y_0 u^j / j!` with `u = -ln y_0`, where `u` is the
//! root of
//!
//! ```text
//! f(u) = e^{-u} * sum_{j<d} (d - j) u^j / j! = d - 2t.
//! ```
//!
//! Everything here is parameterized by the gap `d - 2t` rather than by `t`:
//! near the end of the process the gap is `(dn - 2i) / n`, which is exact in
//! integers, while `d - 2t` computed from a rounded `t` would cancel.
//!
//! The solver works in `u` and in log space. `f'(u) = -e^{-u} sum_{j<d} u^j/j!`
//! so `f` is strictly decreasing, and `ln f` stays representable long after
//! `y_0` itself underflows.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// `t >= d/2 - 1e-15` is refused by the `t`-based entry points.
pub const MIN_GAP: f64 = 2e-15;

/// Above this `u` the `y_j` are evaluated as `exp(j ln u - u - ln j!)`.
const LOG_DOMAIN_U: f64 = 30.0;

/// Residual tolerances checked by [`TheoryEval::check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// The residual of `sum (d-j) y_j = d - 2t` must be below `eq8_per_d * d`.
    pub eq8_per_d: f64,
    /// The residual of `sum s_j = d - 2t`.
    pub eq7: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eq8_per_d: 1e-12,
            eq7: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Y0Solution {
    pub y0: f64,
    /// `-ln y0`.
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryEval {
    pub d: usize,
    pub t: f64,
    /// `d - 2t`.
    pub gap: f64,
    pub u: f64,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    /// `|sum (d-j) y_j - (d - 2t)|`.
    pub residual_eq8: f64,
    /// `|sum s_j - (d - 2t)|`.
    pub residual_eq7: f64,
}

impl TheoryEval {
    pub fn check(&self, tol: &Tolerances) -> Result<()> {
        if self.residual_eq8 >= tol.eq8_per_d * self.d as f64 || self.residual_eq7 >= tol.eq7 {
            return Err(Error::Numerical(format!(
                "residuals too large at t = {}: {:e}, {:e}",
                self.t, self.residual_eq8, self.residual_eq7
            )));
        }
        Ok(())
    }
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParams("d must be at least 1".into()));
    }
    Ok(())
}

fn gap_from_t(d: usize, t: f64) -> Result<f64> {
    check_d(d)?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("t = {t} must be in [0, d/2)")));
    }
    let gap = d as f64 - 2.0 * t;
    if gap < MIN_GAP {
        return Err(Error::Domain(format!("t = {t} is at or beyond d/2 - 1e-15")));
    }
    Ok(gap)
}

fn check_gap(d: usize, gap: f64) -> Result<()> {
    check_d(d)?;
    if !gap.is_finite() || gap > d as f64 {
        return Err(Error::Domain(format!("d - 2t = {gap} must lie in (0, {d}]")));
    }
    if gap < f64::MIN_POSITIVE {
        return Err(Error::Domain(format!("d - 2t = {gap:e} must be positive")));
    }
    Ok(())
}

/// `ln sum_{j<d} w(j) u^j / j!` for `u >= 0`.
fn ln_weighted_series(d: usize, u: f64, weight: impl Fn(usize) -> f64) -> f64 {
    if u == 0.0 {
        return weight(0).ln();
    }
    let ln_u = u.ln();
    let terms: Vec<f64> = (0..d)
        .map(|j| weight(j).ln() + j as f64 * ln_u - ln_factorial(j as u64))
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|a| (a - max).exp()).sum::<f64>().ln()
}

/// `ln f(u) - ln gap` and its derivative in `u`.
fn log_residual(d: usize, u: f64, ln_gap: f64) -> (f64, f64) {
    let ln_poly = ln_weighted_series(d, u, |j| (d - j) as f64);
    let ln_sat = ln_weighted_series(d, u, |_| 1.0);
    (-u + ln_poly - ln_gap, -(ln_sat - ln_poly).exp())
}

/// Solves for `y_0(t)`.
pub fn solve_y0(d: usize, t: f64) -> Result<Y0Solution> {
    solve_y0_gap(d, gap_from_t(d, t)?)
}

/// Solves for `y_0` given the gap `d - 2t` directly.
pub fn solve_y0_gap(d: usize, gap: f64) -> Result<Y0Solution> {
    check_gap(d, gap)?;
    if gap == d as f64 {
        return Ok(Y0Solution { y0: 1.0, u: 0.0 });
    }
    let ln_gap = gap.ln();
    let g = |u: f64| log_residual(d, u, ln_gap);

    // g(0) = ln d - ln gap > 0 and g decreases without bound.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while g(hi).0 >= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical(format!("no bracket for d - 2t = {gap:e}")));
        }
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if g(mid).0 >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (value, slope) = g(u);
        if value == 0.0 {
            break;
        }
        if value > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let mut next = u - value / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let done = (next - u).abs() <= 4.0 * f64::EPSILON * u.max(1.0);
        u = next;
        if done {
            break;
        }
    }
    Ok(Y0Solution { y0: (-u).exp(), u })
}

/// `y_j = y_0 u^j / j!` for `j < d`.
fn y_vector(d: usize, u: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(d);
    if u <= LOG_DOMAIN_U {
        let mut term = (-u).exp();
        y.push(term);
        for j in 1..d {
            term *= u / j as f64;
            y.push(term);
        }
    } else {
        let ln_u = u.ln();
        y.extend((0..d).map(|j| (j as f64 * ln_u - u - ln_factorial(j as u64)).exp()));
    }
    y
}

pub fn eval_theory(d: usize, t: f64) -> Result<TheoryEval> {
    eval_theory_gap(d, gap_from_t(d, t)?)
}

pub fn eval_theory_gap(d: usize, gap: f64) -> Result<TheoryEval> {
    let sol = solve_y0_gap(d, gap)?;
    let y = y_vector(d, sol.u);
    let s: Vec<f64> = y
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let weighted: f64 = y.iter().enumerate().map(|(j, v)| (d - j) as f64 * v).sum();
    let total: f64 = s.iter().sum();
    Ok(TheoryEval {
        d,
        t: (d as f64 - gap) / 2.0,
        gap,
        u: sol.u,
        residual_eq8: (weighted - gap).abs(),
        residual_eq7: (total - gap).abs(),
        y,
        s,
    })
}

/// Theory evaluated at step `i` of a process on `n` vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEval {
    pub n: u64,
    pub i: u64,
    pub theory: TheoryEval,
    /// `n * s_j(i / n)`.
    pub ns: Vec<f64>,
}

pub fn eval_theory_at_step(n: u64, d: usize, i: u64) -> Result<StepEval> {
    check_d(d)?;
    let total = d as u64 * n;
    if n == 0 || 2 * i >= total {
        return Err(Error::Domain(format!(
            "step {i} must be below dn/2 = {}",
            total as f64 / 2.0
        )));
    }
    let theory = eval_theory_gap(d, (total - 2 * i) as f64 / n as f64)?;
    let ns = theory.s.iter().map(|s| s * n as f64).collect();
    Ok(StepEval { n, i, theory, ns })
}

/// Values of `s_j` on `t_grid` from a classical fourth-order Runge-Kutta
/// integration of the ODE system with fixed step `step`.
pub fn ode_solve(d: usize, t_grid: &[f64], step: f64) -> Result<Vec<Vec<f64>>> {
    check_d(d)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParams(format!("step {step} must be positive")));
    }
    if t_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParams("t grid must be sorted".into()));
    }
    if let Some(&t_max) = t_grid.last() {
        if t_grid[0] < 0.0 || d as f64 - 2.0 * t_max < 1e-3 {
            return Err(Error::Domain(format!(
                "t grid must stay inside [0, d/2 - 5e-4], got max {t_max}"
            )));
        }
    }

    let rhs = |s: &[f64], out: &mut [f64]| {
        let top = s[d - 1];
        let mut below = 0.0;
        for j in 0..d {
            out[j] = 2.0 * (below - s[j]) / top;
            below = s[j];
        }
    };
    let mut s = vec![1.0; d];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut rk4 = |s: &mut Vec<f64>, h: f64| {
        rhs(s, &mut k1);
        for j in 0..d {
            tmp[j] = s[j] + 0.5 * h * k1[j];
        }
        rhs(&tmp, &mut k2);
        for j in 0..d {
            tmp[j] = s[j] + 0.5 * h * k2[j];
        }
        rhs(&tmp, &mut k3);
        for j in 0..d {
            tmp[j] = s[j] + h * k3[j];
        }
        rhs(&tmp, &mut k4);
        for j in 0..d {
            s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    };

    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let steps = ((target - t) / step).ceil() as u64;
        if steps > 0 {
            let h = (target - t) / steps as f64;
            for _ in 0..steps {
                rk4(&mut s, h);
            }
        }
        t = target;
        out.push(s.clone());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeCheck {
    /// Largest `|s_j^ode - s_j^implicit|` over the grid and all `j`.
    pub max_abs_error: f64,
    /// Largest difference between the run at `step` and at `step / 2`.
    pub refinement_gap: f64,
}

/// Largest disagreement between the runs at `step` and `step / 2` that is
/// accepted before the step is declared too coarse.
pub const REFINEMENT_TOLERANCE: f64 = 1e-7;

/// Compares the implicit solution against an independent ODE integration.
pub fn ode_crosscheck(d: usize, t_grid: &[f64], step: f64) -> Result<OdeCheck> {
    let coarse = ode_solve(d, t_grid, step)?;
    let fine = ode_solve(d, t_grid, step / 2.0)?;
    let refinement_gap = max_abs_diff(&coarse, &fine);
    if refinement_gap > REFINEMENT_TOLERANCE {
        return Err(Error::Numerical(format!(
            "step {step} too large: halving it moves the solution by {refinement_gap:e}"
        )));
    }
    let implicit = t_grid
        .iter()
        .map(|&t| eval_theory(d, t).map(|e| e.s))
        .collect::<Result<Vec<_>>>()?;
    Ok(OdeCheck {
        max_abs_error: max_abs_diff(&coarse, &implicit),
        refinement_gap,
    })
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Phase an index `i` belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// `0 <= i <= i_trans`.
    First,
    /// `I_k`: `(i_after(k-1), i_after(k)]`, with `i_after(-1) = i_trans`.
    Second(usize),
}

/// Step thresholds and error envelopes for one `(n, d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub n: u64,
    pub d: usize,
    /// `floor(dn/2)`.
    pub final_step: u64,
    /// `floor(dn/2 - n^(1 - 1/(100 d)))`.
    pub i_trans: i64,
    /// `floor(dn/2 - ln(n)^(d - 1.01 - k))` for `k in 0..d-1`.
    pub i_after: Vec<i64>,
    /// `floor(dn/2 - ln(n)^(d - 0.8 - k))` for `k in 0..d-1`.
    pub i_before: Vec<i64>,
}

fn check_nd(n: u64, d: usize) -> Result<()> {
    if n < 2 || d < 1 || d as u64 >= n {
        return Err(Error::InvalidParams(format!(
            "need n >= 2 and 1 <= d < n, got n = {n}, d = {d}"
        )));
    }
    Ok(())
}

fn half_dn(n: u64, d: usize) -> f64 {
    d as f64 * n as f64 / 2.0
}

pub fn i_trans(n: u64, d: usize) -> Result<i64> {
    check_nd(n, d)?;
    Ok((half_dn(n, d) - (n as f64).powf(1.0 - 1.0 / (100.0 * d as f64))).floor() as i64)
}

pub fn phase_bounds(n: u64, d: usize) -> Result<EnvelopeParams> {
    let i_trans = i_trans(n, d)?;
    let ln_n = (n as f64).ln();
    let boundary = |exponent: f64| (half_dn(n, d) - ln_n.powf(exponent)).floor() as i64;
    Ok(EnvelopeParams {
        n,
        d,
        final_step: d as u64 * n / 2,
        i_trans,
        i_after: (0..d - 1).map(|k| boundary(d as f64 - 1.01 - k as f64)).collect(),
        i_before: (0..d - 1).map(|k| boundary(d as f64 - 0.8 - k as f64)).collect(),
    })
}

impl EnvelopeParams {
    /// Inclusive step range of `I_k`.
    pub fn second_phase_range(&self, k: usize) -> Option<(i64, i64)> {
        let end = *self.i_after.get(k)?;
        let start = if k == 0 { self.i_trans } else { self.i_after[k - 1] } + 1;
        Some((start, end))
    }

    pub fn phase_of(&self, i: u64) -> Option<Phase> {
        let i = i as i64;
        if i <= self.i_trans {
            return Some(Phase::First);
        }
        (0..self.i_after.len())
            .find(|&k| {
                let (lo, hi) = self.second_phase_range(k).expect("k in range");
                lo <= i && i <= hi
            })
            .map(Phase::Second)
    }

    /// `n^0.6 (dn / (dn - 2i))^(4d)` for `0 <= i <= i_trans`.
    pub fn envelope_first(&self, i: u64) -> Result<f64> {
        if i as i64 > self.i_trans {
            return Err(Error::Domain(format!("step {i} is past i_trans = {}", self.i_trans)));
        }
        let dn = self.d as f64 * self.n as f64;
        Ok((self.n as f64).powf(0.6) * (dn / (dn - 2.0 * i as f64)).powi(4 * self.d as i32))
    }

    /// `2^k ln(n)^0.05 (n s_j(i/n))^0.7` for `k <= j < d` and `i` in `I_k`.
    pub fn envelope_second(&self, j: usize, k: usize, i: u64) -> Result<f64> {
        let ns = self.ns_for_second(j, k, i)?;
        Ok(self.envelope_second_from_ns(k, ns))
    }

    /// Same as [`envelope_second`](Self::envelope_second) given `n s_j(i/n)`.
    pub fn envelope_second_from_ns(&self, k: usize, ns: f64) -> f64 {
        2f64.powi(k as i32) * (self.n as f64).ln().powf(0.05) * ns.powf(0.7)
    }

    fn ns_for_second(&self, j: usize, k: usize, i: u64) -> Result<f64> {
        if k > j || j >= self.d {
            return Err(Error::InvalidParams(format!("need k <= j < d, got k = {k}, j = {j}")));
        }
        let (lo, hi) = self
            .second_phase_range(k)
            .ok_or_else(|| Error::InvalidParams(format!("phase index {k} must be below d - 1")))?;
        if (i as i64) < lo || (i as i64) > hi {
            return Err(Error::Domain(format!("step {i} is outside I_{k} = [{lo}, {hi}]")));
        }
        Ok(eval_theory_at_step(self.n, self.d, i)?.ns[j])
    }
}

pub fn envelope_first(n: u64, d: usize, i: u64) -> Result<f64> {
    phase_bounds(n, d)?.envelope_first(i)
}

pub fn envelope_second(n: u64, d: usize, j: usize, k: usize, i: u64) -> Result<f64> {
    phase_bounds(n, d)?.envelope_second(j, k, i)
}

/// `dn/2 - (l! / (2 (d-1)!)) r ln(n)^(d-1-l)`.
pub fn i_of_r(n: u64, d: usize, r: f64, l: usize) -> Result<f64> {
    check_nd(n, d)?;
    if l + 2 > d {
        return Err(Error::InvalidParams(format!("l = {l} must be at most d - 2")));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidParams(format!("r = {r} must be non-negative")));
    }
    let scale = (ln_factorial(l as u64) - ln_factorial(d as u64 - 1)).exp() / 2.0;
    Ok(half_dn(n, d) - scale * r * (n as f64).ln().powi((d - 1 - l) as i32))
}

/// Leading-order approximation of `s_j` as the gap `d - 2t` goes to zero:
/// `(d-1)! gap / (j! (-ln gap)^(d-1-j))`.
pub fn s_asymptotic(d: usize, j: usize, gap: f64) -> f64 {
    let ln_ratio = ln_factorial(d as u64 - 1) - ln_factorial(j as u64);
    ln_ratio.exp() * gap / (-gap.ln()).powi((d - 1 - j) as i32)
}
