//! Goodness-of-fit and independence tests used to check simulated hitting
//! times against their exponential limits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Non-empty sample of finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("sample has no values".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("sample contains non-finite value {bad}")));
        }
        Ok(Sample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.0)
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Fraction of values `<= x`.
    pub fn ecdf(&self, x: f64) -> f64 {
        self.0.iter().filter(|&&v| v <= x).count() as f64 / self.0.len() as f64
    }
}

/// Outcome of one statistical test.
///
/// For p-value tests `pass` means `p_value > level`; for distance tests it
/// means `statistic <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub level: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

/// Mean of a non-empty slice, accumulated as offsets from the first value so
/// that a constant sample returns that constant exactly.
pub fn mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// CDF of the exponential distribution with mean 1.
pub fn exp_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// One-sample Kolmogorov-Smirnov distance `sup_x |F_n(x) - F(x)|`, evaluated on
/// both sides of every jump of the empirical CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let sample = Sample::new(sample.to_vec())?;
    let sorted = sample.sorted();
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0, |acc: f64, (i, &x)| {
        let f = cdf(x);
        acc.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    }))
}

/// Asymptotic survival function of the Kolmogorov distribution, with the
/// Stephens small-sample correction.
pub fn kolmogorov_p_value(distance: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * distance;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS distance of `sample` from Exp(1); passes when the distance is at most
/// `max_distance`.
pub fn ks_exp_report(sample: &[f64], max_distance: f64) -> Result<TestReport> {
    let distance = ks_statistic(sample, exp_cdf)?;
    Ok(TestReport {
        method: "ks_one_sample_exp1".into(),
        statistic: distance,
        p_value: Some(kolmogorov_p_value(distance, sample.len())),
        level: None,
        threshold: Some(max_distance),
        pass: distance <= max_distance,
        n_samples: sample.len(),
        seed: None,
    })
}

/// Pearson chi-square against equal cell probabilities.
pub fn chi_square_uniform(counts: &[u64], level: f64) -> Result<TestReport> {
    if counts.len() < 2 {
        return Err(Error::Degenerate("need at least two categories".into()));
    }
    let probs = vec![1.0 / counts.len() as f64; counts.len()];
    let mut report = chi_square_gof(counts, &probs, level)?;
    report.method = "chi_square_uniform".into();
    Ok(report)
}

/// Pearson chi-square goodness of fit against cell probabilities `probs`.
///
/// Cells with zero probability are dropped when empty; an observation in such
/// a cell makes the statistic infinite.
pub fn chi_square_gof(counts: &[u64], probs: &[f64], level: f64) -> Result<TestReport> {
    if counts.len() != probs.len() {
        return Err(Error::InvalidParams(format!(
            "{} counts but {} probabilities",
            counts.len(),
            probs.len()
        )));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("all counts are zero".into()));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(
            "probabilities must be in [0, 1] and sum to 1".into(),
        ));
    }
    let mut statistic = 0.0;
    let mut cells = 0usize;
    for (&observed, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            if observed > 0 {
                statistic = f64::INFINITY;
            }
            continue;
        }
        cells += 1;
        let expected = p * total as f64;
        statistic += (observed as f64 - expected).powi(2) / expected;
    }
    let p_value = if statistic.is_infinite() {
        0.0
    } else if cells < 2 {
        1.0
    } else {
        ChiSquared::new((cells - 1) as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sf(statistic)
    };
    Ok(TestReport {
        method: "chi_square_gof".into(),
        statistic,
        p_value: Some(p_value),
        level: Some(level),
        threshold: None,
        pass: p_value > level,
        n_samples: total as usize,
        seed: None,
    })
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidParams("samples must be paired and non-empty".into()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation undefined for a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceConfig {
    pub permutations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for IndependenceConfig {
    fn default() -> Self {
        IndependenceConfig {
            permutations: 500,
            level: 0.01,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub correlation: TestReport,
    pub joint_cdf: TestReport,
    pub pass: bool,
}

/// Permutation tests of independence for paired samples: Pearson correlation
/// and the largest gap between the joint empirical CDF and the product of the
/// marginals (taken over the observed points). Both use the same permutations
/// of `y`.
pub fn independence_report(x: &Sample, y: &Sample, config: &IndependenceConfig) -> Result<IndependenceReport> {
    let (x, y) = (x.values(), y.values());
    if x.len() != y.len() {
        return Err(Error::InvalidParams(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 50 {
        return Err(Error::InvalidParams(format!("need at least 50 pairs, got {}", x.len())));
    }
    if config.permutations < 500 {
        return Err(Error::InvalidParams("need at least 500 permutations".into()));
    }
    let observed_r = pearson_correlation(x, y)?.abs();
    let joint = JointCdfGap::new(x);
    let mut y_ranks = max_ranks(y);
    let observed_gap = joint.statistic(&y_ranks);

    let mut rng = rng_from_seed(config.seed);
    let mut y_perm = y.to_vec();
    let mut order: Vec<usize> = (0..y.len()).collect();
    let (mut r_hits, mut gap_hits) = (0usize, 0usize);
    let y_ranks_orig = y_ranks.clone();
    for _ in 0..config.permutations {
        order.shuffle(&mut rng);
        for (slot, &src) in order.iter().enumerate() {
            y_perm[slot] = y[src];
            y_ranks[slot] = y_ranks_orig[src];
        }
        if pearson_correlation(x, &y_perm)?.abs() >= observed_r {
            r_hits += 1;
        }
        if joint.statistic(&y_ranks) >= observed_gap {
            gap_hits += 1;
        }
    }
    let p = |hits: usize| (1 + hits) as f64 / (1 + config.permutations) as f64;
    let make = |method: &str, statistic: f64, hits: usize| {
        let p_value = p(hits);
        TestReport {
            method: method.into(),
            statistic,
            p_value: Some(p_value),
            level: Some(config.level),
            threshold: None,
            pass: p_value > config.level,
            n_samples: x.len(),
            seed: Some(config.seed),
        }
    };
    let correlation = make("pearson_permutation", observed_r, r_hits);
    let joint_cdf = make("joint_ecdf_permutation", observed_gap, gap_hits);
    let pass = correlation.pass && joint_cdf.pass;
    Ok(IndependenceReport {
        correlation,
        joint_cdf,
        pass,
    })
}

/// `#{k : v_k <= v_i}` for each `i`.
fn max_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        for &idx in &order[start..=end] {
            ranks[idx] = end + 1;
        }
        start = end + 1;
    }
    ranks
}

/// Precomputed `x` side of the joint-CDF statistic.
struct JointCdfGap {
    x_ranks: Vec<usize>,
    /// Indices grouped by tied `x`, in increasing `x`.
    groups: Vec<Vec<usize>>,
}

impl JointCdfGap {
    fn new(x: &[f64]) -> Self {
        let x_ranks = max_ranks(x);
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by_key(|&i| x_ranks[i]);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in order {
            match groups.last_mut() {
                Some(g) if x_ranks[g[0]] == x_ranks[i] => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        JointCdfGap { x_ranks, groups }
    }

    /// `max_i |F_xy(x_i, y_i) - F_x(x_i) F_y(y_i)|` with `y` given as max ranks.
    fn statistic(&self, y_ranks: &[usize]) -> f64 {
        let n = y_ranks.len();
        let mut tree = vec![0usize; n + 1];
        let mut best = 0.0f64;
        for group in &self.groups {
            for &i in group {
                let mut k = y_ranks[i];
                while k <= n {
                    tree[k] += 1;
                    k += k & k.wrapping_neg();
                }
            }
            for &i in group {
                let mut k = y_ranks[i];
                let mut joint = 0usize;
                while k > 0 {
                    joint += tree[k];
                    k -= k & k.wrapping_neg();
                }
                let product = self.x_ranks[i] as f64 * y_ranks[i] as f64 / (n * n) as f64;
                best = best.max((joint as f64 / n as f64 - product).abs());
            }
        }
        best
    }
}
