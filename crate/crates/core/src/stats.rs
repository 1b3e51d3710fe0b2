//! Accuracy statistics, significance tests and prediction overlap.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("labels contain a single class; permuting them cannot change the statistic")]
    SingleClass,
    #[error("example {0} has zero mean accuracy and cannot be normalized")]
    ZeroMean(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("matrix shape: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Default cap on distinct label arrangements for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 100_000;

/// Permutations drawn per independent random stream.
const BLOCK: usize = 4096;

fn check_inputs(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(StatsError::Empty);
    }
    if preds.len() != labels.len() {
        return Err(StatsError::LengthMismatch(preds.len(), labels.len()));
    }
    if let Some(&class) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(StatsError::ClassOutOfRange { class, n_classes });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub mean: f64,
    /// `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
    pub absent_classes: Vec<usize>,
}

/// Per-class accuracies and their mean over classes present in `labels`.
pub fn class_accuracies(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassAccuracy> {
    check_inputs(preds, labels, n_classes)?;
    let mut total = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        total[y] += 1;
        correct[y] += usize::from(p == y);
    }
    let per_class: Vec<Option<f64>> = total
        .iter()
        .zip(&correct)
        .map(|(&t, &c)| (t > 0).then(|| c as f64 / t as f64))
        .collect();
    let absent_classes: Vec<usize> = (0..n_classes).filter(|&c| total[c] == 0).collect();
    if !absent_classes.is_empty() {
        log::warn!("classes {absent_classes:?} absent from labels; excluded from the class mean");
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok(ClassAccuracy {
        mean,
        per_class,
        absent_classes,
    })
}

pub fn mean_class_accuracy(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    class_accuracies(preds, labels, n_classes).map(|a| a.mean)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Scores permuted label vectors against fixed predictions, comparing
/// class-mean accuracies exactly where integer arithmetic allows.
struct Scorer<'a> {
    preds: &'a [usize],
    /// Integer weight per class (lcm / class size), or `None` on overflow.
    weights: Option<Vec<u128>>,
    counts: Vec<usize>,
    n_present: usize,
}

impl<'a> Scorer<'a> {
    fn new(preds: &'a [usize], labels: &[usize], n_classes: usize) -> Self {
        let mut counts = vec![0usize; n_classes];
        labels.iter().for_each(|&y| counts[y] += 1);
        let mut lcm: Option<u128> = Some(1);
        for &c in counts.iter().filter(|&&c| c > 0) {
            lcm = lcm.and_then(|l| (l / gcd(l, c as u128)).checked_mul(c as u128));
        }
        let weights = lcm.map(|l| counts.iter().map(|&c| if c > 0 { l / c as u128 } else { 0 }).collect());
        let n_present = counts.iter().filter(|&&c| c > 0).count();
        Scorer {
            preds,
            weights,
            counts,
            n_present,
        }
    }

    fn correct_per_class(&self, labels: &[usize], buf: &mut [usize]) {
        buf.iter_mut().for_each(|v| *v = 0);
        for (&p, &y) in self.preds.iter().zip(labels) {
            if p == y {
                buf[y] += 1;
            }
        }
    }

    fn score(&self, correct: &[usize]) -> Score {
        match &self.weights {
            Some(w) => Score::Exact(correct.iter().zip(w).map(|(&c, &w)| c as u128 * w).sum()),
            None => Score::Float(
                correct
                    .iter()
                    .zip(&self.counts)
                    .filter(|(_, &n)| n > 0)
                    .map(|(&c, &n)| c as f64 / n as f64)
                    .sum::<f64>()
                    / self.n_present as f64,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Score {
    Exact(u128),
    Float(f64),
}

impl Score {
    fn at_least(self, observed: Score) -> bool {
        match (self, observed) {
            (Score::Exact(a), Score::Exact(b)) => a >= b,
            (Score::Float(a), Score::Float(b)) => a >= b - 1e-12 * b.abs().max(1.0),
            _ => unreachable!("scores come from one scorer"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub observed: f64,
    pub method: PermutationMethod,
    /// Permutations evaluated (distinct arrangements for exact enumeration).
    pub n_permutations: u64,
    /// Permutations whose statistic was at least the observed one.
    pub n_at_least: u64,
}

/// Number of distinct arrangements of the label multiset, if it fits in u128.
pub fn distinct_arrangements(labels: &[usize], n_classes: usize) -> Option<u128> {
    let mut counts = vec![0u128; n_classes];
    labels.iter().for_each(|&y| counts[y] += 1);
    // Product of binomials, each computed incrementally and exactly.
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    for c in counts {
        for i in 1..=c {
            placed += 1;
            total = total.checked_mul(placed)? / i;
        }
    }
    Some(total)
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn prepare<'a>(preds: &'a [usize], labels: &[usize], n_classes: usize) -> Result<(Scorer<'a>, Score, f64)> {
    check_inputs(preds, labels, n_classes)?;
    let scorer = Scorer::new(preds, labels, n_classes);
    if scorer.n_present < 2 {
        return Err(StatsError::SingleClass);
    }
    let mut buf = vec![0; n_classes];
    scorer.correct_per_class(labels, &mut buf);
    let observed_score = scorer.score(&buf);
    let observed = mean_class_accuracy(preds, labels, n_classes)?;
    Ok((scorer, observed_score, observed))
}

/// Exact p-value over every distinct arrangement of the labels.
pub fn exact_permutation_test(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<PermutationResult> {
    let (scorer, observed_score, observed) = prepare(preds, labels, n_classes)?;
    let mut perm = labels.to_vec();
    perm.sort_unstable();
    let mut buf = vec![0; n_classes];
    let (mut total, mut hits) = (0u64, 0u64);
    loop {
        scorer.correct_per_class(&perm, &mut buf);
        total += 1;
        hits += u64::from(scorer.score(&buf).at_least(observed_score));
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(PermutationResult {
        p_value: hits as f64 / total as f64,
        observed,
        method: PermutationMethod::Exact,
        n_permutations: total,
        n_at_least: hits,
    })
}

/// Monte Carlo p-value `(1 + hits) / (1 + n_perm)` over uniform label shuffles.
///
/// Draws are split into fixed-size blocks, each with its own stream of the
/// seeded generator, so the result does not depend on the thread count.
pub fn monte_carlo_permutation_test(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
    n_perm: u64,
    seed: u64,
) -> Result<PermutationResult> {
    if n_perm == 0 {
        return Err(StatsError::InvalidParameter("n_perm must be at least 1".into()));
    }
    let (scorer, observed_score, observed) = prepare(preds, labels, n_classes)?;
    let n_blocks = n_perm.div_ceil(BLOCK as u64);
    let hits: u64 = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = (n_perm - b * BLOCK as u64).min(BLOCK as u64);
            let mut perm = labels.to_vec();
            let mut buf = vec![0; n_classes];
            let mut hits = 0u64;
            for _ in 0..count {
                perm.shuffle(&mut rng);
                scorer.correct_per_class(&perm, &mut buf);
                hits += u64::from(scorer.score(&buf).at_least(observed_score));
            }
            hits
        })
        .sum();
    Ok(PermutationResult {
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        observed,
        method: PermutationMethod::MonteCarlo,
        n_permutations: n_perm,
        n_at_least: hits,
    })
}

/// Permutation test of the class-mean accuracy. Enumerates exactly when the
/// number of distinct label arrangements is at most `enumeration_cap`.
pub fn permutation_test_with_cap(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
    n_perm: u64,
    seed: u64,
    enumeration_cap: u64,
) -> Result<PermutationResult> {
    check_inputs(preds, labels, n_classes)?;
    match distinct_arrangements(labels, n_classes) {
        Some(total) if total <= enumeration_cap as u128 => exact_permutation_test(preds, labels, n_classes),
        _ => monte_carlo_permutation_test(preds, labels, n_classes, n_perm, seed),
    }
}

pub fn permutation_test(
    preds: &[usize],
    labels: &[usize],
    n_classes: usize,
    n_perm: u64,
    seed: u64,
) -> Result<PermutationResult> {
    permutation_test_with_cap(preds, labels, n_classes, n_perm, seed, DEFAULT_ENUMERATION_CAP)
}

/// Per-example by per-method accuracies and permutation p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub examples: Vec<String>,
    pub methods: Vec<String>,
    pub accuracy: Vec<Vec<f64>>,
    pub p_value: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn validate(&self) -> Result<()> {
        let (e, m) = (self.examples.len(), self.methods.len());
        let ok = |rows: &Vec<Vec<f64>>| rows.len() == e && rows.iter().all(|r| r.len() == m);
        if !ok(&self.accuracy) || !ok(&self.p_value) {
            return Err(StatsError::Shape(format!("expected {e} rows of {m} entries")));
        }
        if self.accuracy.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(StatsError::Shape("accuracy outside [0, 1]".into()));
        }
        if self.p_value.iter().flatten().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(StatsError::Shape("p-value outside (0, 1]".into()));
        }
        Ok(())
    }

    /// Rows where `mask` is true.
    pub fn select(&self, mask: &[bool]) -> AccuracyMatrix {
        let pick = |rows: &Vec<Vec<f64>>| {
            rows.iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect()
        };
        AccuracyMatrix {
            examples: self
                .examples
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(e, _)| e.clone())
                .collect(),
            methods: self.methods.clone(),
            accuracy: pick(&self.accuracy),
            p_value: pick(&self.p_value),
        }
    }

    /// Accuracies of one method across examples.
    pub fn column(&self, method: usize) -> Vec<f64> {
        self.accuracy.iter().map(|r| r[method]).collect()
    }
}

/// Keeps an example when at least one method is significant at `alpha`.
pub fn select_significant(matrix: &AccuracyMatrix, alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    matrix.validate()?;
    let mask: Vec<bool> = matrix
        .p_value
        .iter()
        .map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min) < alpha)
        .collect();
    let kept = mask.iter().filter(|&&k| k).count();
    log::info!("{kept} of {} examples significant at alpha {alpha}", mask.len());
    Ok(mask)
}

/// Divides each row by its mean.
pub fn normalize_accuracies(matrix: &AccuracyMatrix) -> Result<Vec<Vec<f64>>> {
    matrix.validate()?;
    matrix
        .accuracy
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            if mean <= 0.0 {
                return Err(StatsError::ZeroMean(i));
            }
            Ok(row.iter().map(|a| a / mean).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub p_value: f64,
    /// Non-zero differences.
    pub n: usize,
    /// Positive differences `a - b`.
    pub n_positive: usize,
    /// True when every difference was zero.
    pub degenerate: bool,
}

/// `P(X <= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_half_cdf(n: usize, k: usize) -> f64 {
    if k >= n {
        return 1.0;
    }
    if n <= 127 {
        let mut term: u128 = 1;
        let mut sum: u128 = 1;
        for i in 1..=k as u128 {
            term = term * (n as u128 - i + 1) / i;
            sum += term;
        }
        return sum as f64 / 2f64.powi(n as i32);
    }
    // log-space for long sequences
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_term = 0.0;
    let mut terms = vec![ln_half_n];
    for i in 1..=k {
        ln_term += ((n - i + 1) as f64).ln() - (i as f64).ln();
        terms.push(ln_term + ln_half_n);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// Two-sided sign test on paired values; zero differences are discarded.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    let k = diffs.iter().filter(|d| **d > 0.0).count();
    if n == 0 {
        return Ok(SignTest {
            p_value: 1.0,
            n: 0,
            n_positive: 0,
            degenerate: true,
        });
    }
    let lower = binomial_half_cdf(n, k);
    let upper = binomial_half_cdf(n, n - k);
    Ok(SignTest {
        p_value: (2.0 * lower.min(upper)).min(1.0),
        n,
        n_positive: k,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub both_correct: f64,
    pub both_wrong: f64,
    pub a_only: f64,
    pub b_only: f64,
}

impl OverlapMatrix {
    pub fn disagreement(&self) -> f64 {
        self.a_only + self.b_only
    }
}

pub fn prediction_overlap(preds_a: &[usize], preds_b: &[usize], labels: &[usize]) -> Result<OverlapMatrix> {
    if labels.is_empty() {
        return Err(StatsError::Empty);
    }
    if preds_a.len() != labels.len() || preds_b.len() != labels.len() {
        return Err(StatsError::LengthMismatch(preds_a.len().max(preds_b.len()), labels.len()));
    }
    let mut counts = [0usize; 4];
    for ((&pa, &pb), &y) in preds_a.iter().zip(preds_b).zip(labels) {
        counts[usize::from(pa != y) * 2 + usize::from(pb != y)] += 1;
    }
    let n = labels.len() as f64;
    Ok(OverlapMatrix {
        both_correct: counts[0] as f64 / n,
        a_only: counts[1] as f64 / n,
        b_only: counts[2] as f64 / n,
        both_wrong: counts[3] as f64 / n,
    })
}

/// Mean and sample standard deviation (`n - 1`); the deviation is 0 for one value.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
