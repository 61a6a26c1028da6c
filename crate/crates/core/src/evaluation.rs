//! Per-shot error vectors against two baselines and paired significance
//! tests.
//!
//! Three error vectors are compared on the test split: the model's
//! prediction error, the error of the training-label mean ("Mean"), and the
//! error of the adjacent shot ("Neighbors", one fewer entry). Differences are
//! tested with the Wilcoxon signed-rank test and Bonferroni-corrected over
//! the two comparisons.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::training::{rows_to_matrix, TrainedModel};

/// Minimum nonzero differences the signed-rank test accepts.
pub const MIN_NONZERO_DIFFERENCES: usize = 5;
/// Exact p-values are enumerated up to this many nonzero differences.
pub const DEFAULT_EXACT_MAX_N: usize = 20;

/// Per-row mean of squared differences.
pub fn per_sample_mse(predictions: ArrayView2<f64>, measurements: ArrayView2<f64>) -> Result<Vec<f64>> {
    if predictions.dim() != measurements.dim() {
        return Err(Error::shape(
            "per_sample_mse",
            format!("{:?}", measurements.dim()),
            format!("{:?}", predictions.dim()),
        ));
    }
    let width = predictions.ncols() as f64;
    Ok(predictions
        .rows()
        .into_iter()
        .zip(measurements.rows())
        .map(|(p, m)| p.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / width)
        .collect())
}

/// Error of each measurement against the training-label mean.
pub fn baseline_mean(measurements: ArrayView2<f64>, label_mean: &[f64]) -> Result<Vec<f64>> {
    if label_mean.len() != measurements.ncols() {
        return Err(Error::shape("baseline_mean", measurements.ncols(), label_mean.len()));
    }
    let width = label_mean.len() as f64;
    Ok(measurements
        .rows()
        .into_iter()
        .map(|m| m.iter().zip(label_mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / width)
        .collect())
}

/// Error between measurement `i` and measurement `i + 1`, in acquisition
/// order.
pub fn baseline_neighbor(measurements: ArrayView2<f64>) -> Result<Vec<f64>> {
    let n = measurements.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("neighbor baseline needs at least 2 shots, got {n}")));
    }
    per_sample_mse(measurements.slice(ndarray::s![..n - 1, ..]), measurements.slice(ndarray::s![1.., ..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub n: usize,
}

impl BoxStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Quantile by linear interpolation between closest ranks: position
/// `h = (n − 1)·q` on the sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_stats(errors: &[f64]) -> Result<BoxStats> {
    if errors.is_empty() {
        return Err(Error::Empty("error vector"));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::NonFinite("error vector".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(BoxStats {
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        n: errors.len(),
    })
}

/// How zero differences enter the signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMethod {
    /// Drop zeros before ranking.
    #[default]
    Wilcox,
    /// Rank zeros with the rest, then drop their ranks.
    Pratt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `min(W⁺, W⁻)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub n_effective: usize,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    pub method: PValueMethod,
}

impl TestResult {
    pub fn with_bonferroni(mut self, comparisons: usize) -> Self {
        self.p_bonferroni = bonferroni(self.p_raw, comparisons);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WilcoxonConfig {
    pub zero_method: ZeroMethod,
    pub exact_max_n: usize,
}

impl Default for WilcoxonConfig {
    fn default() -> Self {
        Self { zero_method: ZeroMethod::Wilcox, exact_max_n: DEFAULT_EXACT_MAX_N }
    }
}

/// Ranks of `values` (1-based), doubled so tied averages stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1 share the average rank (i + j + 2) / 2
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments whose doubled positive-rank sum equals each
/// value, by subset-sum counting.
fn signed_rank_counts(doubled: &[u64]) -> Vec<u64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided Wilcoxon signed-rank test on `a − b`.
///
/// Ties in `|d|` get average ranks. With at most `cfg.exact_max_n` nonzero
/// differences the p-value is exact: the null distribution of the positive
/// rank sum over all `2ⁿ` equally likely sign assignments, and
/// `p = min(1, 2·P(T⁺ ≤ W))`. Otherwise the normal approximation with
/// variance `Σ rᵢ²/4` (which carries the tie correction) and a 0.5
/// continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], cfg: &WilcoxonConfig) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::shape("wilcoxon_signed_rank", a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let (ranked, keep): (Vec<f64>, Vec<bool>) = match cfg.zero_method {
        ZeroMethod::Wilcox => {
            let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
            let n = nz.len();
            (nz, vec![true; n])
        }
        ZeroMethod::Pratt => (diffs.clone(), diffs.iter().map(|d| *d != 0.0).collect()),
    };
    let abs: Vec<f64> = ranked.iter().map(|d| d.abs()).collect();
    let all_ranks = doubled_ranks(&abs);
    let mut ranks = Vec::new();
    let (mut w_plus2, mut w_minus2) = (0u64, 0u64);
    for ((d, r), k) in ranked.iter().zip(&all_ranks).zip(&keep) {
        if !k {
            continue;
        }
        ranks.push(*r);
        if *d > 0.0 {
            w_plus2 += r;
        } else {
            w_minus2 += r;
        }
    }
    let n = ranks.len();
    if n < MIN_NONZERO_DIFFERENCES {
        return Err(Error::Underpowered { needed: MIN_NONZERO_DIFFERENCES, got: n });
    }
    let w2 = w_plus2.min(w_minus2);
    let (p_raw, method) = if n <= cfg.exact_max_n {
        let counts = signed_rank_counts(&ranks);
        let at_most: u64 = counts[..=w2 as usize].iter().sum();
        let p = (2 * at_most) as f64 / (1u64 << n) as f64;
        (p.min(1.0), PValueMethod::Exact)
    } else {
        let mean2 = (w_plus2 + w_minus2) as f64 / 2.0;
        let var2: f64 = ranks.iter().map(|r| (*r as f64).powi(2)).sum::<f64>() / 4.0;
        // in doubled units the continuity correction is 1
        let z = ((mean2 - w2 as f64) - 1.0).max(0.0) / var2.sqrt();
        let normal = Normal::standard();
        ((2.0 * normal.cdf(-z)).min(1.0), PValueMethod::NormalApproximation)
    };
    Ok(TestResult {
        statistic: w2 as f64 / 2.0,
        w_plus: w_plus2 as f64 / 2.0,
        w_minus: w_minus2 as f64 / 2.0,
        n_effective: n,
        p_raw,
        p_bonferroni: p_raw,
        method,
    })
}

/// `min(1, m·p)`.
pub fn bonferroni(p_raw: f64, comparisons: usize) -> f64 {
    assert!(comparisons >= 1, "Bonferroni needs at least one comparison");
    (p_raw * comparisons as f64).min(1.0)
}

/// Which neighbor pair a prediction error is matched with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborAlignment {
    /// Prediction error of shot `i` against the pair `(i, i+1)`.
    #[default]
    Leading,
    /// Prediction error of shot `i+1` against the pair `(i, i+1)`.
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub alignment: NeighborAlignment,
    pub wilcoxon: WilcoxonConfig,
    pub comparisons: usize,
    /// Significance level used for the `significant` flags in the report.
    pub significance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alignment: NeighborAlignment::Leading,
            wilcoxon: WilcoxonConfig::default(),
            comparisons: 2,
            significance: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub prediction_mse: Vec<f64>,
    pub mean_mse: Vec<f64>,
    pub neighbor_mse: Vec<f64>,
    /// Shot index of each test sample, in the order of the vectors above.
    pub shot_index: Vec<u64>,
}

/// Outcome of one paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TestOutcome {
    Tested {
        #[serde(flatten)]
        result: TestResult,
        significant: bool,
    },
    /// Too few nonzero differences for the test to say anything.
    Indistinguishable { nonzero_differences: usize },
}

impl TestOutcome {
    fn from_result(result: Result<TestResult>, comparisons: usize, alpha: f64) -> Result<Self> {
        match result {
            Ok(r) => {
                let result = r.with_bonferroni(comparisons);
                Ok(TestOutcome::Tested { significant: result.p_bonferroni < alpha, result })
            }
            Err(Error::Underpowered { got, .. }) => Ok(TestOutcome::Indistinguishable { nonzero_differences: got }),
            Err(e) => Err(e),
        }
    }

    pub fn result(&self) -> Option<&TestResult> {
        match self {
            TestOutcome::Tested { result, .. } => Some(result),
            TestOutcome::Indistinguishable { .. } => None,
        }
    }

    pub fn is_significant(&self) -> bool {
        matches!(self, TestOutcome::Tested { significant: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub prediction: BoxStats,
    pub mean: BoxStats,
    pub neighbor: BoxStats,
    pub prediction_vs_mean: TestOutcome,
    pub prediction_vs_neighbor: TestOutcome,
    pub alignment: NeighborAlignment,
    /// The neighbor comparison under the other alignment.
    pub prediction_vs_neighbor_alternate: TestOutcome,
    pub alignments_agree: bool,
    pub comparisons: usize,
    pub significance: f64,
}

fn aligned_prediction_errors(prediction: &[f64], alignment: NeighborAlignment) -> &[f64] {
    let n = prediction.len();
    match alignment {
        NeighborAlignment::Leading => &prediction[..n - 1],
        NeighborAlignment::Trailing => &prediction[1..],
    }
}

/// Builds the report from precomputed error vectors.
pub fn compare_errors(errors: &ErrorTriple, cfg: &EvalConfig) -> Result<EvaluationReport> {
    let n = errors.prediction_mse.len();
    if errors.mean_mse.len() != n || errors.neighbor_mse.len() + 1 != n {
        return Err(Error::shape(
            "error vectors",
            format!("({n}, {n}, {})", n.saturating_sub(1)),
            format!("({n}, {}, {})", errors.mean_mse.len(), errors.neighbor_mse.len()),
        ));
    }
    let test = |a: &[f64], b: &[f64]| {
        TestOutcome::from_result(wilcoxon_signed_rank(a, b, &cfg.wilcoxon), cfg.comparisons, cfg.significance)
    };
    let other = match cfg.alignment {
        NeighborAlignment::Leading => NeighborAlignment::Trailing,
        NeighborAlignment::Trailing => NeighborAlignment::Leading,
    };
    let vs_mean = test(&errors.prediction_mse, &errors.mean_mse)?;
    let vs_neighbor = test(aligned_prediction_errors(&errors.prediction_mse, cfg.alignment), &errors.neighbor_mse)?;
    let vs_neighbor_alt = test(aligned_prediction_errors(&errors.prediction_mse, other), &errors.neighbor_mse)?;
    Ok(EvaluationReport {
        n_test: n,
        prediction: box_stats(&errors.prediction_mse)?,
        mean: box_stats(&errors.mean_mse)?,
        neighbor: box_stats(&errors.neighbor_mse)?,
        alignments_agree: vs_neighbor.is_significant() == vs_neighbor_alt.is_significant(),
        prediction_vs_mean: vs_mean,
        prediction_vs_neighbor: vs_neighbor,
        alignment: cfg.alignment,
        prediction_vs_neighbor_alternate: vs_neighbor_alt,
        comparisons: cfg.comparisons,
        significance: cfg.significance,
    })
}

/// Error vectors for the test split. `test` must be in acquisition order.
pub fn error_triple(model: &TrainedModel, dataset: &Dataset, test: &[usize], label_mean: &[f64]) -> Result<ErrorTriple> {
    if test.len() < 2 {
        return Err(Error::InvalidArgument(format!("evaluation needs at least 2 test shots, got {}", test.len())));
    }
    if test.windows(2).any(|w| dataset.samples()[w[0]].shot_index >= dataset.samples()[w[1]].shot_index) {
        return Err(Error::InvalidArgument("test indices must follow acquisition order".into()));
    }
    if model.dims().d_out != dataset.d_out() {
        return Err(Error::shape("model output width", dataset.d_out(), model.dims().d_out));
    }
    let samples = dataset.select(test);
    let x = model.design_matrix(samples.iter().map(|s| &s.params))?;
    let predictions = model.mlp.predict(x.view())?;
    let measurements: Array2<f64> = rows_to_matrix(samples.iter().map(|s| s.profile.power.as_slice()), dataset.d_out());
    Ok(ErrorTriple {
        prediction_mse: per_sample_mse(predictions.view(), measurements.view())?,
        mean_mse: baseline_mean(measurements.view(), label_mean)?,
        neighbor_mse: baseline_neighbor(measurements.view())?,
        shot_index: samples.iter().map(|s| s.shot_index).collect(),
    })
}

/// Error vectors, box statistics and both Bonferroni-corrected tests.
pub fn evaluate(
    model: &TrainedModel,
    dataset: &Dataset,
    test: &[usize],
    label_mean: &[f64],
    cfg: &EvalConfig,
) -> Result<(ErrorTriple, EvaluationReport)> {
    let errors = error_triple(model, dataset, test, label_mean)?;
    let report = compare_errors(&errors, cfg)?;
    Ok((errors, report))
}
