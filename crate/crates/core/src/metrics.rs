//! Verification metrics, attack accounting and score-distribution summaries.
//!
//! A comparison is a match when its score is strictly greater than the
//! decision threshold; a score equal to the threshold is a non-match.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_scores(scores: &[f64], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(what));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidConfig(format!("{what} contains {bad}")));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Number of entries of an ascending slice that are `<= t`.
fn count_at_or_below(sorted: &[f64], t: f64) -> usize {
    sorted.partition_point(|&s| s <= t)
}

/// Fraction of non-mated scores above `t`.
pub fn fmr_at(nonmated: &[f64], t: f64) -> Result<f64> {
    check_scores(nonmated, "non-mated scores")?;
    Ok(nonmated.iter().filter(|&&s| s > t).count() as f64 / nonmated.len() as f64)
}

/// Fraction of mated scores at or below `t`.
pub fn fnmr_at(mated: &[f64], t: f64) -> Result<f64> {
    check_scores(mated, "mated scores")?;
    Ok(mated.iter().filter(|&&s| s <= t).count() as f64 / mated.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationTrialSet {
    pub mated: Vec<f64>,
    pub nonmated: Vec<f64>,
}

impl VerificationTrialSet {
    pub fn new(mated: Vec<f64>, nonmated: Vec<f64>) -> Result<Self> {
        check_scores(&mated, "mated scores")?;
        check_scores(&nonmated, "non-mated scores")?;
        Ok(Self { mated, nonmated })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualErrorRate {
    pub eer: f64,
    pub threshold: f64,
}

/// Cumulative view of a trial set for repeated rate evaluation.
struct SortedTrials {
    mated: Vec<f64>,
    nonmated: Vec<f64>,
}

impl SortedTrials {
    fn new(trials: &VerificationTrialSet) -> Result<Self> {
        check_scores(&trials.mated, "mated scores")?;
        check_scores(&trials.nonmated, "non-mated scores")?;
        Ok(Self { mated: sorted(&trials.mated), nonmated: sorted(&trials.nonmated) })
    }

    fn at(&self, t: f64) -> OperatingPoint {
        let nm = self.nonmated.len();
        let fmr = (nm - count_at_or_below(&self.nonmated, t)) as f64 / nm as f64;
        let fnmr = count_at_or_below(&self.mated, t) as f64 / self.mated.len() as f64;
        OperatingPoint { threshold: t, fmr, fnmr }
    }

    /// Distinct pooled scores, ascending.
    fn thresholds(&self) -> Vec<f64> {
        let mut pooled: Vec<f64> = self.mated.iter().chain(&self.nonmated).copied().collect();
        pooled.sort_unstable_by(f64::total_cmp);
        pooled.dedup();
        pooled
    }
}

/// Equal error rate. Rates are evaluated at every distinct observed score
/// and at negative infinity; between the two thresholds where FMR - FNMR
/// changes sign, both rates are linearly interpolated to their crossing.
///
/// When the crossing lies below the lowest observed score the reported
/// threshold is that lowest score.
pub fn eer(trials: &VerificationTrialSet) -> Result<EqualErrorRate> {
    let st = SortedTrials::new(trials)?;
    let mut prev = st.at(f64::NEG_INFINITY);
    for t in st.thresholds() {
        let cur = st.at(t);
        let d_cur = cur.fmr - cur.fnmr;
        if d_cur <= 0.0 {
            if d_cur == 0.0 {
                return Ok(EqualErrorRate { eer: cur.fmr, threshold: t });
            }
            let d_prev = prev.fmr - prev.fnmr;
            let alpha = d_prev / (d_prev - d_cur);
            let eer = prev.fmr + alpha * (cur.fmr - prev.fmr);
            let threshold = if prev.threshold.is_finite() {
                prev.threshold + alpha * (t - prev.threshold)
            } else {
                t
            };
            return Ok(EqualErrorRate { eer, threshold });
        }
        prev = cur;
    }
    // At the highest observed score FMR is 0 and FNMR is 1.
    unreachable!("FMR - FNMR is negative at the highest observed score")
}

/// Smallest threshold whose FMR is at most `target_fmr`. Returns negative
/// infinity when every threshold qualifies (`target_fmr >= 1`).
pub fn threshold_at_fmr(nonmated: &[f64], target_fmr: f64) -> Result<f64> {
    check_scores(nonmated, "non-mated scores")?;
    if !(target_fmr > 0.0 && target_fmr <= 1.0) {
        return Err(Error::InvalidConfig(format!("target FMR {target_fmr} outside (0, 1]")));
    }
    if target_fmr >= 1.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let s = sorted(nonmated);
    let total = s.len();
    let mut i = 0;
    while i < total {
        let v = s[i];
        let at_or_below = count_at_or_below(&s, v);
        if (total - at_or_below) as f64 / total as f64 <= target_fmr {
            return Ok(v);
        }
        i = at_or_below;
    }
    unreachable!("FMR is 0 at the highest non-mated score")
}

/// Operating point at the threshold selected for `target_fmr`.
pub fn operating_point_at_fmr(trials: &VerificationTrialSet, target_fmr: f64) -> Result<OperatingPoint> {
    let threshold = threshold_at_fmr(&trials.nonmated, target_fmr)?;
    Ok(SortedTrials::new(trials)?.at(threshold))
}

/// FMR/FNMR at every distinct observed score, ascending in threshold.
pub fn det_curve(trials: &VerificationTrialSet) -> Result<Vec<OperatingPoint>> {
    let st = SortedTrials::new(trials)?;
    Ok(st.thresholds().into_iter().map(|t| st.at(t)).collect())
}

/// Fraction of predictions that equal the true attribute.
pub fn attack_success_rate<P: AsRef<str>, T: AsRef<str>>(predicted: &[P], truths: &[T]) -> Result<f64> {
    if predicted.len() != truths.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truths.len() });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let correct = predicted
        .iter()
        .zip(truths)
        .filter(|(p, t)| p.as_ref() == t.as_ref())
        .count();
    Ok(correct as f64 / predicted.len() as f64)
}

/// Fraction of per-probe best scores above `t`. With a gallery that holds no
/// mate of any probe, each of these is a false match.
pub fn false_match_fraction(top1_scores: &[f64], t: f64) -> Result<f64> {
    check_scores(top1_scores, "top-1 scores")?;
    Ok(top1_scores.iter().filter(|&&s| s > t).count() as f64 / top1_scores.len() as f64)
}

/// Boxplot statistics. Quartiles interpolate linearly between closest
/// ranks; whiskers sit at the 1.5 IQR fences clamped to the observed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outlier_count: usize,
}

/// Linear-interpolation quantile of an ascending, non-empty slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<DistributionSummary> {
    check_scores(values, "distribution")?;
    let s = sorted(values);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let (min, max) = (s[0], s[s.len() - 1]);
    let iqr = q3 - q1;
    let low_fence = q1 - 1.5 * iqr;
    let high_fence = q3 + 1.5 * iqr;
    let outlier_count = s.iter().filter(|&&v| v < low_fence || v > high_fence).count();
    Ok(DistributionSummary {
        count: s.len(),
        min,
        q1,
        median,
        q3,
        max,
        iqr,
        whisker_low: low_fence.max(min),
        whisker_high: high_fence.min(max),
        outlier_count,
    })
}

/// A non-mated comparison score with the attributes of both samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedScore {
    pub score: f64,
    pub attribute_a: String,
    pub attribute_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSplit {
    pub same: DistributionSummary,
    pub different: DistributionSummary,
}

/// Splits non-mated scores by whether both samples share the attribute.
pub fn nonmated_attribute_split(trials: &[AttributedScore]) -> Result<AttributeSplit> {
    let (same, different): (Vec<&AttributedScore>, Vec<&AttributedScore>) =
        trials.iter().partition(|t| t.attribute_a == t.attribute_b);
    if same.is_empty() {
        return Err(Error::Empty("same-attribute partition"));
    }
    if different.is_empty() {
        return Err(Error::Empty("different-attribute partition"));
    }
    let scores = |v: Vec<&AttributedScore>| v.into_iter().map(|t| t.score).collect::<Vec<_>>();
    Ok(AttributeSplit { same: summarize(&scores(same))?, different: summarize(&scores(different))? })
}

/// Wilson score interval at 95 % confidence.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    const Z: f64 = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + Z * Z / n;
    let centre = (p + Z * Z / (2.0 * n)) / denom;
    let half = Z * (p * (1.0 - p) / n + Z * Z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    check_scores(a, "first sample")?;
    check_scores(b, "second sample")?;
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmrOperatingPoint {
    pub fmr_target: f64,
    pub threshold: f64,
    pub fnmr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalseMatchPoint {
    pub fmr_target: f64,
    pub threshold: f64,
    pub fraction: f64,
}

/// Verification results for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub operating_points: Vec<FmrOperatingPoint>,
    pub attack_fm_fraction: Vec<FalseMatchPoint>,
    pub boxplots: AttributeSplit,
}

pub const DEFAULT_FMR_TARGETS: [f64; 3] = [0.001, 0.01, 0.1];

impl MetricsReport {
    pub fn new(trials: &VerificationTrialSet, nonmated: &[AttributedScore], fmr_targets: &[f64]) -> Result<Self> {
        let e = eer(trials)?;
        let operating_points = fmr_targets
            .iter()
            .map(|&target| {
                let op = operating_point_at_fmr(trials, target)?;
                Ok(FmrOperatingPoint { fmr_target: target, threshold: op.threshold, fnmr: op.fnmr })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            eer: e.eer,
            eer_threshold: e.threshold,
            operating_points,
            attack_fm_fraction: Vec::new(),
            boxplots: nonmated_attribute_split(nonmated)?,
        })
    }

    /// Fills `attack_fm_fraction` from the thresholds of the operating points.
    pub fn with_attack_fractions(mut self, top1_scores: &[f64]) -> Result<Self> {
        self.attack_fm_fraction = self
            .operating_points
            .iter()
            .map(|op| {
                Ok(FalseMatchPoint {
                    fmr_target: op.fmr_target,
                    threshold: op.threshold,
                    fraction: false_match_fraction(top1_scores, op.threshold)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmr_examples() {
        assert_eq!(fmr_at(&[0.1, 0.2, 0.3, 0.9], 0.5).unwrap(), 0.25);
        assert_eq!(fmr_at(&[0.1, 1.0, 0.3], 1.0).unwrap(), 0.0);
        assert_eq!(fmr_at(&[0.5, 0.5], 0.5).unwrap(), 0.0);
        assert!(fmr_at(&[], 0.5).is_err());
    }

    #[test]
    fn fnmr_examples() {
        assert!((fnmr_at(&[0.9, 0.8, 0.2], 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(fnmr_at(&[0.9, 0.1], 0.0).unwrap(), 0.0);
        assert_eq!(fnmr_at(&[0.5], 0.5).unwrap(), 1.0);
        assert!(fnmr_at(&[], 0.5).is_err());
    }

    #[test]
    fn eer_examples() {
        let t = |m: &[f64], n: &[f64]| VerificationTrialSet::new(m.to_vec(), n.to_vec()).unwrap();
        assert_eq!(eer(&t(&[0.9, 0.8], &[0.1, 0.2])).unwrap().eer, 0.0);
        assert_eq!(eer(&t(&[0.3, 0.5, 0.7], &[0.7, 0.3, 0.5])).unwrap().eer, 0.5);
        assert_eq!(eer(&t(&[0.5], &[0.5])).unwrap().eer, 0.5);
        let e = eer(&t(&[0.6, 0.4], &[0.5, 0.3])).unwrap();
        assert_eq!(e.eer, 0.5);
        assert_eq!(e.threshold, 0.4);
        assert!(VerificationTrialSet::new(vec![], vec![0.1]).is_err());
    }

    #[test]
    fn eer_crossing_below_lowest_score() {
        // FNMR jumps past FMR at the lowest score itself.
        let t = VerificationTrialSet::new(vec![0.1, 0.1], vec![0.1, 0.9]).unwrap();
        let e = eer(&t).unwrap();
        // D goes 1 -> -0.5, crossing at 2/3 of the way: rates 1 -> 0.5 and 0 -> 1.
        assert!((e.eer - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.threshold, 0.1);
    }

    #[test]
    fn threshold_examples() {
        let tenths: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(threshold_at_fmr(&tenths, 0.1).unwrap(), 0.9);
        assert_eq!(threshold_at_fmr(&tenths, 1.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(threshold_at_fmr(&[0.5], 0.5).unwrap(), 0.5);
        assert!(threshold_at_fmr(&tenths, 0.0).is_err());
        assert!(threshold_at_fmr(&tenths, 1.5).is_err());
    }

    #[test]
    fn success_rate_examples() {
        assert!((attack_success_rate(&["F", "M", "F"], &["F", "F", "F"]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(attack_success_rate(&["F", "M"], &["F", "M"]).unwrap(), 1.0);
        assert!(attack_success_rate(&["F"], &["F", "M"]).is_err());
        assert!(attack_success_rate::<&str, &str>(&[], &[]).is_err());
    }

    #[test]
    fn false_match_examples() {
        assert!((false_match_fraction(&[0.7, 0.3, 0.8], 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(false_match_fraction(&[0.7, 0.3, 0.8], 0.81).unwrap(), 0.0);
        assert!(false_match_fraction(&[], 0.5).is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(s.iqr, 2.0);
        assert_eq!(s.whisker_low, 1.0);
        assert_eq!(s.whisker_high, 7.0);
        assert_eq!(s.outlier_count, 1);
        let s = summarize(&[0.5]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (0.5, 0.5, 0.5, 0.5, 0.5));
        let s = summarize(&[0.0, 1.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (0.25, 0.5, 0.75));
    }

    #[test]
    fn attribute_split_examples() {
        let trial = |s: f64, a: &str, b: &str| AttributedScore {
            score: s,
            attribute_a: a.into(),
            attribute_b: b.into(),
        };
        let split = nonmated_attribute_split(&[
            trial(0.5, "F", "F"),
            trial(0.7, "M", "M"),
            trial(0.4, "F", "M"),
            trial(0.6, "M", "F"),
        ])
        .unwrap();
        assert!((split.same.median - 0.6).abs() < 1e-12);
        assert!((split.different.median - 0.5).abs() < 1e-12);

        let mirrored = nonmated_attribute_split(&[trial(0.3, "F", "F"), trial(0.3, "F", "M")]).unwrap();
        assert_eq!(mirrored.same, mirrored.different);
        assert!(nonmated_attribute_split(&[trial(0.3, "F", "F")]).is_err());
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        let (lo, _) = wilson_interval(600, 1000);
        assert!(lo > 0.5);
    }

    #[test]
    fn ks_known_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert!((ks_statistic(&[1.0, 3.0], &[2.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((ks_critical_value(100, 100, 0.01) - 1.6276 * 0.1414).abs() < 1e-3);
    }
}
