//! Score-based attribute inference.
//!
//! An intercepted template is scored against the attacker's labeled gallery.
//! The highest scores are cut to `n` entries, either as one list (majority
//! vote) or as one list per attribute (plain, linearly weighted and
//! logarithmically weighted averages). The attribute with the strongest
//! evidence is the prediction.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::template::{compare_all, AttributeSet, Gallery, LabeledTemplate, ScoredCandidate, SimilarityScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Vote,
    Average,
    LinearWeighted,
    LogWeighted,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Vote,
        Strategy::Average,
        Strategy::LinearWeighted,
        Strategy::LogWeighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Vote => "vote",
            Strategy::Average => "average",
            Strategy::LinearWeighted => "linear_weighted",
            Strategy::LogWeighted => "log_weighted",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Linear,
    Log,
}

/// Attack parameters. Evidence ties are broken by the gallery's canonical
/// attribute order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackConfig {
    pub strategy: Strategy,
    pub n: usize,
    /// When false, a ranking with fewer than `n` candidates is an error.
    pub allow_truncation: bool,
}

impl AttackConfig {
    pub fn new(strategy: Strategy, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(Self { strategy, n, allow_truncation: true })
    }

    pub fn with_truncation(mut self, allow: bool) -> Self {
        self.allow_truncation = allow;
        self
    }

    /// Non-fatal configuration warning: an even vote cutoff with two
    /// attributes can split evenly.
    pub fn warning(&self, attributes: &AttributeSet) -> Option<String> {
        (self.strategy == Strategy::Vote && attributes.len() == 2 && self.n.is_multiple_of(2)).then(|| {
            format!("vote with even n = {} over 2 attributes can tie; odd n is recommended", self.n)
        })
    }
}

/// Top-`n` candidates ordered by score descending, then id ascending.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub entries: Vec<ScoredCandidate>,
    pub truncated: bool,
}

impl RankedList {
    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.score.value())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evidence {
    pub strategy: Strategy,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub attribute: String,
    pub evidence: Evidence,
    /// Set when more than one attribute reached the maximum.
    pub tie: bool,
}

impl AsRef<str> for Prediction {
    fn as_ref(&self) -> &str {
        &self.attribute
    }
}

fn ranking_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .value()
        .total_cmp(&a.score.value())
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

fn top_n(mut pool: Vec<&ScoredCandidate>, n: usize) -> RankedList {
    let truncated = pool.len() < n;
    if pool.len() > n {
        pool.select_nth_unstable_by(n - 1, |a, b| ranking_order(a, b));
        pool.truncate(n);
    }
    pool.sort_unstable_by(|a, b| ranking_order(a, b));
    RankedList { entries: pool.into_iter().cloned().collect(), truncated }
}

/// Single list of the `n` best scores.
pub fn rank_single(scored: &[ScoredCandidate], n: usize) -> Result<RankedList> {
    if scored.is_empty() {
        return Err(Error::Empty("scored candidates"));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    Ok(top_n(scored.iter().collect(), n))
}

/// One list of the `n` best scores per attribute.
pub fn rank_per_attribute(
    scored: &[ScoredCandidate],
    n: usize,
    attributes: &AttributeSet,
) -> Result<BTreeMap<String, RankedList>> {
    if scored.is_empty() {
        return Err(Error::Empty("scored candidates"));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let mut buckets: Vec<Vec<&ScoredCandidate>> = vec![Vec::new(); attributes.len()];
    for candidate in scored {
        let idx = attributes
            .index_of(&candidate.attribute)
            .ok_or_else(|| Error::UnknownAttribute(candidate.attribute.clone()))?;
        buckets[idx].push(candidate);
    }
    attributes
        .iter()
        .zip(buckets)
        .map(|(label, bucket)| {
            if bucket.is_empty() {
                return Err(Error::MissingAttribute(label.to_string()));
            }
            Ok((label.to_string(), top_n(bucket, n)))
        })
        .collect()
}

/// Counts of each attribute in the single top list.
pub fn evidence_vote(top: &RankedList, attributes: &AttributeSet) -> Result<Evidence> {
    if top.is_empty() {
        return Err(Error::Empty("ranked list"));
    }
    let mut values: BTreeMap<String, f64> = attributes.iter().map(|a| (a.to_string(), 0.0)).collect();
    for entry in &top.entries {
        *values
            .get_mut(&entry.attribute)
            .ok_or_else(|| Error::UnknownAttribute(entry.attribute.clone()))? += 1.0;
    }
    Ok(Evidence { strategy: Strategy::Vote, values })
}

/// Arithmetic mean of each attribute's top scores.
pub fn evidence_average(per_attribute: &BTreeMap<String, RankedList>) -> Result<Evidence> {
    let values = per_attribute
        .iter()
        .map(|(label, list)| {
            if list.is_empty() {
                return Err(Error::MissingAttribute(label.clone()));
            }
            Ok((label.clone(), list.scores().sum::<f64>() / list.len() as f64))
        })
        .collect::<Result<_>>()?;
    Ok(Evidence { strategy: Strategy::Average, values })
}

/// Position weights for ranks `i = 1..=n`: `1 - i/(n+1)` or `-ln(i/(n+1))`.
pub fn weights(n: usize, kind: WeightKind) -> Vec<f64> {
    let denom = (n + 1) as f64;
    (1..=n)
        .map(|i| {
            let r = i as f64 / denom;
            match kind {
                WeightKind::Linear => 1.0 - r,
                WeightKind::Log => -r.ln(),
            }
        })
        .collect()
}

/// Position-weighted mean of each attribute's top scores, normalized by the
/// weight sum. Weights follow each list's own length.
pub fn evidence_weighted(per_attribute: &BTreeMap<String, RankedList>, kind: WeightKind) -> Result<Evidence> {
    let values = per_attribute
        .iter()
        .map(|(label, list)| {
            if list.is_empty() {
                return Err(Error::MissingAttribute(label.clone()));
            }
            let w = weights(list.len(), kind);
            let num: f64 = w.iter().zip(list.scores()).map(|(w, s)| w * s).sum();
            let den: f64 = w.iter().sum();
            Ok((label.clone(), num / den))
        })
        .collect::<Result<_>>()?;
    let strategy = match kind {
        WeightKind::Linear => Strategy::LinearWeighted,
        WeightKind::Log => Strategy::LogWeighted,
    };
    Ok(Evidence { strategy, values })
}

/// Argmax over the evidence; exact ties go to the earliest attribute in
/// canonical order.
pub fn predict(evidence: &Evidence, attributes: &AttributeSet) -> Result<Prediction> {
    let mut best: Option<(&str, f64)> = None;
    let mut tie = false;
    for label in attributes.iter() {
        let value = *evidence
            .values
            .get(label)
            .ok_or_else(|| Error::MissingAttribute(label.to_string()))?;
        if !value.is_finite() {
            return Err(Error::InvalidConfig(format!("non-finite evidence for {label:?}")));
        }
        match best {
            Some((_, b)) if value > b => {
                best = Some((label, value));
                tie = false;
            }
            Some((_, b)) if value == b => tie = true,
            Some(_) => {}
            None => best = Some((label, value)),
        }
    }
    let (attribute, _) = best.ok_or(Error::Empty("attribute set"))?;
    Ok(Prediction { attribute: attribute.to_string(), evidence: evidence.clone(), tie })
}

fn check_truncation(cfg: &AttackConfig, available: usize) -> Result<()> {
    if !cfg.allow_truncation && available < cfg.n {
        return Err(Error::Truncated { available, requested: cfg.n });
    }
    Ok(())
}

/// Runs the attack on an already scored probe.
pub fn attack_scored(scored: &[ScoredCandidate], attributes: &AttributeSet, cfg: &AttackConfig) -> Result<Prediction> {
    let evidence = match cfg.strategy {
        Strategy::Vote => {
            let top = rank_single(scored, cfg.n)?;
            if top.truncated {
                check_truncation(cfg, top.len())?;
            }
            evidence_vote(&top, attributes)?
        }
        strategy => {
            let lists = rank_per_attribute(scored, cfg.n, attributes)?;
            if let Some(short) = lists.values().find(|l| l.truncated) {
                check_truncation(cfg, short.len())?;
            }
            match strategy {
                Strategy::Average => evidence_average(&lists)?,
                Strategy::LinearWeighted => evidence_weighted(&lists, WeightKind::Linear)?,
                _ => evidence_weighted(&lists, WeightKind::Log)?,
            }
        }
    };
    predict(&evidence, attributes)
}

pub fn run_attack(probe: &LabeledTemplate, gallery: &Gallery, cfg: &AttackConfig) -> Result<Prediction> {
    attack_scored(&compare_all(probe, gallery)?, gallery.attributes(), cfg)
}

/// k-nearest-neighbour majority vote over a labeled training set.
pub fn knn_baseline(probe: &LabeledTemplate, training: &Gallery, k: usize) -> Result<Prediction> {
    run_attack(probe, training, &AttackConfig::new(Strategy::Vote, k)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOutcome {
    pub probe_id: String,
    pub prediction: Prediction,
    /// Best score of the probe against the whole gallery.
    pub top1_score: SimilarityScore,
}

fn best_score(scored: &[ScoredCandidate]) -> Result<SimilarityScore> {
    scored
        .iter()
        .min_by(|a, b| ranking_order(a, b))
        .map(|c| c.score)
        .ok_or(Error::Empty("scored candidates"))
}

/// Attacks every probe. Results are in probe order whatever the thread count.
pub fn batch_attack(probes: &[LabeledTemplate], gallery: &Gallery, cfg: &AttackConfig) -> Result<Vec<AttackOutcome>> {
    let mut sweep = batch_attack_sweep(probes, gallery, std::slice::from_ref(cfg))?;
    Ok(sweep.pop().unwrap_or_default())
}

/// Attacks every probe under each configuration, scoring each probe once.
/// The outer vector follows `configs`, the inner one follows `probes`.
pub fn batch_attack_sweep(
    probes: &[LabeledTemplate],
    gallery: &Gallery,
    configs: &[AttackConfig],
) -> Result<Vec<Vec<AttackOutcome>>> {
    let per_probe: Vec<Vec<AttackOutcome>> = probes
        .par_iter()
        .map(|probe| {
            let scored = compare_all(probe, gallery)?;
            let top1_score = best_score(&scored)?;
            configs
                .iter()
                .map(|cfg| {
                    Ok(AttackOutcome {
                        probe_id: probe.id.clone(),
                        prediction: attack_scored(&scored, gallery.attributes(), cfg)?,
                        top1_score,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut by_config: Vec<Vec<AttackOutcome>> =
        configs.iter().map(|_| Vec::with_capacity(probes.len())).collect();
    for outcomes in per_probe {
        for (slot, outcome) in by_config.iter_mut().zip(outcomes) {
            slot.push(outcome);
        }
    }
    Ok(by_config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub probe_id: String,
    pub predicted: String,
    #[serde(rename = "true")]
    pub truth: String,
    pub top1_score: f64,
    pub tie: bool,
}

/// One attack run against one target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackReport {
    pub attacker_gallery: String,
    pub target: String,
    pub strategy: Strategy,
    pub n: usize,
    pub success_rate: f64,
    pub predictions: Vec<PredictionRecord>,
}

impl AttackReport {
    pub fn new(
        attacker_gallery: impl Into<String>,
        target: impl Into<String>,
        cfg: &AttackConfig,
        probes: &[LabeledTemplate],
        outcomes: &[AttackOutcome],
    ) -> Result<Self> {
        if probes.len() != outcomes.len() {
            return Err(Error::LengthMismatch { left: probes.len(), right: outcomes.len() });
        }
        let truths: Vec<&str> = probes.iter().map(|p| p.attribute.as_str()).collect();
        let predicted: Vec<&Prediction> = outcomes.iter().map(|o| &o.prediction).collect();
        let success_rate = metrics::attack_success_rate(&predicted, &truths)?;
        let predictions = probes
            .iter()
            .zip(outcomes)
            .map(|(probe, o)| PredictionRecord {
                probe_id: o.probe_id.clone(),
                predicted: o.prediction.attribute.clone(),
                truth: probe.attribute.clone(),
                top1_score: o.top1_score.value(),
                tie: o.prediction.tie,
            })
            .collect();
        Ok(Self {
            attacker_gallery: attacker_gallery.into(),
            target: target.into(),
            strategy: cfg.strategy,
            n: cfg.n,
            success_rate,
            predictions,
        })
    }

    pub fn top1_scores(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.top1_score).collect()
    }
}
