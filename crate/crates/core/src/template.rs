//! Labeled templates, galleries and the normalized cosine comparator.
//!
//! Scores follow the `[0, 1]` convention: `0` is complete dissimilarity and
//! `1` a perfect match. The comparator is symmetric; black-box enhancers are
//! assumed to preserve that.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One embedding with its subject identity and soft-biometric label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTemplate {
    pub id: String,
    pub identity: String,
    pub attribute: String,
    pub quality: Option<f64>,
    pub embedding: Vec<f64>,
}

impl LabeledTemplate {
    pub fn new(
        id: impl Into<String>,
        identity: impl Into<String>,
        attribute: impl Into<String>,
        quality: Option<f64>,
        embedding: Vec<f64>,
    ) -> Result<Self> {
        let template = Self {
            id: id.into(),
            identity: identity.into(),
            attribute: attribute.into(),
            quality,
            embedding,
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding.is_empty() {
            return Err(Error::InvalidTemplate(format!("{}: empty embedding", self.id)));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTemplate(format!("{}: non-finite embedding value", self.id)));
        }
        if norm(&self.embedding) == 0.0 {
            return Err(Error::ZeroNorm);
        }
        if self.attribute.is_empty() {
            return Err(Error::InvalidTemplate(format!("{}: empty attribute", self.id)));
        }
        if matches!(self.quality, Some(q) if q.is_nan()) {
            return Err(Error::InvalidTemplate(format!("{}: NaN quality", self.id)));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.embedding.len()
    }
}

/// Distinct attribute labels in canonical order. The order decides evidence
/// ties, so it must stay fixed for a whole run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AttributeSet {
    labels: Vec<String>,
}

impl AttributeSet {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::InvalidAttributes(format!(
                "need at least 2 attributes, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::InvalidAttributes("empty attribute label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidAttributes(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Distinct labels of `templates`, sorted lexicographically.
    pub fn from_templates(templates: &[LabeledTemplate]) -> Result<Self> {
        let mut labels: Vec<&str> = templates.iter().map(|t| t.attribute.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        Self::new(labels)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

impl TryFrom<Vec<String>> for AttributeSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<AttributeSet> for Vec<String> {
    fn from(set: AttributeSet) -> Self {
        set.labels
    }
}

/// The attacker's labeled database. Immutable once built.
#[derive(Debug, Clone)]
pub struct Gallery {
    templates: Vec<LabeledTemplate>,
    norms: Vec<f64>,
    attributes: AttributeSet,
    dimension: usize,
}

impl Gallery {
    pub fn new(templates: Vec<LabeledTemplate>, attributes: AttributeSet) -> Result<Self> {
        let first = templates.first().ok_or(Error::Empty("gallery"))?;
        let dimension = first.dimension();
        let mut ids = HashSet::with_capacity(templates.len());
        let mut counts = vec![0usize; attributes.len()];
        for t in &templates {
            t.validate()?;
            if t.dimension() != dimension {
                return Err(Error::DimensionMismatch { expected: dimension, found: t.dimension() });
            }
            if !ids.insert(t.id.as_str()) {
                return Err(Error::InvalidTemplate(format!("duplicate id {:?}", t.id)));
            }
            let idx = attributes
                .index_of(&t.attribute)
                .ok_or_else(|| Error::UnknownAttribute(t.attribute.clone()))?;
            counts[idx] += 1;
        }
        if let Some(idx) = counts.iter().position(|&c| c == 0) {
            return Err(Error::MissingAttribute(attributes.labels()[idx].clone()));
        }
        let norms = templates.iter().map(|t| norm(&t.embedding)).collect();
        Ok(Self { templates, norms, attributes, dimension })
    }

    /// Builds a gallery whose attribute set is inferred from the templates.
    pub fn from_templates(templates: Vec<LabeledTemplate>) -> Result<Self> {
        let attributes = AttributeSet::from_templates(&templates)?;
        Self::new(templates, attributes)
    }

    pub fn templates(&self) -> &[LabeledTemplate] {
        &self.templates
    }

    pub fn attributes(&self) -> &AttributeSet {
        &self.attributes
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn into_templates(self) -> Vec<LabeledTemplate> {
        self.templates
    }
}

/// A comparison score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SimilarityScore {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SimilarityScore> for f64 {
    fn from(score: SimilarityScore) -> Self {
        score.0
    }
}

impl fmt::Display for SimilarityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub score: SimilarityScore,
    pub candidate_id: String,
    pub attribute: String,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn cosine_with_norms(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Raw cosine similarity in `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

/// Affine map `(1 + raw) / 2` from cosine range onto `[0, 1]`.
pub fn normalize_score(raw: f64) -> Result<SimilarityScore> {
    if !(-1.0..=1.0).contains(&raw) {
        return Err(Error::ScoreOutOfRange(raw));
    }
    SimilarityScore::new((1.0 + raw) / 2.0)
}

/// Normalized cosine score between two embeddings.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<SimilarityScore> {
    normalize_score(cosine_similarity(a, b)?)
}

/// Scores `probe` against every gallery entry, in gallery order.
pub fn compare_all(probe: &LabeledTemplate, gallery: &Gallery) -> Result<Vec<ScoredCandidate>> {
    if probe.dimension() != gallery.dimension() {
        return Err(Error::DimensionMismatch {
            expected: gallery.dimension(),
            found: probe.dimension(),
        });
    }
    let probe_norm = norm(&probe.embedding);
    if probe_norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    gallery
        .templates
        .iter()
        .zip(&gallery.norms)
        .map(|(entry, &entry_norm)| {
            let raw = cosine_with_norms(&probe.embedding, probe_norm, &entry.embedding, entry_norm);
            Ok(ScoredCandidate {
                score: normalize_score(raw)?,
                candidate_id: entry.id.clone(),
                attribute: entry.attribute.clone(),
            })
        })
        .collect()
}
