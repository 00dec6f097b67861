//! Attacker-database preparation: one sample per identity, attribute
//! balancing and cross-dataset duplicate flagging for manual review.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stage_rng, Stage};
use crate::template::{cosine_with_norms, norm, normalize_score, AttributeSet, LabeledTemplate, SimilarityScore};

/// Keeps the highest-quality record of each identity, in order of first
/// appearance. Missing quality ranks below any value; ties keep the earlier
/// record.
pub fn select_one_per_identity(records: &[LabeledTemplate]) -> Vec<LabeledTemplate> {
    let mut best: Vec<&LabeledTemplate> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let rank = |t: &LabeledTemplate| t.quality.unwrap_or(f64::NEG_INFINITY);
    for record in records {
        match slot.get(record.identity.as_str()) {
            Some(&i) => {
                if rank(record) > rank(best[i]) {
                    best[i] = record;
                }
            }
            None => {
                slot.insert(&record.identity, best.len());
                best.push(record);
            }
        }
    }
    best.into_iter().cloned().collect()
}

/// Downsamples every attribute class to the size of the smallest one.
/// The output is sorted by id.
pub fn balance_by_attribute(
    records: &[LabeledTemplate],
    attributes: &AttributeSet,
    seed: u64,
) -> Result<Vec<LabeledTemplate>> {
    let mut classes: Vec<Vec<&LabeledTemplate>> = vec![Vec::new(); attributes.len()];
    for record in records {
        let idx = attributes
            .index_of(&record.attribute)
            .ok_or_else(|| Error::UnknownAttribute(record.attribute.clone()))?;
        classes[idx].push(record);
    }
    if let Some(idx) = classes.iter().position(Vec::is_empty) {
        return Err(Error::MissingAttribute(attributes.labels()[idx].clone()));
    }
    let target = classes.iter().map(Vec::len).min().unwrap_or(0);

    let mut rng = stage_rng(seed, Stage::Balance);
    let mut out = Vec::with_capacity(target * classes.len());
    for class in &classes {
        if class.len() == target {
            out.extend(class.iter().map(|&t| t.clone()));
        } else {
            out.extend(index::sample(&mut rng, class.len(), target).into_iter().map(|i| class[i].clone()));
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateFlag {
    pub id_a: String,
    pub id_b: String,
    pub score: SimilarityScore,
}

/// Every cross pair scoring above `threshold`, highest score first.
pub fn flag_cross_dataset_duplicates(
    a: &[LabeledTemplate],
    b: &[LabeledTemplate],
    threshold: f64,
) -> Result<Vec<DuplicateFlag>> {
    let Some(dimension) = a.first().or(b.first()).map(LabeledTemplate::dimension) else {
        return Ok(Vec::new());
    };
    for t in a.iter().chain(b) {
        if t.dimension() != dimension {
            return Err(Error::DimensionMismatch { expected: dimension, found: t.dimension() });
        }
        t.validate()?;
    }
    let b_norms: Vec<f64> = b.iter().map(|t| norm(&t.embedding)).collect();

    let mut flags: Vec<DuplicateFlag> = a
        .par_iter()
        .map(|ta| {
            let na = norm(&ta.embedding);
            let mut row = Vec::new();
            for (tb, &nb) in b.iter().zip(&b_norms) {
                let score = normalize_score(cosine_with_norms(&ta.embedding, na, &tb.embedding, nb))?;
                if score.value() > threshold {
                    row.push(DuplicateFlag { id_a: ta.id.clone(), id_b: tb.id.clone(), score });
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    flags.sort_by(|x, y| {
        y.score
            .value()
            .total_cmp(&x.score.value())
            .then_with(|| x.id_a.cmp(&y.id_a))
            .then_with(|| x.id_b.cmp(&y.id_b))
    });
    Ok(flags)
}

/// Writes flags as `id_a,id_b,score`.
pub fn write_flags<W: Write>(writer: W, flags: &[DuplicateFlag]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(["id_a", "id_b", "score"])?;
    for f in flags {
        wtr.write_record([f.id_a.as_str(), f.id_b.as_str(), &f.score.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
