//! Brute-force oracles and fixtures shared by the integration tests. None of
//! the oracles call into the metric or ranking code they check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simattack::synth::{generate, SynthConfig, SynthOutput};
use simattack::{Gallery, LabeledTemplate};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn naive_fmr(nonmated: &[f64], t: f64) -> f64 {
    let mut hits = 0usize;
    for &s in nonmated {
        if s > t {
            hits += 1;
        }
    }
    hits as f64 / nonmated.len() as f64
}

pub fn naive_fnmr(mated: &[f64], t: f64) -> f64 {
    let mut misses = 0usize;
    for &s in mated {
        if s <= t {
            misses += 1;
        }
    }
    misses as f64 / mated.len() as f64
}

/// Candidate thresholds: one below every score, the midpoints between
/// consecutive distinct pooled scores, and one above every score.
pub fn midpoint_thresholds(mated: &[f64], nonmated: &[f64]) -> Vec<f64> {
    let mut pooled: Vec<f64> = mated.iter().chain(nonmated).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    let mut out = vec![pooled[0] - 1.0];
    out.extend(pooled.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(pooled[pooled.len() - 1] + 1.0);
    out
}

/// EER by sweeping the midpoint thresholds: where FMR - FNMR hits zero the
/// rate is read off directly, otherwise both rates are interpolated across
/// the sign change.
pub fn eer_oracle(mated: &[f64], nonmated: &[f64]) -> f64 {
    let points: Vec<(f64, f64)> = midpoint_thresholds(mated, nonmated)
        .into_iter()
        .map(|t| (naive_fmr(nonmated, t), naive_fnmr(mated, t)))
        .collect();
    let best = points
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 .0 - a.1 .1).abs().partial_cmp(&(b.1 .0 - b.1 .1).abs()).unwrap())
        .unwrap()
        .0;
    let d = |i: usize| points[i].0 - points[i].1;
    if d(best) == 0.0 {
        return points[best].0;
    }
    let last_pos = (0..points.len()).filter(|&i| d(i) > 0.0).max().unwrap();
    let first_neg = (0..points.len()).filter(|&i| d(i) < 0.0).min().unwrap();
    assert!(last_pos < first_neg);
    let alpha = d(last_pos) / (d(last_pos) - d(first_neg));
    points[last_pos].0 + alpha * (points[first_neg].0 - points[last_pos].0)
}

/// Smallest observed score (or anything below all scores) whose FMR meets the
/// target.
pub fn threshold_oracle(nonmated: &[f64], target: f64) -> f64 {
    let mut candidates: Vec<f64> = nonmated.to_vec();
    candidates.push(f64::NEG_INFINITY);
    candidates
        .into_iter()
        .filter(|&t| naive_fmr(nonmated, t) <= target)
        .fold(f64::INFINITY, f64::min)
}

/// Random trial set; every other set is rounded to two decimals to force ties.
pub fn random_trials(rng: &mut ChaCha8Rng, max_len: usize, round: bool) -> (Vec<f64>, Vec<f64>) {
    let nm = rng.random_range(1..=max_len);
    let nn = rng.random_range(1..=max_len);
    let shift: f64 = rng.random_range(0.0..0.5);
    let mut draw = |len: usize, offset: f64| -> Vec<f64> {
        (0..len)
            .map(|_| {
                let v: f64 = (rng.random::<f64>() * 0.6 + offset).min(1.0);
                if round {
                    (v * 100.0).round() / 100.0
                } else {
                    v
                }
            })
            .collect()
    };
    let mated = draw(nm, shift);
    let nonmated = draw(nn, 0.0);
    (mated, nonmated)
}

/// Majority label among the `k` best-scoring entries, computed with a full
/// sort and explicit dot products.
pub fn knn_oracle(probe: &LabeledTemplate, gallery: &Gallery, k: usize) -> String {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, &str, &str)> = gallery
        .templates()
        .iter()
        .map(|g| {
            let dot: f64 = probe.embedding.iter().zip(&g.embedding).map(|(a, b)| a * b).sum();
            let cos = (dot / (norm(&probe.embedding) * norm(&g.embedding))).clamp(-1.0, 1.0);
            ((1.0 + cos) / 2.0, g.id.as_str(), g.attribute.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let mut best_label = "";
    let mut best_count = 0;
    for label in gallery.attributes().iter() {
        let count = scored.iter().take(k).filter(|s| s.2 == label).count();
        if count > best_count {
            best_count = count;
            best_label = label;
        }
    }
    best_label.to_string()
}

/// Nearest-class-mean rule on a single embedding coordinate. Equal distances
/// go to the first attribute.
pub fn mean_difference_accuracy(gallery: &Gallery, probes: &[LabeledTemplate], coordinate: usize) -> f64 {
    let attrs: Vec<&str> = gallery.attributes().iter().collect();
    let mean = |a: &str| {
        let vals: Vec<f64> = gallery
            .templates()
            .iter()
            .filter(|t| t.attribute == a)
            .map(|t| t.embedding[coordinate])
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let (m0, m1) = (mean(attrs[0]), mean(attrs[1]));
    let correct = probes
        .iter()
        .filter(|p| {
            let x = p.embedding[coordinate];
            let pred = if (x - m1).abs() < (x - m0).abs() { attrs[1] } else { attrs[0] };
            pred == p.attribute
        })
        .count();
    correct as f64 / probes.len() as f64
}

pub fn testbed(beta: f64, gallery_per_attr: usize, probes_per_attr: usize, seed: u64) -> SynthOutput {
    let cfg = SynthConfig {
        signal_strength: beta,
        probe_identities_per_attribute: probes_per_attr,
        ..SynthConfig::new(64, gallery_per_attr, 4, seed)
    };
    generate(&cfg).unwrap()
}

/// Cosine score in `[0, 1]` straight from the formula.
pub fn plain_score(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 + dot / (na * nb)) / 2.0
}

/// `count` random non-mated pairs from `templates`: (score, same attribute?).
pub fn random_nonmated_pairs(templates: &[LabeledTemplate], count: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = r.random_range(0..templates.len());
        let j = r.random_range(0..templates.len());
        let (a, b) = (&templates[i], &templates[j]);
        if a.identity == b.identity {
            continue;
        }
        out.push((plain_score(&a.embedding, &b.embedding), a.attribute == b.attribute));
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
