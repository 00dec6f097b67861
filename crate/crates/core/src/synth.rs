//! Seeded synthetic embeddings with a tunable broad-homogeneity effect, and
//! toy black-box enhancers.
//!
//! Each attribute gets an anchor of norm `signal_strength` inside the
//! attribute subspace, which is spanned by the first `attribute_subspace_dim`
//! coordinate axes. An identity centroid is its attribute anchor plus an
//! isotropic Gaussian offset of spread `between_identity_spread`; a sample is
//! its centroid plus isotropic Gaussian noise of spread
//! `within_identity_noise`.
//!
//! Draw order, all from the synth stream of the seed:
//!
//! 1. one standard normal vector of length `attribute_subspace_dim` per
//!    attribute, in canonical order (scaled to the anchor);
//! 2. gallery identities, attribute by attribute: the centroid offset
//!    (`dimension` normals), then per sample `dimension` normals and one
//!    uniform quality in `[0, 1)`;
//! 3. probes, in the same layout. Non-mated probes draw fresh centroids;
//!    mated probes reuse the centroids of the first gallery identities of
//!    each attribute and draw only samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stage_rng, Stage};
use crate::template::{AttributeSet, Gallery, LabeledTemplate};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Probes come from identities absent from the gallery.
    #[default]
    Nonmated,
    /// Probes are fresh samples of gallery identities.
    Mated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dimension: usize,
    pub identities_per_attribute: usize,
    pub samples_per_identity: usize,
    pub attribute_subspace_dim: usize,
    pub signal_strength: f64,
    pub within_identity_noise: f64,
    pub between_identity_spread: f64,
    pub seed: u64,
    pub attributes: AttributeSet,
    #[serde(default)]
    pub probe_identities_per_attribute: usize,
    #[serde(default)]
    pub probe_mode: ProbeMode,
}

impl SynthConfig {
    /// A two-attribute (`F`, `M`) configuration with one sample per identity
    /// and no probes.
    pub fn new(dimension: usize, identities_per_attribute: usize, attribute_subspace_dim: usize, seed: u64) -> Self {
        Self {
            dimension,
            identities_per_attribute,
            samples_per_identity: 1,
            attribute_subspace_dim,
            signal_strength: 1.0,
            within_identity_noise: 0.3,
            between_identity_spread: 0.3,
            seed,
            attributes: AttributeSet::new(["F", "M"]).expect("two distinct labels"),
            probe_identities_per_attribute: 0,
            probe_mode: ProbeMode::Nonmated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.attribute_subspace_dim < 1 {
            return fail("attribute_subspace_dim must be at least 1".into());
        }
        if self.attribute_subspace_dim >= self.dimension {
            return fail(format!(
                "attribute_subspace_dim ({}) must be smaller than dimension ({})",
                self.attribute_subspace_dim, self.dimension
            ));
        }
        if self.identities_per_attribute < 1 {
            return fail("identities_per_attribute must be at least 1".into());
        }
        if self.samples_per_identity < 1 {
            return fail("samples_per_identity must be at least 1".into());
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return fail(format!("signal_strength must be finite and >= 0, got {}", self.signal_strength));
        }
        for (name, v) in [
            ("within_identity_noise", self.within_identity_noise),
            ("between_identity_spread", self.between_identity_spread),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.probe_mode == ProbeMode::Mated && self.probe_identities_per_attribute > self.identities_per_attribute {
            return fail(format!(
                "mated probes need probe_identities_per_attribute ({}) <= identities_per_attribute ({})",
                self.probe_identities_per_attribute, self.identities_per_attribute
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub gallery: Gallery,
    pub probes: Vec<LabeledTemplate>,
    /// Attribute anchors in canonical attribute order, full dimension.
    pub anchors: Vec<Vec<f64>>,
}

fn normals(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn centroid(&mut self, anchor: &[f64]) -> Vec<f64> {
        let offset = normals(&mut self.rng, self.cfg.dimension, self.cfg.between_identity_spread);
        anchor.iter().zip(offset).map(|(a, o)| a + o).collect()
    }

    fn samples(&mut self, prefix: &str, identity: &str, attribute: &str, centroid: &[f64]) -> Result<Vec<LabeledTemplate>> {
        (0..self.cfg.samples_per_identity)
            .map(|s| {
                let noise = normals(&mut self.rng, self.cfg.dimension, self.cfg.within_identity_noise);
                let quality: f64 = self.rng.random();
                let embedding = centroid.iter().zip(noise).map(|(c, n)| c + n).collect();
                LabeledTemplate::new(format!("{prefix}_{s:02}"), identity, attribute, Some(quality), embedding)
            })
            .collect()
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut sampler = Sampler { cfg, rng: stage_rng(cfg.seed, Stage::Synth) };

    let anchors: Vec<Vec<f64>> = cfg
        .attributes
        .iter()
        .map(|_| {
            let direction = normals(&mut sampler.rng, cfg.attribute_subspace_dim, 1.0);
            let len = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut anchor = vec![0.0; cfg.dimension];
            if len > 0.0 {
                for (slot, d) in anchor.iter_mut().zip(direction) {
                    *slot = cfg.signal_strength * d / len;
                }
            }
            anchor
        })
        .collect();

    let mut gallery = Vec::with_capacity(cfg.attributes.len() * cfg.identities_per_attribute * cfg.samples_per_identity);
    let mut centroids: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.attributes.len());
    for (ai, (attribute, anchor)) in cfg.attributes.iter().zip(&anchors).enumerate() {
        let mut own = Vec::with_capacity(cfg.identities_per_attribute);
        for j in 0..cfg.identities_per_attribute {
            let identity = format!("g{ai}_{j:05}");
            let centroid = sampler.centroid(anchor);
            gallery.extend(sampler.samples(&identity, &identity, attribute, &centroid)?);
            own.push(centroid);
        }
        centroids.push(own);
    }

    let mut probes = Vec::new();
    for (ai, (attribute, anchor)) in cfg.attributes.iter().zip(&anchors).enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..cfg.probe_identities_per_attribute {
            match cfg.probe_mode {
                ProbeMode::Nonmated => {
                    let identity = format!("p{ai}_{j:05}");
                    let centroid = sampler.centroid(anchor);
                    probes.extend(sampler.samples(&identity, &identity, attribute, &centroid)?);
                }
                ProbeMode::Mated => {
                    let identity = format!("g{ai}_{j:05}");
                    let prefix = format!("q{ai}_{j:05}");
                    probes.extend(sampler.samples(&prefix, &identity, attribute, &centroids[ai][j])?);
                }
            }
        }
    }

    Ok(SynthOutput {
        gallery: Gallery::new(gallery, cfg.attributes.clone())?,
        probes,
        anchors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnhancerSpec {
    Passthrough,
    /// A seeded random orthogonal map.
    Rotation { seed: u64 },
    /// Removes the first `directions` axes of the attribute subspace.
    ProjectOut { directions: usize },
}

/// A stand-in for a privacy-enhancing transform, used as a black box.
#[derive(Debug, Clone)]
pub struct Enhancer {
    kind: EnhancerKind,
    dimension: usize,
}

#[derive(Debug, Clone)]
enum EnhancerKind {
    Passthrough,
    Rotation(DMatrix<f64>),
    ProjectOut(usize),
}

impl Enhancer {
    pub fn new(spec: &EnhancerSpec, dimension: usize, attribute_subspace_dim: usize) -> Result<Self> {
        let kind = match *spec {
            EnhancerSpec::Passthrough => EnhancerKind::Passthrough,
            EnhancerSpec::Rotation { seed } => EnhancerKind::Rotation(random_orthogonal(dimension, seed)),
            EnhancerSpec::ProjectOut { directions } => {
                if directions > attribute_subspace_dim {
                    return Err(Error::InvalidConfig(format!(
                        "cannot remove {directions} directions from a {attribute_subspace_dim}-dimensional attribute subspace"
                    )));
                }
                EnhancerKind::ProjectOut(directions)
            }
        };
        Ok(Self { kind, dimension })
    }

    pub fn apply(&self, template: &LabeledTemplate) -> Result<LabeledTemplate> {
        if template.dimension() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: template.dimension() });
        }
        let embedding = match &self.kind {
            EnhancerKind::Passthrough => return Ok(template.clone()),
            EnhancerKind::Rotation(q) => (q * DVector::from_column_slice(&template.embedding)).as_slice().to_vec(),
            EnhancerKind::ProjectOut(r) => {
                let mut e = template.embedding.clone();
                e[..*r].iter_mut().for_each(|x| *x = 0.0);
                e
            }
        };
        LabeledTemplate::new(
            template.id.clone(),
            template.identity.clone(),
            template.attribute.clone(),
            template.quality,
            embedding,
        )
    }

    pub fn apply_all(&self, templates: &[LabeledTemplate]) -> Result<Vec<LabeledTemplate>> {
        templates.iter().map(|t| self.apply(t)).collect()
    }

    pub fn apply_gallery(&self, gallery: &Gallery) -> Result<Gallery> {
        Gallery::new(self.apply_all(gallery.templates())?, gallery.attributes().clone())
    }
}

pub fn enhance(template: &LabeledTemplate, enhancer: &Enhancer) -> Result<LabeledTemplate> {
    enhancer.apply(template)
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of R's diagonal folded into Q.
fn random_orthogonal(dimension: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stage_rng(seed, Stage::Rotation);
    let gaussian = DMatrix::from_fn(dimension, dimension, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gaussian.qr();
    let mut q = qr.q();
    let r = qr.r();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::similarity;

    #[test]
    fn sizes_and_balance() {
        let cfg = SynthConfig::new(16, 50, 4, 3);
        let out = generate(&cfg).unwrap();
        assert_eq!(out.gallery.len(), 100);
        assert_eq!(out.gallery.templates().iter().filter(|t| t.attribute == "F").count(), 50);
        assert!(out.probes.is_empty());

        let cfg = SynthConfig { samples_per_identity: 3, probe_identities_per_attribute: 5, ..cfg };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.gallery.len(), 300);
        assert_eq!(out.probes.len(), 30);
        let gallery_ids: std::collections::HashSet<&str> =
            out.gallery.templates().iter().map(|t| t.identity.as_str()).collect();
        assert!(out.probes.iter().all(|p| !gallery_ids.contains(p.identity.as_str())));

        let mated = generate(&SynthConfig { probe_mode: ProbeMode::Mated, ..cfg }).unwrap();
        assert!(mated.probes.iter().all(|p| gallery_ids.contains(p.identity.as_str())));
    }

    #[test]
    fn anchors_live_in_subspace_with_norm_beta() {
        let cfg = SynthConfig { signal_strength: 0.7, ..SynthConfig::new(12, 2, 3, 9) };
        let out = generate(&cfg).unwrap();
        for a in &out.anchors {
            assert!(a[3..].iter().all(|&x| x == 0.0));
            let n = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 0.7).abs() < 1e-12);
        }
        let zero = generate(&SynthConfig { signal_strength: 0.0, ..cfg }).unwrap();
        assert!(zero.anchors.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { probe_identities_per_attribute: 3, ..SynthConfig::new(8, 4, 2, 11) };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.gallery.templates(), b.gallery.templates());
        assert_eq!(a.probes, b.probes);
        let c = generate(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.gallery.templates(), c.gallery.templates());
    }

    #[test]
    fn config_validation() {
        let ok = SynthConfig::new(8, 4, 2, 1);
        assert!(ok.validate().is_ok());
        for bad in [
            SynthConfig { attribute_subspace_dim: 8, ..ok.clone() },
            SynthConfig { attribute_subspace_dim: 0, ..ok.clone() },
            SynthConfig { within_identity_noise: 0.0, ..ok.clone() },
            SynthConfig { between_identity_spread: -1.0, ..ok.clone() },
            SynthConfig { signal_strength: -0.1, ..ok.clone() },
            SynthConfig { identities_per_attribute: 0, ..ok.clone() },
            SynthConfig { probe_mode: ProbeMode::Mated, probe_identities_per_attribute: 5, ..ok.clone() },
        ] {
            assert!(matches!(generate(&bad), Err(Error::InvalidConfig(_))), "{bad:?}");
        }
        let msg = SynthConfig { attribute_subspace_dim: 8, ..ok }.validate().unwrap_err().to_string();
        assert!(msg.contains("attribute_subspace_dim"));
    }

    #[test]
    fn enhancers() {
        let out = generate(&SynthConfig { probe_identities_per_attribute: 2, ..SynthConfig::new(10, 3, 4, 5) }).unwrap();
        let t = &out.probes[0];

        let pass = Enhancer::new(&EnhancerSpec::Passthrough, 10, 4).unwrap();
        assert_eq!(&enhance(t, &pass).unwrap(), t);

        let rot = Enhancer::new(&EnhancerSpec::Rotation { seed: 1 }, 10, 4).unwrap();
        let u = &out.probes[1];
        let before = similarity(&t.embedding, &u.embedding).unwrap().value();
        let after = similarity(&rot.apply(t).unwrap().embedding, &rot.apply(u).unwrap().embedding)
            .unwrap()
            .value();
        assert!((before - after).abs() < 1e-12);
        assert_ne!(rot.apply(t).unwrap().embedding, t.embedding);

        let proj = Enhancer::new(&EnhancerSpec::ProjectOut { directions: 2 }, 10, 4).unwrap();
        let p = proj.apply(t).unwrap();
        assert_eq!(&p.embedding[..2], &[0.0, 0.0]);
        assert_eq!(&p.embedding[2..], &t.embedding[2..]);
        assert!(Enhancer::new(&EnhancerSpec::ProjectOut { directions: 5 }, 10, 4).is_err());

        let wrong = LabeledTemplate::new("x", "x", "F", None, vec![1.0; 3]).unwrap();
        assert!(pass.apply(&wrong).is_err());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let q = random_orthogonal(16, 4);
        let eye = &q.transpose() * &q;
        for i in 0..16 {
            for j in 0..16 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn enhancer_spec_json() {
        let spec: EnhancerSpec = serde_json::from_str(r#"{"kind":"project_out","directions":1}"#).unwrap();
        assert_eq!(spec, EnhancerSpec::ProjectOut { directions: 1 });
        let spec: EnhancerSpec = serde_json::from_str(r#"{"kind":"rotation","seed":3}"#).unwrap();
        assert_eq!(spec, EnhancerSpec::Rotation { seed: 3 });
    }
}
