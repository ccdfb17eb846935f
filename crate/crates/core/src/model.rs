//! Model configuration, the trainable parameter set and checkpoint I/O.
//!
//! Every parameter tensor has a stable dotted path. Gradients reuse
//! [`ModelParams`] so optimizers and checkers can walk values and gradients
//! in lockstep through [`ModelParams::named`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Affine, Tensor};
use crate::types::{ContextDimension, VocabConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_v: usize,
    pub d_t: usize,
    pub d_cm: usize,
    pub vocab_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_v == 0 || self.d_t == 0 || self.d_cm == 0 || self.vocab_size == 0 {
            return Err(Error::Config("encoder dimensions must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FccrConfig {
    pub d_c: usize,
    pub d_f: usize,
    pub n_heads: usize,
    pub hidden: usize,
}

impl FccrConfig {
    pub fn validate(&self, d_cm: usize) -> Result<()> {
        if self.d_c == 0 || self.d_f == 0 || self.n_heads == 0 || self.hidden == 0 {
            return Err(Error::Config("fccr dimensions must be at least 1".into()));
        }
        if self.d_c % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_c = {} is not divisible by n_heads = {}",
                self.d_c, self.n_heads
            )));
        }
        if d_cm % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_cm = {d_cm} cannot be split into {} segments",
                self.n_heads
            )));
        }
        Ok(())
    }
}

/// Architecture variant; `NoFccr` replaces extraction and fusion with a
/// direct affine map from the cross-modal representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoFccr,
}

/// Dimensions of one named preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub d_v: usize,
    pub d_t: usize,
    pub d_cm: usize,
    pub d_c: usize,
    pub d_f: usize,
    pub n_heads: usize,
    pub hidden: usize,
}

impl Dims {
    pub const TOY: Dims = Dims {
        d_v: 16,
        d_t: 16,
        d_cm: 32,
        d_c: 16,
        d_f: 32,
        n_heads: 4,
        hidden: 32,
    };

    /// Prediction-head width of the full-scale configuration.
    pub const PAPER_SCALE: Dims = Dims {
        d_v: 768,
        d_t: 768,
        d_cm: 768,
        d_c: 768,
        d_f: 768,
        n_heads: 8,
        hidden: 768,
    };

    /// The small configuration used by gradient checks.
    pub const TINY: Dims = Dims {
        d_v: 6,
        d_t: 6,
        d_cm: 8,
        d_c: 4,
        d_f: 6,
        n_heads: 2,
        hidden: 5,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractParams {
    pub query: Tensor,
    pub proj: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Affine,
    pub out: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden: Affine,
    pub out: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub image: Affine,
    pub text_embedding: Tensor,
    pub text: Affine,
    pub fuse: Affine,
    pub extract: Vec<ExtractParams>,
    pub fusion: FusionParams,
    pub direct: Affine,
    pub head_overall: HeadParams,
    pub head_dims: Vec<HeadParams>,
}

fn head(n_in: usize, hidden: usize) -> HeadParams {
    HeadParams {
        hidden: Affine::zeros(n_in, hidden),
        out: Affine::zeros(hidden, 1),
    }
}

impl ModelParams {
    pub fn zeros(raw_dim: usize, enc: &EncoderConfig, fccr: &FccrConfig) -> Self {
        let seg = enc.d_cm / fccr.n_heads;
        let square = || Tensor::zeros(&[fccr.d_c, fccr.d_c]);
        ModelParams {
            image: Affine::zeros(raw_dim, enc.d_v),
            text_embedding: Tensor::zeros(&[enc.vocab_size, enc.d_t]),
            text: Affine::zeros(enc.d_t, enc.d_t),
            fuse: Affine::zeros(enc.d_v + enc.d_t, enc.d_cm),
            extract: (0..ContextDimension::ALL.len())
                .map(|_| ExtractParams {
                    query: Tensor::zeros(&[seg]),
                    proj: Affine::zeros(enc.d_cm, fccr.d_c),
                })
                .collect(),
            fusion: FusionParams {
                query: square(),
                key: square(),
                value: square(),
                output: Affine::zeros(fccr.d_c, fccr.d_c),
                out: Affine::zeros(fccr.d_c, fccr.d_f),
            },
            direct: Affine::zeros(enc.d_cm, fccr.d_f),
            head_overall: head(fccr.d_f, fccr.hidden),
            head_dims: (0..ContextDimension::ALL.len())
                .map(|_| head(fccr.d_c, fccr.hidden))
                .collect(),
        }
    }

    /// Every tensor with its checkpoint path, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        fn push_affine<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, a: &'a Affine) {
            out.push((format!("{prefix}.weight"), &a.weight));
            out.push((format!("{prefix}.bias"), &a.bias));
        }
        push_affine(&mut out, "encoder.image", &self.image);
        out.push(("encoder.text.embedding".into(), &self.text_embedding));
        push_affine(&mut out, "encoder.text", &self.text);
        push_affine(&mut out, "encoder.fuse", &self.fuse);
        for (dim, p) in ContextDimension::ALL.iter().zip(&self.extract) {
            out.push((format!("fccr.extract.{}.query", dim.slug()), &p.query));
            push_affine(&mut out, &format!("fccr.extract.{}.proj", dim.slug()), &p.proj);
        }
        out.push(("fccr.fuse.query".into(), &self.fusion.query));
        out.push(("fccr.fuse.key".into(), &self.fusion.key));
        out.push(("fccr.fuse.value".into(), &self.fusion.value));
        push_affine(&mut out, "fccr.fuse.output", &self.fusion.output);
        push_affine(&mut out, "fccr.fuse.out", &self.fusion.out);
        push_affine(&mut out, "fccr.direct", &self.direct);
        push_affine(&mut out, "head.overall.hidden", &self.head_overall.hidden);
        push_affine(&mut out, "head.overall.out", &self.head_overall.out);
        for (dim, h) in ContextDimension::ALL.iter().zip(&self.head_dims) {
            push_affine(&mut out, &format!("head.{}.hidden", dim.slug()), &h.hidden);
            push_affine(&mut out, &format!("head.{}.out", dim.slug()), &h.out);
        }
        out
    }

    /// Mutable counterpart of [`named`](Self::named), same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        fn push_affine<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, a: &'a mut Affine) {
            out.push((format!("{prefix}.weight"), &mut a.weight));
            out.push((format!("{prefix}.bias"), &mut a.bias));
        }
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        push_affine(&mut out, "encoder.image", &mut self.image);
        out.push(("encoder.text.embedding".into(), &mut self.text_embedding));
        push_affine(&mut out, "encoder.text", &mut self.text);
        push_affine(&mut out, "encoder.fuse", &mut self.fuse);
        for (dim, p) in ContextDimension::ALL.iter().zip(self.extract.iter_mut()) {
            out.push((format!("fccr.extract.{}.query", dim.slug()), &mut p.query));
            push_affine(&mut out, &format!("fccr.extract.{}.proj", dim.slug()), &mut p.proj);
        }
        let f = &mut self.fusion;
        out.push(("fccr.fuse.query".into(), &mut f.query));
        out.push(("fccr.fuse.key".into(), &mut f.key));
        out.push(("fccr.fuse.value".into(), &mut f.value));
        push_affine(&mut out, "fccr.fuse.output", &mut f.output);
        push_affine(&mut out, "fccr.fuse.out", &mut f.out);
        push_affine(&mut out, "fccr.direct", &mut self.direct);
        push_affine(&mut out, "head.overall.hidden", &mut self.head_overall.hidden);
        push_affine(&mut out, "head.overall.out", &mut self.head_overall.out);
        for (dim, h) in ContextDimension::ALL.iter().zip(self.head_dims.iter_mut()) {
            push_affine(&mut out, &format!("head.{}.hidden", dim.slug()), &mut h.hidden);
            push_affine(&mut out, &format!("head.{}.out", dim.slug()), &mut h.out);
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Euclidean norm over every tensor.
    pub fn norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let others = other.named();
        for ((_, t), (_, o)) in self.named_mut().into_iter().zip(others) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.named_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Everything needed to run the model: configs, scene vocabulary and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub encoder: EncoderConfig,
    pub fccr: FccrConfig,
    pub vocab: VocabConfig,
    pub variant: Variant,
    pub params: ModelParams,
}

impl ModelState {
    /// Seeded initialization: weights and queries uniform with the symmetric
    /// fan-in/fan-out bound, biases zero.
    pub fn new(
        encoder: EncoderConfig,
        fccr: FccrConfig,
        vocab: VocabConfig,
        variant: Variant,
    ) -> Result<Self> {
        encoder.validate()?;
        fccr.validate(encoder.d_cm)?;
        vocab.validate().map_err(Error::Config)?;
        let mut params = ModelParams::zeros(raw_feature_dim(&vocab), &encoder, &fccr);
        let mut rng = ChaCha8Rng::seed_from_u64(encoder.seed);
        for (path, t) in params.named_mut() {
            if path.ends_with(".bias") {
                continue;
            }
            let (fan_in, fan_out) = match t.shape.as_slice() {
                [n] => (*n, 1),
                // A lookup reads a single row: one active input.
                [_, cols] if path.ends_with("embedding") => (1, *cols),
                [rows, cols] => (*cols, *rows),
                _ => unreachable!("parameters are vectors or matrices"),
            };
            t.fill_uniform(fan_in, fan_out, &mut rng);
        }
        Ok(ModelState {
            encoder,
            fccr,
            vocab,
            variant,
            params,
        })
    }

    pub fn seg_len(&self) -> usize {
        self.encoder.d_cm / self.fccr.n_heads
    }
}

/// Length of the rendered scene feature vector: one-hot ids, polarity,
/// sin/cos of the hour and the coherence flag.
pub fn raw_feature_dim(vocab: &VocabConfig) -> usize {
    (vocab.persons + vocab.locations + vocab.events + vocab.narratives + vocab.backgrounds + vocab.zones)
        as usize
        + 4
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    path: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Writes one JSON line per parameter tensor. Floats use shortest
/// round-trip formatting, so reloading is exact.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (name, t) in params.named() {
        let line = CheckpointLine {
            path: name,
            shape: t.shape.clone(),
            data: t.data.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads tensors into an already-shaped parameter set; every path must be
/// present with a matching shape.
pub fn load_checkpoint(params: &mut ModelParams, path: &Path) -> Result<()> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = std::collections::HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CheckpointLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        lines.insert(parsed.path.clone(), parsed);
    }
    for (name, t) in params.named_mut() {
        let entry = lines
            .remove(&name)
            .ok_or_else(|| Error::Shape(format!("checkpoint is missing `{name}`")))?;
        if entry.shape != t.shape || entry.data.len() != t.len() {
            return Err(Error::Shape(format!(
                "`{name}` has shape {:?} in the checkpoint, model expects {:?}",
                entry.shape, t.shape
            )));
        }
        t.data = entry.data;
    }
    if let Some(extra) = lines.keys().next() {
        return Err(Error::Shape(format!("checkpoint has unknown tensor `{extra}`")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelState {
        let d = Dims::TOY;
        ModelState::new(
            EncoderConfig {
                d_v: d.d_v,
                d_t: d.d_t,
                d_cm: d.d_cm,
                vocab_size: 124,
                noise_std: 0.0,
                seed: 3,
            },
            FccrConfig {
                d_c: d.d_c,
                d_f: d.d_f,
                n_heads: d.n_heads,
                hidden: d.hidden,
            },
            VocabConfig::default(),
            Variant::Full,
        )
        .unwrap()
    }

    #[test]
    fn paths_are_unique_and_cover_fccr_layout() {
        let m = toy();
        let names: Vec<String> = m.params.named().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.contains(&"fccr.extract.sentiment.query".to_string()));
        assert!(names.contains(&"fccr.fuse.out.weight".to_string()));
        assert!(names.contains(&"head.overall.out.bias".to_string()));
        assert!(names.contains(&"head.logical_coherence.hidden.weight".to_string()));
        let mut m2 = m.clone();
        let mutable: Vec<String> = m2.params.named_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mutable);
    }

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let a = toy();
        let b = toy();
        assert_eq!(a.params, b.params);
        let w = &a.params.fuse.weight;
        let bound = (6.0 / (w.shape[0] + w.shape[1]) as f64).sqrt();
        assert!(w.data.iter().all(|x| x.abs() <= bound));
        assert!(a.params.fuse.bias.data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.jsonl");
        save_checkpoint(&m.params, &path).unwrap();
        let mut fresh = m.params.zeros_like();
        load_checkpoint(&mut fresh, &path).unwrap();
        assert_eq!(fresh, m.params);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_rejected() {
        let m = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.jsonl");
        save_checkpoint(&m.params, &path).unwrap();
        let mut other = ModelParams::zeros(
            raw_feature_dim(&VocabConfig::default()),
            &EncoderConfig {
                d_v: 5,
                ..m.encoder
            },
            &m.fccr,
        );
        assert!(matches!(load_checkpoint(&mut other, &path), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let bad = FccrConfig {
            d_c: 6,
            d_f: 4,
            n_heads: 4,
            hidden: 3,
        };
        assert!(bad.validate(32).is_err());
        let ok = FccrConfig { d_c: 8, ..bad };
        assert!(ok.validate(32).is_ok());
        assert!(ok.validate(30).is_err());
    }
}
