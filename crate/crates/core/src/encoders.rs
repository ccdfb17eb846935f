//! Toy image encoder, text encoder and cross-modal fusion.
//!
//! The "image" is the scene's attribute vector: one-hot ids, polarity, the
//! hour on the unit circle and the coherence flag, plus optional Gaussian
//! observation noise. All three stages are `tanh(W x + b)` maps.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{raw_feature_dim, ModelParams, ModelState};
use crate::tensor::add_into;
use crate::types::{SceneDescriptor, VocabConfig};

/// Fused cross-modal representation.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalRep {
    pub h: Vec<f64>,
}

/// Deterministic raw feature vector of a scene (before noise).
pub fn render_scene(scene: &SceneDescriptor, vocab: &VocabConfig) -> Vec<f64> {
    let mut raw = Vec::with_capacity(raw_feature_dim(vocab));
    let mut one_hot = |value: u32, size: u32| {
        raw.extend((0..size).map(|i| if i == value { 1.0 } else { 0.0 }));
    };
    one_hot(scene.person_id, vocab.persons);
    one_hot(scene.location_id, vocab.locations);
    one_hot(scene.event_id, vocab.events);
    one_hot(scene.narrative_theme_id, vocab.narratives);
    one_hot(scene.background_id, vocab.backgrounds);
    one_hot(scene.spatial_zone_id, vocab.zones);
    let angle = TAU * scene.time_slot as f64 / 24.0;
    raw.push(scene.sentiment_polarity);
    raw.push(angle.sin());
    raw.push(angle.cos());
    raw.push(if scene.coherence_flag { 1.0 } else { 0.0 });
    raw
}

/// Per-record noise stream derived from a seed and the record id.
pub fn record_rng(seed: u64, id: &str) -> ChaCha8Rng {
    // FNV-1a over the id, mixed with the seed.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(hash ^ seed.rotate_left(17))
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub raw: Vec<f64>,
    pub v: Vec<f64>,
    pub pooled: Vec<f64>,
    pub t: Vec<f64>,
    pub vt: Vec<f64>,
    pub h: Vec<f64>,
    pub tokens: Vec<u32>,
}

fn check_image(model: &ModelState) -> Result<()> {
    let raw = raw_feature_dim(&model.vocab);
    let p = &model.params.image;
    if p.n_in() != raw || p.n_out() != model.encoder.d_v {
        return Err(Error::Shape(format!(
            "image encoder weights are {}x{}, config needs {}x{}",
            p.n_out(),
            p.n_in(),
            model.encoder.d_v,
            raw
        )));
    }
    Ok(())
}

fn noisy_features<R: Rng + ?Sized>(scene: &SceneDescriptor, model: &ModelState, rng: &mut R) -> Vec<f64> {
    let mut raw = render_scene(scene, &model.vocab);
    let std = model.encoder.noise_std;
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("validated noise_std");
        for x in &mut raw {
            *x += normal.sample(rng);
        }
    }
    raw
}

/// Visual features of length `d_v`.
pub fn encode_image<R: Rng + ?Sized>(
    scene: &SceneDescriptor,
    model: &ModelState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_image(model)?;
    let raw = noisy_features(scene, model, rng);
    Ok(model.params.image.forward_tanh(&raw))
}

fn mean_pool(tokens: &[u32], model: &ModelState) -> Result<Vec<f64>> {
    let emb = &model.params.text_embedding;
    let vocab_size = emb.shape[0];
    let mut pooled = vec![0.0; emb.shape[1]];
    for &tok in tokens {
        if tok as usize >= vocab_size {
            return Err(Error::OutOfVocabulary {
                token: tok,
                vocab_size,
            });
        }
        add_into(&mut pooled, emb.row(tok as usize));
    }
    if !tokens.is_empty() {
        let n = tokens.len() as f64;
        pooled.iter_mut().for_each(|x| *x /= n);
    }
    Ok(pooled)
}

/// Textual features of length `d_t`: mean-pooled embeddings (zero for an
/// empty sequence) through an affine map and `tanh`.
pub fn encode_text(tokens: &[u32], model: &ModelState) -> Result<Vec<f64>> {
    let pooled = mean_pool(tokens, model)?;
    Ok(model.params.text.forward_tanh(&pooled))
}

/// Concatenates visual and textual features and maps them to `d_cm`.
pub fn fuse(v: &[f64], t: &[f64], model: &ModelState) -> Result<CrossModalRep> {
    let enc = &model.encoder;
    if v.len() != enc.d_v || t.len() != enc.d_t {
        return Err(Error::Shape(format!(
            "fusion expects ({}, {}) inputs, got ({}, {})",
            enc.d_v,
            enc.d_t,
            v.len(),
            t.len()
        )));
    }
    let vt: Vec<f64> = v.iter().chain(t).copied().collect();
    Ok(CrossModalRep {
        h: model.params.fuse.forward_tanh(&vt),
    })
}

/// Runs all three encoder stages, keeping intermediates for backprop.
pub fn encode_traced<R: Rng + ?Sized>(
    scene: &SceneDescriptor,
    tokens: &[u32],
    model: &ModelState,
    rng: &mut R,
) -> Result<EncoderTrace> {
    check_image(model)?;
    let raw = noisy_features(scene, model, rng);
    let v = model.params.image.forward_tanh(&raw);
    let pooled = mean_pool(tokens, model)?;
    let t = model.params.text.forward_tanh(&pooled);
    let vt: Vec<f64> = v.iter().chain(&t).copied().collect();
    let h = model.params.fuse.forward_tanh(&vt);
    Ok(EncoderTrace {
        raw,
        v,
        pooled,
        t,
        vt,
        h,
        tokens: tokens.to_vec(),
    })
}

/// Accumulates encoder gradients for an upstream gradient on `h`.
pub fn encode_backward(trace: &EncoderTrace, dh: &[f64], model: &ModelState, grads: &mut ModelParams) {
    let p = &model.params;
    let dvt = p.fuse.backward_tanh(&trace.vt, &trace.h, dh, &mut grads.fuse);
    let (dv, dt) = dvt.split_at(model.encoder.d_v);
    p.image.backward_tanh(&trace.raw, &trace.v, dv, &mut grads.image);
    let dpooled = p.text.backward_tanh(&trace.pooled, &trace.t, dt, &mut grads.text);
    if !trace.tokens.is_empty() {
        let n = trace.tokens.len() as f64;
        for &tok in &trace.tokens {
            for (g, d) in grads.text_embedding.row_mut(tok as usize).iter_mut().zip(&dpooled) {
                *g += d / n;
            }
        }
    }
}
