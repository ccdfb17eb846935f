//! Multi-stage fine-grained contextual reasoning and the prediction heads.
//!
//! Pipeline per pair: encoders produce `h`; each context dimension owns a
//! learned query that attends over the `n_heads` segments of `h`, and the
//! attention-gated representation is projected to that dimension's context
//! vector `c_k`. The five context vectors go through one round of residual
//! multi-head self-attention, are mean-pooled and projected to the fused
//! context `f`. The overall head reads `f`; each dimension head reads its own
//! `c_k`.
//!
//! The `NoFccr` variant drops the attention stages: `f` is the direct
//! affine map `W h + b` and `c_k` is the per-dimension projection of `h`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::encoders::{encode_backward, encode_traced, record_rng, CrossModalRep, EncoderTrace};
use crate::error::{Error, Result};
use crate::model::{ExtractParams, FusionParams, HeadParams, ModelParams, ModelState, Variant};
use crate::tensor::{add_into, add_outer, dot, matvec, matvec_t, sigmoid, softmax, softmax_backward};
use crate::types::{ContextDimension, PairRecord};

/// Score clipping bounds applied inside every log-likelihood.
pub const CLIP: f64 = 1e-9;

const N_DIMS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ContextVectors {
    pub by_dimension: BTreeMap<ContextDimension, Vec<f64>>,
}

/// Overall and per-dimension consistency scores, each in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictScores {
    pub overall: f64,
    pub per_dimension: BTreeMap<ContextDimension, f64>,
    pub fused_context: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExtractTrace {
    pub alpha: Vec<f64>,
    pub gated: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    x: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// `attn[head][i][j]`
    attn: Vec<Vec<Vec<f64>>>,
    o: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    f: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub z: Vec<f64>,
    pub logit: f64,
    pub score: f64,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub encoder: EncoderTrace,
    pub extract: Vec<ExtractTrace>,
    fusion: Option<FusionTrace>,
    pub fused: Vec<f64>,
    pub overall: HeadTrace,
    pub dims: Vec<HeadTrace>,
}

impl Trace {
    pub fn scores(&self) -> VerdictScores {
        VerdictScores {
            overall: self.overall.score,
            per_dimension: ContextDimension::ALL
                .iter()
                .zip(&self.dims)
                .map(|(d, h)| (*d, h.score))
                .collect(),
            fused_context: self.fused.clone(),
        }
    }
}

fn extract_traced(h: &[f64], p: &ExtractParams, n_heads: usize, variant: Variant) -> ExtractTrace {
    match variant {
        Variant::NoFccr => ExtractTrace {
            alpha: Vec::new(),
            gated: h.to_vec(),
            c: p.proj.forward_tanh(h),
        },
        Variant::Full => {
            let seg = h.len() / n_heads;
            let scale = 1.0 / (seg as f64).sqrt();
            let scores: Vec<f64> = h
                .chunks(seg)
                .map(|s| dot(&p.query.data, s) * scale)
                .collect();
            let alpha = softmax(&scores);
            let gated: Vec<f64> = h
                .chunks(seg)
                .zip(&alpha)
                .flat_map(|(s, a)| s.iter().map(move |x| a * x))
                .collect();
            let c = p.proj.forward_tanh(&gated);
            ExtractTrace { alpha, gated, c }
        }
    }
}

fn extract_backward(
    h: &[f64],
    tr: &ExtractTrace,
    dc: &[f64],
    p: &ExtractParams,
    g: &mut ExtractParams,
    n_heads: usize,
    variant: Variant,
) -> Vec<f64> {
    let dgated = p.proj.backward_tanh(&tr.gated, &tr.c, dc, &mut g.proj);
    if variant == Variant::NoFccr {
        return dgated;
    }
    let seg = h.len() / n_heads;
    let scale = 1.0 / (seg as f64).sqrt();
    let mut dh = vec![0.0; h.len()];
    let mut dalpha = vec![0.0; n_heads];
    for j in 0..n_heads {
        let range = j * seg..(j + 1) * seg;
        dalpha[j] = dot(&dgated[range.clone()], &h[range.clone()]);
        for i in range {
            dh[i] += tr.alpha[j] * dgated[i];
        }
    }
    let dscores = softmax_backward(&tr.alpha, &dalpha);
    for j in 0..n_heads {
        let ds = dscores[j] * scale;
        for i in 0..seg {
            g.query.data[i] += ds * h[j * seg + i];
            dh[j * seg + i] += ds * p.query.data[i];
        }
    }
    dh
}

fn fusion_traced(x: Vec<Vec<f64>>, p: &FusionParams, n_heads: usize) -> FusionTrace {
    let d_c = x[0].len();
    let hd = d_c / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q: Vec<Vec<f64>> = x.iter().map(|xi| matvec(&p.query, xi)).collect();
    let k: Vec<Vec<f64>> = x.iter().map(|xi| matvec(&p.key, xi)).collect();
    let v: Vec<Vec<f64>> = x.iter().map(|xi| matvec(&p.value, xi)).collect();
    let n = x.len();
    let mut attn = Vec::with_capacity(n_heads);
    let mut o = vec![vec![0.0; d_c]; n];
    for head in 0..n_heads {
        let r = head * hd..(head + 1) * hd;
        let mut per_head = Vec::with_capacity(n);
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| dot(&q[i][r.clone()], &k[j][r.clone()]) * scale)
                .collect();
            let a = softmax(&s);
            for (j, aij) in a.iter().enumerate() {
                for (oi, vj) in o[i][r.clone()].iter_mut().zip(&v[j][r.clone()]) {
                    *oi += aij * vj;
                }
            }
            per_head.push(a);
        }
        attn.push(per_head);
    }
    let mut pooled = vec![0.0; d_c];
    for (xi, oi) in x.iter().zip(&o) {
        add_into(&mut pooled, xi);
        add_into(&mut pooled, &p.output.forward(oi));
    }
    pooled.iter_mut().for_each(|v| *v /= n as f64);
    let f = p.out.forward_tanh(&pooled);
    FusionTrace {
        x,
        q,
        k,
        v,
        attn,
        o,
        pooled,
        f,
    }
}

fn fusion_backward(tr: &FusionTrace, df: &[f64], p: &FusionParams, g: &mut FusionParams, n_heads: usize) -> Vec<Vec<f64>> {
    let n = tr.x.len();
    let d_c = tr.x[0].len();
    let hd = d_c / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let dpooled = p.out.backward_tanh(&tr.pooled, &tr.f, df, &mut g.out);
    let dy: Vec<f64> = dpooled.iter().map(|v| v / n as f64).collect();

    let mut dx: Vec<Vec<f64>> = vec![dy.clone(); n];
    let d_o: Vec<Vec<f64>> = tr.o.iter().map(|oi| p.output.backward(oi, &dy, &mut g.output)).collect();
    let mut dq = vec![vec![0.0; d_c]; n];
    let mut dk = vec![vec![0.0; d_c]; n];
    let mut dv = vec![vec![0.0; d_c]; n];
    for head in 0..n_heads {
        let r = head * hd..(head + 1) * hd;
        for i in 0..n {
            let a = &tr.attn[head][i];
            let da: Vec<f64> = (0..n).map(|j| dot(&d_o[i][r.clone()], &tr.v[j][r.clone()])).collect();
            for j in 0..n {
                for (dvj, doi) in dv[j][r.clone()].iter_mut().zip(&d_o[i][r.clone()]) {
                    *dvj += a[j] * doi;
                }
            }
            let ds = softmax_backward(a, &da);
            for j in 0..n {
                let s = ds[j] * scale;
                for t in r.clone() {
                    dq[i][t] += s * tr.k[j][t];
                    dk[j][t] += s * tr.q[i][t];
                }
            }
        }
    }
    for i in 0..n {
        add_outer(&mut g.query, &dq[i], &tr.x[i]);
        add_outer(&mut g.key, &dk[i], &tr.x[i]);
        add_outer(&mut g.value, &dv[i], &tr.x[i]);
        add_into(&mut dx[i], &matvec_t(&p.query, &dq[i]));
        add_into(&mut dx[i], &matvec_t(&p.key, &dk[i]));
        add_into(&mut dx[i], &matvec_t(&p.value, &dv[i]));
    }
    dx
}

fn head_traced(x: &[f64], p: &HeadParams) -> HeadTrace {
    let z = p.hidden.forward_tanh(x);
    let logit = p.out.forward(&z)[0];
    HeadTrace {
        z,
        logit,
        score: sigmoid(logit),
    }
}

fn head_backward(x: &[f64], tr: &HeadTrace, dlogit: f64, p: &HeadParams, g: &mut HeadParams) -> Vec<f64> {
    let dz = p.out.backward(&tr.z, &[dlogit], &mut g.out);
    p.hidden.backward_tanh(x, &tr.z, &dz, &mut g.hidden)
}

fn check_h(h: &[f64], model: &ModelState) -> Result<()> {
    if h.len() != model.encoder.d_cm {
        return Err(Error::Shape(format!(
            "cross-modal representation has length {}, expected {}",
            h.len(),
            model.encoder.d_cm
        )));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Shape("cross-modal representation is not finite".into()));
    }
    Ok(())
}

/// Context vector `c_k` of length `d_c` for one dimension.
pub fn extract_context(h: &CrossModalRep, dim: ContextDimension, model: &ModelState) -> Result<Vec<f64>> {
    check_h(&h.h, model)?;
    let p = &model.params.extract[dim.index()];
    Ok(extract_traced(&h.h, p, model.fccr.n_heads, model.variant).c)
}

/// Attention weights of dimension `dim`'s query over the segments of `h`.
pub fn segment_attention(h: &CrossModalRep, dim: ContextDimension, model: &ModelState) -> Result<Vec<f64>> {
    check_h(&h.h, model)?;
    let p = &model.params.extract[dim.index()];
    Ok(extract_traced(&h.h, p, model.fccr.n_heads, Variant::Full).alpha)
}

/// Fused context `f` of length `d_f` from the five context vectors.
pub fn fuse_contexts(ctx: &ContextVectors, model: &ModelState) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(N_DIMS);
    for dim in ContextDimension::ALL {
        let c = ctx
            .by_dimension
            .get(&dim)
            .ok_or_else(|| Error::Shape(format!("context vector for {dim} is missing")))?;
        if c.len() != model.fccr.d_c {
            return Err(Error::Shape(format!(
                "context vector for {dim} has length {}, expected {}",
                c.len(),
                model.fccr.d_c
            )));
        }
        x.push(c.clone());
    }
    Ok(fusion_traced(x, &model.params.fusion, model.fccr.n_heads).f)
}

pub fn predict_overall(f: &[f64], model: &ModelState) -> Result<f64> {
    if f.len() != model.fccr.d_f {
        return Err(Error::Shape(format!("fused context has length {}, expected {}", f.len(), model.fccr.d_f)));
    }
    Ok(head_traced(f, &model.params.head_overall).score)
}

pub fn predict_dimension(c: &[f64], dim: ContextDimension, model: &ModelState) -> Result<f64> {
    if c.len() != model.fccr.d_c {
        return Err(Error::Shape(format!("context vector has length {}, expected {}", c.len(), model.fccr.d_c)));
    }
    Ok(head_traced(c, &model.params.head_dims[dim.index()]).score)
}

/// Full forward pass keeping every intermediate.
pub fn forward_traced<R: Rng + ?Sized>(record: &PairRecord, model: &ModelState, rng: &mut R) -> Result<Trace> {
    let encoder = encode_traced(&record.scene, &record.text_tokens, model, rng)?;
    let p = &model.params;
    let n_heads = model.fccr.n_heads;
    let extract: Vec<ExtractTrace> = p
        .extract
        .iter()
        .map(|e| extract_traced(&encoder.h, e, n_heads, model.variant))
        .collect();
    let (fusion, fused) = match model.variant {
        Variant::Full => {
            let x = extract.iter().map(|e| e.c.clone()).collect();
            let tr = fusion_traced(x, &p.fusion, n_heads);
            let f = tr.f.clone();
            (Some(tr), f)
        }
        Variant::NoFccr => (None, p.direct.forward(&encoder.h)),
    };
    let overall = head_traced(&fused, &p.head_overall);
    let dims = extract
        .iter()
        .zip(&p.head_dims)
        .map(|(e, h)| head_traced(&e.c, h))
        .collect();
    Ok(Trace {
        encoder,
        extract,
        fusion,
        fused,
        overall,
        dims,
    })
}

/// Scores for one pair. Observation noise (if any) is drawn from `rng`.
pub fn forward<R: Rng + ?Sized>(record: &PairRecord, model: &ModelState, rng: &mut R) -> Result<VerdictScores> {
    Ok(forward_traced(record, model, rng)?.scores())
}

/// Scores with noise drawn from the record's own deterministic stream.
pub fn predict(record: &PairRecord, model: &ModelState) -> Result<VerdictScores> {
    let mut rng = record_rng(model.encoder.seed, &record.id);
    forward(record, model, &mut rng)
}

/// Backpropagates gradients given on the overall and per-dimension logits.
pub fn backward(trace: &Trace, d_overall: f64, d_dims: &[f64], model: &ModelState, grads: &mut ModelParams) {
    let p = &model.params;
    let n_heads = model.fccr.n_heads;
    let h = &trace.encoder.h;
    let mut dh = vec![0.0; h.len()];

    let df = head_backward(&trace.fused, &trace.overall, d_overall, &p.head_overall, &mut grads.head_overall);
    let mut dc: Vec<Vec<f64>> = match (&trace.fusion, model.variant) {
        (Some(fusion), Variant::Full) => fusion_backward(fusion, &df, &p.fusion, &mut grads.fusion, n_heads),
        _ => {
            let d = p.direct.backward(h, &df, &mut grads.direct);
            add_into(&mut dh, &d);
            vec![vec![0.0; model.fccr.d_c]; N_DIMS]
        }
    };
    for k in 0..N_DIMS {
        if d_dims[k] != 0.0 {
            let d = head_backward(
                &trace.extract[k].c,
                &trace.dims[k],
                d_dims[k],
                &p.head_dims[k],
                &mut grads.head_dims[k],
            );
            add_into(&mut dc[k], &d);
        }
        if dc[k].iter().any(|v| *v != 0.0) {
            let d = extract_backward(
                h,
                &trace.extract[k],
                &dc[k],
                &p.extract[k],
                &mut grads.extract[k],
                n_heads,
                model.variant,
            );
            add_into(&mut dh, &d);
        }
    }
    encode_backward(&trace.encoder, &dh, model, grads);
}

/// Binary cross-entropy of a score clipped to `[CLIP, 1 - CLIP]`.
pub fn bce(score: f64, label: bool) -> f64 {
    let p = score.clamp(CLIP, 1.0 - CLIP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Derivative of [`bce`] with respect to the pre-sigmoid logit.
pub fn bce_logit_grad(score: f64, label: bool) -> f64 {
    if !(CLIP..=1.0 - CLIP).contains(&score) {
        return 0.0;
    }
    score - if label { 1.0 } else { 0.0 }
}

/// Weights of the two terms of the labelled objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub overall: f64,
    pub dims: f64,
}

/// `overall · mean BCE(overall) + dims · mean BCE(S_k)` where the second mean
/// runs over every annotated (record, dimension) pair. Gradients are
/// accumulated into `grads`.
pub fn labelled_loss<R: Rng + ?Sized>(
    batch: &[&PairRecord],
    model: &ModelState,
    weights: LossWeights,
    rng: &mut R,
    grads: &mut ModelParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_present: usize = batch.iter().map(|r| r.ctxt_labels.len()).sum();
    let overall_scale = weights.overall / batch.len() as f64;
    let dim_scale = if n_present > 0 { weights.dims / n_present as f64 } else { 0.0 };
    let mut loss = 0.0;
    for record in batch {
        let trace = forward_traced(record, model, rng)?;
        loss += overall_scale * bce(trace.overall.score, record.overall_consistent);
        let d_overall = overall_scale * bce_logit_grad(trace.overall.score, record.overall_consistent);
        let mut d_dims = [0.0; N_DIMS];
        for (dim, label) in &record.ctxt_labels {
            let s = trace.dims[dim.index()].score;
            loss += dim_scale * bce(s, *label);
            d_dims[dim.index()] = dim_scale * bce_logit_grad(s, *label);
        }
        backward(&trace, d_overall, &d_dims, model, grads);
    }
    Ok(loss)
}

/// Supervised objective of the ablation baseline: overall BCE plus
/// `dim_weight` times the per-dimension BCE. Returns the loss and its
/// gradient with respect to every parameter.
pub fn supervised_loss<R: Rng + ?Sized>(
    batch: &[&PairRecord],
    model: &ModelState,
    dim_weight: f64,
    rng: &mut R,
) -> Result<(f64, ModelParams)> {
    let mut grads = model.params.zeros_like();
    let loss = labelled_loss(
        batch,
        model,
        LossWeights {
            overall: 1.0,
            dims: dim_weight,
        },
        rng,
        &mut grads,
    )?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, GenConfig, World};
    use crate::gradcheck::{check_params, GradCheck};
    use crate::model::{Dims, EncoderConfig, FccrConfig};
    use crate::types::VocabConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(dims: Dims, variant: Variant, seed: u64) -> ModelState {
        ModelState::new(
            EncoderConfig {
                d_v: dims.d_v,
                d_t: dims.d_t,
                d_cm: dims.d_cm,
                vocab_size: World::new(VocabConfig::default()).grammar.vocab_size(),
                noise_std: 0.0,
                seed,
            },
            FccrConfig {
                d_c: dims.d_c,
                d_f: dims.d_f,
                n_heads: dims.n_heads,
                hidden: dims.hidden,
            },
            VocabConfig::default(),
            variant,
        )
        .unwrap()
    }

    fn records(n: usize, seed: u64) -> Vec<PairRecord> {
        let w = World::new(VocabConfig::default());
        generate_corpus(
            &GenConfig {
                n_consistent: n / 2,
                n_inconsistent: n - n / 2,
                seed,
                ..GenConfig::default()
            },
            &w,
        )
        .unwrap()
        .records
    }

    fn random_h(m: &ModelState, seed: u64) -> CrossModalRep {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CrossModalRep {
            h: (0..m.encoder.d_cm).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn extraction_shape_and_attention_normalization() {
        let m = model(Dims::TOY, Variant::Full, 1);
        let h = random_h(&m, 2);
        for dim in ContextDimension::ALL {
            assert_eq!(extract_context(&h, dim, &m).unwrap().len(), m.fccr.d_c);
            let a = segment_attention(&h, dim, &m).unwrap();
            assert_eq!(a.len(), m.fccr.n_heads);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(extract_context(&CrossModalRep { h: vec![0.0; 3] }, ContextDimension::Sentiment, &m).is_err());
    }

    #[test]
    fn fusion_is_invariant_to_input_order() {
        let m = model(Dims::TOY, Variant::Full, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vectors: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..m.fccr.d_c).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ctx = |order: &[usize]| ContextVectors {
            by_dimension: ContextDimension::ALL
                .iter()
                .zip(order)
                .map(|(d, i)| (*d, vectors[*i].clone()))
                .collect(),
        };
        let base = fuse_contexts(&ctx(&[0, 1, 2, 3, 4]), &m).unwrap();
        assert_eq!(base.len(), m.fccr.d_f);
        let permuted = fuse_contexts(&ctx(&[3, 0, 4, 2, 1]), &m).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_requires_every_dimension() {
        let m = model(Dims::TOY, Variant::Full, 4);
        let mut ctx = ContextVectors {
            by_dimension: ContextDimension::ALL.iter().map(|d| (*d, vec![0.0; m.fccr.d_c])).collect(),
        };
        ctx.by_dimension.remove(&ContextDimension::Narrative);
        assert!(fuse_contexts(&ctx, &m).is_err());
    }

    #[test]
    fn zero_heads_give_one_half() {
        let mut m = model(Dims::TOY, Variant::Full, 4);
        m.params = m.params.zeros_like();
        let f = vec![0.3; m.fccr.d_f];
        assert_eq!(predict_overall(&f, &m).unwrap(), 0.5);
        for dim in ContextDimension::ALL {
            assert_eq!(predict_dimension(&vec![0.2; m.fccr.d_c], dim, &m).unwrap(), 0.5);
        }
    }

    #[test]
    fn overall_bias_shift_is_monotone() {
        let mut m = model(Dims::TOY, Variant::Full, 4);
        let f = vec![0.1; m.fccr.d_f];
        let before = predict_overall(&f, &m).unwrap();
        m.params.head_overall.out.bias.data[0] += 0.5;
        assert!(predict_overall(&f, &m).unwrap() > before);
    }

    #[test]
    fn dimension_heads_differ() {
        let m = model(Dims::TOY, Variant::Full, 8);
        let c = vec![0.4; m.fccr.d_c];
        let scores: Vec<f64> = ContextDimension::ALL
            .iter()
            .map(|d| predict_dimension(&c, *d, &m).unwrap())
            .collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(scores[i], scores[j]);
            }
        }
    }

    #[test]
    fn forward_contract_and_idempotence() {
        let m = model(Dims::TOY, Variant::Full, 2);
        for r in records(6, 3) {
            let a = predict(&r, &m).unwrap();
            let b = predict(&r, &m).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.per_dimension.len(), 5);
            assert!(a.overall > 0.0 && a.overall < 1.0);
            assert!(a.per_dimension.values().all(|s| *s > 0.0 && *s < 1.0));
        }
    }

    #[test]
    fn dimension_parameters_are_disjoint() {
        let m = model(Dims::TOY, Variant::Full, 2);
        let r = &records(2, 5)[0];
        let base = predict(r, &m).unwrap();
        let mut bumped = m.clone();
        let k = ContextDimension::Background.index();
        bumped.params.extract[k].proj.weight.data[3] += 0.3;
        bumped.params.head_dims[k].hidden.weight.data[1] += 0.3;
        let after = predict(r, &bumped).unwrap();
        for dim in ContextDimension::ALL {
            let changed = base.per_dimension[&dim] != after.per_dimension[&dim];
            assert_eq!(changed, dim == ContextDimension::Background, "{dim}");
        }
        assert_ne!(base.overall, after.overall);
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce(1.0 - 1e-9, true) < 1e-6);
        assert!(bce(1.0, true) < 1e-6);
        assert!(bce(0.0, false) < 1e-6);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = model(Dims::TINY, Variant::Full, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(supervised_loss(&[], &m, 1.0, &mut rng), Err(Error::EmptyBatch)));
    }

    fn grad_check(variant: Variant) {
        let m = model(Dims::TINY, variant, 13);
        let data = records(6, 21);
        let batch: Vec<&PairRecord> = data.iter().collect();
        let (_, grads) = supervised_loss(&batch, &m, 0.7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let report = check_params(
            &m,
            &grads,
            |probe| supervised_loss(&batch, probe, 0.7, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0,
            &GradCheck::default(),
            |_| true,
        );
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn supervised_gradients_full_variant() {
        grad_check(Variant::Full);
    }

    #[test]
    fn supervised_gradients_no_fccr_variant() {
        grad_check(Variant::NoFccr);
    }
}
