//! Shared test helpers: an independent straight-line reference forward pass
//! and file hashing for golden checks.
//!
//! The reference is deliberately written as one monolithic function in plain
//! f64 with std-library math, no intermediate f32 rounding and none of the
//! crate's forward machinery, so it can serve as the second implementation
//! in the dual-implementation oracle.

use ima_core::checkpoint::{ModelCheckpoint, NormParams};
use ima_core::config::{ActivationKind, NormKind, PositionalMode};
use ima_core::sequence::TaggedSequence;
use ima_core::tensor::Matrix;

/// Per-layer, per-token inputs of every linear site, recorded in f64.
pub struct ReferenceSites {
    /// `[layer][token] -> LN1 output` (Q/K/V input).
    pub qkv: Vec<Vec<Vec<f64>>>,
    /// `[layer][token] -> attention context` (O input).
    pub attn_out: Vec<Vec<Vec<f64>>>,
    /// `[layer][token] -> LN2 output` (FC1 input).
    pub fc1: Vec<Vec<Vec<f64>>>,
    /// `[layer][token] -> activated hidden` (FC2 input).
    pub fc2: Vec<Vec<Vec<f64>>>,
}

#[allow(dead_code)]
pub fn reference_logits(model: &ModelCheckpoint, seq: &TaggedSequence) -> Vec<Vec<f64>> {
    reference_forward(model, seq).0
}

#[allow(clippy::needless_range_loop)]
pub fn reference_forward(
    model: &ModelCheckpoint,
    seq: &TaggedSequence,
) -> (Vec<Vec<f64>>, ReferenceSites) {
    let cfg = &model.config;
    let n = seq.len();
    let d = cfg.hidden_dim;
    let heads = cfg.n_heads;
    let hd = d / heads;

    let norm = |params: &NormParams, x: &[f64]| -> Vec<f64> {
        let dim = x.len() as f64;
        match cfg.norm_kind {
            NormKind::LayerNorm => {
                let mu = x.iter().sum::<f64>() / dim;
                let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / dim;
                let inv = 1.0 / (var + 1e-10).sqrt();
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        (v - mu) * inv * params.gain[j] as f64
                            + params.bias.as_ref().map_or(0.0, |b| b[j] as f64)
                    })
                    .collect()
            }
            NormKind::RmsNorm => {
                let ms = x.iter().map(|v| v * v).sum::<f64>() / dim;
                let inv = 1.0 / (ms + 1e-10).sqrt();
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * inv * params.gain[j] as f64)
                    .collect()
            }
        }
    };
    let matvec = |m: &Matrix, x: &[f64]| -> Vec<f64> {
        (0..m.rows())
            .map(|r| m.row(r).iter().zip(x).map(|(&w, v)| w as f64 * v).sum())
            .collect()
    };
    let act = |x: f64| -> f64 {
        match cfg.activation_kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Gelu => {
                0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh())
            }
            ActivationKind::Silu => x / (1.0 + (-x).exp()),
        }
    };

    let mut x: Vec<Vec<f64>> = seq
        .tokens
        .iter()
        .enumerate()
        .map(|(pos, tok)| {
            let mut row: Vec<f64> = match &tok.embedding {
                Some(e) => e.iter().map(|&v| v as f64).collect(),
                None => model
                    .embedding
                    .row(tok.id as usize)
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
            };
            if cfg.positional == PositionalMode::Sinusoidal
                && (cfg.positional_on_injected || tok.embedding.is_none())
            {
                for j in 0..d {
                    let rate = 10000f64.powf(2.0 * (j / 2) as f64 / d as f64);
                    let angle = pos as f64 / rate;
                    row[j] += if j % 2 == 0 { angle.sin() } else { angle.cos() };
                }
            }
            row
        })
        .collect();

    let mut sites = ReferenceSites {
        qkv: Vec::new(),
        attn_out: Vec::new(),
        fc1: Vec::new(),
        fc2: Vec::new(),
    };

    for layer in &model.layers {
        let normed: Vec<Vec<f64>> = x.iter().map(|r| norm(&layer.ln1, r)).collect();
        sites.qkv.push(normed.clone());

        let q: Vec<Vec<f64>> = normed.iter().map(|r| matvec(&layer.attn_q, r)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|r| matvec(&layer.attn_k, r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| matvec(&layer.attn_v, r)).collect();

        let mut ctx = vec![vec![0.0f64; d]; n];
        for i in 0..n {
            for h in 0..heads {
                let base = h * hd;
                let mut scores = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let mut s = 0.0;
                    for t in 0..hd {
                        s += q[i][base + t] * k[j][base + t];
                    }
                    scores.push(s / (hd as f64).sqrt());
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                for t in 0..hd {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += exps[j] / z * v[j][base + t];
                    }
                    ctx[i][base + t] = acc;
                }
            }
        }
        sites.attn_out.push(ctx.clone());

        let x_sa: Vec<Vec<f64>> = x
            .iter()
            .zip(&ctx)
            .map(|(xr, cr)| {
                let o = matvec(&layer.attn_o, cr);
                xr.iter().zip(&o).map(|(a, b)| a + b).collect()
            })
            .collect();

        let ln2: Vec<Vec<f64>> = x_sa.iter().map(|r| norm(&layer.ln2, r)).collect();
        sites.fc1.push(ln2.clone());
        let mut activated = Vec::with_capacity(n);
        let mut x_next = Vec::with_capacity(n);
        for (row_sa, row_ln2) in x_sa.iter().zip(&ln2) {
            let h1: Vec<f64> = matvec(&layer.fc1, row_ln2);
            let a: Vec<f64> = h1.iter().map(|&v| act(v)).collect();
            let h2 = matvec(&layer.fc2, &a);
            x_next.push(row_sa.iter().zip(&h2).map(|(p, q)| p + q).collect());
            activated.push(a);
        }
        sites.fc2.push(activated);
        x = x_next;
    }

    let logits = x
        .iter()
        .map(|row| matvec(&model.unembed, &norm(&model.out_norm, row)))
        .collect();
    (logits, sites)
}

/// FNV-1a over a file, for golden-stability checks.
#[allow(dead_code)]
pub fn hash_file(path: &std::path::Path) -> u64 {
    ima_core::digest::fnv1a64(&std::fs::read(path).unwrap())
}
