//! Semantic attention and the contrastive penalty built on it.
//!
//! Each fused embedding dimension is treated as one token: for query `q`,
//! key `k` and value `v` (all length `d`), the attention matrix is
//! `A = row_softmax(q kᵀ / √d)` and the output is `A v`. The NT-Xent loss then
//! contrasts two noisy views of every positive triple's output against each
//! other and against the outputs of the negatives.

use crate::error::{KgcError, Result};
use crate::vecmath::{dot, norm};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_AUG_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastConfig {
    pub tau: f64,
    pub aug_sigma: f64,
    pub include_negatives: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            aug_sigma: DEFAULT_AUG_SIGMA,
            include_negatives: true,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(KgcError::domain(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.aug_sigma >= 0.0) {
            return Err(KgcError::domain(format!("augmentation sigma must be non-negative, got {}", self.aug_sigma)));
        }
        Ok(())
    }
}

/// Query, key and value of one triple after fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTriple {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl FusedTriple {
    pub fn d_k(&self) -> usize {
        self.q.len()
    }
}

pub fn fuse(struct_vec: &[f64], sem_vec: &[f64]) -> Result<Vec<f64>> {
    if struct_vec.len() != sem_vec.len() {
        return Err(KgcError::domain(format!(
            "cannot fuse a {}-d structural vector with a {}-d semantic vector",
            struct_vec.len(),
            sem_vec.len()
        )));
    }
    Ok(struct_vec.iter().zip(sem_vec).map(|(a, b)| a + b).collect())
}

/// Forward pass result, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// Row-major d×d attention weights.
    weights: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn attention(q: &[f64], k: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    Ok(attention_forward(q, k, v)?.output)
}

pub fn attention_forward(q: &[f64], k: &[f64], v: &[f64]) -> Result<AttentionCache> {
    let d = q.len();
    if d == 0 {
        return Err(KgcError::domain("attention needs dimension at least 1"));
    }
    if k.len() != d || v.len() != d {
        return Err(KgcError::domain("attention operands differ in dimension"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    // Row i logits are (q_i·scale)·k_j; the row max is attained at max k or min k.
    let (kmin, kmax) = k.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut weights = vec![0.0; d * d];
    let mut output = vec![0.0; d];
    for i in 0..d {
        let a = q[i] * scale;
        let shift = if a >= 0.0 { a * kmax } else { a * kmin };
        let row = &mut weights[i * d..(i + 1) * d];
        let mut sum = 0.0;
        for (w, &kj) in row.iter_mut().zip(k) {
            *w = (a * kj - shift).exp();
            sum += *w;
        }
        let inv = 1.0 / sum;
        let mut acc = 0.0;
        for (w, &vj) in row.iter_mut().zip(v) {
            *w *= inv;
            acc += *w * vj;
        }
        output[i] = acc;
    }
    Ok(AttentionCache { weights, output })
}

/// Gradients of a scalar loss with respect to `q`, `k` and `v`, given the
/// loss gradient `grad_out` at the attention output.
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    cache: &AttentionCache,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = q.len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut gq = vec![0.0; d];
    let mut gk = vec![0.0; d];
    let mut gv = vec![0.0; d];
    for i in 0..d {
        let row = &cache.weights[i * d..(i + 1) * d];
        let g = grad_out[i];
        if g == 0.0 {
            continue;
        }
        let out_i = cache.output[i];
        let mut gqi = 0.0;
        for j in 0..d {
            gv[j] += g * row[j];
            // d out_i / d logit_ij = a_ij (v_j − out_i)
            let gl = g * row[j] * (v[j] - out_i) * scale;
            gqi += gl * k[j];
            gk[j] += gl * q[i];
        }
        gq[i] = gqi;
    }
    (gq, gk, gv)
}

/// NT-Xent loss over `N` positive view pairs and optional negative outputs.
///
/// The pool holds both views of every pair plus the negatives (when
/// `include_negatives`); the anchor of pair `j` is its first view.
pub fn ntxent_loss(pos_pairs: &[(Vec<f64>, Vec<f64>)], neg_outputs: &[Vec<f64>], cfg: &ContrastConfig) -> Result<f64> {
    Ok(ntxent_with_grad(pos_pairs, neg_outputs, cfg, false)?.loss)
}

#[derive(Debug, Clone)]
pub struct NtXentResult {
    pub loss: f64,
    /// Per pair, gradients w.r.t. the first and second view.
    pub pair_grads: Vec<(Vec<f64>, Vec<f64>)>,
    /// Gradients w.r.t. each negative output (zero when excluded).
    pub neg_grads: Vec<Vec<f64>>,
}

pub fn ntxent_with_grad(
    pos_pairs: &[(Vec<f64>, Vec<f64>)],
    neg_outputs: &[Vec<f64>],
    cfg: &ContrastConfig,
    want_grad: bool,
) -> Result<NtXentResult> {
    cfg.validate()?;
    let n = pos_pairs.len();
    if n == 0 {
        return Err(KgcError::domain("contrastive loss needs at least one positive pair"));
    }
    let d = pos_pairs[0].0.len();
    let mut pool: Vec<&[f64]> = Vec::with_capacity(2 * n + neg_outputs.len());
    pool.extend(pos_pairs.iter().map(|p| p.0.as_slice()));
    pool.extend(pos_pairs.iter().map(|p| p.1.as_slice()));
    if cfg.include_negatives {
        pool.extend(neg_outputs.iter().map(Vec::as_slice));
    }
    if pool.iter().any(|x| x.len() != d) {
        return Err(KgcError::domain("contrastive pool vectors differ in dimension"));
    }
    let norms: Vec<f64> = pool.iter().map(|x| norm(x)).collect();
    if norms.iter().any(|&m| !(m > 0.0)) {
        return Err(KgcError::domain("contrastive pool contains a zero vector"));
    }
    let units: Vec<Vec<f64>> = pool.iter().zip(&norms).map(|(x, &m)| x.iter().map(|v| v / m).collect()).collect();
    let m = pool.len();
    let mut grads = if want_grad { vec![vec![0.0; d]; m] } else { Vec::new() };

    let mut loss = 0.0;
    let mut logits = vec![0.0; m];
    let mut probs = vec![0.0; m];
    for j in 0..n {
        let partner = n + j;
        let mut max = f64::NEG_INFINITY;
        for kk in 0..m {
            if kk == j {
                continue;
            }
            logits[kk] = dot(&units[j], &units[kk]) / cfg.tau;
            max = max.max(logits[kk]);
        }
        let mut z = 0.0;
        for kk in 0..m {
            if kk != j {
                probs[kk] = (logits[kk] - max).exp();
                z += probs[kk];
            }
        }
        loss += (max + z.ln()) - logits[partner];
        if want_grad {
            for kk in 0..m {
                if kk == j {
                    continue;
                }
                // d loss_j / d s_jk = p_k − [k = partner], s = cos/τ
                let coef = (probs[kk] / z - if kk == partner { 1.0 } else { 0.0 }) / (cfg.tau * n as f64);
                if coef == 0.0 {
                    continue;
                }
                let c = logits[kk] * cfg.tau;
                for t in 0..d {
                    grads[j][t] += coef * (units[kk][t] - c * units[j][t]) / norms[j];
                    grads[kk][t] += coef * (units[j][t] - c * units[kk][t]) / norms[kk];
                }
            }
        }
    }
    loss /= n as f64;

    let (pair_grads, neg_grads) = if want_grad {
        let mut it = grads.into_iter();
        let first: Vec<Vec<f64>> = it.by_ref().take(n).collect();
        let second: Vec<Vec<f64>> = it.by_ref().take(n).collect();
        let mut negs: Vec<Vec<f64>> = it.collect();
        if !cfg.include_negatives {
            negs = vec![vec![0.0; d]; neg_outputs.len()];
        }
        (first.into_iter().zip(second).collect(), negs)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(NtXentResult {
        loss,
        pair_grads,
        neg_grads,
    })
}
