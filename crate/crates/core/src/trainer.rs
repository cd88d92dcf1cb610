//! Objective, mini-batch SGD and gradient verification.
//!
//! For a batch of (positive, negative) pairs the objective is
//!
//! ```text
//! Σ [f(pos) + γ − f(neg)]₊
//!   + C · ( Σ_e [‖e‖² − 1]₊ + Σ_r [(w_r·d_r)² / ‖d_r‖² − ε²]₊ + λ_sem · NT-Xent )
//! ```
//!
//! where the soft-constraint sums run over the entities and relations that
//! occur in the batch, the orthogonality term is present for hyperplane models
//! only and the NT-Xent term for [`ModelKind::Aesi`] only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{KgcError, Result};
use crate::kgdata::{sample_negative, FilterIndex, Sampling, Triple, TripleSet};
use crate::scoring::{residual, ModelKind, ModelParams, ScoreNorm};
use crate::semloss::{attention_backward, attention_forward, ntxent_with_grad, ContrastConfig, FusedTriple};
use crate::semstore::SemanticStore;
use crate::vecmath::{axpy, dot, norm_sq, sign0};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub margin: f64,
    /// Soft-constraint weight `C`.
    pub c: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub lambda_sem: f64,
    pub aug_sigma: f64,
    pub include_negatives: bool,
    pub score_norm: ScoreNorm,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub sampling: Sampling,
    pub model: ModelKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::wn18()
    }
}

impl TrainConfig {
    pub fn wn18() -> Self {
        Self {
            lr: 0.001,
            margin: 4.0,
            c: 0.001,
            epsilon: 0.001,
            tau: crate::semloss::DEFAULT_TAU,
            lambda_sem: 1.0,
            aug_sigma: crate::semloss::DEFAULT_AUG_SIGMA,
            include_negatives: true,
            score_norm: ScoreNorm::L1,
            dim: 128,
            epochs: 50,
            batch_size: 100,
            sampling: Sampling::Unif,
            model: ModelKind::Aesi,
            seed: 0,
        }
    }

    pub fn fb15k() -> Self {
        Self {
            c: 0.0015,
            epochs: 100,
            ..Self::wn18()
        }
    }

    pub fn contrast(&self) -> ContrastConfig {
        ContrastConfig {
            tau: self.tau,
            aug_sigma: self.aug_sigma,
            include_negatives: self.include_negatives,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(KgcError::domain(msg.to_owned())) };
        check(self.lr >= 0.0 && self.lr.is_finite(), "lr must be finite and non-negative")?;
        check(self.margin >= 0.0, "margin must be non-negative")?;
        check(self.c >= 0.0, "C must be non-negative")?;
        check(self.epsilon > 0.0, "epsilon must be positive")?;
        check(self.tau > 0.0, "tau must be positive")?;
        check(self.lambda_sem >= 0.0, "lambda_sem must be non-negative")?;
        check(self.aug_sigma >= 0.0, "aug_sigma must be non-negative")?;
        check(self.dim > 0, "dim must be positive")?;
        check(self.batch_size > 0, "batch_size must be positive")
    }
}

/// Objective value split into its terms. `contrastive` is the raw NT-Xent
/// value before weighting by `C · λ_sem`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub margin: f64,
    pub entity_norm: f64,
    pub orthogonality: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Gradient restricted to the parameter rows a batch touches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    pub entity: BTreeMap<usize, Vec<f64>>,
    pub rel_trans: BTreeMap<usize, Vec<f64>>,
    pub rel_normal: BTreeMap<usize, Vec<f64>>,
}

fn row_entry(map: &mut BTreeMap<usize, Vec<f64>>, id: usize, dim: usize) -> &mut Vec<f64> {
    map.entry(id).or_insert_with(|| vec![0.0; dim])
}

impl SparseGrad {
    /// `θ ← θ − lr · g`.
    pub fn apply(&self, params: &mut ModelParams, lr: f64) {
        for (&id, g) in &self.entity {
            axpy(-lr, g, params.entity.row_mut(id));
        }
        for (&id, g) in &self.rel_trans {
            axpy(-lr, g, params.rel_trans.row_mut(id));
        }
        for (&id, g) in &self.rel_normal {
            axpy(-lr, g, params.rel_normal.row_mut(id));
        }
    }
}

/// Gaussian perturbations of the semantic vectors for the two views of each
/// positive triple, ordered (head, tail, relation) per view.
#[derive(Debug, Clone, PartialEq)]
pub struct AugNoise {
    pub views: Vec<[Vec<f64>; 6]>,
}

impl AugNoise {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            views: (0..n).map(|_| std::array::from_fn(|_| vec![0.0; dim])).collect(),
        }
    }

    pub fn sample(n: usize, dim: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        if sigma == 0.0 {
            return Self::zeros(n, dim);
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
        Self {
            views: (0..n)
                .map(|_| std::array::from_fn(|_| (0..dim).map(|_| normal.sample(rng)).collect()))
                .collect(),
        }
    }
}

/// Discrete state of every non-smooth piece of the objective: hinge
/// activity and, under L1, residual signs. Equal signatures on both sides of a
/// finite-difference step mean no kink was crossed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinkSignature(Vec<i8>);

struct Evaluation {
    breakdown: LossBreakdown,
    grad: Option<SparseGrad>,
    signature: KinkSignature,
}

/// Score gradient pieces for one triple.
struct ScoreGrad {
    head: Vec<f64>,
    tail: Vec<f64>,
    trans: Vec<f64>,
    normal: Option<Vec<f64>>,
}

fn score_and_grad(params: &ModelParams, t: &Triple, want_grad: bool, sig: &mut Vec<i8>) -> (f64, Option<ScoreGrad>) {
    let project = params.model.uses_hyperplanes();
    let res = residual(params, t.head, t.relation, t.tail, project);
    let score = params.score_norm.apply(&res);
    if params.score_norm == ScoreNorm::L1 {
        sig.extend(res.iter().map(|&x| sign0(x) as i8));
    }
    if !want_grad {
        return (score, None);
    }
    let g: Vec<f64> = match params.score_norm {
        ScoreNorm::L1 => res.iter().map(|&x| sign0(x)).collect(),
        ScoreNorm::L2 => res.iter().map(|&x| 2.0 * x).collect(),
    };
    if !project {
        let tail = g.iter().map(|x| -x).collect();
        return (
            score,
            Some(ScoreGrad {
                head: g.clone(),
                tail,
                trans: g,
                normal: None,
            }),
        );
    }
    let w = params.rel_normal.row(t.relation);
    let h = params.entity.row(t.head);
    let tv = params.entity.row(t.tail);
    let u: Vec<f64> = h.iter().zip(tv).map(|(a, b)| a - b).collect();
    let gw = dot(&g, w);
    let wu = dot(w, &u);
    // res = (I − w wᵀ) u + d with u = h − t
    let head: Vec<f64> = g.iter().zip(w).map(|(gi, wi)| gi - gw * wi).collect();
    let tail = head.iter().map(|x| -x).collect();
    let normal = u.iter().zip(&g).map(|(ui, gi)| -gw * ui - wu * gi).collect();
    (
        score,
        Some(ScoreGrad {
            head,
            tail,
            trans: g,
            normal: Some(normal),
        }),
    )
}

fn add_score_grad(grad: &mut SparseGrad, t: &Triple, sg: &ScoreGrad, sign: f64, dim: usize) {
    axpy(sign, &sg.head, row_entry(&mut grad.entity, t.head, dim));
    axpy(sign, &sg.tail, row_entry(&mut grad.entity, t.tail, dim));
    axpy(sign, &sg.trans, row_entry(&mut grad.rel_trans, t.relation, dim));
    if let Some(n) = &sg.normal {
        axpy(sign, n, row_entry(&mut grad.rel_normal, t.relation, dim));
    }
}

/// Fused query/key/value of a triple, with optional semantic noise.
fn fused_triple(params: &ModelParams, sem: &SemanticStore, t: &Triple, noise: Option<&[Vec<f64>]>) -> FusedTriple {
    let fuse = |structural: &[f64], semantic: &[f64], n: Option<&Vec<f64>>| -> Vec<f64> {
        match n {
            Some(n) => (0..structural.len()).map(|i| structural[i] + semantic[i] + n[i]).collect(),
            None => structural.iter().zip(semantic).map(|(a, b)| a + b).collect(),
        }
    };
    FusedTriple {
        q: fuse(params.entity.row(t.head), sem.entity(t.head), noise.map(|n| &n[0])),
        k: fuse(params.entity.row(t.tail), sem.entity(t.tail), noise.map(|n| &n[1])),
        v: fuse(params.rel_trans.row(t.relation), sem.relation(t.relation), noise.map(|n| &n[2])),
    }
}

fn evaluate(
    batch: &[(Triple, Triple)],
    params: &ModelParams,
    sem: Option<&SemanticStore>,
    cfg: &TrainConfig,
    noise: Option<&AugNoise>,
    want_grad: bool,
) -> Result<Evaluation> {
    if batch.is_empty() {
        return Err(KgcError::domain("objective needs a non-empty batch"));
    }
    let dim = params.dim();
    let mut sig = Vec::new();
    let mut grad = SparseGrad::default();
    let mut out = LossBreakdown::default();

    for (pos, neg) in batch {
        let (fp, gp) = score_and_grad(params, pos, want_grad, &mut sig);
        let (fn_, gn) = score_and_grad(params, neg, want_grad, &mut sig);
        let arg = fp + cfg.margin - fn_;
        sig.push(i8::from(arg > 0.0));
        if arg > 0.0 {
            out.margin += arg;
            if let (Some(gp), Some(gn)) = (gp, gn) {
                add_score_grad(&mut grad, pos, &gp, 1.0, dim);
                add_score_grad(&mut grad, neg, &gn, -1.0, dim);
            }
        }
    }

    let entities: BTreeSet<usize> = batch
        .iter()
        .flat_map(|(p, n)| [p.head, p.tail, n.head, n.tail])
        .collect();
    let relations: BTreeSet<usize> = batch.iter().flat_map(|(p, n)| [p.relation, n.relation]).collect();

    for &e in &entities {
        let v = params.entity.row(e);
        let excess = norm_sq(v) - 1.0;
        sig.push(i8::from(excess > 0.0));
        if excess > 0.0 {
            out.entity_norm += excess;
            if want_grad {
                axpy(2.0 * cfg.c, v, row_entry(&mut grad.entity, e, dim));
            }
        }
    }

    if params.model.uses_hyperplanes() {
        for &r in &relations {
            let w = params.rel_normal.row(r);
            let d = params.rel_trans.row(r);
            let dd = norm_sq(d);
            if dd == 0.0 {
                continue;
            }
            let a = dot(w, d);
            let excess = a * a / dd - cfg.epsilon * cfg.epsilon;
            sig.push(i8::from(excess > 0.0));
            if excess > 0.0 {
                out.orthogonality += excess;
                if want_grad {
                    axpy(2.0 * cfg.c * a / dd, d, row_entry(&mut grad.rel_normal, r, dim));
                    let gd = row_entry(&mut grad.rel_trans, r, dim);
                    axpy(2.0 * cfg.c * a / dd, w, gd);
                    axpy(-2.0 * cfg.c * a * a / (dd * dd), d, gd);
                }
            }
        }
    }

    if params.model == ModelKind::Aesi {
        let sem = sem.ok_or_else(|| KgcError::domain("the aesi model needs a semantic store"))?;
        if sem.dim() != dim {
            return Err(KgcError::domain(format!(
                "semantic dimension {} differs from embedding dimension {dim}",
                sem.dim()
            )));
        }
        if sem.n_entities() != params.n_entities() || sem.n_relations() != params.n_relations() {
            return Err(KgcError::domain("semantic store does not cover the model vocabulary"));
        }
        let zeros;
        let noise = match noise {
            Some(n) => {
                if n.views.len() != batch.len() {
                    return Err(KgcError::domain("augmentation noise does not match the batch"));
                }
                n
            }
            None => {
                zeros = AugNoise::zeros(batch.len(), dim);
                &zeros
            }
        };
        let contrast = cfg.contrast();
        let mut pair_inputs = Vec::with_capacity(batch.len());
        let mut neg_inputs = Vec::with_capacity(batch.len());
        let mut pairs = Vec::with_capacity(batch.len());
        let mut neg_outputs = Vec::with_capacity(batch.len());
        for ((pos, neg), views) in batch.iter().zip(&noise.views) {
            let f1 = fused_triple(params, sem, pos, Some(&views[0..3]));
            let f2 = fused_triple(params, sem, pos, Some(&views[3..6]));
            let fneg = fused_triple(params, sem, neg, None);
            let c1 = attention_forward(&f1.q, &f1.k, &f1.v)?;
            let c2 = attention_forward(&f2.q, &f2.k, &f2.v)?;
            let cn = attention_forward(&fneg.q, &fneg.k, &fneg.v)?;
            pairs.push((c1.output.clone(), c2.output.clone()));
            neg_outputs.push(cn.output.clone());
            pair_inputs.push(((f1, c1), (f2, c2)));
            neg_inputs.push((fneg, cn));
        }
        let nt = ntxent_with_grad(&pairs, &neg_outputs, &contrast, want_grad)?;
        out.contrastive = nt.loss;
        let weight = cfg.c * cfg.lambda_sem;
        if want_grad && weight != 0.0 {
            let mut push = |t: &Triple, f: &FusedTriple, cache, g_out: &[f64]| {
                let (gq, gk, gv) = attention_backward(&f.q, &f.k, &f.v, cache, g_out);
                axpy(weight, &gq, row_entry(&mut grad.entity, t.head, dim));
                axpy(weight, &gk, row_entry(&mut grad.entity, t.tail, dim));
                axpy(weight, &gv, row_entry(&mut grad.rel_trans, t.relation, dim));
            };
            for (i, (pos, neg)) in batch.iter().enumerate() {
                let ((f1, c1), (f2, c2)) = &pair_inputs[i];
                push(pos, f1, c1, &nt.pair_grads[i].0);
                push(pos, f2, c2, &nt.pair_grads[i].1);
                let (fneg, cn) = &neg_inputs[i];
                push(neg, fneg, cn, &nt.neg_grads[i]);
            }
        }
    }

    let sem_term = if params.model == ModelKind::Aesi {
        cfg.lambda_sem * out.contrastive
    } else {
        0.0
    };
    out.total = out.margin + cfg.c * (out.entity_norm + out.orthogonality + sem_term);
    Ok(Evaluation {
        breakdown: out,
        grad: want_grad.then_some(grad),
        signature: KinkSignature(sig),
    })
}

/// Objective on `batch` with its term breakdown. `noise` fixes the
/// augmentation draws; `None` means unperturbed views.
pub fn total_loss(
    batch: &[(Triple, Triple)],
    params: &ModelParams,
    sem: Option<&SemanticStore>,
    cfg: &TrainConfig,
    noise: Option<&AugNoise>,
) -> Result<LossBreakdown> {
    Ok(evaluate(batch, params, sem, cfg, noise, false)?.breakdown)
}

pub fn loss_and_grad(
    batch: &[(Triple, Triple)],
    params: &ModelParams,
    sem: Option<&SemanticStore>,
    cfg: &TrainConfig,
    noise: Option<&AugNoise>,
) -> Result<(LossBreakdown, SparseGrad)> {
    let ev = evaluate(batch, params, sem, cfg, noise, true)?;
    Ok((ev.breakdown, ev.grad.expect("gradient requested")))
}

pub fn kink_signature(
    batch: &[(Triple, Triple)],
    params: &ModelParams,
    sem: Option<&SemanticStore>,
    cfg: &TrainConfig,
    noise: Option<&AugNoise>,
) -> Result<KinkSignature> {
    Ok(evaluate(batch, params, sem, cfg, noise, false)?.signature)
}

#[derive(Clone, Copy)]
enum Table {
    Entity,
    Trans,
    Normal,
}

fn coord_mut(p: &mut ModelParams, table: Table, row: usize, j: usize) -> &mut f64 {
    match table {
        Table::Entity => &mut p.entity.row_mut(row)[j],
        Table::Trans => &mut p.rel_trans.row_mut(row)[j],
        Table::Normal => &mut p.rel_normal.row_mut(row)[j],
    }
}

pub const GRAD_CHECK_MAX_DIM: usize = 16;
pub const GRAD_CHECK_MAX_ENTITIES: usize = 20;
/// Relative errors are taken against at least this times `max(1, |f|)`, so
/// gradients near zero are judged on the scale of finite-difference
/// round-off rather than their own.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Compares the analytic gradient with central differences `(f(θ+h) −
/// f(θ−h)) / 2h` on every parameter coordinate. Coordinates whose step crosses
/// a kink are skipped. The error of a coordinate is `|a − n| / max(|a|, |n|,
/// floor)` with the floor from [`GRAD_CHECK_FLOOR`].
pub fn grad_check(
    batch: &[(Triple, Triple)],
    params: &ModelParams,
    sem: Option<&SemanticStore>,
    cfg: &TrainConfig,
    noise: Option<&AugNoise>,
    step: f64,
) -> Result<GradCheckReport> {
    if params.dim() > GRAD_CHECK_MAX_DIM || params.n_entities() > GRAD_CHECK_MAX_ENTITIES {
        return Err(KgcError::domain(format!(
            "gradient check is limited to d ≤ {GRAD_CHECK_MAX_DIM} and ≤ {GRAD_CHECK_MAX_ENTITIES} entities"
        )));
    }
    if !(step > 0.0) {
        return Err(KgcError::domain("finite-difference step must be positive"));
    }
    let (loss, analytic) = loss_and_grad(batch, params, sem, cfg, noise)?;
    let floor = GRAD_CHECK_FLOOR * loss.total.abs().max(1.0);
    let base_sig = kink_signature(batch, params, sem, cfg, noise)?;
    let dim = params.dim();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut probe = params.clone();
    for (table, rows) in [
        (Table::Entity, params.n_entities()),
        (Table::Trans, params.n_relations()),
        (Table::Normal, params.n_relations()),
    ] {
        for row in 0..rows {
            let grad_row = match table {
                Table::Entity => analytic.entity.get(&row),
                Table::Trans => analytic.rel_trans.get(&row),
                Table::Normal => analytic.rel_normal.get(&row),
            };
            for j in 0..dim {
                let a = grad_row.map_or(0.0, |g| g[j]);
                let original = *coord_mut(&mut probe, table, row, j);
                let mut eval_at = |x: f64| -> Result<(f64, KinkSignature)> {
                    *coord_mut(&mut probe, table, row, j) = x;
                    let ev = evaluate(batch, &probe, sem, cfg, noise, false)?;
                    Ok((ev.breakdown.total, ev.signature))
                };
                let (fp, sp) = eval_at(original + step)?;
                let (fm, sm) = eval_at(original - step)?;
                eval_at(original)?;
                if sp != base_sig || sm != base_sig {
                    report.skipped_kinks += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * step);
                let scale = a.abs().max(numeric.abs()).max(floor);
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / scale);
            }
        }
    }
    Ok(report)
}

/// Independent random stream for a named purpose, derived from one seed.
pub fn named_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let tag = crate::semstore::token_hash(name, seed);
    ChaCha8Rng::seed_from_u64(tag)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.valid_loss);
        }
        out
    }
}

/// Passed to the observer after every optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent {
    pub epoch: usize,
    pub batch: usize,
    pub loss: LossBreakdown,
}

pub fn train(
    train_set: &TripleSet,
    valid_set: &TripleSet,
    params: ModelParams,
    sem: Option<&SemanticStore>,
    index: &FilterIndex,
    cfg: &TrainConfig,
) -> Result<(ModelParams, LossHistory)> {
    train_observed(train_set, valid_set, params, sem, index, cfg, |_, _| {})
}

/// [`train`] with a callback after each step, given the updated parameters.
pub fn train_observed<F>(
    train_set: &TripleSet,
    valid_set: &TripleSet,
    mut params: ModelParams,
    sem: Option<&SemanticStore>,
    index: &FilterIndex,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<(ModelParams, LossHistory)>
where
    F: FnMut(&StepEvent, &ModelParams),
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(KgcError::domain("training set is empty"));
    }
    if params.dim() != cfg.dim {
        return Err(KgcError::domain(format!(
            "parameters have dimension {}, config asks for {}",
            params.dim(),
            cfg.dim
        )));
    }
    params.model = cfg.model;
    params.score_norm = cfg.score_norm;

    let mut sampling_rng = named_stream(cfg.seed, "sampling");
    let mut aug_rng = named_stream(cfg.seed, "augmentation");
    let mut order: Vec<Triple> = train_set.triples.clone();
    let mut history = LossHistory::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut sampling_rng);
        let mut batch_losses = 0.0;
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(Triple, Triple)> = chunk
                .iter()
                .map(|p| Ok((*p, sample_negative(p, cfg.sampling, index, &mut sampling_rng)?)))
                .collect::<Result<_>>()?;
            let noise = (cfg.model == ModelKind::Aesi)
                .then(|| AugNoise::sample(batch.len(), cfg.dim, cfg.aug_sigma, &mut aug_rng));
            let (loss, grad) = loss_and_grad(&batch, &params, sem, cfg, noise.as_ref())?;
            if !loss.total.is_finite() {
                return Err(KgcError::Diverged {
                    epoch,
                    loss: loss.total,
                });
            }
            if cfg.lr > 0.0 {
                grad.apply(&mut params, cfg.lr);
                params.normalize_normals();
                if !params.is_finite() {
                    return Err(KgcError::Diverged {
                        epoch,
                        loss: f64::NAN,
                    });
                }
            }
            batch_losses += loss.total;
            n_batches += 1;
            observer(
                &StepEvent {
                    epoch,
                    batch: bi,
                    loss,
                },
                &params,
            );
        }
        let train_loss = batch_losses / n_batches as f64;
        let valid_loss = validation_loss(valid_set, &params, index, cfg)?;
        if !valid_loss.is_finite() {
            return Err(KgcError::Diverged { epoch, loss: valid_loss });
        }
        log::info!("epoch {epoch}: train {train_loss:.6} valid {valid_loss:.6}");
        history.epochs.push(EpochLoss {
            epoch,
            train_loss,
            valid_loss,
        });
    }
    Ok((params, history))
}

/// Margin term over the validation split, averaged per batch of
/// `cfg.batch_size`, with negatives from a fixed validation stream.
pub fn validation_loss(valid_set: &TripleSet, params: &ModelParams, index: &FilterIndex, cfg: &TrainConfig) -> Result<f64> {
    if valid_set.is_empty() {
        return Ok(0.0);
    }
    let mut rng = named_stream(cfg.seed, "validation");
    let mut total = 0.0;
    let mut n_batches = 0usize;
    for chunk in valid_set.triples.chunks(cfg.batch_size) {
        for pos in chunk {
            let neg = sample_negative(pos, cfg.sampling, index, &mut rng)?;
            total += (params.score(pos.head, pos.relation, pos.tail) + cfg.margin
                - params.score(neg.head, neg.relation, neg.tail))
            .max(0.0);
        }
        n_batches += 1;
    }
    Ok(total / n_batches as f64)
}
