//! Translation-model geometry.
//!
//! TransH projects head and tail onto the hyperplane with unit normal `w_r`
//! and translates by `d_r`; the dissimilarity is the norm of
//! `h⊥ + d_r − t⊥`. TransE drops the projection. Under [`ScoreNorm::L2`] the
//! norm is squared, under [`ScoreNorm::L1`] it is the plain sum of absolute
//! values.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{KgcError, Result};
use crate::fsutil;
use crate::vecmath::{dot, norm};

/// Unit-norm tolerance accepted by [`project_to_hyperplane`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreNorm {
    L1,
    #[default]
    L2,
}

impl ScoreNorm {
    pub fn from_p(p: u8) -> Result<Self> {
        match p {
            1 => Ok(ScoreNorm::L1),
            2 => Ok(ScoreNorm::L2),
            _ => Err(KgcError::domain(format!("score norm must be 1 or 2, got {p}"))),
        }
    }

    pub fn p(self) -> u8 {
        match self {
            ScoreNorm::L1 => 1,
            ScoreNorm::L2 => 2,
        }
    }

    /// `Σ|x|` or `Σx²`.
    pub fn apply(self, diff: &[f64]) -> f64 {
        match self {
            ScoreNorm::L1 => diff.iter().map(|x| x.abs()).sum(),
            ScoreNorm::L2 => diff.iter().map(|x| x * x).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    TransE,
    TransH,
    /// TransH plus the semantic attention constraint.
    #[default]
    Aesi,
}

impl ModelKind {
    pub fn uses_hyperplanes(self) -> bool {
        !matches!(self, ModelKind::TransE)
    }
}

impl FromStr for ModelKind {
    type Err = KgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transe" => Ok(ModelKind::TransE),
            "transh" => Ok(ModelKind::TransH),
            "aesi" => Ok(ModelKind::Aesi),
            _ => Err(KgcError::domain(format!("unknown model {s:?} (expected transe|transh|aesi)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::TransE => "transe",
            ModelKind::TransH => "transh",
            ModelKind::Aesi => "aesi",
        })
    }
}

/// Row-major `rows × dim` table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            data: vec![0.0; rows * dim],
            dim,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(KgcError::domain(format!("row {i} has {} values, expected {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { data, dim })
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows() {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    fn parse(text: &str, rows: usize, dim: usize, what: &str) -> Result<Self> {
        let mut table = Self::zeros(rows, dim);
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if i >= rows {
                return Err(KgcError::Format {
                    line: i + 1,
                    msg: format!("{what}: more than {rows} rows"),
                });
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| KgcError::Format {
                    line: i + 1,
                    msg: format!("{what}: {e}"),
                })?;
            if vals.len() != dim {
                return Err(KgcError::Format {
                    line: i + 1,
                    msg: format!("{what}: expected {dim} values, found {}", vals.len()),
                });
            }
            table.row_mut(i).copy_from_slice(&vals);
            n += 1;
        }
        if n != rows {
            return Err(KgcError::Format {
                line: n + 1,
                msg: format!("{what}: expected {rows} rows, found {n}"),
            });
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub entity: EmbeddingTable,
    /// Translation vectors `d_r`.
    pub rel_trans: EmbeddingTable,
    /// Hyperplane normals `w_r`, kept at unit L2 norm.
    pub rel_normal: EmbeddingTable,
    pub score_norm: ScoreNorm,
    pub model: ModelKind,
}

impl ModelParams {
    /// Uniform draws in `[−6/√d, 6/√d]`; normals are then rescaled to unit
    /// length.
    pub fn init<R: Rng + ?Sized>(
        n_entities: usize,
        n_relations: usize,
        dim: usize,
        score_norm: ScoreNorm,
        model: ModelKind,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(KgcError::domain("embedding dimension must be positive"));
        }
        let bound = 6.0 / (dim as f64).sqrt();
        let mut draw = |rows: usize| {
            let mut t = EmbeddingTable::zeros(rows, dim);
            for v in t.as_mut_slice() {
                *v = rng.random_range(-bound..=bound);
            }
            t
        };
        let entity = draw(n_entities);
        let rel_trans = draw(n_relations);
        let rel_normal = draw(n_relations);
        let mut params = Self {
            entity,
            rel_trans,
            rel_normal,
            score_norm,
            model,
        };
        params.normalize_normals();
        Ok(params)
    }

    pub fn dim(&self) -> usize {
        self.entity.dim()
    }

    pub fn n_entities(&self) -> usize {
        self.entity.rows()
    }

    pub fn n_relations(&self) -> usize {
        self.rel_trans.rows()
    }

    /// Rescales every `w_r` to unit L2 norm. A zero normal becomes the first
    /// basis vector.
    pub fn normalize_normals(&mut self) {
        for r in 0..self.rel_normal.rows() {
            let w = self.rel_normal.row_mut(r);
            let n = norm(w);
            if n > 0.0 && n.is_finite() {
                w.iter_mut().for_each(|x| *x /= n);
            } else {
                w.iter_mut().for_each(|x| *x = 0.0);
                w[0] = 1.0;
            }
        }
    }

    /// Score of `(h, r, t)` under this model's geometry. Lower is better.
    pub fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        if self.model.uses_hyperplanes() {
            transh_score(self, h, r, t)
        } else {
            transe_score(self, h, r, t)
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.entity, &self.rel_trans, &self.rel_normal]
            .iter()
            .all(|t| t.as_slice().iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = format!(
            "dim={}\nn_entities={}\nn_relations={}\nscore_norm={}\nmodel={}\n",
            self.dim(),
            self.n_entities(),
            self.n_relations(),
            self.score_norm.p(),
            self.model
        );
        fsutil::write_atomic(&dir.join("meta"), meta.as_bytes())?;
        fsutil::write_atomic(&dir.join("entities.vec"), self.entity.to_text().as_bytes())?;
        fsutil::write_atomic(&dir.join("rel_trans.vec"), self.rel_trans.to_text().as_bytes())?;
        fsutil::write_atomic(&dir.join("rel_normal.vec"), self.rel_normal.to_text().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = fsutil::read_to_string(&dir.join("meta"))?;
        let mut dim = None;
        let mut n_ent = None;
        let mut n_rel = None;
        let mut score_norm = None;
        let mut model = None;
        for (i, line) in meta.lines().enumerate() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let bad = || KgcError::Format {
                line: i + 1,
                msg: format!("meta: bad value for {k}: {v:?}"),
            };
            match k.trim() {
                "dim" => dim = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "n_entities" => n_ent = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "n_relations" => n_rel = Some(v.trim().parse::<usize>().map_err(|_| bad())?),
                "score_norm" => score_norm = Some(ScoreNorm::from_p(v.trim().parse().map_err(|_| bad())?)?),
                "model" => model = Some(v.trim().parse::<ModelKind>()?),
                _ => {}
            }
        }
        let missing = |k: &str| KgcError::Format {
            line: 0,
            msg: format!("meta: missing key {k}"),
        };
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let n_ent = n_ent.ok_or_else(|| missing("n_entities"))?;
        let n_rel = n_rel.ok_or_else(|| missing("n_relations"))?;
        let read = |name: &str, rows: usize| -> Result<EmbeddingTable> {
            EmbeddingTable::parse(&fsutil::read_to_string(&dir.join(name))?, rows, dim, name)
        };
        Ok(Self {
            entity: read("entities.vec", n_ent)?,
            rel_trans: read("rel_trans.vec", n_rel)?,
            rel_normal: read("rel_normal.vec", n_rel)?,
            score_norm: score_norm.ok_or_else(|| missing("score_norm"))?,
            model: model.ok_or_else(|| missing("model"))?,
        })
    }
}

/// `e − (w·e) w`, rejecting normals that are not unit length.
pub fn project_to_hyperplane(e: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if e.len() != w.len() {
        return Err(KgcError::domain("projection operands differ in dimension"));
    }
    let n = norm(w);
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(KgcError::domain(format!("hyperplane normal has norm {n}, expected 1")));
    }
    Ok(project_unchecked(e, w))
}

#[inline]
pub(crate) fn project_unchecked(e: &[f64], w: &[f64]) -> Vec<f64> {
    let c = dot(w, e);
    e.iter().zip(w).map(|(x, wi)| x - c * wi).collect()
}

/// Translation residual `h⊥ + d_r − t⊥` (TransH) or `h + d_r − t` (TransE).
pub fn residual(params: &ModelParams, h: usize, r: usize, t: usize, project: bool) -> Vec<f64> {
    let hv = params.entity.row(h);
    let tv = params.entity.row(t);
    let d = params.rel_trans.row(r);
    if project {
        let w = params.rel_normal.row(r);
        // h⊥ − t⊥ = (h − t) − (w·(h − t)) w
        let c = dot(w, hv) - dot(w, tv);
        (0..hv.len()).map(|i| hv[i] - tv[i] - c * w[i] + d[i]).collect()
    } else {
        (0..hv.len()).map(|i| hv[i] + d[i] - tv[i]).collect()
    }
}

pub fn transh_score(params: &ModelParams, h: usize, r: usize, t: usize) -> f64 {
    params.score_norm.apply(&residual(params, h, r, t, true))
}

pub fn transe_score(params: &ModelParams, h: usize, r: usize, t: usize) -> f64 {
    params.score_norm.apply(&residual(params, h, r, t, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params_2d(entities: &[[f64; 2]], d_r: [f64; 2], w_r: [f64; 2], p: ScoreNorm) -> ModelParams {
        let ent: Vec<Vec<f64>> = entities.iter().map(|e| e.to_vec()).collect();
        ModelParams {
            entity: EmbeddingTable::from_rows(&ent, 2).unwrap(),
            rel_trans: EmbeddingTable::from_rows(&[d_r.to_vec()], 2).unwrap(),
            rel_normal: EmbeddingTable::from_rows(&[w_r.to_vec()], 2).unwrap(),
            score_norm: p,
            model: ModelKind::TransH,
        }
    }

    #[test]
    fn axis_projection() {
        assert_eq!(project_to_hyperplane(&[3.0, 4.0], &[1.0, 0.0]).unwrap(), vec![0.0, 4.0]);
    }

    #[test]
    fn parallel_vector_collapses() {
        let w = [0.6, 0.8];
        let out = project_to_hyperplane(&[1.2, 1.6], &w).unwrap();
        assert!(out.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn non_unit_normal_rejected() {
        assert!(project_to_hyperplane(&[1.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(project_to_hyperplane(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn transh_hand_example() {
        // h=(1,0), t=(0,1), w=(1,0), d_r=(0,1): h⊥=(0,0), t⊥=(0,1)
        let p = params_2d(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0], [1.0, 0.0], ScoreNorm::L2);
        assert_eq!(transh_score(&p, 0, 0, 1), 0.0);
    }

    #[test]
    fn coincident_entities_zero_translation() {
        let p = params_2d(&[[0.3, -0.7]], [0.0, 0.0], [0.0, 1.0], ScoreNorm::L1);
        assert_eq!(transh_score(&p, 0, 0, 0), 0.0);
    }

    #[test]
    fn orthogonal_normal_matches_transe() {
        // w ⊥ h, t: both live on the x axis, w points along y.
        let p = params_2d(&[[1.0, 0.0], [-2.0, 0.0]], [0.5, 0.25], [0.0, 1.0], ScoreNorm::L2);
        let expected = (1.0f64 + 0.5 + 2.0).powi(2) + 0.25f64.powi(2);
        assert!((transh_score(&p, 0, 0, 1) - expected).abs() < 1e-12);
        assert_eq!(transh_score(&p, 0, 0, 1), transe_score(&p, 0, 0, 1));
    }

    #[test]
    fn transe_cases() {
        let mut p = params_2d(&[[1.0, 1.0], [2.0, 1.0]], [1.0, 0.0], [1.0, 0.0], ScoreNorm::L1);
        assert_eq!(transe_score(&p, 0, 0, 1), 0.0);
        // h=(1,1), d_r=(1,0), t=(0,0): residual (2,1), L1 = 3
        p.entity.row_mut(1).copy_from_slice(&[0.0, 0.0]);
        assert_eq!(transe_score(&p, 0, 0, 1), 3.0);
        p.score_norm = ScoreNorm::L2;
        assert_eq!(transe_score(&p, 0, 0, 1), 5.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(5, 2, 3, ScoreNorm::L1, ModelKind::Aesi, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        let back = ModelParams::load(dir.path()).unwrap();
        assert_eq!(back, p);
        let meta = std::fs::read_to_string(dir.path().join("meta")).unwrap();
        assert!(meta.contains("model=aesi") && meta.contains("score_norm=1"));
    }

    #[test]
    fn init_bounds_and_unit_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(20, 4, 16, ScoreNorm::L2, ModelKind::TransH, &mut rng).unwrap();
        let bound = 6.0 / 4.0;
        assert!(p.entity.as_slice().iter().all(|v| v.abs() <= bound));
        for r in 0..4 {
            assert!((norm(p.rel_normal.row(r)) - 1.0).abs() < 1e-12);
        }
    }

    fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, d)
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = norm(v);
        v.iter().map(|x| x / n).collect()
    }

    proptest! {
        #[test]
        fn projection_is_orthogonal_shrinking_idempotent(e in vec_of(5), w in vec_of(5)) {
            prop_assume!(norm(&w) > 1e-3);
            let w = unit(&w);
            let p = project_to_hyperplane(&e, &w).unwrap();
            prop_assert!(dot(&p, &w).abs() < 1e-12);
            prop_assert!(norm(&p) <= norm(&e) + 1e-12);
            let pp = project_to_hyperplane(&p, &w).unwrap();
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn scores_nonnegative_and_translation_invariant(
            h in vec_of(4), t in vec_of(4), d in vec_of(4), w in vec_of(4), c in vec_of(4), l1 in any::<bool>()
        ) {
            prop_assume!(norm(&w) > 1e-3);
            let norm_kind = if l1 { ScoreNorm::L1 } else { ScoreNorm::L2 };
            let mk = |h: &[f64], t: &[f64]| ModelParams {
                entity: EmbeddingTable::from_rows(&[h.to_vec(), t.to_vec()], 4).unwrap(),
                rel_trans: EmbeddingTable::from_rows(&[d.clone()], 4).unwrap(),
                rel_normal: EmbeddingTable::from_rows(&[unit(&w)], 4).unwrap(),
                score_norm: norm_kind,
                model: ModelKind::TransH,
            };
            let p = mk(&h, &t);
            prop_assert!(transh_score(&p, 0, 0, 1) >= 0.0);
            prop_assert!(transe_score(&p, 0, 0, 1) >= 0.0);
            let hs: Vec<f64> = h.iter().zip(&c).map(|(a, b)| a + b).collect();
            let ts: Vec<f64> = t.iter().zip(&c).map(|(a, b)| a + b).collect();
            let shifted = mk(&hs, &ts);
            let base = transe_score(&p, 0, 0, 1);
            prop_assert!((transe_score(&shifted, 0, 0, 1) - base).abs() < 1e-9 * (1.0 + base));
        }

        #[test]
        fn score_is_lipschitz_locally(h in vec_of(4), t in vec_of(4), d in vec_of(4), w in vec_of(4), idx in 0usize..4) {
            prop_assume!(norm(&w) > 1e-3);
            let mk = |h: &[f64]| ModelParams {
                entity: EmbeddingTable::from_rows(&[h.to_vec(), t.clone()], 4).unwrap(),
                rel_trans: EmbeddingTable::from_rows(&[d.clone()], 4).unwrap(),
                rel_normal: EmbeddingTable::from_rows(&[unit(&w)], 4).unwrap(),
                score_norm: ScoreNorm::L2,
                model: ModelKind::TransH,
            };
            let base = transh_score(&mk(&h), 0, 0, 1);
            for delta in [1e-2, 1e-3, 1e-4] {
                let mut hp = h.clone();
                hp[idx] += delta;
                let change = (transh_score(&mk(&hp), 0, 0, 1) - base).abs();
                // |Δf| ≤ (2‖residual‖·2 + δ) δ for a squared norm
                prop_assert!(change <= (4.0 * base.sqrt() + 1.0) * delta * 2.0 + 1e-12);
            }
        }
    }
}
