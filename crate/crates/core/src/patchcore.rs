//! PatchCore: nearest-neighbour scoring against a coreset of normal patches.
//!
//! Every training location, after local neighbourhood averaging, becomes one
//! row of the memory bank. Greedy k-center selection keeps the rows that best
//! cover the bank, and a query patch scores its Euclidean distance to the
//! closest kept row.
//!
//! The image score is the largest patch distance `s*`. With reweighting on it
//! is scaled by `w = 1 − exp(s*) / Σ_{m ∈ N_b(m*)} exp(‖q* − m‖)`, where `q*` is
//! the arg-max query patch, `m*` its nearest bank row and `N_b(m*)` the `b`
//! rows closest to `m*` (itself included).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::ScoringArena;
use crate::detector::{check_consistent, Detector, DetectorKind, RawScore, TensorSource};
use crate::error::{Error, Result};
use crate::features::neighborhood_aggregate;
use crate::maps::RawAnomalyMap;
use crate::tensor::FeatureTensor;
use crate::tensorio::{ModelArtifact, PayloadBlock};

const BLOCK_SHAPE: u8 = 1;
const BLOCK_EMBEDDINGS: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchCoreConfig {
    pub coreset_fraction: f32,
    pub seed: u64,
    pub aggregation_kernel: usize,
    pub reweight: bool,
    pub reweight_neighbors: usize,
    /// Random projection width used only while selecting the coreset.
    pub projection_dim: Option<usize>,
}

impl Default for PatchCoreConfig {
    fn default() -> Self {
        Self {
            coreset_fraction: 0.1,
            seed: 0,
            aggregation_kernel: 3,
            reweight: true,
            reweight_neighbors: 9,
            projection_dim: None,
        }
    }
}

impl PatchCoreConfig {
    fn validate(&self) -> Result<()> {
        if !(self.coreset_fraction > 0.0 && self.coreset_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "coreset_fraction must be in (0, 1], got {}",
                self.coreset_fraction
            )));
        }
        if self.aggregation_kernel == 0 || self.aggregation_kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "aggregation_kernel must be odd, got {}",
                self.aggregation_kernel
            )));
        }
        if self.reweight_neighbors == 0 {
            return Err(Error::InvalidConfig("reweight_neighbors must be >= 1".into()));
        }
        if self.projection_dim == Some(0) {
            return Err(Error::InvalidConfig("projection_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowOrigin {
    pub image: u32,
    pub location: u32,
}

/// `M × D` row-major patch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    embeddings: Vec<f32>,
    dim: usize,
    provenance: Option<Vec<RowOrigin>>,
}

impl MemoryBank {
    pub fn new(embeddings: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || embeddings.is_empty() || !embeddings.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "bank of {} values is not a non-empty multiple of D = {dim}",
                embeddings.len()
            )));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("memory bank rows must be finite".into()));
        }
        Ok(Self {
            embeddings,
            dim,
            provenance: None,
        })
    }

    pub fn rows(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn provenance(&self) -> Option<&[RowOrigin]> {
        self.provenance.as_deref()
    }

    /// Keeps only `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> MemoryBank {
        let embeddings = indices
            .iter()
            .flat_map(|&i| self.row(i).iter().copied())
            .collect();
        let provenance = self
            .provenance
            .as_ref()
            .map(|p| indices.iter().map(|&i| p[i]).collect());
        MemoryBank {
            embeddings,
            dim: self.dim,
            provenance,
        }
    }
}

#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Index and squared distance of the closest bank row (lowest index on ties).
pub fn nearest_row(bank: &MemoryBank, query: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for i in 0..bank.rows() {
        let d = squared_distance(query, bank.row(i));
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Aggregates each training tensor and stacks all location vectors as rows.
pub fn build_bank<S: TensorSource + ?Sized>(train: &S, cfg: &PatchCoreConfig) -> Result<MemoryBank> {
    cfg.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    let dims = train.load(0)?.dims();
    let [c, h, w] = dims;
    let hw = h * w;
    let per_image: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let t = train.load(idx)?;
            check_consistent(dims, t.dims(), idx)?;
            let agg = neighborhood_aggregate(&t, cfg.aggregation_kernel)?;
            let mut rows = vec![0.0f32; hw * c];
            for (loc, row) in rows.chunks_exact_mut(c).enumerate() {
                agg.location_vector_into(loc, row);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let provenance = (0..n as u32)
        .flat_map(|image| (0..hw as u32).map(move |location| RowOrigin { image, location }))
        .collect();
    let mut bank = MemoryBank::new(per_image.concat(), c)?;
    bank.provenance = Some(provenance);
    Ok(bank)
}

fn project(bank: &MemoryBank, width: usize, rng: &mut ChaCha8Rng) -> MemoryBank {
    let d = bank.dim();
    let scale = 1.0 / (width as f32).sqrt();
    let matrix: Vec<f32> = (0..d * width)
        .map(|_| {
            let v: f32 = StandardNormal.sample(rng);
            v * scale
        })
        .collect();
    let embeddings: Vec<f32> = (0..bank.rows())
        .into_par_iter()
        .flat_map_iter(|r| {
            let row = bank.row(r);
            let matrix = &matrix;
            (0..width).map(move |j| (0..d).map(|i| row[i] * matrix[i * width + j]).sum::<f32>())
        })
        .collect();
    MemoryBank {
        embeddings,
        dim: width,
        provenance: None,
    }
}

/// Number of rows a coreset fraction keeps out of `rows`.
pub fn coreset_size(rows: usize, fraction: f32) -> usize {
    ((fraction as f64 * rows as f64).floor() as usize).clamp(1, rows)
}

/// Greedy k-center (minimax) selection of `max(1, ⌊fraction·M⌋)` rows.
///
/// The first row is drawn uniformly from `seed`; every later pick is the row
/// farthest from its nearest already-picked row, lowest index on ties. With a
/// projection width, distances are measured after a seeded Gaussian random
/// projection; returned indices always refer to the original rows.
pub fn coreset_select(
    bank: &MemoryBank,
    fraction: f32,
    seed: u64,
    projection_dim: Option<usize>,
) -> Vec<usize> {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must be in (0, 1]");
    let m = bank.rows();
    let k = coreset_size(m, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..m);

    let projected;
    let space = match projection_dim {
        Some(p) if p < bank.dim() => {
            projected = project(bank, p, &mut rng);
            &projected
        }
        _ => bank,
    };

    let mut min_dist = vec![f32::INFINITY; m];
    let mut selected = Vec::with_capacity(k);
    let mut last = start;
    loop {
        selected.push(last);
        min_dist[last] = f32::NEG_INFINITY;
        if selected.len() == k {
            break;
        }
        let anchor = space.row(last);
        min_dist.par_iter_mut().enumerate().for_each(|(i, md)| {
            if *md != f32::NEG_INFINITY {
                let d = squared_distance(space.row(i), anchor);
                if d < *md {
                    *md = d;
                }
            }
        });
        let mut best = 0usize;
        for i in 1..m {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        last = best;
    }
    selected
}

/// A fitted PatchCore detector: the coreset bank plus its scoring settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCoreModel {
    bank: MemoryBank,
    feature_dims: [usize; 3],
    config: PatchCoreConfig,
}

pub fn fit_patchcore<S: TensorSource + ?Sized>(
    train: &S,
    cfg: &PatchCoreConfig,
) -> Result<PatchCoreModel> {
    let full = build_bank(train, cfg)?;
    let feature_dims = train.load(0)?.dims();
    let keep = coreset_select(&full, cfg.coreset_fraction, cfg.seed, cfg.projection_dim);
    Ok(PatchCoreModel {
        bank: full.subset(&keep),
        feature_dims,
        config: cfg.clone(),
    })
}

/// Result of [`score_patchcore`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScore {
    pub map: RawAnomalyMap,
    pub image_score: f32,
    /// Largest patch distance before reweighting.
    pub max_distance: f32,
    pub reweight: Option<f32>,
}

pub fn score_patchcore(
    bank: &MemoryBank,
    t: &FeatureTensor,
    cfg: &PatchCoreConfig,
    arena: &ScoringArena,
) -> Result<PatchScore> {
    cfg.validate()?;
    if t.channels() != bank.dim() {
        return Err(Error::DimensionMismatch(format!(
            "tensor has {} channels, bank rows have D = {}",
            t.channels(),
            bank.dim()
        )));
    }
    let (h, w, c) = (t.height(), t.width(), t.channels());
    let hw = h * w;

    let mut queries = arena.alloc::<f32>(hw * c);
    {
        let _agg = arena.reserve(t.data().len() * 4);
        let agg = neighborhood_aggregate(t, cfg.aggregation_kernel)?;
        for (loc, row) in queries.chunks_exact_mut(c).enumerate() {
            agg.location_vector_into(loc, row);
        }
    }

    let mut dist = arena.alloc::<f32>(hw);
    let mut nn = arena.alloc::<u32>(hw);
    dist.par_iter_mut()
        .zip(nn.par_iter_mut())
        .enumerate()
        .for_each(|(loc, (d, n))| {
            let (idx, sq) = nearest_row(bank, &queries[loc * c..(loc + 1) * c]);
            *d = sq.sqrt();
            *n = idx as u32;
        });

    let mut star = 0usize;
    for loc in 1..hw {
        if dist[loc] > dist[star] {
            star = loc;
        }
    }
    let s_star = dist[star];
    let reweight = if cfg.reweight {
        let q_star = &queries[star * c..(star + 1) * c];
        let m_star = bank.row(nn[star] as usize);
        let b = cfg.reweight_neighbors.min(bank.rows());
        let mut around = arena.alloc::<(f32, u32)>(bank.rows());
        for (i, slot) in around.iter_mut().enumerate() {
            *slot = (squared_distance(m_star, bank.row(i)), i as u32);
        }
        around.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // exp(s*) / Σ exp(d_m) evaluated as 1 / Σ exp(d_m − s*)
        let denom: f64 = around[..b]
            .iter()
            .map(|&(_, i)| {
                let d = squared_distance(q_star, bank.row(i as usize)).sqrt() as f64;
                (d - s_star as f64).exp()
            })
            .sum();
        Some((1.0 - 1.0 / denom) as f32)
    } else {
        None
    };
    let image_score = match reweight {
        Some(wt) => wt * s_star,
        None => s_star,
    };
    Ok(PatchScore {
        map: RawAnomalyMap::new(dist.into_vec(), h, w)?,
        image_score,
        max_distance: s_star,
        reweight,
    })
}

impl PatchCoreModel {
    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn config(&self) -> &PatchCoreConfig {
        &self.config
    }

    pub fn score(&self, t: &FeatureTensor, arena: &ScoringArena) -> Result<PatchScore> {
        let [_, h, w] = self.feature_dims;
        if (t.height(), t.width()) != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "patchcore grid is {h}×{w}, tensor is {}×{}",
                t.height(),
                t.width()
            )));
        }
        score_patchcore(&self.bank, t, &self.config, arena)
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        if a.detector != DetectorKind::PatchCore {
            return Err(Error::MalformedArtifact(format!(
                "expected a patchcore artifact, found {}",
                a.detector
            )));
        }
        let config: PatchCoreConfig =
            serde_json::from_value(serde_json::Value::Object(a.config_echo.clone()))?;
        let shape = a.block(BLOCK_SHAPE)?.as_u32s()?;
        let [c, h, w, d, m, kernel, reweight, b] = <[u32; 8]>::try_from(shape.as_slice())
            .map_err(|_| Error::MalformedArtifact("patchcore shape block".into()))?
            .map(|v| v as usize);
        let embeddings = a.block(BLOCK_EMBEDDINGS)?.as_f32s()?;
        if embeddings.len() != m * d
            || d != c
            || kernel != config.aggregation_kernel
            || (reweight == 1) != config.reweight
            || b != config.reweight_neighbors
        {
            return Err(Error::MalformedArtifact("patchcore blocks inconsistent".into()));
        }
        Ok(Self {
            bank: MemoryBank::new(embeddings, d)?,
            feature_dims: [c, h, w],
            config,
        })
    }
}

impl Detector for PatchCoreModel {
    fn kind(&self) -> DetectorKind {
        DetectorKind::PatchCore
    }

    fn feature_dims(&self) -> [usize; 3] {
        self.feature_dims
    }

    fn score_raw(&self, tensor: &FeatureTensor, arena: &ScoringArena) -> Result<RawScore> {
        let s = self.score(tensor, arena)?;
        Ok(RawScore {
            map: s.map,
            image_score: Some(s.image_score),
        })
    }

    fn to_artifact(&self) -> Result<ModelArtifact> {
        let echo = match serde_json::to_value(&self.config)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let mut a = ModelArtifact::new(DetectorKind::PatchCore, echo);
        let [c, h, w] = self.feature_dims;
        let shape = [
            c,
            h,
            w,
            self.bank.dim(),
            self.bank.rows(),
            self.config.aggregation_kernel,
            self.config.reweight as usize,
            self.config.reweight_neighbors,
        ]
        .map(|v| v as u32);
        a.push(PayloadBlock::from_u32s(BLOCK_SHAPE, &shape));
        a.push(PayloadBlock::from_f32s(BLOCK_EMBEDDINGS, self.bank.embeddings()));
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_1d(values: &[f32]) -> MemoryBank {
        MemoryBank::new(values.to_vec(), 1).unwrap()
    }

    fn tensor(data: Vec<f32>, c: usize, h: usize, w: usize) -> FeatureTensor {
        FeatureTensor::new(data, c, h, w).unwrap()
    }

    fn random_tensors(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Vec<FeatureTensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| tensor((0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(), c, h, w))
            .collect()
    }

    #[test]
    fn bank_row_counts() {
        let cfg = PatchCoreConfig { aggregation_kernel: 1, ..Default::default() };
        let train = random_tensors(2, 3, 4, 4, 0);
        let bank = build_bank(&train, &cfg).unwrap();
        assert_eq!(bank.rows(), 32);
        let single = build_bank(&train[..1], &cfg).unwrap();
        for loc in 0..16 {
            assert_eq!(single.row(loc), train[0].location_vector(loc).as_slice());
        }
        let dup = vec![train[0].clone(), train[0].clone()];
        let bank = build_bank(&dup, &cfg).unwrap();
        assert_eq!(bank.row(3), bank.row(19));
        assert_eq!(bank.provenance().unwrap()[19], RowOrigin { image: 1, location: 3 });
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let mut train = random_tensors(2, 3, 4, 4, 0);
        train.push(random_tensors(1, 3, 4, 5, 0).pop().unwrap());
        assert!(matches!(build_bank(&train, &PatchCoreConfig::default()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn minimax_second_pick() {
        // Rows {0, 10, 1}; starting from row 0 the farthest row is 10.
        let bank = bank_1d(&[0.0, 10.0, 1.0]);
        let seed = (0..200u64)
            .find(|&s| ChaCha8Rng::seed_from_u64(s).random_range(0..3usize) == 0)
            .unwrap();
        let picks = coreset_select(&bank, 2.0 / 3.0, seed, None);
        assert_eq!(picks, vec![0, 1]);
        // exhaustive check: of all candidates, index 1 maximises distance to {0}
        let best = (1..3).max_by(|&a, &b| {
            (bank.row(a)[0] - 0.0).abs().total_cmp(&(bank.row(b)[0] - 0.0).abs())
        });
        assert_eq!(best, Some(1));
    }

    #[test]
    fn full_fraction_and_single_pick() {
        let bank = MemoryBank::new((0..40).map(|v| (v % 7) as f32).collect(), 2).unwrap();
        let mut all = coreset_select(&bank, 1.0, 3, None);
        assert_eq!(all.len(), 20);
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        let start = ChaCha8Rng::seed_from_u64(3).random_range(0..20usize);
        assert_eq!(coreset_select(&bank, 0.01, 3, None), vec![start]);
    }

    #[test]
    fn projection_keeps_original_indices() {
        let train = random_tensors(3, 16, 4, 4, 1);
        let bank = build_bank(&train, &PatchCoreConfig::default()).unwrap();
        let a = coreset_select(&bank, 0.2, 5, Some(4));
        let b = coreset_select(&bank, 0.2, 5, Some(4));
        assert_eq!(a, b);
        assert_eq!(a.len(), coreset_size(48, 0.2));
        assert!(a.iter().all(|&i| i < 48));
        assert_eq!(a[0], coreset_select(&bank, 0.2, 5, None)[0]);
    }

    #[test]
    fn hand_distances() {
        let bank = MemoryBank::new(vec![0.0, 0.0, 3.0, 4.0], 2).unwrap();
        // 2 channels on a 1×2 grid: location 0 = (0,0), location 1 = (3,0)
        let t = tensor(vec![0.0, 3.0, 0.0, 0.0], 2, 1, 2);
        let cfg = PatchCoreConfig { aggregation_kernel: 1, reweight: false, ..Default::default() };
        let s = score_patchcore(&bank, &t, &cfg, &ScoringArena::new()).unwrap();
        assert_eq!(s.map.values(), &[0.0, 3.0]);
        assert_eq!(s.image_score, 3.0);
    }

    #[test]
    fn reweighting_follows_softmax_formula() {
        let bank = MemoryBank::new(vec![0.0, 1.0, 5.0], 1).unwrap();
        let t = tensor(vec![2.0], 1, 1, 1);
        let cfg = PatchCoreConfig { aggregation_kernel: 1, reweight_neighbors: 2, ..Default::default() };
        let s = score_patchcore(&bank, &t, &cfg, &ScoringArena::new()).unwrap();
        // s* = 1 (nearest row value 1); N_2(row 1) = {row 1, row 0}; distances 1, 2
        let w = 1.0 - 1f64.exp() / (1f64.exp() + 2f64.exp());
        assert!((s.reweight.unwrap() as f64 - w).abs() < 1e-6);
        assert!((s.image_score as f64 - w).abs() < 1e-6);
        assert_eq!(s.max_distance, 1.0);
    }

    #[test]
    fn full_bank_scores_training_image_zero() {
        let train = random_tensors(2, 4, 3, 3, 2);
        let cfg = PatchCoreConfig { aggregation_kernel: 1, coreset_fraction: 1.0, ..Default::default() };
        let m = fit_patchcore(&train, &cfg).unwrap();
        for t in &train {
            let s = m.score(t, &ScoringArena::new()).unwrap();
            assert!(s.map.values().iter().all(|&v| v == 0.0));
            assert_eq!(s.image_score, 0.0);
        }
    }

    #[test]
    fn artifact_round_trip() {
        let train = random_tensors(3, 4, 3, 3, 9);
        let m = fit_patchcore(&train, &PatchCoreConfig { coreset_fraction: 0.3, ..Default::default() }).unwrap();
        let bytes = m.to_artifact().unwrap().encode().unwrap();
        let back = PatchCoreModel::from_artifact(&ModelArtifact::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back.bank().embeddings(), m.bank().embeddings());
        assert_eq!(back.config(), m.config());
        assert_eq!(back.to_artifact().unwrap().encode().unwrap(), bytes);
    }

    #[test]
    fn dimension_mismatch() {
        let bank = MemoryBank::new(vec![0.0; 6], 3).unwrap();
        let t = tensor(vec![0.0; 8], 2, 2, 2);
        assert!(score_patchcore(&bank, &t, &PatchCoreConfig::default(), &ScoringArena::new()).is_err());
    }
}
