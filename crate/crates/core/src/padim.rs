//! PaDiM: one multivariate Gaussian per feature-grid location.
//!
//! Fitting draws a seeded random subset of `d` channels, then estimates at
//! every location the mean and unbiased covariance of those channels over the
//! training images. The covariance is regularised with `ε·I` and stored as its
//! Cholesky factor `L` (packed lower triangle, row-major: row `i` holds
//! `L[i][0..=i]` starting at offset `i(i+1)/2`). Scoring solves `L z = x − μ`
//! by forward substitution and returns `‖z‖`, the Mahalanobis distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arena::ScoringArena;
use crate::detector::{check_consistent, Detector, DetectorKind, RawScore, TensorSource};
use crate::error::{Error, Result};
use crate::maps::RawAnomalyMap;
use crate::tensor::FeatureTensor;
use crate::tensorio::{ModelArtifact, PayloadBlock};

pub const DEFAULT_MAX_CHANNELS: usize = 100;

const BLOCK_GRID: u8 = 1;
const BLOCK_CHANNELS: u8 = 2;
const BLOCK_MEANS: u8 = 3;
const BLOCK_FACTORS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PadimConfig {
    /// Channel-subset size. `None` picks `min(100, C)`.
    pub d: Option<usize>,
    pub epsilon: f32,
    pub seed: u64,
    /// Post-chain smoothing at 256×256 input; scaled linearly with resolution.
    pub smoothing_sigma: f32,
}

impl Default for PadimConfig {
    fn default() -> Self {
        Self {
            d: None,
            epsilon: 0.01,
            seed: 0,
            smoothing_sigma: 4.0,
        }
    }
}

impl PadimConfig {
    pub fn resolved_d(&self, channels: usize) -> Result<usize> {
        let d = self.d.unwrap_or(DEFAULT_MAX_CHANNELS.min(channels));
        if d == 0 || d > channels {
            return Err(Error::InvalidConfig(format!(
                "padim d must be in 1..={channels}, got {d}"
            )));
        }
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "padim epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.smoothing_sigma.is_nan() || self.smoothing_sigma < 0.0 {
            return Err(Error::InvalidConfig("padim smoothing_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct PadimModel {
    selected_channels: Vec<u32>,
    channels: usize,
    grid: (usize, usize),
    means: Vec<f32>,
    factors: Vec<f32>,
    config: PadimConfig,
}

/// Draws `d` distinct channels uniformly without replacement, sorted ascending.
pub fn select_channels(channels: usize, d: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, channels, d)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    picked.sort_unstable();
    picked
}

/// In-place Cholesky of a packed symmetric matrix into its packed lower factor.
/// Returns `false` if the matrix is not positive definite.
pub fn cholesky_packed(a: &mut [f64], d: usize) -> bool {
    for i in 0..d {
        let ri = i * (i + 1) / 2;
        for j in 0..=i {
            let rj = j * (j + 1) / 2;
            let mut s = a[ri + j];
            for k in 0..j {
                s -= a[ri + k] * a[rj + k];
            }
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return false;
                }
                a[ri + i] = s.sqrt();
            } else {
                a[ri + j] = s / a[rj + j];
            }
        }
    }
    true
}

/// Mahalanobis distance of `x` from `mean` under covariance `L Lᵀ`, where
/// `factor` is the packed lower-triangular `L` with positive diagonal.
pub fn mahalanobis(x: &[f32], mean: &[f32], factor: &[f32]) -> f32 {
    let mut scratch = vec![0.0f64; x.len()];
    mahalanobis_with(x, mean, factor, &mut scratch)
}

pub(crate) fn mahalanobis_with(x: &[f32], mean: &[f32], factor: &[f32], z: &mut [f64]) -> f32 {
    let d = x.len();
    debug_assert_eq!(mean.len(), d);
    debug_assert_eq!(factor.len(), packed_len(d));
    let mut norm = 0.0f64;
    for i in 0..d {
        let row = &factor[i * (i + 1) / 2..];
        let mut s = x[i] as f64 - mean[i] as f64;
        for k in 0..i {
            s -= row[k] as f64 * z[k];
        }
        let zi = s / row[i] as f64;
        z[i] = zi;
        norm += zi * zi;
    }
    norm.sqrt() as f32
}

/// Fits a PaDiM model. All tensors must share `[C, H, W]`; at least two are needed.
pub fn fit_padim<S: TensorSource + ?Sized>(train: &S, cfg: &PadimConfig) -> Result<PadimModel> {
    cfg.validate()?;
    let n = train.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { needed: 2, got: n });
    }
    let first = train.load(0)?.into_owned();
    let dims = first.dims();
    let [channels, h, w] = dims;
    let hw = h * w;
    let d = cfg.resolved_d(channels)?;
    let selected = select_channels(channels, d, cfg.seed);
    let tri = packed_len(d);

    // Shifted sums around the first sample keep the one-pass estimate close to
    // the two-pass definition.
    let gather = |t: &FeatureTensor, loc: usize, out: &mut [f64]| {
        for (slot, &c) in out.iter_mut().zip(&selected) {
            *slot = t.get(c as usize, loc / w, loc % w) as f64;
        }
    };
    let mut shift = vec![0.0f64; hw * d];
    shift
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(loc, s)| gather(&first, loc, s));
    let mut sum1 = vec![0.0f64; hw * d];
    let mut sum2 = vec![0.0f64; hw * tri];

    for idx in 1..n {
        let t = train.load(idx)?;
        check_consistent(dims, t.dims(), idx)?;
        sum1.par_chunks_mut(d)
            .zip(sum2.par_chunks_mut(tri))
            .zip(shift.par_chunks(d))
            .enumerate()
            .for_each_init(
                || vec![0.0f64; d],
                |x, (loc, ((s1, s2), sh))| {
                    gather(&t, loc, x);
                    for i in 0..d {
                        x[i] -= sh[i];
                    }
                    let mut at = 0;
                    for i in 0..d {
                        s1[i] += x[i];
                        for j in 0..=i {
                            s2[at] += x[i] * x[j];
                            at += 1;
                        }
                    }
                },
            );
    }

    let nf = n as f64;
    let eps = cfg.epsilon as f64;
    let mut means = vec![0.0f32; hw * d];
    let mut factors = vec![0.0f32; hw * tri];
    let failed = means
        .par_chunks_mut(d)
        .zip(factors.par_chunks_mut(tri))
        .enumerate()
        .map_init(
            || vec![0.0f64; tri],
            |cov, (loc, (mu, fac))| {
                let s1 = &sum1[loc * d..(loc + 1) * d];
                let s2 = &sum2[loc * tri..(loc + 1) * tri];
                let sh = &shift[loc * d..(loc + 1) * d];
                let mut at = 0;
                for i in 0..d {
                    mu[i] = (sh[i] + s1[i] / nf) as f32;
                    for j in 0..=i {
                        let mut c = (s2[at] - s1[i] * s1[j] / nf) / (nf - 1.0);
                        if i == j {
                            c += eps;
                        }
                        cov[at] = c;
                        at += 1;
                    }
                }
                if !cholesky_packed(cov, d) {
                    return Some(loc);
                }
                for (f, c) in fac.iter_mut().zip(cov.iter()) {
                    *f = *c as f32;
                }
                None
            },
        )
        .flatten()
        .min();
    if let Some(location) = failed {
        return Err(Error::Cholesky { location });
    }

    Ok(PadimModel {
        selected_channels: selected,
        channels,
        grid: (h, w),
        means,
        factors,
        config: cfg.clone(),
    })
}

impl PadimModel {
    pub fn selected_channels(&self) -> &[u32] {
        &self.selected_channels
    }

    pub fn d(&self) -> usize {
        self.selected_channels.len()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn config(&self) -> &PadimConfig {
        &self.config
    }

    pub fn mean(&self, loc: usize) -> &[f32] {
        let d = self.d();
        &self.means[loc * d..(loc + 1) * d]
    }

    /// Packed lower Cholesky factor at a location.
    pub fn factor(&self, loc: usize) -> &[f32] {
        let t = packed_len(self.d());
        &self.factors[loc * t..(loc + 1) * t]
    }

    /// Per-location Mahalanobis distances on the feature grid.
    pub fn score_map(&self, t: &FeatureTensor, arena: &ScoringArena) -> Result<RawAnomalyMap> {
        let (h, w) = self.grid;
        if (t.height(), t.width()) != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "padim grid is {h}×{w}, tensor is {}×{}",
                t.height(),
                t.width()
            )));
        }
        let max_channel = *self.selected_channels.last().unwrap() as usize;
        if t.channels() <= max_channel {
            return Err(Error::DimensionMismatch(format!(
                "padim needs channel {max_channel}, tensor has {}",
                t.channels()
            )));
        }
        let d = self.d();
        let mut out = arena.alloc::<f32>(h * w);
        let _scratch = arena.reserve(rayon::current_num_threads() * d * (4 + 8));
        out.par_iter_mut().enumerate().for_each_init(
            || (vec![0.0f32; d], vec![0.0f64; d]),
            |(x, z), (loc, slot)| {
                for (xi, &c) in x.iter_mut().zip(&self.selected_channels) {
                    *xi = t.get(c as usize, loc / w, loc % w);
                }
                *slot = mahalanobis_with(x, self.mean(loc), self.factor(loc), z);
            },
        );
        RawAnomalyMap::new(out.into_vec(), h, w)
    }

    pub fn from_artifact(a: &ModelArtifact) -> Result<Self> {
        if a.detector != DetectorKind::Padim {
            return Err(Error::MalformedArtifact(format!(
                "expected a padim artifact, found {}",
                a.detector
            )));
        }
        let config: PadimConfig =
            serde_json::from_value(serde_json::Value::Object(a.config_echo.clone()))?;
        let grid = a.block(BLOCK_GRID)?.as_u32s()?;
        let [h, w, channels, d] = <[u32; 4]>::try_from(grid.as_slice())
            .map_err(|_| Error::MalformedArtifact("padim grid block".into()))?
            .map(|v| v as usize);
        let selected_channels = a.block(BLOCK_CHANNELS)?.as_u32s()?;
        let means = a.block(BLOCK_MEANS)?.as_f32s()?;
        let factors = a.block(BLOCK_FACTORS)?.as_f32s()?;
        let ok = d >= 1
            && selected_channels.len() == d
            && selected_channels.windows(2).all(|p| p[0] < p[1])
            && selected_channels.last().is_some_and(|&c| (c as usize) < channels)
            && means.len() == h * w * d
            && factors.len() == h * w * packed_len(d);
        if !ok {
            return Err(Error::MalformedArtifact("padim block sizes inconsistent".into()));
        }
        Ok(Self {
            selected_channels,
            channels,
            grid: (h, w),
            means,
            factors,
            config,
        })
    }
}

impl Detector for PadimModel {
    fn kind(&self) -> DetectorKind {
        DetectorKind::Padim
    }

    fn feature_dims(&self) -> [usize; 3] {
        [self.channels, self.grid.0, self.grid.1]
    }

    fn score_raw(&self, tensor: &FeatureTensor, arena: &ScoringArena) -> Result<RawScore> {
        Ok(RawScore {
            map: self.score_map(tensor, arena)?,
            image_score: None,
        })
    }

    fn to_artifact(&self) -> Result<ModelArtifact> {
        let echo = match serde_json::to_value(&self.config)? {
            serde_json::Value::Object(m) => m,
            _ => unreachable!("config serializes to an object"),
        };
        let mut a = ModelArtifact::new(DetectorKind::Padim, echo);
        let (h, w) = self.grid;
        a.push(PayloadBlock::from_u32s(
            BLOCK_GRID,
            &[h as u32, w as u32, self.channels as u32, self.d() as u32],
        ));
        a.push(PayloadBlock::from_u32s(BLOCK_CHANNELS, &self.selected_channels));
        a.push(PayloadBlock::from_f32s(BLOCK_MEANS, &self.means));
        a.push(PayloadBlock::from_f32s(BLOCK_FACTORS, &self.factors));
        Ok(a)
    }
}
