//! Memory-bank visual anomaly detection on precomputed CNN features.
//!
//! Two detectors share one scoring interface:
//!
//! * [`padim`]: a multivariate Gaussian per feature location, scored by
//!   Mahalanobis distance.
//! * [`patchcore`]: a greedy k-center coreset of locally aggregated patch
//!   features, scored by nearest-neighbour distance.
//!
//! Features arrive as `VADF` files listed in a JSON dataset manifest
//! ([`tensorio`]). Fitted models are written as self-describing `VADM`
//! artifacts. [`eval`] builds the three evaluation settings and computes
//! image-level metrics, [`maps`] turns patch scores into image-resolution
//! maps and overlays, and [`profile`] measures footprint, latency and
//! scoring memory.

pub mod arena;
pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod features;
pub mod maps;
pub mod padim;
pub mod patchcore;
pub mod pipeline;
pub mod profile;
pub mod synthetic;
pub mod tensor;
pub mod tensorio;

pub use arena::ScoringArena;
pub use config::EngineConfig;
pub use detector::{Detector, DetectorKind, FittedModel, ManifestSource, RawScore, TensorSource};
pub use error::{Error, Result};
pub use maps::{AnomalyMap, PostChain, RawAnomalyMap, Reduction, ScoreRange};
pub use padim::{fit_padim, PadimConfig, PadimModel};
pub use patchcore::{fit_patchcore, PatchCoreConfig, PatchCoreModel};
pub use pipeline::score_image;
pub use tensor::{FeatureTensor, Grid};
