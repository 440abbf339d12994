//! Compression of segment features to a handful of dimensions.
//!
//! [`tsne`] is the main compressor: exact-gradient t-SNE with per-point
//! bandwidths calibrated by perplexity. [`svd`] is a linear alternative whose
//! tendency to crowd classes together serves as the contrast case. Both
//! produce an [`Embedding`], which is rescaled to `[-1, 1]` per dimension by
//! [`normalize_embedding`] before it becomes part of the global
//! representation.

mod cache;
pub mod svd;
pub mod tsne;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::SegmentFeatures;
use crate::error::{Error, Result};

pub use cache::{read_embedding_cache, write_embedding_cache};
pub use svd::svd_compress;
pub use tsne::{
    calibrate_bandwidths, high_dim_affinities, kl_objective, low_dim_affinities,
    squared_distances, tsne_fit, tsne_gradient, AffinityMatrix, Calibration, TsneConfig, TsneRun,
};

/// Default embedding dimension `n`.
pub const DEFAULT_DIM: usize = 3;

/// Row-major `N x n` matrix of low-dimensional coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    dim: usize,
    coords: Vec<f64>,
}

impl Embedding {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not divide into rows of {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("embedding coordinates must be finite"));
        }
        Ok(Self { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Largest pairwise Euclidean distance.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.rows() {
            for j in i + 1..self.rows() {
                best = best.max(sq_dist(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Affinely rescales every dimension onto `[-1, 1]`. Constant dimensions
/// map to 0.
pub fn normalize_embedding(emb: &Embedding) -> Embedding {
    let dim = emb.dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for row in emb.coords.chunks(dim) {
        for (k, &v) in row.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let coords = emb
        .coords
        .chunks(dim)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let span = hi[k] - lo[k];
                    if span > 0.0 {
                        (2.0 * (v - lo[k]) / span - 1.0).clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Embedding { dim, coords }
}

/// Which compressor produces the global representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Compressor {
    #[default]
    Tsne,
    Svd,
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Compressor::Tsne => "tsne",
            Compressor::Svd => "svd",
        })
    }
}

impl FromStr for Compressor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsne" => Ok(Compressor::Tsne),
            "svd" => Ok(Compressor::Svd),
            other => Err(Error::invalid(format!("unknown compressor {other:?}"))),
        }
    }
}

/// Compresses segment features with the chosen method and normalizes the
/// result to `[-1, 1]`.
pub fn compress(
    features: &[SegmentFeatures],
    compressor: Compressor,
    config: &TsneConfig,
) -> Result<Embedding> {
    let points: Vec<_> = features.iter().map(|f| f.weights.clone()).collect();
    let raw = match compressor {
        Compressor::Tsne => tsne_fit(&points, config)?.embedding,
        Compressor::Svd => svd_compress(&points, config.dim)?,
    };
    Ok(normalize_embedding(&raw))
}

/// Fraction of points whose nearest neighbour (excluding itself) carries the
/// same label.
pub fn nearest_neighbor_purity(emb: &Embedding, labels: &[usize]) -> f64 {
    let n = emb.rows();
    assert_eq!(n, labels.len());
    let hits = (0..n)
        .filter(|&i| {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    sq_dist(emb.row(i), emb.row(a)).total_cmp(&sq_dist(emb.row(i), emb.row(b)))
                })
                .expect("at least two points");
            labels[nearest] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}
