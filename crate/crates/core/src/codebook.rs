//! Vector quantisation against a codebook and the VQ-VAE loss terms.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Entries closer than this (squared distance) count as duplicates.
const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// `K` embedding vectors of dimension `n_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookDoc", into = "CodebookDoc")]
pub struct Codebook {
    entries: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CodebookDoc {
    #[serde(rename = "K")]
    k: usize,
    n_z: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<CodebookDoc> for Codebook {
    type Error = Error;

    fn try_from(doc: CodebookDoc) -> Result<Self> {
        if doc.entries.len() != doc.k || doc.entries.iter().any(|e| e.len() != doc.n_z) {
            return Err(Error::Shape(format!("codebook header K = {}, n_z = {} disagrees with entries", doc.k, doc.n_z)));
        }
        Codebook::new(doc.entries)
    }
}

impl From<Codebook> for CodebookDoc {
    fn from(cb: Codebook) -> Self {
        CodebookDoc { k: cb.len(), n_z: cb.dim(), entries: cb.entries }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidParameter("codebook needs at least 2 entries".into()));
        }
        let dim = entries[0].len();
        if dim == 0 || entries.iter().any(|e| e.len() != dim) {
            return Err(Error::Shape("codebook entries must share a positive dimension".into()));
        }
        if entries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entry".into()));
        }
        for i in 0..entries.len() {
            for j in 0..i {
                if squared_distance(&entries[i], &entries[j]) <= DUPLICATE_TOLERANCE {
                    return Err(Error::InvalidParameter(format!("entries {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Embedding dimension `n_z`.
    pub fn dim(&self) -> usize {
        self.entries[0].len()
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries[k]
    }

    /// Index of the nearest entry; ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, e) in self.entries.iter().enumerate() {
            let d = squared_distance(v, e);
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        best
    }

    /// Grid of the entries selected by `tokens`.
    pub fn lookup(&self, tokens: &TokenGrid) -> Result<FeatureGrid> {
        let mut data = Vec::with_capacity(tokens.tokens.len() * self.dim());
        for &k in &tokens.tokens {
            if k >= self.len() {
                return Err(Error::TokenOutOfRange { token: k, categories: self.len() });
            }
            data.extend_from_slice(&self.entries[k]);
        }
        FeatureGrid::new(tokens.rows, tokens.cols, self.dim(), data)
    }
}

/// `rows x cols` grid of `dim`-dimensional vectors, stored row-major.
///
/// With `dim = 1` it also represents a plain real matrix such as a spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::Shape("grid dimensions must be positive".into()));
        }
        if data.len() != rows * cols * dim {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols}x{dim} grid", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid entry".into()));
        }
        Ok(Self { rows, cols, dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.cols + j) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.dim == other.dim
    }
}

/// Token indices laid out on the encoder's `rows x cols` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub rows: usize,
    pub cols: usize,
    pub tokens: Vec<usize>,
}

impl TokenGrid {
    /// Row-major flattening into a token sequence.
    pub fn to_sequence(&self) -> crate::diffusion::TokenSequence {
        crate::diffusion::TokenSequence(self.tokens.clone())
    }
}

/// Maps every grid cell to its nearest codebook entry.
pub fn quantize(grid: &FeatureGrid, codebook: &Codebook) -> Result<TokenGrid> {
    if grid.dim() != codebook.dim() {
        return Err(Error::Shape(format!(
            "grid vectors have dimension {}, codebook {}",
            grid.dim(),
            codebook.dim()
        )));
    }
    Ok(TokenGrid {
        rows: grid.rows(),
        cols: grid.cols(),
        tokens: grid.cells().map(|c| codebook.nearest(c)).collect(),
    })
}

/// Evaluated VQ-VAE loss terms.
///
/// `codebook_term` is `||sg[z_enc] - z_q||^2` (gradient reaches the codebook
/// only) and `commit_term` is `||sg[z_q] - z_enc||^2` (gradient reaches the
/// encoder only). Stop-gradient is the identity in the forward pass, so the two
/// values coincide; they are kept separate because they update different
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLoss {
    pub recon_l1: f64,
    pub codebook_term: f64,
    pub commit_term: f64,
}

impl VqLoss {
    pub fn total(&self) -> f64 {
        self.recon_l1 + self.codebook_term + self.commit_term
    }
}

/// Mean absolute reconstruction error over all spectrogram entries plus the
/// two mean-over-cells squared embedding residuals.
pub fn vq_loss(
    s: &FeatureGrid,
    s_hat: &FeatureGrid,
    z_enc: &FeatureGrid,
    quantized: &FeatureGrid,
) -> Result<VqLoss> {
    if !s.same_shape(s_hat) {
        return Err(Error::Shape("s and s_hat differ in shape".into()));
    }
    if !z_enc.same_shape(quantized) {
        return Err(Error::Shape("encoder output and quantized grid differ in shape".into()));
    }
    let recon_l1 = s.as_slice().iter().zip(s_hat.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        / s.as_slice().len() as f64;
    let cells = (z_enc.rows() * z_enc.cols()) as f64;
    let residual = z_enc.cells().zip(quantized.cells()).map(|(a, b)| squared_distance(a, b)).sum::<f64>() / cells;
    Ok(VqLoss { recon_l1, codebook_term: residual, commit_term: residual })
}

/// Adds the weighted adversarial term `lambda_d * (ln D(s) + ln(1 - D(s_hat)))`.
pub fn adversarial_total(vq_total: f64, d_real: f64, d_fake: f64, lambda_d: f64) -> Result<f64> {
    let open_unit = |v: f64| v > 0.0 && v < 1.0;
    if !open_unit(d_real) || !open_unit(d_fake) {
        return Err(Error::InvalidParameter(format!(
            "discriminator outputs must lie in (0, 1), got {d_real} and {d_fake}"
        )));
    }
    if lambda_d.is_nan() || lambda_d < 0.0 {
        return Err(Error::InvalidParameter(format!("lambda_d = {lambda_d}")));
    }
    Ok(vq_total + lambda_d * (d_real.ln() + (1.0 - d_fake).ln()))
}

/// Adversarial weight used before the warm-up epochs are over.
pub const LAMBDA_D_WARMUP: f64 = 0.0;
/// Adversarial weight after warm-up.
pub const LAMBDA_D: f64 = 0.8;
/// Epochs trained with the adversarial term disabled.
pub const ADVERSARIAL_WARMUP_EPOCHS: usize = 2;

/// `lambda_d` for a 0-based training epoch.
pub fn lambda_d_for_epoch(epoch: usize) -> f64 {
    if epoch < ADVERSARIAL_WARMUP_EPOCHS { LAMBDA_D_WARMUP } else { LAMBDA_D }
}
