//! Rotary positional embeddings: frequency schedule, rotation, and the
//! mapping from frequency bands to head-dimension indices.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::numerics::Matrix;

/// Where the two coordinates of frequency pair `j` live in a head vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairLayout {
    /// Pair `j` occupies dims `(2j, 2j + 1)`; contiguous leading dims are
    /// the highest frequencies.
    #[default]
    Interleaved,
    /// Pair `j` occupies dims `(j, j + d/2)` (rotate-half checkpoints).
    HalfSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    base: f64,
    head_dim: usize,
    layout: PairLayout,
}

impl RopeConfig {
    pub fn new(base: f64, head_dim: usize, layout: PairLayout) -> Result<Self> {
        if !(base > 1.0 && base.is_finite()) {
            return config_err(format!("RoPE base must be a finite value > 1, got {base}"));
        }
        if head_dim < 2 || head_dim % 2 != 0 {
            return config_err(format!("head_dim must be even and >= 2, got {head_dim}"));
        }
        Ok(Self {
            base,
            head_dim,
            layout,
        })
    }

    pub fn interleaved(base: f64, head_dim: usize) -> Result<Self> {
        Self::new(base, head_dim, PairLayout::Interleaved)
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn layout(&self) -> PairLayout {
        self.layout
    }

    pub fn pair_count(&self) -> usize {
        self.head_dim / 2
    }

    /// `θ_j = base^(-2j/d)` for `j in 0..d/2`.
    pub fn frequencies(&self) -> Vec<f64> {
        frequency_schedule(self.base, self.head_dim)
    }

    /// The two head-dimension indices carrying pair `j`.
    #[inline]
    pub fn pair_dims(&self, j: usize) -> (usize, usize) {
        debug_assert!(j < self.pair_count());
        match self.layout {
            PairLayout::Interleaved => (2 * j, 2 * j + 1),
            PairLayout::HalfSplit => (j, j + self.head_dim / 2),
        }
    }

    /// Inverse of [`pair_dims`](Self::pair_dims).
    pub fn pair_of_dim(&self, dim: usize) -> usize {
        match self.layout {
            PairLayout::Interleaved => dim / 2,
            PairLayout::HalfSplit => dim % (self.head_dim / 2),
        }
    }
}

/// Raw geometric schedule, without the `base > 1` requirement of
/// [`RopeConfig`].
pub fn frequency_schedule(base: f64, head_dim: usize) -> Vec<f64> {
    let d = head_dim as f64;
    (0..head_dim / 2)
        .map(|j| base.powf(-2.0 * j as f64 / d))
        .collect()
}

/// Rotates every frequency pair of row `i` by `positions[i] · θ_j`.
pub fn apply_rope(x: &Matrix, positions: &[i64], cfg: &RopeConfig) -> Result<Matrix> {
    if x.cols() != cfg.head_dim {
        return shape_err(format!(
            "input has {} columns, RoPE head_dim is {}",
            x.cols(),
            cfg.head_dim
        ));
    }
    if positions.len() != x.rows() {
        return shape_err(format!(
            "{} positions for {} rows",
            positions.len(),
            x.rows()
        ));
    }
    let freqs = cfg.frequencies();
    let mut out = x.clone();
    for (i, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(i);
        for (j, &theta) in freqs.iter().enumerate() {
            let (a, b) = cfg.pair_dims(j);
            let (sin, cos) = (pos as f64 * theta).sin_cos();
            let (xa, xb) = (row[a], row[b]);
            row[a] = xa * cos - xb * sin;
            row[b] = xa * sin + xb * cos;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandKind {
    High,
    Low,
    Full,
}

/// A frequency band: the `width/2` fastest pairs (`High`), the `width/2`
/// slowest (`Low`), or every pair (`Full`, width ignored).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    pub kind: BandKind,
    pub width: usize,
}

impl BandSpec {
    pub fn high(width: usize) -> Self {
        Self {
            kind: BandKind::High,
            width,
        }
    }

    pub fn low(width: usize) -> Self {
        Self {
            kind: BandKind::Low,
            width,
        }
    }

    pub fn full(head_dim: usize) -> Self {
        Self {
            kind: BandKind::Full,
            width: head_dim,
        }
    }
}

/// Sorted head-dimension indices belonging to `band` under `cfg`'s layout.
pub fn band_indices(cfg: &RopeConfig, band: BandSpec) -> Result<Vec<usize>> {
    let d = cfg.head_dim;
    let pairs = match band.kind {
        BandKind::Full => return Ok((0..d).collect()),
        _ if band.width == 0 || band.width > d || band.width % 2 != 0 => {
            return config_err(format!(
                "band width must be even and in (0, {d}], got {}",
                band.width
            ))
        }
        BandKind::High => 0..band.width / 2,
        BandKind::Low => cfg.pair_count() - band.width / 2..cfg.pair_count(),
    };
    let mut dims: Vec<usize> = pairs
        .flat_map(|j| {
            let (a, b) = cfg.pair_dims(j);
            [a, b]
        })
        .collect();
    dims.sort_unstable();
    Ok(dims)
}
