//! Block importance estimation from pooled projections.
//!
//! The dual-band estimator pools `q` and `k` per block, scores the
//! high-frequency and low-frequency slices of the pooled vectors in
//! separate softmax branches, runs top-p selection in each branch and takes
//! the union of the two masks. Each branch divides its logits by a
//! temperature derived from pooled RMS energy so that an attenuated band
//! regains the logit scale of the full spectrum.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::numerics::{matmul_nt, rms, softmax_rows, BoolMatrix, Matrix};
use crate::rope::{band_indices, BandKind, BandSpec, RopeConfig};

/// Lower bound on a calibrated temperature. An all-zero band then yields a
/// flat branch instead of a division by zero.
pub const TAU_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandMode {
    #[default]
    Dual,
    HighOnly,
    LowOnly,
    FullSpectrum,
}

impl BandMode {
    pub const ALL: [BandMode; 4] = [
        BandMode::Dual,
        BandMode::HighOnly,
        BandMode::LowOnly,
        BandMode::FullSpectrum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BandMode::Dual => "dual",
            BandMode::HighOnly => "high",
            BandMode::LowOnly => "low",
            BandMode::FullSpectrum => "full",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub block_size: usize,
    pub d_high: usize,
    pub d_low: usize,
    pub top_p: f64,
    pub calibration: bool,
    pub band_mode: BandMode,
    /// Select every diagonal block after top-p, so that each query block
    /// has at least its own keys.
    pub force_diagonal: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            block_size: 128,
            d_high: 64,
            d_low: 96,
            top_p: 0.95,
            calibration: true,
            band_mode: BandMode::Dual,
            force_diagonal: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, head_dim: usize) -> Result<()> {
        if self.block_size == 0 {
            return config_err("block size must be at least 1");
        }
        for (name, w) in [("d_high", self.d_high), ("d_low", self.d_low)] {
            if w == 0 || w % 2 != 0 || w > head_dim {
                return config_err(format!(
                    "{name} must be even and in (0, {head_dim}], got {w}"
                ));
            }
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return config_err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        Ok(())
    }

    fn bands(&self, head_dim: usize) -> Vec<BandSpec> {
        match self.band_mode {
            BandMode::Dual => vec![BandSpec::high(self.d_high), BandSpec::low(self.d_low)],
            BandMode::HighOnly => vec![BandSpec::high(self.d_high)],
            BandMode::LowOnly => vec![BandSpec::low(self.d_low)],
            BandMode::FullSpectrum => vec![BandSpec::full(head_dim)],
        }
    }
}

pub fn block_count(len: usize, block_size: usize) -> usize {
    len.div_ceil(block_size)
}

/// Mean of each run of `block_size` rows. The last block averages over
/// however many rows it actually has.
pub fn block_mean_pool(x: &Matrix, block_size: usize) -> Result<Matrix> {
    if block_size == 0 {
        return config_err("block size must be at least 1");
    }
    if x.rows() == 0 {
        return shape_err("cannot pool an empty sequence");
    }
    let n = block_count(x.rows(), block_size);
    let mut out = Matrix::zeros(n, x.cols());
    for u in 0..n {
        let start = u * block_size;
        let end = (start + block_size).min(x.rows());
        let acc = out.row_mut(u);
        for i in start..end {
            for (a, &v) in acc.iter_mut().zip(x.row(i)) {
                *a += v;
            }
        }
        let len = (end - start) as f64;
        for a in acc.iter_mut() {
            *a /= len;
        }
    }
    Ok(out)
}

/// Block-pooled queries and keys.
#[derive(Clone, Debug)]
pub struct PooledProjections {
    pub q_pooled: Matrix,
    pub k_pooled: Matrix,
    pub block_size: usize,
    pub block_count: usize,
    pub last_block_len: usize,
}

impl PooledProjections {
    pub fn new(q: &Matrix, k: &Matrix, block_size: usize) -> Result<Self> {
        if q.shape() != k.shape() {
            return shape_err(format!("q {:?} vs k {:?}", q.shape(), k.shape()));
        }
        let q_pooled = block_mean_pool(q, block_size)?;
        let k_pooled = block_mean_pool(k, block_size)?;
        let block_count = q_pooled.rows();
        Ok(Self {
            q_pooled,
            k_pooled,
            block_size,
            block_count,
            last_block_len: q.rows() - (block_count - 1) * block_size,
        })
    }
}

/// `sqrt(d_band/d) · RMS(q_band)/RMS(q_full) · RMS(k_band)/RMS(k_full)`,
/// floored at [`TAU_FLOOR`].
pub fn calibration_temperature(
    q_band: &Matrix,
    k_band: &Matrix,
    q_full: &Matrix,
    k_full: &Matrix,
    d_band: usize,
    d: usize,
) -> Result<f64> {
    let n = q_full.rows();
    if [q_band.rows(), k_band.rows(), k_full.rows()]
        .iter()
        .any(|&r| r != n)
    {
        return shape_err("band and full-spectrum matrices must share the same blocking");
    }
    if d == 0 || d_band == 0 || d_band > d {
        return config_err(format!("band width {d_band} invalid for head_dim {d}"));
    }
    let (rq, rk) = (rms(q_full)?, rms(k_full)?);
    if rq == 0.0 || rk == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let tau = (d_band as f64 / d as f64).sqrt() * (rms(q_band)? / rq) * (rms(k_band)? / rk);
    Ok(tau.max(TAU_FLOOR))
}

/// Block-causal `softmax(q_band · k_bandᵀ / (τ·sqrt(d_band)))`.
pub fn coarse_scores(q_band: &Matrix, k_band: &Matrix, tau: f64, d_band: usize) -> Result<Matrix> {
    if tau.is_nan() || tau <= 0.0 {
        return config_err(format!("temperature must be positive, got {tau}"));
    }
    if q_band.rows() != k_band.rows() {
        return shape_err(format!(
            "{} query blocks vs {} key blocks",
            q_band.rows(),
            k_band.rows()
        ));
    }
    let denom = tau * (d_band as f64).sqrt();
    let mut logits = matmul_nt(q_band, k_band)?;
    for v in logits.as_mut_slice() {
        *v /= denom;
    }
    softmax_rows(&logits, Some(&BoolMatrix::lower_triangular(q_band.rows())))
}

/// N×N block selection. Always causal: no bit above the diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockMask {
    bits: BoolMatrix,
}

impl BlockMask {
    pub fn from_bits(bits: BoolMatrix) -> Result<Self> {
        if bits.rows() != bits.cols() {
            return shape_err(format!("block mask must be square, got {:?}", bits.shape()));
        }
        for u in 0..bits.rows() {
            if let Some(v) = (u + 1..bits.cols()).find(|&v| bits.get(u, v)) {
                return shape_err(format!("block mask selects future block ({u}, {v})"));
            }
        }
        Ok(Self { bits })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            bits: BoolMatrix::new(n, n, false),
        }
    }

    pub fn full_causal(n: usize) -> Self {
        Self {
            bits: BoolMatrix::lower_triangular(n),
        }
    }

    pub fn diagonal(n: usize) -> Self {
        Self {
            bits: BoolMatrix::from_fn(n, n, |u, v| u == v),
        }
    }

    pub fn block_count(&self) -> usize {
        self.bits.rows()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits.get(u, v)
    }

    pub fn bits(&self) -> &BoolMatrix {
        &self.bits
    }

    pub fn selected_count(&self) -> usize {
        self.bits.count_true()
    }

    pub fn causal_block_count(&self) -> usize {
        let n = self.block_count();
        n * (n + 1) / 2
    }

    /// Selected causal blocks over all causal blocks.
    pub fn density(&self) -> f64 {
        self.selected_count() as f64 / self.causal_block_count() as f64
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.block_count() != other.block_count() {
            return shape_err(format!(
                "union of {} and {} block masks",
                self.block_count(),
                other.block_count()
            ));
        }
        let n = self.block_count();
        Ok(Self {
            bits: BoolMatrix::from_fn(n, n, |u, v| self.get(u, v) || other.get(u, v)),
        })
    }

    pub fn with_diagonal(mut self) -> Self {
        for u in 0..self.block_count() {
            self.bits.set(u, u, true);
        }
        self
    }

    pub fn is_superset_of(&self, other: &Self) -> bool {
        self.block_count() == other.block_count()
            && self
                .bits
                .as_slice()
                .iter()
                .zip(other.bits.as_slice())
                .all(|(&a, &b)| a || !b)
    }

    pub fn rows_nonempty(&self) -> bool {
        (0..self.block_count()).all(|u| self.bits.row(u).iter().any(|&b| b))
    }

    /// Selected `(query_block, key_block)` pairs in row-major order.
    pub fn selected(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.block_count();
        (0..n).flat_map(move |u| {
            (0..=u)
                .filter(move |&v| self.get(u, v))
                .map(move |v| (u, v))
        })
    }

    /// Columns `u,v`, one row per selected block.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| std::io::Error::other(e);
        out.write_record(["u", "v"]).map_err(csv_err)?;
        for (u, v) in self.selected() {
            out.write_record([u.to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per row: sort key blocks by descending probability (stable, so ties go
/// to the lower index), then keep block `v` when the mass strictly before
/// it is below `p`. Zero-probability blocks are never kept, and neither is
/// anything above the diagonal.
pub fn top_p_mask(scores: &Matrix, p: f64) -> Result<BlockMask> {
    let n = scores.rows();
    if scores.cols() != n {
        return shape_err(format!("scores must be square, got {:?}", scores.shape()));
    }
    let mut mask = BlockMask::empty(n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for u in 0..n {
        let row = scores.row(u);
        order.clear();
        order.extend(0..=u);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let mut before = 0.0;
        for &v in &order {
            let prob = row[v];
            if before >= p || prob <= 0.0 {
                break;
            }
            mask.bits.set(u, v, true);
            before += prob;
        }
    }
    Ok(mask)
}

/// One spectral branch: its band, temperature, block probabilities and
/// top-p selection.
#[derive(Clone, Debug)]
pub struct Branch {
    pub band: BandSpec,
    pub tau: f64,
    pub probs: Matrix,
    pub mask: BlockMask,
}

/// Final mask plus the per-branch intermediates that produced it.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub mask: BlockMask,
    pub branches: Vec<Branch>,
}

impl Estimate {
    pub fn branch(&self, kind: BandKind) -> Option<&Branch> {
        self.branches.iter().find(|b| b.band.kind == kind)
    }
}

/// Runs the full pipeline and keeps the intermediates.
pub fn estimate(
    q: &Matrix,
    k: &Matrix,
    cfg: &EstimatorConfig,
    rope: &RopeConfig,
) -> Result<Estimate> {
    let d = q.cols();
    if d != rope.head_dim() {
        return shape_err(format!(
            "projections have {d} columns, RoPE head_dim is {}",
            rope.head_dim()
        ));
    }
    cfg.validate(d)?;
    let pooled = PooledProjections::new(q, k, cfg.block_size)?;
    let n = pooled.block_count;

    let mut mask = BlockMask::empty(n);
    let mut branches = Vec::new();
    for band in cfg.bands(d) {
        let dims = band_indices(rope, band)?;
        let qz = pooled.q_pooled.select_cols(&dims)?;
        let kz = pooled.k_pooled.select_cols(&dims)?;
        let tau = if cfg.calibration {
            calibration_temperature(&qz, &kz, &pooled.q_pooled, &pooled.k_pooled, dims.len(), d)?
        } else {
            1.0
        };
        let probs = coarse_scores(&qz, &kz, tau, dims.len())?;
        let branch_mask = top_p_mask(&probs, cfg.top_p)?;
        mask = mask.union(&branch_mask)?;
        branches.push(Branch {
            band,
            tau,
            probs,
            mask: branch_mask,
        });
    }
    if cfg.force_diagonal {
        mask = mask.with_diagonal();
    }
    Ok(Estimate { mask, branches })
}

/// Spectral-aware block mask for post-RoPE `q` and `k`.
pub fn prism_estimate(
    q: &Matrix,
    k: &Matrix,
    cfg: &EstimatorConfig,
    rope: &RopeConfig,
) -> Result<BlockMask> {
    estimate(q, k, cfg, rope).map(|e| e.mask)
}

/// The conventional single-branch coarse estimator: every dimension,
/// temperature 1.
pub fn full_spectrum_estimate(q: &Matrix, k: &Matrix, cfg: &EstimatorConfig) -> Result<BlockMask> {
    if q.cols() != k.cols() {
        return shape_err(format!("q has {} columns, k has {}", q.cols(), k.cols()));
    }
    cfg.validate(q.cols())?;
    let pooled = PooledProjections::new(q, k, cfg.block_size)?;
    let probs = coarse_scores(&pooled.q_pooled, &pooled.k_pooled, 1.0, q.cols())?;
    let mask = top_p_mask(&probs, cfg.top_p)?;
    Ok(if cfg.force_diagonal {
        mask.with_diagonal()
    } else {
        mask
    })
}
