//! Sweeps shared by the `sweep` and `bench` commands and the acceptance
//! suite: density/recall frontiers over top-p, band-mode ablations,
//! block-size comparisons and estimation timing.

use std::time::Instant;

use prism_core::attention::{
    flop_count, ground_truth_block_importance, per_row_recall, region_recall, AttentionInputs,
};
use prism_core::estimator::{prism_estimate, BandMode, BlockMask, EstimatorConfig};
use prism_core::rope::RopeConfig;
use prism_core::synth::{generate, Pattern, WorkloadSpec};
use prism_core::{Matrix, Result};
use serde::Serialize;

pub const P_GRID: [f64; 14] = [
    0.3, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.93, 0.95, 0.97, 0.98, 0.99, 0.995, 0.999,
];

/// Blocks at most two steps below the diagonal: where slash patterns put
/// their mass.
pub fn near_diagonal(u: usize, v: usize) -> bool {
    u >= v && u - v <= 2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub p: f64,
    pub density: f64,
    pub recall: f64,
}

pub fn mean_recall(importance: &Matrix, mask: &BlockMask) -> Result<f64> {
    let rows = per_row_recall(importance, mask)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Density and recall of one estimator configuration at each `p`.
pub fn frontier(
    inputs: &AttentionInputs,
    rope: &RopeConfig,
    importance: &Matrix,
    cfg: &EstimatorConfig,
    p_grid: &[f64],
) -> Result<Vec<FrontierPoint>> {
    p_grid
        .iter()
        .map(|&p| {
            let mask = prism_estimate(
                &inputs.q,
                &inputs.k,
                &EstimatorConfig { top_p: p, ..*cfg },
                rope,
            )?;
            Ok(FrontierPoint {
                p,
                density: mask.density(),
                recall: mean_recall(importance, &mask)?,
            })
        })
        .collect()
}

/// Best recall the frontier reaches at `density`, interpolating linearly
/// between its upper-envelope points and clamping at the ends.
pub fn recall_at_density(points: &[FrontierPoint], density: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.density, p.recall)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut env: Vec<(f64, f64)> = Vec::new();
    for (d, r) in pts {
        let best = env.last().map_or(r, |&(_, prev)| r.max(prev));
        match env.last_mut() {
            Some(last) if last.0 == d => last.1 = best,
            _ => env.push((d, best)),
        }
    }
    let Some(&(d0, r0)) = env.first() else {
        return f64::NAN;
    };
    if density <= d0 {
        return r0;
    }
    for w in env.windows(2) {
        let ((da, ra), (db, rb)) = (w[0], w[1]);
        if density <= db {
            return ra + (rb - ra) * (density - da) / (db - da);
        }
    }
    env.last().unwrap().1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub band_mode: &'static str,
    pub calibration: bool,
    pub p: f64,
    pub density: f64,
    pub recall: f64,
    pub near_diagonal_recall: f64,
}

/// Every band mode, with and without calibration, over `p_grid`.
pub fn ablation_sweep(
    inputs: &AttentionInputs,
    rope: &RopeConfig,
    base: &EstimatorConfig,
    p_grid: &[f64],
) -> Result<Vec<AblationRow>> {
    let importance = ground_truth_block_importance(&inputs.q, &inputs.k, base.block_size)?;
    let mut rows = Vec::new();
    for band_mode in BandMode::ALL {
        for calibration in [true, false] {
            for &p in p_grid {
                let cfg = EstimatorConfig {
                    band_mode,
                    calibration,
                    top_p: p,
                    ..*base
                };
                let mask = prism_estimate(&inputs.q, &inputs.k, &cfg, rope)?;
                rows.push(AblationRow {
                    band_mode: band_mode.as_str(),
                    calibration,
                    p,
                    density: mask.density(),
                    recall: mean_recall(&importance, &mask)?,
                    near_diagonal_recall: region_recall(&importance, &mask, near_diagonal)?,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockSizeRow {
    pub block_size: usize,
    pub p: f64,
    pub density: f64,
    pub recall: f64,
}

pub fn block_size_sweep(
    inputs: &AttentionInputs,
    rope: &RopeConfig,
    base: &EstimatorConfig,
    sizes: &[usize],
    p_grid: &[f64],
) -> Result<Vec<BlockSizeRow>> {
    let mut rows = Vec::new();
    for &block_size in sizes {
        let importance = ground_truth_block_importance(&inputs.q, &inputs.k, block_size)?;
        let cfg = EstimatorConfig {
            block_size,
            ..*base
        };
        for pt in frontier(inputs, rope, &importance, &cfg, p_grid)? {
            rows.push(BlockSizeRow {
                block_size,
                p: pt.p,
                density: pt.density,
                recall: pt.recall,
            });
        }
    }
    Ok(rows)
}

/// Recall at a common density for each block size in `rows`.
pub fn recall_by_block_size(rows: &[BlockSizeRow], density: f64) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.block_size).collect();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|b| {
            let pts: Vec<FrontierPoint> = rows
                .iter()
                .filter(|r| r.block_size == b)
                .map(|r| FrontierPoint {
                    p: r.p,
                    density: r.density,
                    recall: r.recall,
                })
                .collect();
            (b, recall_at_density(&pts, density))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub length: usize,
    pub block_size: usize,
    /// Fastest of the repeats.
    pub estimate_seconds: f64,
    pub density: f64,
    pub flop_ratio: f64,
}

/// Times mask estimation on the mixed workload at each length.
pub fn bench(
    lengths: &[usize],
    repeats: usize,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &length in lengths {
        let spec = WorkloadSpec::new(Pattern::Mixed, length, seed);
        let rope = spec.rope()?;
        let inputs = generate(&spec)?;
        let mut best = f64::INFINITY;
        let mut mask = None;
        for _ in 0..repeats {
            let start = Instant::now();
            let m = prism_estimate(&inputs.q, &inputs.k, cfg, &rope)?;
            best = best.min(start.elapsed().as_secs_f64());
            mask = Some(m);
        }
        let Some(mask) = mask else { continue };
        let flops = flop_count(&mask, length, spec.head_dim, cfg.block_size)?;
        rows.push(BenchRow {
            length,
            block_size: cfg.block_size,
            estimate_seconds: best,
            density: mask.density(),
            flop_ratio: flops.ratio(),
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(density: f64, recall: f64) -> FrontierPoint {
        FrontierPoint {
            p: 0.0,
            density,
            recall,
        }
    }

    #[test]
    fn interpolation_on_the_envelope() {
        let pts = [
            pt(0.1, 0.5),
            pt(0.3, 0.9),
            pt(0.2, 0.6),
            pt(0.2, 0.8),
            pt(0.5, 0.85),
        ];
        assert_eq!(recall_at_density(&pts, 0.05), 0.5);
        assert!((recall_at_density(&pts, 0.15) - 0.65).abs() < 1e-12);
        assert!((recall_at_density(&pts, 0.25) - 0.85).abs() < 1e-12);
        // the dip at 0.5 does not pull the envelope down
        assert!((recall_at_density(&pts, 0.4) - 0.9).abs() < 1e-12);
        assert_eq!(recall_at_density(&pts, 0.9), 0.9);
        assert!(recall_at_density(&[], 0.5).is_nan());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn near_diagonal_region() {
        assert!(near_diagonal(5, 5) && near_diagonal(5, 3));
        assert!(!near_diagonal(5, 2) && !near_diagonal(2, 5));
    }
}
