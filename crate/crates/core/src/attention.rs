//! Dense and block-sparse causal attention, the ground-truth block
//! importance they imply, and mask quality metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::estimator::{block_count, BlockMask};
use crate::numerics::{dot, Matrix, Real};

/// Post-RoPE queries and keys plus values, all `L × d`. Attention is
/// always causal.
#[derive(Clone, Debug)]
pub struct AttentionInputs<T: Real = f64> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Real> AttentionInputs<T> {
    pub fn new(q: Matrix<T>, k: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        if q.shape() != k.shape() || q.shape() != v.shape() {
            return shape_err(format!(
                "q {:?}, k {:?}, v {:?} must match",
                q.shape(),
                k.shape(),
                v.shape()
            ));
        }
        if q.rows() == 0 || q.cols() == 0 {
            return shape_err("attention inputs must be non-empty");
        }
        Ok(Self { q, k, v })
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.rows() == 0
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols()
    }

    pub fn cast<U: Real>(&self) -> AttentionInputs<U> {
        AttentionInputs {
            q: self.q.cast(),
            k: self.k.cast(),
            v: self.v.cast(),
        }
    }
}

/// Attention of one query over the keys in `ranges` (ascending, disjoint).
/// Writes the output row and leaves the probabilities in `probs`, aligned
/// with the concatenated ranges.
fn attend<T: Real>(
    inputs: &AttentionInputs<T>,
    i: usize,
    ranges: &[(usize, usize)],
    probs: &mut Vec<T>,
    out: &mut [T],
) {
    let scale = T::one() / T::from_f64_lossy(inputs.head_dim() as f64).sqrt();
    let qi = inputs.q.row(i);
    probs.clear();
    let mut max = T::neg_infinity();
    for &(a, b) in ranges {
        for j in a..b {
            let s = dot(qi, inputs.k.row(j)) * scale;
            max = max.max(s);
            probs.push(s);
        }
    }
    let mut sum = T::zero();
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum = sum + *p;
    }
    for p in probs.iter_mut() {
        *p = *p / sum;
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    let mut idx = 0;
    for &(a, b) in ranges {
        for j in a..b {
            let p = probs[idx];
            for (o, &x) in out.iter_mut().zip(inputs.v.row(j)) {
                *o = *o + p * x;
            }
            idx += 1;
        }
    }
}

/// Exact causal `softmax(q kᵀ/√d) v`.
pub fn dense_attention<T: Real>(inputs: &AttentionInputs<T>) -> Matrix<T> {
    let (l, d) = (inputs.len(), inputs.head_dim());
    let mut out = Matrix::zeros(l, d);
    out.as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .for_each_init(Vec::new, |probs, (i, row)| {
            attend(inputs, i, &[(0, i + 1)], probs, row)
        });
    out
}

/// Key ranges query token `i` may attend to under `mask`.
fn selected_ranges(mask: &BlockMask, block_size: usize, i: usize, out: &mut Vec<(usize, usize)>) {
    out.clear();
    let u = i / block_size;
    for v in 0..=u {
        if !mask.get(u, v) {
            continue;
        }
        let start = v * block_size;
        let end = if v == u { i + 1 } else { start + block_size };
        match out.last_mut() {
            Some(last) if last.1 == start => last.1 = end,
            _ => out.push((start, end)),
        }
    }
}

fn check_mask<T: Real>(
    inputs: &AttentionInputs<T>,
    mask: &BlockMask,
    block_size: usize,
) -> Result<()> {
    if block_size == 0 {
        return config_err("block size must be at least 1");
    }
    let n = block_count(inputs.len(), block_size);
    if mask.block_count() != n {
        return shape_err(format!(
            "mask has {} blocks, sequence of {} needs {n}",
            mask.block_count(),
            inputs.len()
        ));
    }
    Ok(())
}

/// Causal attention restricted to the selected blocks, renormalized over
/// the selected keys.
pub fn block_sparse_attention<T: Real>(
    inputs: &AttentionInputs<T>,
    mask: &BlockMask,
    block_size: usize,
) -> Result<Matrix<T>> {
    check_mask(inputs, mask, block_size)?;
    let (l, d) = (inputs.len(), inputs.head_dim());
    if let Some(u) = (0..mask.block_count()).find(|&u| !mask.bits().row(u).iter().any(|&b| b)) {
        return Err(Error::EmptyKeySet {
            token: u * block_size,
        });
    }
    let mut out = Matrix::zeros(l, d);
    out.as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .for_each_init(
            || (Vec::new(), Vec::new()),
            |(ranges, probs), (i, row)| {
                selected_ranges(mask, block_size, i, ranges);
                attend(inputs, i, ranges, probs, row);
            },
        );
    Ok(out)
}

/// Dense output plus ground-truth block importance, from a single pass of
/// dense attention.
#[derive(Clone, Debug)]
pub struct DenseReference<T: Real = f64> {
    pub output: Matrix<T>,
    /// `N × N`; entry `(u, v)` is the dense mass that query tokens of block
    /// `u` put on key block `v`, averaged over those tokens.
    pub importance: Matrix,
    pub block_size: usize,
}

impl<T: Real> DenseReference<T> {
    pub fn compute(inputs: &AttentionInputs<T>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return config_err("block size must be at least 1");
        }
        let (l, d) = (inputs.len(), inputs.head_dim());
        let n = block_count(l, block_size);
        let blocks: Vec<(Vec<T>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|u| {
                let start = u * block_size;
                let end = (start + block_size).min(l);
                let mut out = vec![T::zero(); (end - start) * d];
                let mut mass = vec![0.0; n];
                let mut probs = Vec::new();
                let mut token_mass = vec![0.0; n];
                for (t, i) in (start..end).enumerate() {
                    attend(
                        inputs,
                        i,
                        &[(0, i + 1)],
                        &mut probs,
                        &mut out[t * d..(t + 1) * d],
                    );
                    token_mass.iter_mut().for_each(|m| *m = 0.0);
                    for (j, p) in probs.iter().enumerate() {
                        token_mass[j / block_size] += p.to_f64().unwrap_or(f64::NAN);
                    }
                    for (m, t) in mass.iter_mut().zip(&token_mass) {
                        *m += t;
                    }
                }
                let count = (end - start) as f64;
                mass.iter_mut().for_each(|m| *m /= count);
                (out, mass)
            })
            .collect();
        let mut output = Vec::with_capacity(l * d);
        let mut importance = Vec::with_capacity(n * n);
        for (out, mass) in blocks {
            output.extend(out);
            importance.extend(mass);
        }
        Ok(Self {
            output: Matrix::from_vec(l, d, output)?,
            importance: Matrix::from_vec(n, n, importance)?,
            block_size,
        })
    }
}

/// `N × N` ground-truth block importance; each causal row sums to 1.
pub fn ground_truth_block_importance<T: Real>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    block_size: usize,
) -> Result<Matrix> {
    if q.shape() != k.shape() {
        return shape_err(format!("q {:?} vs k {:?}", q.shape(), k.shape()));
    }
    // values do not affect the attention weights
    let v = Matrix::zeros(q.rows(), q.cols());
    let inputs = AttentionInputs::new(q.clone(), k.clone(), v)?;
    Ok(DenseReference::compute(&inputs, block_size)?.importance)
}

/// Per query block: selected ground-truth mass over total mass.
pub fn per_row_recall(importance: &Matrix, mask: &BlockMask) -> Result<Vec<f64>> {
    region_recall_rows(importance, mask, |_, _| true)
}

fn region_recall_rows(
    importance: &Matrix,
    mask: &BlockMask,
    region: impl Fn(usize, usize) -> bool,
) -> Result<Vec<f64>> {
    let n = mask.block_count();
    if importance.shape() != (n, n) {
        return shape_err(format!(
            "importance {:?} vs {n}-block mask",
            importance.shape()
        ));
    }
    let mut out = Vec::with_capacity(n);
    for u in 0..n {
        let (mut hit, mut total) = (0.0, 0.0);
        for v in (0..=u).filter(|&v| region(u, v)) {
            let g = importance[(u, v)];
            total += g;
            if mask.get(u, v) {
                hit += g;
            }
        }
        if total > 0.0 {
            out.push(hit / total);
        }
    }
    Ok(out)
}

/// Recall restricted to the blocks where `region(u, v)` holds, averaged
/// over rows that have mass in the region.
pub fn region_recall(
    importance: &Matrix,
    mask: &BlockMask,
    region: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    let rows = region_recall_rows(importance, mask, region)?;
    if rows.is_empty() {
        return config_err("region holds no ground-truth mass");
    }
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Mask quality against dense attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub density: f64,
    pub recall_mass: f64,
    pub output_mae: f64,
    /// Largest per-row `max|sparse − dense| / max|dense|`.
    pub output_max_rel_err: f64,
    pub per_row_recall: Vec<f64>,
}

pub fn evaluate<T: Real>(
    mask: &BlockMask,
    inputs: &AttentionInputs<T>,
    block_size: usize,
) -> Result<EvalReport> {
    let reference = DenseReference::compute(inputs, block_size)?;
    evaluate_against(mask, inputs, &reference)
}

/// Like [`evaluate`] with a precomputed dense pass, for sweeps over many
/// masks of the same inputs.
pub fn evaluate_against<T: Real>(
    mask: &BlockMask,
    inputs: &AttentionInputs<T>,
    reference: &DenseReference<T>,
) -> Result<EvalReport> {
    let sparse = block_sparse_attention(inputs, mask, reference.block_size)?;
    let per_row_recall = per_row_recall(&reference.importance, mask)?;
    let recall_mass = per_row_recall.iter().sum::<f64>() / per_row_recall.len() as f64;

    let d = inputs.head_dim();
    let (mut abs_sum, mut max_rel) = (0.0, 0.0f64);
    for (s, r) in sparse.row_iter().zip(reference.output.row_iter()) {
        let (mut row_err, mut row_scale) = (0.0f64, 0.0f64);
        for (&a, &b) in s.iter().zip(r) {
            let (a, b) = (
                a.to_f64().unwrap_or(f64::NAN),
                b.to_f64().unwrap_or(f64::NAN),
            );
            let e = (a - b).abs();
            abs_sum += e;
            row_err = row_err.max(e);
            row_scale = row_scale.max(b.abs());
        }
        max_rel = max_rel.max(row_err / row_scale.max(f64::MIN_POSITIVE));
    }
    Ok(EvalReport {
        density: mask.density(),
        recall_mass,
        output_mae: abs_sum / (inputs.len() * d) as f64,
        output_max_rel_err: max_rel,
        per_row_recall,
    })
}

/// Multiply-add count of tiled attention (`q kᵀ` and `p v`, two FLOPs per
/// multiply-add) over the computed tiles. Tiles are whole `B × B` blocks,
/// clipped at the sequence end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopCount {
    pub dense: f64,
    pub sparse: f64,
}

impl FlopCount {
    pub fn ratio(&self) -> f64 {
        self.dense / self.sparse
    }
}

pub fn flop_count(
    mask: &BlockMask,
    len: usize,
    head_dim: usize,
    block_size: usize,
) -> Result<FlopCount> {
    if block_size == 0 {
        return config_err("block size must be at least 1");
    }
    if mask.block_count() != block_count(len, block_size) {
        return shape_err("mask does not match sequence length");
    }
    let span = |u: usize| ((u + 1) * block_size).min(len) - u * block_size;
    let tile = |u: usize, v: usize| 4.0 * (span(u) * span(v) * head_dim) as f64;
    let n = mask.block_count();
    let dense = (0..n)
        .flat_map(|u| (0..=u).map(move |v| (u, v)))
        .map(|(u, v)| tile(u, v))
        .sum();
    let sparse = mask.selected().map(|(u, v)| tile(u, v)).sum();
    Ok(FlopCount { dense, sparse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::BoolMatrix;
    use proptest::prelude::*;
    use rand_core::{RngCore, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(rows: usize, cols: usize, seed: u64, scale: f64) -> Matrix {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| {
            ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
        })
    }

    fn random_inputs(l: usize, d: usize, seed: u64) -> AttentionInputs {
        AttentionInputs::new(
            random(l, d, seed, 2.0),
            random(l, d, seed + 1, 2.0),
            random(l, d, seed + 2, 1.0),
        )
        .unwrap()
    }

    fn uniform_inputs(l: usize, d: usize) -> AttentionInputs {
        AttentionInputs::new(
            Matrix::zeros(l, d),
            random(l, d, 1, 1.0),
            random(l, d, 2, 1.0),
        )
        .unwrap()
    }

    /// Softmax over an explicit key list, computed directly.
    fn restricted_attention(inputs: &AttentionInputs, i: usize, keys: &[usize]) -> Vec<f64> {
        let d = inputs.head_dim();
        let logits: Vec<f64> = keys
            .iter()
            .map(|&j| {
                inputs
                    .q
                    .row(i)
                    .iter()
                    .zip(inputs.k.row(j))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / (d as f64).sqrt()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = w.iter().sum();
        (0..d)
            .map(|c| {
                keys.iter()
                    .zip(&w)
                    .map(|(&j, wj)| wj / z * inputs.v[(j, c)])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dense_examples() {
        let one = AttentionInputs::new(
            Matrix::from_rows(&[[0.3, 0.1]]).unwrap(),
            Matrix::from_rows(&[[-1.0, 2.0]]).unwrap(),
            Matrix::from_rows(&[[5.0, -7.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(dense_attention(&one).as_slice(), &[5.0, -7.0]);

        let u = uniform_inputs(6, 4);
        let out = dense_attention(&u);
        for n in 0..6 {
            for c in 0..4 {
                let mean = (0..=n).map(|j| u.v[(j, c)]).sum::<f64>() / (n + 1) as f64;
                assert!((out[(n, c)] - mean).abs() < 1e-14);
            }
        }

        let eye = Matrix::<f64>::identity(2);
        let hand = AttentionInputs::new(eye.clone(), eye.clone(), eye).unwrap();
        let out = dense_attention(&hand);
        let a = (1.0f64 / 2f64.sqrt()).exp();
        let w = [1.0 / (1.0 + a), a / (1.0 + a)];
        assert!((out[(1, 0)] - w[0]).abs() < 1e-15 && (out[(1, 1)] - w[1]).abs() < 1e-15);
        assert!((out[(1, 0)] - 0.3302).abs() < 1e-4 && (out[(1, 1)] - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::<f64>::zeros(4, 2);
        assert!(AttentionInputs::new(a.clone(), a.clone(), Matrix::zeros(4, 3)).is_err());
        assert!(AttentionInputs::new(
            Matrix::<f64>::zeros(0, 2),
            Matrix::zeros(0, 2),
            Matrix::zeros(0, 2)
        )
        .is_err());
        let inputs = random_inputs(10, 2, 0);
        assert!(block_sparse_attention(&inputs, &BlockMask::full_causal(2), 4).is_err());
        assert!(ground_truth_block_importance(&a, &Matrix::zeros(3, 2), 2).is_err());
    }

    #[test]
    fn full_mask_matches_dense() {
        for (l, b) in [(256, 32), (301, 64), (77, 7)] {
            let inputs = random_inputs(l, 16, l as u64);
            let n = block_count(l, b);
            let sparse = block_sparse_attention(&inputs, &BlockMask::full_causal(n), b).unwrap();
            assert!(sparse.max_abs_diff(&dense_attention(&inputs)).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn f32_path_tracks_f64() {
        let inputs = random_inputs(256, 32, 9);
        let n = block_count(256, 32);
        let narrow = inputs.cast::<f32>();
        let sparse = block_sparse_attention(&narrow, &BlockMask::full_causal(n), 32).unwrap();
        let dense = dense_attention(&inputs);
        let diff = sparse.cast::<f64>().max_abs_diff(&dense).unwrap();
        assert!(diff <= 1e-4, "{diff}");
    }

    #[test]
    fn diagonal_mask_is_local_attention() {
        let (l, b) = (100, 16);
        let inputs = random_inputs(l, 8, 3);
        let out =
            block_sparse_attention(&inputs, &BlockMask::diagonal(block_count(l, b)), b).unwrap();
        for i in 0..l {
            let keys: Vec<usize> = ((i / b) * b..=i).collect();
            let want = restricted_attention(&inputs, i, &keys);
            for (c, w) in want.iter().enumerate() {
                assert!((out[(i, c)] - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_argmax_block_renormalizes() {
        // three blocks of two tokens; the strongest key for the last block
        // sits in block 0, which the mask drops
        let (l, b) = (6, 2);
        let mut k = Matrix::zeros(l, 2);
        k[(1, 0)] = 4.0;
        let q = Matrix::from_fn(l, 2, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let v = Matrix::from_fn(l, 2, |i, c| (i * 2 + c) as f64);
        let inputs = AttentionInputs::new(q, k, v).unwrap();
        let bits = BoolMatrix::from_fn(3, 3, |u, v| v <= u && !(u == 2 && v == 0));
        let mask = BlockMask::from_bits(bits).unwrap();
        let out = block_sparse_attention(&inputs, &mask, b).unwrap();
        let dense = dense_attention(&inputs);
        for i in 4..6 {
            let keys: Vec<usize> = (2..=i).collect();
            let want = restricted_attention(&inputs, i, &keys);
            for c in 0..2 {
                assert!((out[(i, c)] - want[c]).abs() < 1e-12);
            }
            assert!((out[(i, 0)] - dense[(i, 0)]).abs() > 0.1);
        }
        for i in 0..4 {
            for c in 0..2 {
                assert!((out[(i, c)] - dense[(i, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_row_is_an_error() {
        let inputs = random_inputs(8, 2, 4);
        let mask =
            BlockMask::from_bits(BoolMatrix::from_fn(2, 2, |u, v| u == 0 && v == 0)).unwrap();
        assert!(matches!(
            block_sparse_attention(&inputs, &mask, 4),
            Err(Error::EmptyKeySet { token: 4 })
        ));
    }

    #[test]
    fn ground_truth_examples() {
        let inputs = random_inputs(5, 4, 5);
        let g = ground_truth_block_importance(&inputs.q, &inputs.k, 8).unwrap();
        assert_eq!(g.as_slice(), &[1.0]);

        // uniform attention, L = 4B: token i spreads 1/(i+1) over keys 0..=i
        let b = 8;
        let u = uniform_inputs(4 * b, 4);
        let g = ground_truth_block_importance(&u.q, &u.k, b).unwrap();
        for row in 0..4 {
            for col in 0..=row {
                let mut want = 0.0;
                for i in row * b..(row + 1) * b {
                    let hits = (col * b..(col + 1) * b).filter(|&j| j <= i).count();
                    want += hits as f64 / (i + 1) as f64;
                }
                want /= b as f64;
                assert!((g[(row, col)] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn importance_rows_sum_to_one() {
        let inputs = random_inputs(200, 8, 6);
        let g = ground_truth_block_importance(&inputs.q, &inputs.k, 16).unwrap();
        for u in 0..g.rows() {
            let s: f64 = g.row(u).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(g.row(u)[u + 1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn evaluate_examples() {
        let inputs = random_inputs(96, 8, 7);
        let r = evaluate(&BlockMask::full_causal(6), &inputs, 16).unwrap();
        assert_eq!(r.density, 1.0);
        assert_eq!(r.recall_mass, 1.0);
        assert!(r.output_mae <= 1e-10);

        // the block-mean recall of a diagonal mask under uniform attention
        let u = uniform_inputs(4, 2);
        let r = evaluate(&BlockMask::diagonal(4), &u, 1).unwrap();
        let want = (1.0 + 0.5 + 1.0 / 3.0 + 0.25) / 4.0;
        assert!((r.recall_mass - want).abs() < 1e-12);
        assert!((r.recall_mass - 0.5208).abs() < 1e-4);
        assert_eq!(r.per_row_recall.len(), 4);

        let json = serde_json::to_value(&r).unwrap();
        for key in ["density", "recall_mass", "output_mae", "output_max_rel_err"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn region_recall_counts_only_the_region() {
        let u = uniform_inputs(4, 2);
        let g = ground_truth_block_importance(&u.q, &u.k, 1).unwrap();
        let diag = BlockMask::diagonal(4);
        assert_eq!(region_recall(&g, &diag, |a, b| a == b).unwrap(), 1.0);
        assert_eq!(region_recall(&g, &diag, |a, b| a == b + 1).unwrap(), 0.0);
        assert!(region_recall(&g, &diag, |_, _| false).is_err());
    }

    #[test]
    fn flop_ratio_is_inverse_density() {
        let bits = BoolMatrix::from_fn(8, 8, |u, v| v == u || v == 0);
        let mask = BlockMask::from_bits(bits).unwrap();
        let f = flop_count(&mask, 8 * 16, 32, 16).unwrap();
        assert!((f.ratio() - 1.0 / mask.density()).abs() < 1e-12);
        let f = flop_count(&mask, 7 * 16 + 3, 32, 16).unwrap();
        assert!(f.ratio() > 1.0 && f.sparse < f.dense);
        assert!(flop_count(&mask, 40, 32, 16).is_err());
    }

    fn arb_mask(n: usize, bits: &[bool]) -> BlockMask {
        BlockMask::from_bits(BoolMatrix::from_fn(n, n, |u, v| v <= u && bits[u * n + v]))
            .unwrap()
            .with_diagonal()
    }

    proptest! {
        #[test]
        fn outputs_lie_in_value_envelope(
            seed in 0u64..500,
            l in 1usize..60,
            b in 1usize..12,
            bits in proptest::collection::vec(any::<bool>(), 3600),
        ) {
            let inputs = random_inputs(l, 4, seed);
            let n = block_count(l, b);
            let mask = arb_mask(n, &bits[..n * n]);
            let sparse = block_sparse_attention(&inputs, &mask, b).unwrap();
            let dense = dense_attention(&inputs);
            for i in 0..l {
                let mut ranges = Vec::new();
                selected_ranges(&mask, b, i, &mut ranges);
                for c in 0..4 {
                    let attended = ranges.iter().flat_map(|&(s, e)| s..e).map(|j| inputs.v[(j, c)]);
                    let (lo, hi) = attended.fold((f64::MAX, f64::MIN), |(lo, hi), x| (lo.min(x), hi.max(x)));
                    prop_assert!(sparse[(i, c)] >= lo - 1e-12 && sparse[(i, c)] <= hi + 1e-12);
                    let all = (0..=i).map(|j| inputs.v[(j, c)]);
                    let (lo, hi) = all.fold((f64::MAX, f64::MIN), |(lo, hi), x| (lo.min(x), hi.max(x)));
                    prop_assert!(dense[(i, c)] >= lo - 1e-12 && dense[(i, c)] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn recall_is_monotone_under_superset(
            seed in 0u64..500,
            l in 2usize..80,
            b in 1usize..10,
            bits in proptest::collection::vec(any::<bool>(), 6400),
            extra in proptest::collection::vec(any::<bool>(), 6400),
        ) {
            let inputs = random_inputs(l, 4, seed);
            let n = block_count(l, b);
            let g = ground_truth_block_importance(&inputs.q, &inputs.k, b).unwrap();
            let small = arb_mask(n, &bits[..n * n]);
            let big = small.union(&arb_mask(n, &extra[..n * n])).unwrap();
            let rs = per_row_recall(&g, &small).unwrap();
            let rb = per_row_recall(&g, &big).unwrap();
            prop_assert!(rs.iter().zip(&rb).all(|(a, b)| a <= b));
            let full = per_row_recall(&g, &BlockMask::full_causal(n)).unwrap();
            prop_assert!(full.iter().all(|&r| r == 1.0));
        }
    }
}
