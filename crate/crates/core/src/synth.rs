//! Seeded synthetic workloads that plant slash, vertical and block-sparse
//! attention structure, plus the pooled-energy report per spectral zone.
//!
//! Pre-rotation content is held constant over segments of `stationarity`
//! tokens and then rotated at each token's position. Components:
//!
//! - slash: every query carries `c` and every key carries `c` rotated by
//!   `slash_offset` positions, so scores peak where `n − m = slash_offset`.
//!   `c` lives in the fastest pairs.
//! - vertical: every query carries `w`; keys in the first segment carry a
//!   scaled `w`. `w` lives in the slowest quarter of the pairs.
//! - block: each `cluster_span`-token segment draws one of `clusters`
//!   vectors, added to both queries and keys. Clusters live in the slower
//!   half of the pairs.
//! - noise: independent per segment for queries and keys, all dims.
//!
//! Each planted vector has unit RMS over its support. Random numbers come
//! from xoshiro256++ seeded through SplitMix64 (`seed_from_u64`); uniforms
//! take the top 53 bits, normals use Box–Muller.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionInputs;
use crate::error::{config_err, Result};
use crate::estimator::block_mean_pool;
use crate::numerics::{rms, Matrix};
use crate::rope::{apply_rope, PairLayout, RopeConfig};
use crate::spectral::{AttenuationProfile, Zone};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Slash,
    Vertical,
    Block,
    Mixed,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::Slash,
        Pattern::Vertical,
        Pattern::Block,
        Pattern::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Slash => "slash",
            Pattern::Vertical => "vertical",
            Pattern::Block => "block",
            Pattern::Mixed => "mixed",
        }
    }
}

/// Component weights and shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub slash: f64,
    pub vertical: f64,
    pub block: f64,
    pub noise: f64,
    /// Extra gain on the vertical component of sink keys.
    pub sink_gain: f64,
    pub slash_offset: i64,
    /// Share of the pairs, fastest first, that carry the slash vector.
    pub slash_pair_fraction: f64,
    pub clusters: usize,
    pub cluster_span: usize,
}

impl Default for Mixture {
    fn default() -> Self {
        Self {
            slash: 1.9,
            vertical: 0.9,
            block: 1.15,
            noise: 0.25,
            sink_gain: 1.4,
            slash_offset: 128,
            slash_pair_fraction: 0.34,
            clusters: 8,
            cluster_span: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    pub length: usize,
    pub head_dim: usize,
    pub base: f64,
    pub layout: PairLayout,
    pub seed: u64,
    /// Tokens over which pre-rotation content stays constant.
    pub stationarity: usize,
    pub mixture: Mixture,
}

impl WorkloadSpec {
    pub fn new(pattern: Pattern, length: usize, seed: u64) -> Self {
        Self {
            pattern,
            length,
            head_dim: 128,
            base: 1e6,
            layout: PairLayout::Interleaved,
            seed,
            stationarity: 128,
            mixture: Mixture::default(),
        }
    }

    pub fn rope(&self) -> Result<RopeConfig> {
        RopeConfig::new(self.base, self.head_dim, self.layout)
    }

    pub fn validate(&self) -> Result<()> {
        self.rope()?;
        if self.length == 0 {
            return config_err("length must be at least 1");
        }
        if self.stationarity == 0 || self.mixture.cluster_span == 0 {
            return config_err("stationarity and cluster span must be at least 1");
        }
        if self.mixture.clusters == 0 {
            return config_err("need at least one cluster");
        }
        let m = &self.mixture;
        if ![m.slash, m.vertical, m.block, m.noise, m.sink_gain]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            return config_err("mixture weights must be finite and non-negative");
        }
        if !(m.slash_pair_fraction > 0.0 && m.slash_pair_fraction <= 1.0) {
            return config_err("slash pair fraction must be in (0, 1]");
        }
        Ok(())
    }
}

/// xoshiro256++ with uniform and normal draws.
pub struct Rng {
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

/// Normal vector on `dims`, zero elsewhere, scaled to unit RMS over `dims`.
fn planted(rng: &mut Rng, d: usize, dims: &[usize]) -> Vec<f64> {
    let mut x = vec![0.0; d];
    for &i in dims {
        x[i] = rng.normal();
    }
    let ss: f64 = dims.iter().map(|&i| x[i] * x[i]).sum();
    let scale = if ss > 0.0 {
        (dims.len() as f64 / ss).sqrt()
    } else {
        0.0
    };
    x.iter_mut().for_each(|v| *v *= scale);
    x
}

fn pair_dims(rope: &RopeConfig, pairs: std::ops::Range<usize>) -> Vec<usize> {
    pairs
        .flat_map(|j| {
            let (a, b) = rope.pair_dims(j);
            [a, b]
        })
        .collect()
}

fn add_scaled(row: &mut [f64], x: &[f64], w: f64) {
    for (r, &v) in row.iter_mut().zip(x) {
        *r += w * v;
    }
}

/// Pre-rotation `q` and `k` plus `v`.
pub fn generate_content(spec: &WorkloadSpec) -> Result<(Matrix, Matrix, Matrix)> {
    spec.validate()?;
    let rope = spec.rope()?;
    let (l, d, m) = (spec.length, spec.head_dim, &spec.mixture);
    let pairs = rope.pair_count();
    let weight = |component: Pattern, w: f64| {
        if spec.pattern == component || spec.pattern == Pattern::Mixed {
            w
        } else {
            0.0
        }
    };
    let (ws, wv, wb) = (
        weight(Pattern::Slash, m.slash),
        weight(Pattern::Vertical, m.vertical),
        weight(Pattern::Block, m.block),
    );

    let mut rng = Rng::new(spec.seed);
    let slash_pairs = ((m.slash_pair_fraction * pairs as f64).round() as usize).clamp(1, pairs);
    let c = planted(&mut rng, d, &pair_dims(&rope, 0..slash_pairs));
    let c_shifted = apply_rope(
        &Matrix::from_vec(1, d, c.clone())?,
        &[m.slash_offset],
        &rope,
    )?;
    let w = planted(&mut rng, d, &pair_dims(&rope, pairs - pairs / 4..pairs));
    let cluster_dims = pair_dims(&rope, pairs / 2..pairs);
    let centroids: Vec<Vec<f64>> = (0..m.clusters)
        .map(|_| planted(&mut rng, d, &cluster_dims))
        .collect();

    let mut q = Matrix::zeros(l, d);
    let mut k = Matrix::zeros(l, d);
    for i in 0..l {
        add_scaled(q.row_mut(i), &c, ws);
        add_scaled(k.row_mut(i), c_shifted.row(0), ws);
        add_scaled(q.row_mut(i), &w, wv);
        if i < spec.stationarity {
            add_scaled(k.row_mut(i), &w, wv * m.sink_gain);
        }
    }
    for start in (0..l).step_by(m.cluster_span) {
        let g = &centroids[rng.below(m.clusters)];
        for i in start..(start + m.cluster_span).min(l) {
            add_scaled(q.row_mut(i), g, wb);
            add_scaled(k.row_mut(i), g, wb);
        }
    }
    for start in (0..l).step_by(spec.stationarity) {
        let nq = rng.normals(d);
        let nk = rng.normals(d);
        for i in start..(start + spec.stationarity).min(l) {
            add_scaled(q.row_mut(i), &nq, m.noise);
            add_scaled(k.row_mut(i), &nk, m.noise);
        }
    }
    let v = Matrix::from_vec(l, d, rng.normals(l * d))?;
    Ok((q, k, v))
}

/// Post-RoPE `q`, `k` and `v` for `spec`; identical specs give identical
/// bytes.
pub fn generate(spec: &WorkloadSpec) -> Result<AttentionInputs> {
    let rope = spec.rope()?;
    let (q, k, v) = generate_content(spec)?;
    let positions: Vec<i64> = (0..spec.length as i64).collect();
    AttentionInputs::new(
        apply_rope(&q, &positions, &rope)?,
        apply_rope(&k, &positions, &rope)?,
        v,
    )
}

/// RMS of one zone's dims before and after pooling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneEnergy {
    pub zone: Zone,
    pub dims: usize,
    pub token_rms: f64,
    pub pooled_rms: f64,
}

impl ZoneEnergy {
    pub fn ratio(&self) -> f64 {
        self.pooled_rms / self.token_rms
    }
}

/// Per zone of `profile`, token and pooled RMS of `q` restricted to the
/// zone's dims. Zones with no dims or no energy are left out.
pub fn energy_report(
    q: &Matrix,
    block_size: usize,
    profile: &AttenuationProfile,
) -> Result<Vec<ZoneEnergy>> {
    let pooled = block_mean_pool(q, block_size)?;
    let mut out = Vec::new();
    for zone in Zone::ALL {
        let dims = profile.dims_in(zone);
        if dims.is_empty() {
            continue;
        }
        let token_rms = rms(&q.select_cols(&dims)?)?;
        if token_rms == 0.0 {
            continue;
        }
        out.push(ZoneEnergy {
            zone,
            dims: dims.len(),
            token_rms,
            pooled_rms: rms(&pooled.select_cols(&dims)?)?,
        });
    }
    Ok(out)
}

/// Per pair, RMS pooled pair magnitude over RMS token pair magnitude. For
/// block-stationary content this is the attenuation factor of the pair.
pub fn empirical_pair_attenuation(
    q: &Matrix,
    block_size: usize,
    rope: &RopeConfig,
) -> Result<Vec<f64>> {
    let pooled = block_mean_pool(q, block_size)?;
    let energy = |m: &Matrix, a: usize, b: usize| {
        m.row_iter().map(|r| r[a] * r[a] + r[b] * r[b]).sum::<f64>() / m.rows() as f64
    };
    Ok((0..rope.pair_count())
        .map(|j| {
            let (a, b) = rope.pair_dims(j);
            (energy(&pooled, a, b) / energy(q, a, b)).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::ground_truth_block_importance;
    use crate::spectral::{attenuation_exact, build_profile, ZoneThresholds};

    #[test]
    fn rng_is_pinned() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xs: Vec<f64> = (0..8).map(|_| a.normal()).collect();
        assert_eq!(xs, (0..8).map(|_| b.normal()).collect::<Vec<_>>());
        let mut r = Rng::new(0);
        assert!((0..1000).all(|_| (0.0..1.0).contains(&r.uniform())));
        let mut r = Rng::new(1);
        let n = r.normals(20_000);
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        let var = n.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n.len() as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05);
    }

    #[test]
    fn generation_is_deterministic() {
        for pattern in Pattern::ALL {
            let spec = WorkloadSpec::new(pattern, 300, 9);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!((a.q, a.k, a.v), (b.q, b.k, b.v));
        }
        let a = generate(&WorkloadSpec::new(Pattern::Mixed, 300, 1)).unwrap();
        let b = generate(&WorkloadSpec::new(Pattern::Mixed, 300, 2)).unwrap();
        assert_ne!(a.q, b.q);
    }

    #[test]
    fn invalid_specs() {
        let ok = WorkloadSpec::new(Pattern::Slash, 64, 0);
        assert!(generate(&WorkloadSpec { length: 0, ..ok }).is_err());
        assert!(generate(&WorkloadSpec { head_dim: 7, ..ok }).is_err());
        assert!(generate(&WorkloadSpec {
            stationarity: 0,
            ..ok
        })
        .is_err());
        let mut bad = ok;
        bad.mixture.noise = -1.0;
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn slash_mass_is_local() {
        let b = 128;
        let w = generate(&WorkloadSpec::new(Pattern::Slash, 2048, 3)).unwrap();
        let g = ground_truth_block_importance(&w.q, &w.k, b).unwrap();
        for u in 0..g.rows() {
            let local = g[(u, u)] + if u > 0 { g[(u, u - 1)] } else { 0.0 };
            assert!(local >= 0.7, "row {u}: {local}");
        }
    }

    #[test]
    fn vertical_sink_dominates() {
        let w = generate(&WorkloadSpec::new(Pattern::Vertical, 2048, 4)).unwrap();
        let g = ground_truth_block_importance(&w.q, &w.k, 128).unwrap();
        for u in 1..g.rows() {
            let best = (1..u).map(|v| g[(u, v)]).fold(0.0, f64::max);
            assert!(g[(u, 0)] > best, "row {u}");
            assert!(g[(u, 0)] > 0.5, "row {u}: {}", g[(u, 0)]);
        }
    }

    #[test]
    fn pooling_by_one_keeps_energy() {
        let rope = RopeConfig::interleaved(1e6, 128).unwrap();
        let w = generate(&WorkloadSpec::new(Pattern::Mixed, 256, 5)).unwrap();
        let profile = build_profile(&rope, 1, ZoneThresholds::default()).unwrap();
        for z in energy_report(&w.q, 1, &profile).unwrap() {
            assert_eq!(z.token_rms, z.pooled_rms);
        }
    }

    #[test]
    fn energy_collapses_in_dead_zone() {
        let rope = RopeConfig::interleaved(1e6, 128).unwrap();
        let w = generate(&WorkloadSpec::new(Pattern::Slash, 4096, 6)).unwrap();
        let profile = build_profile(&rope, 128, ZoneThresholds::default()).unwrap();
        let report = energy_report(&w.q, 128, &profile).unwrap();
        let zone = |z| report.iter().find(|e| e.zone == z).unwrap();
        assert!(zone(Zone::Dead).ratio() <= 0.15, "{:?}", zone(Zone::Dead));
        assert!(
            zone(Zone::Semantic).ratio() >= 0.9,
            "{:?}",
            zone(Zone::Semantic)
        );
    }

    #[test]
    fn low_frequency_content_keeps_energy() {
        // noise-free block clusters only touch the slower half of the pairs
        let rope = RopeConfig::interleaved(1e6, 128).unwrap();
        let mut spec = WorkloadSpec::new(Pattern::Block, 2048, 7);
        spec.mixture.noise = 0.0;
        let w = generate(&spec).unwrap();
        let profile = build_profile(&rope, 128, ZoneThresholds::default()).unwrap();
        let report = energy_report(&w.q, 128, &profile).unwrap();
        assert!(report.iter().all(|e| e.zone != Zone::Dead));
        let semantic = report.iter().find(|e| e.zone == Zone::Semantic).unwrap();
        assert!(semantic.ratio() > 0.95);
    }

    #[test]
    fn pair_attenuation_matches_closed_form() {
        for layout in [PairLayout::Interleaved, PairLayout::HalfSplit] {
            let rope = RopeConfig::new(1e6, 128, layout).unwrap();
            let mut spec = WorkloadSpec::new(Pattern::Mixed, 4096, 8);
            spec.layout = layout;
            let w = generate(&spec).unwrap();
            let measured = empirical_pair_attenuation(&w.q, 128, &rope).unwrap();
            let mut checked = 0;
            for (j, theta) in rope.frequencies().into_iter().enumerate() {
                let lambda = attenuation_exact(theta, 128);
                if lambda > 0.05 {
                    assert!((measured[j] / lambda - 1.0).abs() < 0.05, "pair {j}");
                    checked += 1;
                }
            }
            assert!(checked > 40);
        }
    }

    #[test]
    fn dead_band_temperature_fixture() {
        use crate::estimator::{calibration_temperature, PooledProjections};
        use crate::rope::{band_indices, BandSpec};
        let rope = RopeConfig::interleaved(1e6, 128).unwrap();
        let w = generate(&WorkloadSpec::new(Pattern::Slash, 4096, 42)).unwrap();
        let p = PooledProjections::new(&w.q, &w.k, 128).unwrap();
        let dims = band_indices(&rope, BandSpec::high(30)).unwrap();
        let qz = p.q_pooled.select_cols(&dims).unwrap();
        let kz = p.k_pooled.select_cols(&dims).unwrap();
        let tau = calibration_temperature(&qz, &kz, &p.q_pooled, &p.k_pooled, 30, 128).unwrap();
        let by_hand = (30.0f64 / 128.0).sqrt()
            * (rms(&qz).unwrap() / rms(&p.q_pooled).unwrap())
            * (rms(&kz).unwrap() / rms(&p.k_pooled).unwrap());
        assert_eq!(tau, by_hand);
        assert!((tau - 3.635644e-2).abs() < 1e-8, "{tau}");
    }
}
