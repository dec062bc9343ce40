//! Analytic model of how block mean pooling attenuates RoPE frequency pairs.
//!
//! Pooling `B` consecutive positions of a pair whose content is constant
//! over the block scales its magnitude by the normalized Dirichlet kernel
//! `λ(θ, B) = |sin(Bθ/2) / (B sin(θ/2))|`, which is close to
//! `|sinc(Bθ/2π)|` once `θ` is small. Pairs whose total rotation over a
//! block exceeds one full turn are cancelled almost completely.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rope::RopeConfig;

/// Magnitude ratio of a pooled pair to its constant content.
pub fn attenuation_exact(theta: f64, block_size: usize) -> f64 {
    if block_size <= 1 {
        return 1.0;
    }
    let b = block_size as f64;
    // Fold into [-π, π]: λ is 2π-periodic and even.
    let phi = (theta.abs() + PI).rem_euclid(TAU) - PI;
    if phi.abs() < 1e-6 {
        // Removable singularity at multiples of 2π; the quartic term is
        // below 1e-14 for B <= 256.
        return (1.0 - (b * b - 1.0) * phi * phi / 24.0).clamp(0.0, 1.0);
    }
    // B is an integer, so |sin(Bθ/2)| = |sin(Bφ/2)| and the small argument
    // keeps precision near multiples of 2π.
    let ratio = (b * phi / 2.0).sin() / (b * (phi / 2.0).sin());
    ratio.abs().min(1.0)
}

/// `|sinc(Bθ / 2π)|` with the normalized sinc, `sinc(0) = 1`.
pub fn attenuation_sinc(theta: f64, block_size: usize) -> f64 {
    let x = block_size as f64 * theta / 2.0;
    if x == 0.0 {
        1.0
    } else {
        (x.sin() / x).abs().min(1.0)
    }
}

/// Dimension index `2j` at which one block spans exactly one full rotation,
/// `Bθ_j = 2π`. `None` when `B <= 2π`: no pair completes a turn, so there
/// is no dead zone.
pub fn cutoff_dimension(cfg: &RopeConfig, block_size: usize) -> Option<f64> {
    let b = block_size as f64;
    if b <= TAU {
        return None;
    }
    Some(cfg.head_dim() as f64 * (b / TAU).ln() / cfg.base().ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Zone {
    /// Full phase cancellation; pooled magnitude is effectively zero.
    Dead,
    /// Partially attenuated.
    Transition,
    /// Magnitude preserved by pooling.
    Semantic,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Dead, Zone::Transition, Zone::Semantic];

    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Dead => "dead",
            Zone::Transition => "transition",
            Zone::Semantic => "semantic",
        }
    }
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    pub dead: f64,
    pub semantic: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self {
            dead: 0.1,
            semantic: 0.9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairAttenuation {
    pub pair: usize,
    pub theta: f64,
    pub lambda_exact: f64,
    pub lambda_sinc: f64,
    pub zone: Zone,
}

impl PairAttenuation {
    /// The pair's position on the frequency axis, in `2j` units.
    pub fn dim_index(&self) -> usize {
        2 * self.pair
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttenuationProfile {
    pub block_size: usize,
    pub cutoff_dim: Option<f64>,
    pub pairs: Vec<PairAttenuation>,
    /// Zone of every head dimension, indexed by dimension under the
    /// config's pair layout.
    pub zones: Vec<Zone>,
}

impl AttenuationProfile {
    pub fn dims_in(&self, zone: Zone) -> Vec<usize> {
        self.zones
            .iter()
            .enumerate()
            .filter_map(|(d, &z)| (z == zone).then_some(d))
            .collect()
    }

    pub fn pairs_in(&self, zone: Zone) -> impl Iterator<Item = &PairAttenuation> {
        self.pairs.iter().filter(move |p| p.zone == zone)
    }

    /// Columns `pair_index,dim_index,theta,lambda_exact,lambda_sinc,zone`,
    /// one row per frequency pair.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| std::io::Error::other(e);
        out.write_record([
            "pair_index",
            "dim_index",
            "theta",
            "lambda_exact",
            "lambda_sinc",
            "zone",
        ])
        .map_err(csv_err)?;
        for p in &self.pairs {
            out.write_record([
                p.pair.to_string(),
                p.dim_index().to_string(),
                p.theta.to_string(),
                p.lambda_exact.to_string(),
                p.lambda_sinc.to_string(),
                p.zone.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-pair attenuation under both formulas plus a zone label.
///
/// A pair is Dead when it lies below the analytic cutoff or its exact
/// factor is under `thresholds.dead` (this picks up the tail of the main
/// lobe just past the cutoff, and the whole spectrum when `B <= 2π`).
/// Remaining pairs are Semantic at or above `thresholds.semantic`,
/// Transition otherwise.
pub fn build_profile(
    cfg: &RopeConfig,
    block_size: usize,
    thresholds: ZoneThresholds,
) -> Result<AttenuationProfile> {
    let ZoneThresholds { dead, semantic } = thresholds;
    if !(0.0 < dead && dead < semantic && semantic < 1.0) {
        return config_err(format!(
            "zone thresholds need 0 < dead < semantic < 1, got {dead} / {semantic}"
        ));
    }
    if block_size == 0 {
        return config_err("block size must be at least 1");
    }
    let cutoff = cutoff_dimension(cfg, block_size);
    let pairs: Vec<PairAttenuation> = cfg
        .frequencies()
        .into_iter()
        .enumerate()
        .map(|(pair, theta)| {
            let lambda_exact = attenuation_exact(theta, block_size);
            let below_cutoff = cutoff.is_some_and(|c| ((2 * pair) as f64) < c);
            let zone = if below_cutoff || lambda_exact < dead {
                Zone::Dead
            } else if lambda_exact >= semantic {
                Zone::Semantic
            } else {
                Zone::Transition
            };
            PairAttenuation {
                pair,
                theta,
                lambda_exact,
                lambda_sinc: attenuation_sinc(theta, block_size),
                zone,
            }
        })
        .collect();
    let zones = (0..cfg.head_dim())
        .map(|dim| pairs[cfg.pair_of_dim(dim)].zone)
        .collect();
    Ok(AttenuationProfile {
        block_size,
        cutoff_dim: cutoff,
        pairs,
        zones,
    })
}
