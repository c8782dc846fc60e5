//! Log-distance path loss with log-normal shadowing, `L = l0 * d^gamma * zeta`.
//!
//! Everything is evaluated in dB. Shadowing is drawn once per (user, site)
//! and kept for the user's lifetime.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Point, SiteSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationParams {
    /// Loss at `reference_distance`, dB.
    pub l0_db: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    /// Meters.
    pub reference_distance: f64,
    /// Floor applied after shadowing, dB.
    pub min_coupling_loss_db: f64,
}

impl Default for PropagationParams {
    /// Macro-cell values at 2 GHz with distances in units of 1 km.
    fn default() -> Self {
        Self {
            l0_db: 128.1,
            path_loss_exponent: 3.76,
            shadowing_sigma_db: 8.0,
            reference_distance: 1000.0,
            min_coupling_loss_db: 70.0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exponent > 2.0) {
            return Err(Error::validation(
                "propagation.path_loss_exponent",
                "must be > 2",
            ));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::validation(
                "propagation.shadowing_sigma_db",
                "must be >= 0",
            ));
        }
        if !(self.reference_distance > 0.0) {
            return Err(Error::validation(
                "propagation.reference_distance",
                "must be > 0",
            ));
        }
        if !(self.l0_db.is_finite() && self.min_coupling_loss_db.is_finite()) {
            return Err(Error::validation("propagation", "losses must be finite"));
        }
        Ok(())
    }
}

/// Distances below `reference_distance` are clamped up to it.
pub fn path_loss_db(site: &SiteSpec, point: Point, shadow_db: f64, params: &PropagationParams) -> f64 {
    let (dx, dy) = (site.position.x - point.x, site.position.y - point.y);
    let d0 = params.reference_distance;
    // 10 * gamma * log10(d / d0), from the squared ratio to skip a sqrt.
    let ratio_sq = ((dx * dx + dy * dy) / (d0 * d0)).max(1.0);
    let loss = params.l0_db
        + 5.0 * params.path_loss_exponent * ratio_sq.ln() / std::f64::consts::LN_10
        + shadow_db;
    loss.max(params.min_coupling_loss_db)
}

/// Per-subcarrier received power, dBm.
pub fn received_power_dbm(
    site: &SiteSpec,
    point: Point,
    shadow_db: f64,
    params: &PropagationParams,
) -> f64 {
    site.tx_power_per_subcarrier + site.antenna_gain - path_loss_db(site, point, shadow_db, params)
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    (db * (std::f64::consts::LN_10 / 10.0)).exp()
}

#[inline]
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Source of per-(user, site) shadowing values.
///
/// Each user gets its own ChaCha stream keyed by user id, so a user's draws
/// do not depend on how many users came before it or on the policy under
/// test.
#[derive(Debug, Clone)]
pub struct ShadowingField {
    seed: u64,
    normal: Normal<f64>,
}

impl ShadowingField {
    pub fn new(sigma_db: f64, seed: u64) -> Self {
        Self {
            seed,
            normal: Normal::new(0.0, sigma_db).expect("sigma validated as finite and >= 0"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Shadowing in dB towards each of `n_sites` sites for `user_id`.
    pub fn draw_for_user(&self, user_id: u64, n_sites: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(user_id);
        (0..n_sites).map(|_| self.normal.sample(&mut rng)).collect()
    }
}
