//! Flat JSON configuration covering every tunable default.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{LossParams, NegativePool};
use crate::matching::MatchParams;
use crate::registration::{RegistrationMethod, RegistrationParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pos_margin: f64,
    pub neg_margin: f64,
    pub exclusion_radius: f64,
    pub max_match_distance: f64,
    pub match_capacity: usize,
    pub pos_weight: f64,
    pub neg_weight: f64,
    pub beta: f64,
    pub inlier_threshold: f64,
    pub max_seeds: usize,
    pub local_rounds: usize,
    pub mutual_matching: bool,
    pub negative_pool: NegativePool,
    /// `0` selects spatial-consistency registration, otherwise RANSAC with
    /// this many iterations.
    pub ransac_iterations: usize,
}

impl Default for Config {
    fn default() -> Self {
        let l = LossParams::default();
        let m = MatchParams::default();
        let r = RegistrationParams::default();
        Self {
            pos_margin: l.pos_margin,
            neg_margin: l.neg_margin,
            exclusion_radius: l.exclusion_radius,
            max_match_distance: m.max_distance,
            match_capacity: m.capacity,
            pos_weight: l.pos_weight,
            neg_weight: l.neg_weight,
            beta: r.beta,
            inlier_threshold: r.inlier_threshold,
            max_seeds: r.max_seeds,
            local_rounds: r.local_rounds,
            mutual_matching: m.mutual,
            negative_pool: l.negative_pool,
            ransac_iterations: 0,
        }
    }
}

impl Config {
    pub fn loss(&self) -> LossParams {
        LossParams {
            pos_margin: self.pos_margin,
            neg_margin: self.neg_margin,
            exclusion_radius: self.exclusion_radius,
            pos_weight: self.pos_weight,
            neg_weight: self.neg_weight,
            negative_pool: self.negative_pool,
        }
    }

    pub fn matching(&self) -> MatchParams {
        MatchParams {
            max_distance: self.max_match_distance,
            capacity: self.match_capacity,
            mutual: self.mutual_matching,
        }
    }

    pub fn registration(&self, seed: u64) -> RegistrationParams {
        RegistrationParams {
            beta: self.beta,
            inlier_threshold: self.inlier_threshold,
            max_seeds: self.max_seeds,
            local_rounds: self.local_rounds,
            seed,
            method: if self.ransac_iterations == 0 {
                RegistrationMethod::SpatialConsistency
            } else {
                RegistrationMethod::Ransac {
                    iterations: self.ransac_iterations,
                }
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        self.registration(0).validate()?;
        if !(self.max_match_distance >= 0.0) || self.match_capacity == 0 {
            return Err(crate::Error::invalid(
                "config",
                "max_match_distance must be >= 0 and match_capacity >= 1",
            ));
        }
        Ok(())
    }
}
