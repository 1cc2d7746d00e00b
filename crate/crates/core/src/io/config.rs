use serde::{Deserialize, Serialize};

use crate::baselines::ClusterConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::oracle::{Criteria, OracleConfig};
use crate::propagator::{FilterConfig, SimulatorConfig};
use crate::selftrain::RoundConfig;
use crate::seeker::SearchSpec;

/// Every tunable of the pipeline as one flat JSON object.
///
/// Missing keys fall back to the defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // seeker
    pub k_d: usize,
    pub k_o: usize,
    pub k_s: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub min_frustum_points: usize,
    // oracle
    pub alpha_iou: f64,
    pub min_composite: f64,
    pub criteria: Criteria,
    // simulators
    pub n_paste: usize,
    pub sigma_xyz: f64,
    pub sigma_theta: f64,
    pub p_drop: f64,
    pub max_place_attempts: usize,
    pub bank_capacity: usize,
    // filters
    pub beta_overlap: f64,
    pub min_points: usize,
    pub min_ego_distance: f64,
    pub nms_iou: f64,
    // self-training
    pub n_rounds: usize,
    pub pseudo_score_threshold: f64,
    pub enable_loss_norm: bool,
    pub loss_alpha: f64,
    pub ema_momentum: f64,
    pub seed: u64,
    // baselines
    pub gamma_fuse: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub label_weight: f64,
    // evaluation
    pub dist_thresholds: Vec<f64>,
    pub min_recall: f64,
    pub min_precision: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k_d: 4,
            k_o: 10,
            k_s: 4,
            scale_lo: 0.95,
            scale_hi: 1.2,
            q_lo: 0.0,
            q_hi: 0.25,
            min_frustum_points: 5,
            alpha_iou: 2.0,
            min_composite: 0.0,
            criteria: Criteria::Combined,
            n_paste: 8,
            sigma_xyz: 1.0,
            sigma_theta: std::f64::consts::FRAC_PI_4,
            p_drop: 0.2,
            max_place_attempts: 20,
            bank_capacity: 60,
            beta_overlap: 0.1,
            min_points: 5,
            min_ego_distance: 2.0,
            nms_iou: 0.2,
            n_rounds: 3,
            pseudo_score_threshold: 0.6,
            enable_loss_norm: true,
            loss_alpha: 0.5,
            ema_momentum: 0.99,
            seed: 0,
            gamma_fuse: 0.2,
            dbscan_eps: 1.5,
            dbscan_min_pts: 15,
            label_weight: 1000.0,
            dist_thresholds: vec![0.5, 1.0, 2.0, 4.0],
            min_recall: 0.1,
            min_precision: 0.1,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Format(format!("`{name}` must lie in [0, 1], got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Format(format!("`{name}` must be a non-negative number, got {v}")))
    }
}

fn positive_count(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::Format(format!("`{name}` must be at least 1")))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        positive_count("k_d", self.k_d)?;
        positive_count("k_o", self.k_o)?;
        positive_count("k_s", self.k_s)?;
        positive_count("n_rounds", self.n_rounds)?;
        positive_count("bank_capacity", self.bank_capacity)?;
        positive_count("dbscan_min_pts", self.dbscan_min_pts)?;
        if !(self.scale_lo > 0.0 && self.scale_lo <= self.scale_hi && self.scale_hi.is_finite()) {
            return Err(Error::Format(format!(
                "scale range ({}, {}) must be positive and ordered",
                self.scale_lo, self.scale_hi
            )));
        }
        unit_interval("q_lo", self.q_lo)?;
        unit_interval("q_hi", self.q_hi)?;
        if self.q_lo > self.q_hi {
            return Err(Error::Format("q_lo must not exceed q_hi".into()));
        }
        non_negative("alpha_iou", self.alpha_iou)?;
        if !self.min_composite.is_finite() {
            return Err(Error::Format("min_composite must be finite".into()));
        }
        non_negative("sigma_xyz", self.sigma_xyz)?;
        non_negative("sigma_theta", self.sigma_theta)?;
        unit_interval("p_drop", self.p_drop)?;
        unit_interval("beta_overlap", self.beta_overlap)?;
        unit_interval("nms_iou", self.nms_iou)?;
        non_negative("min_ego_distance", self.min_ego_distance)?;
        unit_interval("pseudo_score_threshold", self.pseudo_score_threshold)?;
        non_negative("loss_alpha", self.loss_alpha)?;
        if !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            return Err(Error::Format("ema_momentum must lie in (0, 1)".into()));
        }
        unit_interval("gamma_fuse", self.gamma_fuse)?;
        if !(self.dbscan_eps > 0.0 && self.dbscan_eps.is_finite()) {
            return Err(Error::Format("dbscan_eps must be positive".into()));
        }
        non_negative("label_weight", self.label_weight)?;
        if self.dist_thresholds.is_empty()
            || self.dist_thresholds.iter().any(|d| !(*d > 0.0 && d.is_finite()))
            || self.dist_thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Format(
                "dist_thresholds must be positive and strictly ascending".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_recall) || !(0.0..1.0).contains(&self.min_precision) {
            return Err(Error::Format("PR floors must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn search_spec(&self) -> SearchSpec {
        SearchSpec {
            k_d: self.k_d,
            k_o: self.k_o,
            k_s: self.k_s,
            scale_lo: self.scale_lo,
            scale_hi: self.scale_hi,
            q_lo: self.q_lo,
            q_hi: self.q_hi,
            min_frustum_points: self.min_frustum_points,
        }
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            alpha_iou: self.alpha_iou,
            min_composite: self.min_composite,
            criteria: self.criteria,
        }
    }

    pub fn simulator(&self) -> SimulatorConfig {
        SimulatorConfig {
            n_paste: self.n_paste,
            sigma_xyz: self.sigma_xyz,
            sigma_theta: self.sigma_theta,
            p_drop: self.p_drop,
            max_place_attempts: self.max_place_attempts,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            beta_overlap: self.beta_overlap,
            min_points: self.min_points,
            min_ego_distance: self.min_ego_distance,
            nms_iou: self.nms_iou,
        }
    }

    pub fn rounds(&self) -> RoundConfig {
        RoundConfig {
            n_rounds: self.n_rounds,
            pseudo_score_threshold: self.pseudo_score_threshold,
            enable_loss_norm: self.enable_loss_norm,
            loss_alpha: self.loss_alpha,
            ema_momentum: self.ema_momentum,
            bank_capacity: self.bank_capacity,
            seed: self.seed,
        }
    }

    pub fn cluster(&self) -> ClusterConfig {
        ClusterConfig {
            eps: self.dbscan_eps,
            min_pts: self.dbscan_min_pts,
            label_weight: self.label_weight,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            dist_thresholds: self.dist_thresholds.clone(),
            min_recall: self.min_recall,
            min_precision: self.min_precision,
        }
    }
}
