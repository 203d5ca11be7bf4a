//! Flat key-value configuration covering every tunable in the crate.
//!
//! A document may name a built-in `profile` (`desk` or `paper`); keys it
//! sets override that profile, everything else keeps the profile value.

use crate::curriculum::{PredictorConfig, Strategy};
use crate::error::{Error, Result};
use crate::gen::{GenConfig, ManeuverMix};
use crate::metrics::{IndividualizeConfig, PerceptionMask};
use crate::pipeline::LoopConfig;
use crate::road::{DynamicsLimits, RoadGeometry, VehicleDims};
use crate::sac::{PerConfig, SacConfig};
use crate::scenario::{FeatureSpec, ScenarioLibrary};
use crate::sim::{ActionBounds, EnvConfig, RewardCoefficients};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: String,
    pub seed: u64,
    /// Worker threads for rollouts; 0 lets the pool decide.
    pub jobs: usize,

    // Library generation.
    pub library_size: usize,
    pub bv_count_weights: Vec<f64>,
    pub h_min: usize,
    pub h_max: usize,
    pub dt: f64,
    pub mix_cut_in: f64,
    pub mix_hard_brake: f64,
    pub mix_lane_drift: f64,
    pub mix_tailgate_pass: f64,
    pub mix_cruise: f64,
    pub av_speed_min: f64,
    pub av_speed_max: f64,
    pub av_x_min: f64,
    pub av_x_max: f64,
    pub min_kept_horizon: usize,
    pub max_attempts: usize,

    // Road, vehicles and dynamics.
    pub num_lanes: usize,
    pub lane_width: f64,
    pub road_length: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,

    // Reward.
    pub rho_acc: f64,
    pub rho_vel: f64,
    pub rho_yaw: f64,
    pub rho_lane: f64,

    // Closed loop.
    pub strategy: Strategy,
    pub iterations: usize,
    pub eval_size: usize,
    pub train_size: usize,
    pub episodes: usize,
    pub clear_buffer: bool,
    pub predictor_reinit: bool,
    pub normalize_features: bool,

    // SAC.
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub target_entropy: f64,
    pub alpha_lr: f64,
    pub sac_batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub update_every: usize,
    pub per_alpha: f64,
    pub per_beta: f64,
    pub per_eps: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,

    // Difficulty predictor.
    pub predictor_hidden: usize,
    pub predictor_layers: usize,
    pub predictor_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub batch_balance: bool,

    // Analyses.
    /// Curriculum size per matrix column; 0 means `train_size`.
    pub matrix_size: usize,
    pub reweight_bins: usize,
    pub reweight_draws: usize,
    pub mask_dx_max: f64,
    pub mask_dy_factor: f64,
    /// Evaluation size of the individualization probe; 0 means `eval_size`.
    pub individualize_eval_size: usize,
    /// Curriculum size of the probe; 0 means `train_size`.
    pub individualize_train_size: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self::desk()
    }
}

impl Config {
    /// Full-size values of the original experiments.
    pub fn paper() -> Self {
        let road = RoadGeometry::default();
        let dims = VehicleDims::default();
        let lim = DynamicsLimits::default();
        let rc = RewardCoefficients::default();
        let gen = GenConfig::default();
        let mix = gen.mix;
        let sac = SacConfig::default();
        let per = PerConfig::default();
        let pred = PredictorConfig::default();
        Self {
            profile: "paper".into(),
            seed: 0,
            jobs: 0,
            library_size: 65_494,
            bv_count_weights: gen.bv_count_weights,
            h_min: gen.h_min,
            h_max: gen.h_max,
            dt: gen.dt,
            mix_cut_in: mix.cut_in,
            mix_hard_brake: mix.hard_brake,
            mix_lane_drift: mix.lane_drift,
            mix_tailgate_pass: mix.tailgate_pass,
            mix_cruise: mix.cruise,
            av_speed_min: gen.av_speed.0,
            av_speed_max: gen.av_speed.1,
            av_x_min: gen.av_x.0,
            av_x_max: gen.av_x.1,
            min_kept_horizon: gen.min_kept_horizon,
            max_attempts: gen.max_attempts,
            num_lanes: road.num_lanes,
            lane_width: road.lane_width,
            road_length: road.length,
            v_min: road.v_min,
            v_max: road.v_max,
            vehicle_length: dims.length,
            vehicle_width: dims.width,
            a_min: lim.a_min,
            a_max: lim.a_max,
            omega_min: lim.omega_min,
            omega_max: lim.omega_max,
            rho_acc: rc.rho_acc,
            rho_vel: rc.rho_vel,
            rho_yaw: rc.rho_yaw,
            rho_lane: rc.rho_lane,
            strategy: Strategy::Clic,
            iterations: 10,
            eval_size: 4096,
            train_size: 128,
            episodes: 10,
            clear_buffer: false,
            predictor_reinit: false,
            normalize_features: true,
            hidden: sac.hidden,
            layers: sac.layers,
            lr: sac.lr,
            gamma: sac.gamma,
            tau: sac.tau,
            alpha: sac.alpha,
            auto_alpha: sac.auto_alpha,
            target_entropy: sac.target_entropy,
            alpha_lr: sac.alpha_lr,
            sac_batch_size: sac.batch_size,
            buffer_capacity: sac.buffer_capacity,
            warmup: sac.warmup,
            update_every: sac.update_every,
            per_alpha: per.alpha,
            per_beta: per.beta,
            per_eps: per.eps,
            log_std_min: sac.log_std_min,
            log_std_max: sac.log_std_max,
            predictor_hidden: pred.hidden,
            predictor_layers: pred.layers,
            predictor_lr: pred.lr,
            epochs: pred.epochs,
            batch_size: pred.batch_size,
            dropout: pred.dropout,
            batch_balance: pred.balance,
            matrix_size: 0,
            reweight_bins: 20,
            reweight_draws: 100_000,
            mask_dx_max: 30.0,
            mask_dy_factor: 0.5,
            individualize_eval_size: 0,
            individualize_train_size: 0,
        }
    }

    /// Laptop-sized runs: a 2000-scenario library and small networks.
    pub fn desk() -> Self {
        Self {
            profile: "desk".into(),
            library_size: 2000,
            iterations: 5,
            eval_size: 256,
            train_size: 32,
            episodes: 5,
            hidden: 64,
            predictor_hidden: 64,
            sac_batch_size: 64,
            warmup: 500,
            update_every: 2,
            lr: 1e-3,
            alpha_lr: 1e-3,
            predictor_lr: 1e-3,
            batch_size: 32,
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let overlay: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let name = match overlay.get("profile") {
            None => "desk",
            Some(toml::Value::String(p)) => p.as_str(),
            Some(v) => return Err(Error::Config(format!("profile must be a string, got {v}"))),
        };
        let mut table = toml::Table::try_from(Self::profile(name)?).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overlay {
            table.insert(k, v);
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_toml().as_bytes())
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.road().check().map_err(Error::Config)?;
        self.gen_config().check()?;
        if !(self.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if self.h_max > 100 {
            return bad(format!("h_max {} exceeds 100 frames", self.h_max));
        }
        if self.iterations == 0 || self.episodes == 0 {
            return bad("iterations and episodes must be ≥ 1".into());
        }
        if self.eval_size == 0 || self.train_size == 0 {
            return bad("eval_size and train_size must be ≥ 1".into());
        }
        if self.hidden == 0 || self.layers == 0 || self.predictor_hidden == 0 || self.predictor_layers == 0 {
            return bad("network sizes must be ≥ 1".into());
        }
        if self.sac_batch_size == 0 || self.batch_size == 0 || self.update_every == 0 {
            return bad("batch sizes and update_every must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("gamma must lie in [0, 1] and tau in (0, 1]".into());
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max".into());
        }
        if self.reweight_bins == 0 || self.reweight_draws == 0 {
            return bad("reweight_bins and reweight_draws must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn road(&self) -> RoadGeometry {
        RoadGeometry {
            num_lanes: self.num_lanes,
            lane_width: self.lane_width,
            length: self.road_length,
            v_min: self.v_min,
            v_max: self.v_max,
        }
    }

    pub fn dims(&self) -> VehicleDims {
        VehicleDims {
            length: self.vehicle_length,
            width: self.vehicle_width,
        }
    }

    pub fn limits(&self) -> DynamicsLimits {
        DynamicsLimits {
            a_min: self.a_min,
            a_max: self.a_max,
            omega_min: self.omega_min,
            omega_max: self.omega_max,
            v_max: self.v_max,
        }
    }

    pub fn coeffs(&self) -> RewardCoefficients {
        RewardCoefficients {
            rho_acc: self.rho_acc,
            rho_vel: self.rho_vel,
            rho_yaw: self.rho_yaw,
            rho_lane: self.rho_lane,
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            size: self.library_size,
            bv_count_weights: self.bv_count_weights.clone(),
            h_min: self.h_min,
            h_max: self.h_max,
            mix: ManeuverMix {
                cut_in: self.mix_cut_in,
                hard_brake: self.mix_hard_brake,
                lane_drift: self.mix_lane_drift,
                tailgate_pass: self.mix_tailgate_pass,
                cruise: self.mix_cruise,
            },
            av_speed: (self.av_speed_min, self.av_speed_max),
            av_x: (self.av_x_min, self.av_x_max),
            dt: self.dt,
            seed: self.seed,
            min_kept_horizon: self.min_kept_horizon,
            max_attempts: self.max_attempts,
        }
    }

    /// Simulator settings for `lib`; frame length and BV slots come from
    /// the library, everything else from the config.
    pub fn env_for(&self, lib: &ScenarioLibrary) -> EnvConfig {
        EnvConfig {
            road: lib.road,
            dims: self.dims(),
            n_max: lib.n_max,
            bounds: ActionBounds::from_limits(&self.limits(), lib.dt),
            coeffs: self.coeffs(),
        }
    }

    pub fn feature_spec(&self, lib: &ScenarioLibrary) -> FeatureSpec {
        FeatureSpec {
            n_max: lib.n_max,
            h_max: lib.h_max,
            road: lib.road,
            normalize: self.normalize_features,
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            hidden: self.hidden,
            layers: self.layers,
            lr: self.lr,
            gamma: self.gamma,
            tau: self.tau,
            alpha: self.alpha,
            auto_alpha: self.auto_alpha,
            target_entropy: self.target_entropy,
            alpha_lr: self.alpha_lr,
            batch_size: self.sac_batch_size,
            buffer_capacity: self.buffer_capacity,
            warmup: self.warmup,
            update_every: self.update_every,
            per: (self.strategy == Strategy::Per).then_some(PerConfig {
                alpha: self.per_alpha,
                beta: self.per_beta,
                eps: self.per_eps,
            }),
            log_std_min: self.log_std_min,
            log_std_max: self.log_std_max,
        }
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            hidden: self.predictor_hidden,
            layers: self.predictor_layers,
            lr: self.predictor_lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            balance: self.batch_balance,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            iterations: self.iterations,
            eval_size: self.eval_size,
            train_size: self.train_size,
            episodes: self.episodes,
            strategy: self.strategy,
            seed: self.seed,
            sac: self.sac_config(),
            predictor: self.predictor_config(),
            predictor_reinit: self.predictor_reinit,
            clear_buffer: self.clear_buffer,
            normalize_features: self.normalize_features,
            gamma_eval: self.gamma,
        }
    }

    pub fn matrix_size(&self) -> usize {
        if self.matrix_size == 0 { self.train_size } else { self.matrix_size }
    }

    pub fn mask(&self) -> PerceptionMask {
        PerceptionMask {
            dx_max: self.mask_dx_max,
            dy_factor: self.mask_dy_factor,
            lane_width: self.lane_width,
        }
    }

    pub fn individualize_config(&self) -> IndividualizeConfig {
        let or = |v: usize, d: usize| if v == 0 { d } else { v };
        IndividualizeConfig {
            eval_size: or(self.individualize_eval_size, self.eval_size),
            train_size: or(self.individualize_train_size, self.train_size),
            predictor: self.predictor_config(),
            seed: self.seed,
        }
    }

    pub fn pool_size(&self) -> Option<usize> {
        (self.jobs > 0).then_some(self.jobs)
    }
}
