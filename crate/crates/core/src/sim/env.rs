use super::{av_kinematic_step, compute_reward, detect_accident, AccidentKind, ActionBounds, RewardBreakdown, RewardCoefficients};
use crate::error::{Error, Result};
use crate::road::{RoadGeometry, VehicleDims};
use crate::scenario::{AvAction, Scenario, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub road: RoadGeometry,
    pub dims: VehicleDims,
    pub n_max: usize,
    pub bounds: ActionBounds,
    pub coeffs: RewardCoefficients,
}

impl EnvConfig {
    /// `4·(1 + n_max)`.
    pub fn obs_dim(&self) -> usize {
        4 * (1 + self.n_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub frame_index: usize,
    pub av: VehicleState,
    pub bvs: Vec<VehicleState>,
    pub done: bool,
    pub accident: AccidentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: RewardBreakdown,
    pub done: bool,
}

/// Replays one scenario against a controllable AV.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    scenario: &'a Scenario,
    cfg: &'a EnvConfig,
    state: EnvState,
}

impl<'a> Env<'a> {
    pub fn new(scenario: &'a Scenario, cfg: &'a EnvConfig) -> Self {
        let state = EnvState {
            frame_index: 0,
            av: scenario.av_init,
            bvs: scenario.bv_init.clone(),
            done: false,
            accident: AccidentKind::None,
        };
        Self { scenario, cfg, state }
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    /// `[AV 4-tuple, BV 4-tuples in id order]`, zero-padded to `n_max` BVs.
    pub fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.cfg.obs_dim()];
        self.observe_into(&mut obs);
        obs
    }

    pub fn observe_into(&self, obs: &mut [f64]) {
        obs.fill(0.0);
        obs[..4].copy_from_slice(&self.state.av.as_array());
        for (j, b) in self.state.bvs.iter().take(self.cfg.n_max).enumerate() {
            obs[4 * (j + 1)..4 * (j + 2)].copy_from_slice(&b.as_array());
        }
    }

    pub fn step(&mut self, action: &AvAction) -> Result<Step> {
        let reward = self.advance(action)?;
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.state.done,
        })
    }

    /// Like [`step`](Self::step) but leaves observation building to the caller.
    pub fn advance(&mut self, action: &AvAction) -> Result<RewardBreakdown> {
        if self.state.done {
            return Err(Error::StepAfterDone);
        }
        let a = self.cfg.bounds.clamp(action);
        let st = &mut self.state;
        st.av = av_kinematic_step(&st.av, &a, self.scenario.dt, self.cfg.road.v_max);
        st.frame_index += 1;
        st.bvs.clear();
        st.bvs.extend_from_slice(self.scenario.bv_frame(st.frame_index));
        st.accident = detect_accident(&st.av, &st.bvs, &self.cfg.road, &self.cfg.dims);
        st.done = st.accident.is_accident()
            || st.frame_index >= self.scenario.horizon()
            || st.av.x > self.cfg.road.length;
        Ok(compute_reward(st, &self.cfg.road, &self.cfg.coeffs))
    }
}
