use super::{AccidentKind, Env, EnvConfig, RewardBreakdown};
use crate::error::Result;
use crate::scenario::{AvAction, Scenario, VehicleState};
use crate::seed::SimRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    /// Mode of the policy distribution.
    Deterministic,
    /// A sample from the policy distribution.
    Stochastic,
}

/// Anything that maps an observation to an AV action.
pub trait Policy: Sync {
    fn act(&self, obs: &[f64], mode: ActMode, rng: &mut SimRng) -> AvAction;
}

/// Always issues the same action.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantPolicy(pub AvAction);

impl Policy for ConstantPolicy {
    fn act(&self, _obs: &[f64], _mode: ActMode, _rng: &mut SimRng) -> AvAction {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub scenario_id: String,
    pub accident_label: u8,
    pub accident: AccidentKind,
    pub steps: usize,
    pub elapsed_time: f64,
    pub longitudinal_distance: f64,
    /// AV states, initial state included (`steps + 1` entries).
    pub av_trajectory: Vec<VehicleState>,
    pub actions: Vec<AvAction>,
    pub rewards: Vec<RewardBreakdown>,
    pub discounted_return: f64,
}

pub fn rollout(
    policy: &dyn Policy,
    scenario: &Scenario,
    cfg: &EnvConfig,
    mode: ActMode,
    gamma: f64,
    rng: &mut SimRng,
) -> Result<RolloutResult> {
    let mut env = Env::new(scenario, cfg);
    let mut obs = env.observe();
    let mut av_trajectory = vec![scenario.av_init];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut discounted_return = 0.0;
    let mut discount = 1.0;
    loop {
        let a = policy.act(&obs, mode, rng);
        let r = env.advance(&a)?;
        env.observe_into(&mut obs);
        discounted_return += discount * r.total;
        discount *= gamma;
        av_trajectory.push(env.state().av);
        actions.push(a);
        rewards.push(r);
        if env.state().done {
            break;
        }
    }
    let st = env.state();
    let steps = actions.len();
    Ok(RolloutResult {
        scenario_id: scenario.id.clone(),
        accident_label: st.accident.is_accident() as u8,
        accident: st.accident,
        steps,
        elapsed_time: steps as f64 * scenario.dt,
        longitudinal_distance: st.av.x - scenario.av_init.x,
        av_trajectory,
        actions,
        rewards,
        discounted_return,
    })
}
