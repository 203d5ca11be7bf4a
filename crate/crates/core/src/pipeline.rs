//! The closed loop: evaluate the policy, select a curriculum, train.
//!
//! Run directory layout (all optional, only when an output dir is given):
//!
//! ```text
//! records/iteration_NNN.json     one IterationRecord per finished iteration
//! curricula/curriculum_NNN.json  the selected training scenarios
//! checkpoints/agent_init.bin     policy before any training
//! checkpoints/agent_NNN.bin      policy after iteration NNN
//! checkpoints/predictor_NNN.bin  predictor trained in iteration NNN
//! state/replay.bin               replay buffer after the latest iteration
//! state/initial_labels.json      first-iteration predictions (pcl_label)
//! ```
//!
//! A run resumes from the latest iteration whose record, agent checkpoint
//! and replay state are all present.

use crate::curriculum::{featurize_library, gather_rows, predict_all, select, train_predictor, Curriculum, DifficultyPredictor, PredictorConfig, SelectInputs, Strategy};
use crate::error::{Error, Result};
use crate::sac::{ReplayBuffer, SacAgent, SacConfig, Transition, UpdateReport};
use crate::scenario::{FeatureSpec, ScenarioLibrary};
use crate::seed::{child_rng, rng_from, SimRng, Stage};
use crate::sim::{rollout, ActMode, Env, EnvConfig, Policy, RolloutResult};
use crate::util::{read_json, write_json};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub iterations: usize,
    pub eval_size: usize,
    pub train_size: usize,
    pub episodes: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub sac: SacConfig,
    pub predictor: PredictorConfig,
    /// Re-initialize the predictor every iteration instead of warm-starting.
    pub predictor_reinit: bool,
    /// Empty the replay buffer at the start of every iteration.
    pub clear_buffer: bool,
    pub normalize_features: bool,
    pub gamma_eval: f64,
}

impl LoopConfig {
    pub fn check(&self, library_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be ≥ 1".into());
        }
        if self.eval_size == 0 || self.eval_size > library_size {
            return bad(format!("eval_size must lie in [1, {library_size}], got {}", self.eval_size));
        }
        if self.train_size == 0 || self.train_size > library_size {
            return bad(format!("train_size must lie in [1, {library_size}], got {}", self.train_size));
        }
        if self.episodes == 0 {
            return bad("episodes must be ≥ 1".into());
        }
        Ok(())
    }

    /// The SAC settings actually used, with prioritized replay switched on
    /// for the PER baseline.
    pub fn effective_sac(&self) -> SacConfig {
        let mut sac = self.sac.clone();
        if self.strategy == Strategy::Per && sac.per.is_none() {
            sac.per = Some(Default::default());
        }
        if self.strategy != Strategy::Per {
            sac.per = None;
        }
        sac
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub episodes: usize,
    pub env_steps: usize,
    pub updates: usize,
    pub accidents: usize,
    pub mean_return: f64,
    pub mean_q_loss: f64,
    pub mean_actor_loss: f64,
    pub mean_entropy: f64,
    pub alpha: f64,
    /// Undiscounted return of every episode, in play order.
    pub episode_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub eval_ids: Vec<String>,
    pub eval_labels: Vec<u8>,
    pub eval_success_rate: f64,
    pub predictor_losses: Vec<f64>,
    pub curriculum: Curriculum,
    pub train: TrainSummary,
    pub agent_checkpoint: Option<String>,
    pub predictor_checkpoint: Option<String>,
}

pub fn env_config_for(lib: &ScenarioLibrary, base: &EnvConfig) -> EnvConfig {
    EnvConfig {
        road: lib.road,
        n_max: lib.n_max,
        ..base.clone()
    }
}

/// Deterministic rollouts of `indices`, in the given order.
pub fn rollouts(policy: &dyn Policy, lib: &ScenarioLibrary, indices: &[usize], env: &EnvConfig, gamma: f64) -> Result<Vec<RolloutResult>> {
    indices
        .par_iter()
        .map(|&i| rollout(policy, &lib.scenarios[i], env, ActMode::Deterministic, gamma, &mut rng_from(0)))
        .collect()
}

/// `m` distinct scenarios drawn uniformly, returned in id order with their
/// accident labels. The policy is only read.
pub fn evaluate_av(policy: &dyn Policy, lib: &ScenarioLibrary, m: usize, env: &EnvConfig, rng: &mut SimRng) -> Result<(Vec<usize>, Vec<u8>)> {
    if m > lib.len() {
        return Err(Error::Config(format!("eval size {m} exceeds library size {}", lib.len())));
    }
    let mut idx = rand::seq::index::sample(rng, lib.len(), m).into_vec();
    idx.sort_by(|&a, &b| lib.scenarios[a].id.cmp(&lib.scenarios[b].id));
    let labels = rollouts(policy, lib, &idx, env, 0.99)?.iter().map(|r| r.accident_label).collect();
    Ok((idx, labels))
}

/// One stochastic episode per curriculum entry and episode, in a freshly
/// shuffled order each time, with SAC updates interleaved.
pub fn train_av(
    agent: &mut SacAgent,
    buffer: &mut ReplayBuffer,
    curriculum: &[usize],
    lib: &ScenarioLibrary,
    episodes: usize,
    env: &EnvConfig,
    rng: &mut SimRng,
) -> Result<TrainSummary> {
    if curriculum.is_empty() {
        return Err(Error::Empty("curriculum".into()));
    }
    let mut sum = TrainSummary::default();
    let mut reports: Vec<UpdateReport> = Vec::new();
    let mut order = curriculum.to_vec();
    let mut obs = vec![0.0; env.obs_dim()];
    let every = agent.cfg.update_every.max(1);
    let ready = agent.cfg.warmup.max(agent.cfg.batch_size);
    for _ in 0..episodes {
        order.shuffle(rng);
        for &i in &order {
            let mut e = Env::new(&lib.scenarios[i], env);
            e.observe_into(&mut obs);
            let mut ret = 0.0;
            loop {
                let u = agent.act_unit(&obs, ActMode::Stochastic, rng);
                let r = e.advance(&agent.bounds().from_unit(u))?;
                let next = e.observe();
                let st = e.state();
                buffer.push(&Transition {
                    obs: std::mem::take(&mut obs),
                    action: u,
                    reward: r.total,
                    next_obs: next.clone(),
                    done: st.accident.is_accident(),
                })?;
                obs = next;
                ret += r.total;
                sum.env_steps += 1;
                if buffer.len() >= ready && sum.env_steps % every == 0 {
                    reports.push(agent.train_step(buffer, rng)?);
                }
                if st.done {
                    sum.accidents += st.accident.is_accident() as usize;
                    break;
                }
            }
            sum.episodes += 1;
            sum.episode_returns.push(ret);
        }
    }
    let k = reports.len().max(1) as f64;
    sum.updates = reports.len();
    sum.mean_return = sum.episode_returns.iter().sum::<f64>() / sum.episodes as f64;
    sum.mean_q_loss = reports.iter().map(|r| 0.5 * (r.q1_loss + r.q2_loss)).sum::<f64>() / k;
    sum.mean_actor_loss = reports.iter().map(|r| r.actor_loss).sum::<f64>() / k;
    sum.mean_entropy = reports.iter().map(|r| r.entropy).sum::<f64>() / k;
    sum.alpha = agent.alpha;
    Ok(sum)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<IterationRecord>,
    pub initial_agent: SacAgent,
    pub agent: SacAgent,
    pub predictor: Option<DifficultyPredictor>,
}

struct Dirs {
    root: PathBuf,
}

impl Dirs {
    fn record(&self, k: usize) -> PathBuf {
        self.root.join(format!("records/iteration_{k:03}.json"))
    }
    fn curriculum(&self, k: usize) -> PathBuf {
        self.root.join(format!("curricula/curriculum_{k:03}.json"))
    }
    fn agent(&self, k: usize) -> PathBuf {
        self.root.join(format!("checkpoints/agent_{k:03}.bin"))
    }
    fn predictor(&self, k: usize) -> PathBuf {
        self.root.join(format!("checkpoints/predictor_{k:03}.bin"))
    }
    fn agent_init(&self) -> PathBuf {
        self.root.join("checkpoints/agent_init.bin")
    }
    fn replay(&self) -> PathBuf {
        self.root.join("state/replay.bin")
    }
    fn initial_labels(&self) -> PathBuf {
        self.root.join("state/initial_labels.json")
    }
    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned()
    }
}

pub fn agent_checkpoint_path(run_dir: &Path, k: usize) -> PathBuf {
    Dirs { root: run_dir.to_path_buf() }.agent(k)
}

pub fn predictor_checkpoint_path(run_dir: &Path, k: usize) -> PathBuf {
    Dirs { root: run_dir.to_path_buf() }.predictor(k)
}

pub fn initial_agent_path(run_dir: &Path) -> PathBuf {
    Dirs { root: run_dir.to_path_buf() }.agent_init()
}

/// Reads back all iteration records of a run directory in order.
pub fn read_records(run_dir: &Path) -> Result<Vec<IterationRecord>> {
    let d = Dirs { root: run_dir.to_path_buf() };
    let mut out = Vec::new();
    let mut k = 1;
    while d.record(k).exists() {
        out.push(read_json(&d.record(k))?);
        k += 1;
    }
    Ok(out)
}

/// Runs the whole loop. With `out`, artifacts are written there and an
/// interrupted run picks up after its last complete iteration.
pub fn run(cfg: &LoopConfig, lib: &ScenarioLibrary, env: &EnvConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.check(lib.len())?;
    let env = env_config_for(lib, env);
    let dirs = out.map(|p| Dirs { root: p.to_path_buf() });
    let spec = FeatureSpec {
        n_max: lib.n_max,
        h_max: lib.h_max,
        road: lib.road,
        normalize: cfg.normalize_features,
    };
    let uses_predictor = (1..=cfg.iterations).any(|k| cfg.strategy.needs_predictor(k));
    let feats = if uses_predictor { Some(featurize_library(lib, &spec)?) } else { None };

    let mut init_rng = child_rng(cfg.seed, 0, Stage::Init, 0);
    let initial_agent = SacAgent::new(cfg.effective_sac(), &env, &mut init_rng)?;
    let mut predictor = if uses_predictor {
        Some(DifficultyPredictor::new(spec.dim(), cfg.predictor.clone(), &mut child_rng(cfg.seed, 0, Stage::Init, 1))?)
    } else {
        None
    };
    let mut agent = initial_agent.clone();
    let mut buffer = agent.new_buffer();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut initial_labels: Option<Vec<f64>> = None;

    if let Some(d) = &dirs {
        agent.save(&d.agent_init())?;
        // Resume from the latest complete iteration.
        let done = (1..=cfg.iterations)
            .take_while(|&k| d.record(k).exists() && d.agent(k).exists())
            .count();
        if done > 0 && d.replay().exists() {
            for k in 1..=done {
                records.push(read_json(&d.record(k))?);
            }
            agent = SacAgent::load(&d.agent(done))?;
            buffer = ReplayBuffer::from_bytes(&std::fs::read(d.replay())?)?;
            if let Some(p) = predictor.as_mut() {
                if let Some(k) = (1..=done).rev().find(|&k| d.predictor(k).exists()) {
                    *p = DifficultyPredictor::load(&d.predictor(k), cfg.predictor.clone())?;
                }
            }
            if d.initial_labels().exists() {
                initial_labels = Some(read_json(&d.initial_labels())?);
            }
        }
    }

    for k in records.len() + 1..=cfg.iterations {
        let it = k as u64;
        // Evaluation.
        let (eval_idx, eval_labels) = evaluate_av(&agent, lib, cfg.eval_size, &env, &mut child_rng(cfg.seed, it, Stage::Evaluate, 0))?;

        // Predictor.
        let mut losses = Vec::new();
        let mut l_all = None;
        if cfg.strategy.needs_predictor(k) {
            let p = predictor.as_mut().expect("predictor allocated");
            if cfg.predictor_reinit {
                *p = DifficultyPredictor::new(spec.dim(), cfg.predictor.clone(), &mut child_rng(cfg.seed, it, Stage::Init, 1))?;
            }
            let f = feats.as_ref().expect("features computed");
            let x = gather_rows(f.view(), &eval_idx);
            let y: Vec<f64> = eval_labels.iter().map(|&l| l as f64).collect();
            losses = train_predictor(p, x.view(), &y, &mut child_rng(cfg.seed, it, Stage::Predictor, 0))?;
            let l = predict_all(p, f.view())?;
            if initial_labels.is_none() {
                initial_labels = Some(l.clone());
                if let Some(d) = &dirs {
                    write_json(&d.initial_labels(), &l)?;
                }
            }
            l_all = Some(l);
        }

        // Selection.
        let inputs = SelectInputs {
            eval_indices: &eval_idx,
            eval_labels: &eval_labels,
            l_all: l_all.as_deref(),
            initial_labels: initial_labels.as_deref(),
            iteration: k,
            total_iterations: cfg.iterations,
        };
        let curriculum = select(cfg.strategy, lib, &inputs, cfg.train_size, &mut child_rng(cfg.seed, it, Stage::Select, 0))?;

        // Training.
        if cfg.clear_buffer {
            buffer.clear();
        }
        let train = train_av(&mut agent, &mut buffer, &curriculum.indices, lib, cfg.episodes, &env, &mut child_rng(cfg.seed, it, Stage::Train, 0))?;

        let failures = eval_labels.iter().filter(|&&l| l == 1).count();
        let mut record = IterationRecord {
            iteration: k,
            eval_ids: eval_idx.iter().map(|&i| lib.scenarios[i].id.clone()).collect(),
            eval_success_rate: 100.0 * (1.0 - failures as f64 / eval_labels.len() as f64),
            eval_labels,
            predictor_losses: losses,
            curriculum,
            train,
            agent_checkpoint: None,
            predictor_checkpoint: None,
        };
        if let Some(d) = &dirs {
            write_json(&d.curriculum(k), &record.curriculum)?;
            if cfg.strategy.needs_predictor(k) {
                let p = d.predictor(k);
                predictor.as_ref().expect("predictor allocated").save(&p)?;
                record.predictor_checkpoint = Some(d.rel(&p));
            }
            let a = d.agent(k);
            record.agent_checkpoint = Some(d.rel(&a));
            crate::util::write_atomic(&d.replay(), &buffer.to_bytes())?;
            agent.save(&a)?;
            // The record goes last: its presence marks the iteration complete.
            write_json(&d.record(k), &record)?;
        }
        records.push(record);
    }
    Ok(RunOutput {
        records,
        initial_agent,
        agent,
        predictor,
    })
}
