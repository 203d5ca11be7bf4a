//! Soft actor-critic with a squashed Gaussian actor and twin critics.

mod replay;

pub use replay::{Batch, PerConfig, ReplayBuffer, SumTree, Transition};

use crate::error::{Error, Result};
use crate::nn::io_util::{fnv1a, put_bytes, put_f64s, Cursor};
use crate::nn::{net_from_bytes, net_to_bytes, AdamState, DenseNet, Head};
use crate::road::RoadGeometry;
use crate::scenario::AvAction;
use crate::seed::SimRng;
use crate::sim::{ActMode, ActionBounds, EnvConfig, Policy};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use std::path::Path;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Longitudinal gap normalizer for BV entries (m).
const REL_X_SCALE: f64 = 50.0;
/// Speed difference normalizer for BV entries (m/s).
const REL_V_SCALE: f64 = 10.0;
/// Headings stay within a few tenths of a radian on a straight road.
const HEADING_SCALE: f64 = 0.1;
pub const ALPHA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub target_entropy: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions stored before the first update.
    pub warmup: usize,
    /// Environment steps per gradient update.
    pub update_every: usize,
    pub per: Option<PerConfig>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 3,
            lr: 1e-4,
            gamma: 0.99,
            tau: 0.01,
            alpha: 0.1,
            auto_alpha: false,
            target_entropy: 0.0,
            alpha_lr: 1e-4,
            batch_size: 128,
            buffer_capacity: 1_000_000,
            warmup: 1000,
            update_every: 1,
            per: None,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

/// Maps a raw observation to network input. The AV tuple becomes road
/// progress, lateral offset from the road center in lanes, speed over the
/// limit and scaled heading; BV tuples become gap, lateral offset in lanes,
/// speed difference and scaled heading. Empty (all-zero) BV slots stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsTransform {
    pub length: f64,
    pub width: f64,
    pub lane_width: f64,
    pub v_max: f64,
}

impl ObsTransform {
    pub fn new(road: &RoadGeometry) -> Self {
        Self {
            length: road.length,
            width: road.width(),
            lane_width: road.lane_width,
            v_max: road.v_max,
        }
    }

    pub fn apply(&self, obs: &[f64], out: &mut [f64]) {
        let (ax, ay, av) = (obs[0], obs[1], obs[2]);
        out[0] = ax / self.length;
        out[1] = (ay - 0.5 * self.width) / self.lane_width;
        out[2] = av / self.v_max;
        out[3] = obs[3] / HEADING_SCALE;
        // Present BVs nearest first so each slot has a stable meaning.
        let mut order: [(f64, usize); 16] = [(f64::INFINITY, 0); 16];
        let slots = (obs.len() / 4 - 1).min(16);
        let mut k = 0;
        for j in 0..slots {
            let src = &obs[4 * (j + 1)..4 * (j + 2)];
            if src.iter().any(|&v| v != 0.0) {
                order[k] = ((src[0] - ax).hypot(src[1] - ay), j);
                k += 1;
            }
        }
        order[..k].sort_by(|a, b| a.0.total_cmp(&b.0));
        out[4..].fill(0.0);
        for (slot, &(_, j)) in order[..k].iter().enumerate() {
            let src = &obs[4 * (j + 1)..4 * (j + 2)];
            let dst = &mut out[4 * (slot + 1)..4 * (slot + 2)];
            dst[0] = (src[0] - ax) / REL_X_SCALE;
            dst[1] = (src[1] - ay) / self.lane_width;
            dst[2] = (src[2] - av) / REL_V_SCALE;
            dst[3] = src[3] / HEADING_SCALE;
        }
    }

    pub fn apply_rows(&self, flat: &[f64], dim: usize) -> Array2<f64> {
        let rows = flat.len() / dim;
        let mut out = Array2::zeros((rows, dim));
        for (src, mut dst) in flat.chunks_exact(dim).zip(out.axis_iter_mut(Axis(0))) {
            self.apply(src, dst.as_slice_mut().expect("contiguous row"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    /// Batch mean of `-log π`.
    pub entropy: f64,
    pub alpha: f64,
}

/// Squashed Gaussian sample for a batch, with everything the actor
/// gradient needs.
struct Squashed {
    sigma: Array2<f64>,
    noise: Array2<f64>,
    /// Unit-box action `tanh(μ + σξ)`.
    action: Array2<f64>,
    log_prob: Vec<f64>,
    /// Whether each log-std sat inside the clamp range.
    ls_free: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    pub cfg: SacConfig,
    obs_dim: usize,
    bounds: ActionBounds,
    transform: ObsTransform,
    pub actor: DenseNet,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    pub alpha: f64,
    pub updates: u64,
}

impl SacAgent {
    pub fn new(cfg: SacConfig, env: &EnvConfig, rng: &mut SimRng) -> Result<Self> {
        if cfg.alpha <= 0.0 || cfg.hidden == 0 || cfg.layers == 0 || cfg.batch_size == 0 {
            return Err(Error::Config("sac needs alpha > 0, hidden ≥ 1, layers ≥ 1, batch ≥ 1".into()));
        }
        let obs_dim = env.obs_dim();
        let hidden = vec![cfg.hidden; cfg.layers];
        let sizes = |i: usize, o: usize| [vec![i], hidden.clone(), vec![o]].concat();
        let mut actor = DenseNet::new(&sizes(obs_dim, 4), Head::Identity, 0.0, rng)?;
        // Start close to μ = 0, log σ = 0.
        actor.scale_output_layer(1e-3);
        let q1 = DenseNet::new(&sizes(obs_dim + 2, 1), Head::Identity, 0.0, rng)?;
        let q2 = DenseNet::new(&sizes(obs_dim + 2, 1), Head::Identity, 0.0, rng)?;
        Ok(Self {
            obs_dim,
            bounds: env.bounds,
            transform: ObsTransform::new(&env.road),
            actor_opt: AdamState::new(actor.num_params(), cfg.lr),
            q1_opt: AdamState::new(q1.num_params(), cfg.lr),
            q2_opt: AdamState::new(q2.num_params(), cfg.lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            alpha: cfg.alpha,
            actor,
            q1,
            q2,
            cfg,
            updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn transform(&self) -> &ObsTransform {
        &self.transform
    }

    pub fn new_buffer(&self) -> ReplayBuffer {
        ReplayBuffer::new(self.cfg.buffer_capacity, self.obs_dim, self.cfg.per)
    }

    /// Action in the unit box for a raw observation.
    pub fn act_unit(&self, obs: &[f64], mode: ActMode, rng: &mut SimRng) -> [f64; 2] {
        let mut x = vec![0.0; self.obs_dim];
        self.transform.apply(obs, &mut x);
        let mut scratch = Default::default();
        let out = self.actor.forward_one(&x, &mut scratch);
        let mut a = [0.0; 2];
        for k in 0..2 {
            let mu = out[k];
            a[k] = match mode {
                ActMode::Deterministic => mu.tanh(),
                ActMode::Stochastic => {
                    let ls = out[2 + k].clamp(self.cfg.log_std_min, self.cfg.log_std_max);
                    let xi: f64 = rng.sample(StandardNormal);
                    (mu + ls.exp() * xi).tanh()
                }
            };
        }
        a
    }

    fn squash(&self, head: ArrayView2<'_, f64>, noise: Array2<f64>) -> Squashed {
        let b = head.nrows();
        let mut sigma = Array2::zeros((b, 2));
        let mut action = Array2::zeros((b, 2));
        let mut ls_free = Array2::from_elem((b, 2), true);
        let mut log_prob = vec![0.0; b];
        for i in 0..b {
            for k in 0..2 {
                let raw = head[[i, 2 + k]];
                let ls = raw.clamp(self.cfg.log_std_min, self.cfg.log_std_max);
                ls_free[[i, k]] = raw == ls;
                let sd = ls.exp();
                let xi = noise[[i, k]];
                let u = head[[i, k]] + sd * xi;
                sigma[[i, k]] = sd;
                action[[i, k]] = u.tanh();
                log_prob[i] += -0.5 * xi * xi - ls - HALF_LN_2PI - log1m_tanh2(u);
            }
        }
        Squashed {
            sigma,
            noise,
            action,
            log_prob,
            ls_free,
        }
    }

    fn draw_noise(b: usize, rng: &mut SimRng) -> Array2<f64> {
        Array2::from_shape_fn((b, 2), |_| rng.sample(StandardNormal))
    }

    fn critic_input(obs: &Array2<f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[obs.view(), actions]).expect("row counts agree")
    }

    /// Weighted mean squared TD loss of one critic against fixed targets
    /// and its parameter gradient. Also returns the signed TD errors.
    pub fn critic_objective(&self, which: usize, x: ArrayView2<'_, f64>, y: &[f64], w: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let net = if which == 1 { &self.q1 } else { &self.q2 };
        let b = x.nrows();
        let cache = net.forward_cached(x, None)?;
        let mut g = Array2::zeros((b, 1));
        let mut loss = 0.0;
        let mut td = Vec::with_capacity(b);
        for i in 0..b {
            let d = cache.output[[i, 0]] - y[i];
            td.push(d);
            loss += w[i] * d * d;
            g[[i, 0]] = 2.0 * w[i] * d / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            let i = td.iter().position(|d| !d.is_finite()).unwrap_or(0);
            return Err(Error::NonFiniteLoss { sample: i, value: loss });
        }
        let mut grads = vec![0.0; net.num_params()];
        net.backward(&cache, g.view(), &mut grads);
        Ok((loss, grads, td))
    }

    /// `mean(α log π(a|s) − min(Q1, Q2)(s, a))` for `a` reparameterized
    /// with the given noise, and its gradient over actor parameters.
    /// Also returns the per-sample `log π`.
    pub fn actor_objective(&self, obs: &Array2<f64>, noise: Array2<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let b = obs.nrows();
        let cache = self.actor.forward_cached(obs.view(), None)?;
        let sq = self.squash(cache.output.view(), noise);
        let x = Self::critic_input(obs, sq.action.view());
        let c1 = self.q1.forward_cached(x.view(), None)?;
        let c2 = self.q2.forward_cached(x.view(), None)?;
        let ones = Array2::ones((b, 1));
        let g1 = self.q1.input_grad(&c1, ones.view());
        let g2 = self.q2.input_grad(&c2, ones.view());
        let mut loss = 0.0;
        let mut gl = Array2::zeros((b, 4));
        let bf = b as f64;
        for i in 0..b {
            let (q1, q2) = (c1.output[[i, 0]], c2.output[[i, 0]]);
            let (qmin, gq) = if q1 <= q2 { (q1, &g1) } else { (q2, &g2) };
            loss += self.alpha * sq.log_prob[i] - qmin;
            for k in 0..2 {
                let a = sq.action[[i, k]];
                let dq_da = gq[[i, self.obs_dim + k]];
                let gu = -dq_da * (1.0 - a * a) / bf + self.alpha * 2.0 * a / bf;
                gl[[i, k]] = gu;
                if sq.ls_free[[i, k]] {
                    gl[[i, 2 + k]] = gu * sq.sigma[[i, k]] * sq.noise[[i, k]] - self.alpha / bf;
                }
            }
        }
        loss /= bf;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { sample: 0, value: loss });
        }
        let mut grads = vec![0.0; self.actor.num_params()];
        self.actor.backward(&cache, gl.view(), &mut grads);
        Ok((loss, grads, sq.log_prob))
    }

    /// Soft Bellman targets for a batch.
    fn targets(&self, batch: &Batch, next: &Array2<f64>, rng: &mut SimRng) -> Result<Vec<f64>> {
        let b = batch.len();
        let head = self.actor.forward_batch(next.view())?;
        let sq = self.squash(head.view(), Self::draw_noise(b, rng));
        let x = Self::critic_input(next, sq.action.view());
        let t1 = self.q1_target.forward_batch(x.view())?;
        let t2 = self.q2_target.forward_batch(x.view())?;
        Ok((0..b)
            .map(|i| {
                let soft = t1[[i, 0]].min(t2[[i, 0]]) - self.alpha * sq.log_prob[i];
                batch.rewards[i] + self.cfg.gamma * (1.0 - batch.dones[i]) * soft
            })
            .collect())
    }

    /// One gradient step on critics, actor and (optionally) temperature,
    /// followed by the soft target update. Returns the report and the
    /// absolute TD errors for priority refresh.
    pub fn update(&mut self, batch: &Batch, rng: &mut SimRng) -> Result<(UpdateReport, Vec<f64>)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Empty("sac batch".into()));
        }
        let obs = self.transform.apply_rows(&batch.obs, self.obs_dim);
        let next = self.transform.apply_rows(&batch.next_obs, self.obs_dim);
        let y = self.targets(batch, &next, rng)?;
        let acts = ArrayView2::from_shape((b, 2), &batch.actions).map_err(|e| Error::Shape(e.to_string()))?;
        let x = Self::critic_input(&obs, acts);
        let (l1, g1, td1) = self.critic_objective(1, x.view(), &y, &batch.weights)?;
        let (l2, g2, td2) = self.critic_objective(2, x.view(), &y, &batch.weights)?;
        self.q1_opt.step(self.q1.params_mut(), &g1)?;
        self.q2_opt.step(self.q2.params_mut(), &g2)?;

        let (la, ga, log_prob) = self.actor_objective(&obs, Self::draw_noise(b, rng))?;
        self.actor_opt.step(self.actor.params_mut(), &ga)?;

        let mean_lp = log_prob.iter().sum::<f64>() / b as f64;
        let alpha_loss = -self.alpha * (mean_lp + self.cfg.target_entropy);
        if self.cfg.auto_alpha {
            self.alpha = auto_alpha_step(self.alpha, mean_lp, self.cfg.target_entropy, self.cfg.alpha_lr);
        }
        self.soft_update();
        self.updates += 1;
        let td = td1.iter().zip(&td2).map(|(a, b)| 0.5 * (a.abs() + b.abs())).collect();
        Ok((
            UpdateReport {
                q1_loss: l1,
                q2_loss: l2,
                actor_loss: la,
                alpha_loss,
                entropy: -mean_lp,
                alpha: self.alpha,
            },
            td,
        ))
    }

    /// Samples from `buffer`, updates, and refreshes priorities.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer, rng: &mut SimRng) -> Result<UpdateReport> {
        let batch = buffer.sample(self.cfg.batch_size, rng)?;
        let (report, td) = self.update(&batch, rng)?;
        buffer.update_priorities(&batch.indices, &td);
        Ok(report)
    }

    /// `target ← (1 − τ)·target + τ·online` for both critics.
    pub fn soft_update(&mut self) {
        let tau = self.cfg.tau;
        for (t, o) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)] {
            for (tp, op) in t.params_mut().iter_mut().zip(o.params()) {
                *tp = (1.0 - tau) * *tp + tau * op;
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(b"CLSA");
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&Meta {
            cfg: self.cfg.clone(),
            obs_dim: self.obs_dim,
            bounds: self.bounds,
            transform: self.transform,
        })?;
        put_bytes(&mut out, &meta);
        put_f64s(&mut out, &[self.alpha]);
        out.extend_from_slice(&self.updates.to_le_bytes());
        for net in [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target] {
            put_bytes(&mut out, &net_to_bytes(net));
        }
        for st in [&self.actor_opt, &self.q1_opt, &self.q2_opt] {
            put_f64s(&mut out, &st.m);
            put_f64s(&mut out, &st.v);
            out.extend_from_slice(&st.step.to_le_bytes());
            put_f64s(&mut out, &[st.lr, st.beta1, st.beta2, st.eps]);
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 {
            return Err(Error::Shape("truncated agent checkpoint".into()));
        }
        let (body, sum) = buf.split_at(buf.len() - 8);
        let mut c = Cursor::new(body);
        if c.take(4)? != b"CLSA" {
            return Err(Error::Corrupt("not an agent checkpoint".into()));
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if u64::from_le_bytes(sum.try_into().expect("8 bytes")) != fnv1a(body) {
            return Err(Error::Corrupt("agent checkpoint checksum mismatch".into()));
        }
        let meta: Meta = serde_json::from_slice(c.bytes()?)?;
        let alpha = c.f64s()?.first().copied().ok_or_else(|| Error::Corrupt("missing alpha".into()))?;
        let updates = c.u64()?;
        let mut nets = Vec::with_capacity(5);
        for _ in 0..5 {
            nets.push(net_from_bytes(c.bytes()?)?);
        }
        let mut opts = Vec::with_capacity(3);
        for net in &nets[..3] {
            let m = c.f64s()?;
            let v = c.f64s()?;
            let step = c.u64()?;
            let h = c.f64s()?;
            if m.len() != net.num_params() || v.len() != m.len() || h.len() != 4 {
                return Err(Error::Shape("optimizer state does not match network".into()));
            }
            opts.push(AdamState {
                m,
                v,
                step,
                lr: h[0],
                beta1: h[1],
                beta2: h[2],
                eps: h[3],
            });
        }
        if !c.is_empty() {
            return Err(Error::Shape("trailing bytes in agent checkpoint".into()));
        }
        let mut nets = nets.into_iter();
        let mut opts = opts.into_iter();
        let mut next = || nets.next().expect("five nets");
        Ok(Self {
            cfg: meta.cfg,
            obs_dim: meta.obs_dim,
            bounds: meta.bounds,
            transform: meta.transform,
            actor: next(),
            q1: next(),
            q2: next(),
            q1_target: next(),
            q2_target: next(),
            actor_opt: opts.next().expect("three optimizers"),
            q1_opt: opts.next().expect("three optimizers"),
            q2_opt: opts.next().expect("three optimizers"),
            alpha,
            updates,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Digest of every parameter and optimizer value.
    pub fn checksum(&self) -> u64 {
        fnv1a(&self.to_bytes().expect("serializable"))
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    cfg: SacConfig,
    obs_dim: usize,
    bounds: ActionBounds,
    transform: ObsTransform,
}

impl Policy for SacAgent {
    fn act(&self, obs: &[f64], mode: ActMode, rng: &mut SimRng) -> AvAction {
        self.bounds.from_unit(self.act_unit(obs, mode, rng))
    }
}

/// `log(1 − tanh²u)` without cancellation for large `|u|`.
pub fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `α ← α − λ(E[−log π] − H̄)`, floored at a small positive value.
pub fn auto_alpha_step(alpha: f64, mean_log_prob: f64, target_entropy: f64, lr: f64) -> f64 {
    (alpha - lr * (-mean_log_prob - target_entropy)).max(ALPHA_FLOOR)
}
