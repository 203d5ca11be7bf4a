//! Scenario selection: the difficulty predictor, proportional sampling of
//! training curricula and the baseline selection rules.

mod predictor;

pub use predictor::{bce_report, featurize_library, gather_rows, predict_all, train_predictor, DifficultyPredictor, PredictorConfig};

use crate::error::{Error, Result};
use crate::scenario::ScenarioLibrary;
use crate::seed::SimRng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const LABEL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Clic,
    Rand,
    RandFail,
    Fail,
    PclBv,
    PclLabel,
    Order,
    /// Uniform selection, prioritized replay inside the learner.
    Per,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Clic,
        Strategy::Rand,
        Strategy::RandFail,
        Strategy::Fail,
        Strategy::PclBv,
        Strategy::PclLabel,
        Strategy::Order,
        Strategy::Per,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Clic => "clic",
            Strategy::Rand => "rand",
            Strategy::RandFail => "rand_fail",
            Strategy::Fail => "fail",
            Strategy::PclBv => "pcl_bv",
            Strategy::PclLabel => "pcl_label",
            Strategy::Order => "order",
            Strategy::Per => "per",
        }
    }

    /// Whether the predictor has to be trained in a given iteration.
    pub fn needs_predictor(self, iteration: usize) -> bool {
        match self {
            Strategy::Clic | Strategy::Order => true,
            Strategy::PclLabel => iteration == 1,
            _ => false,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

/// One iteration's training selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub strategy: Strategy,
    pub iteration: usize,
    pub ids: Vec<String>,
    /// Library positions of `ids`.
    pub indices: Vec<usize>,
    /// Probability with which each entry was drawn.
    pub weights: Vec<f64>,
}

impl Curriculum {
    fn build(lib: &ScenarioLibrary, strategy: Strategy, iteration: usize, picks: Vec<(usize, f64)>) -> Self {
        Self {
            strategy,
            iteration,
            ids: picks.iter().map(|&(i, _)| lib.scenarios[i].id.clone()).collect(),
            indices: picks.iter().map(|&(i, _)| i).collect(),
            weights: picks.iter().map(|&(_, w)| w).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `P(j) = max(l_j, floor) / Σ_i max(l_i, floor)`.
pub fn selection_probabilities(labels: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = labels.iter().map(|&l| if l.is_finite() { l.max(LABEL_FLOOR) } else { LABEL_FLOOR }).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|l| l / total).collect()
}

/// Inverse-CDF sampler over a fixed discrete distribution.
#[derive(Debug, Clone)]
pub struct CdfSampler {
    cdf: Vec<f64>,
}

impl CdfSampler {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self { cdf }
    }

    pub fn draw(&self, rng: &mut SimRng) -> usize {
        let total = *self.cdf.last().expect("non-empty distribution");
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// `n` independent draws with replacement, each scenario with probability
/// proportional to its floored failure probability.
pub fn weighted_sample(lib: &ScenarioLibrary, n: usize, l_all: &[f64], iteration: usize, rng: &mut SimRng) -> Result<Curriculum> {
    if l_all.len() != lib.len() {
        return Err(Error::Shape(format!("{} labels for {} scenarios", l_all.len(), lib.len())));
    }
    if lib.is_empty() || n == 0 {
        return Err(Error::Empty("weighted sample needs a library and n ≥ 1".into()));
    }
    let p = selection_probabilities(l_all);
    let sampler = CdfSampler::new(&p);
    let picks = (0..n)
        .map(|_| {
            let j = sampler.draw(rng);
            (j, p[j])
        })
        .collect();
    Ok(Curriculum::build(lib, Strategy::Clic, iteration, picks))
}

/// Everything the selection rules may consult.
#[derive(Debug, Clone, Copy)]
pub struct SelectInputs<'a> {
    /// Library positions evaluated this iteration.
    pub eval_indices: &'a [usize],
    /// Their accident labels.
    pub eval_labels: &'a [u8],
    /// Current predicted failure probabilities.
    pub l_all: Option<&'a [f64]>,
    /// Predictions from the first iteration.
    pub initial_labels: Option<&'a [f64]>,
    /// 1-based iteration and total iterations.
    pub iteration: usize,
    pub total_iterations: usize,
}

fn uniform_from(pool: &[usize], k: usize, rng: &mut SimRng) -> Vec<(usize, f64)> {
    let w = 1.0 / pool.len() as f64;
    (0..k).map(|_| (pool[rng.random_range(0..pool.len())], w)).collect()
}

/// 1-based stage of `iteration` when `t` iterations are split into `stages`
/// equal phases.
pub fn stage_of(iteration: usize, t: usize, stages: usize) -> usize {
    ((iteration * stages).div_ceil(t.max(1))).clamp(1, stages)
}

pub fn select(strategy: Strategy, lib: &ScenarioLibrary, inputs: &SelectInputs<'_>, n: usize, rng: &mut SimRng) -> Result<Curriculum> {
    if lib.is_empty() || n == 0 {
        return Err(Error::Empty("selection needs a library and n ≥ 1".into()));
    }
    let m = lib.len();
    let all: Vec<usize> = (0..m).collect();
    let need = |name: &str, v: Option<&'_ [f64]>| -> Result<Vec<f64>> {
        let v = v.ok_or_else(|| Error::MissingInput(format!("strategy {strategy} needs {name}")))?;
        if v.len() != m {
            return Err(Error::Shape(format!("{name} has {} entries for {m} scenarios", v.len())));
        }
        Ok(v.to_vec())
    };
    let failures: Vec<usize> = inputs
        .eval_indices
        .iter()
        .zip(inputs.eval_labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&i, _)| i)
        .collect();
    let picks = match strategy {
        Strategy::Clic => {
            let l = need("l_all", inputs.l_all)?;
            let mut c = weighted_sample(lib, n, &l, inputs.iteration, rng)?;
            c.strategy = strategy;
            return Ok(c);
        }
        Strategy::Rand | Strategy::Per => uniform_from(&all, n, rng),
        Strategy::RandFail => {
            let mut p = uniform_from(&all, n.div_ceil(2), rng);
            let pool = if failures.is_empty() { &all } else { &failures };
            p.extend(uniform_from(pool, n / 2, rng));
            p
        }
        Strategy::Fail => uniform_from(if failures.is_empty() { &all } else { &failures }, n, rng),
        Strategy::PclBv => {
            let stage = stage_of(inputs.iteration, inputs.total_iterations, 4);
            let min_n = lib.scenarios.iter().map(|s| s.num_bvs()).min().unwrap_or(0);
            let cap = stage.max(min_n);
            let pool: Vec<usize> = all.iter().copied().filter(|&i| lib.scenarios[i].num_bvs() <= cap).collect();
            uniform_from(&pool, n, rng)
        }
        Strategy::PclLabel => {
            let l = need("initial_labels", inputs.initial_labels)?;
            let stage = stage_of(inputs.iteration, inputs.total_iterations, 5);
            let limit = 0.2 * stage as f64;
            let mut pool: Vec<usize> = all.iter().copied().filter(|&i| l[i] < limit).collect();
            if pool.is_empty() {
                // Nothing that easy: start from the easiest scenarios instead.
                let lo = l.iter().cloned().fold(f64::INFINITY, f64::min);
                pool = all.iter().copied().filter(|&i| l[i] == lo).collect();
            }
            uniform_from(&pool, n, rng)
        }
        Strategy::Order => {
            let l = need("l_all", inputs.l_all)?;
            if n > m {
                return Err(Error::Config(format!("order needs n ≤ M, got n = {n}, M = {m}")));
            }
            let mut ranked = all.clone();
            ranked.sort_by(|&a, &b| l[a].total_cmp(&l[b]).then(a.cmp(&b)));
            (0..n)
                .map(|k| {
                    let (lo, hi) = (k * m / n, (k + 1) * m / n);
                    (ranked[rng.random_range(lo..hi)], 1.0 / (hi - lo) as f64)
                })
                .collect()
        }
    };
    Ok(Curriculum::build(lib, strategy, inputs.iteration, picks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures;
    use crate::seed::rng_from;

    fn lib(m: usize) -> ScenarioLibrary {
        fixtures::library((0..m).map(|i| fixtures::simple(&format!("s{i:03}"), 1 + i % 4, 20)).collect())
    }

    fn inputs<'a>(ei: &'a [usize], el: &'a [u8], l: Option<&'a [f64]>, it: usize, t: usize) -> SelectInputs<'a> {
        SelectInputs {
            eval_indices: ei,
            eval_labels: el,
            l_all: l,
            initial_labels: l,
            iteration: it,
            total_iterations: t,
        }
    }

    #[test]
    fn probabilities_follow_labels() {
        let p = selection_probabilities(&[0.9, 0.1, 0.0, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] - 0.1).abs() < 1e-7);
        assert!(p[2] > 0.0 && p[2] < 1e-7);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let u = selection_probabilities(&[0.3; 5]);
        assert!(u.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let z = selection_probabilities(&[0.0; 4]);
        assert!(z.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn cdf_sampler_handles_zero_mass_entries() {
        let s = CdfSampler::new(&[0.0, 1.0, 0.0, 1.0, 0.0]);
        let mut rng = rng_from(0);
        for _ in 0..1000 {
            let i = s.draw(&mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn fail_draws_only_failures() {
        let l = lib(10);
        let c = select(Strategy::Fail, &l, &inputs(&[2, 5, 7], &[1, 0, 1], None, 1, 5), 50, &mut rng_from(1)).unwrap();
        assert!(c.indices.iter().all(|&i| i == 2 || i == 7));
        assert_eq!(c.len(), 50);
        // No failures: falls back to uniform.
        let c = select(Strategy::Fail, &l, &inputs(&[2], &[0], None, 1, 5), 20, &mut rng_from(1)).unwrap();
        assert_eq!(c.len(), 20);
    }

    #[test]
    fn rand_fail_halves() {
        let l = lib(10);
        let c = select(Strategy::RandFail, &l, &inputs(&[3], &[1], None, 1, 5), 7, &mut rng_from(2)).unwrap();
        assert_eq!(c.len(), 7);
        assert!(c.indices[4..].iter().all(|&i| i == 3));
    }

    #[test]
    fn pcl_bv_first_stage_is_single_bv() {
        let l = lib(40);
        let c = select(Strategy::PclBv, &l, &inputs(&[], &[], None, 1, 8), 100, &mut rng_from(3)).unwrap();
        assert!(c.indices.iter().all(|&i| l.scenarios[i].num_bvs() == 1));
        let c = select(Strategy::PclBv, &l, &inputs(&[], &[], None, 8, 8), 200, &mut rng_from(3)).unwrap();
        assert!(c.indices.iter().any(|&i| l.scenarios[i].num_bvs() == 4));
        assert_eq!(stage_of(1, 8, 4), 1);
        assert_eq!(stage_of(2, 8, 4), 1);
        assert_eq!(stage_of(3, 8, 4), 2);
        assert_eq!(stage_of(10, 10, 5), 5);
    }

    #[test]
    fn pcl_label_stages() {
        let l = lib(10);
        let labels: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let c = select(Strategy::PclLabel, &l, &inputs(&[], &[], Some(&labels), 1, 10), 50, &mut rng_from(4)).unwrap();
        assert!(c.indices.iter().all(|&i| labels[i] < 0.2));
    }

    #[test]
    fn order_covers_every_rank_interval() {
        let l = lib(12);
        let labels: Vec<f64> = (0..12).map(|i| ((i * 7) % 12) as f64 / 12.0).collect();
        let c = select(Strategy::Order, &l, &inputs(&[], &[], Some(&labels), 1, 5), 12, &mut rng_from(5)).unwrap();
        let mut idx = c.indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 12);
        let c = select(Strategy::Order, &l, &inputs(&[], &[], Some(&labels), 1, 5), 3, &mut rng_from(5)).unwrap();
        // Interval k holds ranks 4k..4k+4.
        for (k, &i) in c.indices.iter().enumerate() {
            let rank = (0..12).filter(|&j| labels[j] < labels[i]).count();
            assert_eq!(rank / 4, k);
        }
    }

    #[test]
    fn label_strategies_need_labels() {
        let l = lib(4);
        for s in [Strategy::Clic, Strategy::Order, Strategy::PclLabel] {
            assert!(matches!(
                select(s, &l, &inputs(&[], &[], None, 1, 5), 2, &mut rng_from(0)),
                Err(Error::MissingInput(_))
            ));
        }
        assert!(matches!("bogus".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
    }

    #[test]
    fn weighted_sample_with_equal_labels_is_uniform() {
        let l = lib(4);
        let c = weighted_sample(&l, 40_000, &[0.5; 4], 1, &mut rng_from(6)).unwrap();
        let n = 40_000f64;
        let sd = (n * 0.25 * 0.75).sqrt();
        for j in 0..4 {
            let k = c.indices.iter().filter(|&&i| i == j).count() as f64;
            assert!((k - n / 4.0).abs() < 3.0 * sd);
        }
    }
}
