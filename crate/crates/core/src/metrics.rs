//! Library-wide testing, safety/efficiency/comfort metrics and the three
//! analyses run on trained checkpoints: the agent × curriculum matrix, the
//! reweighting histograms and the perception-mask individualization probe.

use crate::curriculum::{predict_all, train_predictor, weighted_sample, Curriculum, DifficultyPredictor, PredictorConfig};
use crate::error::{Error, Result};
use crate::pipeline::{evaluate_av, rollouts};
use crate::scenario::{ScenarioLibrary, VehicleState};
use crate::seed::{child_rng, SimRng, Stage};
use crate::sim::{wrap_angle, ActMode, EnvConfig, Policy};
use crate::util::write_atomic;
use crate::AvAction;
use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub id: String,
    pub label: u8,
    pub elapsed_time: f64,
    pub distance: f64,
    /// AV speed at every frame, initial frame included.
    pub speeds: Vec<f64>,
    pub headings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub dt: f64,
    pub rows: Vec<OutcomeRow>,
}

impl OutcomeTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }

    pub fn success_rate(&self) -> f64 {
        100.0 * (1.0 - self.failures() as f64 / self.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "label", "elapsed_time", "distance", "steps"])?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                r.label.to_string(),
                r.elapsed_time.to_string(),
                r.distance.to_string(),
                (r.speeds.len() - 1).to_string(),
            ])?;
        }
        write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
    }
}

/// Deterministic rollout of every library scenario. `jobs` bounds the
/// worker pool; results do not depend on it.
pub fn test_all(policy: &dyn Policy, lib: &ScenarioLibrary, env: &EnvConfig, jobs: Option<usize>) -> Result<OutcomeTable> {
    if lib.is_empty() {
        return Err(Error::Empty("scenario library".into()));
    }
    let idx: Vec<usize> = (0..lib.len()).collect();
    let results = match jobs {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(|| rollouts(policy, lib, &idx, env, 0.99))?,
        None => rollouts(policy, lib, &idx, env, 0.99)?,
    };
    Ok(OutcomeTable {
        dt: lib.dt,
        rows: results
            .into_iter()
            .map(|r| OutcomeRow {
                id: r.scenario_id,
                label: r.accident_label,
                elapsed_time: r.elapsed_time,
                distance: r.longitudinal_distance,
                speeds: r.av_trajectory.iter().map(|s| s.v).collect(),
                headings: r.av_trajectory.iter().map(|s| s.theta).collect(),
            })
            .collect(),
    })
}

/// Failure is the positive class; `before` decides the true class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(before: &[u8], after: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&b, &a) in before.iter().zip(after) {
            match (b, a) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fn_ += 1,
                (_, 1) => c.fp += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Share of previously failed scenarios now passed, if any failed.
    pub fn fnr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| 100.0 * self.fn_ as f64 / p as f64)
    }

    /// Share of previously passed scenarios still passed, if any passed.
    pub fn tnr(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| 100.0 * self.tn as f64 / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenarios: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "FNR")]
    pub fnr: Option<f64>,
    #[serde(rename = "TNR")]
    pub tnr: Option<f64>,
    #[serde(rename = "CPS")]
    pub cps: Option<f64>,
    #[serde(rename = "CPM")]
    pub cpm: Option<f64>,
    pub vel: f64,
    pub succ_vel: Option<f64>,
    pub acc: f64,
    pub jerk: f64,
    pub ang_vel: f64,
    pub lat_acc: f64,
    pub confusion: Confusion,
    pub n_acc: usize,
    pub t_total: f64,
    pub d_total: f64,
}

/// Running mean over steps.
#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

pub fn compute_metrics(before: &OutcomeTable, after: &OutcomeTable) -> Result<MetricsReport> {
    if after.is_empty() {
        return Err(Error::Empty("outcome table".into()));
    }
    let by_id: HashMap<&str, u8> = before.rows.iter().map(|r| (r.id.as_str(), r.label)).collect();
    if by_id.len() != after.len() || after.rows.iter().any(|r| !by_id.contains_key(r.id.as_str())) {
        return Err(Error::KeyMismatch("before and after tables cover different scenarios".into()));
    }
    let b: Vec<u8> = after.rows.iter().map(|r| by_id[r.id.as_str()]).collect();
    let a: Vec<u8> = after.rows.iter().map(|r| r.label).collect();
    let confusion = Confusion::from_labels(&b, &a);

    let dt = after.dt;
    let [mut vel, mut succ_vel, mut acc, mut jerk, mut ang, mut lat] = std::array::from_fn(|_| Mean::default());
    for r in &after.rows {
        let mut prev_a: Option<f64> = None;
        for t in 1..r.speeds.len() {
            let v = r.speeds[t];
            vel.add(v);
            if r.label == 0 {
                succ_vel.add(v);
            }
            let a_t = (v - r.speeds[t - 1]) / dt;
            acc.add(a_t.abs());
            if let Some(p) = prev_a {
                jerk.add(((a_t - p) / dt).abs());
            }
            prev_a = Some(a_t);
            let w = (wrap_angle(r.headings[t] - r.headings[t - 1]) / dt).abs();
            ang.add(w);
            lat.add(v * w);
        }
    }
    let n_acc = after.failures();
    let t_total: f64 = after.rows.iter().map(|r| r.elapsed_time).sum();
    let d_total: f64 = after.rows.iter().map(|r| r.distance).sum();
    Ok(MetricsReport {
        scenarios: after.len(),
        sr: after.success_rate(),
        fnr: confusion.fnr(),
        tnr: confusion.tnr(),
        cps: (t_total > 0.0).then(|| n_acc as f64 / t_total),
        cpm: (d_total > 0.0).then(|| n_acc as f64 / d_total),
        vel: vel.get().unwrap_or(0.0),
        succ_vel: succ_vel.get(),
        acc: acc.get().unwrap_or(0.0),
        jerk: jerk.get().unwrap_or(0.0),
        ang_vel: ang.get().unwrap_or(0.0),
        lat_acc: lat.get().unwrap_or(0.0),
        confusion,
        n_acc,
        t_total,
        d_total,
    })
}

/// Spearman rank correlation with average ranks for ties. A constant
/// series carries no ordering information and yields 0.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrMatrix {
    /// `sr[i][j]`: agent checkpoint `i` on the curriculum of predictor `j`.
    pub sr: Vec<Vec<f64>>,
    pub curricula: Vec<Curriculum>,
}

impl SrMatrix {
    /// Mean over columns of the correlation between SR and agent iteration.
    pub fn agent_trend(&self) -> f64 {
        let t = self.sr.len();
        let cols = self.sr.first().map_or(0, Vec::len);
        let x: Vec<f64> = (0..t).map(|i| i as f64).collect();
        (0..cols).map(|j| spearman(&x, &self.sr.iter().map(|r| r[j]).collect::<Vec<_>>())).sum::<f64>() / cols as f64
    }

    /// Mean over rows, first agent row skipped, of the correlation between
    /// SR and predictor iteration.
    pub fn predictor_trend(&self) -> f64 {
        let rows = &self.sr[1.min(self.sr.len() - 1)..];
        let x: Vec<f64> = (0..self.sr[0].len()).map(|j| j as f64).collect();
        rows.iter().map(|r| spearman(&x, r)).sum::<f64>() / rows.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["agent_iteration".to_string()];
        header.extend((1..=self.sr[0].len()).map(|j| format!("curriculum_{j}")));
        w.write_record(&header)?;
        for (i, row) in self.sr.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        write_atomic(path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
    }
}

/// Crosses agent checkpoints with the curricula their sibling predictors
/// select. Each column uses its own fixed seed, so every agent faces the
/// same scenarios within a column.
pub fn matrix_experiment<P: Policy>(
    agents: &[P],
    predictors: &[DifficultyPredictor],
    lib: &ScenarioLibrary,
    feats: ArrayView2<'_, f64>,
    n: usize,
    seed: u64,
    env: &EnvConfig,
) -> Result<SrMatrix> {
    if agents.is_empty() || predictors.is_empty() {
        return Err(Error::Empty("matrix needs at least one agent and one predictor".into()));
    }
    let mut curricula = Vec::with_capacity(predictors.len());
    for (j, p) in predictors.iter().enumerate() {
        let l = predict_all(p, feats)?;
        let it = j as u64 + 1;
        curricula.push(weighted_sample(lib, n, &l, j + 1, &mut child_rng(seed, it, Stage::Matrix, 0))?);
    }
    let mut needed: Vec<usize> = curricula.iter().flat_map(|c| c.indices.iter().copied()).collect();
    needed.sort_unstable();
    needed.dedup();
    let mut sr = Vec::with_capacity(agents.len());
    for a in agents {
        let labels: HashMap<usize, u8> = needed
            .iter()
            .copied()
            .zip(rollouts(a, lib, &needed, env, 0.99)?.iter().map(|r| r.accident_label))
            .collect();
        sr.push(
            curricula
                .iter()
                .map(|c| 100.0 * c.indices.iter().filter(|i| labels[i] == 0).count() as f64 / c.len() as f64)
                .collect(),
        );
    }
    Ok(SrMatrix { sr, curricula })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistograms {
    /// `bins + 1` edges spanning [0, 1].
    pub edges: Vec<f64>,
    /// Normalized frequencies of drawn labels.
    pub uniform: Vec<f64>,
    pub weighted: Vec<f64>,
    /// `weighted / uniform` per bin; absent where the uniform draw is empty.
    pub ratio: Vec<Option<f64>>,
    /// Mean label of the library scenarios falling in each bin.
    pub bin_mean_label: Vec<Option<f64>>,
    /// Least-squares `c` in `ratio ≈ c · bin_mean_label`.
    pub slope: Option<f64>,
    /// Fit quality; absent when the ratio series is flat.
    pub r_squared: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightAnalysis {
    pub ids: Vec<String>,
    pub labels_before: Vec<f64>,
    pub labels_after: Vec<f64>,
    pub before: LabelHistograms,
    pub after: LabelHistograms,
}

fn bin_of(l: f64, bins: usize) -> usize {
    ((l * bins as f64) as usize).min(bins - 1)
}

/// Uniform vs label-proportional draws of the library, binned by label.
pub fn label_histograms(labels: &[f64], bins: usize, draws: usize, rng: &mut SimRng) -> Result<LabelHistograms> {
    if labels.is_empty() || bins == 0 || draws == 0 {
        return Err(Error::Empty("labels, bins and draws must be nonzero".into()));
    }
    let sampler = crate::curriculum::CdfSampler::new(&crate::curriculum::selection_probabilities(labels));
    let mut uni = vec![0usize; bins];
    let mut wtd = vec![0usize; bins];
    for _ in 0..draws {
        uni[bin_of(labels[rng.random_range(0..labels.len())], bins)] += 1;
        wtd[bin_of(labels[sampler.draw(rng)], bins)] += 1;
    }
    let mut sum = vec![0.0; bins];
    let mut cnt = vec![0usize; bins];
    for &l in labels {
        let b = bin_of(l, bins);
        sum[b] += l.max(crate::curriculum::LABEL_FLOOR);
        cnt[b] += 1;
    }
    let freq = |c: &[usize]| c.iter().map(|&k| k as f64 / draws as f64).collect::<Vec<_>>();
    let (uniform, weighted) = (freq(&uni), freq(&wtd));
    let ratio: Vec<Option<f64>> = uniform.iter().zip(&weighted).map(|(&u, &w)| (u > 0.0).then(|| w / u)).collect();
    let bin_mean_label: Vec<Option<f64>> = sum.iter().zip(&cnt).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect();
    let pts: Vec<(f64, f64)> = ratio.iter().zip(&bin_mean_label).filter_map(|(r, x)| Some(((*x)?, (*r)?))).collect();
    let (slope, r_squared) = proportional_fit(&pts);
    Ok(LabelHistograms {
        edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
        uniform,
        weighted,
        ratio,
        bin_mean_label,
        slope,
        r_squared,
    })
}

/// Fits `y = c·x` through the origin; R² is measured against the mean of y.
pub fn proportional_fit(pts: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    if pts.is_empty() || sxx == 0.0 {
        return (None, None);
    }
    let c = pts.iter().map(|(x, y)| x * y).sum::<f64>() / sxx;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|(_, y)| (y - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|(x, y)| (y - c * x).powi(2)).sum();
    let r2 = (ss_tot > 1e-12 * pts.len() as f64).then(|| 1.0 - ss_res / ss_tot);
    (Some(c), r2)
}

pub fn reweighting_analysis(
    before: &DifficultyPredictor,
    after: &DifficultyPredictor,
    lib: &ScenarioLibrary,
    feats: ArrayView2<'_, f64>,
    bins: usize,
    draws: usize,
    seed: u64,
) -> Result<ReweightAnalysis> {
    let lb = predict_all(before, feats)?;
    let la = predict_all(after, feats)?;
    Ok(ReweightAnalysis {
        ids: lib.scenarios.iter().map(|s| s.id.clone()).collect(),
        before: label_histograms(&lb, bins, draws, &mut child_rng(seed, 0, Stage::Reweight, 0))?,
        after: label_histograms(&la, bins, draws, &mut child_rng(seed, 0, Stage::Reweight, 1))?,
        labels_before: lb,
        labels_after: la,
    })
}

impl ReweightAnalysis {
    /// `scatter.csv`, `histograms.csv` and `analysis.json` under `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "label_before", "label_after"])?;
        for ((id, b), a) in self.ids.iter().zip(&self.labels_before).zip(&self.labels_after) {
            w.write_record([id.clone(), b.to_string(), a.to_string()])?;
        }
        write_atomic(&dir.join("scatter.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["predictor", "bin_lo", "bin_hi", "uniform", "weighted", "ratio", "bin_mean_label"])?;
        for (name, h) in [("before", &self.before), ("after", &self.after)] {
            for k in 0..h.uniform.len() {
                w.write_record([
                    name.to_string(),
                    h.edges[k].to_string(),
                    h.edges[k + 1].to_string(),
                    h.uniform[k].to_string(),
                    h.weighted[k].to_string(),
                    opt(h.ratio[k]),
                    opt(h.bin_mean_label[k]),
                ])?;
            }
        }
        write_atomic(&dir.join("histograms.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        crate::util::write_json(&dir.join("analysis.json"), self)
    }
}

/// Hides background vehicles ahead of the AV on its left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionMask {
    pub dx_max: f64,
    /// Minimum lateral offset, as a multiple of the lane width.
    pub dy_factor: f64,
    pub lane_width: f64,
}

impl PerceptionMask {
    pub fn new(lane_width: f64) -> Self {
        Self {
            dx_max: 30.0,
            dy_factor: 0.5,
            lane_width,
        }
    }

    pub fn is_left_front(&self, av: &VehicleState, bv: &VehicleState) -> bool {
        let dx = bv.x - av.x;
        dx > 0.0 && dx <= self.dx_max && bv.y - av.y > self.dy_factor * self.lane_width
    }

    /// Zeroes left-front BV slots of a raw observation in place.
    pub fn apply(&self, obs: &mut [f64]) {
        let av = VehicleState::new(obs[0], obs[1], obs[2], obs[3]);
        for slot in obs[4..].chunks_exact_mut(4) {
            if slot.iter().all(|&v| v == 0.0) {
                continue;
            }
            if self.is_left_front(&av, &VehicleState::new(slot[0], slot[1], slot[2], slot[3])) {
                slot.fill(0.0);
            }
        }
    }
}

/// A policy that only sees what the mask lets through.
pub struct MaskedPolicy<'a, P: Policy> {
    pub inner: &'a P,
    pub mask: PerceptionMask,
}

impl<P: Policy> Policy for MaskedPolicy<'_, P> {
    fn act(&self, obs: &[f64], mode: ActMode, rng: &mut SimRng) -> AvAction {
        let mut o = obs.to_vec();
        self.mask.apply(&mut o);
        self.inner.act(&o, mode, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualizeConfig {
    pub eval_size: usize,
    pub train_size: usize,
    pub predictor: PredictorConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumProfile {
    pub eval_success_rate: f64,
    pub curriculum: Curriculum,
    /// Share of picks whose scenario starts with a left-front BV, in percent.
    pub left_front_share: f64,
    /// Initial gap to the nearest left-front BV, one entry per such pick.
    pub left_front_distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualizationReport {
    pub mask: PerceptionMask,
    pub masked: CurriculumProfile,
    pub unmasked: CurriculumProfile,
}

/// Nearest left-front BV distance at t = 0, if any.
pub fn initial_left_front_gap(s: &crate::Scenario, mask: &PerceptionMask) -> Option<f64> {
    s.bv_init
        .iter()
        .filter(|b| mask.is_left_front(&s.av_init, b))
        .map(|b| ((b.x - s.av_init.x).powi(2) + (b.y - s.av_init.y).powi(2)).sqrt())
        .min_by(f64::total_cmp)
}

fn profile(policy: &dyn Policy, lib: &ScenarioLibrary, feats: ArrayView2<'_, f64>, cfg: &IndividualizeConfig, mask: &PerceptionMask, env: &EnvConfig) -> Result<CurriculumProfile> {
    let s = cfg.seed;
    let (idx, labels) = evaluate_av(policy, lib, cfg.eval_size, env, &mut child_rng(s, 0, Stage::Individualize, 0))?;
    let mut pred = DifficultyPredictor::new(feats.ncols(), cfg.predictor.clone(), &mut child_rng(s, 0, Stage::Individualize, 1))?;
    let x = crate::curriculum::gather_rows(feats, &idx);
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    train_predictor(&mut pred, x.view(), &y, &mut child_rng(s, 0, Stage::Individualize, 2))?;
    let l_all = predict_all(&pred, feats)?;
    let curriculum = weighted_sample(lib, cfg.train_size, &l_all, 1, &mut child_rng(s, 0, Stage::Individualize, 3))?;
    let gaps: Vec<f64> = curriculum.indices.iter().filter_map(|&i| initial_left_front_gap(&lib.scenarios[i], mask)).collect();
    Ok(CurriculumProfile {
        eval_success_rate: 100.0 * (1.0 - labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64),
        left_front_share: 100.0 * gaps.len() as f64 / curriculum.len() as f64,
        left_front_distances: gaps,
        curriculum,
    })
}

/// Runs evaluation, predictor fitting and selection once with the masked
/// agent and once without, under identical seeds.
pub fn individualization_experiment<P: Policy>(
    agent: &P,
    mask: PerceptionMask,
    cfg: &IndividualizeConfig,
    lib: &ScenarioLibrary,
    feats: ArrayView2<'_, f64>,
    env: &EnvConfig,
) -> Result<IndividualizationReport> {
    let masked = MaskedPolicy { inner: agent, mask };
    Ok(IndividualizationReport {
        mask,
        masked: profile(&masked, lib, feats, cfg, &mask, env)?,
        unmasked: profile(agent, lib, feats, cfg, &mask, env)?,
    })
}

impl IndividualizationReport {
    /// `individualization.json` and `left_front_distances.csv` under `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["arm", "distance"])?;
        for (arm, p) in [("masked", &self.masked), ("unmasked", &self.unmasked)] {
            for d in &p.left_front_distances {
                w.write_record([arm.to_string(), d.to_string()])?;
            }
        }
        write_atomic(&dir.join("left_front_distances.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
        crate::util::write_json(&dir.join("individualization.json"), self)
    }
}
