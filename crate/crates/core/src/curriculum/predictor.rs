use crate::error::{Error, Result};
use crate::nn::{grad, load_params, save_params, AdamState, DenseNet, Head, Loss};
use crate::scenario::{FeatureSpec, ScenarioLibrary};
use crate::seed::SimRng;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    /// Rebalance every batch to 1:1 by duplicating the minority class.
    pub balance: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 3,
            lr: 1e-4,
            epochs: 20,
            batch_size: 128,
            dropout: 0.0,
            balance: false,
        }
    }
}

/// Failure-probability classifier over flattened scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyPredictor {
    pub net: DenseNet,
    pub cfg: PredictorConfig,
    opt: AdamState,
}

impl DifficultyPredictor {
    /// Hidden layers get the usual random init; the output layer starts at
    /// zero so an untrained predictor says 0.5 everywhere.
    pub fn new(input_dim: usize, cfg: PredictorConfig, rng: &mut SimRng) -> Result<Self> {
        let sizes = [vec![input_dim], vec![cfg.hidden; cfg.layers], vec![2]].concat();
        let mut net = DenseNet::new(&sizes, Head::Softmax, cfg.dropout, rng)?;
        net.scale_output_layer(0.0);
        Ok(Self::from_net(net, cfg))
    }

    pub fn from_net(net: DenseNet, cfg: PredictorConfig) -> Self {
        let opt = AdamState::new(net.num_params(), cfg.lr);
        Self { net, cfg, opt }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_size()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_params(&self.net, path)
    }

    pub fn load(path: &Path, cfg: PredictorConfig) -> Result<Self> {
        Ok(Self::from_net(load_params(path)?, cfg))
    }
}

/// Feature matrix of a whole library, one row per scenario in library order.
pub fn featurize_library(lib: &ScenarioLibrary, spec: &FeatureSpec) -> Result<Array2<f64>> {
    let dim = spec.dim();
    let mut out = Array2::zeros((lib.len(), dim));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(dim)
        .zip(lib.scenarios.par_iter())
        .try_for_each(|(row, s)| spec.featurize_into(s, row))?;
    Ok(out)
}

/// Rows of `feats` selected by `idx`.
pub fn gather_rows(feats: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    feats.select(Axis(0), idx)
}

/// Balances one batch to 1:1 by cycling through the minority class.
fn balance_batch(batch: &[usize], labels: &[f64]) -> Vec<usize> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = batch.iter().partition(|&&i| labels[i] >= 0.5);
    if pos.is_empty() || neg.is_empty() || pos.len() == neg.len() {
        return batch.to_vec();
    }
    let (minor, major) = if pos.len() < neg.len() { (pos, neg) } else { (neg, pos) };
    let mut out = major.clone();
    out.extend(minor.iter().cycle().take(major.len()).copied());
    out
}

/// Mini-batch Adam on the BCE loss, continuing from the predictor's current
/// parameters. Returns the mean training loss of every epoch.
pub fn train_predictor(
    pred: &mut DifficultyPredictor,
    feats: ArrayView2<'_, f64>,
    labels: &[f64],
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    if feats.nrows() == 0 {
        return Err(Error::Empty("predictor training set".into()));
    }
    if feats.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows vs {} labels", feats.nrows(), labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Shape(format!("label {bad} is not 0 or 1")));
    }
    // Weights warm-start across calls; optimizer moments do not, so a
    // checkpointed network is enough to reproduce the next call.
    pred.opt = AdamState::new(pred.net.num_params(), pred.cfg.lr);
    let n = labels.len();
    let bs = pred.cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(pred.cfg.epochs);
    for _ in 0..pred.cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(bs) {
            let idx = if pred.cfg.balance { balance_batch(chunk, labels) } else { chunk.to_vec() };
            let x = gather_rows(feats, &idx);
            let y = Array2::from_shape_fn((idx.len(), 1), |(i, _)| labels[idx[i]]);
            let drop_rng = (pred.net.dropout() > 0.0).then_some(&mut *rng);
            let (g, loss) = grad(&pred.net, x.view(), Loss::Bce, y.view(), drop_rng)?;
            pred.opt.step(pred.net.params_mut(), &g)?;
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        curve.push(total / count as f64);
    }
    Ok(curve)
}

/// Class-1 probability for every row, dropout off.
pub fn predict_all(pred: &DifficultyPredictor, feats: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if feats.nrows() == 0 {
        return Err(Error::Empty("prediction input".into()));
    }
    let mut out = Vec::with_capacity(feats.nrows());
    for chunk in feats.axis_chunks_iter(Axis(0), 256) {
        let p = pred.net.forward_batch(chunk)?;
        out.extend(p.column(1).iter().copied());
    }
    Ok(out)
}

/// Mean BCE of the predictor on a labelled set, probabilities floored at
/// 1e-12 for reporting.
pub fn bce_report(pred: &DifficultyPredictor, feats: ArrayView2<'_, f64>, labels: &[f64]) -> Result<f64> {
    let p = predict_all(pred, feats)?;
    Ok(p.iter()
        .zip(labels)
        .map(|(&p, &y)| -(y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln()))
        .sum::<f64>()
        / labels.len() as f64)
}
