use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusRecord, DialogPolicy};
use crate::acts::Role;
use crate::error::{Error, Result};
use crate::nn::Rmsprop;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, lr: 1e-3, beta: 2.5, seed: 0, holdout_fraction: 0.1 }
    }
}

impl PretrainConfig {
    pub fn for_role(role: Role) -> Self {
        let beta = match role {
            Role::System => 2.5,
            Role::User => 4.0,
        };
        Self { beta, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub train_records: usize,
    pub heldout_records: usize,
    pub epoch_loss: Vec<f64>,
    pub heldout_f1: Vec<f64>,
}

impl PretrainReport {
    pub fn final_f1(&self) -> f64 {
        self.heldout_f1.last().copied().unwrap_or(0.0)
    }
}

struct Matrix {
    x: Array2<f64>,
    y: Array2<f64>,
}

fn to_matrix(records: &[&CorpusRecord], state_dim: usize, action_dim: usize) -> Result<Matrix> {
    let mut x = Array2::zeros((records.len(), state_dim));
    let mut y = Array2::zeros((records.len(), action_dim));
    for (i, r) in records.iter().enumerate() {
        let target = r.target();
        if r.state.len() != state_dim {
            return Err(Error::DimensionMismatch { expected: state_dim, got: r.state.len() });
        }
        if target.len() != action_dim {
            return Err(Error::DimensionMismatch { expected: action_dim, got: target.len() });
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&r.state));
        y.row_mut(i).assign(&ndarray::ArrayView1::from(&target));
    }
    Ok(Matrix { x, y })
}

/// Micro-averaged F1 of greedy act predictions over the act dimensions
/// (the terminal head is excluded). Returns 1 when there is nothing to predict.
pub fn micro_f1(policy: &DialogPolicy, records: &[&CorpusRecord]) -> Result<f64> {
    if records.is_empty() {
        return Ok(1.0);
    }
    let m = to_matrix(records, policy.state_dim(), policy.action_dim())?;
    let probs = policy.net.forward(m.x.view())?.output().clone();
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (p_row, y_row) in probs.outer_iter().zip(m.y.outer_iter()) {
        for j in 0..policy.act_dim() {
            match (p_row[j] > 0.5, y_row[j] > 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
    }
    if tp + fp + fnn == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fnn) as f64)
}

/// Behavior cloning on the records of the policy's role. Dialogs are split
/// into train and held-out sets before training.
pub fn pretrain(policy: &mut DialogPolicy, corpus: &[CorpusRecord], config: &PretrainConfig) -> Result<PretrainReport> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let records: Vec<&CorpusRecord> = corpus.iter().filter(|r| r.role == policy.role).collect();
    if records.is_empty() || records.len() < config.batch_size {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut dialogs: Vec<usize> = records.iter().map(|r| r.dialog_id).collect();
    dialogs.sort_unstable();
    dialogs.dedup();
    dialogs.shuffle(&mut rng);
    let n_hold = if dialogs.len() < 2 {
        0
    } else {
        ((dialogs.len() as f64 * config.holdout_fraction).round() as usize).clamp(1, dialogs.len() - 1)
    };
    let held: std::collections::HashSet<usize> = dialogs[..n_hold].iter().copied().collect();
    let (mut train, mut heldout): (Vec<&CorpusRecord>, Vec<&CorpusRecord>) =
        records.iter().partition(|r| !held.contains(&r.dialog_id));
    if heldout.is_empty() {
        heldout = train.clone();
    }
    if train.len() < config.batch_size {
        train = records.clone();
    }

    let data = to_matrix(&train, policy.state_dim(), policy.action_dim())?;
    let mut opt = Rmsprop::new(&policy.net, config.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = PretrainReport { train_records: train.len(), heldout_records: heldout.len(), ..Default::default() };

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = data.x.select(Axis(0), chunk);
            let y = data.y.select(Axis(0), chunk);
            let (loss, grads) = policy.bc_loss_and_grad(x.view(), y.view(), config.beta)?;
            opt.step(&mut policy.net, &grads);
            total += loss;
            batches += 1;
        }
        report.epoch_loss.push(total / batches as f64);
        report.heldout_f1.push(micro_f1(policy, &heldout)?);
    }
    Ok(report)
}
