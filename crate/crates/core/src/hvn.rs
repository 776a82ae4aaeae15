//! Hybrid value network: per-role tanh state encoders feeding a system
//! value head, a user value head and a global head over both encodings.
//! Also a plain single-stream critic used by the baselines.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::episode::Transition;
use crate::error::{Error, Result};
use crate::nn::{self, stack_rows, Activation, Gradients, MlpNet, Rmsprop};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvnConfig {
    pub encoder_hidden: Vec<usize>,
    pub encoding_dim: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for HvnConfig {
    fn default() -> Self {
        Self { encoder_hidden: vec![128, 128], encoding_dim: 64, head_hidden: vec![64, 64] }
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridValueNet {
    pub encoder_sys: MlpNet,
    pub encoder_user: MlpNet,
    pub head_sys: MlpNet,
    pub head_user: MlpNet,
    pub head_global: MlpNet,
}

/// Gradients for every component, in the same order as the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct HvnGradients {
    pub parts: [Gradients; 5],
}

impl HvnGradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.parts.iter().flat_map(Gradients::flatten).collect()
    }
}

/// Values per branch; each array has one entry per batch row.
pub struct BranchValues {
    pub sys: Vec<f64>,
    pub user: Vec<f64>,
    pub global: Vec<f64>,
}

/// Branch losses for one batch; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HvnLoss {
    pub sys: f64,
    pub user: f64,
    pub global: f64,
    pub total: f64,
}

const PART_NAMES: [&str; 5] = ["encoder_sys", "encoder_user", "head_sys", "head_user", "head_global"];

impl HybridValueNet {
    pub fn new<R: Rng + ?Sized>(sys_dim: usize, user_dim: usize, cfg: &HvnConfig, rng: &mut R) -> Self {
        let h = cfg.encoding_dim;
        Self {
            encoder_sys: MlpNet::new(&dims(sys_dim, &cfg.encoder_hidden, h), Activation::Tanh, rng),
            encoder_user: MlpNet::new(&dims(user_dim, &cfg.encoder_hidden, h), Activation::Tanh, rng),
            head_sys: MlpNet::new(&dims(h, &cfg.head_hidden, 1), Activation::Identity, rng),
            head_user: MlpNet::new(&dims(h, &cfg.head_hidden, 1), Activation::Identity, rng),
            head_global: MlpNet::new(&dims(2 * h, &cfg.head_hidden, 1), Activation::Identity, rng),
        }
    }

    pub fn zeros(sys_dim: usize, user_dim: usize, cfg: &HvnConfig) -> Self {
        let h = cfg.encoding_dim;
        Self {
            encoder_sys: MlpNet::zeros(&dims(sys_dim, &cfg.encoder_hidden, h), Activation::Tanh),
            encoder_user: MlpNet::zeros(&dims(user_dim, &cfg.encoder_hidden, h), Activation::Tanh),
            head_sys: MlpNet::zeros(&dims(h, &cfg.head_hidden, 1), Activation::Identity),
            head_user: MlpNet::zeros(&dims(h, &cfg.head_hidden, 1), Activation::Identity),
            head_global: MlpNet::zeros(&dims(2 * h, &cfg.head_hidden, 1), Activation::Identity),
        }
    }

    fn parts(&self) -> [&MlpNet; 5] {
        [&self.encoder_sys, &self.encoder_user, &self.head_sys, &self.head_user, &self.head_global]
    }

    fn parts_mut(&mut self) -> [&mut MlpNet; 5] {
        [&mut self.encoder_sys, &mut self.encoder_user, &mut self.head_sys, &mut self.head_user, &mut self.head_global]
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|n| n.num_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|n| n.params()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: flat.len() });
        }
        let mut offset = 0;
        for net in self.parts_mut() {
            let n = net.num_params();
            net.set_params(&flat[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|n| n.is_finite())
    }

    pub fn encode_sys(&self, s_sys: &[f64]) -> Result<Vec<f64>> {
        self.encoder_sys.forward_vec(s_sys)
    }

    /// `(V_S, V_U, V_G)` for a single joint state.
    pub fn forward(&self, s_sys: &[f64], s_user: &[f64]) -> Result<(f64, f64, f64)> {
        let xs = ArrayView2::from_shape((1, s_sys.len()), s_sys).expect("contiguous");
        let xu = ArrayView2::from_shape((1, s_user.len()), s_user).expect("contiguous");
        let v = self.values(xs, xu)?;
        Ok((v.sys[0], v.user[0], v.global[0]))
    }

    pub fn values(&self, s_sys: ArrayView2<'_, f64>, s_user: ArrayView2<'_, f64>) -> Result<BranchValues> {
        Ok(self.forward_batch(s_sys, s_user)?.values())
    }

    fn forward_batch(&self, s_sys: ArrayView2<'_, f64>, s_user: ArrayView2<'_, f64>) -> Result<HvnCache> {
        if s_sys.nrows() != s_user.nrows() {
            return Err(Error::DimensionMismatch { expected: s_sys.nrows(), got: s_user.nrows() });
        }
        let enc_s = self.encoder_sys.forward(s_sys)?;
        let enc_u = self.encoder_user.forward(s_user)?;
        let joint = ndarray::concatenate(Axis(1), &[enc_s.output().view(), enc_u.output().view()]).expect("equal rows");
        let head_s = self.head_sys.forward(enc_s.output().view())?;
        let head_u = self.head_user.forward(enc_u.output().view())?;
        let head_g = self.head_global.forward(joint.view())?;
        Ok(HvnCache { enc_s, enc_u, head_s, head_u, head_g })
    }

    /// Squared TD errors against targets bootstrapped from the frozen
    /// `target` network, summed over branches and averaged over the batch.
    pub fn loss_and_grad(&self, target: &HybridValueNet, batch: &[Transition], gamma: f64) -> Result<(HvnLoss, HvnGradients)> {
        check_gamma(gamma)?;
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let (xs, xu, ns, nu) = stack_transitions(batch);
        let next = target.values(ns.view(), nu.view())?;
        let cache = self.forward_batch(xs.view(), xu.view())?;
        let now = cache.values();
        let n = batch.len() as f64;
        let mut loss = HvnLoss::default();
        let mut d = [Array2::zeros((batch.len(), 1)), Array2::zeros((batch.len(), 1)), Array2::zeros((batch.len(), 1))];
        for (i, t) in batch.iter().enumerate() {
            let boot = if t.done { 0.0 } else { gamma };
            let errs = [
                now.sys[i] - (t.r_s + boot * next.sys[i]),
                now.user[i] - (t.r_u + boot * next.user[i]),
                now.global[i] - (t.r_g + boot * next.global[i]),
            ];
            loss.sys += errs[0] * errs[0] / n;
            loss.user += errs[1] * errs[1] / n;
            loss.global += errs[2] * errs[2] / n;
            for (k, e) in errs.iter().enumerate() {
                d[k][[i, 0]] = 2.0 * e / n;
            }
        }
        loss.total = loss.sys + loss.user + loss.global;
        Ok((loss, self.backward(&cache, &d)?))
    }

    fn backward(&self, cache: &HvnCache, d: &[Array2<f64>; 3]) -> Result<HvnGradients> {
        let (g_hs, dh_s) = self.head_sys.backward(&cache.head_s, d[0].view())?;
        let (g_hu, dh_u) = self.head_user.backward(&cache.head_u, d[1].view())?;
        let (g_hg, dh_g) = self.head_global.backward(&cache.head_g, d[2].view())?;
        let h = dh_s.ncols();
        let d_enc_s = dh_s + dh_g.slice(s![.., ..h]);
        let d_enc_u = dh_u + dh_g.slice(s![.., h..]);
        let (g_es, _) = self.encoder_sys.backward(&cache.enc_s, d_enc_s.view())?;
        let (g_eu, _) = self.encoder_user.backward(&cache.enc_u, d_enc_u.view())?;
        Ok(HvnGradients { parts: [g_es, g_eu, g_hs, g_hu, g_hg] })
    }

    /// One-step advantages `r + gamma V(s') - V(s)` per branch from this network.
    pub fn advantages(&self, batch: &[Transition], gamma: f64) -> Result<Vec<(f64, f64, f64)>> {
        check_gamma(gamma)?;
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let (xs, xu, ns, nu) = stack_transitions(batch);
        let now = self.values(xs.view(), xu.view())?;
        let next = self.values(ns.view(), nu.view())?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let boot = if t.done { 0.0 } else { gamma };
                (
                    t.r_s + boot * next.sys[i] - now.sys[i],
                    t.r_u + boot * next.user[i] - now.user[i],
                    t.r_g + boot * next.global[i] - now.global[i],
                )
            })
            .collect())
    }

    pub fn named(&self) -> Vec<(&'static str, &MlpNet)> {
        PART_NAMES.iter().copied().zip(self.parts()).collect()
    }

    pub fn from_named(nets: &mut Vec<(String, MlpNet)>) -> Result<Self> {
        Ok(Self {
            encoder_sys: nn::take_named(nets, PART_NAMES[0])?,
            encoder_user: nn::take_named(nets, PART_NAMES[1])?,
            head_sys: nn::take_named(nets, PART_NAMES[2])?,
            head_user: nn::take_named(nets, PART_NAMES[3])?,
            head_global: nn::take_named(nets, PART_NAMES[4])?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_bundle(path, &self.named())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_named(&mut nn::load_bundle(path)?)
    }
}

struct HvnCache {
    enc_s: nn::ForwardCache,
    enc_u: nn::ForwardCache,
    head_s: nn::ForwardCache,
    head_u: nn::ForwardCache,
    head_g: nn::ForwardCache,
}

impl HvnCache {
    fn values(&self) -> BranchValues {
        let col = |c: &nn::ForwardCache| c.output().column(0).to_vec();
        BranchValues { sys: col(&self.head_s), user: col(&self.head_u), global: col(&self.head_g) }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount {gamma} outside [0, 1]")))
    }
}

fn stack_transitions(batch: &[Transition]) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let rows = |f: fn(&Transition) -> &Vec<f64>| stack_rows(&batch.iter().map(|t| f(t).as_slice()).collect::<Vec<_>>());
    (rows(|t| &t.s_sys), rows(|t| &t.s_user), rows(|t| &t.next_sys), rows(|t| &t.next_user))
}

/// RMSprop state for every component of the network.
#[derive(Clone, Debug)]
pub struct HvnOptimizer {
    parts: Vec<Rmsprop>,
}

impl HvnOptimizer {
    pub fn new(hvn: &HybridValueNet, lr: f64) -> Self {
        Self { parts: hvn.parts().iter().map(|n| Rmsprop::new(n, lr)).collect() }
    }

    pub fn step(&mut self, hvn: &mut HybridValueNet, grads: &HvnGradients) {
        for ((opt, net), g) in self.parts.iter_mut().zip(hvn.parts_mut()).zip(&grads.parts) {
            opt.step(net, g);
        }
    }
}

/// Frozen copy of the critic, refreshed every `interval` iterations.
#[derive(Clone, Debug)]
pub struct TargetNet<N> {
    pub net: N,
    pub interval: usize,
    pub syncs: usize,
}

pub const DEFAULT_SYNC_INTERVAL: usize = 400;

impl<N: Clone> TargetNet<N> {
    pub fn new(live: &N, interval: usize) -> Self {
        Self { net: live.clone(), interval: interval.max(1), syncs: 0 }
    }

    pub fn sync(&mut self, live: &N) {
        self.net = live.clone();
        self.syncs += 1;
    }

    /// Syncs when `iteration` (1-based count of completed updates) hits the interval.
    pub fn maybe_sync(&mut self, live: &N, iteration: usize) -> bool {
        if iteration > 0 && iteration % self.interval == 0 {
            self.sync(live);
            true
        } else {
            false
        }
    }
}

/// Scalar state-value critic on a single input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    pub net: MlpNet,
}

/// One step for a single-stream critic.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSample {
    pub state: Vec<f64>,
    pub next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(input: usize, cfg: &HvnConfig, rng: &mut R) -> Self {
        let mut hidden = cfg.encoder_hidden.clone();
        hidden.push(cfg.encoding_dim);
        hidden.extend_from_slice(&cfg.head_hidden);
        Self { net: MlpNet::new(&dims(input, &hidden, 1), Activation::Identity, rng) }
    }

    fn column(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward(x)?.output().column(0).to_vec())
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward_vec(state)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_bundle(path, &[("value", &self.net)])
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self { net: nn::take_named(&mut nn::load_bundle(path)?, "value")? })
    }

    pub fn loss_and_grad(&self, target: &ValueNet, batch: &[ValueSample], gamma: f64) -> Result<(f64, Gradients)> {
        check_gamma(gamma)?;
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let x = stack_rows(&batch.iter().map(|b| b.state.as_slice()).collect::<Vec<_>>());
        let nx = stack_rows(&batch.iter().map(|b| b.next.as_slice()).collect::<Vec<_>>());
        let next = target.column(nx.view())?;
        let cache = self.net.forward(x.view())?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut d = Array2::zeros((batch.len(), 1));
        for (i, b) in batch.iter().enumerate() {
            let boot = if b.done { 0.0 } else { gamma };
            let e = cache.output()[[i, 0]] - (b.reward + boot * next[i]);
            loss += e * e / n;
            d[[i, 0]] = 2.0 * e / n;
        }
        let (grads, _) = self.net.backward(&cache, d.view())?;
        Ok((loss, grads))
    }

    pub fn advantages(&self, batch: &[ValueSample], gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack_rows(&batch.iter().map(|b| b.state.as_slice()).collect::<Vec<_>>());
        let nx = stack_rows(&batch.iter().map(|b| b.next.as_slice()).collect::<Vec<_>>());
        let (now, next) = (self.column(x.view())?, self.column(nx.view())?);
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, b)| b.reward + if b.done { 0.0 } else { gamma * next[i] } - now[i])
            .collect())
    }
}
