//! System and user actors: sigmoid multi-label networks over a role's action
//! space. The user actor has one extra output for the terminal signal.

mod corpus;
mod pretrain;

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};

pub use corpus::{read_corpus, write_corpus, CorpusRecord};
pub use pretrain::{micro_f1, pretrain, PretrainConfig, PretrainReport};

use crate::acts::{acts_from_mask, ActionSpace, DialogAct, Role};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, Gradients, MlpNet};
use crate::world::World;

/// Probabilities are clamped to this margin before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

pub const DEFAULT_ACTOR_HIDDEN: [usize; 2] = [128, 128];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DialogPolicy {
    pub role: Role,
    pub net: MlpNet,
    act_dim: usize,
}

/// One decision: the selected act mask and, for the user, the terminal flag.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDecision {
    pub mask: Vec<f64>,
    pub terminal: bool,
}

impl PolicyDecision {
    pub fn acts(&self, space: &ActionSpace) -> Vec<DialogAct> {
        acts_from_mask(&self.mask, space)
    }

    /// Mask plus the terminal bit for the user role, as used by the likelihood.
    pub fn full_action(&self, role: Role) -> Vec<f64> {
        let mut a = self.mask.clone();
        if role == Role::User {
            a.push(if self.terminal { 1.0 } else { 0.0 });
        }
        a
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl DialogPolicy {
    pub fn new<R: Rng + ?Sized>(role: Role, state_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let out = act_dim + usize::from(role == Role::User);
        let mut dims = vec![state_dim];
        dims.extend_from_slice(hidden);
        dims.push(out);
        Self { role, net: MlpNet::new(&dims, Activation::Sigmoid, rng), act_dim }
    }

    /// Policy sized for a world's state and action spaces.
    pub fn for_world<R: Rng + ?Sized>(role: Role, world: &World, hidden: &[usize], rng: &mut R) -> Self {
        let state_dim = match role {
            Role::System => world.layout.system_dim(),
            Role::User => world.layout.user_dim(),
        };
        Self::new(role, state_dim, world.space(role).dim(), hidden, rng)
    }

    pub fn from_net(role: Role, net: MlpNet) -> Result<Self> {
        let extra = usize::from(role == Role::User);
        if net.output != Activation::Sigmoid || net.output_dim() <= extra {
            return Err(Error::Checkpoint("policy network needs sigmoid outputs".into()));
        }
        let act_dim = net.output_dim() - extra;
        Ok(Self { role, net, act_dim })
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Output width: act dimensions plus the terminal head for the user.
    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward_vec(state)
    }

    pub fn act(&self, state: &[f64], mode: ActMode, rng: &mut dyn RngCore) -> Result<PolicyDecision> {
        let probs = self.probabilities(state)?;
        let pick = |p: f64, rng: &mut dyn RngCore| match mode {
            ActMode::Greedy => p > 0.5,
            ActMode::Sample => rng.gen::<f64>() < p,
        };
        let mask = probs[..self.act_dim].iter().map(|&p| if pick(p, rng) { 1.0 } else { 0.0 }).collect();
        let terminal = self.role == Role::User && pick(probs[self.act_dim], rng);
        Ok(PolicyDecision { mask, terminal })
    }

    fn check_batch(&self, states: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<()> {
        if states.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if states.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch { expected: states.nrows(), got: targets.nrows() });
        }
        if targets.ncols() != self.action_dim() {
            return Err(Error::DimensionMismatch { expected: self.action_dim(), got: targets.ncols() });
        }
        Ok(())
    }

    /// Behavior-cloning loss
    /// `-[beta * y log s(z) + (1 - y) log(1 - s(z))]`, averaged over batch and
    /// output dimensions, with its parameter gradients.
    pub fn bc_loss_and_grad(
        &self,
        states: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        beta: f64,
    ) -> Result<(f64, Gradients)> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        self.check_batch(states, targets)?;
        let cache = self.net.forward(states)?;
        let probs = cache.output();
        let scale = 1.0 / (targets.len() as f64);
        let mut loss = 0.0;
        let mut grad = Array2::zeros(probs.dim());
        ndarray::Zip::from(&mut grad).and(probs).and(targets).for_each(|g, &p, &y| {
            let pc = clamp_prob(p);
            loss -= beta * y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            // d/dz of the per-dimension loss
            *g = scale * (-beta * y * (1.0 - p) + (1.0 - y) * p);
        });
        let (grads, _) = self.net.backward_from_logits(&cache, grad.view())?;
        Ok((loss * scale, grads))
    }

    /// Log-likelihood of a binary action under independent Bernoullis.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::DimensionMismatch { expected: self.action_dim(), got: action.len() });
        }
        let probs = self.probabilities(state)?;
        Ok(bernoulli_log_prob(&probs, action))
    }

    /// `log pi(a|s)` and its gradient with respect to the parameters.
    pub fn logprob_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Gradients)> {
        let states = ArrayView2::from_shape((1, state.len()), state).expect("contiguous");
        let actions = ArrayView2::from_shape((1, action.len()), action).expect("contiguous");
        self.check_batch(states, actions)?;
        let cache = self.net.forward(states)?;
        let logp = bernoulli_log_prob(cache.output().as_slice().expect("standard layout"), action);
        let grad = &actions - cache.output();
        let (grads, _) = self.net.backward_from_logits(&cache, grad.view())?;
        Ok((logp, grads))
    }

    /// Gradient of the surrogate loss `-mean_i w_i log pi(a_i|s_i)` (weights
    /// held constant). Descending it ascends the weighted log-likelihood.
    pub fn surrogate_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        weights: &[f64],
    ) -> Result<(f64, Gradients)> {
        self.check_batch(states, actions)?;
        if weights.len() != states.nrows() {
            return Err(Error::DimensionMismatch { expected: states.nrows(), got: weights.len() });
        }
        let cache = self.net.forward(states)?;
        let probs = cache.output();
        let n = states.nrows() as f64;
        let mut grad = Array2::zeros(probs.dim());
        let mut loss = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let p = probs.row(i);
            let a = actions.row(i);
            loss -= w * bernoulli_log_prob(p.as_slice().expect("row"), a.as_slice().expect("row")) / n;
            for j in 0..p.len() {
                grad[[i, j]] = -w * (a[j] - p[j]) / n;
            }
        }
        let (grads, _) = self.net.backward_from_logits(&cache, grad.view())?;
        Ok((loss, grads))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        nn::save_bundle(path, &[(self.role.as_str(), &self.net)])
    }

    pub fn load(path: &Path, role: Role) -> Result<Self> {
        let mut nets = nn::load_bundle(path)?;
        Self::from_net(role, nn::take_named(&mut nets, role.as_str())?)
    }
}

pub fn bernoulli_log_prob(probs: &[f64], action: &[f64]) -> f64 {
    probs
        .iter()
        .zip(action)
        .map(|(&p, &a)| {
            let p = clamp_prob(p);
            a * p.ln() + (1.0 - a) * (1.0 - p).ln()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{assert_grad_close, fd_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_policy(role: Role, seed: u64) -> DialogPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = DialogPolicy::new(role, 6, 5, &[8, 8], &mut rng);
        let params: Vec<f64> = (0..p.net.num_params()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        p.net.set_params(&params).unwrap();
        p
    }

    fn batch(rows: usize, cols: usize, seed: u64, binary: bool) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| {
            if binary {
                f64::from(rng.gen_bool(0.4) as u8)
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
    }

    #[test]
    fn large_negative_biases_select_nothing() {
        let mut p = small_policy(Role::User, 1);
        p.net.layers.last_mut().unwrap().biases.fill(-1e3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = p.act(&[0.5; 6], ActMode::Greedy, &mut rng).unwrap();
        assert!(d.mask.iter().all(|&m| m == 0.0));
        assert!(!d.terminal);
    }

    #[test]
    fn large_positive_biases_select_exactly_those() {
        let mut p = small_policy(Role::System, 1);
        let last = p.net.layers.last_mut().unwrap();
        last.biases.fill(-1e3);
        last.biases[1] = 1e3;
        last.biases[3] = 1e3;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = p.act(&[0.5; 6], ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(d.mask, vec![0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(p.act(&[0.5; 3], ActMode::Greedy, &mut rng), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = small_policy(Role::User, 4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..20).map(|_| p.act(&[0.1; 6], ActMode::Sample, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bc_zero_logit_positive_label() {
        let p = DialogPolicy::from_net(Role::System, MlpNet::zeros(&[2, 3, 1], Activation::Sigmoid)).unwrap();
        let (loss, _) = p
            .bc_loss_and_grad(Array2::zeros((1, 2)).view(), Array2::ones((1, 1)).view(), 1.0)
            .unwrap();
        assert!((loss - 0.6931).abs() < 1e-4);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bc_targets_equal_to_probabilities_are_stationary() {
        let p = small_policy(Role::System, 2);
        let x = batch(4, 6, 3, false);
        let y = p.net.forward(x.view()).unwrap().output().clone();
        let (_, grads) = p.bc_loss_and_grad(x.view(), y.view(), 1.0).unwrap();
        assert!(grads.flatten().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn bc_with_unit_beta_is_cross_entropy() {
        let p = small_policy(Role::User, 5);
        let x = batch(3, 6, 6, false);
        let y = batch(3, 6, 7, true);
        let (loss, _) = p.bc_loss_and_grad(x.view(), y.view(), 1.0).unwrap();
        let probs = p.net.forward(x.view()).unwrap().output().clone();
        let mut ce = 0.0;
        for (pr, t) in probs.iter().zip(y.iter()) {
            ce += -(t * pr.ln() + (1.0 - t) * (1.0 - pr).ln());
        }
        assert!((loss - ce / 18.0).abs() < 1e-12);
    }

    #[test]
    fn bc_gradients_match_finite_differences() {
        for beta in [1.0, 2.5, 4.0] {
            let p = small_policy(Role::User, 8);
            let x = batch(5, 6, 9, false);
            let y = batch(5, 6, 10, true);
            let (_, grads) = p.bc_loss_and_grad(x.view(), y.view(), beta).unwrap();
            let f = |params: &[f64]| {
                let mut q = p.clone();
                q.net.set_params(params).unwrap();
                q.bc_loss_and_grad(x.view(), y.view(), beta).unwrap().0
            };
            assert_grad_close(&grads.flatten(), &fd_gradient(f, &p.net.params(), 1e-5), 1e-4);
        }
    }

    #[test]
    fn bc_rejects_bad_beta() {
        let p = small_policy(Role::System, 1);
        assert!(p.bc_loss_and_grad(batch(1, 6, 1, false).view(), batch(1, 5, 1, true).view(), 0.0).is_err());
    }

    #[test]
    fn log_prob_of_uniform_policy() {
        let p = DialogPolicy::from_net(Role::System, MlpNet::zeros(&[3, 4, 5], Activation::Sigmoid)).unwrap();
        let lp = p.log_prob(&[1.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((lp - 5.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_of_confident_policy() {
        let mut net = MlpNet::zeros(&[3, 4, 4], Activation::Sigmoid);
        let logit = (0.99f64 / 0.01).ln();
        net.layers[1].biases = ndarray::arr1(&[logit, -logit, logit, -logit]);
        let p = DialogPolicy::from_net(Role::System, net).unwrap();
        let lp = p.log_prob(&[0.0; 3], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((lp - 4.0 * 0.99f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let p = small_policy(Role::User, 12);
        let s = [0.3, -0.2, 0.9, 0.0, 1.0, 0.5];
        let a = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let (lp, grads) = p.logprob_grad(&s, &a).unwrap();
        assert!((lp - p.log_prob(&s, &a).unwrap()).abs() < 1e-12);
        let f = |params: &[f64]| {
            let mut q = p.clone();
            q.net.set_params(params).unwrap();
            q.log_prob(&s, &a).unwrap()
        };
        assert_grad_close(&grads.flatten(), &fd_gradient(f, &p.net.params(), 1e-5), 1e-4);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let p = small_policy(Role::System, 13);
        let x = batch(4, 6, 14, false);
        let a = batch(4, 5, 15, true);
        let w = [1.5, -0.5, 2.0, 0.25];
        let (_, grads) = p.surrogate_grad(x.view(), a.view(), &w).unwrap();
        let f = |params: &[f64]| {
            let mut q = p.clone();
            q.net.set_params(params).unwrap();
            q.surrogate_grad(x.view(), a.view(), &w).unwrap().0
        };
        assert_grad_close(&grads.flatten(), &fd_gradient(f, &p.net.params(), 1e-5), 1e-4);
    }

    #[test]
    fn greedy_depends_only_on_logit_sign() {
        let p = small_policy(Role::User, 21);
        let s = [0.2, 0.4, 0.6, 0.8, 1.0, 0.0];
        let cache = p.net.forward(ArrayView2::from_shape((1, 6), &s).unwrap()).unwrap();
        let signs: Vec<f64> = cache.logits().iter().map(|&z| if z > 0.0 { 1.0 } else { 0.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = p.act(&s, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(d.full_action(Role::User), signs);
    }
}
