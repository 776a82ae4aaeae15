//! Actor-critic training of both dialog policies, and the single-critic
//! baselines.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acts::Role;
use crate::episode::{run_episode, EpisodeConfig, NeuralSystem, NeuralUser, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::hvn::{HvnConfig, HvnLoss, HvnOptimizer, HybridValueNet, TargetNet, ValueNet, ValueSample, DEFAULT_SYNC_INTERVAL};
use crate::nn::{Gradients, Rmsprop};
use crate::policy::{ActMode, DialogPolicy};
use crate::rewards::RewardConfig;
use crate::world::{sample_goal, World, domain_count_weights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Madpl,
    RlSys,
    RlUser,
    Crl,
    IterDpl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::Madpl, Self::RlSys, Self::RlUser, Self::Crl, Self::IterDpl];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Madpl => "madpl",
            Self::RlSys => "rl-sys",
            Self::RlUser => "rl-user",
            Self::Crl => "crl",
            Self::IterDpl => "iterdpl",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Minimum number of transitions collected per update.
    pub batch_size: usize,
    pub lr_sys: f64,
    pub lr_user: f64,
    pub lr_critic: f64,
    pub target_sync: usize,
    pub max_turns: usize,
    pub episodes: usize,
    pub seed: u64,
    /// Iterations per phase when the baselines alternate between agents.
    pub iterdpl_period: usize,
    pub hvn: HvnConfig,
    pub rewards: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            lr_sys: 1e-4,
            lr_user: 5e-5,
            lr_critic: 3e-5,
            target_sync: DEFAULT_SYNC_INTERVAL,
            max_turns: crate::episode::DEFAULT_MAX_TURNS,
            episodes: 10_000,
            seed: 0,
            iterdpl_period: 500,
            hvn: HvnConfig::default(),
            rewards: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::schema(format!("train.{field}"), msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        for (name, lr) in [("lr_sys", self.lr_sys), ("lr_user", self.lr_user), ("lr_critic", self.lr_critic)] {
            if !lr.is_finite() || lr < 0.0 {
                return bad(name, "must be finite and non-negative");
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.max_turns == 0 {
            return bad("max_turns", "must be at least 1");
        }
        if self.target_sync == 0 {
            return bad("target_sync", "must be positive");
        }
        if self.iterdpl_period == 0 {
            return bad("iterdpl_period", "must be positive");
        }
        self.rewards.validate()
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig { max_turns: self.max_turns, terminate_on_success: true, rewards: self.rewards.clone() }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub episodes: usize,
    pub success: f64,
    pub inform_f1: f64,
    #[serde(rename = "match")]
    pub match_rate: f64,
    pub avg_turns: f64,
    #[serde(rename = "mean_r_S")]
    pub mean_r_s: f64,
    #[serde(rename = "mean_r_U")]
    pub mean_r_u: f64,
    #[serde(rename = "mean_r_G")]
    pub mean_r_g: f64,
    #[serde(rename = "L_V")]
    pub l_v: f64,
}

/// Per-episode outcome and reward returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub success: bool,
    pub turns: usize,
    pub inform_f1: f64,
    #[serde(rename = "match")]
    pub match_rate: f64,
    pub return_s: f64,
    pub return_u: f64,
    pub return_g: f64,
}

impl EpisodeLog {
    fn from_trajectory(episode: usize, t: &Trajectory) -> Self {
        let sum = |f: fn(&Transition) -> f64| t.transitions().map(f).sum();
        Self {
            episode,
            success: t.outcome.success,
            turns: t.outcome.turns,
            inform_f1: t.outcome.inform.f1,
            match_rate: t.outcome.match_rate,
            return_s: sum(|x| x.r_s),
            return_u: sum(|x| x.r_u),
            return_g: sum(|x| x.r_g),
        }
    }
}

/// Critic state per algorithm.
#[derive(Clone, Debug)]
pub enum Critic {
    Hybrid(HybridValueNet),
    /// Single-stream critic for one agent, or the centralized critic.
    Single(ValueNet),
    /// One critic per agent, trained in alternating phases.
    Alternating { system: ValueNet, user: ValueNet },
}

impl Critic {
    /// Writes the critic network(s) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        match self {
            Critic::Hybrid(net) => net.save(&dir.join("hvn.json")),
            Critic::Single(net) => net.save(&dir.join("critic.json")),
            Critic::Alternating { system, user } => {
                system.save(&dir.join("critic_sys.json"))?;
                user.save(&dir.join("critic_user.json"))
            }
        }
    }
}

pub struct TrainOutput {
    pub system: DialogPolicy,
    pub user: DialogPolicy,
    pub critic: Critic,
    pub metrics: Vec<IterationMetrics>,
    pub episodes: Vec<EpisodeLog>,
}

/// Ascent direction `mean_i w_i grad log pi(a_i|s_i)`.
pub fn compute_policy_update(policy: &DialogPolicy, states: &[&[f64]], actions: &[&[f64]], weights: &[f64]) -> Result<Gradients> {
    let x = crate::nn::stack_rows(states);
    let a = crate::nn::stack_rows(actions);
    let (_, mut g) = policy.surrogate_grad(x.view(), a.view(), weights)?;
    g.scale(-1.0);
    Ok(g)
}

/// Moves parameters along an ascent direction.
pub fn apply_ascent(policy: &mut DialogPolicy, opt: &mut Rmsprop, mut ascent: Gradients) {
    ascent.scale(-1.0);
    opt.step(&mut policy.net, &ascent);
}

fn update_actor(policy: &mut DialogPolicy, opt: &mut Rmsprop, batch: &[Transition], weights: &[f64]) -> Result<()> {
    let (states, actions): (Vec<&[f64]>, Vec<&[f64]>) = match policy.role {
        Role::System => batch.iter().map(|t| (t.s_sys.as_slice(), t.a_sys.as_slice())).unzip(),
        Role::User => batch.iter().map(|t| (t.s_user.as_slice(), t.a_user.as_slice())).unzip(),
    };
    let g = compute_policy_update(policy, &states, &actions, weights)?;
    apply_ascent(policy, opt, g);
    Ok(())
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Critic inputs and reward stream for a single-critic algorithm.
fn value_samples(batch: &[Transition], stream: Stream) -> Vec<ValueSample> {
    batch
        .iter()
        .map(|t| {
            let (state, next, reward) = match stream {
                Stream::System => (t.s_sys.clone(), t.next_sys.clone(), t.r_s + t.r_g),
                Stream::User => (t.s_user.clone(), t.next_user.clone(), t.r_u + t.r_g),
                Stream::Joint => (concat(&t.s_sys, &t.s_user), concat(&t.next_sys, &t.next_user), t.r_s + t.r_u + t.r_g),
            };
            ValueSample { state, next, reward, done: t.done }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// System state, `r_S + r_G`.
    System,
    /// User state, `r_U + r_G`.
    User,
    /// Concatenated states, `r_S + r_U + r_G`.
    Joint,
}

pub fn stream_reward(t: &Transition, stream: Stream) -> f64 {
    value_samples(std::slice::from_ref(t), stream)[0].reward
}

struct SingleCritic {
    live: ValueNet,
    target: TargetNet<ValueNet>,
    opt: Rmsprop,
    updates: usize,
}

impl SingleCritic {
    fn new(live: ValueNet, cfg: &TrainConfig) -> Self {
        let target = TargetNet::new(&live, cfg.target_sync);
        let opt = Rmsprop::new(&live.net, cfg.lr_critic);
        Self { live, target, opt, updates: 0 }
    }

    /// Critic step followed by advantages from the updated network.
    fn update(&mut self, batch: &[Transition], stream: Stream, gamma: f64) -> Result<(f64, Vec<f64>)> {
        let samples = value_samples(batch, stream);
        let (loss, g) = self.live.loss_and_grad(&self.target.net, &samples, gamma)?;
        self.opt.step(&mut self.live.net, &g);
        self.updates += 1;
        self.target.maybe_sync(&self.live, self.updates);
        Ok((loss, self.live.advantages(&samples, gamma)?))
    }
}

enum CriticState {
    Hybrid { live: HybridValueNet, target: TargetNet<HybridValueNet>, opt: HvnOptimizer, updates: usize },
    Single(SingleCritic, Stream),
    Alternating { system: SingleCritic, user: SingleCritic },
}

fn check_finite(iteration: usize, sys: &DialogPolicy, user: &DialogPolicy, critic: &CriticState) -> Result<()> {
    let critic_ok = match critic {
        CriticState::Hybrid { live, .. } => live.is_finite(),
        CriticState::Single(c, _) => c.live.net.is_finite(),
        CriticState::Alternating { system, user } => system.live.net.is_finite() && user.live.net.is_finite(),
    };
    let checks = [("system policy", sys.net.is_finite()), ("user policy", user.net.is_finite()), ("critic", critic_ok)];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((name, _)) => Err(Error::Divergence { iteration, detail: format!("{name} has non-finite parameters") }),
        None => Ok(()),
    }
}

/// Seed for the episode with global index `i`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Trains with the chosen algorithm, starting from the given policies.
pub fn train(
    algo: Algorithm,
    config: &TrainConfig,
    world: &World,
    system: DialogPolicy,
    user: DialogPolicy,
) -> Result<TrainOutput> {
    train_with_progress(algo, config, world, system, user, |_| {})
}

pub fn train_madpl(config: &TrainConfig, world: &World, system: DialogPolicy, user: DialogPolicy) -> Result<TrainOutput> {
    train(Algorithm::Madpl, config, world, system, user)
}

pub fn train_baseline(
    algo: Algorithm,
    config: &TrainConfig,
    world: &World,
    system: DialogPolicy,
    user: DialogPolicy,
) -> Result<TrainOutput> {
    if algo == Algorithm::Madpl {
        return Err(Error::InvalidArgument("madpl is not a baseline".into()));
    }
    train(algo, config, world, system, user)
}

/// Same as [`train`], calling `progress` after each iteration.
pub fn train_with_progress(
    algo: Algorithm,
    config: &TrainConfig,
    world: &World,
    mut system: DialogPolicy,
    mut user: DialogPolicy,
    mut progress: impl FnMut(&IterationMetrics),
) -> Result<TrainOutput> {
    config.validate()?;
    for (p, role) in [(&system, Role::System), (&user, Role::User)] {
        let (state, act) = match role {
            Role::System => (world.layout.system_dim(), world.system_space.dim()),
            Role::User => (world.layout.user_dim(), world.user_space.dim()),
        };
        if p.role != role || p.state_dim() != state || p.act_dim() != act {
            return Err(Error::DimensionMismatch { expected: state, got: p.state_dim() });
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC0FF_EE00);
    let (sys_dim, user_dim) = (world.layout.system_dim(), world.layout.user_dim());
    let mut critic = match algo {
        Algorithm::Madpl => {
            let live = HybridValueNet::new(sys_dim, user_dim, &config.hvn, &mut init_rng);
            let target = TargetNet::new(&live, config.target_sync);
            let opt = HvnOptimizer::new(&live, config.lr_critic);
            CriticState::Hybrid { live, target, opt, updates: 0 }
        }
        Algorithm::RlSys => CriticState::Single(SingleCritic::new(ValueNet::new(sys_dim, &config.hvn, &mut init_rng), config), Stream::System),
        Algorithm::RlUser => CriticState::Single(SingleCritic::new(ValueNet::new(user_dim, &config.hvn, &mut init_rng), config), Stream::User),
        Algorithm::Crl => CriticState::Single(
            SingleCritic::new(ValueNet::new(sys_dim + user_dim, &config.hvn, &mut init_rng), config),
            Stream::Joint,
        ),
        Algorithm::IterDpl => CriticState::Alternating {
            system: SingleCritic::new(ValueNet::new(sys_dim, &config.hvn, &mut init_rng), config),
            user: SingleCritic::new(ValueNet::new(user_dim, &config.hvn, &mut init_rng), config),
        },
    };
    let mut opt_sys = Rmsprop::new(&system.net, config.lr_sys);
    let mut opt_user = Rmsprop::new(&user.net, config.lr_user);
    let episode_cfg = config.episode_config();

    let mut metrics = Vec::new();
    let mut episodes = Vec::with_capacity(config.episodes);
    let mut done_episodes = 0usize;
    let mut iteration = 0usize;
    while done_episodes < config.episodes {
        let mut batch: Vec<Transition> = Vec::new();
        let mut trajs = Vec::new();
        while batch.len() < config.batch_size && done_episodes < config.episodes {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(config.seed, done_episodes));
            let goal = sample_goal(&world.ontology, &world.db, &mut rng, &domain_count_weights(&world.ontology))?;
            let traj = run_episode(
                world,
                &goal,
                &mut NeuralUser { policy: &user, mode: ActMode::Sample },
                &mut NeuralSystem { policy: &system, mode: ActMode::Sample },
                &episode_cfg,
                &mut rng,
            )?;
            batch.extend(traj.transitions().cloned());
            episodes.push(EpisodeLog::from_trajectory(done_episodes, &traj));
            trajs.push(traj);
            done_episodes += 1;
        }
        iteration += 1;

        let gamma = config.gamma;
        let l_v = match &mut critic {
            CriticState::Hybrid { live, target, opt, updates } => {
                let (loss, g): (HvnLoss, _) = live.loss_and_grad(&target.net, &batch, gamma)?;
                opt.step(live, &g);
                *updates += 1;
                target.maybe_sync(live, *updates);
                let adv = live.advantages(&batch, gamma)?;
                let w_sys: Vec<f64> = adv.iter().map(|a| a.0 + a.2).collect();
                let w_user: Vec<f64> = adv.iter().map(|a| a.1 + a.2).collect();
                update_actor(&mut system, &mut opt_sys, &batch, &w_sys)?;
                update_actor(&mut user, &mut opt_user, &batch, &w_user)?;
                loss.total
            }
            CriticState::Single(c, stream) => {
                let (loss, adv) = c.update(&batch, *stream, gamma)?;
                match algo {
                    Algorithm::RlSys => update_actor(&mut system, &mut opt_sys, &batch, &adv)?,
                    Algorithm::RlUser => update_actor(&mut user, &mut opt_user, &batch, &adv)?,
                    _ => {
                        update_actor(&mut system, &mut opt_sys, &batch, &adv)?;
                        update_actor(&mut user, &mut opt_user, &batch, &adv)?;
                    }
                }
                loss
            }
            CriticState::Alternating { system: cs, user: cu } => {
                if iterdpl_trains_system(iteration, config.iterdpl_period) {
                    let (loss, adv) = cs.update(&batch, Stream::System, gamma)?;
                    update_actor(&mut system, &mut opt_sys, &batch, &adv)?;
                    loss
                } else {
                    let (loss, adv) = cu.update(&batch, Stream::User, gamma)?;
                    update_actor(&mut user, &mut opt_user, &batch, &adv)?;
                    loss
                }
            }
        };
        check_finite(iteration, &system, &user, &critic)?;
        let row = iteration_metrics(iteration, done_episodes, &trajs, l_v);
        progress(&row);
        metrics.push(row);
    }

    let critic = match critic {
        CriticState::Hybrid { live, .. } => Critic::Hybrid(live),
        CriticState::Single(c, _) => Critic::Single(c.live),
        CriticState::Alternating { system, user } => Critic::Alternating { system: system.live, user: user.live },
    };
    Ok(TrainOutput { system, user, critic, metrics, episodes })
}

/// Phase of an alternating run: system phases come first.
pub fn iterdpl_trains_system(iteration: usize, period: usize) -> bool {
    ((iteration - 1) / period) % 2 == 0
}

fn iteration_metrics(iteration: usize, episodes: usize, trajs: &[Trajectory], l_v: f64) -> IterationMetrics {
    let n = trajs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&Trajectory) -> f64| trajs.iter().map(f).sum::<f64>() / n;
    IterationMetrics {
        iteration,
        episodes,
        success: mean(&|t| f64::from(u8::from(t.outcome.success))),
        inform_f1: mean(&|t| t.outcome.inform.f1),
        match_rate: mean(&|t| t.outcome.match_rate),
        avg_turns: mean(&|t| t.outcome.turns as f64),
        mean_r_s: mean(&|t| t.transitions().map(|x| x.r_s).sum()),
        mean_r_u: mean(&|t| t.transitions().map(|x| x.r_u).sum()),
        mean_r_g: mean(&|t| t.transitions().map(|x| x.r_g).sum()),
        l_v,
    }
}

pub fn write_metrics_csv<W: Write>(writer: W, rows: &[IterationMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<IterationMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Record { path: path.to_path_buf(), message: format!("row {}: {e}", i + 1) })
        })
        .collect()
}

pub fn read_episodes_csv(path: &Path) -> Result<Vec<EpisodeLog>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Record { path: path.to_path_buf(), message: format!("row {}: {e}", i + 1) })
        })
        .collect()
}

pub fn write_episodes_csv<W: Write>(writer: W, rows: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Random policies sized for a world (used when no pretrained ones exist).
pub fn random_policies(world: &World, seed: u64) -> (DialogPolicy, DialogPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = crate::policy::DEFAULT_ACTOR_HIDDEN;
    let s = DialogPolicy::for_world(Role::System, world, &hidden, &mut rng);
    let u = DialogPolicy::for_world(Role::User, world, &hidden, &mut rng);
    (s, u)
}
