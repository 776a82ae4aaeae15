use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, EpisodeConfig, NeuralSystem, NeuralUser, SystemAgent, Trajectory, UserAgent};
use crate::error::Result;
use crate::policy::{ActMode, DialogPolicy};
use crate::rules::{AgendaUser, RuleSystem};
use crate::world::{UserGoal, World};

/// Who plays a role during evaluation.
#[derive(Clone, Copy, Debug)]
pub enum AgentSpec<'a> {
    Rule,
    Policy(&'a DialogPolicy),
}

impl AgentSpec<'_> {
    fn user(self) -> Box<dyn UserAgent + Send + 'static> {
        match self {
            AgentSpec::Rule => Box::new(AgendaUser::new()),
            AgentSpec::Policy(_) => unreachable!("neural agents borrow their policy"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalResult {
    pub index: usize,
    pub domains: String,
    pub num_domains: usize,
    pub turns: usize,
    pub precision: f64,
    pub recall: f64,
    pub inform_f1: f64,
    /// Absent for goals without bookings.
    #[serde(rename = "match")]
    pub match_rate: Option<f64>,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dialogs: usize,
    pub avg_turns: f64,
    pub inform_f1: f64,
    /// Mean over dialogs that require a booking (1 when there are none).
    #[serde(rename = "match")]
    pub match_rate: f64,
    pub success: f64,
}

impl Aggregate {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a GoalResult>) -> Self {
        let rows: Vec<&GoalResult> = rows.into_iter().collect();
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let matches: Vec<f64> = rows.iter().filter_map(|r| r.match_rate).collect();
        Self {
            dialogs: rows.len(),
            avg_turns: rows.iter().map(|r| r.turns as f64).sum::<f64>() / n,
            inform_f1: rows.iter().map(|r| r.inform_f1).sum::<f64>() / n,
            match_rate: if matches.is_empty() { 1.0 } else { matches.iter().sum::<f64>() / matches.len() as f64 },
            success: rows.iter().filter(|r| r.success).count() as f64 / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub goals: Vec<GoalResult>,
    pub overall: Aggregate,
    /// Partition by number of domains in the goal.
    pub by_domain_count: BTreeMap<usize, Aggregate>,
    /// Goals that involve each domain (overlapping slices).
    pub by_domain: BTreeMap<String, Aggregate>,
}

impl EvalReport {
    pub fn from_results(goals: Vec<GoalResult>, world: &World) -> Self {
        let overall = Aggregate::of(&goals);
        let mut by_domain_count = BTreeMap::new();
        for k in 1..=3 {
            let slice: Vec<&GoalResult> = goals.iter().filter(|g| g.num_domains == k).collect();
            if !slice.is_empty() {
                by_domain_count.insert(k, Aggregate::of(slice));
            }
        }
        let mut by_domain = BTreeMap::new();
        for d in world.ontology.domains() {
            let slice: Vec<&GoalResult> =
                goals.iter().filter(|g| g.domains.split('+').any(|x| x == d.name)).collect();
            if !slice.is_empty() {
                by_domain.insert(d.name.clone(), Aggregate::of(slice));
            }
        }
        Self { goals, overall, by_domain_count, by_domain }
    }

    pub fn write_goals_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for g in &self.goals {
            w.serialize(g)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table: one row for the whole set, then one per slice.
    pub fn summary_table(&self, label: &str) -> String {
        let mut rows = vec![(label.to_string(), self.overall)];
        rows.extend(self.by_domain_count.iter().map(|(k, a)| (format!("  {k} domain(s)"), *a)));
        rows.extend(self.by_domain.iter().map(|(d, a)| (format!("  with {d}"), *a)));
        format_table(&rows)
    }
}

/// Rows of `(name, aggregate)` as an aligned text table.
pub fn format_table(rows: &[(String, Aggregate)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>6}  {:>6}  {:>6}  {:>7}", "Method", "Dialogs", "Turns", "Inform", "Match", "Success");
    for (name, a) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>6.2}  {:>6.1}  {:>6.1}  {:>7.1}",
            name,
            a.dialogs,
            a.avg_turns,
            100.0 * a.inform_f1,
            100.0 * a.match_rate,
            100.0 * a.success
        );
    }
    out
}

fn goal_result(index: usize, goal: &UserGoal, t: &Trajectory) -> GoalResult {
    let o = &t.outcome;
    GoalResult {
        index,
        domains: goal.domains().collect::<Vec<_>>().join("+"),
        num_domains: goal.num_domains(),
        turns: o.turns,
        precision: o.inform.precision,
        recall: o.inform.recall,
        inform_f1: o.inform.f1,
        match_rate: goal.subgoals.iter().any(|g| g.needs_booking()).then_some(o.match_rate),
        success: o.success,
    }
}

/// Runs one greedy session per goal with the given pair of agents.
pub fn evaluate_trajectories(
    world: &World,
    goals: &[UserGoal],
    user: AgentSpec<'_>,
    system: AgentSpec<'_>,
    config: &EpisodeConfig,
) -> Result<Vec<Trajectory>> {
    goals
        .par_iter()
        .enumerate()
        .map(|(i, goal)| {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            let mut u_rule;
            let mut u_net;
            let u: &mut dyn UserAgent = match user {
                AgentSpec::Rule => {
                    u_rule = user.user();
                    u_rule.as_mut()
                }
                AgentSpec::Policy(p) => {
                    u_net = NeuralUser { policy: p, mode: ActMode::Greedy };
                    &mut u_net
                }
            };
            let mut s_rule = RuleSystem;
            let mut s_net;
            let s: &mut dyn SystemAgent = match system {
                AgentSpec::Rule => &mut s_rule,
                AgentSpec::Policy(p) => {
                    s_net = NeuralSystem { policy: p, mode: ActMode::Greedy };
                    &mut s_net
                }
            };
            run_episode(world, goal, u, s, config, &mut rng)
        })
        .collect()
}

pub fn evaluate(
    world: &World,
    goals: &[UserGoal],
    user: AgentSpec<'_>,
    system: AgentSpec<'_>,
    config: &EpisodeConfig,
) -> Result<EvalReport> {
    let trajs = evaluate_trajectories(world, goals, user, system, config)?;
    let results = trajs.iter().zip(goals).enumerate().map(|(i, (t, g))| goal_result(i, g, t)).collect();
    Ok(EvalReport::from_results(results, world))
}
