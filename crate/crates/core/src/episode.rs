//! Agent interfaces and the alternating user/system dialog loop.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::acts::{encode_acts, DialogAct, Intent, Role, NO_VALUE, PLACEHOLDER};
use crate::error::{Error, Result};
use crate::eval::{inform_f1, match_rate, DialogRecord, Exchange, InformScores};
use crate::policy::{ActMode, DialogPolicy};
use crate::rewards::{
    global_reward, system_reward, system_side_success, user_expressed_all, user_reward, GlobalRewardContext,
    RewardBreakdown, RewardConfig, SessionTracker, SystemRewardContext, UserRewardContext,
};
use crate::state::{
    init_states, record_system_acts, record_user_acts, update_system_state, update_user_state, vectorize_system,
    vectorize_user, SystemState, UserState,
};
use crate::world::{query, Entity, UserGoal, World, DONT_CARE, GENERAL_DOMAIN};

pub const DEFAULT_MAX_TURNS: usize = 20;

/// One dialog turn: the user's move, the system's reply and all three rewards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transition {
    pub s_user: Vec<f64>,
    /// User act mask followed by the terminal bit.
    pub a_user: Vec<f64>,
    pub terminal: bool,
    pub s_sys: Vec<f64>,
    pub a_sys: Vec<f64>,
    pub r_u: f64,
    pub r_s: f64,
    pub r_g: f64,
    pub next_user: Vec<f64>,
    pub next_sys: Vec<f64>,
    pub done: bool,
}

pub struct UserObservation<'a> {
    pub world: &'a World,
    pub goal: &'a UserGoal,
    pub state: &'a UserState,
    pub vector: &'a [f64],
    /// The system's previous reply (empty on the first turn).
    pub system_acts: &'a [DialogAct],
    pub turn: usize,
}

pub struct SystemObservation<'a> {
    pub world: &'a World,
    pub state: &'a SystemState,
    pub vector: &'a [f64],
    pub user_acts: &'a [DialogAct],
    pub turn: usize,
}

/// Grounded acts plus the act mask they were chosen as.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTurn {
    pub acts: Vec<DialogAct>,
    pub action: Vec<f64>,
    pub terminal: bool,
}

pub trait UserAgent {
    fn begin(&mut self, _goal: &UserGoal, _world: &World) {}
    fn act(&mut self, obs: &UserObservation<'_>, rng: &mut dyn RngCore) -> Result<AgentTurn>;
}

pub trait SystemAgent {
    fn begin(&mut self, _world: &World) {}
    fn act(&mut self, obs: &SystemObservation<'_>, rng: &mut dyn RngCore) -> Result<AgentTurn>;
}

/// First entity of `domain` matching the current belief.
pub fn first_match<'w>(world: &'w World, state: &SystemState, domain: &str) -> Result<Option<&'w Entity>> {
    let empty = BTreeMap::new();
    let belief = state.belief.get(domain).unwrap_or(&empty);
    Ok(query(&world.db, &world.ontology, domain, belief)?.into_iter().next())
}

/// Fills system act values from the first entity matching the belief. Acts
/// that need an entity in a domain with no match collapse into one nooffer.
pub fn ground_system_acts(acts: &[DialogAct], state: &SystemState, world: &World) -> Result<Vec<DialogAct>> {
    let mut out = Vec::with_capacity(acts.len());
    let mut entities: BTreeMap<&str, Option<&Entity>> = BTreeMap::new();
    let mut nooffer: BTreeSet<String> = BTreeSet::new();
    for act in acts {
        let value = match act.intent {
            Intent::Request => PLACEHOLDER.to_string(),
            Intent::Inform | Intent::Recommend | Intent::Book if act.domain != GENERAL_DOMAIN => {
                let entity = match entities.get(act.domain.as_str()) {
                    Some(e) => *e,
                    None => {
                        let e = first_match(world, state, &act.domain)?;
                        entities.insert(&act.domain, e);
                        e
                    }
                };
                let Some(entity) = entity else {
                    nooffer.insert(act.domain.clone());
                    continue;
                };
                if act.intent == Intent::Inform {
                    entity
                        .get(&act.slot)
                        .ok_or_else(|| Error::MissingValue { domain: act.domain.clone(), slot: act.slot.clone() })?
                        .to_string()
                } else {
                    entity.id.clone()
                }
            }
            Intent::NoOffer => {
                nooffer.insert(act.domain.clone());
                continue;
            }
            _ => NO_VALUE.to_string(),
        };
        out.push(DialogAct { value, ..act.clone() });
    }
    out.extend(nooffer.iter().map(|d| DialogAct::new(d, Intent::NoOffer, crate::world::NO_SLOT, NO_VALUE)));
    Ok(out)
}

/// Fills user informs from the goal; slots the goal does not constrain become "dont care".
pub fn ground_user_acts(acts: &[DialogAct], goal: &UserGoal) -> Vec<DialogAct> {
    acts.iter()
        .map(|a| {
            let value = match a.intent {
                Intent::Request => PLACEHOLDER.to_string(),
                Intent::Inform => goal
                    .subgoal(&a.domain)
                    .and_then(|g| g.constraints.get(&a.slot).or_else(|| g.book.get(&a.slot)))
                    .cloned()
                    .unwrap_or_else(|| DONT_CARE.to_string()),
                _ => NO_VALUE.to_string(),
            };
            DialogAct { value, ..a.clone() }
        })
        .collect()
}

/// Encodes grounded acts by their delexicalized keys.
pub fn act_mask(acts: &[DialogAct], world: &World, role: Role) -> Result<Vec<f64>> {
    encode_acts(acts, world.space(role))
}

pub struct NeuralUser<'p> {
    pub policy: &'p DialogPolicy,
    pub mode: ActMode,
}

impl UserAgent for NeuralUser<'_> {
    fn act(&mut self, obs: &UserObservation<'_>, rng: &mut dyn RngCore) -> Result<AgentTurn> {
        let d = self.policy.act(obs.vector, self.mode, rng)?;
        let acts = ground_user_acts(&d.acts(&obs.world.user_space), obs.goal);
        Ok(AgentTurn { acts, action: d.mask, terminal: d.terminal })
    }
}

pub struct NeuralSystem<'p> {
    pub policy: &'p DialogPolicy,
    pub mode: ActMode,
}

impl SystemAgent for NeuralSystem<'_> {
    fn act(&mut self, obs: &SystemObservation<'_>, rng: &mut dyn RngCore) -> Result<AgentTurn> {
        let d = self.policy.act(obs.vector, self.mode, rng)?;
        let acts = ground_system_acts(&d.acts(&obs.world.system_space), obs.state, obs.world)?;
        Ok(AgentTurn { acts, action: d.mask, terminal: false })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    /// End the session as soon as the task succeeds.
    pub terminate_on_success: bool,
    pub rewards: RewardConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { max_turns: DEFAULT_MAX_TURNS, terminate_on_success: true, rewards: RewardConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub transition: Transition,
    pub rewards: RewardBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub inform: InformScores,
    pub match_rate: f64,
    pub turns: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub record: DialogRecord,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.steps.iter().map(|s| &s.transition)
    }
}

fn with_terminal(mut mask: Vec<f64>, terminal: bool) -> Vec<f64> {
    mask.push(if terminal { 1.0 } else { 0.0 });
    mask
}

/// Runs one session: the user speaks first, the system replies, and the
/// three rewards are computed once the reply is known.
pub fn run_episode(
    world: &World,
    goal: &UserGoal,
    user: &mut dyn UserAgent,
    system: &mut dyn SystemAgent,
    config: &EpisodeConfig,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    if config.max_turns == 0 {
        return Err(Error::InvalidArgument("max_turns must be at least 1".into()));
    }
    user.begin(goal, world);
    system.begin(world);
    let (mut user_state, mut sys_state) = init_states(goal, world);
    let mut tracker = SessionTracker::default();
    let mut last_sys: Vec<DialogAct> = Vec::new();
    let mut steps: Vec<Step> = Vec::new();
    let mut turns = Vec::new();

    for t in 0..config.max_turns {
        let s_user = vectorize_user(&user_state, world);
        let u = user.act(
            &UserObservation { world, goal, state: &user_state, vector: &s_user, system_acts: &last_sys, turn: t },
            rng,
        )?;
        user_state = record_user_acts(&user_state, &u.acts, goal, world)?;
        let pending_after_user = user_state.pending_constraints.clone();
        let asked = tracker.observe_user(&u.acts);

        sys_state = update_system_state(&sys_state, &u.acts, world)?;
        let s_sys = vectorize_system(&sys_state, world);
        if let Some(prev) = steps.last_mut() {
            prev.transition.next_user = s_user.clone();
            prev.transition.next_sys = s_sys.clone();
        }
        let s = system.act(&SystemObservation { world, state: &sys_state, vector: &s_sys, user_acts: &u.acts, turn: t }, rng)?;
        sys_state = record_system_acts(&sys_state, &s.acts, world)?;
        tracker.observe_system(&s.acts, world);
        user_state = update_user_state(&user_state, &s.acts, goal, world)?;

        let newly = tracker.newly_completed(goal, &user_state, &sys_state.booked, world);
        let task_ok = tracker.task_success(goal, &sys_state.booked, world);
        let done = u.terminal || t + 1 == config.max_turns || (config.terminate_on_success && task_ok);
        let cfg = &config.rewards;
        let r_s = system_reward(
            cfg,
            &SystemRewardContext {
                system_acts: &s.acts,
                last_user_requests: &asked,
                done,
                expressed_success: done && system_side_success(&tracker, &sys_state, world),
            },
        );
        let r_u = user_reward(
            cfg,
            &UserRewardContext {
                user_acts: &u.acts,
                pending_constraints: &pending_after_user,
                done,
                expressed_all: done && user_expressed_all(goal, &user_state),
            },
        );
        let r_g = global_reward(cfg, &GlobalRewardContext { newly_completed: &newly, done, task_success: task_ok });
        let rewards = RewardBreakdown::new(r_s, r_u, r_g);

        let transition = Transition {
            s_user,
            a_user: with_terminal(u.action, u.terminal),
            terminal: u.terminal,
            s_sys,
            a_sys: s.action,
            r_u: rewards.r_u,
            r_s: rewards.r_s,
            r_g: rewards.r_g,
            next_user: vectorize_user(&user_state, world),
            next_sys: vectorize_system(&sys_state, world),
            done,
        };
        steps.push(Step { transition, rewards });
        turns.push(Exchange { user: u.acts, system: s.acts.clone() });
        last_sys = s.acts;
        if done {
            break;
        }
    }

    let record = DialogRecord { goal: goal.clone(), turns, booked: sys_state.booked.clone() };
    let inform = inform_f1(&record, &world.ontology);
    let matched = match_rate(goal, &record.booked, &world.db);
    let outcome = Outcome {
        success: crate::eval::task_success(inform.recall, matched),
        inform,
        match_rate: matched,
        turns: record.num_turns(),
    };
    Ok(Trajectory { steps, record, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::fixtures::{mini_ontology, three_entity_db};
    use crate::world::SubGoal;

    struct Silent;

    impl UserAgent for Silent {
        fn act(&mut self, obs: &UserObservation<'_>, _: &mut dyn RngCore) -> Result<AgentTurn> {
            Ok(AgentTurn { acts: vec![], action: vec![0.0; obs.world.user_space.dim()], terminal: false })
        }
    }

    impl SystemAgent for Silent {
        fn act(&mut self, obs: &SystemObservation<'_>, _: &mut dyn RngCore) -> Result<AgentTurn> {
            Ok(AgentTurn { acts: vec![], action: vec![0.0; obs.world.system_space.dim()], terminal: false })
        }
    }

    fn mini_world() -> World {
        World::new(mini_ontology(), three_entity_db())
    }

    fn goal() -> UserGoal {
        UserGoal {
            subgoals: vec![SubGoal {
                domain: "restaurant".into(),
                constraints: [("food".to_string(), "italian".to_string())].into(),
                requests: ["phone".to_string()].into(),
                book: BTreeMap::new(),
            }],
        }
    }

    #[test]
    fn silent_agents_run_to_the_cap() {
        let world = mini_world();
        let cfg = EpisodeConfig::default();
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let traj = run_episode(&world, &goal(), &mut Silent, &mut Silent, &cfg, &mut rng).unwrap();
        assert_eq!(traj.steps.len(), 20);
        for (i, step) in traj.steps.iter().enumerate() {
            let t = &step.transition;
            assert_eq!((t.r_s, t.r_u), if i < 19 { (-5.0, -5.0) } else { (-10.0, -10.0) });
            assert_eq!(t.r_g, if i < 19 { -1.0 } else { -6.0 });
            assert_eq!(t.done, i == 19);
            assert_eq!(t.a_user.len(), world.user_space.dim() + 1);
        }
        assert!(!traj.outcome.success);
    }

    #[test]
    fn system_grounding_uses_first_match() {
        let world = mini_world();
        let (_, sys) = init_states(&goal(), &world);
        let sys = update_system_state(&sys, &[DialogAct::new("restaurant", Intent::Inform, "food", "italian")], &world).unwrap();
        let acts = [
            DialogAct::delex("restaurant", Intent::Inform, "phone"),
            DialogAct::delex("restaurant", Intent::Book, "none"),
            DialogAct::delex("restaurant", Intent::Request, "area"),
            DialogAct::general(Intent::ReqMore),
        ];
        let g = ground_system_acts(&acts, &sys, &world).unwrap();
        assert_eq!(g[0].value, "01223 111111");
        assert_eq!(g[1].value, "restaurant-001");
        assert_eq!(g[2].value, "?");
        assert_eq!(g[3].value, "none");
    }

    #[test]
    fn system_grounding_without_match_is_nooffer() {
        let world = mini_world();
        let (_, sys) = init_states(&goal(), &world);
        let sys = update_system_state(
            &sys,
            &[
                DialogAct::new("restaurant", Intent::Inform, "food", "indian"),
                DialogAct::new("restaurant", Intent::Inform, "area", "south"),
            ],
            &world,
        )
        .unwrap();
        let acts = [DialogAct::delex("restaurant", Intent::Inform, "phone"), DialogAct::delex("restaurant", Intent::Recommend, "name")];
        let g = ground_system_acts(&acts, &sys, &world).unwrap();
        assert_eq!(g, vec![DialogAct::new("restaurant", Intent::NoOffer, "none", "none")]);
    }

    #[test]
    fn user_grounding_reads_goal() {
        let acts = [
            DialogAct::delex("restaurant", Intent::Inform, "food"),
            DialogAct::delex("restaurant", Intent::Inform, "area"),
            DialogAct::delex("restaurant", Intent::Request, "phone"),
        ];
        let g = ground_user_acts(&acts, &goal());
        assert_eq!(g[0].value, "italian");
        assert_eq!(g[1].value, DONT_CARE);
        assert_eq!(g[2].value, "?");
    }
}
