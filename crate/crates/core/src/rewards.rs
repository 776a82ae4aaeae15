//! Per-turn system, user and global rewards.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::acts::{DialogAct, Intent, Role};
use crate::error::{Error, Result};
use crate::eval::{booking_matches, informed_requestables, inform_scores, match_rate, task_success, SlotKey};
use crate::state::{SystemState, UserState};
use crate::world::{UserGoal, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub empty_act_penalty: f64,
    pub late_answer_penalty: f64,
    pub early_inform_penalty: f64,
    pub efficiency_penalty: f64,
    pub subgoal_reward: f64,
    pub success_reward: f64,
    pub failure_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            empty_act_penalty: -5.0,
            late_answer_penalty: -1.0,
            early_inform_penalty: -1.0,
            efficiency_penalty: -1.0,
            subgoal_reward: 5.0,
            success_reward: 20.0,
            failure_penalty: -5.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let penalties = [
            ("empty_act_penalty", self.empty_act_penalty),
            ("late_answer_penalty", self.late_answer_penalty),
            ("early_inform_penalty", self.early_inform_penalty),
            ("efficiency_penalty", self.efficiency_penalty),
            ("failure_penalty", self.failure_penalty),
        ];
        for (name, v) in penalties {
            if !v.is_finite() || v > 0.0 {
                return Err(Error::schema(format!("rewards.{name}"), "must be finite and <= 0"));
            }
        }
        for (name, v) in [("subgoal_reward", self.subgoal_reward), ("success_reward", self.success_reward)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::schema(format!("rewards.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardComponent {
    SystemEmptyAct,
    LateAnswer,
    SystemSuccess,
    SystemFailure,
    UserEmptyAct,
    EarlyInform,
    UserGoalExpressed,
    UserGoalUnexpressed,
    Efficiency,
    Subgoal(String),
    TaskSuccess,
    TaskFailure,
}

impl RewardComponent {
    /// Which reward stream the component belongs to; `None` for the global one.
    pub fn role(&self) -> Option<Role> {
        use RewardComponent::*;
        match self {
            SystemEmptyAct | LateAnswer | SystemSuccess | SystemFailure => Some(Role::System),
            UserEmptyAct | EarlyInform | UserGoalExpressed | UserGoalUnexpressed => Some(Role::User),
            Efficiency | Subgoal(_) | TaskSuccess | TaskFailure => None,
        }
    }
}

pub type Fired = Vec<(RewardComponent, f64)>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_s: f64,
    pub r_u: f64,
    pub r_g: f64,
    pub fired: Fired,
}

impl RewardBreakdown {
    pub fn new(system: Fired, user: Fired, global: Fired) -> Self {
        let sum = |f: &Fired| f.iter().map(|(_, v)| v).sum::<f64>();
        let (r_s, r_u, r_g) = (sum(&system), sum(&user), sum(&global));
        let fired = system.into_iter().chain(user).chain(global).collect();
        Self { r_s, r_u, r_g, fired }
    }

    /// The summed reward used by a single centralized critic.
    pub fn total(&self) -> f64 {
        self.r_s + self.r_u + self.r_g
    }

    pub fn has(&self, component: &RewardComponent) -> bool {
        self.fired.iter().any(|(c, _)| c == component)
    }
}

pub struct SystemRewardContext<'a> {
    pub system_acts: &'a [DialogAct],
    /// Slots requested in the user turn this reply answers.
    pub last_user_requests: &'a BTreeSet<SlotKey>,
    pub done: bool,
    /// Outcome judged against what the user expressed (see [`system_side_success`]).
    pub expressed_success: bool,
}

pub fn system_reward(cfg: &RewardConfig, ctx: &SystemRewardContext<'_>) -> Fired {
    let mut fired = Vec::new();
    if ctx.system_acts.is_empty() {
        fired.push((RewardComponent::SystemEmptyAct, cfg.empty_act_penalty));
    }
    let answered: BTreeSet<SlotKey> = ctx
        .system_acts
        .iter()
        .filter(|a| a.intent == Intent::Inform)
        .map(|a| (a.domain.clone(), a.slot.clone()))
        .collect();
    if ctx.last_user_requests.iter().any(|k| !answered.contains(k)) {
        fired.push((RewardComponent::LateAnswer, cfg.late_answer_penalty));
    }
    if ctx.done {
        if ctx.expressed_success {
            fired.push((RewardComponent::SystemSuccess, cfg.success_reward));
        } else {
            fired.push((RewardComponent::SystemFailure, cfg.failure_penalty));
        }
    }
    fired
}

pub struct UserRewardContext<'a> {
    pub user_acts: &'a [DialogAct],
    /// Constraint flags after the user's own informs this turn.
    pub pending_constraints: &'a BTreeSet<SlotKey>,
    pub done: bool,
    pub expressed_all: bool,
}

pub fn user_reward(cfg: &RewardConfig, ctx: &UserRewardContext<'_>) -> Fired {
    let mut fired = Vec::new();
    if ctx.user_acts.is_empty() {
        fired.push((RewardComponent::UserEmptyAct, cfg.empty_act_penalty));
    }
    let early = ctx
        .user_acts
        .iter()
        .filter(|a| a.intent == Intent::Request)
        .any(|a| ctx.pending_constraints.iter().any(|(d, _)| d == &a.domain));
    if early {
        fired.push((RewardComponent::EarlyInform, cfg.early_inform_penalty));
    }
    if ctx.done {
        if ctx.expressed_all {
            fired.push((RewardComponent::UserGoalExpressed, cfg.success_reward));
        } else {
            fired.push((RewardComponent::UserGoalUnexpressed, cfg.failure_penalty));
        }
    }
    fired
}

pub struct GlobalRewardContext<'a> {
    pub newly_completed: &'a [String],
    pub done: bool,
    pub task_success: bool,
}

pub fn global_reward(cfg: &RewardConfig, ctx: &GlobalRewardContext<'_>) -> Fired {
    let mut fired = vec![(RewardComponent::Efficiency, cfg.efficiency_penalty)];
    fired.extend(ctx.newly_completed.iter().map(|d| (RewardComponent::Subgoal(d.clone()), cfg.subgoal_reward)));
    if ctx.done {
        if ctx.task_success {
            fired.push((RewardComponent::TaskSuccess, cfg.success_reward));
        } else {
            fired.push((RewardComponent::TaskFailure, cfg.failure_penalty));
        }
    }
    fired
}

/// Session-level bookkeeping that the reward predicates need beyond the
/// agents' own states.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTracker {
    /// Requestable slots the system has informed with a value.
    pub informed: BTreeSet<SlotKey>,
    /// Slots the user has requested at any point.
    pub expressed_requests: BTreeSet<SlotKey>,
    /// Domains whose subgoal reward has been paid.
    pub completed: BTreeSet<String>,
}

impl SessionTracker {
    /// Requests voiced in `user_acts`, recorded and returned.
    pub fn observe_user(&mut self, user_acts: &[DialogAct]) -> BTreeSet<SlotKey> {
        let asked: BTreeSet<SlotKey> = user_acts
            .iter()
            .filter(|a| a.intent == Intent::Request)
            .map(|a| (a.domain.clone(), a.slot.clone()))
            .collect();
        self.expressed_requests.extend(asked.iter().cloned());
        asked
    }

    pub fn observe_system(&mut self, system_acts: &[DialogAct], world: &World) {
        self.informed.extend(informed_requestables(system_acts, &world.ontology));
    }

    /// Subgoals that are complete now and were not before; marks them paid.
    pub fn newly_completed(&mut self, goal: &UserGoal, user: &UserState, booked: &BTreeMap<String, String>, world: &World) -> Vec<String> {
        let mut out = Vec::new();
        for sub in &goal.subgoals {
            if !self.completed.contains(&sub.domain) && subgoal_complete(goal, &sub.domain, user, &self.informed, booked, world) {
                self.completed.insert(sub.domain.clone());
                out.push(sub.domain.clone());
            }
        }
        out
    }

    pub fn task_success(&self, goal: &UserGoal, booked: &BTreeMap<String, String>, world: &World) -> bool {
        task_success(inform_scores(goal, &self.informed).recall, match_rate(goal, booked, &world.db))
    }
}

/// A domain's subtask is done when every constraint was informed and is
/// consistent, every request was answered, and a required booking matches.
pub fn subgoal_complete(
    goal: &UserGoal,
    domain: &str,
    user: &UserState,
    informed: &BTreeSet<SlotKey>,
    booked: &BTreeMap<String, String>,
    world: &World,
) -> bool {
    let Some(sub) = goal.subgoal(domain) else { return false };
    let in_domain = |k: &SlotKey| k.0 == domain;
    if user.pending_constraints.iter().any(in_domain) || user.inconsistent.iter().any(in_domain) {
        return false;
    }
    if !sub.requests.iter().all(|s| informed.contains(&(domain.to_string(), s.clone()))) {
        return false;
    }
    !sub.needs_booking() || booking_matches(goal, domain, booked, &world.db)
}

/// Success as the system can judge it: the user voiced at least one demand,
/// every voiced request was answered, and every domain where the user gave
/// booking details has a booking consistent with the informed constraints.
pub fn system_side_success(tracker: &SessionTracker, system: &SystemState, world: &World) -> bool {
    let booking_domains: Vec<&String> =
        system.book_info.iter().filter(|(_, info)| !info.is_empty()).map(|(d, _)| d).collect();
    if tracker.expressed_requests.is_empty() && booking_domains.is_empty() {
        return false;
    }
    if !tracker.expressed_requests.is_subset(&tracker.informed) {
        return false;
    }
    booking_domains.iter().all(|d| {
        let belief = system.belief.get(*d).cloned().unwrap_or_default();
        system
            .booked
            .get(*d)
            .and_then(|id| world.db.entity(d, id))
            .is_some_and(|e| e.satisfies(&belief))
    })
}

/// Whether the user has voiced every constraint, booking detail and request.
pub fn user_expressed_all(goal: &UserGoal, user: &UserState) -> bool {
    user.pending_constraints.is_empty()
        && user.pending_book_info.is_empty()
        && goal
            .subgoals
            .iter()
            .all(|g| g.requests.iter().all(|s| user.expressed_requests.contains(&(g.domain.clone(), s.clone()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{init_states, record_system_acts, record_user_acts, update_system_state, update_user_state};
    use crate::world::fixtures::{mini_ontology, three_entity_db};
    use crate::world::SubGoal;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    fn act(intent: Intent, slot: &str, value: &str) -> DialogAct {
        DialogAct::new("restaurant", intent, slot, value)
    }

    fn keys(slots: &[&str]) -> BTreeSet<SlotKey> {
        slots.iter().map(|s| ("restaurant".to_string(), s.to_string())).collect()
    }

    fn total(f: &Fired) -> f64 {
        f.iter().map(|(_, v)| v).sum()
    }

    #[test]
    fn defaults_are_valid() {
        cfg().validate().unwrap();
        let bad = RewardConfig { subgoal_reward: -1.0, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = RewardConfig { late_answer_penalty: f64::NAN, ..cfg() };
        assert!(bad.validate().is_err());
        let parsed: RewardConfig = toml::from_str("success_reward = 10.0").unwrap();
        assert_eq!(parsed.success_reward, 10.0);
        assert_eq!(parsed.failure_penalty, -5.0);
    }

    #[test]
    fn system_empty_act() {
        let ctx = SystemRewardContext { system_acts: &[], last_user_requests: &BTreeSet::new(), done: false, expressed_success: false };
        assert_eq!(total(&system_reward(&cfg(), &ctx)), -5.0);
    }

    #[test]
    fn system_late_answer() {
        let acts = [act(Intent::Inform, "address", "1 road")];
        let req = keys(&["phone"]);
        let ctx = SystemRewardContext { system_acts: &acts, last_user_requests: &req, done: false, expressed_success: false };
        assert_eq!(system_reward(&cfg(), &ctx), vec![(RewardComponent::LateAnswer, -1.0)]);
        let req = keys(&["phone", "postcode"]);
        let ctx = SystemRewardContext { last_user_requests: &req, ..ctx };
        assert_eq!(total(&system_reward(&cfg(), &ctx)), -1.0);
    }

    #[test]
    fn system_final_success() {
        let acts = [act(Intent::Inform, "phone", "01223 111111")];
        let req = keys(&["phone"]);
        let ctx = SystemRewardContext { system_acts: &acts, last_user_requests: &req, done: true, expressed_success: true };
        assert_eq!(system_reward(&cfg(), &ctx), vec![(RewardComponent::SystemSuccess, 20.0)]);
    }

    #[test]
    fn user_early_inform() {
        let acts = [act(Intent::Request, "phone", "?")];
        let pending = keys(&["food"]);
        let ctx = UserRewardContext { user_acts: &acts, pending_constraints: &pending, done: false, expressed_all: false };
        assert_eq!(total(&user_reward(&cfg(), &ctx)), -1.0);
        let other = [DialogAct::new("hotel", Intent::Request, "phone", "?")];
        let ctx = UserRewardContext { user_acts: &other, ..ctx };
        assert_eq!(total(&user_reward(&cfg(), &ctx)), 0.0);
    }

    #[test]
    fn user_empty_and_unexpressed() {
        let none = BTreeSet::new();
        let ctx = UserRewardContext { user_acts: &[], pending_constraints: &none, done: false, expressed_all: false };
        assert_eq!(total(&user_reward(&cfg(), &ctx)), -5.0);
        let acts = [DialogAct::general(Intent::Bye)];
        let ctx = UserRewardContext { user_acts: &acts, pending_constraints: &none, done: true, expressed_all: false };
        assert!(user_reward(&cfg(), &ctx).contains(&(RewardComponent::UserGoalUnexpressed, -5.0)));
    }

    #[test]
    fn global_components() {
        let g = |done, success, completed: &[String]| {
            total(&global_reward(&cfg(), &GlobalRewardContext { newly_completed: completed, done, task_success: success }))
        };
        assert_eq!(g(false, false, &[]), -1.0);
        assert_eq!(g(false, false, &["restaurant".into()]), 4.0);
        assert_eq!(g(true, true, &["restaurant".into()]), 24.0);
    }

    #[test]
    fn breakdown_sums_components() {
        let b = RewardBreakdown::new(
            vec![(RewardComponent::LateAnswer, -1.0)],
            vec![(RewardComponent::UserEmptyAct, -5.0), (RewardComponent::EarlyInform, -1.0)],
            vec![(RewardComponent::Efficiency, -1.0), (RewardComponent::Subgoal("hotel".into()), 5.0)],
        );
        assert_eq!((b.r_s, b.r_u, b.r_g), (-1.0, -6.0, 4.0));
        assert_eq!(b.total(), b.fired.iter().map(|(_, v)| v).sum::<f64>());
        let by_role = |r: Option<Role>| b.fired.iter().filter(|(c, _)| c.role() == r).map(|(_, v)| v).sum::<f64>();
        assert_eq!(by_role(Some(Role::System)), b.r_s);
        assert_eq!(by_role(Some(Role::User)), b.r_u);
        assert_eq!(by_role(None), b.r_g);
        assert!(b.has(&RewardComponent::EarlyInform));
    }

    fn mini_world() -> World {
        World::new(mini_ontology(), three_entity_db())
    }

    fn two_request_goal() -> UserGoal {
        UserGoal {
            subgoals: vec![SubGoal {
                domain: "restaurant".into(),
                constraints: [("food".to_string(), "italian".to_string())].into(),
                requests: ["phone".to_string(), "postcode".to_string()].into(),
                book: BTreeMap::new(),
            }],
        }
    }

    #[test]
    fn system_and_global_success_can_disagree() {
        // The user never asks for the postcode: the system answers all it was
        // asked, but the goal's inform recall stays below one.
        let world = mini_world();
        let goal = two_request_goal();
        let (mut user, mut sys) = init_states(&goal, &world);
        let mut tracker = SessionTracker::default();

        let user_acts = [act(Intent::Inform, "food", "italian"), act(Intent::Request, "phone", "?")];
        user = record_user_acts(&user, &user_acts, &goal, &world).unwrap();
        tracker.observe_user(&user_acts);
        sys = update_system_state(&sys, &user_acts, &world).unwrap();
        let sys_acts = [act(Intent::Inform, "phone", "01223 111111")];
        sys = record_system_acts(&sys, &sys_acts, &world).unwrap();
        tracker.observe_system(&sys_acts, &world);
        user = update_user_state(&user, &sys_acts, &goal, &world).unwrap();

        let sys_ok = system_side_success(&tracker, &sys, &world);
        assert!(sys_ok);
        let global_ok = tracker.task_success(&goal, &sys.booked, &world);
        assert!(!global_ok);
        assert!(!user_expressed_all(&goal, &user));

        let none = BTreeSet::new();
        let r_s = system_reward(&cfg(), &SystemRewardContext { system_acts: &sys_acts, last_user_requests: &none, done: true, expressed_success: sys_ok });
        let r_g = global_reward(&cfg(), &GlobalRewardContext { newly_completed: &[], done: true, task_success: global_ok });
        assert!(r_s.contains(&(RewardComponent::SystemSuccess, 20.0)));
        assert!(r_g.contains(&(RewardComponent::TaskFailure, -5.0)));
    }

    #[test]
    fn subgoal_pays_once() {
        let world = mini_world();
        let mut goal = two_request_goal();
        goal.subgoals[0].requests = ["phone".to_string()].into();
        let (mut user, _) = init_states(&goal, &world);
        let user_acts = [act(Intent::Inform, "food", "italian"), act(Intent::Request, "phone", "?")];
        user = record_user_acts(&user, &user_acts, &goal, &world).unwrap();
        let mut tracker = SessionTracker::default();
        let booked = BTreeMap::new();
        assert!(tracker.newly_completed(&goal, &user, &booked, &world).is_empty());
        tracker.observe_system(&[act(Intent::Inform, "phone", "01223 111111")], &world);
        assert_eq!(tracker.newly_completed(&goal, &user, &booked, &world), vec!["restaurant".to_string()]);
        assert!(tracker.newly_completed(&goal, &user, &booked, &world).is_empty());
    }

    #[test]
    fn booking_required_for_subgoal() {
        let world = mini_world();
        let mut goal = two_request_goal();
        goal.subgoals[0].requests.clear();
        goal.subgoals[0].book = [("day".to_string(), "monday".to_string())].into();
        let (mut user, _) = init_states(&goal, &world);
        user = record_user_acts(&user, &[act(Intent::Inform, "food", "italian")], &goal, &world).unwrap();
        let informed = BTreeSet::new();
        let wrong = [("restaurant".to_string(), "restaurant-000".to_string())].into();
        let right = [("restaurant".to_string(), "restaurant-001".to_string())].into();
        assert!(!subgoal_complete(&goal, "restaurant", &user, &informed, &BTreeMap::new(), &world));
        assert!(!subgoal_complete(&goal, "restaurant", &user, &informed, &wrong, &world));
        assert!(subgoal_complete(&goal, "restaurant", &user, &informed, &right, &world));
    }
}
