//! Symbolic dialog state for both agents and the feature vectors fed to the
//! policies and critics.
//!
//! System vector layout, in order:
//! 1. current user acts (multi-hot over the user action space)
//! 2. previous system acts (multi-hot over the system action space)
//! 3. belief: per informable slot, one-hot over its values plus a "filled" bit
//! 4. requested flags, one per requestable slot
//! 5. database match count, one-hot bucket {0, 1, 2-3, >=4} per domain
//! 6. book-slot filled bits, one per book slot
//! 7. booked flag, one per domain
//!
//! User vector layout, in order:
//! 1. previous system acts, 2. previous user acts,
//! 3. goal flags: constraints not yet informed, book slots not yet informed,
//!    requests not yet answered, booking not yet made (one per domain)
//! 4. inconsistency flags, one per informable slot

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::acts::{encode_acts, DialogAct, Intent};
use crate::error::{Error, Result};
use crate::world::{count_matches, Ontology, UserGoal, World, DONT_CARE, GENERAL_DOMAIN};

pub const DB_BUCKETS: usize = 4;

/// Bucket index for a database match count: 0, 1, 2-3, >=4.
pub fn db_bucket(count: usize) -> usize {
    match count {
        0 => 0,
        1 => 1,
        2 | 3 => 2,
        _ => 3,
    }
}

type SlotKey = (String, String);

/// Offsets of every segment of both state vectors for one ontology.
#[derive(Clone, Debug)]
pub struct StateLayout {
    informable: Vec<(SlotKey, Vec<String>)>,
    requestable: Vec<SlotKey>,
    book_slots: Vec<SlotKey>,
    domains: Vec<String>,
    system_dim: usize,
    user_dim: usize,
}

impl StateLayout {
    pub fn new(ontology: &Ontology, user_acts: usize, sys_acts: usize) -> Self {
        let mut informable = Vec::new();
        let mut requestable = Vec::new();
        let mut book_slots = Vec::new();
        for d in ontology.domains() {
            for (slot, values) in &d.informable {
                informable.push(((d.name.clone(), slot.clone()), values.clone()));
            }
            requestable.extend(d.requestable.iter().map(|s| (d.name.clone(), s.clone())));
            book_slots.extend(d.book_slots.iter().map(|s| (d.name.clone(), s.clone())));
        }
        let domains: Vec<String> = ontology.domains().iter().map(|d| d.name.clone()).collect();
        let belief: usize = informable.iter().map(|(_, v)| v.len() + 1).sum();
        let system_dim = user_acts
            + sys_acts
            + belief
            + requestable.len()
            + DB_BUCKETS * domains.len()
            + book_slots.len()
            + domains.len();
        let user_dim = sys_acts + user_acts + informable.len() + book_slots.len() + requestable.len() + domains.len()
            + informable.len();
        Self { informable, requestable, book_slots, domains, system_dim, user_dim }
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn user_dim(&self) -> usize {
        self.user_dim
    }

    fn system_names(&self, world: &World) -> Vec<String> {
        let mut names = Vec::with_capacity(self.system_dim);
        names.extend(world.user_space.entries().iter().map(|k| format!("user_act:{k}")));
        names.extend(world.system_space.entries().iter().map(|k| format!("prev_sys_act:{k}")));
        for ((d, s), values) in &self.informable {
            names.extend(values.iter().map(|v| format!("belief:{d}-{s}={v}")));
            names.push(format!("belief:{d}-{s}:filled"));
        }
        names.extend(self.requestable.iter().map(|(d, s)| format!("requested:{d}-{s}")));
        for d in &self.domains {
            names.extend(["0", "1", "2-3", "4+"].iter().map(|b| format!("db_count:{d}:{b}")));
        }
        names.extend(self.book_slots.iter().map(|(d, s)| format!("book_info:{d}-{s}")));
        names.extend(self.domains.iter().map(|d| format!("booked:{d}")));
        names
    }

    fn user_names(&self, world: &World) -> Vec<String> {
        let mut names = Vec::with_capacity(self.user_dim);
        names.extend(world.system_space.entries().iter().map(|k| format!("prev_sys_act:{k}")));
        names.extend(world.user_space.entries().iter().map(|k| format!("prev_user_act:{k}")));
        names.extend(self.informable.iter().map(|((d, s), _)| format!("goal:inform:{d}-{s}")));
        names.extend(self.book_slots.iter().map(|(d, s)| format!("goal:book_info:{d}-{s}")));
        names.extend(self.requestable.iter().map(|(d, s)| format!("goal:request:{d}-{s}")));
        names.extend(self.domains.iter().map(|d| format!("goal:booking:{d}")));
        names.extend(self.informable.iter().map(|((d, s), _)| format!("inconsistent:{d}-{s}")));
        names
    }

    /// Human-readable `index<TAB>name` listing for both vectors.
    pub fn describe(&self, world: &World) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# system state ({} dims)", self.system_dim);
        for (i, n) in self.system_names(world).iter().enumerate() {
            let _ = writeln!(out, "{i}\t{n}");
        }
        let _ = writeln!(out, "# user state ({} dims)", self.user_dim);
        for (i, n) in self.user_names(world).iter().enumerate() {
            let _ = writeln!(out, "{i}\t{n}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub user_acts_now: Vec<f64>,
    pub sys_acts_prev: Vec<f64>,
    /// Constraint values the user has informed, per domain.
    pub belief: BTreeMap<String, BTreeMap<String, String>>,
    /// (domain, slot) pairs the user asked for and the system has not answered.
    pub requested: BTreeSet<SlotKey>,
    /// Book-slot values the user has supplied, per domain.
    pub book_info: BTreeMap<String, BTreeMap<String, String>>,
    /// Entity id booked per domain (latest booking wins).
    pub booked: BTreeMap<String, String>,
    /// Match count per domain under the current belief.
    pub db_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub sys_acts_prev: Vec<f64>,
    pub user_acts_prev: Vec<f64>,
    /// Goal constraints not yet informed.
    pub pending_constraints: BTreeSet<SlotKey>,
    /// Book slots not yet informed.
    pub pending_book_info: BTreeSet<SlotKey>,
    /// Goal requests not yet answered by the system.
    pub pending_requests: BTreeSet<SlotKey>,
    /// Domains whose booking has not been made.
    pub pending_bookings: BTreeSet<String>,
    /// Constraint slots whose latest system inform conflicts with the goal.
    pub inconsistent: BTreeSet<SlotKey>,
    /// Requests the user has voiced so far.
    pub expressed_requests: BTreeSet<SlotKey>,
}

impl UserState {
    /// Number of set goal flags.
    pub fn pending_count(&self) -> usize {
        self.pending_constraints.len()
            + self.pending_book_info.len()
            + self.pending_requests.len()
            + self.pending_bookings.len()
    }

    pub fn domain_has_pending_constraints(&self, domain: &str) -> bool {
        self.pending_constraints.iter().any(|(d, _)| d == domain)
    }
}

fn check_slot(ontology: &Ontology, act: &DialogAct) -> Result<()> {
    if act.domain == GENERAL_DOMAIN {
        return Ok(());
    }
    let schema = ontology.domain(&act.domain)?;
    let known = match act.intent {
        Intent::Inform | Intent::Request => {
            schema.is_informable(&act.slot) || schema.is_requestable(&act.slot) || schema.is_book_slot(&act.slot)
        }
        _ => true,
    };
    if known {
        Ok(())
    } else {
        Err(Error::UnknownSlot { domain: act.domain.clone(), slot: act.slot.clone() })
    }
}

/// Fresh states at the start of a session.
pub fn init_states(goal: &UserGoal, world: &World) -> (UserState, SystemState) {
    let mut user = UserState {
        sys_acts_prev: vec![0.0; world.system_space.dim()],
        user_acts_prev: vec![0.0; world.user_space.dim()],
        pending_constraints: BTreeSet::new(),
        pending_book_info: BTreeSet::new(),
        pending_requests: BTreeSet::new(),
        pending_bookings: BTreeSet::new(),
        inconsistent: BTreeSet::new(),
        expressed_requests: BTreeSet::new(),
    };
    for g in &goal.subgoals {
        let d = &g.domain;
        user.pending_constraints.extend(g.constraints.keys().map(|s| (d.clone(), s.clone())));
        user.pending_requests.extend(g.requests.iter().map(|s| (d.clone(), s.clone())));
        if g.needs_booking() {
            user.pending_book_info.extend(g.book.keys().map(|s| (d.clone(), s.clone())));
            user.pending_bookings.insert(d.clone());
        }
    }
    let system = SystemState {
        user_acts_now: vec![0.0; world.user_space.dim()],
        sys_acts_prev: vec![0.0; world.system_space.dim()],
        belief: BTreeMap::new(),
        requested: BTreeSet::new(),
        book_info: BTreeMap::new(),
        booked: BTreeMap::new(),
        db_counts: world
            .ontology
            .domains()
            .iter()
            .map(|d| count_matches(&world.db, &d.name, &BTreeMap::new()))
            .collect(),
    };
    (user, system)
}

/// Folds the user's grounded acts into the system's belief.
pub fn update_system_state(prev: &SystemState, user_acts: &[DialogAct], world: &World) -> Result<SystemState> {
    let mut next = prev.clone();
    for act in user_acts {
        check_slot(&world.ontology, act)?;
        if act.domain == GENERAL_DOMAIN {
            continue;
        }
        let schema = world.ontology.domain(&act.domain)?;
        match act.intent {
            Intent::Inform if schema.is_informable(&act.slot) => {
                next.belief.entry(act.domain.clone()).or_default().insert(act.slot.clone(), act.value.clone());
            }
            Intent::Inform if schema.is_book_slot(&act.slot) => {
                next.book_info.entry(act.domain.clone()).or_default().insert(act.slot.clone(), act.value.clone());
            }
            Intent::Request => {
                next.requested.insert((act.domain.clone(), act.slot.clone()));
            }
            _ => {}
        }
    }
    next.user_acts_now = encode_delex(user_acts, &world.user_space)?;
    let empty = BTreeMap::new();
    for (i, d) in world.ontology.domains().iter().enumerate() {
        let belief = prev_or(&next.belief, &d.name, &empty);
        next.db_counts[i] = count_matches(&world.db, &d.name, belief);
    }
    Ok(next)
}

fn prev_or<'a>(
    map: &'a BTreeMap<String, BTreeMap<String, String>>,
    key: &str,
    empty: &'a BTreeMap<String, String>,
) -> &'a BTreeMap<String, String> {
    map.get(key).unwrap_or(empty)
}

fn encode_delex(acts: &[DialogAct], space: &crate::acts::ActionSpace) -> Result<Vec<f64>> {
    let delex: Vec<DialogAct> = acts.iter().map(DialogAct::to_delex).collect();
    encode_acts(&delex, space)
}

/// Records what the system just said: previous-act segment, bookings and
/// answered requests.
pub fn record_system_acts(prev: &SystemState, system_acts: &[DialogAct], world: &World) -> Result<SystemState> {
    let mut next = prev.clone();
    next.sys_acts_prev = encode_delex(system_acts, &world.system_space)?;
    for act in system_acts {
        match act.intent {
            Intent::Book => {
                next.booked.insert(act.domain.clone(), act.value.clone());
            }
            Intent::Inform => {
                next.requested.remove(&(act.domain.clone(), act.slot.clone()));
            }
            _ => {}
        }
    }
    Ok(next)
}

/// Folds the system's grounded acts into the user's goal and inconsistency flags.
pub fn update_user_state(prev: &UserState, system_acts: &[DialogAct], goal: &UserGoal, world: &World) -> Result<UserState> {
    let mut next = prev.clone();
    for act in system_acts {
        check_slot(&world.ontology, act)?;
        if act.domain == GENERAL_DOMAIN {
            continue;
        }
        let Some(sub) = goal.subgoal(&act.domain) else { continue };
        let key = (act.domain.clone(), act.slot.clone());
        match act.intent {
            Intent::Inform => {
                if sub.requests.contains(&act.slot) {
                    next.pending_requests.remove(&key);
                }
                if let Some(wanted) = sub.constraints.get(&act.slot) {
                    if wanted != DONT_CARE && act.value != DONT_CARE && &act.value != wanted {
                        next.inconsistent.insert(key);
                    } else {
                        next.inconsistent.remove(&key);
                    }
                }
            }
            Intent::Book => {
                let ready = !next.domain_has_pending_constraints(&act.domain)
                    && !next.pending_book_info.iter().any(|(d, _)| d == &act.domain);
                if ready {
                    next.pending_bookings.remove(&act.domain);
                }
            }
            _ => {}
        }
    }
    next.sys_acts_prev = encode_delex(system_acts, &world.system_space)?;
    Ok(next)
}

/// Records what the user just said: clears informed goal flags and remembers
/// voiced requests.
pub fn record_user_acts(prev: &UserState, user_acts: &[DialogAct], goal: &UserGoal, world: &World) -> Result<UserState> {
    let mut next = prev.clone();
    for act in user_acts {
        check_slot(&world.ontology, act)?;
        if act.domain == GENERAL_DOMAIN {
            continue;
        }
        let key = (act.domain.clone(), act.slot.clone());
        match act.intent {
            Intent::Inform => {
                if let Some(sub) = goal.subgoal(&act.domain) {
                    if sub.constraints.contains_key(&act.slot) {
                        next.pending_constraints.remove(&key);
                        next.inconsistent.remove(&key);
                    }
                    if sub.book.contains_key(&act.slot) {
                        next.pending_book_info.remove(&key);
                    }
                }
            }
            Intent::Request => {
                next.expressed_requests.insert(key);
            }
            _ => {}
        }
    }
    next.user_acts_prev = encode_delex(user_acts, &world.user_space)?;
    Ok(next)
}

pub fn vectorize_system(state: &SystemState, world: &World) -> Vec<f64> {
    let layout = &world.layout;
    let mut v = Vec::with_capacity(layout.system_dim);
    v.extend_from_slice(&state.user_acts_now);
    v.extend_from_slice(&state.sys_acts_prev);
    for ((d, s), values) in &layout.informable {
        let value = state.belief.get(d).and_then(|b| b.get(s));
        v.extend(values.iter().map(|x| if value == Some(x) { 1.0 } else { 0.0 }));
        v.push(if value.is_some() { 1.0 } else { 0.0 });
    }
    v.extend(layout.requestable.iter().map(|k| flag(state.requested.contains(k))));
    for count in &state.db_counts {
        let b = db_bucket(*count);
        v.extend((0..DB_BUCKETS).map(|i| flag(i == b)));
    }
    v.extend(
        layout
            .book_slots
            .iter()
            .map(|(d, s)| flag(state.book_info.get(d).is_some_and(|b| b.contains_key(s)))),
    );
    v.extend(layout.domains.iter().map(|d| flag(state.booked.contains_key(d))));
    debug_assert_eq!(v.len(), layout.system_dim);
    v
}

pub fn vectorize_user(state: &UserState, world: &World) -> Vec<f64> {
    let layout = &world.layout;
    let mut v = Vec::with_capacity(layout.user_dim);
    v.extend_from_slice(&state.sys_acts_prev);
    v.extend_from_slice(&state.user_acts_prev);
    v.extend(layout.informable.iter().map(|(k, _)| flag(state.pending_constraints.contains(k))));
    v.extend(layout.book_slots.iter().map(|k| flag(state.pending_book_info.contains(k))));
    v.extend(layout.requestable.iter().map(|k| flag(state.pending_requests.contains(k))));
    v.extend(layout.domains.iter().map(|d| flag(state.pending_bookings.contains(d))));
    v.extend(layout.informable.iter().map(|(k, _)| flag(state.inconsistent.contains(k))));
    debug_assert_eq!(v.len(), layout.user_dim);
    v
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::fixtures::{mini_ontology, three_entity_db};
    use crate::world::SubGoal;

    fn mini_world() -> World {
        World::new(mini_ontology(), three_entity_db())
    }

    fn goal(book: bool) -> UserGoal {
        UserGoal {
            subgoals: vec![SubGoal {
                domain: "restaurant".into(),
                constraints: [("food", "italian"), ("area", "north")]
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect(),
                requests: ["phone", "postcode"].iter().map(|s| s.to_string()).collect(),
                book: if book {
                    [("day", "monday"), ("people", "2")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
                } else {
                    BTreeMap::new()
                },
            }],
        }
    }

    fn act(intent: Intent, slot: &str, value: &str) -> DialogAct {
        DialogAct::new("restaurant", intent, slot, value)
    }

    #[test]
    fn init_flags() {
        let world = mini_world();
        let (user, system) = init_states(&goal(false), &world);
        assert_eq!(user.pending_count(), 4);
        assert!(user.inconsistent.is_empty());
        assert_eq!(system.db_counts, vec![3]);
        let v = vectorize_system(&system, &world);
        let bucket_at = v.len() - 2 - 1 - DB_BUCKETS;
        assert_eq!(&v[bucket_at..bucket_at + DB_BUCKETS], &[0.0, 0.0, 1.0, 0.0]);

        let (user, _) = init_states(&goal(true), &world);
        // booking adds the booking flag and one flag per book slot
        assert_eq!(user.pending_count(), 4 + 1 + 2);
    }

    #[test]
    fn init_vectors_have_zero_act_segments() {
        let world = mini_world();
        let (user, system) = init_states(&goal(true), &world);
        let acts = world.user_space.dim() + world.system_space.dim();
        assert!(vectorize_system(&system, &world)[..acts].iter().all(|&x| x == 0.0));
        assert!(vectorize_user(&user, &world)[..acts].iter().all(|&x| x == 0.0));
        let c = vectorize_user(&user, &world);
        assert!(c[c.len() - 2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mini_vector_lengths() {
        let world = mini_world();
        let (user, system) = init_states(&goal(false), &world);
        // |A_U| + |A_S| + sum(|values|+1) + |requestables| + 4|domains|, plus book-slot bits and booked flags
        let base = 8 + 13 + (2 + 1) + (3 + 1) + 2 + 4;
        assert_eq!(vectorize_system(&system, &world).len(), base + 2 + 1);
        assert_eq!(world.layout.system_dim(), base + 3);
        // |A_S| + |A_U| + goal flags (2 informable + 2 book + 2 requestable + 1 domain) + 2 inconsistency
        assert_eq!(vectorize_user(&user, &world).len(), 13 + 8 + 7 + 2);
    }

    #[test]
    fn inform_narrows_db_count() {
        let world = mini_world();
        let (_, system) = init_states(&goal(false), &world);
        let next = update_system_state(&system, &[act(Intent::Inform, "food", "italian")], &world).unwrap();
        assert_eq!(next.belief["restaurant"]["food"], "italian");
        assert_eq!(db_bucket(next.db_counts[0]), 1);
    }

    #[test]
    fn reinform_overwrites() {
        let world = mini_world();
        let (_, s) = init_states(&goal(false), &world);
        let s = update_system_state(&s, &[act(Intent::Inform, "food", "italian")], &world).unwrap();
        let s = update_system_state(&s, &[act(Intent::Inform, "food", "chinese")], &world).unwrap();
        assert_eq!(s.belief["restaurant"]["food"], "chinese");
        assert_eq!(s.db_counts[0], 2);
    }

    #[test]
    fn request_sets_flag_only() {
        let world = mini_world();
        let (_, s) = init_states(&goal(false), &world);
        let s = update_system_state(&s, &[act(Intent::Inform, "food", "italian")], &world).unwrap();
        let n = update_system_state(&s, &[act(Intent::Request, "phone", "?")], &world).unwrap();
        assert!(n.requested.contains(&("restaurant".into(), "phone".into())));
        assert_eq!(n.belief, s.belief);
        let answered = record_system_acts(&n, &[act(Intent::Inform, "phone", "01223 111111")], &world).unwrap();
        assert!(answered.requested.is_empty());
    }

    #[test]
    fn unknown_slot_is_rejected() {
        let world = mini_world();
        let (u, s) = init_states(&goal(false), &world);
        assert!(matches!(
            update_system_state(&s, &[act(Intent::Inform, "stars", "4")], &world),
            Err(Error::UnknownSlot { .. })
        ));
        let hotel = DialogAct::new("hotel", Intent::Inform, "area", "north");
        assert!(matches!(update_user_state(&u, &[hotel], &goal(false), &world), Err(Error::UnknownDomain(_))));
    }

    #[test]
    fn inconsistency_tracks_latest_inform() {
        let world = mini_world();
        let g = goal(false);
        let (u, _) = init_states(&g, &world);
        let key = ("restaurant".to_string(), "food".to_string());
        let u = update_user_state(&u, &[act(Intent::Inform, "food", "chinese")], &g, &world).unwrap();
        assert!(u.inconsistent.contains(&key));
        let u = update_user_state(&u, &[act(Intent::Inform, "food", "italian")], &g, &world).unwrap();
        assert!(!u.inconsistent.contains(&key));
    }

    #[test]
    fn user_correction_clears_inconsistency() {
        let world = mini_world();
        let g = goal(false);
        let (u, _) = init_states(&g, &world);
        let key = ("restaurant".to_string(), "food".to_string());
        let u = update_user_state(&u, &[act(Intent::Inform, "food", "chinese")], &g, &world).unwrap();
        let u = record_user_acts(&u, &[act(Intent::Inform, "food", "italian")], &g, &world).unwrap();
        assert!(!u.inconsistent.contains(&key));
    }

    #[test]
    fn answered_request_clears_flag() {
        let world = mini_world();
        let g = goal(false);
        let (u, _) = init_states(&g, &world);
        let u = update_user_state(&u, &[act(Intent::Inform, "phone", "01223 111111")], &g, &world).unwrap();
        assert!(!u.pending_requests.contains(&("restaurant".into(), "phone".into())));
        assert_eq!(u.pending_count(), 3);
    }

    #[test]
    fn booking_clears_only_once_everything_is_informed() {
        let world = mini_world();
        let g = goal(true);
        let (u, _) = init_states(&g, &world);
        let book = [act(Intent::Book, "none", "restaurant-001")];
        let early = update_user_state(&u, &book, &g, &world).unwrap();
        assert!(early.pending_bookings.contains("restaurant"));
        let informs = [
            act(Intent::Inform, "food", "italian"),
            act(Intent::Inform, "area", "north"),
            act(Intent::Inform, "day", "monday"),
            act(Intent::Inform, "people", "2"),
        ];
        let u = record_user_acts(&u, &informs, &g, &world).unwrap();
        let u = update_user_state(&u, &book, &g, &world).unwrap();
        assert!(u.pending_bookings.is_empty());
        assert_eq!(u.pending_count(), 2);
    }

    #[test]
    fn identical_states_identical_vectors() {
        let world = World::default_world();
        let g = crate::world::sample_goal_set(&world.ontology, &world.db, 5, 1, &[0.0, 0.0, 1.0]).unwrap();
        let (u1, s1) = init_states(&g[0], &world);
        let (u2, s2) = init_states(&g[0], &world);
        assert_eq!(vectorize_user(&u1, &world), vectorize_user(&u2, &world));
        assert_eq!(vectorize_system(&s1, &world), vectorize_system(&s2, &world));
        assert_eq!(vectorize_system(&s1, &world).len(), world.layout.system_dim());
    }

    #[test]
    fn layout_listing_names_every_dimension() {
        let world = mini_world();
        let text = world.layout.describe(&world);
        let lines = text.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(lines, world.layout.system_dim() + world.layout.user_dim());
    }
}
