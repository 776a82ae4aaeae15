//! Hand-written agents: an agenda-driven user and a table-driven system.
//! They generate the behavior-cloning corpus and serve as fixed partners.

use std::collections::BTreeSet;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acts::{DialogAct, Intent, Role, NO_VALUE, PLACEHOLDER};
use crate::episode::{
    act_mask, first_match, ground_user_acts, run_episode, AgentTurn, EpisodeConfig, Outcome, SystemAgent,
    SystemObservation, UserAgent, UserObservation,
};
use crate::error::Result;
use crate::policy::{write_corpus, CorpusRecord};
use crate::world::{
    count_matches, domain_count_weights, sample_goal_set, UserGoal, World, DONT_CARE, GENERAL_DOMAIN, NAME_SLOT,
    NO_SLOT,
};

/// Acts the agenda user voices per turn.
pub const AGENDA_ACTS_PER_TURN: usize = 2;

/// Agenda-based user. Works through goal domains in order: constraints,
/// then booking details, then requests, at most two acts per turn, all from
/// one domain. Corrects inconsistent system informs and relaxes the rarest
/// constraint to "dont care" when told nothing matches.
#[derive(Clone, Debug, Default)]
pub struct AgendaUser {
    /// The goal with any relaxed constraints replaced by "dont care".
    goal: Option<UserGoal>,
}

impl AgendaUser {
    pub fn new() -> Self {
        Self::default()
    }

    fn relax(&mut self, domain: &str, world: &World) -> Option<DialogAct> {
        let goal = self.goal.as_mut()?;
        let sub = goal.subgoals.iter_mut().find(|g| g.domain == domain)?;
        let slot = sub
            .constraints
            .iter()
            .filter(|(_, v)| v.as_str() != DONT_CARE)
            .map(|(s, v)| {
                let single = [(s.clone(), v.clone())].into();
                (count_matches(&world.db, domain, &single), s.clone())
            })
            .min()?
            .1;
        sub.constraints.insert(slot.clone(), DONT_CARE.to_string());
        Some(DialogAct::new(domain, Intent::Inform, &slot, DONT_CARE))
    }
}

fn unfinished(obs: &UserObservation<'_>, domain: &str) -> bool {
    let s = obs.state;
    let d = |k: &(String, String)| k.0 == domain;
    s.pending_constraints.iter().any(d)
        || s.pending_book_info.iter().any(d)
        || s.pending_requests.iter().any(d)
        || s.inconsistent.iter().any(d)
        || s.pending_bookings.contains(domain)
}

impl UserAgent for AgendaUser {
    fn begin(&mut self, goal: &UserGoal, _world: &World) {
        self.goal = Some(goal.clone());
    }

    fn act(&mut self, obs: &UserObservation<'_>, _rng: &mut dyn RngCore) -> Result<AgentTurn> {
        if self.goal.is_none() {
            self.goal = Some(obs.goal.clone());
        }
        let state = obs.state;
        let mut candidates: Vec<DialogAct> = Vec::new();

        let refused = obs
            .system_acts
            .iter()
            .find(|a| a.intent == Intent::NoOffer && obs.goal.subgoal(&a.domain).is_some())
            .map(|a| a.domain.clone());
        let relaxed = refused
            .filter(|d| !state.domain_has_pending_constraints(d))
            .and_then(|d| self.relax(&d, obs.world));
        let goal = self.goal.as_ref().expect("set above");

        let focus = relaxed
            .as_ref()
            .map(|a| a.domain.clone())
            .or_else(|| goal.domains().find(|d| unfinished(obs, d)).map(str::to_string));

        if let Some(domain) = focus {
            let here = |k: &&(String, String)| k.0 == domain;
            candidates.extend(relaxed);
            for (d, s) in state.inconsistent.iter().filter(here) {
                candidates.push(DialogAct::delex(d, Intent::Inform, s));
            }
            for (d, s) in state.pending_constraints.iter().filter(here) {
                candidates.push(DialogAct::delex(d, Intent::Inform, s));
            }
            for (d, s) in state.pending_book_info.iter().filter(here) {
                candidates.push(DialogAct::delex(d, Intent::Inform, s));
            }
            for (d, s) in state.pending_requests.iter().filter(here) {
                candidates.push(DialogAct::delex(d, Intent::Request, s));
            }
            if candidates.is_empty() && state.pending_bookings.contains(&domain) {
                if let Some(sub) = goal.subgoal(&domain) {
                    candidates.extend(sub.book.keys().map(|s| DialogAct::delex(&domain, Intent::Inform, s)));
                }
            }
        }

        let mut seen = BTreeSet::new();
        candidates.retain(|a| seen.insert(a.key()));
        candidates.truncate(AGENDA_ACTS_PER_TURN);
        let (acts, terminal) = if candidates.is_empty() {
            (vec![DialogAct::general(Intent::Thank), DialogAct::general(Intent::Bye)], true)
        } else {
            // Relaxation informs already carry their value.
            let acts = candidates
                .into_iter()
                .map(|a| if a.value == DONT_CARE { a } else { ground_user_acts(&[a], goal).remove(0) })
                .collect();
            (acts, false)
        };
        let action = act_mask(&acts, obs.world, Role::User)?;
        Ok(AgentTurn { acts, action, terminal })
    }
}

/// Table-driven system: answers requests from the first matching entity,
/// recommends on new constraints, books once every booking detail is known,
/// reports nooffer on an empty query and closes when the user does.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleSystem;

impl SystemAgent for RuleSystem {
    fn act(&mut self, obs: &SystemObservation<'_>, _rng: &mut dyn RngCore) -> Result<AgentTurn> {
        let world = obs.world;
        let st = obs.state;
        let mut acts = Vec::new();
        for schema in world.ontology.domains() {
            let d = schema.name.as_str();
            let said: Vec<&DialogAct> = obs.user_acts.iter().filter(|a| a.domain == d).collect();
            let requested: Vec<&String> = st.requested.iter().filter(|(dd, _)| dd == d).map(|(_, s)| s).collect();
            if said.is_empty() && requested.is_empty() {
                continue;
            }
            let Some(entity) = first_match(world, st, d)? else {
                acts.push(DialogAct::new(d, Intent::NoOffer, NO_SLOT, NO_VALUE));
                continue;
            };
            for slot in requested {
                let value = entity.get(slot).unwrap_or(NO_VALUE);
                acts.push(DialogAct::new(d, Intent::Inform, slot, value));
            }
            let new_constraint = said.iter().any(|a| a.intent == Intent::Inform && schema.is_informable(&a.slot));
            if new_constraint {
                acts.push(DialogAct::new(d, Intent::Recommend, NAME_SLOT, &entity.id));
            }
            if schema.bookable {
                let info = st.book_info.get(d);
                let filled = schema.book_slots.iter().filter(|s| info.is_some_and(|i| i.contains_key(*s))).count();
                let belief = st.belief.get(d).cloned().unwrap_or_default();
                let booking_ok = st
                    .booked
                    .get(d)
                    .and_then(|id| world.db.entity(d, id))
                    .is_some_and(|e| e.satisfies(&belief));
                let gave_book_info = said.iter().any(|a| a.intent == Intent::Inform && schema.is_book_slot(&a.slot));
                if filled == schema.book_slots.len() && !booking_ok {
                    acts.push(DialogAct::new(d, Intent::Book, NO_SLOT, &entity.id));
                } else if filled > 0 && filled < schema.book_slots.len() && gave_book_info {
                    acts.push(DialogAct::new(d, Intent::OfferBook, NO_SLOT, NO_VALUE));
                }
            }
        }
        let general = |i: Intent| obs.user_acts.iter().any(|a| a.domain == GENERAL_DOMAIN && a.intent == i);
        if general(Intent::Bye) {
            acts.push(DialogAct::general(Intent::Bye));
            acts.push(DialogAct::general(Intent::Welcome));
        } else if general(Intent::Thank) {
            acts.push(DialogAct::general(Intent::Welcome));
        }
        if acts.is_empty() {
            acts.push(DialogAct::general(Intent::ReqMore));
        }
        debug_assert!(acts.iter().all(|a| a.value != PLACEHOLDER));
        let action = act_mask(&acts, world, Role::System)?;
        Ok(AgentTurn { acts, action, terminal: false })
    }
}

/// Per-dialog summary written next to a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogSummary {
    pub dialog_id: usize,
    pub success: bool,
    pub turns: usize,
    pub domains: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
    pub dialogs: Vec<DialogSummary>,
}

impl Corpus {
    pub fn success_rate(&self) -> f64 {
        if self.dialogs.is_empty() {
            return 0.0;
        }
        self.dialogs.iter().filter(|d| d.success).count() as f64 / self.dialogs.len() as f64
    }

    /// Writes `corpus.csv` records and the `dialogs.csv` summary into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_corpus(std::fs::File::create(dir.join(CORPUS_FILE))?, &self.records)?;
        let mut w = csv::Writer::from_path(dir.join(DIALOGS_FILE))?;
        for d in &self.dialogs {
            w.serialize(d)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const CORPUS_FILE: &str = "corpus.csv";
pub const DIALOGS_FILE: &str = "dialogs.csv";

/// Session settings for corpus generation: the user always closes the
/// dialog itself so the terminal signal appears in the data.
pub fn corpus_episode_config() -> EpisodeConfig {
    EpisodeConfig { terminate_on_success: false, ..EpisodeConfig::default() }
}

/// Rule self-play over one goal.
pub fn rule_dialog(world: &World, goal: &UserGoal, config: &EpisodeConfig) -> Result<crate::episode::Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_episode(world, goal, &mut AgendaUser::new(), &mut RuleSystem, config, &mut rng)
}

/// Self-play of the rule agents over `n_dialogs` goals drawn from `seed`.
pub fn generate_corpus(world: &World, n_dialogs: usize, seed: u64) -> Result<Corpus> {
    let goals = sample_goal_set(&world.ontology, &world.db, seed, n_dialogs, &domain_count_weights(&world.ontology))?;
    corpus_from_goals(world, &goals)
}

pub fn corpus_from_goals(world: &World, goals: &[UserGoal]) -> Result<Corpus> {
    let config = corpus_episode_config();
    let runs: Vec<Result<(Vec<CorpusRecord>, Outcome)>> = goals
        .par_iter()
        .enumerate()
        .map(|(id, goal)| {
            let traj = rule_dialog(world, goal, &config)?;
            let mut records = Vec::with_capacity(2 * traj.steps.len());
            for (turn, step) in traj.steps.iter().enumerate() {
                let t = &step.transition;
                let n = t.a_user.len() - 1;
                records.push(CorpusRecord {
                    dialog_id: id,
                    turn,
                    role: Role::User,
                    state: t.s_user.clone(),
                    action: t.a_user[..n].to_vec(),
                    terminal: t.terminal,
                });
                records.push(CorpusRecord {
                    dialog_id: id,
                    turn,
                    role: Role::System,
                    state: t.s_sys.clone(),
                    action: t.a_sys.clone(),
                    terminal: false,
                });
            }
            Ok((records, traj.outcome))
        })
        .collect();
    let mut corpus = Corpus { records: Vec::new(), dialogs: Vec::with_capacity(goals.len()) };
    for (id, run) in runs.into_iter().enumerate() {
        let (records, outcome) = run?;
        corpus.records.extend(records);
        corpus.dialogs.push(DialogSummary {
            dialog_id: id,
            success: outcome.success,
            turns: outcome.turns,
            domains: goals[id].num_domains(),
        });
    }
    Ok(corpus)
}
