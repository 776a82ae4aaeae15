use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::acts::{DialogAct, Intent, NO_VALUE, PLACEHOLDER};
use crate::world::{Database, Ontology, UserGoal};

pub type SlotKey = (String, String);

/// One user utterance followed by the system reply, both grounded.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub user: Vec<DialogAct>,
    pub system: Vec<DialogAct>,
}

/// A finished session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub goal: UserGoal,
    pub turns: Vec<Exchange>,
    /// Booked entity id per domain (latest booking wins).
    pub booked: BTreeMap<String, String>,
}

impl DialogRecord {
    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    /// Requestable slots the system informed with a concrete value.
    pub fn informed_requestables(&self, ontology: &Ontology) -> BTreeSet<SlotKey> {
        let mut out = BTreeSet::new();
        for t in &self.turns {
            out.extend(informed_requestables(&t.system, ontology));
        }
        out
    }
}

/// Requestable `(domain, slot)` pairs carried by system informs in `acts`.
pub fn informed_requestables(acts: &[DialogAct], ontology: &Ontology) -> Vec<SlotKey> {
    acts.iter()
        .filter(|a| a.intent == Intent::Inform && a.value != PLACEHOLDER && a.value != NO_VALUE)
        .filter(|a| ontology.domain(&a.domain).is_ok_and(|d| d.is_requestable(&a.slot)))
        .map(|a| (a.domain.clone(), a.slot.clone()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision and recall of informed requestables against the goal's requests.
pub fn inform_scores(goal: &UserGoal, informed: &BTreeSet<SlotKey>) -> InformScores {
    let requested: BTreeSet<SlotKey> = goal
        .subgoals
        .iter()
        .flat_map(|g| g.requests.iter().map(move |s| (g.domain.clone(), s.clone())))
        .collect();
    if requested.is_empty() {
        return InformScores { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    let hit = requested.intersection(informed).count() as f64;
    let recall = hit / requested.len() as f64;
    let precision = if informed.is_empty() { 0.0 } else { hit / informed.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    InformScores { precision, recall, f1 }
}

pub fn inform_f1(dialog: &DialogRecord, ontology: &Ontology) -> InformScores {
    inform_scores(&dialog.goal, &dialog.informed_requestables(ontology))
}

/// Whether the entity booked in `domain` satisfies that subgoal's constraints.
pub fn booking_matches(goal: &UserGoal, domain: &str, booked: &BTreeMap<String, String>, db: &Database) -> bool {
    let Some(sub) = goal.subgoal(domain) else { return false };
    booked
        .get(domain)
        .and_then(|id| db.entity(domain, id))
        .is_some_and(|e| e.satisfies(&sub.constraints))
}

/// Fraction of booking domains whose booked entity satisfies the constraints.
pub fn match_rate(goal: &UserGoal, booked: &BTreeMap<String, String>, db: &Database) -> f64 {
    let domains: Vec<&str> = goal.subgoals.iter().filter(|g| g.needs_booking()).map(|g| g.domain.as_str()).collect();
    if domains.is_empty() {
        return 1.0;
    }
    let ok = domains.iter().filter(|d| booking_matches(goal, d, booked, db)).count();
    ok as f64 / domains.len() as f64
}

pub fn task_success(recall: f64, match_rate: f64) -> bool {
    recall == 1.0 && match_rate == 1.0
}

pub fn success(dialog: &DialogRecord, ontology: &Ontology, db: &Database) -> bool {
    task_success(inform_f1(dialog, ontology).recall, match_rate(&dialog.goal, &dialog.booked, db))
}
