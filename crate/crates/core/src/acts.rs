//! Delexicalized dialog acts, per-role action spaces and their multi-hot form.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Entity, Ontology, SubGoal, DONT_CARE, GENERAL_DOMAIN, NAME_SLOT, NO_SLOT};

/// Value carried by a delexicalized act and by grounded requests.
pub const PLACEHOLDER: &str = "?";
/// Value carried by grounded acts that have no slot.
pub const NO_VALUE: &str = "none";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Inform,
    Request,
    Recommend,
    Book,
    OfferBook,
    NoOffer,
    ReqMore,
    Bye,
    Welcome,
    Thank,
}

impl Intent {
    pub const ALL: [Intent; 10] = [
        Intent::Inform,
        Intent::Request,
        Intent::Recommend,
        Intent::Book,
        Intent::OfferBook,
        Intent::NoOffer,
        Intent::ReqMore,
        Intent::Bye,
        Intent::Welcome,
        Intent::Thank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Inform => "inform",
            Intent::Request => "request",
            Intent::Recommend => "recommend",
            Intent::Book => "book",
            Intent::OfferBook => "offerbook",
            Intent::NoOffer => "nooffer",
            Intent::ReqMore => "reqmore",
            Intent::Bye => "bye",
            Intent::Welcome => "welcome",
            Intent::Thank => "thank",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Intent::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| Error::UnknownAct(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

impl Role {
    pub fn intents(self) -> &'static [Intent] {
        match self {
            Role::System => &[
                Intent::Inform,
                Intent::Request,
                Intent::Recommend,
                Intent::Book,
                Intent::OfferBook,
                Intent::NoOffer,
                Intent::ReqMore,
                Intent::Bye,
                Intent::Welcome,
            ],
            Role::User => &[Intent::Inform, Intent::Request, Intent::Thank, Intent::Bye],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "system" | "sys" => Ok(Role::System),
            "user" => Ok(Role::User),
            other => Err(Error::InvalidArgument(format!("unknown role `{other}`"))),
        }
    }
}

/// The delexicalized identity of an act: (domain, intent, slot).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActKey {
    pub domain: String,
    pub intent: Intent,
    pub slot: String,
}

impl ActKey {
    pub fn new(domain: &str, intent: Intent, slot: &str) -> Self {
        Self { domain: domain.to_string(), intent, slot: slot.to_string() }
    }

    fn sort_key(&self) -> (&str, &str, &str) {
        (&self.domain, self.intent.as_str(), &self.slot)
    }
}

impl fmt::Display for ActKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.domain, self.intent, self.slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogAct {
    pub domain: String,
    pub intent: Intent,
    pub slot: String,
    pub value: String,
}

impl DialogAct {
    pub fn new(domain: &str, intent: Intent, slot: &str, value: &str) -> Self {
        Self { domain: domain.to_string(), intent, slot: slot.to_string(), value: value.to_string() }
    }

    /// An act with its value replaced by the placeholder.
    pub fn delex(domain: &str, intent: Intent, slot: &str) -> Self {
        Self::new(domain, intent, slot, PLACEHOLDER)
    }

    pub fn general(intent: Intent) -> Self {
        Self::new(GENERAL_DOMAIN, intent, NO_SLOT, NO_VALUE)
    }

    pub fn key(&self) -> ActKey {
        ActKey::new(&self.domain, self.intent, &self.slot)
    }

    pub fn to_delex(&self) -> Self {
        Self::delex(&self.domain, self.intent, &self.slot)
    }
}

/// Canonical `domain-intent-slot=value` form.
impl fmt::Display for DialogAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}={}", self.domain, self.intent, self.slot, self.value)
    }
}

impl FromStr for DialogAct {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownAct(s.to_string());
        let (head, value) = s.split_once('=').ok_or_else(bad)?;
        let mut parts = head.splitn(3, '-');
        let domain = parts.next().ok_or_else(bad)?;
        let intent = parts.next().ok_or_else(bad)?.parse()?;
        let slot = parts.next().ok_or_else(bad)?;
        Ok(Self::new(domain, intent, slot, value))
    }
}

/// Fixed, ordered inventory of delexicalized acts for one role.
#[derive(Clone, Debug)]
pub struct ActionSpace {
    role: Role,
    entries: Vec<ActKey>,
    index: HashMap<ActKey, usize>,
}

impl ActionSpace {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ActKey] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &ActKey {
        &self.entries[i]
    }

    pub fn index_of(&self, key: &ActKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, key: &ActKey) -> bool {
        self.index.contains_key(key)
    }
}

/// Enumerates a role's acts from the ontology, ordered by (domain, intent, slot).
pub fn build_action_space(ontology: &Ontology, role: Role) -> ActionSpace {
    let mut entries = Vec::new();
    for d in ontology.domains() {
        let name = d.name.as_str();
        for slot in d.informable_slots() {
            entries.push(ActKey::new(name, Intent::Inform, slot));
        }
        match role {
            Role::User => {
                for slot in &d.book_slots {
                    entries.push(ActKey::new(name, Intent::Inform, slot));
                }
                for slot in &d.requestable {
                    entries.push(ActKey::new(name, Intent::Request, slot));
                }
            }
            Role::System => {
                for slot in &d.requestable {
                    entries.push(ActKey::new(name, Intent::Inform, slot));
                }
                for slot in d.informable_slots() {
                    entries.push(ActKey::new(name, Intent::Request, slot));
                }
                entries.push(ActKey::new(name, Intent::Recommend, NAME_SLOT));
                entries.push(ActKey::new(name, Intent::Book, NO_SLOT));
                entries.push(ActKey::new(name, Intent::OfferBook, NO_SLOT));
                entries.push(ActKey::new(name, Intent::NoOffer, NO_SLOT));
            }
        }
    }
    let general: &[Intent] = match role {
        Role::System => &[Intent::ReqMore, Intent::Bye, Intent::Welcome],
        Role::User => &[Intent::Thank, Intent::Bye],
    };
    for intent in general {
        entries.push(ActKey::new(GENERAL_DOMAIN, *intent, NO_SLOT));
    }
    entries.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let index = entries.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    ActionSpace { role, entries, index }
}

/// Multi-hot vector with a 1 at each act's index.
pub fn encode_acts(acts: &[DialogAct], space: &ActionSpace) -> Result<Vec<f64>> {
    let mut v = vec![0.0; space.dim()];
    for act in acts {
        let i = space.index_of(&act.key()).ok_or_else(|| Error::UnknownAct(act.to_string()))?;
        v[i] = 1.0;
    }
    Ok(v)
}

pub enum DecodeMode<'a> {
    /// Independent Bernoulli draw per dimension.
    Sample(&'a mut dyn RngCore),
    /// Select entries with p > 0.5.
    Threshold,
}

/// Turns per-dimension probabilities into a binary selection.
pub fn decode_mask(probs: &[f64], space_dim: usize, mode: DecodeMode<'_>) -> Result<Vec<f64>> {
    if probs.len() != space_dim {
        return Err(Error::DimensionMismatch { expected: space_dim, got: probs.len() });
    }
    Ok(match mode {
        DecodeMode::Threshold => probs.iter().map(|&p| if p > 0.5 { 1.0 } else { 0.0 }).collect(),
        DecodeMode::Sample(rng) => probs
            .iter()
            .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
            .collect(),
    })
}

/// Delexicalized acts selected by a binary mask.
pub fn acts_from_mask(mask: &[f64], space: &ActionSpace) -> Vec<DialogAct> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.5)
        .map(|(i, _)| {
            let k = space.entry(i);
            DialogAct::delex(&k.domain, k.intent, &k.slot)
        })
        .collect()
}

pub fn decode_vector(probs: &[f64], space: &ActionSpace, mode: DecodeMode<'_>) -> Result<Vec<DialogAct>> {
    let mask = decode_mask(probs, space.dim(), mode)?;
    Ok(acts_from_mask(&mask, space))
}

/// Where placeholder values are read from when grounding acts of one domain.
#[derive(Clone, Copy, Debug)]
pub enum ValueSource<'a> {
    Entity(&'a Entity),
    Goal(&'a SubGoal),
    DontCare,
}

/// Replaces placeholders with concrete values. Requests keep `?`.
pub fn lexicalize(acts: &[DialogAct], source: ValueSource<'_>) -> Result<Vec<DialogAct>> {
    acts.iter().map(|a| lexicalize_one(a, source)).collect()
}

fn lexicalize_one(act: &DialogAct, source: ValueSource<'_>) -> Result<DialogAct> {
    let missing = || Error::MissingValue { domain: act.domain.clone(), slot: act.slot.clone() };
    let value = match act.intent {
        Intent::Request => PLACEHOLDER.to_string(),
        Intent::Inform => match source {
            ValueSource::Entity(e) => e.get(&act.slot).ok_or_else(missing)?.to_string(),
            ValueSource::Goal(g) => g
                .constraints
                .get(&act.slot)
                .or_else(|| g.book.get(&act.slot))
                .ok_or_else(missing)?
                .clone(),
            ValueSource::DontCare => DONT_CARE.to_string(),
        },
        Intent::Recommend | Intent::Book => match source {
            ValueSource::Entity(e) => e.id.clone(),
            _ => return Err(missing()),
        },
        _ => NO_VALUE.to_string(),
    };
    Ok(DialogAct { value, ..act.clone() })
}
