use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved value meaning the user accepts any value for a slot.
pub const DONT_CARE: &str = "dont care";

/// Pseudo-domain carrying role-global acts (bye, thank, reqmore, ...).
pub const GENERAL_DOMAIN: &str = "general";

/// Slot used by acts that carry no slot.
pub const NO_SLOT: &str = "none";

/// Slot used by `recommend`, whose value is the entity name.
pub const NAME_SLOT: &str = "name";

/// Default world: three domains shaped like restaurant / hotel / train.
pub const DEFAULT_WORLD_TOML: &str = r#"seed = 7
entities_per_domain = 30

[[domains]]
name = "restaurant"
requestable = ["address", "phone", "postcode"]
book_slots = ["day", "people"]
bookable = true

[domains.informable]
area = ["centre", "east", "north", "south", "west"]
food = ["british", "chinese", "indian", "italian"]
pricerange = ["cheap", "expensive", "moderate"]

[[domains]]
name = "hotel"
requestable = ["address", "phone", "postcode"]
book_slots = ["day", "people", "stay"]
bookable = true

[domains.informable]
area = ["centre", "east", "north", "south", "west"]
parking = ["no", "yes"]
pricerange = ["cheap", "expensive", "moderate"]
stars = ["2", "3", "4"]

[[domains]]
name = "train"
requestable = ["duration", "price", "trainid"]
book_slots = ["people"]
bookable = true

[domains.informable]
day = ["friday", "monday", "saturday", "sunday"]
departure = ["cambridge", "ely", "london", "norwich"]
destination = ["cambridge", "ely", "london", "norwich"]
"#;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSchema {
    pub name: String,
    pub informable: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub requestable: Vec<String>,
    #[serde(default)]
    pub book_slots: Vec<String>,
    #[serde(default)]
    pub bookable: bool,
}

impl DomainSchema {
    pub fn informable_slots(&self) -> impl Iterator<Item = &str> {
        self.informable.keys().map(String::as_str)
    }

    pub fn values(&self, slot: &str) -> Option<&[String]> {
        self.informable.get(slot).map(Vec::as_slice)
    }

    pub fn is_informable(&self, slot: &str) -> bool {
        self.informable.contains_key(slot)
    }

    pub fn is_requestable(&self, slot: &str) -> bool {
        self.requestable.iter().any(|s| s == slot)
    }

    pub fn is_book_slot(&self, slot: &str) -> bool {
        self.book_slots.iter().any(|s| s == slot)
    }
}

/// Full world configuration as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_entities")]
    pub entities_per_domain: usize,
    pub domains: Vec<DomainSchema>,
}

fn default_seed() -> u64 {
    7
}

fn default_entities() -> usize {
    30
}

impl WorldConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: WorldConfig = toml::from_str(text).map_err(|e| Error::Parse {
            field: "world config".into(),
            message: e.message().to_string(),
        })?;
        if config.entities_per_domain == 0 {
            return Err(Error::schema("entities_per_domain", "must be at least 1"));
        }
        Ontology::new(config.domains.clone())?;
        Ok(config)
    }

    pub fn default_world() -> Self {
        Self::parse(DEFAULT_WORLD_TOML).expect("built-in world config is valid")
    }

    pub fn ontology(&self) -> Ontology {
        Ontology::new(self.domains.clone()).expect("validated on parse")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world config serializes")
    }
}

/// Validated set of domain schemas. Domain order is significant: it fixes the
/// layout of action spaces and state vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    domains: Vec<DomainSchema>,
}

/// Parse and validate an ontology from world-config text.
pub fn load_ontology(config_text: &str) -> Result<Ontology> {
    Ok(WorldConfig::parse(config_text)?.ontology())
}

impl Ontology {
    pub fn new(domains: Vec<DomainSchema>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::schema("domains", "at least one domain is required"));
        }
        let mut names = BTreeSet::new();
        for (i, d) in domains.iter().enumerate() {
            let field = |key: &str| format!("domains[{i}].{key}");
            if d.name.is_empty() || d.name == GENERAL_DOMAIN {
                return Err(Error::schema(field("name"), format!("invalid domain name `{}`", d.name)));
            }
            if !names.insert(d.name.as_str()) {
                return Err(Error::schema(field("name"), format!("duplicate domain `{}`", d.name)));
            }
            if d.informable.is_empty() {
                return Err(Error::schema(field("informable"), "at least one informable slot is required"));
            }
            let mut slots = BTreeSet::new();
            let all_slots = d
                .informable
                .keys()
                .map(|s| (s, "informable"))
                .chain(d.requestable.iter().map(|s| (s, "requestable")))
                .chain(d.book_slots.iter().map(|s| (s, "book_slots")));
            for (slot, key) in all_slots {
                if slot.is_empty() || slot == NO_SLOT || slot == NAME_SLOT {
                    return Err(Error::schema(field(key), format!("reserved or empty slot name `{slot}`")));
                }
                if !slots.insert(slot.as_str()) {
                    return Err(Error::schema(field(key), format!("duplicate slot `{slot}`")));
                }
            }
            for (slot, values) in &d.informable {
                let key = field(&format!("informable.{slot}"));
                if values.len() < 2 {
                    return Err(Error::schema(key, "needs at least two values"));
                }
                let unique: BTreeSet<_> = values.iter().collect();
                if unique.len() != values.len() {
                    return Err(Error::schema(key, "duplicate value"));
                }
                if values.iter().any(|v| v.is_empty() || v == DONT_CARE) {
                    return Err(Error::schema(key, "empty or reserved value"));
                }
            }
            if d.bookable && d.book_slots.is_empty() {
                return Err(Error::schema(field("book_slots"), "bookable domain needs book slots"));
            }
            if !d.bookable && !d.book_slots.is_empty() {
                return Err(Error::schema(field("book_slots"), "book slots on a non-bookable domain"));
            }
        }
        Ok(Self { domains })
    }

    pub fn domains(&self) -> &[DomainSchema] {
        &self.domains
    }

    pub fn domain(&self, name: &str) -> Result<&DomainSchema> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }
}

/// Values a user may ask for when booking. Book slots have no value list in
/// the ontology; these are fixed per well-known slot name.
pub fn book_values(slot: &str) -> Vec<String> {
    match slot {
        "people" | "stay" => (1..=8).map(|n| n.to_string()).collect(),
        "day" => ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        "time" => ["11:00", "12:30", "17:45", "19:00", "20:15"].iter().map(|s| s.to_string()).collect(),
        other => (1..=4).map(|n| format!("{other}-{n}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_has_three_domains() {
        let ontology = load_ontology(DEFAULT_WORLD_TOML).unwrap();
        let names: Vec<_> = ontology.domains().iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["restaurant", "hotel", "train"]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = WorldConfig::default_world();
        let again = WorldConfig::parse(&config.to_toml()).unwrap();
        assert_eq!(config, again);
    }

    #[test]
    fn duplicate_domain_is_rejected() {
        let text = r#"
            [[domains]]
            name = "a"
            informable = { x = ["1", "2"] }
            [[domains]]
            name = "a"
            informable = { y = ["1", "2"] }
        "#;
        match load_ontology(text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "domains[1].name"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn single_valued_slot_is_rejected() {
        let text = r#"
            [[domains]]
            name = "a"
            informable = { x = ["1"] }
        "#;
        match load_ontology(text) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "domains[0].informable.x"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_requestable_is_rejected() {
        let text = r#"
            [[domains]]
            name = "a"
            requestable = ["x"]
            informable = { x = ["1", "2"] }
        "#;
        assert!(matches!(load_ontology(text), Err(Error::Schema { .. })));
    }

    #[test]
    fn malformed_text_is_a_parse_error() {
        assert!(matches!(load_ontology("domains = 3 ["), Err(Error::Parse { .. })));
        match load_ontology("[[domains]]\ninformable = { x = [\"1\", \"2\"] }\n") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("name"), "{message}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn informable_values_come_from_config() {
        let text = r#"
            [[domains]]
            name = "restaurant"
            informable = { food = ["italian", "chinese"] }
        "#;
        let ontology = load_ontology(text).unwrap();
        let food = ontology.domain("restaurant").unwrap().values("food").unwrap();
        assert_eq!(food, ["italian", "chinese"]);
    }
}
