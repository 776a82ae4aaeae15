use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ontology::{Ontology, DONT_CARE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
}

impl Entity {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.attributes.get(slot).map(String::as_str)
    }

    /// True when every non-"dont care" constraint equals this entity's value.
    pub fn satisfies<'a, I>(&self, constraints: I) -> bool
    where
        I: IntoIterator<Item = (&'a String, &'a String)>,
    {
        constraints
            .into_iter()
            .all(|(slot, value)| value == DONT_CARE || self.get(slot) == Some(value.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub entities: BTreeMap<String, Vec<Entity>>,
}

impl Database {
    pub fn new(entities: BTreeMap<String, Vec<Entity>>) -> Self {
        let mut entities = entities;
        for list in entities.values_mut() {
            list.sort_by(|a, b| a.id.cmp(&b.id));
        }
        Self { entities }
    }

    pub fn domain_entities(&self, domain: &str) -> Result<&[Entity]> {
        self.entities
            .get(domain)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownDomain(domain.to_string()))
    }

    pub fn entity(&self, domain: &str, id: &str) -> Option<&Entity> {
        self.entities.get(domain)?.iter().find(|e| e.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self::new(serde_json::from_str::<Database>(text)?.entities))
    }
}

/// Builds `entities_per_domain` entities per domain. Informable attributes are
/// drawn uniformly from the ontology; requestable attributes are synthesized.
pub fn generate_database(ontology: &Ontology, seed: u64, entities_per_domain: usize) -> Result<Database> {
    if entities_per_domain == 0 {
        return Err(Error::InvalidArgument("entities_per_domain must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entities = BTreeMap::new();
    for domain in ontology.domains() {
        let list = (0..entities_per_domain)
            .map(|i| {
                let mut attributes = BTreeMap::new();
                for (slot, values) in &domain.informable {
                    let value = values.choose(&mut rng).expect("validated non-empty");
                    attributes.insert(slot.clone(), value.clone());
                }
                for slot in &domain.requestable {
                    attributes.insert(slot.clone(), synth_value(slot, &mut rng));
                }
                Entity { id: format!("{}-{:03}", domain.name, i), attributes }
            })
            .collect();
        entities.insert(domain.name.clone(), list);
    }
    Ok(Database::new(entities))
}

fn synth_value(slot: &str, rng: &mut impl Rng) -> String {
    match slot {
        "phone" => format!("01223 {:06}", rng.gen_range(0..1_000_000)),
        "postcode" => {
            let a = (b'a' + rng.gen_range(0..26)) as char;
            let b = (b'a' + rng.gen_range(0..26)) as char;
            format!("cb{}{}{a}{b}", rng.gen_range(1..10), rng.gen_range(0..10))
        }
        "address" => {
            const STREETS: [&str; 6] = ["hills", "regent", "mill", "trumpington", "station", "castle"];
            format!("{} {} road", rng.gen_range(1..200), STREETS.choose(rng).unwrap())
        }
        "trainid" => format!("TR{:04}", rng.gen_range(0..10_000)),
        "duration" => format!("{} minutes", rng.gen_range(15..180)),
        "price" => format!("{:.2} pounds", rng.gen_range(400..4000) as f64 / 100.0),
        other => format!("{other}-{:06}", rng.gen_range(0..1_000_000)),
    }
}

/// All entities of `domain` matching every non-"dont care" constraint, in id order.
pub fn query<'a>(
    db: &'a Database,
    ontology: &Ontology,
    domain: &str,
    constraints: &BTreeMap<String, String>,
) -> Result<Vec<&'a Entity>> {
    let schema = ontology.domain(domain)?;
    if let Some(slot) = constraints.keys().find(|s| !schema.is_informable(s)) {
        return Err(Error::UnknownSlot { domain: domain.to_string(), slot: slot.clone() });
    }
    Ok(db
        .domain_entities(domain)?
        .iter()
        .filter(|e| e.satisfies(constraints))
        .collect())
}

/// Same filter as [`query`] but only counts; skips validation for hot loops.
pub fn count_matches(db: &Database, domain: &str, constraints: &BTreeMap<String, String>) -> usize {
    db.entities
        .get(domain)
        .map(|list| list.iter().filter(|e| e.satisfies(constraints)).count())
        .unwrap_or(0)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::world::ontology::{WorldConfig, DEFAULT_WORLD_TOML};
    use proptest::prelude::*;

    fn constraints(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let ontology = WorldConfig::parse(DEFAULT_WORLD_TOML).unwrap().ontology();
        let a = generate_database(&ontology, 7, 20).unwrap();
        let b = generate_database(&ontology, 7, 20).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn one_entity_per_domain() {
        let ontology = WorldConfig::default_world().ontology();
        let db = generate_database(&ontology, 1, 1).unwrap();
        assert!(db.entities.values().all(|list| list.len() == 1));
        assert_eq!(db.entities.len(), 3);
    }

    #[test]
    fn zero_entities_is_rejected() {
        let ontology = WorldConfig::default_world().ontology();
        assert!(generate_database(&ontology, 1, 0).is_err());
    }

    #[test]
    fn informable_values_are_roughly_uniform() {
        let ontology = WorldConfig::default_world().ontology();
        let db = generate_database(&ontology, 7, 50).unwrap();
        let foods = ontology.domain("restaurant").unwrap().values("food").unwrap().len();
        let italian = db.entities["restaurant"].iter().filter(|e| e.get("food") == Some("italian")).count();
        let fraction = italian as f64 / 50.0;
        assert!((fraction - 1.0 / foods as f64).abs() <= 0.15, "fraction {fraction}");
    }

    #[test]
    fn empty_constraints_return_everything() {
        let (ontology, db) = (mini_ontology(), three_entity_db());
        assert_eq!(query(&db, &ontology, "restaurant", &BTreeMap::new()).unwrap().len(), 3);
    }

    #[test]
    fn hand_enumerated_query() {
        let (ontology, db) = (mini_ontology(), three_entity_db());
        let hits = query(&db, &ontology, "restaurant", &constraints(&[("food", "italian"), ("area", "north")])).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, "restaurant-001");
    }

    #[test]
    fn unsatisfiable_and_dont_care_filters() {
        let (ontology, db) = (mini_ontology(), three_entity_db());
        assert!(query(&db, &ontology, "restaurant", &constraints(&[("food", "indian")])).unwrap().is_empty());
        let any_food = constraints(&[("food", DONT_CARE), ("area", "north")]);
        assert_eq!(query(&db, &ontology, "restaurant", &any_food).unwrap().len(), 2);
    }

    #[test]
    fn query_errors() {
        let (ontology, db) = (mini_ontology(), three_entity_db());
        assert!(matches!(query(&db, &ontology, "hotel", &BTreeMap::new()), Err(Error::UnknownDomain(_))));
        assert!(matches!(
            query(&db, &ontology, "restaurant", &constraints(&[("phone", "x")])),
            Err(Error::UnknownSlot { .. })
        ));
    }

    proptest! {
        #[test]
        fn query_equals_linear_scan(seed in 0u64..500, food in 0usize..5, area in 0usize..6, pr in 0usize..4) {
            let ontology = WorldConfig::default_world().ontology();
            let db = generate_database(&ontology, seed, 25).unwrap();
            let schema = ontology.domain("restaurant").unwrap();
            let pick = |slot: &str, i: usize| -> Option<String> {
                let values = schema.values(slot).unwrap();
                match i {
                    0 => None,
                    i if i > values.len() => Some(DONT_CARE.to_string()),
                    i => Some(values[i - 1].clone()),
                }
            };
            let mut c = BTreeMap::new();
            for (slot, i) in [("food", food), ("area", area), ("pricerange", pr)] {
                if let Some(v) = pick(slot, i) { c.insert(slot.to_string(), v); }
            }
            let got: Vec<&str> = query(&db, &ontology, "restaurant", &c).unwrap().iter().map(|e| e.id.as_str()).collect();
            let mut expected = Vec::new();
            for e in &db.entities["restaurant"] {
                let mut ok = true;
                for (slot, value) in &c {
                    if value != DONT_CARE && &e.attributes[slot] != value { ok = false; }
                }
                if ok { expected.push(e.id.as_str()); }
            }
            expected.sort();
            prop_assert_eq!(got, expected);
        }
    }
}
