use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::database::{count_matches, Database};
use super::ontology::{book_values, Ontology};
use crate::error::{Error, Result};

pub const MAX_REJECTION_ATTEMPTS: usize = 1000;

/// Single/two/three-domain goal mixture used for evaluation sets
/// (328 / 549 / 123 out of 1000).
pub const DEFAULT_DOMAIN_COUNT_WEIGHTS: [f64; 3] = [0.328, 0.549, 0.123];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoal {
    pub domain: String,
    pub constraints: BTreeMap<String, String>,
    pub requests: BTreeSet<String>,
    /// Empty when this domain does not need a booking.
    #[serde(default)]
    pub book: BTreeMap<String, String>,
}

impl SubGoal {
    pub fn needs_booking(&self) -> bool {
        !self.book.is_empty()
    }
}

/// Hidden user objective. Subgoals are kept in ontology domain order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub subgoals: Vec<SubGoal>,
}

impl UserGoal {
    pub fn subgoal(&self, domain: &str) -> Option<&SubGoal> {
        self.subgoals.iter().find(|g| g.domain == domain)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.subgoals.iter().map(|g| g.domain.as_str())
    }

    pub fn num_domains(&self) -> usize {
        self.subgoals.len()
    }

    /// Checks the structural invariants against an ontology and database.
    pub fn validate(&self, ontology: &Ontology, db: &Database) -> Result<()> {
        if self.subgoals.is_empty() {
            return Err(Error::schema("goal", "no domains"));
        }
        for g in &self.subgoals {
            let schema = ontology.domain(&g.domain)?;
            for slot in g.constraints.keys() {
                if !schema.is_informable(slot) {
                    return Err(Error::UnknownSlot { domain: g.domain.clone(), slot: slot.clone() });
                }
            }
            for slot in g.requests.iter().chain(g.book.keys()) {
                if !schema.is_requestable(slot) && !schema.is_book_slot(slot) {
                    return Err(Error::UnknownSlot { domain: g.domain.clone(), slot: slot.clone() });
                }
            }
            if count_matches(db, &g.domain, &g.constraints) == 0 {
                return Err(Error::schema(format!("goal.{}", g.domain), "constraints are unsatisfiable"));
            }
        }
        Ok(())
    }
}

/// The default mixture with any mass on unavailable domain counts moved to
/// the largest count the ontology supports.
pub fn domain_count_weights(ontology: &Ontology) -> [f64; 3] {
    let mut w = DEFAULT_DOMAIN_COUNT_WEIGHTS;
    let max = ontology.num_domains().clamp(1, 3);
    for i in max..3 {
        w[max - 1] += w[i];
        w[i] = 0.0;
    }
    w
}

fn check_weights(weights: &[f64; 3], ontology: &Ontology) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("domain count weights {weights:?} must sum to 1")));
    }
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && i + 1 > ontology.num_domains() {
            return Err(Error::InvalidArgument(format!(
                "weight on {} domains but the ontology has {}",
                i + 1,
                ontology.num_domains()
            )));
        }
    }
    Ok(())
}

/// Draws one satisfiable goal. Constraints are rejection-sampled against the
/// database; requests are a non-empty subset of the requestable slots; bookable
/// domains need a booking with probability 0.5.
pub fn sample_goal<R: Rng + ?Sized>(
    ontology: &Ontology,
    db: &Database,
    rng: &mut R,
    domain_count_weights: &[f64; 3],
) -> Result<UserGoal> {
    check_weights(domain_count_weights, ontology)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut count = 3;
    for (i, w) in domain_count_weights.iter().enumerate() {
        acc += w;
        if u < acc {
            count = i + 1;
            break;
        }
    }
    while domain_count_weights[count - 1] == 0.0 {
        count -= 1;
    }
    let mut picked = index::sample(rng, ontology.num_domains(), count).into_vec();
    picked.sort_unstable();

    let mut subgoals = Vec::with_capacity(count);
    for di in picked {
        let schema = &ontology.domains()[di];
        let slots: Vec<&String> = schema.informable.keys().collect();
        let max_constraints = slots.len().min(3);
        let mut constraints = None;
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            let k = rng.gen_range(1..=max_constraints);
            let mut chosen = index::sample(rng, slots.len(), k).into_vec();
            chosen.sort_unstable();
            let candidate: BTreeMap<String, String> = chosen
                .into_iter()
                .map(|i| {
                    let slot = slots[i];
                    let value = schema.informable[slot].choose(rng).expect("non-empty");
                    (slot.clone(), value.clone())
                })
                .collect();
            if count_matches(db, &schema.name, &candidate) > 0 {
                constraints = Some(candidate);
                break;
            }
        }
        let constraints = constraints.ok_or_else(|| Error::SamplingExhausted {
            domain: schema.name.clone(),
            attempts: MAX_REJECTION_ATTEMPTS,
        })?;

        let mut requests = BTreeSet::new();
        if !schema.requestable.is_empty() {
            let k = rng.gen_range(1..=schema.requestable.len().min(2));
            for i in index::sample(rng, schema.requestable.len(), k) {
                requests.insert(schema.requestable[i].clone());
            }
        }

        let mut book = BTreeMap::new();
        if schema.bookable && rng.gen_bool(0.5) {
            for slot in &schema.book_slots {
                let values = book_values(slot);
                book.insert(slot.clone(), values.choose(rng).expect("non-empty").clone());
            }
        }
        subgoals.push(SubGoal { domain: schema.name.clone(), constraints, requests, book });
    }
    Ok(UserGoal { subgoals })
}

/// A fixed goal set drawn from its own seed.
pub fn sample_goal_set(
    ontology: &Ontology,
    db: &Database,
    seed: u64,
    n: usize,
    weights: &[f64; 3],
) -> Result<Vec<UserGoal>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_goal(ontology, db, &mut rng, weights)).collect()
}

pub fn write_goals(path: &Path, goals: &[UserGoal]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in goals {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_goals(path: &Path) -> Result<Vec<UserGoal>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut goals = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let goal = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        goals.push(goal);
    }
    Ok(goals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::database::{generate_database, query};
    use crate::world::ontology::WorldConfig;
    use proptest::prelude::*;

    fn world() -> (Ontology, Database) {
        let ontology = WorldConfig::default_world().ontology();
        let db = generate_database(&ontology, 7, 30).unwrap();
        (ontology, db)
    }

    #[test]
    fn degenerate_weights_give_single_domain_goals() {
        let (ontology, db) = world();
        let goals = sample_goal_set(&ontology, &db, 3, 200, &[1.0, 0.0, 0.0]).unwrap();
        assert!(goals.iter().all(|g| g.num_domains() == 1));
    }

    #[test]
    fn domain_count_mixture_matches_weights() {
        let (ontology, db) = world();
        let weights = [0.33, 0.55, 0.12];
        let goals = sample_goal_set(&ontology, &db, 0, 1000, &weights).unwrap();
        for (i, w) in weights.iter().enumerate() {
            let frac = goals.iter().filter(|g| g.num_domains() == i + 1).count() as f64 / 1000.0;
            assert!((frac - w).abs() <= 0.05, "{} domains: {frac} vs {w}", i + 1);
        }
    }

    #[test]
    fn bad_weights_are_rejected() {
        let (ontology, db) = world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_goal(&ontology, &db, &mut rng, &[0.5, 0.2, 0.2]).is_err());
        assert!(sample_goal(&ontology, &db, &mut rng, &[-0.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn degenerate_world_exhausts_sampling() {
        let text = r#"
            [[domains]]
            name = "a"
            requestable = ["r"]
            informable = { x = ["1", "2"] }
        "#;
        let ontology = crate::world::ontology::load_ontology(text).unwrap();
        let db = Database::new([("a".to_string(), Vec::new())].into_iter().collect());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_goal(&ontology, &db, &mut rng, &[1.0, 0.0, 0.0]),
            Err(Error::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn goal_set_round_trips_through_jsonl() {
        let (ontology, db) = world();
        let goals = sample_goal_set(&ontology, &db, 11, 20, &DEFAULT_DOMAIN_COUNT_WEIGHTS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("goals.jsonl");
        write_goals(&path, &goals).unwrap();
        assert_eq!(read_goals(&path).unwrap(), goals);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sampled_goals_are_satisfiable(seed in any::<u64>()) {
            let (ontology, db) = world();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let goal = sample_goal(&ontology, &db, &mut rng, &DEFAULT_DOMAIN_COUNT_WEIGHTS).unwrap();
            prop_assert!(goal.validate(&ontology, &db).is_ok());
            for g in &goal.subgoals {
                prop_assert!(!query(&db, &ontology, &g.domain, &g.constraints).unwrap().is_empty());
                prop_assert!(!g.requests.is_empty());
            }
            let again = sample_goal(&ontology, &db, &mut ChaCha8Rng::seed_from_u64(seed), &DEFAULT_DOMAIN_COUNT_WEIGHTS).unwrap();
            prop_assert_eq!(goal, again);
        }
    }
}
