//! Shared fixtures for the criterion benchmarks.

use madpl_core::episode::Transition;
use madpl_core::rules::{corpus_episode_config, rule_dialog};
use madpl_core::world::{domain_count_weights, sample_goal_set, UserGoal, World};

pub struct Fixture {
    pub world: World,
    pub goals: Vec<UserGoal>,
    /// Transitions from rule self-play, usable as a training batch.
    pub batch: Vec<Transition>,
}

pub fn fixture(n_goals: usize) -> Fixture {
    let world = World::default_world();
    let weights = domain_count_weights(&world.ontology);
    let goals = sample_goal_set(&world.ontology, &world.db, 17, n_goals, &weights).expect("goal set");
    let batch = goals
        .iter()
        .flat_map(|g| rule_dialog(&world, g, &corpus_episode_config()).expect("rule dialog").transitions().cloned().collect::<Vec<_>>())
        .collect();
    Fixture { world, goals, batch }
}
