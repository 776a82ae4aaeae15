//! The synthetic dialog world: ontology, entity database and user goals.

mod database;
mod goal;
mod ontology;

use std::path::Path;

pub use database::{generate_database, query, Database, Entity};
pub use goal::{
    domain_count_weights, read_goals, sample_goal, sample_goal_set, write_goals, SubGoal, UserGoal, DEFAULT_DOMAIN_COUNT_WEIGHTS,
    MAX_REJECTION_ATTEMPTS,
};
pub use ontology::{
    book_values, load_ontology, DomainSchema, Ontology, WorldConfig, DEFAULT_WORLD_TOML, DONT_CARE, GENERAL_DOMAIN,
    NAME_SLOT, NO_SLOT,
};

pub use database::count_matches;
#[cfg(test)]
pub(crate) use database::fixtures;

use crate::acts::{build_action_space, ActionSpace, Role};
use crate::error::Result;
use crate::state::StateLayout;

pub const ONTOLOGY_FILE: &str = "world.toml";
pub const DATABASE_FILE: &str = "db.json";

/// Ontology + database + both action spaces; immutable once built.
#[derive(Clone, Debug)]
pub struct World {
    pub ontology: Ontology,
    pub db: Database,
    pub user_space: ActionSpace,
    pub system_space: ActionSpace,
    pub layout: StateLayout,
}

impl World {
    pub fn new(ontology: Ontology, db: Database) -> Self {
        let user_space = build_action_space(&ontology, Role::User);
        let system_space = build_action_space(&ontology, Role::System);
        let layout = StateLayout::new(&ontology, user_space.dim(), system_space.dim());
        Self { ontology, db, user_space, system_space, layout }
    }

    pub fn from_config(config: &WorldConfig) -> Result<Self> {
        let ontology = config.ontology();
        let db = generate_database(&ontology, config.seed, config.entities_per_domain)?;
        Ok(Self::new(ontology, db))
    }

    pub fn default_world() -> Self {
        Self::from_config(&WorldConfig::default_world()).expect("default world builds")
    }

    pub fn space(&self, role: Role) -> &ActionSpace {
        match role {
            Role::System => &self.system_space,
            Role::User => &self.user_space,
        }
    }

    /// Reads `world.toml` and `db.json` from a world directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let config = WorldConfig::parse(&std::fs::read_to_string(dir.join(ONTOLOGY_FILE))?)?;
        let db = Database::from_json(&std::fs::read_to_string(dir.join(DATABASE_FILE))?)?;
        Ok(Self::new(config.ontology(), db))
    }
}
