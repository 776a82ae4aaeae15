//! Dialog-level metrics and goal-set evaluation.

mod metrics;
mod run;

pub use metrics::{
    booking_matches, inform_f1, inform_scores, informed_requestables, match_rate, success, task_success,
    DialogRecord, Exchange, InformScores, SlotKey,
};
pub use run::{evaluate, evaluate_trajectories, format_table, AgentSpec, Aggregate, EvalReport, GoalResult};
