//! Conversational workflow engine over simulation scenes, trajectory
//! datasets and model artifacts.

pub mod adapters;
pub mod data;
pub mod deviation;
pub mod executor;
pub mod intent;
pub mod planner;
pub mod skills;
pub mod state;
pub mod testkit;
