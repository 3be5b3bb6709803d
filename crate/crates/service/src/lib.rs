//! Human-evaluation service: goal-driven chat sessions against a randomly
//! assigned system, ratings, and a campaign summary.

pub mod app;
pub mod config;
pub mod store;

pub use app::{router, AppState, Clock};
pub use config::{BackendSettings, ServiceConfig};
pub use store::{Campaign, CampaignSummary, Event, EventLog, Rating, SystemKind};
