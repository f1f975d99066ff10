//! Concrete model backends: a deterministic simulated fact world and an HTTP
//! client for OpenAI-compatible chat-completions services.

mod http;
mod world;

pub use http::{
    http_chat, ChatMessage, ChatParams, HttpBackendConfig, HttpJudge, HttpPolicy, HttpReward,
    HttpRiskEstimator, ENV_API_KEY, ENV_BASE_URL,
};
pub use world::{
    normalize_answer, world_switch, FactWorld, Statement, WorldJudge, WorldParams, WorldPolicy,
    WorldQuestion, WorldReward, WorldRiskEstimator, COT_SUFFIX, WORLD_END_MARKER,
};
