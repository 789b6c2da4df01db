//! Wire-protocol gateway: HTTP clients that implement the core transition and
//! reward backend traits against live model servers, the request formats they
//! speak, and scriptable in-process mock servers for tests and smoke runs.

pub mod client;
pub mod mock;
pub mod protocol;

pub use client::{CallCounters, CallStats, GatewayConfig, GatewayError, PolicyClient, RewardClient};
pub use mock::{
    EmulatorAnswer, EmulatorSpec, MockBehavior, MockScript, MockServer, RecordedRequest, ScriptEntry,
};
pub use protocol::{
    ChatCompletionResponse, GenerationRequest, PrmScoreRequest, ScoreMode, ScoreResponse, REWARD_TOKEN,
};
