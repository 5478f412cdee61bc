//! Hierarchical script co-writing: a story model, few-shot prompt templates,
//! a language-model gateway, the generation engine, edit metrics and script
//! export.

pub mod clock;
pub mod engine;
pub mod gateway;
pub mod metrics;
pub mod prompt;
pub mod sample;
pub mod script;
pub mod story;

pub use clock::{Clock, FixedClock, SystemClock};
pub use engine::{Engine, EngineConfig, EngineError, FullRunReport, SeedPolicy};
pub use gateway::{Gateway, GatewayConfig, GatewayError, MockBackend, SamplingConfig};
pub use prompt::{PromptLibrary, PromptSet};
pub use story::{SlotAddress, StorySession};
