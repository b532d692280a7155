//! HTTP service over trials with a chat endpoint backed either by the
//! trained baselines or by an external chat-completions model.

pub mod external;
pub mod intent;
pub mod server;

pub use external::{ExternalClient, ExternalConfig, ExternalError};
pub use intent::{Intent, IntentClassifier};
pub use server::{router, serve, AppState, Backend, ChatRequest, ChatResponse, TrialDetail};
