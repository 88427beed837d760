//! Evaluating a remote chat model on the same test sets, through a
//! chat-completions endpoint.

mod client;
mod eval;
pub mod mock;
mod prompt;

pub use client::{
    chat_with_retries, clean_response, ChatBackend, ChatClient, EndpointConfig, Failure, FailureKind, ENV_API_KEY,
    ENV_BASE_URL, ENV_MODEL,
};
pub use eval::{evaluate_llm, judge, replay, score_records, LlmEvaluation, LlmRecord, LlmRunOptions};
pub use prompt::{PromptTemplate, DEFAULT_TEMPLATE, SENTENCE_SLOT};
