use std::sync::Arc;

use crate::backends::{ChatBackend, ChatMessage, ChatRequest};

use super::normalize_answer;

/// Decides whether an answer matches the gold answer.
pub trait Judge: Send + Sync {
    fn judge(&self, answer: &str, gold: &str) -> bool;
}

/// Normalized string equality (case, punctuation and whitespace ignored).
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn judge(&self, answer: &str, gold: &str) -> bool {
        let a = normalize_answer(answer);
        !a.is_empty() && a == normalize_answer(gold)
    }
}

/// Asks a model for a yes/no verdict. Backend failures count as incorrect.
pub struct ModelJudge {
    backend: Arc<dyn ChatBackend>,
}

const JUDGE_SYSTEM: &str = "You grade answers. Reply with exactly one word: yes if the response states the same answer as the reference, no otherwise.";

impl ModelJudge {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }
}

impl Judge for ModelJudge {
    fn judge(&self, answer: &str, gold: &str) -> bool {
        let request = ChatRequest::new(
            "",
            vec![ChatMessage::system(JUDGE_SYSTEM), ChatMessage::user(format!("Reference: {gold}\nResponse: {answer}"))],
        )
        .with_tag("role", "judge");
        match self.backend.chat(&request) {
            Ok(resp) => resp.content.trim().to_ascii_lowercase().starts_with("yes"),
            Err(_) => false,
        }
    }
}
