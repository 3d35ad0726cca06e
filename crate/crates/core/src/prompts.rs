//! Versioned prompt templates for the hub models and the memory tool.
//!
//! The texts live in `prompts/v1/*.txt` and are compiled in.

pub const PROMPT_VERSION: &str = "v1";

pub const MEMORY_MANAGER_SYSTEM: &str = include_str!("../prompts/v1/memory_manager_system.txt");
pub const WINDOW_SUMMARY_USER: &str = include_str!("../prompts/v1/window_summary_user.txt");
pub const CONSULT_SYSTEM: &str = include_str!("../prompts/v1/consult_system.txt");
pub const CONSULT_INCREMENTAL_USER: &str = include_str!("../prompts/v1/consult_incremental_user.txt");
pub const MEMORY_TOOL_DESCRIPTION: &str = include_str!("../prompts/v1/memory_tool.txt");

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn window_summary_user(window_content: &str) -> String {
    WINDOW_SUMMARY_USER.trim_end().replace("{window_content}", window_content)
}

pub fn consult_incremental_user(goal: &str, previous_summary: &str, page_content: &str) -> String {
    // substitute page content last so braces inside raw pages are never re-expanded
    CONSULT_INCREMENTAL_USER
        .trim_end()
        .replace("{goal}", goal)
        .replace("{previous_summary}", previous_summary)
        .replace("{page_content}", page_content)
}

/// The memory tool text split into the tool description and the two
/// parameter descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryToolText {
    pub description: String,
    pub pages: String,
    pub goal: String,
}

pub fn memory_tool_text() -> MemoryToolText {
    let (description, params) = MEMORY_TOOL_DESCRIPTION
        .split_once("Parameters.")
        .expect("memory tool text has a Parameters section");
    let params = params.trim();
    let after_pages = params.strip_prefix("pages:").expect("pages parameter first").trim();
    let (pages, goal) = after_pages.split_once("goal:").expect("goal parameter second");
    MemoryToolText {
        description: description.trim().to_string(),
        pages: pages.trim().to_string(),
        goal: goal.trim().to_string(),
    }
}
