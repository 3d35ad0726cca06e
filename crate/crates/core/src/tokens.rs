//! Token accounting.
//!
//! Budgets (context window, write trigger, degraded-note length) are all
//! expressed in tokens. The runtime never assumes a particular tokenizer:
//! everything goes through [`TokenCounter`], and the default is a
//! byte-length heuristic so tests stay backend-free.

/// Counts tokens in a piece of text.
///
/// Implementations must be deterministic, return 0 for the empty string,
/// and be monotone under concatenation.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Default counter: `ceil(byte_length / 4)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteQuarterCounter;

impl TokenCounter for ByteQuarterCounter {
    fn count(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// Counts tokens with the default counter.
pub fn count_tokens(text: &str) -> usize {
    ByteQuarterCounter.count(text)
}

/// Longest prefix of `text` (on a char boundary) whose count is at most `max_tokens`.
pub fn truncate_to_tokens<'a>(counter: &dyn TokenCounter, text: &'a str, max_tokens: usize) -> &'a str {
    if counter.count(text) <= max_tokens {
        return text;
    }
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    // counts are monotone in prefix length, so binary search the boundary list
    let (mut lo, mut hi) = (0usize, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if counter.count(&text[..bounds[mid]]) <= max_tokens {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    &text[..bounds[lo]]
}
