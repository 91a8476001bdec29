//! Byte ranges into UTF-8 information bodies.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open byte range `[start, end)` into a UTF-8 string.
///
/// Both ends must fall on `char` boundaries for the span to resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TextSpan {
    pub start: usize,
    pub end: usize,
}

impl TextSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Span covering `needle` at byte offset `start`.
    pub fn at(start: usize, needle: &str) -> Self {
        Self { start, end: start + needle.len() }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Resolves the span against `text`, or `None` if it is out of bounds,
    /// inverted, or splits a multi-byte character.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end || self.end > text.len() {
            return None;
        }
        if !text.is_char_boundary(self.start) || !text.is_char_boundary(self.end) {
            return None;
        }
        Some(&text[self.start..self.end])
    }

    pub fn is_valid_in(&self, text: &str) -> bool {
        self.slice(text).is_some()
    }
}

impl fmt::Display for TextSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_and_rejects() {
        let text = "héllo world";
        assert_eq!(TextSpan::new(0, 1).slice(text), Some("h"));
        // 'é' occupies bytes 1..3
        assert_eq!(TextSpan::new(1, 2).slice(text), None);
        assert_eq!(TextSpan::new(1, 3).slice(text), Some("é"));
        assert_eq!(TextSpan::new(5, 100).slice(text), None);
        assert_eq!(TextSpan::new(4, 2).slice(text), None);
        assert_eq!(TextSpan::at(7, "world").slice(text), Some("world"));
    }
}
