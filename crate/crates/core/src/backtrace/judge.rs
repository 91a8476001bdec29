use std::sync::{Arc, LazyLock};

use async_trait::async_trait;
use regex::Regex;
use thiserror::Error;

use crate::span::TextSpan;
use crate::tools::{GatewayError, GatewayRequest, ModelGateway, JUDGE_PROMPT_VERSION};

static CITATION_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\^I\d+\]").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("judge failure: {0}")]
    Failure(String),
}

/// Decides whether a candidate body contains evidence for a claim.
#[async_trait]
pub trait EvidenceJudge: Send + Sync {
    /// Returns the span of supporting evidence in `body`, if any. The span
    /// must be a valid range of `body`.
    async fn find_evidence(&self, claim: &str, body: &str) -> Result<Option<TextSpan>, JudgeError>;
}

#[async_trait]
impl<J: EvidenceJudge + ?Sized> EvidenceJudge for Arc<J> {
    async fn find_evidence(&self, claim: &str, body: &str) -> Result<Option<TextSpan>, JudgeError> {
        (**self).find_evidence(claim, body).await
    }
}

/// Removes `[^I<n>]` citation markers.
pub fn strip_citation_markers(text: &str) -> String {
    CITATION_MARKER.replace_all(text, "").into_owned()
}

/// Splits on sentence terminators followed by whitespace, and on newlines.
/// Terminal punctuation and leading list bullets are dropped and pieces are
/// trimmed.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = match c {
            '\n' => true,
            '.' | '!' | '?' => chars.peek().is_none_or(|(_, next)| next.is_whitespace()),
            _ => false,
        };
        if boundary {
            out.push(&text[start..i]);
            start = i + c.len_utf8();
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(|s| s.trim().trim_start_matches(['-', '*', '•']).trim().trim_end_matches(['.', '!', '?']).trim())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Deterministic judge: the longest claim sentence that occurs verbatim in
/// the body, at its first occurrence. Citation markers are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubstringJudge;

impl SubstringJudge {
    pub fn judge(claim: &str, body: &str) -> Option<TextSpan> {
        let claim = strip_citation_markers(claim);
        let mut candidates = sentences(&claim);
        // stable sort keeps earlier sentences first among equal lengths
        candidates.sort_by_key(|s| std::cmp::Reverse(s.len()));
        candidates.into_iter().find_map(|sentence| body.find(sentence).map(|start| TextSpan::at(start, sentence)))
    }
}

#[async_trait]
impl EvidenceJudge for SubstringJudge {
    async fn find_evidence(&self, claim: &str, body: &str) -> Result<Option<TextSpan>, JudgeError> {
        Ok(Self::judge(claim, body))
    }
}

/// Model-backed judge. The model must answer with a verbatim quote; quotes
/// not found in the body are discarded.
pub struct ModelJudge {
    gateway: Arc<dyn ModelGateway>,
}

impl ModelJudge {
    pub fn new(gateway: Arc<dyn ModelGateway>) -> Self {
        Self { gateway }
    }

    fn parse_quote(call: &crate::tools::ToolCall) -> Option<Option<String>> {
        if call.name != "report_evidence" {
            return None;
        }
        match call.arguments.get("quote") {
            None | Some(serde_json::Value::Null) => Some(None),
            Some(serde_json::Value::String(q)) if q.trim().is_empty() => Some(None),
            Some(serde_json::Value::String(q)) => Some(Some(q.clone())),
            Some(_) => None,
        }
    }
}

#[async_trait]
impl EvidenceJudge for ModelJudge {
    async fn find_evidence(&self, claim: &str, body: &str) -> Result<Option<TextSpan>, JudgeError> {
        let request = GatewayRequest::Judge {
            prompt_version: JUDGE_PROMPT_VERSION.to_string(),
            claim: claim.to_string(),
            body: body.to_string(),
        };
        for _attempt in 0..2 {
            let call = match self.gateway.complete(&request).await {
                Ok(call) => call,
                Err(GatewayError::Malformed(_)) => continue,
                Err(e) => return Err(JudgeError::Failure(e.to_string())),
            };
            match Self::parse_quote(&call) {
                Some(Some(quote)) => return Ok(body.find(&quote).map(|start| TextSpan::at(start, &quote))),
                Some(None) => return Ok(None),
                None => continue,
            }
        }
        Ok(None)
    }
}
