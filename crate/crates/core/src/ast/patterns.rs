//! Candidate subtree enumeration and placeholder normalization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexer::{tokenize, TokKind};
use super::AstNode;

/// Root kinds that make a subtree a candidate pattern: expressions and
/// conditions, assignments, declarations, control statements and loop
/// headers.
pub const ELIGIBLE_KINDS: &[&str] = &[
    "binary_expression",
    "unary_expression",
    "update_expression",
    "ternary_expression",
    "instanceof_expression",
    "assignment_expression",
    "local_variable_declaration",
    "expression_statement",
    "if_statement",
    "for_statement",
    "enhanced_for_statement",
    "while_statement",
    "do_statement",
    "return_statement",
    "for_header",
];

pub const DEFAULT_MIN_NODES: usize = 3;
pub const DEFAULT_MAX_NODES: usize = 60;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("invalid node bounds: min {min}, max {max}")]
    InvalidBounds { min: usize, max: usize },
    #[error("span {start}..{end} outside source of length {len}")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Subtree<'a> {
    pub root: &'a AstNode,
    pub depth: usize,
    pub node_count: usize,
    pub source_span: (usize, usize),
}

impl<'a> Subtree<'a> {
    pub fn new(root: &'a AstNode) -> Self {
        Self {
            root,
            depth: root.depth(),
            node_count: root.node_count(),
            source_span: root.span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Placeholder {
    #[serde(rename = "VAR")]
    Var,
    #[serde(rename = "NUM")]
    Num,
    #[serde(rename = "STR")]
    Str,
    #[serde(rename = "CALL")]
    Call,
    #[serde(rename = "TYPE")]
    Type,
}

impl Placeholder {
    pub const ALL: [Placeholder; 5] = [Self::Var, Self::Num, Self::Str, Self::Call, Self::Type];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Var => "VAR",
            Self::Num => "NUM",
            Self::Str => "STR",
            Self::Call => "CALL",
            Self::Type => "TYPE",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == token)
    }

    /// Placeholder class for a leaf kind; `None` means the token is kept.
    pub fn for_leaf_kind(kind: &str) -> Option<Self> {
        match kind {
            "identifier" => Some(Self::Var),
            "method_name" => Some(Self::Call),
            "type_identifier" | "primitive_type" => Some(Self::Type),
            "integer_literal" | "floating_literal" => Some(Self::Num),
            "string_literal" | "char_literal" => Some(Self::Str),
            _ => None,
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A subtree with identifiers and literals abstracted to placeholders.
///
/// Serializes as `{"tokens":[...],"span":[s,e],"kind":"..."}`; the size
/// fields and placeholder map are in-memory only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSubtree {
    pub tokens: Vec<String>,
    pub span: (usize, usize),
    pub kind: String,
    #[serde(skip)]
    pub node_count: usize,
    #[serde(skip)]
    pub depth: usize,
    /// Original text to placeholder class, for display.
    #[serde(skip)]
    pub placeholder_map: BTreeMap<String, Placeholder>,
}

impl NormalizedSubtree {
    pub fn pattern(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Every eligible subtree whose node count lies in `[min_nodes, max_nodes]`,
/// in pre-order. Nested candidates are all kept.
pub fn extract_subtrees(
    root: &AstNode,
    min_nodes: usize,
    max_nodes: usize,
) -> Result<Vec<Subtree<'_>>, PatternError> {
    if min_nodes == 0 || min_nodes > max_nodes {
        return Err(PatternError::InvalidBounds {
            min: min_nodes,
            max: max_nodes,
        });
    }
    Ok(root
        .walk()
        .filter(|n| ELIGIBLE_KINDS.contains(&n.kind))
        .map(Subtree::new)
        .filter(|s| (min_nodes..=max_nodes).contains(&s.node_count))
        .collect())
}

pub fn normalize_subtree(subtree: &Subtree<'_>) -> NormalizedSubtree {
    let mut tokens = Vec::new();
    let mut placeholder_map = BTreeMap::new();
    for leaf in subtree.root.leaves() {
        let text = leaf.token_text.clone().unwrap_or_default();
        match Placeholder::for_leaf_kind(leaf.kind) {
            Some(ph) => {
                tokens.push(ph.as_str().to_string());
                placeholder_map.insert(text, ph);
            }
            None => tokens.push(text),
        }
    }
    NormalizedSubtree {
        tokens,
        span: subtree.source_span,
        kind: subtree.root.kind.to_string(),
        node_count: subtree.node_count,
        depth: subtree.depth,
        placeholder_map,
    }
}

/// Token-level normalization without a tree: placeholders, keywords,
/// operators and punctuation are kept, bare identifiers become `VAR` and
/// literals become `NUM`/`STR`. Applied to normalized tokens it is the
/// identity.
pub fn normalize_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if Placeholder::parse(t).is_some() {
                return t.to_string();
            }
            let kind = tokenize(t)
                .ok()
                .filter(|toks| toks.len() == 2)
                .map(|toks| toks[0].kind);
            match kind {
                Some(TokKind::Ident) => "VAR".to_string(),
                Some(TokKind::IntLit | TokKind::FloatLit) => "NUM".to_string(),
                Some(TokKind::StrLit | TokKind::CharLit) => "STR".to_string(),
                _ => t.to_string(),
            }
        })
        .collect()
}

/// Source text under `span`, without leading or trailing blank lines.
pub fn snippet_for_span(span: (usize, usize), source: &str) -> Result<String, PatternError> {
    let (start, end) = span;
    if start > end
        || end > source.len()
        || !source.is_char_boundary(start)
        || !source.is_char_boundary(end)
    {
        return Err(PatternError::SpanOutOfBounds {
            start,
            end,
            len: source.len(),
        });
    }
    let text = &source[start..end];
    let mut lead = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() && line.ends_with('\n') {
            lead += line.len();
        } else {
            break;
        }
    }
    let body = &text[lead..];
    let mut tail = body.len();
    while let Some(nl) = body[..tail].rfind('\n') {
        if body[nl + 1..tail].trim().is_empty() {
            tail = nl;
        } else {
            break;
        }
    }
    let body = &body[..tail];
    Ok(body.strip_suffix('\r').unwrap_or(body).to_string())
}

pub fn snippet_for(subtree: &Subtree<'_>, source: &str) -> Result<String, PatternError> {
    snippet_for_span(subtree.source_span, source)
}
