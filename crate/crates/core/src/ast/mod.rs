//! Java syntax trees for student submissions.
//!
//! The parser is a hand-written recursive-descent parser over the subset of
//! Java that appears in introductory exercises: classes, methods, fields,
//! the full statement set short of lambdas and labelled statements, and the
//! complete operator precedence table. Files may hold class declarations,
//! bare method declarations (the usual exercise submission shape) or bare
//! statements.
//!
//! Every token becomes a leaf whose `token_text` is the exact source slice,
//! so leaves concatenated with the intervening whitespace and comments
//! reproduce the input.

mod lexer;
mod parser;
pub mod patterns;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use patterns::{
    extract_subtrees, normalize_subtree, normalize_tokens, snippet_for, snippet_for_span,
    NormalizedSubtree, PatternError, Placeholder, Subtree, DEFAULT_MAX_NODES, DEFAULT_MIN_NODES,
    ELIGIBLE_KINDS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    Java,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub kind: &'static str,
    pub children: Vec<AstNode>,
    pub span: (usize, usize),
    /// Source text, present only on leaves.
    pub token_text: Option<String>,
}

impl AstNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(AstNode::depth).max().unwrap_or(0)
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Walk<'_> {
        Walk { stack: vec![self] }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &AstNode> {
        self.walk().filter(|n| n.is_leaf())
    }

    /// Kinds in pre-order; two fragments with the same kind sequence are
    /// structurally identical.
    pub fn kind_sequence(&self) -> Vec<&'static str> {
        self.walk().map(|n| n.kind).collect()
    }
}

pub struct Walk<'a> {
    stack: Vec<&'a AstNode>,
}

impl<'a> Iterator for Walk<'a> {
    type Item = &'a AstNode;

    fn next(&mut self) -> Option<&'a AstNode> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

impl fmt::Display for AstNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(n: &AstNode, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write!(f, "{:indent$}{}", "", n.kind, indent = depth * 2)?;
            if let Some(t) = &n.token_text {
                write!(f, " {t:?}")?;
            }
            writeln!(f, " [{}..{}]", n.span.0, n.span.1)?;
            n.children.iter().try_for_each(|c| go(c, depth + 1, f))
        }
        go(self, 0, f)
    }
}

/// Parses `source` into a syntax tree rooted at a `program` node.
pub fn parse_program(source: &str, language: Language) -> Result<AstNode, ParseError> {
    match language {
        Language::Java => parser::parse(source),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SubtreeError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

/// Parses `source` and returns its normalized candidate subtrees in
/// pre-order.
pub fn normalized_subtrees(
    source: &str,
    language: Language,
    min_nodes: usize,
    max_nodes: usize,
) -> Result<Vec<NormalizedSubtree>, SubtreeError> {
    let root = parse_program(source, language)?;
    Ok(extract_subtrees(&root, min_nodes, max_nodes)?
        .iter()
        .map(normalize_subtree)
        .collect())
}
