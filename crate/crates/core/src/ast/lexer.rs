use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokKind {
    Ident,
    Keyword,
    IntLit,
    FloatLit,
    StrLit,
    CharLit,
    BoolLit,
    NullLit,
    Op,
    Punct,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        matches!(self.kind, TokKind::Op | TokKind::Punct | TokKind::Keyword) && self.text == text
    }
}

const KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "break",
    "case",
    "catch",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "interface",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
];

pub(crate) const PRIMITIVES: &[&str] = &[
    "boolean", "byte", "char", "short", "int", "long", "float", "double",
];

// `>` is never merged here: the parser joins adjacent `>` tokens into shift
// operators so that nested generic closers stay separable.
const OPERATORS: &[&str] = &[
    "<<=", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "<<", "=", "<", ">", "!", "~", "?", ":", "+", "-", "*", "/", "%",
    "&", "|", "^", "@",
];

const PUNCT: &[char] = &['(', ')', '{', '}', '[', ']', ';', ',', '.'];

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before
        .rfind('\n')
        .map_or(before.len(), |nl| before.len() - nl - 1)
        + 1;
    (line, col)
}

pub(crate) fn error_at(src: &str, offset: usize, message: impl Into<String>) -> ParseError {
    let (line, column) = line_col(src, offset);
    ParseError {
        offset,
        line,
        column,
        message: message.into(),
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            i = src[i..].find('\n').map_or(bytes.len(), |n| i + n);
            continue;
        }
        if src[i..].starts_with("/*") {
            match src[i + 2..].find("*/") {
                Some(n) => i = i + 2 + n + 2,
                None => return Err(error_at(src, i, "unterminated comment")),
            }
            continue;
        }
        let start = i;
        let ch = src[i..].chars().next().unwrap();
        let kind;
        if ch.is_alphabetic() || ch == '_' || ch == '$' {
            while i < bytes.len() {
                let c = src[i..].chars().next().unwrap();
                if c.is_alphanumeric() || c == '_' || c == '$' {
                    i += c.len_utf8();
                } else {
                    break;
                }
            }
            let word = &src[start..i];
            kind = match word {
                "true" | "false" => TokKind::BoolLit,
                "null" => TokKind::NullLit,
                w if KEYWORDS.contains(&w) || PRIMITIVES.contains(&w) => TokKind::Keyword,
                _ => TokKind::Ident,
            };
        } else if c.is_ascii_digit()
            || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
        {
            let mut float = false;
            if c == b'0' && matches!(bytes.get(i + 1), Some(b'x' | b'X' | b'b' | b'B')) {
                i += 2;
                while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
                    i += 1;
                }
            } else {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
                    i += 1;
                }
                if i < bytes.len()
                    && bytes[i] == b'.'
                    && bytes
                        .get(i + 1)
                        .is_none_or(|b| b.is_ascii_digit() || !b.is_ascii_alphabetic())
                {
                    float = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                    float = true;
                    i += 1;
                    if i < bytes.len() && matches!(bytes[i], b'+' | b'-') {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            if i < bytes.len() && matches!(bytes[i], b'f' | b'F' | b'd' | b'D') {
                float = true;
                i += 1;
            } else if i < bytes.len() && matches!(bytes[i], b'l' | b'L') {
                i += 1;
            }
            kind = if float {
                TokKind::FloatLit
            } else {
                TokKind::IntLit
            };
        } else if c == b'"' || c == b'\'' {
            i += 1;
            loop {
                match bytes.get(i) {
                    None | Some(b'\n') => return Err(error_at(src, start, "unterminated literal")),
                    Some(b'\\') => i += 2,
                    Some(&b) if b == c => {
                        i += 1;
                        break;
                    }
                    Some(_) => i += 1,
                }
            }
            kind = if c == b'"' {
                TokKind::StrLit
            } else {
                TokKind::CharLit
            };
        } else if PUNCT.contains(&ch) {
            i += 1;
            kind = TokKind::Punct;
        } else if let Some(op) = OPERATORS.iter().find(|op| src[i..].starts_with(**op)) {
            i += op.len();
            kind = TokKind::Op;
        } else {
            return Err(error_at(src, i, format!("unexpected character {ch:?}")));
        }
        toks.push(Token {
            kind,
            text: src[start..i].to_string(),
            start,
            end: i,
        });
    }
    toks.push(Token {
        kind: TokKind::Eof,
        text: String::new(),
        start: src.len(),
        end: src.len(),
    });
    Ok(toks)
}
