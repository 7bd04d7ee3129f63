use super::lexer::{error_at, tokenize, TokKind, Token, PRIMITIVES};
use super::{AstNode, ParseError};

type PResult<T> = Result<T, ParseError>;

const MODIFIERS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
    "native",
    "transient",
    "volatile",
    "strictfp",
];

const ASSIGN_OPS: &[&str] = &[
    "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
];

// binary operator precedence, loosest first
const BINARY_LEVELS: &[&[&str]] = &[
    &["||"],
    &["&&"],
    &["|"],
    &["^"],
    &["&"],
    &["==", "!="],
    &["<", ">", "<=", ">=", "instanceof"],
    &["<<", ">>", ">>>"],
    &["+", "-"],
    &["*", "/", "%"],
];

pub(super) fn parse(src: &str) -> PResult<AstNode> {
    if src.trim().is_empty() {
        return Err(error_at(src, 0, "empty source"));
    }
    let toks = tokenize(src)?;
    let mut p = Parser { src, toks, pos: 0 };
    let mut items = Vec::new();
    while !p.at_eof() {
        items.push(p.item()?);
    }
    Ok(AstNode {
        kind: "program",
        children: items,
        span: (0, src.len()),
        token_text: None,
    })
}

fn node(kind: &'static str, children: Vec<AstNode>) -> AstNode {
    let start = children.first().map_or(0, |c| c.span.0);
    let end = children.last().map_or(0, |c| c.span.1);
    AstNode {
        kind,
        children,
        span: (start, end),
        token_text: None,
    }
}

struct Parser<'s> {
    src: &'s str,
    toks: Vec<Token>,
    pos: usize,
}

impl<'s> Parser<'s> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)]
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokKind::Eof
    }

    fn check(&self, text: &str) -> bool {
        self.peek().is(text)
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        let tok = self.peek();
        let found = if tok.kind == TokKind::Eof {
            "end of input".to_string()
        } else {
            format!("`{}`", tok.text)
        };
        Err(error_at(
            self.src,
            tok.start,
            format!("{}, found {found}", message.into()),
        ))
    }

    fn leaf_with(&mut self, kind: &'static str) -> AstNode {
        let tok = self.toks[self.pos].clone();
        self.pos += 1;
        AstNode {
            kind,
            children: Vec::new(),
            span: (tok.start, tok.end),
            token_text: Some(tok.text),
        }
    }

    /// Consumes the next token as a leaf with its default kind.
    fn bump(&mut self) -> AstNode {
        let tok = self.peek();
        let kind = match tok.kind {
            TokKind::Ident => "identifier",
            TokKind::Keyword if PRIMITIVES.contains(&tok.text.as_str()) => "primitive_type",
            TokKind::Keyword => "keyword",
            TokKind::IntLit => "integer_literal",
            TokKind::FloatLit => "floating_literal",
            TokKind::StrLit => "string_literal",
            TokKind::CharLit => "char_literal",
            TokKind::BoolLit => "boolean_literal",
            TokKind::NullLit => "null_literal",
            TokKind::Op => "operator",
            TokKind::Punct => "punctuation",
            TokKind::Eof => "eof",
        };
        self.leaf_with(kind)
    }

    fn expect(&mut self, text: &str) -> PResult<AstNode> {
        if self.check(text) {
            Ok(self.bump())
        } else {
            self.err(format!("expected `{text}`"))
        }
    }

    fn expect_ident(&mut self, kind: &'static str) -> PResult<AstNode> {
        if self.peek().kind == TokKind::Ident {
            Ok(self.leaf_with(kind))
        } else {
            self.err("expected identifier")
        }
    }

    /// Runs `f`, rewinding on failure.
    fn attempt<T>(&mut self, f: impl FnOnce(&mut Self) -> PResult<T>) -> Option<T> {
        let saved = self.pos;
        match f(self) {
            Ok(v) => Some(v),
            Err(_) => {
                self.pos = saved;
                None
            }
        }
    }

    /// True when `f` would succeed here; never consumes input.
    fn lookahead(&mut self, f: impl FnOnce(&mut Self) -> PResult<()>) -> bool {
        let saved = self.pos;
        let ok = f(self).is_ok();
        self.pos = saved;
        ok
    }

    // ---- declarations ----

    fn item(&mut self) -> PResult<AstNode> {
        if self.starts_declaration() {
            self.member()
        } else {
            self.statement()
        }
    }

    fn starts_declaration(&mut self) -> bool {
        self.lookahead(|p| {
            p.modifiers_opt()?;
            if p.check("class") || p.check("interface") {
                return Ok(());
            }
            if p.check("void") {
                p.bump();
            } else {
                p.type_()?;
            }
            p.expect_ident("identifier")?;
            p.expect("(").map(|_| ())
        }) || self.lookahead(|p| {
            let m = p.modifiers_opt()?;
            if m.is_none() {
                return p.err("not a declaration");
            }
            Ok(())
        })
    }

    fn modifiers_opt(&mut self) -> PResult<Option<AstNode>> {
        let mut mods = Vec::new();
        loop {
            let tok = self.peek();
            if tok.kind == TokKind::Keyword && MODIFIERS.contains(&tok.text.as_str()) {
                mods.push(self.bump());
            } else if tok.is("@") && self.peek_at(1).kind == TokKind::Ident {
                let at = self.bump();
                let name = self.leaf_with("type_identifier");
                mods.push(node("annotation", vec![at, name]));
            } else {
                break;
            }
        }
        Ok((!mods.is_empty()).then(|| node("modifiers", mods)))
    }

    fn member(&mut self) -> PResult<AstNode> {
        let mut children: Vec<AstNode> = self.modifiers_opt()?.into_iter().collect();
        if self.check("class") || self.check("interface") {
            children.push(self.bump());
            children.push(self.expect_ident("type_identifier")?);
            if self.check("extends") {
                let kw = self.bump();
                let ty = self.type_()?;
                children.push(node("superclass", vec![kw, ty]));
            }
            if self.check("implements") {
                let mut parts = vec![self.bump(), self.type_()?];
                while self.check(",") {
                    parts.push(self.bump());
                    parts.push(self.type_()?);
                }
                children.push(node("super_interfaces", parts));
            }
            children.push(self.class_body()?);
            return Ok(node("class_declaration", children));
        }
        // constructor: Name (
        if self.peek().kind == TokKind::Ident && self.peek_at(1).is("(") {
            children.push(self.leaf_with("method_name"));
            children.push(self.formal_parameters()?);
            children.extend(self.throws_opt()?);
            children.push(self.block()?);
            return Ok(node("constructor_declaration", children));
        }
        if self.check("void") {
            children.push(self.bump());
        } else {
            children.push(self.type_()?);
        }
        if self.peek().kind == TokKind::Ident && self.peek_at(1).is("(") {
            children.push(self.leaf_with("method_name"));
            children.push(self.formal_parameters()?);
            while self.check("[") {
                children.push(self.bump());
                children.push(self.expect("]")?);
            }
            children.extend(self.throws_opt()?);
            if self.check(";") {
                children.push(self.bump());
            } else {
                children.push(self.block()?);
            }
            return Ok(node("method_declaration", children));
        }
        children.extend(self.declarators()?);
        children.push(self.expect(";")?);
        Ok(node("field_declaration", children))
    }

    fn throws_opt(&mut self) -> PResult<Option<AstNode>> {
        if !self.check("throws") {
            return Ok(None);
        }
        let mut parts = vec![self.bump(), self.type_()?];
        while self.check(",") {
            parts.push(self.bump());
            parts.push(self.type_()?);
        }
        Ok(Some(node("throws", parts)))
    }

    fn class_body(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("{")?];
        while !self.check("}") {
            if self.at_eof() {
                return self.err("expected `}`");
            }
            if self.check(";") {
                children.push(self.bump());
                continue;
            }
            children.push(self.member()?);
        }
        children.push(self.bump());
        Ok(node("class_body", children))
    }

    fn formal_parameters(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("(")?];
        if !self.check(")") {
            loop {
                let mut param: Vec<AstNode> = self.modifiers_opt()?.into_iter().collect();
                param.push(self.type_()?);
                if self.check("...") {
                    param.push(self.bump());
                }
                param.push(self.expect_ident("identifier")?);
                while self.check("[") {
                    param.push(self.bump());
                    param.push(self.expect("]")?);
                }
                children.push(node("formal_parameter", param));
                if self.check(",") {
                    children.push(self.bump());
                } else {
                    break;
                }
            }
        }
        children.push(self.expect(")")?);
        Ok(node("formal_parameters", children))
    }

    // ---- types ----

    fn type_(&mut self) -> PResult<AstNode> {
        let base = if self.peek().kind == TokKind::Keyword
            && PRIMITIVES.contains(&self.peek().text.as_str())
        {
            self.bump()
        } else {
            self.class_type()?
        };
        self.dims(base)
    }

    fn dims(&mut self, mut ty: AstNode) -> PResult<AstNode> {
        while self.check("[") && self.peek_at(1).is("]") {
            let open = self.bump();
            let close = self.bump();
            ty = node("array_type", vec![ty, open, close]);
        }
        Ok(ty)
    }

    fn class_type(&mut self) -> PResult<AstNode> {
        let mut ty = self.expect_ident("type_identifier")?;
        if self.check("<") {
            let args = self.type_arguments()?;
            ty = node("generic_type", vec![ty, args]);
        }
        while self.check(".") && self.peek_at(1).kind == TokKind::Ident {
            let dot = self.bump();
            let mut name = self.leaf_with("type_identifier");
            if self.check("<") {
                let args = self.type_arguments()?;
                name = node("generic_type", vec![name, args]);
            }
            ty = node("scoped_type_identifier", vec![ty, dot, name]);
        }
        Ok(ty)
    }

    fn type_arguments(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("<")?];
        if !self.check(">") {
            loop {
                if self.check("?") {
                    let q = self.bump();
                    if self.check("extends") || self.check("super") {
                        let kw = self.bump();
                        let bound = self.type_()?;
                        children.push(node("wildcard", vec![q, kw, bound]));
                    } else {
                        children.push(node("wildcard", vec![q]));
                    }
                } else {
                    children.push(self.type_()?);
                }
                if self.check(",") {
                    children.push(self.bump());
                } else {
                    break;
                }
            }
        }
        children.push(self.expect(">")?);
        Ok(node("type_arguments", children))
    }

    // ---- statements ----

    fn block(&mut self) -> PResult<AstNode> {
        let mut children = vec![self.expect("{")?];
        while !self.check("}") {
            if self.at_eof() {
                return self.err("expected `}`");
            }
            children.push(self.statement()?);
        }
        children.push(self.bump());
        Ok(node("block", children))
    }

    fn statement(&mut self) -> PResult<AstNode> {
        let tok = self.peek().clone();
        if tok.kind == TokKind::Keyword || tok.kind == TokKind::Punct {
            match tok.text.as_str() {
                "{" => return self.block(),
                ";" => return Ok(node("empty_statement", vec![self.bump()])),
                "if" => return self.if_statement(),
                "while" => {
                    let kw = self.bump();
                    let (open, cond, close) = self.paren_condition()?;
                    let body = self.statement()?;
                    return Ok(node("while_statement", vec![kw, open, cond, close, body]));
                }
                "do" => {
                    let kw = self.bump();
                    let body = self.statement()?;
                    let wkw = self.expect("while")?;
                    let (open, cond, close) = self.paren_condition()?;
                    let semi = self.expect(";")?;
                    return Ok(node(
                        "do_statement",
                        vec![kw, body, wkw, open, cond, close, semi],
                    ));
                }
                "for" => return self.for_statement(),
                "return" => {
                    let mut c = vec![self.bump()];
                    if !self.check(";") {
                        c.push(self.expression()?);
                    }
                    c.push(self.expect(";")?);
                    return Ok(node("return_statement", c));
                }
                "break" | "continue" => {
                    let kind = if tok.text == "break" {
                        "break_statement"
                    } else {
                        "continue_statement"
                    };
                    let mut c = vec![self.bump()];
                    if self.peek().kind == TokKind::Ident {
                        c.push(self.bump());
                    }
                    c.push(self.expect(";")?);
                    return Ok(node(kind, c));
                }
                "throw" => {
                    let kw = self.bump();
                    let e = self.expression()?;
                    let semi = self.expect(";")?;
                    return Ok(node("throw_statement", vec![kw, e, semi]));
                }
                "switch" => return self.switch_statement(),
                "try" => return self.try_statement(),
                "class" => return self.member(),
                _ => {}
            }
        }
        if let Some(decl) = self.local_variable_declaration(true)? {
            return Ok(decl);
        }
        let e = self.expression()?;
        let semi = self.expect(";")?;
        Ok(node("expression_statement", vec![e, semi]))
    }

    fn paren_condition(&mut self) -> PResult<(AstNode, AstNode, AstNode)> {
        let open = self.expect("(")?;
        let cond = self.expression()?;
        let close = self.expect(")")?;
        Ok((open, cond, close))
    }

    fn if_statement(&mut self) -> PResult<AstNode> {
        let kw = self.bump();
        let (open, cond, close) = self.paren_condition()?;
        let mut c = vec![kw, open, cond, close, self.statement()?];
        if self.check("else") {
            c.push(self.bump());
            c.push(self.statement()?);
        }
        Ok(node("if_statement", c))
    }

    /// Parses `[final] Type name ...` if the input looks like a declaration;
    /// returns `None` (without consuming) otherwise.
    fn local_variable_declaration(&mut self, with_semicolon: bool) -> PResult<Option<AstNode>> {
        let head = self.attempt(|p| {
            let mods = p.modifiers_opt()?;
            let ty = p.type_()?;
            if p.peek().kind != TokKind::Ident {
                return p.err("expected identifier");
            }
            let next = p.peek_at(1);
            if !(next.is("=") || next.is(";") || next.is(",") || next.is("[") || next.is(":")) {
                return p.err("not a declaration");
            }
            Ok((mods, ty))
        });
        let Some((mods, ty)) = head else {
            return Ok(None);
        };
        let mut c: Vec<AstNode> = mods.into_iter().collect();
        c.push(ty);
        c.extend(self.declarators()?);
        if with_semicolon {
            c.push(self.expect(";")?);
        }
        Ok(Some(node("local_variable_declaration", c)))
    }

    fn declarators(&mut self) -> PResult<Vec<AstNode>> {
        let mut out = Vec::new();
        loop {
            let mut d = vec![self.expect_ident("identifier")?];
            while self.check("[") {
                d.push(self.bump());
                d.push(self.expect("]")?);
            }
            if self.check("=") {
                d.push(self.bump());
                d.push(self.variable_initializer()?);
            }
            out.push(node("variable_declarator", d));
            if self.check(",") {
                out.push(self.bump());
            } else {
                break;
            }
        }
        Ok(out)
    }

    fn variable_initializer(&mut self) -> PResult<AstNode> {
        if self.check("{") {
            self.array_initializer()
        } else {
            self.expression()
        }
    }

    fn array_initializer(&mut self) -> PResult<AstNode> {
        let mut c = vec![self.expect("{")?];
        while !self.check("}") {
            c.push(self.variable_initializer()?);
            if self.check(",") {
                c.push(self.bump());
            } else {
                break;
            }
        }
        c.push(self.expect("}")?);
        Ok(node("array_initializer", c))
    }

    fn for_statement(&mut self) -> PResult<AstNode> {
        let kw = self.bump();
        // enhanced for: ( Type name : expr )
        let enhanced = self.attempt(|p| {
            let open = p.expect("(")?;
            let mut c: Vec<AstNode> = vec![open];
            c.extend(p.modifiers_opt()?);
            c.push(p.type_()?);
            c.push(p.expect_ident("identifier")?);
            c.push(p.expect(":")?);
            Ok(c)
        });
        if let Some(mut header) = enhanced {
            header.push(self.expression()?);
            header.push(self.expect(")")?);
            let body = self.statement()?;
            return Ok(node(
                "enhanced_for_statement",
                vec![kw, node("for_header", header), body],
            ));
        }
        let mut h = vec![self.expect("(")?];
        if !self.check(";") {
            match self.local_variable_declaration(false)? {
                Some(decl) => h.push(decl),
                None => h.extend(self.expression_list()?),
            }
        }
        h.push(self.expect(";")?);
        if !self.check(";") {
            h.push(self.expression()?);
        }
        h.push(self.expect(";")?);
        if !self.check(")") {
            h.extend(self.expression_list()?);
        }
        h.push(self.expect(")")?);
        let body = self.statement()?;
        Ok(node("for_statement", vec![kw, node("for_header", h), body]))
    }

    fn expression_list(&mut self) -> PResult<Vec<AstNode>> {
        let mut out = vec![self.expression()?];
        while self.check(",") {
            out.push(self.bump());
            out.push(self.expression()?);
        }
        Ok(out)
    }

    fn switch_statement(&mut self) -> PResult<AstNode> {
        let kw = self.bump();
        let (open, cond, close) = self.paren_condition()?;
        let mut body = vec![self.expect("{")?];
        while !self.check("}") {
            if self.at_eof() {
                return self.err("expected `}`");
            }
            if self.check("case") {
                let case = self.bump();
                let mut label = vec![case, self.ternary()?];
                while self.check(",") {
                    label.push(self.bump());
                    label.push(self.ternary()?);
                }
                label.push(self.expect(":")?);
                body.push(node("switch_label", label));
            } else if self.check("default") && self.peek_at(1).is(":") {
                let d = self.bump();
                let colon = self.bump();
                body.push(node("switch_label", vec![d, colon]));
            } else {
                body.push(self.statement()?);
            }
        }
        body.push(self.bump());
        Ok(node(
            "switch_statement",
            vec![kw, open, cond, close, node("switch_block", body)],
        ))
    }

    fn try_statement(&mut self) -> PResult<AstNode> {
        let mut c = vec![self.bump(), self.block()?];
        while self.check("catch") {
            let kw = self.bump();
            let open = self.expect("(")?;
            let mut formal: Vec<AstNode> = self.modifiers_opt()?.into_iter().collect();
            formal.push(self.type_()?);
            while self.check("|") {
                formal.push(self.bump());
                formal.push(self.type_()?);
            }
            formal.push(self.expect_ident("identifier")?);
            let close = self.expect(")")?;
            let body = self.block()?;
            c.push(node(
                "catch_clause",
                vec![
                    kw,
                    open,
                    node("catch_formal_parameter", formal),
                    close,
                    body,
                ],
            ));
        }
        if self.check("finally") {
            let kw = self.bump();
            let body = self.block()?;
            c.push(node("finally_clause", vec![kw, body]));
        }
        if c.len() == 2 {
            return self.err("expected `catch` or `finally`");
        }
        Ok(node("try_statement", c))
    }

    // ---- expressions ----

    fn expression(&mut self) -> PResult<AstNode> {
        let lhs = self.ternary()?;
        if let Some((op, n)) = self.peek_operator() {
            if ASSIGN_OPS.contains(&op.as_str()) {
                let op_leaf = self.take_operator(op, n);
                let rhs = self.expression()?;
                return Ok(node("assignment_expression", vec![lhs, op_leaf, rhs]));
            }
        }
        Ok(lhs)
    }

    fn ternary(&mut self) -> PResult<AstNode> {
        let cond = self.binary(0)?;
        if self.check("?") {
            let q = self.bump();
            let a = self.expression()?;
            let colon = self.expect(":")?;
            let b = self.ternary()?;
            return Ok(node("ternary_expression", vec![cond, q, a, colon, b]));
        }
        Ok(cond)
    }

    /// Operator at the cursor, joining adjacent `>` tokens into shifts.
    fn peek_operator(&self) -> Option<(String, usize)> {
        let t0 = self.peek();
        if !matches!(t0.kind, TokKind::Op | TokKind::Keyword) {
            return None;
        }
        if t0.text == ">" {
            let t1 = self.peek_at(1);
            if t1.start == t0.end {
                if t1.text == ">" {
                    let t2 = self.peek_at(2);
                    if t2.start == t1.end && (t2.text == ">" || t2.text == ">=") {
                        return Some((format!(">>{}", t2.text), 3));
                    }
                    return Some((">>".into(), 2));
                }
                if t1.text == ">=" {
                    return Some((">>=".into(), 2));
                }
            }
        }
        Some((t0.text.clone(), 1))
    }

    fn take_operator(&mut self, op: String, n: usize) -> AstNode {
        if n == 1 {
            return self.bump();
        }
        let start = self.peek().start;
        let end = self.peek_at(n - 1).end;
        self.pos += n;
        AstNode {
            kind: "operator",
            children: Vec::new(),
            span: (start, end),
            token_text: Some(op),
        }
    }

    fn binary(&mut self, level: usize) -> PResult<AstNode> {
        if level == BINARY_LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        while let Some((op, n)) = self.peek_operator() {
            if !BINARY_LEVELS[level].contains(&op.as_str()) {
                break;
            }
            let op_leaf = self.take_operator(op, n);
            if op_leaf.token_text.as_deref() == Some("instanceof") {
                let ty = self.type_()?;
                lhs = node("instanceof_expression", vec![lhs, op_leaf, ty]);
                continue;
            }
            let rhs = self.binary(level + 1)?;
            lhs = node("binary_expression", vec![lhs, op_leaf, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<AstNode> {
        let tok = self.peek();
        if tok.kind == TokKind::Op {
            match tok.text.as_str() {
                "+" | "-" | "!" | "~" => {
                    let op = self.bump();
                    let operand = self.unary()?;
                    return Ok(node("unary_expression", vec![op, operand]));
                }
                "++" | "--" => {
                    let op = self.bump();
                    let operand = self.unary()?;
                    return Ok(node("update_expression", vec![op, operand]));
                }
                _ => {}
            }
        }
        if self.check("(") {
            if let Some(cast) = self.attempt(Self::cast) {
                return Ok(cast);
            }
        }
        self.postfix()
    }

    fn cast(&mut self) -> PResult<AstNode> {
        let open = self.expect("(")?;
        let primitive = self.peek().kind == TokKind::Keyword;
        let ty = self.type_()?;
        let close = self.expect(")")?;
        let next = self.peek();
        let operand_follows = match next.kind {
            TokKind::Ident
            | TokKind::IntLit
            | TokKind::FloatLit
            | TokKind::StrLit
            | TokKind::CharLit
            | TokKind::BoolLit
            | TokKind::NullLit => true,
            TokKind::Keyword => matches!(next.text.as_str(), "this" | "new" | "super"),
            TokKind::Punct => next.text == "(",
            TokKind::Op => {
                matches!(next.text.as_str(), "!" | "~")
                    || (primitive && matches!(next.text.as_str(), "+" | "-" | "++" | "--"))
            }
            TokKind::Eof => false,
        };
        if !operand_follows {
            return self.err("not a cast");
        }
        let operand = self.unary()?;
        Ok(node("cast_expression", vec![open, ty, close, operand]))
    }

    fn postfix(&mut self) -> PResult<AstNode> {
        let mut e = self.primary()?;
        loop {
            if self.check(".") {
                let dot = self.bump();
                if self.peek().kind != TokKind::Ident {
                    return self.err("expected member name");
                }
                if self.peek_at(1).is("(") {
                    let name = self.leaf_with("method_name");
                    let args = self.arguments()?;
                    e = node("method_invocation", vec![e, dot, name, args]);
                } else {
                    let name = self.bump();
                    e = node("field_access", vec![e, dot, name]);
                }
            } else if self.check("[") {
                let open = self.bump();
                let idx = self.expression()?;
                let close = self.expect("]")?;
                e = node("array_access", vec![e, open, idx, close]);
            } else if self.check("++") || self.check("--") {
                let op = self.bump();
                e = node("update_expression", vec![e, op]);
            } else {
                return Ok(e);
            }
        }
    }

    fn arguments(&mut self) -> PResult<AstNode> {
        let mut c = vec![self.expect("(")?];
        if !self.check(")") {
            c.extend(self.expression_list()?);
        }
        c.push(self.expect(")")?);
        Ok(node("argument_list", c))
    }

    fn primary(&mut self) -> PResult<AstNode> {
        let tok = self.peek().clone();
        match tok.kind {
            TokKind::IntLit
            | TokKind::FloatLit
            | TokKind::StrLit
            | TokKind::CharLit
            | TokKind::BoolLit
            | TokKind::NullLit => Ok(self.bump()),
            TokKind::Ident => {
                if self.peek_at(1).is("(") {
                    let name = self.leaf_with("method_name");
                    let args = self.arguments()?;
                    Ok(node("method_invocation", vec![name, args]))
                } else {
                    Ok(self.bump())
                }
            }
            TokKind::Keyword => match tok.text.as_str() {
                "this" | "super" => Ok(self.bump()),
                "new" => self.creation(),
                t if PRIMITIVES.contains(&t) && self.peek_at(1).is(".") => {
                    // int.class and friends
                    let ty = self.bump();
                    let dot = self.bump();
                    let member = self.expect("class")?;
                    Ok(node("class_literal", vec![ty, dot, member]))
                }
                _ => self.err("expected expression"),
            },
            TokKind::Punct if tok.text == "(" => {
                let open = self.bump();
                let inner = self.expression()?;
                let close = self.expect(")")?;
                Ok(node("parenthesized_expression", vec![open, inner, close]))
            }
            _ => self.err("expected expression"),
        }
    }

    fn creation(&mut self) -> PResult<AstNode> {
        let kw = self.bump();
        let base = if self.peek().kind == TokKind::Keyword
            && PRIMITIVES.contains(&self.peek().text.as_str())
        {
            self.bump()
        } else {
            self.class_type()?
        };
        if self.check("(") {
            let args = self.arguments()?;
            let mut c = vec![kw, base, args];
            if self.check("{") {
                c.push(self.class_body()?);
            }
            return Ok(node("object_creation_expression", c));
        }
        if !self.check("[") {
            return self.err("expected `(` or `[`");
        }
        let mut c = vec![kw, base];
        let mut sized = false;
        while self.check("[") {
            if self.peek_at(1).is("]") {
                let open = self.bump();
                let close = self.bump();
                c.push(node("dimensions", vec![open, close]));
            } else {
                let open = self.bump();
                let size = self.expression()?;
                let close = self.expect("]")?;
                c.push(node("dimensions_expr", vec![open, size, close]));
                sized = true;
            }
        }
        if self.check("{") {
            c.push(self.array_initializer()?);
        } else if !sized {
            return self.err("expected array initializer");
        }
        Ok(node("array_creation_expression", c))
    }
}
