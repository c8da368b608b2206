//! Recursive-descent parser for the term grammar, the theory file format,
//! and proof scripts.

use thiserror::Error;

use crate::kernel::{
    elaborate, infer_type, ArgHint, Declaration, Directives, KernelError, Param, Pattern, Term,
    Theory, TypingContext,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("in declaration {name}: {err}")]
    Declaration { name: String, err: KernelError },
    #[error("directive {directive} references unknown declaration {name}")]
    DanglingDirective { directive: String, name: String },
}

pub type Result<T> = std::result::Result<T, ParseError>;

fn err<T>(pos: usize, msg: impl Into<String>) -> Result<T> {
    Err(ParseError::Syntax { pos, msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Dot,
    Colon,
    Ident(String),
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::LBracket => "[".into(),
            Tok::RBracket => "]".into(),
            Tok::LBrace => "{".into(),
            Tok::RBrace => "}".into(),
            Tok::Comma => ",".into(),
            Tok::Dot => ".".into(),
            Tok::Colon => ":".into(),
            Tok::Ident(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Located {
    pub tok: Tok,
    pub pos: usize,
}

pub fn is_delimiter(c: char) -> bool {
    matches!(c, '(' | ')' | '[' | ']' | '{' | '}' | ',' | '.' | ':') || c.is_whitespace()
}

/// Tokenizes source text. Identifiers are maximal runs of non-delimiter
/// characters, which admits symbolic names (`+`, `=`, `+_z`, `'n`) and the
/// arrow separator `->` (an ordinary identifier token recognized by the
/// grammar).
pub fn tokenize(text: &str) -> Result<Vec<Located>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && i + 1 < chars.len() && chars[i + 1] == '*' {
            let mut j = i + 2;
            while j + 1 < chars.len() && !(chars[j] == '*' && chars[j + 1] == '/') {
                j += 1;
            }
            if j + 1 >= chars.len() {
                return err(i, "unterminated comment");
            }
            i = j + 2;
            continue;
        }
        let tok = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            '.' => Some(Tok::Dot),
            ':' => Some(Tok::Colon),
            _ => None,
        };
        if let Some(tok) = tok {
            out.push(Located { tok, pos: i });
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !is_delimiter(chars[i]) {
            if chars[i] == '/' && i + 1 < chars.len() && chars[i + 1] == '*' {
                break;
            }
            i += 1;
        }
        let word: String = chars[start..i].iter().collect();
        out.push(Located { tok: Tok::Ident(word), pos: start });
    }
    Ok(out)
}

pub struct Parser {
    toks: Vec<Located>,
    pos: usize,
    binders: Vec<String>,
}

impl Parser {
    pub fn new(text: &str) -> Result<Parser> {
        Ok(Parser { toks: tokenize(text)?, pos: 0, binders: Vec::new() })
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn peek(&self, ahead: usize) -> Option<&Tok> {
        self.toks.get(self.pos + ahead).map(|l| &l.tok)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|l| l.pos).unwrap_or_else(|| {
            self.toks.last().map(|l| l.pos + 1).unwrap_or(0)
        })
    }

    fn next(&mut self) -> Result<Tok> {
        let t = self
            .toks
            .get(self.pos)
            .ok_or(ParseError::Syntax { pos: self.here(), msg: "unexpected end of input".into() })?
            .tok
            .clone();
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, tok: &Tok) -> Result<()> {
        let pos = self.here();
        let t = self.next()?;
        if &t == tok {
            Ok(())
        } else {
            err(pos, format!("expected {}, found {}", tok.describe(), t.describe()))
        }
    }

    fn expect_ident(&mut self) -> Result<String> {
        let pos = self.here();
        match self.next()? {
            Tok::Ident(s) => Ok(s),
            t => err(pos, format!("expected identifier, found {}", t.describe())),
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<()> {
        let pos = self.here();
        let w = self.expect_ident()?;
        if w == word {
            Ok(())
        } else {
            err(pos, format!("expected {}, found {}", word, w))
        }
    }

    /// Resolves a bare identifier: enclosing binders first (the surface
    /// syntax may drop the apostrophe when referencing a `'x` binder), then
    /// metavariables, then free references.
    fn resolve(&self, word: &str) -> Term {
        match word {
            "type" => return Term::ty(),
            "prop" => return Term::prop(),
            _ => {}
        }
        for b in self.binders.iter().rev() {
            if b == word {
                return Term::var(b.clone());
            }
        }
        let primed = format!("'{}", word);
        for b in self.binders.iter().rev() {
            if *b == primed {
                return Term::var(b.clone());
            }
        }
        if word.starts_with('\'') {
            Term::meta(word)
        } else {
            Term::var(word)
        }
    }

    pub fn parse_term(&mut self) -> Result<Term> {
        let pos = self.here();
        match self.next()? {
            Tok::Ident(w) => {
                if w == "->" {
                    return err(pos, "unexpected ->");
                }
                Ok(self.resolve(&w))
            }
            Tok::LParen => {
                if self.peek(0) == Some(&Tok::Ident("lambda".into())) {
                    self.next()?;
                    let name = self.expect_ident()?;
                    self.expect(&Tok::Colon)?;
                    let ty = self.parse_term()?;
                    self.expect(&Tok::Comma)?;
                    self.binders.push(name.clone());
                    let body = self.parse_term();
                    self.binders.pop();
                    let body = body?;
                    self.expect(&Tok::RParen)?;
                    return Ok(Term::lambda(name, ty, body));
                }
                let head = self.parse_term()?;
                let mut args = Vec::new();
                while self.peek(0) != Some(&Tok::RParen) {
                    if self.at_end() {
                        return err(pos, "unclosed (");
                    }
                    args.push(self.parse_term()?);
                }
                self.next()?;
                if args.is_empty() {
                    return err(pos, "application needs an argument");
                }
                Ok(Term::apps(head, args))
            }
            Tok::LBracket => self.parse_arrow(pos),
            t => err(pos, format!("expected a term, found {}", t.describe())),
        }
    }

    fn parse_arrow(&mut self, _open_pos: usize) -> Result<Term> {
        let binder_mark = self.binders.len();
        let mut params: Vec<Param> = Vec::new();
        let mut last: Option<Term> = None;
        let result = loop {
            // A named parameter looks like `('x : T)`; anything else is a
            // term serving as an anonymous parameter type or the output.
            let named = self.peek(0) == Some(&Tok::LParen)
                && matches!(self.peek(1), Some(Tok::Ident(w)) if w != "lambda")
                && self.peek(2) == Some(&Tok::Colon);
            if named {
                self.next()?;
                let name = self.expect_ident()?;
                self.expect(&Tok::Colon)?;
                let ty = match self.parse_term() {
                    Ok(t) => t,
                    Err(e) => break Err(e),
                };
                if let Err(e) = self.expect(&Tok::RParen) {
                    break Err(e);
                }
                let pos = self.here();
                if let Err(e) = self.expect_word("->") {
                    break err(pos, format!("named parameter must be followed by -> ({})", e));
                }
                self.binders.push(name.clone());
                params.push(Param::named(name, ty));
                continue;
            }
            let item = match self.parse_term() {
                Ok(t) => t,
                Err(e) => break Err(e),
            };
            match self.peek(0) {
                Some(Tok::Ident(w)) if w == "->" => {
                    self.next()?;
                    params.push(Param::anon(item));
                }
                Some(Tok::RBracket) => {
                    self.next()?;
                    last = Some(item);
                    break Ok(());
                }
                _ => {
                    break err(self.here(), "expected -> or ] in function type");
                }
            }
        };
        self.binders.truncate(binder_mark);
        result?;
        let output = last.expect("loop sets output on success");
        if params.is_empty() {
            // `[e]` is plain grouping.
            Ok(output)
        } else {
            Ok(Term::arrow(params, output))
        }
    }
}

/// Parses a single term from text (raw: unresolved references stay as free
/// variables or metavariables; no elaboration).
pub fn parse_term(text: &str) -> Result<Term> {
    let mut p = Parser::new(text)?;
    let t = p.parse_term()?;
    if !p.at_end() {
        return err(p.here(), "trailing input after term");
    }
    Ok(t)
}

/// Parses and elaborates a term against a context, so surface forms with
/// elided arguments (like `(= a b)`) become fully applied.
pub fn parse_term_in(text: &str, ctx: &TypingContext) -> Result<Term> {
    let raw = parse_term(text)?;
    elaborate(&raw, ctx).map_err(|err| ParseError::Declaration { name: text.into(), err })
}

#[derive(Debug, Clone, PartialEq)]
enum RawDirective {
    Forward { pattern: Option<Pattern> },
    Backward { hints: Option<Vec<ArgHint>> },
}

/// Parses a theory file: declarations `name : type.`, comments, and
/// `#forward` / `#backward` directives, which may precede or follow the
/// declaration they reference. Every declaration is kernel-checked against
/// the declarations before it.
pub fn parse_theory(text: &str) -> Result<Theory> {
    let mut p = Parser::new(text)?;
    let mut theory = Theory::new();
    let mut stashed: Vec<(String, RawDirective)> = Vec::new();
    while !p.at_end() {
        let pos = p.here();
        let word = p.expect_ident()?;
        if word == "#forward" || word == "#backward" {
            let name = p.expect_ident()?;
            let dir = if word == "#forward" {
                let pattern = if p.peek(0) == Some(&Tok::LParen) {
                    p.next()?;
                    let term = p.parse_term()?;
                    p.expect(&Tok::Colon)?;
                    let ty = p.parse_term()?;
                    p.expect(&Tok::RParen)?;
                    Some(Pattern { term, ty })
                } else {
                    None
                };
                RawDirective::Forward { pattern }
            } else {
                let mut hints = Vec::new();
                while let Some(Tok::Ident(w)) = p.peek(0) {
                    let hint = match w.as_str() {
                        "infer" => ArgHint::Infer,
                        "subgoal" => ArgHint::Subgoal,
                        other => {
                            return err(p.here(), format!("unknown argument hint {}", other))
                        }
                    };
                    p.next()?;
                    hints.push(hint);
                }
                RawDirective::Backward { hints: if hints.is_empty() { None } else { Some(hints) } }
            };
            p.expect(&Tok::Dot)?;
            if theory.contains(&name) {
                attach(&mut theory, &name, dir);
            } else {
                stashed.push((name, dir));
            }
            continue;
        }
        if word == "->" || word.starts_with('#') {
            return err(pos, format!("unexpected {}", word));
        }
        let name = word;
        p.expect(&Tok::Colon)?;
        let raw_ty = p.parse_term()?;
        p.expect(&Tok::Dot)?;
        let ctx = TypingContext::new(&theory);
        let ty = elaborate(&raw_ty, &ctx)
            .map_err(|err| ParseError::Declaration { name: name.clone(), err })?;
        let sort = infer_type(&ty, &ctx)
            .map_err(|err| ParseError::Declaration { name: name.clone(), err })?;
        if !sort.normalize().is_sort() {
            return Err(ParseError::Declaration {
                name: name.clone(),
                err: KernelError::TypeMismatch {
                    expected: "a sort".into(),
                    found: sort.to_string(),
                    at: ty.to_string(),
                },
            });
        }
        let mut decl = Declaration { name: name.clone(), ty, directives: Directives::default() };
        let mut rest = Vec::new();
        for (n, d) in stashed.drain(..) {
            if n == name {
                apply_directive(&mut decl.directives, d);
            } else {
                rest.push((n, d));
            }
        }
        stashed = rest;
        theory.push(decl);
    }
    if let Some((name, dir)) = stashed.into_iter().next() {
        let directive = match dir {
            RawDirective::Forward { .. } => "#forward",
            RawDirective::Backward { .. } => "#backward",
        };
        return Err(ParseError::DanglingDirective { directive: directive.into(), name });
    }
    Ok(theory)
}

fn attach(theory: &mut Theory, name: &str, dir: RawDirective) {
    for d in theory.decls.iter_mut() {
        if d.name == name {
            apply_directive(&mut d.directives, dir);
            return;
        }
    }
}

fn apply_directive(ds: &mut Directives, dir: RawDirective) {
    match dir {
        RawDirective::Forward { pattern } => {
            ds.forward = true;
            ds.forward_pattern = pattern;
        }
        RawDirective::Backward { hints } => {
            ds.backward = true;
            ds.backward_hints = hints;
        }
    }
}

/// One line of a proof script, before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub enum RawStep {
    Intro { name: String, ty: Term },
    Apply { name: String },
    Show { prop: Term, by: String },
    Goal { statement: Term, steps: Vec<RawStep> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawScript {
    pub name: String,
    pub statement: Term,
    pub steps: Vec<RawStep>,
}

/// Parses `theorem name : T { steps }`.
pub fn parse_script(text: &str) -> Result<RawScript> {
    let mut p = Parser::new(text)?;
    p.expect_word("theorem")?;
    let name = p.expect_ident()?;
    p.expect(&Tok::Colon)?;
    let statement = p.parse_term()?;
    p.expect(&Tok::LBrace)?;
    let steps = parse_steps(&mut p)?;
    p.expect(&Tok::RBrace)?;
    if !p.at_end() {
        return err(p.here(), "trailing input after script");
    }
    Ok(RawScript { name, statement, steps })
}

fn parse_steps(p: &mut Parser) -> Result<Vec<RawStep>> {
    let mut steps = Vec::new();
    loop {
        match p.peek(0) {
            Some(Tok::RBrace) | None => return Ok(steps),
            _ => {}
        }
        let pos = p.here();
        let word = p.expect_ident()?;
        match word.as_str() {
            "intro" => {
                let name = p.expect_ident()?;
                p.expect(&Tok::Colon)?;
                let ty = p.parse_term()?;
                p.expect(&Tok::Dot)?;
                steps.push(RawStep::Intro { name, ty });
            }
            "apply" => {
                let name = p.expect_ident()?;
                p.expect(&Tok::Dot)?;
                steps.push(RawStep::Apply { name });
            }
            "show" => {
                let prop = p.parse_term()?;
                p.expect_word("by")?;
                let by = p.expect_ident()?;
                p.expect(&Tok::Dot)?;
                steps.push(RawStep::Show { prop, by });
            }
            "goal" => {
                let statement = p.parse_term()?;
                p.expect(&Tok::LBrace)?;
                let steps_inner = parse_steps(p)?;
                p.expect(&Tok::RBrace)?;
                steps.push(RawStep::Goal { statement, steps: steps_inner });
            }
            other => return err(pos, format!("unknown proof step {}", other)),
        }
    }
}

/// Used by tests and tools: the canonical rendering round-trips through the
/// parser.
pub fn print_term(t: &Term) -> String {
    t.to_string()
}

/// Splits term text into surface tokens without validating anything:
/// brackets, colons and commas are single-character tokens, everything else
/// is a maximal run of non-delimiter characters (which covers symbolic
/// names and `->`). Never fails, so it can lex incomplete prefixes.
pub fn surface_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if matches!(c, '(' | ')' | '[' | ']' | ':' | ',') {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}
