//! Constrained generation of well-typed terms: a token-level machine over
//! the term grammar that only ever offers continuations extendable to a
//! complete term of a target type, a character-level sampler that drives a
//! sequence model through that machine, prefix analysis utilities, and a
//! brute-force enumeration oracle used by tests.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::{
    apply_subst, infer_type, open_declaration, unify_into, Param, Substitution, Term, TermKind,
    TypingContext,
};
use crate::model::{renormalize, SequenceModel, EOT, VOCAB};
use crate::parser::surface_tokens;

/// Default cap on open-bracket nesting, beyond which `(`/`[` stop being
/// offered so every partial term stays completable in bounded space.
pub const NESTING_CAP: usize = 8;

/// Default cap on the enumeration oracle's work.
pub const ENUMERATION_CAP: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompletionError {
    #[error("prefix cannot be completed to the target type: {0}")]
    DeadEnd(String),
    #[error("unexpected token {0}")]
    Syntax(String),
    #[error("enumeration exceeded the configured budget of {0}")]
    BudgetExceeded(usize),
}

/// Difficulty tag conditioning the conjecturer prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Trivial,
    Easy,
    Hard,
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Difficulty::Trivial => write!(f, "trivial"),
            Difficulty::Easy => write!(f, "easy"),
            Difficulty::Hard => write!(f, "hard"),
        }
    }
}

/// The generation prompt for a difficulty tag.
pub fn conjecture_prompt(label: Difficulty) -> String {
    format!("CONJ[{}]:", label)
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Maximum number of committed grammar tokens per attempt (K).
    pub max_tokens: usize,
    pub temperature: f64,
    pub difficulty: Difficulty,
    pub seed: u64,
    pub nesting_cap: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_tokens: 150,
            temperature: 1.0,
            difficulty: Difficulty::Hard,
            seed: 0,
            nesting_cap: NESTING_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conjecture {
    pub text: String,
    pub statement: Term,
}

/// Why a sampling attempt produced no term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    TokenBudget,
    DeadEnd,
}

/// Legal next tokens at a generation point. The end-of-term marker is the
/// newline character.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSet {
    pub alternatives: Vec<String>,
}

impl ContinuationSet {
    pub fn contains(&self, tok: &str) -> bool {
        self.alternatives.iter().any(|a| a == tok)
    }
}

/// End-of-term marker as a token string.
pub fn eot_token() -> String {
    EOT.to_string()
}

// ---------------------------------------------------------------------------
// The token machine.

/// Items of an in-progress function type: optional binder name, the item
/// term, and the item's sort.
type ArrowItem = (Option<String>, Term, Term);

#[derive(Debug, Clone)]
enum Frame {
    /// Awaiting a complete term of this concrete, metavariable-free type.
    Hole { want: Term },
    /// Awaiting a term whose type is a sort (arrow item or binder type).
    TypeHole,
    /// `(` consumed under a value hole; a function head comes next.
    AppOpen { want: Term },
    /// `(` consumed at a type position; either a fresh binder name (inside
    /// a function type) or a sort-producing head comes next.
    AmbigParen { allow_binder: bool },
    /// Application in progress. `want` is the required final type when the
    /// application fills a value hole.
    App {
        head: String,
        params: Vec<Param>,
        output: Term,
        sigma: Substitution,
        args: Vec<Term>,
        want: Option<Term>,
    },
    /// Function type `[ ... ]` in progress; `required` pins the output
    /// sort when the surrounding hole demands one.
    Arrow {
        required: Option<Term>,
        items: Vec<ArrowItem>,
        after_item: bool,
        binder_mark: usize,
    },
    /// Named binder `(x : T)` in progress; `ty` holds the type term and
    /// its sort once complete.
    Binder { name: String, colon_seen: bool, ty: Option<(Term, Term)> },
    /// Argument pinned by unification with the target: tokens are forced.
    Forced { tokens: Vec<String>, pos: usize, term: Term, ty: Term },
    /// Composite type (function type or applied type former) filling an
    /// argument whose value later arguments depend on. With no lambdas in
    /// the grammar, such an argument is completable only when some
    /// in-scope name inhabits it, so the tokens are constrained to spell
    /// the type of something in scope. `targets` holds the surviving
    /// (token string, type) candidates; `pos` counts consumed tokens.
    TypeChoice { targets: Vec<(Vec<String>, Term)>, pos: usize, want: Term },
}

/// One legal token together with its effect on the machine.
#[derive(Debug, Clone)]
enum TokenEffect {
    /// A name or sort literal that completes the current position as a term.
    Leaf { term: Term, ty: Term },
    OpenParen,
    OpenBracket { required: Option<Term> },
    Head { name: String, params: Vec<Param>, output: Term, sigma: Substitution, want: Option<Term> },
    BinderName { name: String, counter: usize },
    Colon,
    ArrowSep,
    CloseBracket,
    CloseParen,
    ForcedTok,
    OpenTypeChoice { targets: Vec<(Vec<String>, Term)>, want: Term },
    TypeChoiceTok,
    Eot,
}

/// Incremental recognizer for well-typed terms of a fixed target type.
/// Feeding it one legal token at a time maintains the invariant that the
/// consumed prefix extends to at least one complete well-typed term.
#[derive(Clone)]
pub struct Machine<'a> {
    ctx: &'a TypingContext<'a>,
    target: Term,
    frames: Vec<Frame>,
    binders: Vec<(String, Term)>,
    binder_counter: usize,
    nesting: usize,
    nesting_cap: usize,
    done: Option<Term>,
    last_token: String,
}

impl<'a> Machine<'a> {
    pub fn new(target: &Term, ctx: &'a TypingContext<'a>) -> Machine<'a> {
        Machine::with_cap(target, ctx, NESTING_CAP)
    }

    pub fn with_cap(target: &Term, ctx: &'a TypingContext<'a>, cap: usize) -> Machine<'a> {
        Machine {
            ctx,
            target: target.normalize(),
            frames: vec![Frame::Hole { want: target.normalize() }],
            binders: Vec::new(),
            binder_counter: 0,
            nesting: 0,
            nesting_cap: cap,
            done: None,
            last_token: String::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.done.is_some()
    }

    pub fn completed_term(&self) -> Option<&Term> {
        self.done.as_ref()
    }

    /// Binders currently in scope, outermost first.
    pub fn local_binders(&self) -> &[(String, Term)] {
        &self.binders
    }

    pub fn last_token(&self) -> &str {
        &self.last_token
    }

    /// The type expected at the cursor: the concrete want at a value hole,
    /// `type` at positions admitting any type or proposition, and the
    /// overall target once the term is complete.
    pub fn hole_type(&self) -> Term {
        for f in self.frames.iter().rev() {
            match f {
                Frame::Hole { want } | Frame::AppOpen { want } => return want.clone(),
                Frame::TypeHole
                | Frame::AmbigParen { .. }
                | Frame::Binder { .. }
                | Frame::TypeChoice { .. } => return Term::ty(),
                Frame::Arrow { after_item: false, .. } => return Term::ty(),
                _ => continue,
            }
        }
        self.target.clone()
    }

    /// Typing context extended with the live binders.
    fn typing(&self) -> TypingContext<'a> {
        let mut locals = self.ctx.locals.clone();
        locals.extend(self.binders.iter().cloned());
        TypingContext::with_locals(self.ctx.theory, locals)
    }

    /// Name pool: sort literals, theory declarations, ambient locals, then
    /// machine binders. Entries are (token, term, type).
    fn names(&self) -> Vec<(String, Term, Term)> {
        let mut v: Vec<(String, Term, Term)> = vec![
            ("type".into(), Term::ty(), Term::ty()),
            ("prop".into(), Term::prop(), Term::ty()),
        ];
        for d in &self.ctx.theory.decls {
            v.push((d.name.clone(), Term::var(d.name.clone()), d.ty.clone()));
        }
        for (n, t) in self.ctx.locals.iter().chain(self.binders.iter()) {
            v.push((n.clone(), Term::var(n.clone()), t.clone()));
        }
        v
    }

    /// Next fresh binder name (x0, x1, ... skipping taken names) and the
    /// counter value that produced it.
    fn fresh_binder(&self) -> (String, usize) {
        let names = self.names();
        let mut k = self.binder_counter;
        loop {
            let cand = format!("x{}", k);
            if !names.iter().any(|(n, _, _)| n == &cand) {
                return (cand, k);
            }
            k += 1;
        }
    }

    /// Whether some complete term of type `want` is constructible in the
    /// current scope within `fuel` additional nesting levels: a name of
    /// that type directly, or a saturated application whose arguments are
    /// recursively constructible one level deeper. Parameter types that
    /// still mention an unsolved earlier parameter are treated as
    /// satisfiable; that optimism is harmless here because the dependent
    /// hole is re-checked once the earlier argument lands and its type
    /// becomes concrete.
    fn can_build(&self, want: &Term, fuel: usize) -> bool {
        let ctx = self.typing();
        let names = self.names();
        for (_, _, ty) in &names {
            if ty.def_eq(want) {
                return true;
            }
        }
        if fuel == 0 {
            return false;
        }
        for (_, _, hty) in &names {
            let (params, output) = open_declaration(hty);
            if params.is_empty() {
                continue;
            }
            let mut sigma = Substitution::new();
            if unify_into(&output, want, &mut sigma).is_err() {
                continue;
            }
            if !validate_solutions(&sigma, &params, &ctx) {
                continue;
            }
            if self.args_buildable(&params, 0, &sigma, fuel - 1) {
                return true;
            }
        }
        false
    }

    /// Whether the parameters of an application from index `from` onward
    /// are all satisfiable with `fuel` nesting levels available to each
    /// argument: pinned parameters are already validated, parameter types
    /// mentioning unsolved metavariables are deferred, and concrete ones
    /// must be constructible.
    fn args_buildable(
        &self,
        params: &[Param],
        from: usize,
        sigma: &Substitution,
        fuel: usize,
    ) -> bool {
        for p in &params[from.min(params.len())..] {
            if let Some(n) = &p.name {
                if sigma.contains_key(n) {
                    continue;
                }
            }
            let pt = apply_subst(&p.ty, sigma).normalize();
            if pt.contains_meta() {
                continue;
            }
            if !self.can_build(&pt, fuel) {
                return false;
            }
        }
        true
    }

    /// In-scope composite types (function types and applied type formers)
    /// of sort `want`, rendered as token strings. These are the only
    /// composite types an argument hole whose value is needed later can
    /// take: lacking lambdas, terms of a function or opaque applied type
    /// come only from names, so the type must match some name's type.
    fn type_targets(&self, want: &Term) -> Vec<(Vec<String>, Term)> {
        let ctx = self.typing();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (_, _, ty) in self.names() {
            let ty = ty.normalize();
            if !ty.is_arrow() && !matches!(ty.kind(), TermKind::App(..)) {
                continue;
            }
            let Ok(sort) = infer_type(&ty, &ctx) else { continue };
            if !sort.def_eq(want) {
                continue;
            }
            if seen.insert(ty.canonical().to_string()) {
                out.push((surface_tokens(&ty.to_string()), ty));
            }
        }
        out
    }

    /// Heads usable at a value hole of type `want`: declarations with at
    /// least one parameter whose opened output unifies with the hole type,
    /// every pinned parameter checking against its declared type, and
    /// every remaining parameter satisfiable within `fuel` levels.
    fn exact_heads(&self, want: &Term, fuel: usize) -> Vec<TokenEffect> {
        let ctx = self.typing();
        let mut out = Vec::new();
        for (name, _, ty) in self.names() {
            let (params, output) = open_declaration(&ty);
            if params.is_empty() {
                continue;
            }
            let mut sigma = Substitution::new();
            if unify_into(&output, want, &mut sigma).is_err() {
                continue;
            }
            if !validate_solutions(&sigma, &params, &ctx) {
                continue;
            }
            if !self.args_buildable(&params, 0, &sigma, fuel) {
                continue;
            }
            out.push(TokenEffect::Head { name, params, output, sigma, want: Some(want.clone()) });
        }
        out
    }

    /// Heads usable at a type position: declarations whose declared output
    /// is literally a sort (so the full application is a type or prop) and
    /// whose parameters are satisfiable within `fuel` levels.
    fn sort_heads(&self, fuel: usize) -> Vec<TokenEffect> {
        let mut out = Vec::new();
        for (name, _, ty) in self.names() {
            let (params, output) = open_declaration(&ty);
            if params.is_empty() || !output.is_sort() {
                continue;
            }
            let sigma = Substitution::new();
            if !self.args_buildable(&params, 0, &sigma, fuel) {
                continue;
            }
            out.push(TokenEffect::Head {
                name,
                params,
                output,
                sigma,
                want: None,
            });
        }
        out
    }

    /// Tokens admissible by the grammar and local typing alone, before the
    /// completability probe, in a deterministic order.
    fn raw_effects(&self) -> Vec<(String, TokenEffect)> {
        if self.done.is_some() {
            return vec![(eot_token(), TokenEffect::Eot)];
        }
        let mut out: Vec<(String, TokenEffect)> = Vec::new();
        let can_nest = self.nesting < self.nesting_cap;
        match self.frames.last().expect("an incomplete machine has a frame") {
            Frame::Hole { want } => {
                for (tok, term, ty) in self.names() {
                    if ty.def_eq(want) {
                        out.push((tok, TokenEffect::Leaf { term, ty }));
                    }
                }
                let constrained = want.is_sort() && self.value_needed_later();
                if can_nest && constrained {
                    // Offer each distinct opening token of the in-scope
                    // composite types; the committed value must name one of
                    // them for later dependent arguments to stay fillable.
                    let targets = self.type_targets(want);
                    let mut firsts: Vec<String> = Vec::new();
                    for (toks, _) in &targets {
                        if let Some(t0) = toks.first() {
                            if !firsts.contains(t0) {
                                firsts.push(t0.clone());
                            }
                        }
                    }
                    for t0 in firsts {
                        let sub: Vec<(Vec<String>, Term)> = targets
                            .iter()
                            .filter(|(toks, _)| toks.first() == Some(&t0))
                            .cloned()
                            .collect();
                        out.push((
                            t0,
                            TokenEffect::OpenTypeChoice { targets: sub, want: want.clone() },
                        ));
                    }
                }
                if can_nest && !constrained {
                    if want.is_sort() {
                        out.push((
                            "[".into(),
                            TokenEffect::OpenBracket { required: Some(want.clone()) },
                        ));
                    }
                    out.push(("(".into(), TokenEffect::OpenParen));
                }
            }
            Frame::TypeHole => {
                for (tok, term, ty) in self.names() {
                    if ty.is_sort() {
                        out.push((tok, TokenEffect::Leaf { term, ty }));
                    }
                }
                if can_nest {
                    out.push(("[".into(), TokenEffect::OpenBracket { required: None }));
                    out.push(("(".into(), TokenEffect::OpenParen));
                }
            }
            Frame::AppOpen { want } => {
                let fuel = self.nesting_cap.saturating_sub(self.nesting);
                for eff in self.exact_heads(want, fuel) {
                    if let TokenEffect::Head { name, .. } = &eff {
                        out.push((name.clone(), eff.clone()));
                    }
                }
            }
            Frame::AmbigParen { allow_binder } => {
                if *allow_binder {
                    let (name, counter) = self.fresh_binder();
                    out.push((name.clone(), TokenEffect::BinderName { name, counter }));
                }
                let fuel = self.nesting_cap.saturating_sub(self.nesting);
                for eff in self.sort_heads(fuel) {
                    if let TokenEffect::Head { name, .. } = &eff {
                        out.push((name.clone(), eff.clone()));
                    }
                }
            }
            Frame::App { params, output, sigma, args, want, .. } => {
                if args.len() == params.len() {
                    let ty = apply_subst(output, sigma).normalize();
                    let ok = match want {
                        Some(w) => ty.def_eq(w),
                        None => true,
                    };
                    if ok {
                        out.push((")".into(), TokenEffect::CloseParen));
                    }
                }
            }
            Frame::Arrow { required, items, after_item, .. } => {
                if *after_item {
                    out.push(("->".into(), TokenEffect::ArrowSep));
                    if items.len() >= 2 {
                        let (name, _, sort) = items.last().expect("nonempty items");
                        let sort_ok = match required {
                            Some(r) => sort.def_eq(r),
                            None => true,
                        };
                        if name.is_none() && sort_ok {
                            out.push(("]".into(), TokenEffect::CloseBracket));
                        }
                    }
                } else {
                    for (tok, term, ty) in self.names() {
                        if ty.is_sort() {
                            out.push((tok, TokenEffect::Leaf { term, ty }));
                        }
                    }
                    if can_nest {
                        out.push(("[".into(), TokenEffect::OpenBracket { required: None }));
                        out.push(("(".into(), TokenEffect::OpenParen));
                    }
                }
            }
            Frame::Binder { colon_seen, ty, .. } => {
                if !colon_seen {
                    out.push((":".into(), TokenEffect::Colon));
                } else if ty.is_some() {
                    out.push((")".into(), TokenEffect::CloseParen));
                }
            }
            Frame::Forced { tokens, pos, .. } => {
                out.push((tokens[*pos].clone(), TokenEffect::ForcedTok));
            }
            Frame::TypeChoice { targets, pos, .. } => {
                for (toks, _) in targets {
                    if let Some(t) = toks.get(*pos) {
                        if !out.iter().any(|(x, _)| x == t) {
                            out.push((t.clone(), TokenEffect::TypeChoiceTok));
                        }
                    }
                }
            }
        }
        out
    }

    /// Whether the cursor's hole fills an application argument that later
    /// argument types depend on, so its committed value must stay
    /// inhabitable by the things in scope.
    fn value_needed_later(&self) -> bool {
        if self.frames.len() < 2 {
            return false;
        }
        if let Frame::App { params, args, .. } = &self.frames[self.frames.len() - 2] {
            let idx = args.len();
            if let Some(n) = params.get(idx).and_then(|p| p.name.as_ref()) {
                return params[idx + 1..].iter().any(|p| p.ty.metas().contains(n));
            }
        }
        false
    }

    /// Admissibility of the state reached by a candidate token: every hole
    /// the cursor then faces, the remaining arguments of an enclosing
    /// application, and the pinned output sort of an in-progress function
    /// type must all still be completable within the nesting budget.
    fn viable(&self) -> bool {
        let fuel = self.nesting_cap.saturating_sub(self.nesting);
        match self.frames.last() {
            None => true,
            Some(Frame::Hole { want }) => {
                if !self.can_build(want, fuel) {
                    return false;
                }
                if self.frames.len() >= 2 {
                    if let Frame::App { params, sigma, args, .. } =
                        &self.frames[self.frames.len() - 2]
                    {
                        return self.args_buildable(params, args.len() + 1, sigma, fuel);
                    }
                }
                true
            }
            Some(Frame::App { params, sigma, args, .. }) => {
                self.args_buildable(params, args.len(), sigma, fuel)
            }
            Some(Frame::AppOpen { want }) => !self.exact_heads(want, fuel).is_empty(),
            Some(Frame::AmbigParen { allow_binder }) => {
                *allow_binder || !self.sort_heads(fuel).is_empty()
            }
            Some(Frame::Arrow { required: Some(r), items, after_item, .. }) => {
                let closable = *after_item
                    && items.len() >= 2
                    && items.last().is_some_and(|(n, _, s)| n.is_none() && s.def_eq(r));
                closable || self.can_build(r, fuel)
            }
            _ => true,
        }
    }

    /// All legal next tokens with effects: the grammar's candidates minus
    /// any whose resulting state could no longer be completed, keeping the
    /// promise that every offered token extends to a full term.
    fn token_effects(&self) -> Vec<(String, TokenEffect)> {
        let raw = self.raw_effects();
        let mut out = Vec::with_capacity(raw.len());
        for (tok, eff) in raw {
            let mut probe = self.clone();
            if probe.apply_effect(&tok, eff.clone()).is_ok() && probe.viable() {
                out.push((tok, eff));
            }
        }
        out
    }

    /// Legal next tokens.
    pub fn alternatives(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut v = Vec::new();
        for (tok, _) in self.token_effects() {
            if seen.insert(tok.clone()) {
                v.push(tok);
            }
        }
        v
    }

    /// Consumes one token.
    pub fn advance(&mut self, token: &str) -> Result<(), CompletionError> {
        let effect = match self.token_effects().into_iter().find(|(t, _)| t == token) {
            Some((_, e)) => e,
            None => {
                // A binder may carry any fresh identifier, not just the
                // canonical suggestion; accept it when replaying
                // externally-produced prefixes.
                if matches!(self.frames.last(), Some(Frame::AmbigParen { allow_binder: true }))
                    && is_identifier(token)
                {
                    TokenEffect::BinderName { name: token.to_string(), counter: self.binder_counter }
                } else {
                    return Err(CompletionError::Syntax(token.to_string()));
                }
            }
        };
        self.apply_effect(token, effect)
    }

    fn apply_effect(&mut self, token: &str, effect: TokenEffect) -> Result<(), CompletionError> {
        self.last_token = token.to_string();
        match effect {
            TokenEffect::Eot => Ok(()),
            TokenEffect::Leaf { term, ty } => self.reduce(term, ty),
            TokenEffect::OpenParen => {
                self.nesting += 1;
                match self.frames.last() {
                    Some(Frame::Hole { want }) => {
                        let want = want.clone();
                        self.frames.pop();
                        self.frames.push(Frame::AppOpen { want });
                    }
                    Some(Frame::TypeHole) => {
                        self.frames.push(Frame::AmbigParen { allow_binder: false });
                    }
                    Some(Frame::Arrow { .. }) => {
                        self.frames.push(Frame::AmbigParen { allow_binder: true });
                    }
                    _ => return Err(CompletionError::Syntax(token.to_string())),
                }
                Ok(())
            }
            TokenEffect::OpenBracket { required } => {
                self.nesting += 1;
                self.frames.push(Frame::Arrow {
                    required,
                    items: Vec::new(),
                    after_item: false,
                    binder_mark: self.binders.len(),
                });
                Ok(())
            }
            TokenEffect::Head { name, params, output, sigma, want } => {
                self.frames.pop(); // AppOpen or AmbigParen
                let first = next_arg_frame(&params, 0, &sigma)?;
                self.frames.push(Frame::App {
                    head: name,
                    params,
                    output,
                    sigma,
                    args: Vec::new(),
                    want,
                });
                self.frames.push(first);
                Ok(())
            }
            TokenEffect::BinderName { name, counter } => {
                self.frames.pop(); // AmbigParen
                self.binder_counter = counter + 1;
                self.frames.push(Frame::Binder { name, colon_seen: false, ty: None });
                Ok(())
            }
            TokenEffect::Colon => {
                if let Some(Frame::Binder { colon_seen, .. }) = self.frames.last_mut() {
                    *colon_seen = true;
                }
                self.frames.push(Frame::TypeHole);
                Ok(())
            }
            TokenEffect::ArrowSep => {
                if let Some(Frame::Arrow { after_item, .. }) = self.frames.last_mut() {
                    *after_item = false;
                }
                Ok(())
            }
            TokenEffect::CloseBracket => {
                let Some(Frame::Arrow { items, binder_mark, .. }) = self.frames.pop() else {
                    return Err(CompletionError::Syntax(token.to_string()));
                };
                self.nesting -= 1;
                self.binders.truncate(binder_mark);
                let n = items.len();
                let params: Vec<Param> = items[..n - 1]
                    .iter()
                    .map(|(name, t, _)| Param { name: name.clone(), ty: t.clone() })
                    .collect();
                let output = items[n - 1].1.clone();
                let sort = items[n - 1].2.clone();
                self.reduce(Term::arrow(params, output), sort)
            }
            TokenEffect::CloseParen => match self.frames.pop() {
                Some(Frame::App { head, output, sigma, args, .. }) => {
                    self.nesting -= 1;
                    let term = Term::apps(Term::var(head), args);
                    let ty = apply_subst(&output, &sigma).normalize();
                    self.reduce(term, ty)
                }
                Some(Frame::Binder { name, ty: Some((t, sort)), .. }) => {
                    self.nesting -= 1;
                    match self.frames.last_mut() {
                        Some(Frame::Arrow { items, after_item, .. }) => {
                            items.push((Some(name.clone()), t.clone(), sort));
                            *after_item = true;
                        }
                        _ => return Err(CompletionError::Syntax(token.to_string())),
                    }
                    self.binders.push((name, t));
                    Ok(())
                }
                _ => Err(CompletionError::Syntax(token.to_string())),
            },
            TokenEffect::ForcedTok => {
                let finished = match self.frames.last_mut() {
                    Some(Frame::Forced { tokens, pos, .. }) => {
                        *pos += 1;
                        *pos == tokens.len()
                    }
                    _ => return Err(CompletionError::Syntax(token.to_string())),
                };
                if finished {
                    if let Some(Frame::Forced { term, ty, .. }) = self.frames.pop() {
                        return self.reduce(term, ty);
                    }
                }
                Ok(())
            }
            TokenEffect::OpenTypeChoice { targets, want } => {
                self.frames.push(Frame::TypeChoice { targets, pos: 1, want });
                Ok(())
            }
            TokenEffect::TypeChoiceTok => {
                let completed = match self.frames.last_mut() {
                    Some(Frame::TypeChoice { targets, pos, .. }) => {
                        targets.retain(|(toks, _)| {
                            toks.get(*pos).map(|t| t.as_str()) == Some(token)
                        });
                        if targets.is_empty() {
                            return Err(CompletionError::Syntax(token.to_string()));
                        }
                        *pos += 1;
                        targets.iter().find(|(toks, _)| toks.len() == *pos).map(|(_, t)| t.clone())
                    }
                    _ => return Err(CompletionError::Syntax(token.to_string())),
                };
                if let Some(ty) = completed {
                    let want = match self.frames.pop() {
                        Some(Frame::TypeChoice { want, .. }) => want,
                        _ => return Err(CompletionError::Syntax(token.to_string())),
                    };
                    return self.reduce(ty, want);
                }
                Ok(())
            }
        }
    }

    /// Delivers a completed subterm (with its type) to the enclosing frame.
    fn reduce(&mut self, term: Term, ty: Term) -> Result<(), CompletionError> {
        loop {
            enum Step {
                Done,
                Pop,
                Stay,
                NeedArg(Vec<Param>, usize, Substitution),
            }
            let step = match self.frames.last_mut() {
                None => Step::Done,
                Some(Frame::Hole { .. }) | Some(Frame::TypeHole) => Step::Pop,
                Some(Frame::App { params, sigma, args, .. }) => {
                    if let Some(n) = params[args.len()].name.clone() {
                        sigma.insert(n, term.clone());
                    }
                    args.push(term.clone());
                    if args.len() < params.len() {
                        Step::NeedArg(params.clone(), args.len(), sigma.clone())
                    } else {
                        Step::Stay
                    }
                }
                Some(Frame::Arrow { items, after_item, .. }) => {
                    items.push((None, term.clone(), ty.clone()));
                    *after_item = true;
                    Step::Stay
                }
                Some(Frame::Binder { ty: slot, .. }) => {
                    *slot = Some((term.clone(), ty.clone()));
                    Step::Stay
                }
                Some(_) => return Err(CompletionError::Syntax(term.to_string())),
            };
            match step {
                Step::Done => {
                    self.done = Some(term);
                    return Ok(());
                }
                Step::Pop => {
                    self.frames.pop();
                }
                Step::Stay => return Ok(()),
                Step::NeedArg(params, idx, sigma) => {
                    let frame = next_arg_frame(&params, idx, &sigma)?;
                    self.frames.push(frame);
                    return Ok(());
                }
            }
        }
    }
}

/// True for tokens that can serve as binder names: nonempty, not a
/// reserved delimiter or sort literal.
fn is_identifier(token: &str) -> bool {
    !token.is_empty()
        && !matches!(token, "(" | ")" | "[" | "]" | ":" | "," | "->" | "type" | "prop" | "lambda")
        && !token.contains(char::is_whitespace)
}

/// The frame awaiting argument `idx`: a forced replay when unification
/// already pinned the parameter, otherwise a hole at the (now concrete)
/// parameter type.
fn next_arg_frame(
    params: &[Param],
    idx: usize,
    sigma: &Substitution,
) -> Result<Frame, CompletionError> {
    let p = &params[idx];
    if let Some(n) = &p.name {
        if let Some(v) = sigma.get(n) {
            let ty = apply_subst(&p.ty, sigma).normalize();
            let tokens = surface_tokens(&v.to_string());
            return Ok(Frame::Forced { tokens, pos: 0, term: v.clone(), ty });
        }
    }
    let want = apply_subst(&p.ty, sigma).normalize();
    if want.contains_meta() {
        // Unreachable for well-formed declarations: parameter types only
        // mention earlier named parameters, each solved by its own
        // argument before later holes open.
        return Err(CompletionError::DeadEnd(want.to_string()));
    }
    Ok(Frame::Hole { want })
}

/// Checks every pinned parameter against its declared type under the
/// accumulated substitution: the solution must be closed and its inferred
/// type must match.
fn validate_solutions(sigma: &Substitution, params: &[Param], ctx: &TypingContext) -> bool {
    for p in params {
        if let Some(n) = &p.name {
            if let Some(v) = sigma.get(n) {
                if v.contains_meta() {
                    return false;
                }
                let want = apply_subst(&p.ty, sigma);
                if want.contains_meta() {
                    return false;
                }
                match infer_type(v, ctx) {
                    Ok(t) if t.def_eq(&want) => {}
                    _ => return false,
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Prefix analysis.

/// Structured state of a (possibly partial) term against a target type.
#[derive(Debug, Clone)]
pub struct PrefixState {
    /// The input text.
    pub consumed: String,
    /// Expected type at the cursor: the hole's concrete type at value
    /// positions, `type` at type positions, the target once complete.
    pub hole_type: Term,
    /// Binders in scope at the cursor, outermost first.
    pub local_binders: Vec<(String, Term)>,
    /// Full-token alternatives at the cursor, filtered by any partial
    /// trailing token.
    pub alternatives: Vec<String>,
    /// The partial trailing token when the text ends mid-token.
    pub pending: String,
    /// The completed term when the text is a full term of the target type.
    pub term: Option<Term>,
}

/// Runs the token machine over `text` (which may stop mid-token) toward
/// `target`.
pub fn parse_prefix(
    text: &str,
    target: &Term,
    ctx: &TypingContext,
) -> Result<PrefixState, CompletionError> {
    let (machine, pending) = machine_for_prefix(text, target, ctx)?;
    let alts: Vec<String> = machine
        .alternatives()
        .into_iter()
        .filter(|a| pending.is_empty() || a.starts_with(pending.as_str()))
        .collect();
    if alts.is_empty() && !machine.is_complete() {
        return Err(CompletionError::DeadEnd(text.to_string()));
    }
    Ok(PrefixState {
        consumed: text.to_string(),
        hole_type: machine.hole_type(),
        local_binders: machine.local_binders().to_vec(),
        alternatives: alts,
        pending,
        term: machine.completed_term().cloned(),
    })
}

/// Legal full-token continuations of `prefix` toward `target`. When the
/// prefix ends mid-token, the alternatives are the full tokens consistent
/// with the partial one.
pub fn valid_continuations(
    prefix: &str,
    target: &Term,
    ctx: &TypingContext,
) -> Result<ContinuationSet, CompletionError> {
    let st = parse_prefix(prefix, target, ctx)?;
    Ok(ContinuationSet { alternatives: st.alternatives })
}

/// Lexes a prefix and replays it through a fresh machine. The final token
/// is treated as partial when the text does not end at a clean boundary
/// and some legal alternative strictly extends it.
fn machine_for_prefix<'a>(
    text: &str,
    target: &Term,
    ctx: &'a TypingContext<'a>,
) -> Result<(Machine<'a>, String), CompletionError> {
    let toks = surface_tokens(text);
    let ends_clean = toks.is_empty()
        || text.ends_with(|c: char| {
            c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | ':' | ',')
        });
    let mut machine = Machine::new(target, ctx);
    if ends_clean {
        for t in &toks {
            machine.advance(t)?;
        }
        return Ok((machine, String::new()));
    }
    let last = toks.last().expect("nonempty after clean check").clone();
    for t in &toks[..toks.len() - 1] {
        machine.advance(t)?;
    }
    let alts = machine.alternatives();
    let extends = alts.iter().any(|a| a.starts_with(last.as_str()) && a != &last);
    if extends {
        // Keep the trailing token pending; it may still grow.
        Ok((machine, last))
    } else {
        machine.advance(&last)?;
        Ok((machine, String::new()))
    }
}

// ---------------------------------------------------------------------------
// Constrained character-level sampling.

/// Spacing between adjacent tokens in the canonical rendering: no space
/// after an opening bracket or before a closing one, the comma, or the
/// end-of-term marker; a single space otherwise.
fn separator(prev: &str, next: &str) -> &'static str {
    if prev.is_empty() || prev == "(" || prev == "[" {
        ""
    } else if next == ")" || next == "]" || next == "," || next == "\n" {
        ""
    } else {
        " "
    }
}

/// Candidate strings (separator + token) at a machine boundary.
fn boundary_candidates(machine: &Machine) -> Vec<String> {
    let prev = machine.last_token().to_string();
    machine
        .alternatives()
        .into_iter()
        .map(|tok| format!("{}{}", separator(&prev, &tok), tok))
        .collect()
}

/// Samples one conjecture (a proposition in the ambient context) by
/// constrained decoding under `model`.
pub fn sample_conjecture(
    model: &dyn SequenceModel,
    ctx: &TypingContext,
    cfg: &SamplerConfig,
) -> Result<Conjecture, Rejection> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prompt = conjecture_prompt(cfg.difficulty);
    sample_term_with(model, &Term::prop(), ctx, cfg, &mut rng, &prompt)
        .map(|(text, statement)| Conjecture { text, statement })
}

/// Core constrained-sampling loop: at every character the model's
/// next-character distribution is renormalized over exactly the characters
/// that keep the output a prefix of some well-typed term, then one
/// character is drawn. Runs until the end-of-term character or a failure.
pub fn sample_term_with(
    model: &dyn SequenceModel,
    target: &Term,
    ctx: &TypingContext,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
    prompt: &str,
) -> Result<(String, Term), Rejection> {
    let mut machine = Machine::with_cap(target, ctx, cfg.nesting_cap);
    let mut session = model.start_session(prompt);
    let mut sampled = String::new();
    let mut cands = boundary_candidates(&machine);
    let mut pos = 0usize;
    let mut tokens_committed = 0usize;
    if cands.is_empty() {
        return Err(Rejection::DeadEnd);
    }
    loop {
        // A candidate fully consumed at `pos` can be committed; sampling
        // then continues into the next boundary's candidates. The token
        // vocabulary guarantees at most one such candidate, and that its
        // siblings' extension characters are disjoint from follower starts.
        let complete = cands.iter().find(|c| c.chars().count() == pos).cloned();
        let mut committed: Option<(Machine, Vec<String>)> = None;
        if let Some(full) = &complete {
            let tok = full.strip_prefix(' ').unwrap_or(full);
            let mut m2 = machine.clone();
            if m2.advance(tok).is_ok() {
                let nc = boundary_candidates(&m2);
                committed = Some((m2, nc));
            }
        }
        let mut allowed: Vec<(char, bool)> = Vec::new();
        for c in &cands {
            let cs: Vec<char> = c.chars().collect();
            if cs.len() > pos && !allowed.iter().any(|(x, _)| *x == cs[pos]) {
                allowed.push((cs[pos], false));
            }
        }
        if let Some((_, nc)) = &committed {
            for c in nc {
                if let Some(ch) = c.chars().next() {
                    if !allowed.iter().any(|(x, _)| *x == ch) {
                        allowed.push((ch, true));
                    }
                }
            }
        }
        if allowed.is_empty() {
            return Err(Rejection::DeadEnd);
        }
        if tokens_committed >= cfg.max_tokens {
            return Err(Rejection::TokenBudget);
        }
        let logprobs = session.next_char_logprobs();
        let weights: Vec<f64> = allowed
            .iter()
            .map(|(c, _)| logprobs[(*c as usize).min(VOCAB - 1)] / cfg.temperature)
            .collect();
        let probs = renormalize(&weights);
        let dist = WeightedIndex::new(&probs).map_err(|_| Rejection::DeadEnd)?;
        let (ch, is_commit) = allowed[dist.sample(rng)];
        sampled.push(ch);
        session.append(&ch.to_string());
        if is_commit {
            let (m2, nc) = committed.expect("commit choice implies a committed machine");
            machine = m2;
            tokens_committed += 1;
            if ch == EOT {
                let term = machine.completed_term().cloned().ok_or(Rejection::DeadEnd)?;
                return Ok((sampled.trim_end_matches(EOT).to_string(), term));
            }
            cands = nc.into_iter().filter(|c| c.chars().next() == Some(ch)).collect();
            pos = 1;
        } else {
            if ch == EOT {
                let term = machine.completed_term().cloned().ok_or(Rejection::DeadEnd)?;
                return Ok((sampled.trim_end_matches(EOT).to_string(), term));
            }
            cands.retain(|c| {
                let cs: Vec<char> = c.chars().collect();
                cs.len() > pos && cs[pos] == ch
            });
            pos += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Enumeration oracle.

/// All closed well-typed terms of `target` with AST depth at most
/// `max_depth`, formed by the same rules the machine admits: names,
/// saturated applications of declared heads, and function types. Results
/// are deduplicated up to alpha-equivalence and sorted by rendering.
pub fn enumerate_terms(
    ctx: &TypingContext,
    target: &Term,
    max_depth: usize,
) -> Result<Vec<Term>, CompletionError> {
    enumerate_terms_capped(ctx, target, max_depth, ENUMERATION_CAP)
}

/// As [`enumerate_terms`] with an explicit work cap.
pub fn enumerate_terms_capped(
    ctx: &TypingContext,
    target: &Term,
    max_depth: usize,
    cap: usize,
) -> Result<Vec<Term>, CompletionError> {
    let mut en = Enumerator { ctx, count: 0, cap };
    let mut binders = Vec::new();
    let items = en.exact(&target.normalize(), max_depth, &mut binders, 0)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (t, _) in items {
        if seen.insert(t.canonical().to_string()) {
            out.push(t);
        }
    }
    out.sort_by_key(|t| t.to_string());
    Ok(out)
}

struct Enumerator<'a> {
    ctx: &'a TypingContext<'a>,
    count: usize,
    cap: usize,
}

impl<'a> Enumerator<'a> {
    fn bump(&mut self) -> Result<(), CompletionError> {
        self.count += 1;
        if self.count > self.cap {
            Err(CompletionError::BudgetExceeded(self.cap))
        } else {
            Ok(())
        }
    }

    fn names(&self, binders: &[(String, Term)]) -> Vec<(Term, Term)> {
        let mut v: Vec<(Term, Term)> = vec![(Term::ty(), Term::ty()), (Term::prop(), Term::ty())];
        for d in &self.ctx.theory.decls {
            v.push((Term::var(d.name.clone()), d.ty.clone()));
        }
        for (n, t) in self.ctx.locals.iter().chain(binders.iter()) {
            v.push((Term::var(n.clone()), t.clone()));
        }
        v
    }

    fn typing(&self, binders: &[(String, Term)]) -> TypingContext<'a> {
        let mut locals = self.ctx.locals.clone();
        locals.extend(binders.iter().cloned());
        TypingContext::with_locals(self.ctx.theory, locals)
    }

    /// Terms whose type def-equals `want`, depth <= d.
    fn exact(
        &mut self,
        want: &Term,
        d: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Term, Term)>, CompletionError> {
        let mut out = Vec::new();
        if d == 0 {
            return Ok(out);
        }
        for (term, ty) in self.names(binders) {
            if ty.def_eq(want) {
                self.bump()?;
                out.push((term, ty));
            }
        }
        if want.is_sort() && d >= 2 {
            out.extend(self.arrows(Some(want), d, binders, bcount)?);
        }
        out.extend(self.apps_exact(want, d, binders, bcount)?);
        Ok(out)
    }

    /// Terms whose type is a sort (arrow items and binder types), depth <= d.
    fn typelike(
        &mut self,
        d: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Term, Term)>, CompletionError> {
        let mut out = Vec::new();
        if d == 0 {
            return Ok(out);
        }
        for (term, ty) in self.names(binders) {
            if ty.is_sort() {
                self.bump()?;
                out.push((term, ty));
            }
        }
        if d >= 2 {
            out.extend(self.arrows(None, d, binders, bcount)?);
        }
        out.extend(self.apps_sort_output(d, binders, bcount)?);
        Ok(out)
    }

    /// Function types of depth <= d whose output sort matches `required`
    /// when given. Arrow depth right-folds: each parameter adds one level
    /// over the maximum of its own type depth and the rest's depth, so a
    /// d-deep arrow has a first parameter and a remaining tail both within
    /// d - 1.
    fn arrows(
        &mut self,
        required: Option<&Term>,
        d: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Term, Term)>, CompletionError> {
        let mut out = Vec::new();
        if d < 2 {
            return Ok(out);
        }
        for (t, _) in self.typelike(d - 1, binders, bcount)? {
            for (mut ps, o, s) in self.arrow_tails(required, d - 1, binders, bcount)? {
                ps.insert(0, Param { name: None, ty: t.clone() });
                self.bump()?;
                out.push((Term::arrow(ps, o), s));
            }
        }
        let name = format!("x{}", bcount);
        for (t, _) in self.typelike(d - 1, binders, bcount)? {
            binders.push((name.clone(), t.clone()));
            let tails = self.arrow_tails(required, d - 1, binders, bcount + 1);
            binders.pop();
            for (mut ps, o, s) in tails? {
                ps.insert(0, Param { name: Some(name.clone()), ty: t.clone() });
                self.bump()?;
                out.push((Term::arrow(ps, o), s));
            }
        }
        Ok(out)
    }

    /// Arrow tails within depth d: either just an output item (of a sort
    /// matching `required` when given), or a parameter within d - 1
    /// followed by a tail within d - 1.
    fn arrow_tails(
        &mut self,
        required: Option<&Term>,
        d: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Vec<Param>, Term, Term)>, CompletionError> {
        let mut out: Vec<(Vec<Param>, Term, Term)> = Vec::new();
        if d == 0 {
            return Ok(out);
        }
        for (t, s) in self.typelike(d, binders, bcount)? {
            let ok = match required {
                Some(r) => s.def_eq(r),
                None => true,
            };
            if ok {
                out.push((Vec::new(), t, s));
            }
        }
        if d >= 2 {
            for (t, _) in self.typelike(d - 1, binders, bcount)? {
                for (mut ps, o, s) in self.arrow_tails(required, d - 1, binders, bcount)? {
                    ps.insert(0, Param { name: None, ty: t.clone() });
                    self.bump()?;
                    out.push((ps, o, s));
                }
            }
            let name = format!("x{}", bcount);
            for (t, _) in self.typelike(d - 1, binders, bcount)? {
                binders.push((name.clone(), t.clone()));
                let tails = self.arrow_tails(required, d - 1, binders, bcount + 1);
                binders.pop();
                for (mut ps, o, s) in tails? {
                    ps.insert(0, Param { name: Some(name.clone()), ty: t.clone() });
                    self.bump()?;
                    out.push((ps, o, s));
                }
            }
        }
        Ok(out)
    }

    /// Saturated applications whose type def-equals `want`. An application
    /// of k arguments within depth d leaves the i-th argument (1-based) a
    /// budget of d - k + i - 1.
    fn apps_exact(
        &mut self,
        want: &Term,
        d: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Term, Term)>, CompletionError> {
        let mut out = Vec::new();
        let ctx = self.typing(binders);
        for (head, hty) in self.names(binders) {
            let (params, output) = open_declaration(&hty);
            let k = params.len();
            if k == 0 || d < k + 1 {
                continue;
            }
            let mut sigma = Substitution::new();
            if unify_into(&output, want, &mut sigma).is_err() {
                continue;
            }
            if !validate_solutions(&sigma, &params, &ctx) {
                continue;
            }
            for (args, s) in self.arg_lists(&params, 0, sigma.clone(), d, k, binders, bcount)? {
                let term = Term::apps(head.clone(), args);
                let ty = apply_subst(&output, &s).normalize();
                if ty.def_eq(want) {
                    self.bump()?;
                    out.push((term, ty));
                }
            }
        }
        Ok(out)
    }

    /// Saturated applications whose declared output is literally a sort.
    fn apps_sort_output(
        &mut self,
        d: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Term, Term)>, CompletionError> {
        let mut out = Vec::new();
        for (head, hty) in self.names(binders) {
            let (params, output) = open_declaration(&hty);
            let k = params.len();
            if k == 0 || !output.is_sort() || d < k + 1 {
                continue;
            }
            let sigma = Substitution::new();
            for (args, s) in self.arg_lists(&params, 0, sigma, d, k, binders, bcount)? {
                let term = Term::apps(head.clone(), args);
                let ty = apply_subst(&output, &s).normalize();
                self.bump()?;
                out.push((term, ty));
            }
        }
        Ok(out)
    }

    /// Argument lists for params[idx..] under the accumulated substitution.
    #[allow(clippy::too_many_arguments)]
    fn arg_lists(
        &mut self,
        params: &[Param],
        idx: usize,
        sigma: Substitution,
        d: usize,
        k: usize,
        binders: &mut Vec<(String, Term)>,
        bcount: usize,
    ) -> Result<Vec<(Vec<Term>, Substitution)>, CompletionError> {
        if idx == k {
            return Ok(vec![(Vec::new(), sigma)]);
        }
        let budget = d.saturating_sub(k - idx);
        let p = &params[idx];
        let mut out = Vec::new();
        if let Some(n) = &p.name {
            if let Some(v) = sigma.get(n).cloned() {
                if v.depth() <= budget {
                    for (mut rest, s) in
                        self.arg_lists(params, idx + 1, sigma.clone(), d, k, binders, bcount)?
                    {
                        rest.insert(0, v.clone());
                        out.push((rest, s));
                    }
                }
                return Ok(out);
            }
        }
        let want = apply_subst(&p.ty, &sigma).normalize();
        if want.contains_meta() {
            return Ok(out);
        }
        for (arg, _) in self.exact(&want, budget, binders, bcount)? {
            let mut s2 = sigma.clone();
            if let Some(n) = &p.name {
                s2.insert(n.clone(), arg.clone());
            }
            for (mut rest, s3) in self.arg_lists(params, idx + 1, s2, d, k, binders, bcount)? {
                rest.insert(0, arg.clone());
                out.push((rest, s3));
            }
        }
        Ok(out)
    }
}

/// Renders a term with binders renamed to the machine's fresh-name scheme
/// (x0, x1, ... in order of first appearance), so the result is exactly a
/// machine token path whenever the term is machine-formable.
pub fn surface_form(term: &Term) -> String {
    fn walk(t: &Term, counter: &mut usize, ren: &mut Vec<(String, String)>) -> Term {
        match t.kind() {
            TermKind::Sort(_) | TermKind::Meta(_) => t.clone(),
            TermKind::Var(n) => {
                for (from, to) in ren.iter().rev() {
                    if from == n {
                        return Term::var(to.clone());
                    }
                }
                t.clone()
            }
            TermKind::App(f, a) => Term::app(walk(f, counter, ren), walk(a, counter, ren)),
            TermKind::Lambda(x, ty, b) => {
                let ty2 = walk(ty, counter, ren);
                let nx = format!("x{}", *counter);
                *counter += 1;
                ren.push((x.clone(), nx.clone()));
                let b2 = walk(b, counter, ren);
                ren.pop();
                Term::lambda(nx, ty2, b2)
            }
            TermKind::Arrow(ps, o) => {
                let mut ps2 = Vec::new();
                let mut pushed = 0usize;
                for p in ps {
                    let ty2 = walk(&p.ty, counter, ren);
                    let name2 = p.name.as_ref().map(|n| {
                        let nn = format!("x{}", *counter);
                        *counter += 1;
                        ren.push((n.clone(), nn.clone()));
                        pushed += 1;
                        nn
                    });
                    ps2.push(Param { name: name2, ty: ty2 });
                }
                let o2 = walk(o, counter, ren);
                for _ in 0..pushed {
                    ren.pop();
                }
                Term::arrow(ps2, o2)
            }
        }
    }
    let mut counter = 0usize;
    let mut ren = Vec::new();
    walk(&term.canonical(), &mut counter, &mut ren).to_string()
}
