//! The interactive proof environment: proof states, finite action
//! enumeration under the theory's directives, action application, and
//! script replay.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::kernel::{
    apply_subst, elaborate, infer_type, open_declaration, unify_into, ArgHint, Declaration,
    KernelError, Param, Substitution, Term, TermKind, Theory, TypingContext,
};
use crate::parser::{parse_script, ParseError, RawScript, RawStep};

/// Default cap on the enumerated action list; deterministic truncation
/// beyond it.
pub const ACTION_CAP: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("statement is not a proposition: {0}")]
    NotAProp(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("replay failed at step {step}: {cause}")]
    Replay { step: String, cause: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// One open goal plus the indices of the objects visible to it. Sibling
/// subgoals do not see objects introduced inside each other.
#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub statement: Term,
    pub scope: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ProofState<'t> {
    pub theory: &'t Theory,
    /// All objects ever created in this state lineage.
    pub objects: Vec<(String, Term)>,
    /// Open goals, current goal first (depth-first order).
    pub goals: Vec<Goal>,
    pub history: Vec<Action>,
    intro_count: usize,
    derived_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    Intro {
        name: String,
        param: Param,
        rest: Term,
    },
    Forward {
        rule: String,
        product: Term,
        closes: bool,
        /// Scope object names the justification consumed (hypotheses fed to
        /// the rule, plus objects mentioned by the instantiated arguments);
        /// drives dependency pruning of relabeled proofs.
        uses: Vec<String>,
    },
    Backward {
        rule: String,
        subgoals: Vec<Term>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub text: String,
    pub kind: ActionKind,
}

impl Action {
    fn intro(name: String, param: Param, rest: Term) -> Action {
        let text = format!("intro {} : {}.", name, param.ty);
        Action { text, kind: ActionKind::Intro { name, param, rest } }
    }

    fn forward(rule: &str, product: Term, closes: bool, uses: Vec<String>) -> Action {
        let text = format!("show {} by {}.", product, rule);
        Action { text, kind: ActionKind::Forward { rule: rule.into(), product, closes, uses } }
    }

    fn backward(rule: &str, subgoals: Vec<Term>) -> Action {
        let text = format!("apply {}.", rule);
        Action { text, kind: ActionKind::Backward { rule: rule.into(), subgoals } }
    }

    pub fn is_forward(&self) -> bool {
        matches!(self.kind, ActionKind::Forward { .. })
    }

    pub fn is_backward(&self) -> bool {
        matches!(self.kind, ActionKind::Backward { .. })
    }

    pub fn is_intro(&self) -> bool {
        matches!(self.kind, ActionKind::Intro { .. })
    }
}

/// Starts a proof of `statement` (which must kernel-check to prop) in the
/// given theory.
pub fn initial_state<'t>(theory: &'t Theory, statement: &Term) -> Result<ProofState<'t>> {
    let ctx = TypingContext::new(theory);
    let st = elaborate(statement, &ctx)?;
    let sort = infer_type(&st, &ctx)?.normalize();
    if sort != Term::prop() {
        return Err(EnvError::NotAProp(statement.to_string()));
    }
    Ok(ProofState {
        theory,
        objects: Vec::new(),
        goals: vec![Goal { statement: st, scope: Vec::new() }],
        history: Vec::new(),
        intro_count: 0,
        derived_count: 0,
    })
}

impl<'t> ProofState<'t> {
    pub fn is_success(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn current_goal(&self) -> Option<&Goal> {
        self.goals.first()
    }

    /// Objects visible to the current goal, in creation order.
    pub fn scope_objects(&self) -> Vec<(String, Term)> {
        match self.goals.first() {
            Some(g) => g.scope.iter().map(|&i| self.objects[i].clone()).collect(),
            None => Vec::new(),
        }
    }

    pub fn context(&self) -> TypingContext<'t> {
        TypingContext::with_locals(self.theory, self.scope_objects())
    }

    fn next_intro_name(&self) -> String {
        if self.intro_count == 0 {
            "x".to_string()
        } else {
            format!("x{}", self.intro_count - 1)
        }
    }

    fn next_derived_name(&self) -> String {
        format!("h{}", self.derived_count)
    }

    /// Canonical text rendering of the current goal's view: objects then
    /// `|-` then the open goals. This is the policy/value prompt payload.
    pub fn render(&self) -> String {
        let objs: Vec<String> =
            self.scope_objects().iter().map(|(n, t)| format!("{} : {}", n, t)).collect();
        let goals: Vec<String> = self.goals.iter().map(|g| g.statement.to_string()).collect();
        format!("{} |- {}", objs.join("; "), goals.join("; "))
    }

    /// Rendering covering every goal's scope; used for transposition keys.
    pub fn render_full(&self) -> String {
        let mut parts = Vec::new();
        for g in &self.goals {
            let objs: Vec<String> =
                g.scope.iter().map(|&i| format!("{} : {}", self.objects[i].0, self.objects[i].1)).collect();
            parts.push(format!("{} |- {}", objs.join("; "), g.statement.canonical()));
        }
        parts.join(" || ")
    }
}

/// Candidate (value, type) pairs for pattern matching and parameter
/// filling: local objects, theory declarations, and the well-scoped
/// subterms of object types and the current goal.
struct Pools {
    /// Objects usable as evidence/values: local scope then theory decls.
    objects: Vec<(Term, Term)>,
    /// Distinct typeable subterms (term, type) drawn from the state.
    subterms: Vec<(Term, Term)>,
}

fn build_pools(state: &ProofState) -> Pools {
    let ctx = state.context();
    let mut objects = Vec::new();
    for (n, t) in state.scope_objects() {
        objects.push((Term::var(n), t));
    }
    for d in &state.theory.decls {
        objects.push((Term::var(d.name.clone()), d.ty.clone()));
    }
    let mut seen: Vec<Term> = Vec::new();
    let mut subterms = Vec::new();
    let mut sources: Vec<Term> = state.scope_objects().iter().map(|(_, t)| t.clone()).collect();
    if let Some(g) = state.current_goal() {
        sources.push(g.statement.clone());
    }
    for src in sources {
        for sub in src.subterms() {
            if sub.is_sort() || seen.contains(&sub) {
                continue;
            }
            seen.push(sub.clone());
            if sub.contains_meta() {
                continue;
            }
            if let Ok(ty) = infer_type(&sub, &ctx) {
                subterms.push((sub, ty));
            }
        }
    }
    Pools { objects, subterms }
}

impl Pools {
    fn all(&self) -> impl Iterator<Item = &(Term, Term)> {
        self.objects.iter().chain(self.subterms.iter())
    }
}


/// Enumerates the finite action list for the current goal: intro, forward
/// applications (with the `=` built-ins), and backward applications of
/// directive-marked declarations and local hypotheses.
pub fn enumerate_actions(state: &ProofState) -> Vec<Action> {
    enumerate_actions_full(state).0
}

/// Also reports whether the deterministic cap truncated the list.
pub fn enumerate_actions_full(state: &ProofState) -> (Vec<Action>, bool) {
    let goal = match state.current_goal() {
        Some(g) => g.statement.clone(),
        None => return (Vec::new(), false),
    };
    let ctx = state.context();
    let mut out: Vec<Action> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut push = |out: &mut Vec<Action>, seen: &mut BTreeSet<String>, a: Action| {
        let digest = match &a.kind {
            ActionKind::Intro { .. } => a.text.clone(),
            ActionKind::Forward { product, .. } => format!("{}//{}", a.text, product.canonical()),
            ActionKind::Backward { subgoals, .. } => {
                let gs: Vec<String> = subgoals.iter().map(|g| g.canonical().to_string()).collect();
                format!("{}//{}", a.text, gs.join(";"))
            }
        };
        if seen.insert(digest) {
            out.push(a);
        }
    };

    // intro
    if let TermKind::Arrow(ps, o) = goal.normalize().kind() {
        let (p1, rest) = (ps[0].clone(), if ps.len() == 1 {
            o.clone()
        } else {
            Term::arrow(ps[1..].to_vec(), o.clone())
        });
        push(&mut out, &mut seen, Action::intro(state.next_intro_name(), p1, rest));
    }

    let pools = build_pools(state);
    let scope = state.scope_objects();

    // forward actions, in declaration order; `=` also contributes the
    // eq_refl / eq_symm / rewrite built-ins at its position.
    for decl in &state.theory.decls {
        if decl.name == "=" {
            builtin_eq_actions(state, &pools, &goal, &ctx, &mut out, &mut seen, &mut push);
        }
        if !decl.directives.forward {
            continue;
        }
        forward_actions(decl, &pools, &scope, &goal, &ctx, &mut out, &mut seen, &mut push);
        if out.len() > ACTION_CAP {
            out.truncate(ACTION_CAP);
            return (out, true);
        }
    }

    // backward actions: directive-marked declarations, then hypotheses.
    for decl in state.theory.decls.iter().filter(|d| d.directives.backward) {
        backward_actions(
            &decl.name,
            &decl.ty,
            decl.directives.backward_hints.as_deref(),
            &scope,
            &goal,
            &ctx,
            &mut out,
            &mut seen,
            &mut push,
        );
    }
    for (name, ty) in &scope {
        backward_actions(name, ty, None, &scope, &goal, &ctx, &mut out, &mut seen, &mut push);
    }

    if out.len() > ACTION_CAP {
        out.truncate(ACTION_CAP);
        (out, true)
    } else {
        (out, false)
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_actions(
    decl: &Declaration,
    pools: &Pools,
    scope: &[(String, Term)],
    goal: &Term,
    ctx: &TypingContext,
    out: &mut Vec<Action>,
    seen: &mut BTreeSet<String>,
    push: &mut impl FnMut(&mut Vec<Action>, &mut BTreeSet<String>, Action),
) {
    let (params, _) = open_declaration(&decl.ty);
    if params.is_empty() {
        return;
    }
    // Pattern phase: each match seeds a substitution.
    let mut seeds: Vec<Substitution> = Vec::new();
    if let Some(pat) = &decl.directives.forward_pattern {
        for (value, vty) in pools.all() {
            let mut sigma = Substitution::new();
            if unify_into(&pat.term, value, &mut sigma).is_ok()
                && unify_into(&pat.ty, vty, &mut sigma).is_ok()
            {
                seeds.push(sigma);
            }
        }
    } else {
        seeds.push(Substitution::new());
    }

    for sigma in seeds {
        fill_params(decl, &params, 0, sigma, Vec::new(), pools, scope, goal, ctx, out, seen, push);
        if out.len() > ACTION_CAP {
            return;
        }
    }
}

/// Recursively fills declaration parameters left to right: metavariables
/// already solved by the pattern are used directly; open ones enumerate
/// existing objects and subterms.
#[allow(clippy::too_many_arguments)]
fn fill_params(
    decl: &Declaration,
    params: &[Param],
    i: usize,
    sigma: Substitution,
    args: Vec<Term>,
    pools: &Pools,
    scope: &[(String, Term)],
    goal: &Term,
    ctx: &TypingContext,
    out: &mut Vec<Action>,
    seen: &mut BTreeSet<String>,
    push: &mut impl FnMut(&mut Vec<Action>, &mut BTreeSet<String>, Action),
) {
    if out.len() > ACTION_CAP {
        return;
    }
    if i == params.len() {
        let product_term = Term::apps(Term::var(decl.name.clone()), args);
        if let Ok(product) = infer_type(&product_term, ctx) {
            let product = product.normalize();
            // Skip products the scope already has.
            if scope.iter().any(|(_, t)| t.def_eq(&product)) {
                return;
            }
            let closes = product.def_eq(goal);
            let uses = object_uses(scope, [&product_term, &product]);
            push(out, seen, Action::forward(&decl.name, product, closes, uses));
        }
        return;
    }
    let p = &params[i];
    let want = apply_subst(&p.ty, &sigma);
    // A named parameter solved by the pattern or earlier arguments.
    if let Some(n) = &p.name {
        if let Some(v) = sigma.get(n).cloned() {
            if let Ok(vt) = infer_type(&v, ctx) {
                if vt.def_eq(&want) {
                    let mut args = args;
                    args.push(v);
                    fill_params(decl, params, i + 1, sigma, args, pools, scope, goal, ctx, out, seen, push);
                }
            }
            return;
        }
    }
    // Open parameter: enumerate existing objects and subterms whose type
    // matches (unification may extend the substitution).
    for (value, vty) in pools.all() {
        let matches = if want.contains_meta() {
            let mut sigma2 = sigma.clone();
            unify_into(&want, vty, &mut sigma2).is_ok().then_some(sigma2)
        } else {
            vty.def_eq(&want).then(|| sigma.clone())
        };
        if let Some(mut sigma2) = matches {
            if let Some(n) = &p.name {
                sigma2.insert(n.clone(), value.clone());
            }
            let mut args2 = args.clone();
            args2.push(value.clone());
            fill_params(decl, params, i + 1, sigma2, args2, pools, scope, goal, ctx, out, seen, push);
        }
    }
}

/// Scope object names mentioned by any of the given terms.
fn object_uses<'a>(
    scope: &[(String, Term)],
    terms: impl IntoIterator<Item = &'a Term>,
) -> Vec<String> {
    let mut set = BTreeSet::new();
    for t in terms {
        for v in t.free_vars() {
            if scope.iter().any(|(n, _)| n == &v) {
                set.insert(v);
            }
        }
    }
    set.into_iter().collect()
}

/// eq_refl, eq_symm, and rewrite: built-in forward actions available when
/// the theory declares `=`.
#[allow(clippy::too_many_arguments)]
fn builtin_eq_actions(
    state: &ProofState,
    pools: &Pools,
    goal: &Term,
    ctx: &TypingContext,
    out: &mut Vec<Action>,
    seen: &mut BTreeSet<String>,
    push: &mut impl FnMut(&mut Vec<Action>, &mut BTreeSet<String>, Action),
) {
    let scope = state.scope_objects();
    let eq = Term::var("=");

    // eq_refl: (= T t t) for each distinct value-level candidate.
    for (value, vty) in pools.all() {
        if value.is_sort() || vty.is_sort() || vty.is_arrow() {
            continue;
        }
        let vs = match infer_type(vty, ctx) {
            Ok(s) => s.normalize(),
            Err(_) => continue,
        };
        if vs != Term::ty() {
            continue;
        }
        let product = Term::apps(eq.clone(), [vty.clone(), value.clone(), value.clone()]);
        if scope.iter().any(|(_, t)| t.def_eq(&product)) {
            continue;
        }
        let closes = product.def_eq(goal);
        let uses = object_uses(&scope, [&product]);
        push(out, seen, Action::forward("eq_refl", product, closes, uses));
        if out.len() > ACTION_CAP {
            return;
        }
    }

    // Equality objects in scope: (name, T, lhs, rhs).
    let mut eqs = Vec::new();
    for (n, t) in &scope {
        let (head, args) = t.normalize().spine();
        if head == eq && args.len() == 3 {
            eqs.push((n.clone(), args[0].clone(), args[1].clone(), args[2].clone()));
        }
    }

    // eq_symm: flip each equality.
    for (n, t, a, b) in &eqs {
        let product = Term::apps(eq.clone(), [t.clone(), b.clone(), a.clone()]);
        if scope.iter().any(|(_, ty)| ty.def_eq(&product)) {
            continue;
        }
        let closes = product.def_eq(goal);
        let mut uses = object_uses(&scope, [&product]);
        if !uses.contains(n) {
            uses.push(n.clone());
            uses.sort();
        }
        push(out, seen, Action::forward("eq_symm", product, closes, uses));
    }

    // rewrite: for each equality and each prop object, rewrite one
    // occurrence of the left-hand side.
    let props: Vec<(String, Term)> = scope
        .iter()
        .filter(|(_, t)| matches!(infer_type(t, ctx).map(|s| s.normalize()), Ok(s) if s == Term::prop()))
        .cloned()
        .collect();
    for (en, _, a, b) in &eqs {
        for (pn, p) in &props {
            let occurrences = p.count_occurrences(a);
            for idx in 0..occurrences {
                if let Some(p2) = p.replace_occurrence(a, b, idx) {
                    if p2.def_eq(p) {
                        continue;
                    }
                    if infer_type(&p2, ctx).map(|s| s.normalize()) != Ok(Term::prop()) {
                        continue;
                    }
                    if scope.iter().any(|(_, t)| t.def_eq(&p2)) {
                        continue;
                    }
                    let closes = p2.def_eq(goal);
                    let mut uses = object_uses(&scope, [&p2]);
                    for extra in [en, pn] {
                        if !uses.contains(extra) {
                            uses.push(extra.clone());
                        }
                    }
                    uses.sort();
                    push(out, seen, Action::forward("rewrite", p2, closes, uses));
                    if out.len() > ACTION_CAP {
                        return;
                    }
                }
            }
        }
        // Rewriting inside the goal replaces it with the rewritten subgoal.
        let occurrences = goal.count_occurrences(a);
        for idx in 0..occurrences {
            if let Some(g2) = goal.replace_occurrence(a, b, idx) {
                if g2.def_eq(goal) {
                    continue;
                }
                if infer_type(&g2, ctx).map(|s| s.normalize()) != Ok(Term::prop()) {
                    continue;
                }
                push(out, seen, Action::backward("rewrite", vec![g2]));
                if out.len() > ACTION_CAP {
                    return;
                }
            }
        }
    }
}

/// Backward chaining: unify progressively longer suffixes of the
/// declaration's (flattened) type against the goal; consumed leading
/// parameters are resolved per the argument hints (named default to infer,
/// anonymous to subgoal).
#[allow(clippy::too_many_arguments)]
fn backward_actions(
    rule: &str,
    ty: &Term,
    hints: Option<&[ArgHint]>,
    scope: &[(String, Term)],
    goal: &Term,
    ctx: &TypingContext,
    out: &mut Vec<Action>,
    seen: &mut BTreeSet<String>,
    push: &mut impl FnMut(&mut Vec<Action>, &mut BTreeSet<String>, Action),
) {
    let (params, output) = open_declaration(ty);
    for lead in (0..=params.len()).rev() {
        // Conclusion = params[lead..] -> output; trailing parameters act
        // as bound variables again, not unification holes.
        let conclusion = if lead == params.len() {
            output.clone()
        } else {
            Term::arrow(params[lead..].to_vec(), output.clone())
        };
        let conclusion = rebind_trailing(&conclusion, &params[lead..]);
        let mut sigma = Substitution::new();
        if unify_into(&conclusion, goal, &mut sigma).is_err() {
            continue;
        }
        resolve_leading(rule, &params[..lead], hints, sigma, scope, ctx, out, seen, push);
    }
}

/// The trailing parameters' own metavariables must act as bound variables
/// inside the conclusion, not as unification holes: replace each by a
/// fresh bound name.
fn rebind_trailing(conclusion: &Term, trailing: &[Param]) -> Term {
    let mut c = conclusion.clone();
    for (i, p) in trailing.iter().enumerate() {
        if let Some(n) = &p.name {
            let fresh = format!("#b{}", i);
            c = replace_meta_by_var(&c, n, &fresh);
        }
    }
    c
}

fn replace_meta_by_var(t: &Term, meta: &str, var: &str) -> Term {
    match t.kind() {
        TermKind::Meta(m) if m == meta => Term::var(var),
        TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => t.clone(),
        TermKind::App(f, a) => {
            Term::app(replace_meta_by_var(f, meta, var), replace_meta_by_var(a, meta, var))
        }
        TermKind::Lambda(x, ty, b) => Term::lambda(
            x.clone(),
            replace_meta_by_var(ty, meta, var),
            replace_meta_by_var(b, meta, var),
        ),
        TermKind::Arrow(ps, o) => Term::arrow(
            ps.iter()
                .map(|p| {
                    let name = match &p.name {
                        Some(n) if n == meta => Some(var.to_string()),
                        other => other.clone(),
                    };
                    Param { name, ty: replace_meta_by_var(&p.ty, meta, var) }
                })
                .collect(),
            replace_meta_by_var(o, meta, var),
        ),
    }
}

#[allow(clippy::too_many_arguments)]
fn resolve_leading(
    rule: &str,
    leading: &[Param],
    hints: Option<&[ArgHint]>,
    sigma: Substitution,
    scope: &[(String, Term)],
    ctx: &TypingContext,
    out: &mut Vec<Action>,
    seen: &mut BTreeSet<String>,
    push: &mut impl FnMut(&mut Vec<Action>, &mut BTreeSet<String>, Action),
) {
    let hint_of = |i: usize, p: &Param| -> ArgHint {
        match hints.and_then(|h| h.get(i)) {
            Some(h) => *h,
            None => {
                if p.name.is_some() {
                    ArgHint::Infer
                } else {
                    ArgHint::Subgoal
                }
            }
        }
    };
    // Object-match pass for infer-hinted evidence parameters that the goal
    // did not determine.
    let mut sigmas = vec![sigma];
    for (i, p) in leading.iter().enumerate() {
        if hint_of(i, p) != ArgHint::Infer {
            continue;
        }
        if let Some(n) = &p.name {
            // Named parameters are values fixed by unification (directly or
            // through other premises); nothing to match here yet.
            let _ = n;
            continue;
        }
        let mut next = Vec::new();
        for s in &sigmas {
            let want = apply_subst(&p.ty, s);
            if !want.contains_meta() {
                next.push(s.clone());
                continue;
            }
            for (_, oty) in scope {
                let mut s2 = s.clone();
                if unify_into(&want, oty, &mut s2).is_ok() {
                    next.push(s2);
                }
            }
        }
        sigmas = next;
        if sigmas.len() > 64 {
            sigmas.truncate(64);
        }
    }
    'sig: for s in sigmas {
        let mut subgoals = Vec::new();
        for (i, p) in leading.iter().enumerate() {
            let want = apply_subst(&p.ty, &s);
            match hint_of(i, p) {
                ArgHint::Infer => {
                    if let Some(n) = &p.name {
                        match s.get(n) {
                            Some(v) => {
                                // Validate the solution against the declared
                                // parameter type.
                                match infer_type(v, ctx) {
                                    Ok(t) if t.def_eq(&want) => {}
                                    _ => continue 'sig,
                                }
                            }
                            None => continue 'sig,
                        }
                    } else if want.contains_meta() {
                        continue 'sig;
                    } else if !scope.iter().any(|(_, t)| t.def_eq(&want)) {
                        continue 'sig;
                    }
                }
                ArgHint::Subgoal => {
                    if want.contains_meta() {
                        continue 'sig;
                    }
                    if infer_type(&want, ctx).map(|t| t.normalize().is_sort()) != Ok(true) {
                        continue 'sig;
                    }
                    subgoals.push(want);
                }
            }
        }
        push(out, seen, Action::backward(rule, subgoals));
    }
}

/// Applies an enumerated action, producing the successor state.
pub fn apply_action<'t>(state: &ProofState<'t>, action: &Action) -> ProofState<'t> {
    let mut next = state.clone();
    next.history.push(action.clone());
    match &action.kind {
        ActionKind::Intro { name, param, rest } => {
            let rest = match &param.name {
                Some(b) => rest.substitute(b, &Term::var(name.clone())),
                None => rest.clone(),
            };
            let idx = next.objects.len();
            next.objects.push((name.clone(), param.ty.clone()));
            next.intro_count += 1;
            let g = &mut next.goals[0];
            g.scope.push(idx);
            g.statement = rest;
        }
        ActionKind::Forward { product, closes, .. } => {
            if *closes {
                next.goals.remove(0);
            } else {
                let name = next.next_derived_name();
                next.derived_count += 1;
                let idx = next.objects.len();
                next.objects.push((name, product.clone()));
                next.goals[0].scope.push(idx);
            }
        }
        ActionKind::Backward { subgoals, .. } => {
            let cur = next.goals.remove(0);
            for (i, sg) in subgoals.iter().enumerate() {
                next.goals.insert(i, Goal { statement: sg.clone(), scope: cur.scope.clone() });
            }
        }
    }
    next
}

/// A checked proof script in the Appendix-style surface syntax.
#[derive(Debug, Clone, PartialEq)]
pub struct ProofScript {
    pub name: String,
    pub statement: Term,
    pub steps: Vec<RawStep>,
}

impl ProofScript {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("theorem {} : {} {{\n", self.name, self.statement));
        render_steps(&self.steps, 1, &mut out);
        out.push_str("}\n");
        out
    }
}

fn render_steps(steps: &[RawStep], indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    for s in steps {
        match s {
            RawStep::Intro { name, ty } => out.push_str(&format!("{}intro {} : {}.\n", pad, name, ty)),
            RawStep::Apply { name } => out.push_str(&format!("{}apply {}.\n", pad, name)),
            RawStep::Show { prop, by } => out.push_str(&format!("{}show {} by {}.\n", pad, prop, by)),
            RawStep::Goal { statement, steps } => {
                out.push_str(&format!("{}goal {} {{\n", pad, statement));
                render_steps(steps, indent + 1, out);
                out.push_str(&format!("{}}}\n", pad));
            }
        }
    }
}

/// Replays a script from the initial state; Ok(state) is terminal-success.
pub fn replay<'t>(theory: &'t Theory, script: &ProofScript) -> Result<ProofState<'t>> {
    replay_trace(theory, script).map(|(end, _)| end)
}

/// Replays a script and returns the terminal state together with the
/// (pre-state, action) pair for every step taken, in order. The recorded
/// action for an `intro` step is the canonical enumerated one (default
/// binder name), so each recorded action appears verbatim in
/// `enumerate_actions` of its pre-state; the custom script name is still
/// bound in the advanced state.
pub fn replay_trace<'t>(
    theory: &'t Theory,
    script: &ProofScript,
) -> Result<(ProofState<'t>, Vec<(ProofState<'t>, Action)>)> {
    let state = initial_state(theory, &script.statement)?;
    let (end, trace) = run_steps(state, &script.steps, Vec::new())?;
    if end.is_success() {
        Ok((end, trace))
    } else {
        Err(EnvError::Replay {
            step: "end of script".into(),
            cause: format!("{} goal(s) remain open", end.goals.len()),
        })
    }
}

type Trace<'t> = Vec<(ProofState<'t>, Action)>;

fn run_steps<'t>(
    state: ProofState<'t>,
    steps: &[RawStep],
    mut trace: Trace<'t>,
) -> Result<(ProofState<'t>, Trace<'t>)> {
    let Some((step, rest)) = steps.split_first() else {
        return Ok((state, trace));
    };
    let fail = |cause: String| EnvError::Replay { step: describe_step(step), cause };
    match step {
        RawStep::Intro { name, ty } => {
            let actions = enumerate_actions(&state);
            let intro = actions
                .iter()
                .find(|a| a.is_intro())
                .ok_or_else(|| fail("goal is not a function type".into()))?;
            let ActionKind::Intro { param, rest: rest_t, .. } = &intro.kind else { unreachable!() };
            let ctx = state.context();
            let want = elaborate(ty, &ctx).map_err(|e| fail(e.to_string()))?;
            if !want.def_eq(&param.ty) {
                return Err(fail(format!("intro type {} does not match goal parameter {}", want, param.ty)));
            }
            if state.objects.iter().any(|(n, _)| n == name) || state.theory.contains(name) {
                return Err(fail(format!("name {} already in scope", name)));
            }
            let renamed = Action::intro(name.clone(), param.clone(), rest_t.clone());
            trace.push((state.clone(), intro.clone()));
            run_steps(apply_action(&state, &renamed), rest, trace)
        }
        RawStep::Apply { name } => {
            let actions = enumerate_actions(&state);
            let candidates: Vec<&Action> = actions
                .iter()
                .filter(|a| matches!(&a.kind, ActionKind::Backward { .. }) && a.text == format!("apply {}.", name))
                .collect();
            if candidates.is_empty() {
                return Err(fail("no matching backward action".into()));
            }
            let mut last_err = None;
            for cand in candidates {
                let mut t = trace.clone();
                t.push((state.clone(), cand.clone()));
                match run_steps(apply_action(&state, cand), rest, t) {
                    Ok(s) => return Ok(s),
                    Err(e) => last_err = Some(e),
                }
            }
            Err(last_err.unwrap())
        }
        RawStep::Show { prop, by } => {
            let ctx = state.context();
            let want = elaborate(prop, &ctx).map_err(|e| fail(e.to_string()))?;
            let actions = enumerate_actions(&state);
            let found = actions.iter().find(|a| match &a.kind {
                ActionKind::Forward { rule, product, .. } => rule == by && product.def_eq(&want),
                _ => false,
            });
            match found {
                Some(a) => {
                    trace.push((state.clone(), a.clone()));
                    run_steps(apply_action(&state, a), rest, trace)
                }
                None => Err(fail(format!("no forward action derives {} by {}", want, by))),
            }
        }
        RawStep::Goal { statement, steps: inner } => {
            let ctx = state.context();
            let want = elaborate(statement, &ctx).map_err(|e| fail(e.to_string()))?;
            let cur = state
                .current_goal()
                .ok_or_else(|| fail("no open goal".into()))?
                .statement
                .clone();
            if !want.def_eq(&cur) {
                return Err(fail(format!("goal block {} does not match current goal {}", want, cur)));
            }
            let before = state.goals.len();
            let (mid, trace) = run_steps(state, inner, trace)?;
            if mid.goals.len() != before - 1 {
                return Err(fail("goal block did not discharge its goal".into()));
            }
            run_steps(mid, rest, trace)
        }
    }
}

fn describe_step(step: &RawStep) -> String {
    match step {
        RawStep::Intro { name, ty } => format!("intro {} : {}.", name, ty),
        RawStep::Apply { name } => format!("apply {}.", name),
        RawStep::Show { prop, by } => format!("show {} by {}.", prop, by),
        RawStep::Goal { statement, .. } => format!("goal {} {{ .. }}", statement),
    }
}

/// Parses and replays a script text; true iff it reaches terminal success.
pub fn check_script(theory: &Theory, script: &ProofScript) -> bool {
    replay(theory, script).is_ok()
}

/// Parses script text into a ProofScript (no replay).
pub fn parse_proof_script(text: &str) -> Result<ProofScript> {
    let raw: RawScript = parse_script(text)?;
    Ok(ProofScript { name: raw.name, statement: raw.statement, steps: raw.steps })
}

/// Converts a successful action trace into the script surface syntax,
/// inserting `goal` blocks where a backward step opened several subgoals.
pub fn trace_to_steps(initial: &ProofState, actions: &[Action]) -> Vec<RawStep> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(initial.clone());
    for a in actions {
        let next = apply_action(states.last().unwrap(), a);
        states.push(next);
    }
    let mut i = 0usize;
    build_steps(&states, actions, &mut i, states[0].goals.len().saturating_sub(1))
}

/// Emits steps until the open-goal count drops to `stop_at`.
fn build_steps(
    states: &[ProofState],
    actions: &[Action],
    i: &mut usize,
    stop_at: usize,
) -> Vec<RawStep> {
    let mut out = Vec::new();
    while *i < actions.len() && states[*i].goals.len() > stop_at {
        let a = &actions[*i];
        let pre = &states[*i];
        *i += 1;
        match &a.kind {
            ActionKind::Intro { name, param, .. } => {
                out.push(RawStep::Intro { name: name.clone(), ty: param.ty.clone() });
            }
            ActionKind::Forward { rule, product, .. } => {
                out.push(RawStep::Show { prop: product.clone(), by: rule.clone() });
            }
            ActionKind::Backward { rule, subgoals } => {
                out.push(RawStep::Apply { name: rule.clone() });
                if subgoals.len() >= 2 {
                    let base = pre.goals.len() - 1;
                    for k in 0..subgoals.len() {
                        let remaining_after = base + subgoals.len() - (k + 1);
                        let stmt = states[*i].goals[0].statement.clone();
                        let inner = build_steps(states, actions, i, remaining_after);
                        out.push(RawStep::Goal { statement: stmt, steps: inner });
                    }
                }
            }
        }
    }
    out
}
