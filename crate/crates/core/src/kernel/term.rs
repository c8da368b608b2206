use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Sorts of the calculus: `type` and `prop`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    Type,
    Prop,
}

impl Sort {
    pub fn name(self) -> &'static str {
        match self {
            Sort::Type => "type",
            Sort::Prop => "prop",
        }
    }
}

/// One parameter of a function type: optionally named (dependent) plus its type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Param {
    pub name: Option<String>,
    pub ty: Term,
}

impl Param {
    pub fn anon(ty: Term) -> Param {
        Param { name: None, ty }
    }

    pub fn named(name: impl Into<String>, ty: Term) -> Param {
        Param { name: Some(name.into()), ty }
    }
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    Sort(Sort),
    /// A reference to a declaration, local object, or bound variable.
    Var(String),
    /// A unification metavariable (`'n`). Only present in axiom schemas,
    /// directive patterns, and transient states inside unification.
    Meta(String),
    /// Binary application; n-ary applications are left-nested.
    App(Term, Term),
    Lambda(String, Term, Term),
    /// Function type with >= 1 parameters. Nested arrows in output position
    /// are flattened on construction, so `[a -> [b -> c]]` and
    /// `[a -> b -> c]` are the same term.
    Arrow(Vec<Param>, Term),
}

/// An immutable, cheaply clonable term.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Term(Arc<TermKind>);

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl Term {
    pub fn kind(&self) -> &TermKind {
        &self.0
    }

    pub fn sort(s: Sort) -> Term {
        Term(Arc::new(TermKind::Sort(s)))
    }

    pub fn ty() -> Term {
        Term::sort(Sort::Type)
    }

    pub fn prop() -> Term {
        Term::sort(Sort::Prop)
    }

    pub fn var(name: impl Into<String>) -> Term {
        Term(Arc::new(TermKind::Var(name.into())))
    }

    pub fn meta(name: impl Into<String>) -> Term {
        Term(Arc::new(TermKind::Meta(name.into())))
    }

    pub fn app(f: Term, a: Term) -> Term {
        Term(Arc::new(TermKind::App(f, a)))
    }

    pub fn apps(head: Term, args: impl IntoIterator<Item = Term>) -> Term {
        args.into_iter().fold(head, Term::app)
    }

    pub fn lambda(param: impl Into<String>, ty: Term, body: Term) -> Term {
        Term(Arc::new(TermKind::Lambda(param.into(), ty, body)))
    }

    /// Builds a function type, flattening an Arrow in output position.
    pub fn arrow(mut params: Vec<Param>, output: Term) -> Term {
        assert!(!params.is_empty(), "Arrow needs at least one parameter");
        if let TermKind::Arrow(inner, out) = output.kind() {
            params.extend(inner.iter().cloned());
            return Term(Arc::new(TermKind::Arrow(params, out.clone())));
        }
        Term(Arc::new(TermKind::Arrow(params, output)))
    }

    pub fn is_sort(&self) -> bool {
        matches!(self.kind(), TermKind::Sort(_))
    }

    pub fn is_arrow(&self) -> bool {
        matches!(self.kind(), TermKind::Arrow(_, _))
    }

    /// Head and arguments of an application spine; (f a b) -> (f, [a, b]).
    pub fn spine(&self) -> (Term, Vec<Term>) {
        let mut args = Vec::new();
        let mut cur = self.clone();
        while let TermKind::App(f, a) = cur.kind() {
            args.push(a.clone());
            cur = f.clone();
        }
        args.reverse();
        (cur, args)
    }

    pub fn contains_meta(&self) -> bool {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) => false,
            TermKind::Meta(_) => true,
            TermKind::App(f, a) => f.contains_meta() || a.contains_meta(),
            TermKind::Lambda(_, t, b) => t.contains_meta() || b.contains_meta(),
            TermKind::Arrow(ps, out) => {
                ps.iter().any(|p| p.ty.contains_meta()) || out.contains_meta()
            }
        }
    }

    pub fn metas(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_metas(&mut out);
        out
    }

    fn collect_metas(&self, out: &mut BTreeSet<String>) {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) => {}
            TermKind::Meta(m) => {
                out.insert(m.clone());
            }
            TermKind::App(f, a) => {
                f.collect_metas(out);
                a.collect_metas(out);
            }
            TermKind::Lambda(_, t, b) => {
                t.collect_metas(out);
                b.collect_metas(out);
            }
            TermKind::Arrow(ps, o) => {
                for p in ps {
                    p.ty.collect_metas(out);
                }
                o.collect_metas(out);
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Meta(_) => {}
            TermKind::Var(v) => {
                if !bound.iter().any(|b| b == v) {
                    out.insert(v.clone());
                }
            }
            TermKind::App(f, a) => {
                f.collect_free(bound, out);
                a.collect_free(bound, out);
            }
            TermKind::Lambda(x, t, b) => {
                t.collect_free(bound, out);
                bound.push(x.clone());
                b.collect_free(bound, out);
                bound.pop();
            }
            TermKind::Arrow(ps, o) => {
                let mut pushed = 0;
                for p in ps {
                    p.ty.collect_free(bound, out);
                    if let Some(n) = &p.name {
                        bound.push(n.clone());
                        pushed += 1;
                    }
                }
                o.collect_free(bound, out);
                for _ in 0..pushed {
                    bound.pop();
                }
            }
        }
    }

    /// Capture-avoiding substitution of free occurrences of `name` by `value`.
    pub fn substitute(&self, name: &str, value: &Term) -> Term {
        if !self.free_vars().contains(name) {
            return self.clone();
        }
        self.subst_inner(name, value)
    }

    fn subst_inner(&self, name: &str, value: &Term) -> Term {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Meta(_) => self.clone(),
            TermKind::Var(v) => {
                if v == name {
                    value.clone()
                } else {
                    self.clone()
                }
            }
            TermKind::App(f, a) => {
                Term::app(f.subst_inner(name, value), a.subst_inner(name, value))
            }
            TermKind::Lambda(x, t, b) => {
                let t2 = t.subst_inner(name, value);
                if x == name {
                    return Term::lambda(x.clone(), t2, b.clone());
                }
                if value.free_vars().contains(x) {
                    let name_t = Term::var(name);
                    let fresh = fresh_name(x, &[b, value, &name_t]);
                    let b2 = b.rename_free(x, &fresh).subst_inner(name, value);
                    Term::lambda(fresh, t2, b2)
                } else {
                    Term::lambda(x.clone(), t2, b.subst_inner(name, value))
                }
            }
            TermKind::Arrow(ps, out) => {
                // Walk parameters left to right; a binder matching `name`
                // shadows it for all later positions.
                let mut new_params: Vec<Param> = Vec::with_capacity(ps.len());
                let mut rest: Vec<Param> = ps.clone();
                let mut output = out.clone();
                let mut shadowed = false;
                while !rest.is_empty() {
                    let p = rest.remove(0);
                    let ty = if shadowed { p.ty.clone() } else { p.ty.subst_inner(name, value) };
                    let mut pname = p.name.clone();
                    if let Some(n) = &p.name {
                        if n == name {
                            shadowed = true;
                        } else if !shadowed && value.free_vars().contains(n) {
                            // Freshen this binder to avoid capturing a free
                            // variable of `value`.
                            let name_t = Term::var(name);
                            let mut scope_terms: Vec<&Term> = vec![value, &output, &name_t];
                            let tys: Vec<Term> = rest.iter().map(|q| q.ty.clone()).collect();
                            for t in &tys {
                                scope_terms.push(t);
                            }
                            let fresh = fresh_name(n, &scope_terms);
                            for q in rest.iter_mut() {
                                q.ty = q.ty.rename_free(n, &fresh);
                            }
                            output = output.rename_free(n, &fresh);
                            pname = Some(fresh);
                        }
                    }
                    new_params.push(Param { name: pname, ty });
                }
                let out2 = if shadowed { output } else { output.subst_inner(name, value) };
                Term::arrow(new_params, out2)
            }
        }
    }

    /// Renames free occurrences of a variable (used for binder freshening;
    /// the new name is assumed fresh, so no capture can occur).
    pub fn rename_free(&self, from: &str, to: &str) -> Term {
        self.substitute(from, &Term::var(to))
    }

    /// Full beta normalization.
    pub fn normalize(&self) -> Term {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => self.clone(),
            TermKind::App(f, a) => {
                let f = f.normalize();
                let a = a.normalize();
                if let TermKind::Lambda(x, _, body) = f.kind() {
                    body.substitute(x, &a).normalize()
                } else {
                    Term::app(f, a)
                }
            }
            TermKind::Lambda(x, t, b) => Term::lambda(x.clone(), t.normalize(), b.normalize()),
            TermKind::Arrow(ps, out) => {
                let params = ps
                    .iter()
                    .map(|p| Param { name: p.name.clone(), ty: p.ty.normalize() })
                    .collect();
                Term::arrow(params, out.normalize())
            }
        }
    }

    /// Canonical form: beta-normal, binders renamed positionally, unused
    /// Arrow binders dropped. Structural equality of canonical forms is
    /// alpha/beta equality of the originals.
    pub fn canonical(&self) -> Term {
        self.normalize().canon_inner(0)
    }

    fn canon_inner(&self, depth: usize) -> Term {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => self.clone(),
            TermKind::App(f, a) => Term::app(f.canon_inner(depth), a.canon_inner(depth)),
            TermKind::Lambda(x, t, b) => {
                let cname = format!("#{}", depth);
                let b2 = b.rename_free(x, &cname);
                Term::lambda(cname, t.canon_inner(depth), b2.canon_inner(depth + 1))
            }
            TermKind::Arrow(ps, out) => {
                let mut rest: Vec<Param> = ps.clone();
                let mut output = out.clone();
                let mut params = Vec::with_capacity(ps.len());
                let mut d = depth;
                while !rest.is_empty() {
                    let p = rest.remove(0);
                    let ty = p.ty.canon_inner(d);
                    match &p.name {
                        Some(n) => {
                            let used = rest.iter().any(|q| q.ty.free_vars().contains(n))
                                || output.free_vars().contains(n);
                            if used {
                                let cname = format!("#{}", d);
                                for q in rest.iter_mut() {
                                    q.ty = q.ty.rename_free(n, &cname);
                                }
                                output = output.rename_free(n, &cname);
                                params.push(Param::named(cname, ty));
                                d += 1;
                            } else {
                                params.push(Param::anon(ty));
                            }
                        }
                        None => params.push(Param::anon(ty)),
                    }
                }
                Term::arrow(params, output.canon_inner(d))
            }
        }
    }

    /// Alpha equivalence (no beta).
    pub fn alpha_eq(&self, other: &Term) -> bool {
        self.canon_no_beta() == other.canon_no_beta()
    }

    fn canon_no_beta(&self) -> Term {
        self.canon_inner(0)
    }

    /// Alpha-beta (definitional) equality.
    pub fn def_eq(&self, other: &Term) -> bool {
        self == other || self.canonical() == other.canonical()
    }

    /// All distinct subterms in document order: the term itself, then spine
    /// head and arguments, Arrow parameter types and output, Lambda type and
    /// body. Partial application spines are not listed separately.
    pub fn subterms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        self.collect_subterms(&mut out);
        out
    }

    fn collect_subterms(&self, out: &mut Vec<Term>) {
        if !out.contains(self) {
            out.push(self.clone());
        }
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => {}
            TermKind::App(_, _) => {
                let (head, args) = self.spine();
                head.collect_subterms(out);
                for a in &args {
                    a.collect_subterms(out);
                }
            }
            TermKind::Lambda(_, t, b) => {
                t.collect_subterms(out);
                b.collect_subterms(out);
            }
            TermKind::Arrow(ps, o) => {
                for p in ps {
                    p.ty.collect_subterms(out);
                }
                o.collect_subterms(out);
            }
        }
    }

    /// Counts structural occurrences of `target` (a closed value term).
    pub fn count_occurrences(&self, target: &Term) -> usize {
        let mut n = 0;
        self.visit_occurrences(target, &mut |_| n += 1);
        n
    }

    fn visit_occurrences(&self, target: &Term, f: &mut impl FnMut(&Term)) {
        if self == target {
            f(self);
            return;
        }
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => {}
            TermKind::App(g, a) => {
                g.visit_occurrences(target, f);
                a.visit_occurrences(target, f);
            }
            TermKind::Lambda(_, t, b) => {
                t.visit_occurrences(target, f);
                b.visit_occurrences(target, f);
            }
            TermKind::Arrow(ps, o) => {
                for p in ps {
                    p.ty.visit_occurrences(target, f);
                }
                o.visit_occurrences(target, f);
            }
        }
    }

    /// Replaces the `index`-th structural occurrence (document order) of
    /// `target` with `replacement`. Both are closed with respect to the
    /// ambient scope; binders shadowing a free variable of either are
    /// freshened before descending. Returns None if there is no such
    /// occurrence.
    pub fn replace_occurrence(&self, target: &Term, replacement: &Term, index: usize) -> Option<Term> {
        let mut counter = 0usize;
        self.replace_inner(target, replacement, index, &mut counter)
    }

    fn replace_inner(
        &self,
        target: &Term,
        replacement: &Term,
        index: usize,
        counter: &mut usize,
    ) -> Option<Term> {
        if self == target {
            let i = *counter;
            *counter += 1;
            return if i == index { Some(replacement.clone()) } else { None };
        }
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => None,
            TermKind::App(g, a) => {
                if let Some(g2) = g.replace_inner(target, replacement, index, counter) {
                    return Some(Term::app(g2, a.clone()));
                }
                a.replace_inner(target, replacement, index, counter)
                    .map(|a2| Term::app(g.clone(), a2))
            }
            TermKind::Lambda(x, t, b) => {
                if let Some(t2) = t.replace_inner(target, replacement, index, counter) {
                    return Some(Term::lambda(x.clone(), t2, b.clone()));
                }
                let relevant = target.free_vars().contains(x) || replacement.free_vars().contains(x);
                if relevant {
                    // The binder shadows a variable of the equation; no
                    // occurrences of the (scope-closed) target exist below.
                    return None;
                }
                b.replace_inner(target, replacement, index, counter)
                    .map(|b2| Term::lambda(x.clone(), t.clone(), b2))
            }
            TermKind::Arrow(ps, o) => {
                for (i, p) in ps.iter().enumerate() {
                    if let Some(ty2) = p.ty.replace_inner(target, replacement, index, counter) {
                        let mut ps2 = ps.clone();
                        ps2[i] = Param { name: p.name.clone(), ty: ty2 };
                        return Some(Term::arrow(ps2, o.clone()));
                    }
                    if let Some(n) = &p.name {
                        if target.free_vars().contains(n) || replacement.free_vars().contains(n) {
                            return None;
                        }
                    }
                }
                o.replace_inner(target, replacement, index, counter)
                    .map(|o2| Term::arrow(ps.clone(), o2))
            }
        }
    }

    /// AST depth with binary applications and right-folded Arrows.
    pub fn depth(&self) -> usize {
        match self.kind() {
            TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => 1,
            TermKind::App(f, a) => 1 + f.depth().max(a.depth()),
            TermKind::Lambda(_, t, b) => 1 + t.depth().max(b.depth()),
            TermKind::Arrow(ps, out) => {
                let mut d = out.depth();
                for p in ps.iter().rev() {
                    d = 1 + p.ty.depth().max(d);
                }
                d
            }
        }
    }
}

/// Picks a variant of `base` not free in any of `avoid`.
pub fn fresh_name(base: &str, avoid: &[&Term]) -> String {
    let stem = base.split('!').next().unwrap_or(base);
    let mut i = 1usize;
    loop {
        let cand = format!("{}!{}", stem, i);
        if !avoid.iter().any(|t| t.free_vars().contains(&cand)) {
            return cand;
        }
        i += 1;
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_atom(f)
    }
}

/// Replaces each named parameter of a declaration type by a metavariable of
/// the same name, returning (params, output). Used to instantiate an axiom
/// schema before unifying it against concrete terms.
pub fn open_declaration(ty: &Term) -> (Vec<Param>, Term) {
    match ty.normalize().kind() {
        TermKind::Arrow(ps, out) => {
            let mut params = ps.clone();
            let mut output = out.clone();
            for i in 0..params.len() {
                if let Some(n) = params[i].name.clone() {
                    let meta = Term::meta(n.clone());
                    for p in params.iter_mut().skip(i + 1) {
                        p.ty = p.ty.substitute(&n, &meta);
                    }
                    output = output.substitute(&n, &meta);
                }
            }
            (params, output)
        }
        _ => (Vec::new(), ty.normalize()),
    }
}

impl Term {
    fn fmt_atom(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            TermKind::Sort(s) => write!(f, "{}", s.name()),
            TermKind::Var(v) => write!(f, "{}", v),
            TermKind::Meta(m) => write!(f, "{}", m),
            TermKind::App(_, _) => {
                let (head, args) = self.spine();
                write!(f, "(")?;
                head.fmt_atom(f)?;
                for a in args {
                    write!(f, " ")?;
                    a.fmt_atom(f)?;
                }
                write!(f, ")")
            }
            TermKind::Lambda(x, t, b) => {
                write!(f, "(lambda {} : ", x)?;
                t.fmt_atom(f)?;
                write!(f, ", ")?;
                b.fmt_atom(f)?;
                write!(f, ")")
            }
            TermKind::Arrow(ps, out) => {
                write!(f, "[")?;
                for p in ps {
                    match &p.name {
                        Some(n) => {
                            write!(f, "({} : ", n)?;
                            p.ty.fmt_atom(f)?;
                            write!(f, ")")?;
                        }
                        None => p.ty.fmt_atom(f)?,
                    }
                    write!(f, " -> ")?;
                }
                out.fmt_atom(f)?;
                write!(f, "]")
            }
        }
    }
}
