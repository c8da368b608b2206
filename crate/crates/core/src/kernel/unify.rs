use std::collections::BTreeMap;

use thiserror::Error;

use super::term::{Param, Term, TermKind};

pub type Substitution = BTreeMap<String, Term>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnifyError {
    #[error("structural mismatch: {0} vs {1}")]
    Mismatch(String, String),
    #[error("occurs check failed for {0}")]
    OccursCheck(String),
    #[error("solution for {0} escapes its binder scope")]
    ScopeEscape(String),
}

/// First-order syntactic unification of a pattern (which may contain
/// metavariables) against a metavariable-free target, with one higher-order
/// extension: a metavariable applied to distinct bound variables is solved
/// by lambda abstraction (the Miller pattern fragment), which is what lets
/// `nat_ind` infer its motive from the goal.
pub fn unify(pattern: &Term, target: &Term) -> Result<Substitution, UnifyError> {
    let mut sigma = Substitution::new();
    unify_into(pattern, target, &mut sigma)?;
    Ok(sigma)
}

/// Same, accumulating into an existing substitution.
pub fn unify_into(pattern: &Term, target: &Term, sigma: &mut Substitution) -> Result<(), UnifyError> {
    let mut st = State { fresh: 0, bound: Vec::new() };
    st.unify(&pattern.normalize(), &target.normalize(), sigma)
}

/// Unification entry used by elaboration: both sides are types.
pub fn unify_types(pattern: &Term, target: &Term, sigma: &mut Substitution) -> Result<(), UnifyError> {
    unify_into(pattern, target, sigma)
}

/// Replaces metavariables by their solutions and beta-normalizes.
pub fn apply_subst(term: &Term, sigma: &Substitution) -> Term {
    if sigma.is_empty() {
        return term.clone();
    }
    replace_metas(term, sigma).normalize()
}

fn replace_metas(term: &Term, sigma: &Substitution) -> Term {
    match term.kind() {
        TermKind::Sort(_) | TermKind::Var(_) => term.clone(),
        TermKind::Meta(m) => sigma.get(m).cloned().unwrap_or_else(|| term.clone()),
        TermKind::App(f, a) => Term::app(replace_metas(f, sigma), replace_metas(a, sigma)),
        TermKind::Lambda(x, t, b) => {
            Term::lambda(x.clone(), replace_metas(t, sigma), replace_metas(b, sigma))
        }
        TermKind::Arrow(ps, out) => Term::arrow(
            ps.iter()
                .map(|p| Param { name: p.name.clone(), ty: replace_metas(&p.ty, sigma) })
                .collect(),
            replace_metas(out, sigma),
        ),
    }
}

struct State {
    fresh: usize,
    /// Unification-local binders, renamed to common fresh names on both
    /// sides: (name, type from the target side).
    bound: Vec<(String, Term)>,
}

impl State {
    fn fresh_binder(&mut self) -> String {
        let n = format!("#u{}", self.fresh);
        self.fresh += 1;
        n
    }

    fn is_bound(&self, name: &str) -> bool {
        self.bound.iter().any(|(n, _)| n == name)
    }

    fn bound_type(&self, name: &str) -> Option<&Term> {
        self.bound.iter().rev().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn escapes(&self, term: &Term) -> bool {
        let fv = term.free_vars();
        self.bound.iter().any(|(n, _)| fv.contains(n))
    }

    fn unify(&mut self, p: &Term, t: &Term, sigma: &mut Substitution) -> Result<(), UnifyError> {
        if let TermKind::Meta(m) = p.kind() {
            return self.solve_meta(m, t, sigma);
        }
        // Miller case: (?m v1 ... vk) with distinct bound variables vi.
        if let TermKind::App(_, _) = p.kind() {
            let (head, args) = p.spine();
            if let TermKind::Meta(m) = head.kind() {
                if let Some(vars) = self.miller_args(&args) {
                    return self.solve_miller(m, &vars, t, sigma);
                }
                if let Some(sol) = sigma.get(m) {
                    let applied = Term::apps(sol.clone(), args).normalize();
                    if !applied.contains_meta() {
                        return if applied.def_eq(t) {
                            Ok(())
                        } else {
                            Err(UnifyError::Mismatch(applied.to_string(), t.to_string()))
                        };
                    }
                    return self.unify(&applied, t, sigma);
                }
            }
        }
        match (p.kind(), t.kind()) {
            (TermKind::Sort(a), TermKind::Sort(b)) if a == b => Ok(()),
            (TermKind::Var(a), TermKind::Var(b)) if a == b => Ok(()),
            (TermKind::App(pf, pa), TermKind::App(tf, ta)) => {
                self.unify(pf, tf, sigma)?;
                let pa2 = apply_subst(pa, sigma);
                self.unify(&pa2, ta, sigma)
            }
            (TermKind::Lambda(px, pt, pb), TermKind::Lambda(tx, tt, tb)) => {
                self.unify(pt, tt, sigma)?;
                let c = self.fresh_binder();
                let pb2 = pb.rename_free(px, &c);
                let tb2 = tb.rename_free(tx, &c);
                self.bound.push((c, tt.clone()));
                let r = self.unify(&apply_subst(&pb2, sigma), &tb2, sigma);
                self.bound.pop();
                r
            }
            (TermKind::Arrow(pps, pout), TermKind::Arrow(tps, tout)) => {
                let (p1, prest) = split_arrow(pps, pout);
                let (t1, trest) = split_arrow(tps, tout);
                self.unify(&p1.ty, &t1.ty, sigma)?;
                let c = self.fresh_binder();
                let prest = match &p1.name {
                    Some(n) => prest.rename_free(n, &c),
                    None => prest,
                };
                let trest = match &t1.name {
                    Some(n) => trest.rename_free(n, &c),
                    None => trest,
                };
                self.bound.push((c, t1.ty.clone()));
                let r = self.unify(&apply_subst(&prest, sigma), &trest, sigma);
                self.bound.pop();
                r
            }
            _ => Err(UnifyError::Mismatch(p.to_string(), t.to_string())),
        }
    }

    fn solve_meta(&self, m: &str, t: &Term, sigma: &mut Substitution) -> Result<(), UnifyError> {
        if t.metas().contains(m) {
            return Err(UnifyError::OccursCheck(m.to_string()));
        }
        if let Some(prev) = sigma.get(m) {
            return if prev.def_eq(t) {
                Ok(())
            } else {
                Err(UnifyError::Mismatch(prev.to_string(), t.to_string()))
            };
        }
        if self.escapes(t) {
            return Err(UnifyError::ScopeEscape(m.to_string()));
        }
        sigma.insert(m.to_string(), t.clone());
        Ok(())
    }

    /// Returns the bound-variable names if the argument list consists of
    /// distinct unification-local bound variables.
    fn miller_args(&self, args: &[Term]) -> Option<Vec<String>> {
        let mut names = Vec::with_capacity(args.len());
        for a in args {
            match a.kind() {
                TermKind::Var(v) if self.is_bound(v) && !names.contains(v) => names.push(v.clone()),
                _ => return None,
            }
        }
        if names.is_empty() {
            None
        } else {
            Some(names)
        }
    }

    fn solve_miller(
        &self,
        m: &str,
        vars: &[String],
        t: &Term,
        sigma: &mut Substitution,
    ) -> Result<(), UnifyError> {
        if t.metas().contains(m) {
            return Err(UnifyError::OccursCheck(m.to_string()));
        }
        let mut body = t.clone();
        let mut lams: Vec<(String, Term)> = Vec::with_capacity(vars.len());
        for (i, v) in vars.iter().enumerate() {
            let x = format!("#m{}", i);
            let ty = self
                .bound_type(v)
                .cloned()
                .ok_or_else(|| UnifyError::ScopeEscape(m.to_string()))?;
            body = body.rename_free(v, &x);
            lams.push((x, ty));
        }
        // Every other unification-local binder must not leak into the
        // abstraction.
        if self.escapes(&body) {
            return Err(UnifyError::ScopeEscape(m.to_string()));
        }
        let mut sol = body;
        for (x, ty) in lams.into_iter().rev() {
            sol = Term::lambda(x, ty, sol);
        }
        if let Some(prev) = sigma.get(m) {
            return if prev.def_eq(&sol) {
                Ok(())
            } else {
                Err(UnifyError::Mismatch(prev.to_string(), sol.to_string()))
            };
        }
        sigma.insert(m.to_string(), sol);
        Ok(())
    }
}

/// Splits an Arrow's first parameter from the rest (the rest is an Arrow of
/// the remaining parameters, or the bare output).
fn split_arrow(params: &[Param], out: &Term) -> (Param, Term) {
    let first = params[0].clone();
    let rest = if params.len() == 1 {
        out.clone()
    } else {
        Term::arrow(params[1..].to_vec(), out.clone())
    };
    (first, rest)
}
