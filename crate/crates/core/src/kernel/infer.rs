use thiserror::Error;

use super::term::{Param, Sort, Term, TermKind};
use super::theory::TypingContext;
use super::unify::{apply_subst, unify_types};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("unbound variable {0}")]
    UnboundVariable(String),
    #[error("type mismatch at {at}: expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String, at: String },
    #[error("{0} is not a function")]
    NotAFunction(String),
    #[error("metavariable {0} in a checked term")]
    MetaInTerm(String),
    #[error("cannot infer elided arguments of {0}")]
    ElisionFailure(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// Infers the type of a fully elaborated, metavariable-free term.
/// Applications may be partial (the result is the residual Arrow).
pub fn infer_type(term: &Term, ctx: &TypingContext) -> Result<Term> {
    match term.kind() {
        TermKind::Sort(_) => Ok(Term::ty()),
        TermKind::Var(v) => ctx
            .lookup(v)
            .cloned()
            .ok_or_else(|| KernelError::UnboundVariable(v.clone())),
        TermKind::Meta(m) => Err(KernelError::MetaInTerm(m.clone())),
        TermKind::App(_, _) => {
            let (head, args) = term.spine();
            let head_ty = infer_type(&head, ctx)?.normalize();
            let (params, out) = match head_ty.kind() {
                TermKind::Arrow(ps, out) => (ps.clone(), out.clone()),
                _ => return Err(KernelError::NotAFunction(head.to_string())),
            };
            if args.len() > params.len() {
                return Err(KernelError::NotAFunction(term.to_string()));
            }
            let mut params = params;
            let mut out = out;
            for arg in &args {
                let p = params.remove(0);
                let arg_ty = infer_type(arg, ctx)?;
                if !arg_ty.def_eq(&p.ty) {
                    return Err(KernelError::TypeMismatch {
                        expected: p.ty.to_string(),
                        found: arg_ty.to_string(),
                        at: arg.to_string(),
                    });
                }
                if let Some(n) = &p.name {
                    for q in params.iter_mut() {
                        q.ty = q.ty.substitute(n, arg);
                    }
                    out = out.substitute(n, arg);
                }
            }
            if params.is_empty() {
                Ok(out.normalize())
            } else {
                Ok(Term::arrow(params, out).normalize())
            }
        }
        TermKind::Lambda(x, t, body) => {
            let t_sort = infer_type(t, ctx)?.normalize();
            if !t_sort.is_sort() {
                return Err(KernelError::TypeMismatch {
                    expected: "a sort".into(),
                    found: t_sort.to_string(),
                    at: t.to_string(),
                });
            }
            let inner = ctx.extended(x.clone(), t.clone());
            let body_ty = infer_type(body, &inner)?;
            Ok(Term::arrow(vec![Param::named(x.clone(), t.clone())], body_ty))
        }
        TermKind::Arrow(params, out) => {
            // The sort of a function type is the sort of its output
            // (impredicative prop).
            let mut inner = ctx.clone();
            for p in params {
                let s = infer_type(&p.ty, &inner)?.normalize();
                if !s.is_sort() {
                    return Err(KernelError::TypeMismatch {
                        expected: "a sort".into(),
                        found: s.to_string(),
                        at: p.ty.to_string(),
                    });
                }
                if let Some(n) = &p.name {
                    inner = inner.extended(n.clone(), p.ty.clone());
                }
            }
            let out_sort = infer_type(out, &inner)?.normalize();
            match out_sort.kind() {
                TermKind::Sort(s) => Ok(Term::sort(*s)),
                _ => Err(KernelError::TypeMismatch {
                    expected: "a sort".into(),
                    found: out_sort.to_string(),
                    at: out.to_string(),
                }),
            }
        }
    }
}

/// True iff the term's type is the sort `prop` (i.e. the term is a
/// proposition).
pub fn is_prop(term: &Term, ctx: &TypingContext) -> bool {
    matches!(infer_type(term, ctx).map(|t| t.normalize()), Ok(t) if t.kind() == &TermKind::Sort(Sort::Prop))
}

/// Definitional equality: alpha equivalence after beta normalization.
pub fn def_equal(a: &Term, b: &Term, _ctx: &TypingContext) -> bool {
    a.def_eq(b)
}

/// Elaborates a parsed term against a context: fills in elided leading
/// arguments of applications (the surface syntax writes `(= a b)` for
/// `(= T a b)`, leaving dependent parameters like `'t` to be inferred from
/// the explicit arguments).
pub fn elaborate(term: &Term, ctx: &TypingContext) -> Result<Term> {
    match term.kind() {
        TermKind::Sort(_) | TermKind::Var(_) | TermKind::Meta(_) => Ok(term.clone()),
        TermKind::App(_, _) => {
            let (head, args) = term.spine();
            let head = elaborate(&head, ctx)?;
            let mut eargs = Vec::with_capacity(args.len());
            for a in &args {
                eargs.push(elaborate(a, ctx)?);
            }
            let head_ty = infer_type(&head, ctx)?.normalize();
            let params = match head_ty.kind() {
                TermKind::Arrow(ps, _) => ps.clone(),
                _ => return Err(KernelError::NotAFunction(head.to_string())),
            };
            if eargs.len() >= params.len() {
                return Ok(Term::apps(head, eargs));
            }
            // Try the term as a partial application first; if the leading
            // argument types line up, no elision happened.
            let direct_ok = {
                let mut ok = true;
                let mut ps = params.clone();
                for a in &eargs {
                    let p = ps.remove(0);
                    match infer_type(a, ctx) {
                        Ok(t) if t.def_eq(&p.ty) => {
                            if let Some(n) = &p.name {
                                for q in ps.iter_mut() {
                                    q.ty = q.ty.substitute(n, a);
                                }
                            }
                        }
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                ok
            };
            if direct_ok {
                return Ok(Term::apps(head, eargs));
            }
            // Elide a prefix: the first (params.len() - args.len())
            // parameters must be named and inferrable by unifying the
            // remaining parameter types against the actual argument types.
            let k = params.len() - eargs.len();
            let mut meta_names = Vec::new();
            for p in &params[..k] {
                match &p.name {
                    Some(n) => meta_names.push(n.clone()),
                    None => return Err(KernelError::ElisionFailure(head.to_string())),
                }
            }
            let mut rest: Vec<Param> = params[k..].to_vec();
            for r in rest.iter_mut() {
                for m in &meta_names {
                    r.ty = r.ty.substitute(m, &Term::meta(m.clone()));
                }
            }
            let mut sigma = std::collections::BTreeMap::new();
            for (i, a) in eargs.iter().enumerate() {
                let want = apply_subst(&rest[i].ty, &sigma);
                let got = infer_type(a, ctx)?;
                if want.contains_meta() {
                    unify_types(&want, &got, &mut sigma)
                        .map_err(|_| KernelError::ElisionFailure(head.to_string()))?;
                } else if !want.def_eq(&got) {
                    return Err(KernelError::TypeMismatch {
                        expected: want.to_string(),
                        found: got.to_string(),
                        at: a.to_string(),
                    });
                }
                if let Some(n) = &rest[i].name {
                    let n = n.clone();
                    for q in rest.iter_mut().skip(i + 1) {
                        q.ty = q.ty.substitute(&n, a);
                    }
                }
            }
            let mut lead = Vec::with_capacity(k);
            for m in &meta_names {
                match sigma.get(m) {
                    Some(v) => lead.push(v.clone()),
                    None => return Err(KernelError::ElisionFailure(head.to_string())),
                }
            }
            lead.extend(eargs);
            Ok(Term::apps(head, lead))
        }
        TermKind::Lambda(x, t, b) => {
            let t2 = elaborate(t, ctx)?;
            let inner = ctx.extended(x.clone(), t2.clone());
            Ok(Term::lambda(x.clone(), t2, elaborate(b, &inner)?))
        }
        TermKind::Arrow(ps, out) => {
            let mut inner = ctx.clone();
            let mut params = Vec::with_capacity(ps.len());
            for p in ps {
                let ty = elaborate(&p.ty, &inner)?;
                if let Some(n) = &p.name {
                    inner = inner.extended(n.clone(), ty.clone());
                }
                params.push(Param { name: p.name.clone(), ty });
            }
            Ok(Term::arrow(params, elaborate(out, &inner)?))
        }
    }
}
