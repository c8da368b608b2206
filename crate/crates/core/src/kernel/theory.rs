use std::collections::HashMap;

use super::term::Term;

/// A forward directive's pattern: `((+ 'n z) : nat)` or `('_ : (and 'P 'Q))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub term: Term,
    pub ty: Term,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgHint {
    Infer,
    Subgoal,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Directives {
    pub forward: bool,
    pub forward_pattern: Option<Pattern>,
    pub backward: bool,
    pub backward_hints: Option<Vec<ArgHint>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declaration {
    pub name: String,
    pub ty: Term,
    pub directives: Directives,
}

/// An ordered list of named, kernel-checked declarations plus their action
/// directives.
#[derive(Debug, Clone, Default)]
pub struct Theory {
    pub decls: Vec<Declaration>,
    index: HashMap<String, usize>,
}

impl Theory {
    pub fn new() -> Theory {
        Theory::default()
    }

    pub fn push(&mut self, decl: Declaration) {
        self.index.insert(decl.name.clone(), self.decls.len());
        self.decls.push(decl);
    }

    pub fn get(&self, name: &str) -> Option<&Declaration> {
        self.index.get(name).map(|&i| &self.decls[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn declaration_count(&self) -> usize {
        self.decls.len()
    }

    pub fn directive_count(&self) -> usize {
        self.decls
            .iter()
            .map(|d| d.directives.forward as usize + d.directives.backward as usize)
            .sum()
    }

    pub fn forward_decls(&self) -> impl Iterator<Item = &Declaration> {
        self.decls.iter().filter(|d| d.directives.forward)
    }

    pub fn backward_decls(&self) -> impl Iterator<Item = &Declaration> {
        self.decls.iter().filter(|d| d.directives.backward)
    }
}

/// The typing context: global declarations plus a local scope of
/// binder-introduced or proof-constructed objects (innermost last).
#[derive(Clone)]
pub struct TypingContext<'a> {
    pub theory: &'a Theory,
    pub locals: Vec<(String, Term)>,
}

impl<'a> TypingContext<'a> {
    pub fn new(theory: &'a Theory) -> TypingContext<'a> {
        TypingContext { theory, locals: Vec::new() }
    }

    pub fn with_locals(theory: &'a Theory, locals: Vec<(String, Term)>) -> TypingContext<'a> {
        TypingContext { theory, locals }
    }

    /// Most local binding wins.
    pub fn lookup(&self, name: &str) -> Option<&Term> {
        for (n, t) in self.locals.iter().rev() {
            if n == name {
                return Some(t);
            }
        }
        self.theory.get(name).map(|d| &d.ty)
    }

    pub fn extended(&self, name: impl Into<String>, ty: Term) -> TypingContext<'a> {
        let mut c = self.clone();
        c.locals.push((name.into(), ty));
        c
    }
}
