pub mod infer;
pub mod term;
pub mod theory;
pub mod unify;

pub use infer::{def_equal, elaborate, infer_type, is_prop, KernelError};
pub use term::{open_declaration, Param, Sort, Term, TermKind};
pub use theory::{ArgHint, Declaration, Directives, Pattern, Theory, TypingContext};
pub use unify::{apply_subst, unify, unify_into, Substitution, UnifyError};
