//! Goal relabeling: extracting true statements — with checked proofs — from
//! proof-search trees, including trees of searches that failed.
//!
//! Every forward action in a search tree derives a fact that is true in the
//! theory regardless of whether the conjecture under attack was ever proved.
//! Walking from such a node back toward the root until the nearest backward
//! action (exclusive) yields the intro/forward steps that justify the fact;
//! after dropping steps the fact does not depend on and universally closing
//! over the intro-introduced objects it mentions, the result is a standalone
//! theorem with a replayable script. A shared [`GoalRegistry`] deduplicates
//! statements across an entire run so trivial facts rediscovered in every
//! search are only kept once.

use std::collections::BTreeSet;

use crate::kernel::{is_prop, Param, Term, Theory, TypingContext};
use crate::model::SequenceModel;
use crate::parser::RawStep;
use crate::proofenv::{check_script, replay_trace, ActionKind, EnvError, ProofScript};
use crate::search::{
    policy_prompt, proof_loglik, value_prompt, Head, Provenance, SearchTree, TrainingExample,
};

/// A true statement recovered from a search tree, with a proof that replays.
#[derive(Debug, Clone)]
pub struct RelabeledFact {
    /// Universally closed proposition.
    pub statement: Term,
    /// Checked proof of `statement`.
    pub script: ProofScript,
    /// Rendering of the conjecture whose search tree produced the fact.
    pub source: String,
    /// Log-likelihood of the proof under the policy current at extraction.
    pub loglik: f64,
}

/// Canonical renderings of every statement emitted so far across a run.
///
/// Membership is exact on canonical text (binders renamed positionally), so
/// alpha-variants of the same statement collide. Insertion is check-and-set;
/// concurrent relabeling must serialize access externally.
#[derive(Debug, Default, Clone)]
pub struct GoalRegistry {
    seen: BTreeSet<String>,
}

impl GoalRegistry {
    pub fn new() -> GoalRegistry {
        GoalRegistry::default()
    }

    /// Registry key of a statement: its canonical rendering.
    pub fn key(statement: &Term) -> String {
        statement.canonical().to_string()
    }

    pub fn contains(&self, statement: &Term) -> bool {
        self.seen.contains(&Self::key(statement))
    }

    /// Registers a statement; returns true if it was not present before.
    pub fn insert(&mut self, statement: &Term) -> bool {
        self.seen.insert(Self::key(statement))
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// One intro/forward edge of the segment leading to a relabeling candidate.
struct SegmentStep {
    /// Name of the object the step added to scope, if any.
    created: Option<String>,
    /// Scope objects the step's justification consumed.
    uses: Vec<String>,
    /// For intro steps, the introduced binder.
    intro: Option<Param>,
    /// For forward steps, (rule, product).
    show: Option<(String, Term)>,
}

/// Extracts relabeled facts from a search tree.
///
/// For each node whose incoming forward action produced a proposition, the
/// intro/forward actions between the nearest backward edge (exclusive) or the
/// root and that node form a candidate proof. Steps the proposition does not
/// transitively depend on are dropped; the statement is universally closed
/// over the intro objects it still mentions. Candidates already present in
/// `registry` are skipped; statements alpha-equal to a theory declaration's
/// type are registered but not emitted (re-deriving an axiom adds nothing to
/// train on). Every emitted fact passes `check_script`, and its `loglik` is
/// computed by replaying the proof under `model`'s policy.
pub fn relabel_tree(
    theory: &Theory,
    tree: &SearchTree,
    registry: &mut GoalRegistry,
    model: &dyn SequenceModel,
) -> Vec<RelabeledFact> {
    if tree.is_empty() {
        return Vec::new();
    }
    let source = match tree.state(0).goals.first() {
        Some(goal) => goal.statement.to_string(),
        None => return Vec::new(),
    };
    let ctx = TypingContext::new(theory);
    let theory_names: BTreeSet<String> = theory.decls.iter().map(|d| d.name.clone()).collect();
    let axiom_keys: BTreeSet<String> =
        theory.decls.iter().map(|d| d.ty.canonical().to_string()).collect();

    let mut out = Vec::new();
    // Candidate statements whose scripts failed to replay in this tree;
    // retrying them on later nodes would fail identically.
    let mut failed: BTreeSet<String> = BTreeSet::new();

    for i in 0..tree.len() {
        let Some(action) = tree.incoming_action(i) else { continue };
        let ActionKind::Forward { product, .. } = &action.kind else { continue };

        // Segment: chronological intro/forward chain ending at node i,
        // bounded (exclusively) by the nearest backward edge or the root.
        let mut chain: Vec<usize> = Vec::new();
        let mut cur = Some(i);
        while let Some(j) = cur {
            match tree.incoming_action(j) {
                None => break,
                Some(a) if matches!(a.kind, ActionKind::Backward { .. }) => break,
                Some(_) => {
                    chain.push(j);
                    cur = tree.parent(j);
                }
            }
        }
        chain.reverse();

        let steps: Vec<SegmentStep> = chain
            .iter()
            .map(|&j| {
                let a = tree.incoming_action(j).expect("segment nodes have parents");
                match &a.kind {
                    ActionKind::Intro { name, param, .. } => SegmentStep {
                        created: Some(name.clone()),
                        uses: param.ty.free_vars().into_iter().collect(),
                        intro: Some(param.clone()),
                        show: None,
                    },
                    ActionKind::Forward { rule, product, closes, uses } => SegmentStep {
                        created: if *closes {
                            None
                        } else {
                            tree.state(j).objects.last().map(|(n, _)| n.clone())
                        },
                        uses: uses.clone(),
                        intro: None,
                        show: Some((rule.clone(), product.clone())),
                    },
                    ActionKind::Backward { .. } => unreachable!("excluded by the walk"),
                }
            })
            .collect();

        // Dependency pruning: the final step is needed; a step is needed if a
        // needed step consumes the object it created. Needed intros keep the
        // objects their binder types mention alive as well.
        let n = steps.len();
        let mut needed = vec![false; n];
        let mut required: BTreeSet<String> = BTreeSet::new();
        needed[n - 1] = true;
        required.extend(steps[n - 1].uses.iter().cloned());
        for k in (0..n - 1).rev() {
            if steps[k].created.as_ref().is_some_and(|c| required.contains(c)) {
                needed[k] = true;
                required.extend(steps[k].uses.iter().cloned());
            }
        }

        // Every required name must be satisfied by a kept step or the theory;
        // anything else was introduced beyond the segment boundary and the
        // candidate cannot be closed.
        let provided: BTreeSet<&String> = needed
            .iter()
            .zip(&steps)
            .filter(|(keep, _)| **keep)
            .filter_map(|(_, s)| s.created.as_ref())
            .collect();
        if required.iter().any(|r| !provided.contains(r) && !theory_names.contains(r)) {
            continue;
        }

        let mut params: Vec<Param> = Vec::new();
        let mut raw_steps: Vec<RawStep> = Vec::new();
        for (keep, step) in needed.iter().zip(&steps) {
            if !keep {
                continue;
            }
            if let Some(p) = &step.intro {
                let name = step.created.clone().expect("intro steps create their binder");
                params.push(Param::named(name.clone(), p.ty.clone()));
                raw_steps.push(RawStep::Intro { name, ty: p.ty.clone() });
            } else if let Some((rule, prop)) = &step.show {
                raw_steps.push(RawStep::Show { prop: prop.clone(), by: rule.clone() });
            }
        }
        let statement = if params.is_empty() {
            product.clone()
        } else {
            Term::arrow(params, product.clone())
        };

        if statement.free_vars().iter().any(|v| !theory_names.contains(v)) {
            continue;
        }
        let key = GoalRegistry::key(&statement);
        if registry.seen.contains(&key) || failed.contains(&key) {
            continue;
        }
        if !is_prop(&statement, &ctx) {
            failed.insert(key);
            continue;
        }
        if axiom_keys.contains(&key) {
            registry.seen.insert(key);
            continue;
        }

        let script = ProofScript {
            name: format!("fact_{}", registry.len()),
            statement: statement.clone(),
            steps: raw_steps,
        };
        if !check_script(theory, &script) {
            failed.insert(key);
            continue;
        }
        let Ok(loglik) = proof_loglik(theory, &script, model) else {
            failed.insert(key);
            continue;
        };
        registry.seen.insert(key);
        out.push(RelabeledFact { statement, script, source: source.clone(), loglik });
    }
    out
}

/// Drops proof steps the goal does not depend on.
///
/// The script is replayed and the dependency graph computed backward from the
/// goal-closing steps: each `show` line depends on the scope objects its
/// justification consumed. Non-closing `show` steps outside that closure are
/// removed; intro and apply steps change the goal itself and always stay. The
/// result is a subsequence of the input steps, re-validated by replay.
pub fn prune_script(
    theory: &Theory,
    script: &ProofScript,
    goal: &Term,
) -> Result<ProofScript, EnvError> {
    if !goal.def_eq(&script.statement) {
        return Err(EnvError::Replay {
            step: goal.to_string(),
            cause: "script does not state the goal to preserve".into(),
        });
    }
    let (end, trace) = replay_trace(theory, script)?;
    if !end.goals.is_empty() {
        return Err(EnvError::Replay {
            step: script.name.clone(),
            cause: format!("script leaves {} open goal(s)", end.goals.len()),
        });
    }

    // Object each action added to scope, read off the successor state.
    let created: Vec<Option<String>> = trace
        .iter()
        .enumerate()
        .map(|(k, (_, action))| {
            let post = if k + 1 < trace.len() { &trace[k + 1].0 } else { &end };
            match &action.kind {
                ActionKind::Intro { .. } | ActionKind::Forward { closes: false, .. } => {
                    post.objects.last().map(|(n, _)| n.clone())
                }
                _ => None,
            }
        })
        .collect();

    // Goal-closing steps seed the dependency closure; intro and backward
    // steps are structural and always kept.
    let mut needed: Vec<bool> = trace
        .iter()
        .map(|(_, a)| !matches!(a.kind, ActionKind::Forward { closes: false, .. }))
        .collect();
    let mut required: BTreeSet<String> = BTreeSet::new();
    for (k, (_, action)) in trace.iter().enumerate().rev() {
        match &action.kind {
            ActionKind::Forward { closes, uses, .. } => {
                if *closes || created[k].as_ref().is_some_and(|c| required.contains(c)) {
                    needed[k] = true;
                    required.extend(uses.iter().cloned());
                }
            }
            ActionKind::Intro { param, .. } => {
                required.extend(param.ty.free_vars());
            }
            ActionKind::Backward { .. } => {}
        }
    }

    let mut cursor = 0;
    let steps = rebuild_steps(&script.steps, &needed, &mut cursor);
    let pruned = ProofScript { name: script.name.clone(), statement: script.statement.clone(), steps };
    let (end, _) = replay_trace(theory, &pruned)?;
    if !end.goals.is_empty() {
        return Err(EnvError::Replay {
            step: pruned.name.clone(),
            cause: "pruned script no longer closes the goal".into(),
        });
    }
    Ok(pruned)
}

/// Copies `steps`, dropping the `show` lines whose replay actions were marked
/// unneeded. `cursor` tracks the current position in the flat action trace
/// (goal blocks contribute no action of their own).
fn rebuild_steps(steps: &[RawStep], needed: &[bool], cursor: &mut usize) -> Vec<RawStep> {
    let mut out = Vec::new();
    for step in steps {
        match step {
            RawStep::Intro { .. } | RawStep::Apply { .. } => {
                *cursor += 1;
                out.push(step.clone());
            }
            RawStep::Show { .. } => {
                let keep = needed[*cursor];
                *cursor += 1;
                if keep {
                    out.push(step.clone());
                }
            }
            RawStep::Goal { statement, steps: inner } => {
                let pruned = rebuild_steps(inner, needed, cursor);
                out.push(RawStep::Goal { statement: statement.clone(), steps: pruned });
            }
        }
    }
    out
}

/// Policy and value training rows from a fact's proof: one policy row and one
/// value-"1" row per replayed step, all tagged with hindsight provenance. The
/// conjecturer row is added by the loop once the fact's difficulty bucket is
/// known.
pub fn fact_examples(theory: &Theory, fact: &RelabeledFact) -> Result<Vec<TrainingExample>, EnvError> {
    let (_, trace) = replay_trace(theory, &fact.script)?;
    let mut out = Vec::new();
    for (state, action) in &trace {
        let rendering = state.render();
        out.push(TrainingExample {
            head: Head::Policy,
            prompt: policy_prompt(&rendering),
            completion: action.text.clone(),
            provenance: Provenance::Hindsight,
            difficulty: None,
        });
        out.push(TrainingExample {
            head: Head::Value,
            prompt: value_prompt(&rendering),
            completion: "1".into(),
            provenance: Provenance::Hindsight,
            difficulty: None,
        });
    }
    Ok(out)
}
