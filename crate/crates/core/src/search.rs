//! Best-first proof search: a policy/value-guided Monte Carlo tree search
//! over proof states, with eager child materialization, transposition
//! pruning, and extraction of training examples from finished searches.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::completion::Difficulty;
use crate::kernel::{Term, Theory};
use crate::model::SequenceModel;
use crate::proofenv::{
    apply_action, enumerate_actions, enumerate_actions_full, initial_state, replay_trace,
    trace_to_steps, Action, EnvError, ProofScript, ProofState,
};

/// Exploration constant in the selection rule.
pub const EXPLORATION: f64 = 1.0;

/// Default expansion budget per search.
pub const DEFAULT_BUDGET: usize = 2000;

/// The policy prompt for a proof state rendering.
pub fn policy_prompt(state_render: &str) -> String {
    format!("STATE: {}; POLICY:", state_render)
}

/// The value prompt for a proof state rendering.
pub fn value_prompt(state_render: &str) -> String {
    format!("STATE: {}; VALUE:", state_render)
}

/// Policy distribution over the given actions in the given state.
pub fn policy_distribution(
    model: &dyn SequenceModel,
    state_render: &str,
    actions: &[Action],
) -> Vec<f64> {
    let prompt = policy_prompt(state_render);
    let candidates: Vec<String> = actions.iter().map(|a| a.text.clone()).collect();
    model.score_continuations(&prompt, &candidates)
}

/// Estimated probability of eventually proving the state: the model's
/// relative preference for '1' over '0' after the value prompt.
pub fn state_value(model: &dyn SequenceModel, state_render: &str) -> f64 {
    let lp = model.next_char_logprobs(&value_prompt(state_render));
    let p1 = lp['1' as usize].exp();
    let p0 = lp['0' as usize].exp();
    if p0 + p1 == 0.0 {
        0.5
    } else {
        p1 / (p0 + p1)
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Maximum number of node expansions.
    pub budget: usize,
    /// Exploration constant.
    pub exploration: f64,
    /// Seed for tie-breaking-free deterministic extras (example sampling).
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { budget: DEFAULT_BUDGET, exploration: EXPLORATION, seed: 0 }
    }
}

/// A (prompt, completion) pair for training one head of the sequence model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingExample {
    pub head: Head,
    pub prompt: String,
    pub completion: String,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub difficulty: Option<Difficulty>,
}

impl TrainingExample {
    pub fn new(head: Head, prompt: String, completion: String, provenance: Provenance) -> Self {
        TrainingExample { head, prompt, completion, provenance, difficulty: None }
    }
}

/// Which of the model's prompt formats an example trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Policy,
    Value,
    Conjecture,
}

/// Whether an example came from a direct proof or from hindsight relabeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Direct,
    Hindsight,
}

/// Outcome of one search.
pub struct SearchOutcome<'t> {
    pub solved: bool,
    /// The successful action sequence from the initial state, when solved.
    pub actions: Vec<Action>,
    /// Sum of log policy probabilities of the proof's actions, when solved.
    pub proof_loglik: Option<f64>,
    /// Number of expansions performed.
    pub expansions: usize,
    /// Number of nodes materialized.
    pub nodes: usize,
    /// Whether any node's action list was truncated at the cap.
    pub truncated: bool,
    /// Training examples extracted from the finished search.
    pub examples: Vec<TrainingExample>,
    /// The full search tree, for hindsight relabeling.
    pub tree: SearchTree<'t>,
}

/// A finished search's node arena. Index 0 is the root.
pub struct SearchTree<'t> {
    nodes: Vec<Node<'t>>,
}

impl<'t> SearchTree<'t> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn state(&self, i: usize) -> &ProofState<'t> {
        &self.nodes[i].state
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.nodes[i].parent.map(|(p, _)| p)
    }

    /// The action on the edge from `parent(i)` into node `i`.
    pub fn incoming_action(&self, i: usize) -> Option<&Action> {
        self.nodes[i].parent.map(|(p, a)| &self.nodes[p].actions[a])
    }
}

enum Status {
    /// Materialized, not yet expanded.
    Fresh,
    /// Expanded: actions enumerated and children materialized.
    Expanded,
    /// No actions available, or a transposition of an earlier node.
    DeadEnd,
    /// Empty goal list: the proof is complete.
    Solved,
}

struct Node<'t> {
    state: ProofState<'t>,
    parent: Option<(usize, usize)>,
    status: Status,
    actions: Vec<Action>,
    children: Vec<usize>,
    priors: Vec<f64>,
    edge_n: Vec<u32>,
    edge_w: Vec<f64>,
    visits: u32,
}

impl<'t> Node<'t> {
    fn fresh(state: ProofState<'t>, parent: Option<(usize, usize)>) -> Node<'t> {
        let status = if state.is_success() { Status::Solved } else { Status::Fresh };
        Node {
            state,
            parent,
            status,
            actions: Vec::new(),
            children: Vec::new(),
            priors: Vec::new(),
            edge_n: Vec::new(),
            edge_w: Vec::new(),
            visits: 0,
        }
    }
}

/// Proves `statement` in `theory` under the given model and budget.
pub fn prove<'t>(
    theory: &'t Theory,
    statement: &Term,
    model: &dyn SequenceModel,
    cfg: &SearchConfig,
) -> Result<SearchOutcome<'t>, EnvError> {
    if cfg.budget == 0 {
        return Err(EnvError::InvalidArgument("search budget must be at least 1".into()));
    }
    let root = initial_state(theory, statement)?;
    Ok(search(root, model, cfg))
}

/// Runs the tree search from an arbitrary initial proof state.
pub fn search<'t>(
    root: ProofState<'t>,
    model: &dyn SequenceModel,
    cfg: &SearchConfig,
) -> SearchOutcome<'t> {
    let mut tree: Vec<Node<'t>> = vec![Node::fresh(root, None)];
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(tree[0].state.render_full());
    let mut expansions = 0usize;
    let mut truncated = false;
    let mut solution: Option<usize> = None;

    if matches!(tree[0].status, Status::Solved) {
        solution = Some(0);
    }

    while solution.is_none() && expansions < cfg.budget {
        // Selection: walk down expanded nodes by the PUCT rule.
        let mut idx = 0usize;
        let mut path: Vec<(usize, usize)> = Vec::new();
        loop {
            match tree[idx].status {
                Status::Expanded => {
                    let pick = select_edge(&tree[idx], cfg.exploration);
                    path.push((idx, pick));
                    idx = tree[idx].children[pick];
                }
                _ => break,
            }
        }

        // Evaluation / expansion of the leaf.
        let leaf_value = match tree[idx].status {
            Status::Solved => {
                solution = Some(idx);
                1.0
            }
            Status::DeadEnd => 0.0,
            Status::Fresh => {
                expansions += 1;
                let (actions, was_truncated) = enumerate_actions_full(&tree[idx].state);
                truncated |= was_truncated;
                if actions.is_empty() {
                    tree[idx].status = Status::DeadEnd;
                    0.0
                } else {
                    let render = tree[idx].state.render();
                    let priors = policy_distribution(model, &render, &actions);
                    let mut children = Vec::with_capacity(actions.len());
                    for (ai, action) in actions.iter().enumerate() {
                        let child_state = apply_action(&tree[idx].state, action);
                        let key = child_state.render_full();
                        let child_idx = tree.len();
                        let mut node = Node::fresh(child_state, Some((idx, ai)));
                        if matches!(node.status, Status::Fresh) && !seen.insert(key) {
                            node.status = Status::DeadEnd;
                        }
                        let is_solved = matches!(node.status, Status::Solved);
                        tree.push(node);
                        children.push(child_idx);
                        if is_solved && solution.is_none() {
                            solution = Some(child_idx);
                        }
                    }
                    let n = actions.len();
                    tree[idx].actions = actions;
                    tree[idx].priors = priors;
                    tree[idx].children = children;
                    tree[idx].edge_n = vec![0; n];
                    tree[idx].edge_w = vec![0.0; n];
                    tree[idx].status = Status::Expanded;
                    if solution.is_some() {
                        1.0
                    } else {
                        state_value(model, &render)
                    }
                }
            }
            Status::Expanded => unreachable!("selection stops at non-expanded nodes"),
        };

        // Backup: mean value along the path.
        tree[idx].visits += 1;
        for (n, a) in path.into_iter().rev() {
            tree[n].visits += 1;
            tree[n].edge_n[a] += 1;
            tree[n].edge_w[a] += leaf_value;
        }
    }

    let solved = solution.is_some();
    let mut proof_loglik = None;
    let actions = match solution {
        Some(mut at) => {
            let mut rev = Vec::new();
            let mut loglik = 0.0f64;
            while let Some((p, a)) = tree[at].parent {
                rev.push(tree[p].actions[a].clone());
                loglik += tree[p].priors[a].ln();
                at = p;
            }
            rev.reverse();
            proof_loglik = Some(loglik);
            rev
        }
        None => Vec::new(),
    };
    let examples = extract_examples(&tree, solution, &actions, cfg.seed);
    let nodes = tree.len();
    SearchOutcome {
        solved,
        actions,
        proof_loglik,
        expansions,
        nodes,
        truncated,
        examples,
        tree: SearchTree { nodes: tree },
    }
}

/// PUCT selection: Q + c * P * sqrt(N) / (1 + n), ties to the lowest index.
fn select_edge(node: &Node, c: f64) -> usize {
    let total: u32 = node.edge_n.iter().sum();
    let sqrt_n = (total as f64).sqrt();
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..node.actions.len() {
        let q = if node.edge_n[i] == 0 {
            0.0
        } else {
            node.edge_w[i] / node.edge_n[i] as f64
        };
        let u = c * node.priors[i] * sqrt_n / (1.0 + node.edge_n[i] as f64);
        let score = q + u;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Training examples from a finished search: each stepped state on the
/// solution path yields a policy example for the chosen action and a
/// value-1 example, plus an equal number of seeded value-0 samples from
/// materialized off-path states. An unsolved search yields nothing here;
/// hindsight relabeling handles failures.
fn extract_examples(
    tree: &[Node],
    solution: Option<usize>,
    actions: &[Action],
    seed: u64,
) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    let Some(goal_idx) = solution else {
        return out;
    };
    // Recover the path node indices root..solution.
    let mut path = vec![goal_idx];
    let mut at = goal_idx;
    while let Some((p, _)) = tree[at].parent {
        path.push(p);
        at = p;
    }
    path.reverse();
    let on_path: HashSet<usize> = path.iter().copied().collect();
    for (i, &node_idx) in path.iter().enumerate() {
        if i >= actions.len() {
            break;
        }
        let render = tree[node_idx].state.render();
        out.push(TrainingExample::new(
            Head::Policy,
            policy_prompt(&render),
            actions[i].text.clone(),
            Provenance::Direct,
        ));
        out.push(TrainingExample::new(
            Head::Value,
            value_prompt(&render),
            "1".into(),
            Provenance::Direct,
        ));
    }
    // Negatives: materialized off-path states, excluding any that
    // themselves closed the proof; as many as there are value-1 rows.
    let mut negatives: Vec<usize> = (0..tree.len())
        .filter(|i| !on_path.contains(i))
        .filter(|&i| !matches!(tree[i].status, Status::Solved))
        .collect();
    let want = actions.len().min(negatives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    negatives.shuffle(&mut rng);
    for &i in negatives.iter().take(want) {
        out.push(TrainingExample::new(
            Head::Value,
            value_prompt(&tree[i].state.render()),
            "0".into(),
            Provenance::Direct,
        ));
    }
    out
}

/// Builds a checkable proof script from a successful action sequence.
pub fn solution_script(
    theory: &Theory,
    name: &str,
    statement: &Term,
    actions: &[Action],
) -> Result<ProofScript, EnvError> {
    let initial = initial_state(theory, statement)?;
    let steps = trace_to_steps(&initial, actions);
    Ok(ProofScript { name: name.to_string(), statement: statement.clone(), steps })
}

/// Log-likelihood of a checked proof under the model's policy: the script
/// is replayed and each step contributes the log of the policy probability
/// its action received among the actions available at its pre-state. An
/// empty script contributes 0.
pub fn proof_loglik(
    theory: &Theory,
    script: &ProofScript,
    model: &dyn SequenceModel,
) -> Result<f64, EnvError> {
    let (_, trace) = replay_trace(theory, script)?;
    let mut total = 0.0f64;
    for (state, action) in &trace {
        let actions = enumerate_actions(state);
        let idx = actions.iter().position(|a| a == action).ok_or_else(|| EnvError::Replay {
            step: action.text.clone(),
            cause: "replayed action missing from its pre-state's action set".into(),
        })?;
        let probs = policy_distribution(model, &state.render(), &actions);
        total += probs[idx].ln();
    }
    Ok(total)
}
