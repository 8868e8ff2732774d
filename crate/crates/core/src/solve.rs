//! Exact in-process optimization of importance objectives over deterministic
//! memoryless strategies: depth-first branch and bound with admissible
//! anytime reachability bounds, exact chain evaluation at every leaf, and a
//! reproducible lexicographic tie-break for witnesses.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::chain::MarkovChain;
use crate::mdp::{Mdp, StrategyTable};
use crate::reach;

/// Tolerance for membership in the reachability-optimal strategy class.
pub const REACH_OPTIMAL_TOL: f64 = 1e-8;
/// Backup sweeps per bound evaluation.
const BOUND_SWEEPS: usize = 8;
/// Slack between a relaxation bound and the incumbent below which a subtree
/// is still explored, absorbing float noise in leaf evaluations.
const BOUND_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("reachability-optimal class requested without the optimal probability")]
    MissingOptimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyClass {
    /// Every strategy reaching the target with probability at least epsilon.
    All,
    /// Strategies attaining the maximal reachability probability.
    ReachOptimal,
}

/// Search limits and switches.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Minimum target-reachability probability for the `All` class.
    pub epsilon: f64,
    /// Node budget; exceeding it returns the incumbent, flagged as such.
    pub node_cap: u64,
    /// Wall-clock budget.
    pub wall_cap: Duration,
    /// Disable to force plain exhaustive search (used by regression tests).
    pub prune: bool,
    /// Below this many total assignments the search branches over every
    /// undecided state in index order, which makes the witness the
    /// lexicographically smallest optimum; above it, branching follows the
    /// frontier of states actually reachable under the partial strategy,
    /// leaving unreached states at their first action.
    pub exhaustive_limit: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            epsilon: 1e-4,
            node_cap: 10_000_000,
            wall_cap: Duration::from_secs(600),
            prune: true,
            exhaustive_limit: 100_000.0,
        }
    }
}

/// A reachability event: probability of hitting `goal` from `from` without
/// entering `avoid` first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachEvent {
    pub from: usize,
    pub goal: Vec<bool>,
    pub avoid: Vec<bool>,
}

impl ReachEvent {
    pub fn plain(from: usize, n: usize, goal_states: &[usize]) -> Self {
        let mut goal = vec![false; n];
        for &g in goal_states {
            goal[g] = true;
        }
        ReachEvent {
            from,
            goal,
            avoid: vec![false; n],
        }
    }
}

/// The objective `scale * P(numerator) / P(denominator)` optimized over
/// deterministic strategies of `mdp` that respect `forced` choices and pass
/// the class filter on `filter`. A missing denominator means the plain event
/// probability is optimized.
#[derive(Debug, Clone)]
pub struct RatioProblem<'a> {
    pub mdp: &'a Mdp,
    pub forced: Vec<Option<usize>>,
    pub numerator: ReachEvent,
    pub denominator: Option<ReachEvent>,
    /// The complement event when numerator and denominator partition the
    /// denominator goal pathwise (first-hit split); enables tighter bounds.
    pub complement: Option<ReachEvent>,
    pub filter: ReachEvent,
    pub class: StrategyClass,
    /// Minimum filter probability for the `All` class.
    pub epsilon: f64,
    pub p_star: Option<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Optimal {
        value: f64,
        witness: StrategyTable,
    },
    /// Budget hit; the best value seen so far, if any. Never reported optimal.
    Budget {
        incumbent: Option<(f64, StrategyTable)>,
        reason: String,
    },
    /// No strategy reaches the target above epsilon (class `All`).
    Undefined,
    /// No strategy attains the optimal reachability (class `ReachOptimal`).
    InfeasibleClass,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub outcome: SolveOutcome,
    pub nodes_explored: u64,
    pub wall_time: Duration,
}

impl SolveResult {
    pub fn optimal(&self) -> Option<(f64, &StrategyTable)> {
        match &self.outcome {
            SolveOutcome::Optimal { value, witness } => Some((*value, witness)),
            _ => None,
        }
    }
}

/// Evaluate one complete deterministic assignment exactly. Returns the leaf
/// value, or `None` when the strategy fails the class filter.
pub fn evaluate_assignment(problem: &RatioProblem, actions: &[usize]) -> Option<f64> {
    let strategy = StrategyTable::deterministic(actions.to_vec());
    let chain = MarkovChain::induced(problem.mdp, &strategy);
    let filter_prob = chain
        .reach_prob(
            problem.filter.from,
            &problem.filter.goal,
            &problem.filter.avoid,
        )
        .expect("filter event is well-formed");
    match problem.class {
        StrategyClass::All => {
            if filter_prob < problem.epsilon_floor() {
                return None;
            }
        }
        StrategyClass::ReachOptimal => {
            let p_star = problem.p_star.expect("checked at solve entry");
            if (filter_prob - p_star).abs() > REACH_OPTIMAL_TOL {
                return None;
            }
        }
    }
    let numerator = chain
        .reach_prob(
            problem.numerator.from,
            &problem.numerator.goal,
            &problem.numerator.avoid,
        )
        .expect("numerator event is well-formed");
    let denominator = match (&problem.denominator, &problem.complement) {
        (None, _) => 1.0,
        // First-hit partition: summing the two legs keeps the ratio exactly
        // 1 when the complement is graph-unreachable.
        (Some(_), Some(b)) => {
            numerator
                + chain
                    .reach_prob(b.from, &b.goal, &b.avoid)
                    .expect("complement event")
        }
        (Some(d), None) if *d == problem.filter => filter_prob,
        (Some(d), None) => chain
            .reach_prob(d.from, &d.goal, &d.avoid)
            .expect("denominator"),
    };
    if denominator == 0.0 {
        return None;
    }
    // Every objective this solver sees is a probability; clamping removes
    // last-ulp noise from the independent linear solves.
    Some((problem.scale * numerator / denominator).clamp(0.0, 1.0))
}

impl RatioProblem<'_> {
    fn epsilon_floor(&self) -> f64 {
        self.epsilon
    }
}

/// Optimize `problem` in the given sense. Exhaustive up to pruning that never
/// discards a strictly better completion; every reported optimum is the exact
/// evaluation of its witness.
pub fn solve_exact(
    problem: &RatioProblem,
    sense: Sense,
    options: &SolveOptions,
) -> Result<SolveResult, SolveError> {
    if problem.class == StrategyClass::ReachOptimal && problem.p_star.is_none() {
        return Err(SolveError::MissingOptimum);
    }
    let started = Instant::now();
    let mdp = problem.mdp;
    let mut assignment: Vec<Option<usize>> = problem.forced.clone();
    for (s, slot) in assignment.iter_mut().enumerate() {
        if slot.is_none() && mdp.num_actions(s) == 1 {
            *slot = Some(0);
        }
    }
    let free: Vec<usize> = (0..mdp.num_states())
        .filter(|&s| assignment[s].is_none())
        .collect();
    let total: f64 = free.iter().map(|&s| mdp.num_actions(s) as f64).product();
    let frontier_mode = total > options.exhaustive_limit;

    let mut starts = vec![problem.filter.from, problem.numerator.from];
    if let Some(d) = &problem.denominator {
        starts.push(d.from);
    }
    starts.sort_unstable();
    starts.dedup();

    let mut search = Search {
        problem,
        sense,
        options,
        free,
        frontier_mode,
        starts,
        assignment,
        incumbent: None,
        nodes: 0,
        started,
        budget: None,
        scratch: vec![0.0; mdp.num_states()],
    };
    search.dfs(0);

    let wall_time = started.elapsed();
    let nodes_explored = search.nodes;
    let outcome = match (search.budget, search.incumbent) {
        (Some(reason), incumbent) => SolveOutcome::Budget {
            incumbent: incumbent.map(|inc| (inc.value, StrategyTable::deterministic(inc.actions))),
            reason,
        },
        (None, Some(inc)) => SolveOutcome::Optimal {
            value: inc.value,
            witness: StrategyTable::deterministic(inc.actions),
        },
        (None, None) => match problem.class {
            StrategyClass::All => SolveOutcome::Undefined,
            StrategyClass::ReachOptimal => SolveOutcome::InfeasibleClass,
        },
    };
    Ok(SolveResult {
        outcome,
        nodes_explored,
        wall_time,
    })
}

struct Incumbent {
    value: f64,
    actions: Vec<usize>,
}

struct Search<'a> {
    problem: &'a RatioProblem<'a>,
    sense: Sense,
    options: &'a SolveOptions,
    free: Vec<usize>,
    frontier_mode: bool,
    /// Start states of the objective events; the frontier grows from here.
    starts: Vec<usize>,
    assignment: Vec<Option<usize>>,
    incumbent: Option<Incumbent>,
    nodes: u64,
    started: Instant,
    budget: Option<String>,
    scratch: Vec<f64>,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize) {
        if self.budget.is_some() {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.options.node_cap {
            self.budget = Some(format!("node cap {} exceeded", self.options.node_cap));
            return;
        }
        if self.nodes % 1024 == 0 && self.started.elapsed() > self.options.wall_cap {
            self.budget = Some(format!(
                "wall-clock cap {:?} exceeded",
                self.options.wall_cap
            ));
            return;
        }
        let next = if self.frontier_mode {
            self.next_frontier_state()
        } else {
            self.free.get(depth).copied()
        };
        let Some(state) = next else {
            self.evaluate_leaf();
            return;
        };
        if !self.feasible() {
            return;
        }
        if self.options.prune && self.incumbent.is_some() && self.pruned_by_bound() {
            return;
        }
        for a in 0..self.problem.mdp.num_actions(state) {
            self.assignment[state] = Some(a);
            self.dfs(depth + 1);
            self.assignment[state] = None;
            if self.budget.is_some() {
                return;
            }
        }
    }

    /// The smallest-index undecided state reachable from the event starts
    /// through decided states. Once there is none, undecided states cannot
    /// influence any event probability and the node is a leaf.
    fn next_frontier_state(&self) -> Option<usize> {
        let mdp = self.problem.mdp;
        let mut seen = vec![false; mdp.num_states()];
        let mut stack = self.starts.clone();
        for &s in &stack {
            seen[s] = true;
        }
        let mut candidate: Option<usize> = None;
        while let Some(s) = stack.pop() {
            match self.assignment[s] {
                None => {
                    candidate = Some(match candidate {
                        Some(c) => c.min(s),
                        None => s,
                    });
                }
                Some(a) => {
                    for t in mdp.successors(s, a) {
                        if !seen[t.to] {
                            seen[t.to] = true;
                            stack.push(t.to);
                        }
                    }
                }
            }
        }
        candidate
    }

    fn evaluate_leaf(&mut self) {
        let actions: Vec<usize> = self.assignment.iter().map(|a| a.unwrap_or(0)).collect();
        let Some(value) = evaluate_assignment(self.problem, &actions) else {
            return;
        };
        let better = match &self.incumbent {
            None => true,
            Some(inc) => match self.sense {
                Sense::Max => value > inc.value || (value == inc.value && actions < inc.actions),
                Sense::Min => value < inc.value || (value == inc.value && actions < inc.actions),
            },
        };
        if better {
            self.incumbent = Some(Incumbent { value, actions });
        }
    }

    /// Can any completion of the current node pass the class filter?
    fn feasible(&mut self) -> bool {
        let filter = &self.problem.filter.clone();
        let upper = self.bound_event(filter, Dir::Upper);
        match self.problem.class {
            StrategyClass::All => upper >= self.problem.epsilon_floor(),
            StrategyClass::ReachOptimal => {
                let p_star = self.problem.p_star.unwrap();
                if upper < p_star - REACH_OPTIMAL_TOL {
                    return false;
                }
                let lower = self.bound_event(filter, Dir::Lower);
                lower <= p_star + REACH_OPTIMAL_TOL
            }
        }
    }

    fn pruned_by_bound(&mut self) -> bool {
        let incumbent = self.incumbent.as_ref().unwrap().value;
        // Objective values are clamped probabilities, so nothing can beat an
        // incumbent sitting on the boundary; there is no bound to compute.
        match self.sense {
            Sense::Max if incumbent == 1.0 => return true,
            Sense::Min if incumbent == 0.0 => return true,
            _ => {}
        }
        let bound = self.objective_bound();
        // The margin covers float noise between the relaxation and the leaf
        // evaluations; the exact-boundary cases are noise-free (a zero
        // numerator and a one-ratio evaluate exactly) and prune ties.
        match self.sense {
            Sense::Max => bound + BOUND_MARGIN <= incumbent || bound == 0.0,
            Sense::Min => bound - BOUND_MARGIN >= incumbent || bound == 1.0,
        }
    }

    /// Admissible bound on the objective over all completions of the node:
    /// never below the best completion for Max, never above it for Min.
    fn objective_bound(&mut self) -> f64 {
        let problem = self.problem.clone();
        let scale = problem.scale;
        match (&problem.denominator, &problem.complement) {
            (None, _) => {
                let dir = if self.sense == Sense::Max {
                    Dir::Upper
                } else {
                    Dir::Lower
                };
                scale * self.bound_event(&problem.numerator, dir)
            }
            (Some(_), Some(complement)) => {
                // First-hit partition: denominator = numerator + complement.
                match self.sense {
                    Sense::Max => {
                        let n_up = self.bound_event(&problem.numerator, Dir::Upper);
                        if n_up == 0.0 {
                            return 0.0;
                        }
                        let b_low = self.bound_event(complement, Dir::Lower);
                        scale * n_up / (n_up + b_low)
                    }
                    Sense::Min => {
                        let b_up = self.bound_event(complement, Dir::Upper);
                        if b_up == 0.0 {
                            // Every feasible completion reaches the target
                            // only via the numerator event.
                            return scale;
                        }
                        let n_low = self.bound_event(&problem.numerator, Dir::Lower);
                        scale * n_low / (n_low + b_up)
                    }
                }
            }
            (Some(denominator), None) => {
                let floor = match self.problem.class {
                    StrategyClass::All => self.problem.epsilon_floor(),
                    StrategyClass::ReachOptimal => self.problem.p_star.unwrap() - REACH_OPTIMAL_TOL,
                };
                match self.sense {
                    Sense::Max => {
                        let n_up = self.bound_event(&problem.numerator, Dir::Upper);
                        let d_low = self.bound_event(denominator, Dir::Lower).max(floor);
                        (scale * n_up / d_low).min(1.0)
                    }
                    Sense::Min => {
                        let n_low = self.bound_event(&problem.numerator, Dir::Lower);
                        let d_up = self.bound_event(denominator, Dir::Upper).min(
                            match self.problem.class {
                                StrategyClass::ReachOptimal => {
                                    self.problem.p_star.unwrap() + REACH_OPTIMAL_TOL
                                }
                                StrategyClass::All => 1.0,
                            },
                        );
                        if d_up == 0.0 {
                            return 0.0;
                        }
                        scale * n_low / d_up
                    }
                }
            }
        }
    }

    /// Anytime bound on a reachability event over completions of the node:
    /// `Upper` starts from the graph-reachability indicator and applies
    /// maximizing sweeps (stays above the true maximum); `Lower` starts from
    /// zero and applies minimizing sweeps (stays below the true minimum).
    fn bound_event(&mut self, event: &ReachEvent, dir: Dir) -> f64 {
        let mdp = self.problem.mdp;
        let n = mdp.num_states();
        let values = &mut self.scratch;
        match dir {
            Dir::Upper => {
                reach_indicator_partial(mdp, &self.assignment, event, values);
            }
            Dir::Lower => {
                for (s, v) in values.iter_mut().enumerate() {
                    *v = if event.goal[s] { 1.0 } else { 0.0 };
                }
            }
        }
        if event.goal[event.from] {
            return 1.0;
        }
        if event.avoid[event.from] {
            return 0.0;
        }
        for _ in 0..BOUND_SWEEPS {
            for s in 0..n {
                if event.goal[s] || event.avoid[s] {
                    continue;
                }
                let combine = |acc: f64, x: f64| match dir {
                    Dir::Upper => acc.max(x),
                    Dir::Lower => acc.min(x),
                };
                let backup = |a: usize, values: &[f64]| -> f64 {
                    mdp.successors(s, a)
                        .iter()
                        .map(|t| {
                            t.prob
                                * if event.goal[t.to] {
                                    1.0
                                } else if event.avoid[t.to] {
                                    0.0
                                } else {
                                    values[t.to]
                                }
                        })
                        .sum()
                };
                values[s] = match self.assignment[s] {
                    Some(a) => backup(a, values),
                    None => (0..mdp.num_actions(s))
                        .map(|a| backup(a, values))
                        .fold(if dir == Dir::Upper { 0.0 } else { 1.0 }, combine),
                };
            }
        }
        values[event.from]
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Dir {
    Upper,
    Lower,
}

/// Indicator of "goal reachable avoiding `avoid`" in the partially assigned
/// transition graph, written into `out`.
fn reach_indicator_partial(
    mdp: &Mdp,
    assignment: &[Option<usize>],
    event: &ReachEvent,
    out: &mut [f64],
) {
    let n = mdp.num_states();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        if event.goal[s] || event.avoid[s] {
            continue;
        }
        let actions: Vec<usize> = match assignment[s] {
            Some(a) => vec![a],
            None => (0..mdp.num_actions(s)).collect(),
        };
        for a in actions {
            for t in mdp.successors(s, a) {
                rev[t.to].push(s);
            }
        }
    }
    for v in out.iter_mut() {
        *v = 0.0;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&s| event.goal[s]).collect();
    for &s in &stack {
        out[s] = 1.0;
    }
    while let Some(s) = stack.pop() {
        for &pred in &rev[s] {
            if out[pred] == 0.0 {
                out[pred] = 1.0;
                stack.push(pred);
            }
        }
    }
}

/// Per-state actions whose one-step backup attains the optimal reachability
/// value vector. Local optimality is necessary but not sufficient for
/// membership in the reachability-optimal class; exact verification of the
/// attained probability stays with the caller.
pub fn filter_reach_optimal_actions(mdp: &Mdp, target: usize) -> Vec<Vec<usize>> {
    let (_, values, _) = reach::max_reach(mdp, target);
    reach::locally_optimal_actions(mdp, &values)
}

/// Admissible bound on the objective over all completions of a partial
/// assignment: never below the best completion for `Max`, never above it for
/// `Min`. A complete assignment is evaluated exactly. `None` entries are
/// undecided states.
pub fn optimistic_bound(problem: &RatioProblem, assignment: &[Option<usize>], sense: Sense) -> f64 {
    if assignment.iter().all(|a| a.is_some()) {
        let actions: Vec<usize> = assignment.iter().map(|a| a.unwrap()).collect();
        if let Some(value) = evaluate_assignment(problem, &actions) {
            return value;
        }
    }
    let mut starts = vec![problem.filter.from, problem.numerator.from];
    if let Some(d) = &problem.denominator {
        starts.push(d.from);
    }
    starts.sort_unstable();
    starts.dedup();
    let mut search = Search {
        problem,
        sense,
        options: &SolveOptions::default(),
        free: Vec::new(),
        frontier_mode: false,
        starts,
        assignment: assignment.to_vec(),
        incumbent: None,
        nodes: 0,
        started: Instant::now(),
        budget: None,
        scratch: vec![0.0; problem.mdp.num_states()],
    };
    search.objective_bound()
}
