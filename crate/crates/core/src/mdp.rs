//! Explicit-state MDP model: states, actions, per-(state, action) successor
//! distributions, and the validation rules every model must satisfy before
//! any analysis runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

/// Tolerance for distribution row sums on input data.
pub const DIST_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model is not well-formed:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("unknown action `{0}` at state `{1}`")]
    UnknownAction(String, String),
    #[error("strategy is invalid: {0}")]
    BadStrategy(String),
    #[error("path is invalid: {0}")]
    BadPath(String),
}

/// One transition target with its probability, kept both as a double and as
/// the exact rational the input denoted.
#[derive(Debug, Clone)]
pub struct Transition {
    pub to: usize,
    pub prob: f64,
    pub exact: BigRational,
}

/// Raw, possibly ill-formed model data as parsed from an input file or
/// assembled by a generator. `validate` reports every violation;
/// `Mdp::from_raw` accepts only clean data.
#[derive(Debug, Clone, Default)]
pub struct RawMdp {
    pub states: Vec<String>,
    pub initial: String,
    /// (from, action, to, probability) quadruples in input order.
    pub transitions: Vec<(String, String, String, BigRational)>,
    pub labels: BTreeMap<String, Vec<String>>,
}

/// A single validation violation with enough coordinates to locate it.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NoStates,
    DuplicateState(String),
    UnknownInitial(String),
    UnknownEndpoint {
        state: String,
        site: String,
    },
    ProbabilityOutOfRange {
        state: String,
        action: String,
        to: String,
        prob: f64,
    },
    DuplicateTransition {
        state: String,
        action: String,
        to: String,
    },
    DistributionSum {
        state: String,
        action: String,
        sum: f64,
    },
    NoEnabledAction(String),
    UnknownLabelState(String),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::NoStates => write!(f, "model has no states"),
            ValidationIssue::DuplicateState(s) => write!(f, "duplicate state `{s}`"),
            ValidationIssue::UnknownInitial(s) => write!(f, "initial state `{s}` is not declared"),
            ValidationIssue::UnknownEndpoint { state, site } => {
                write!(f, "transition {site} references undeclared state `{state}`")
            }
            ValidationIssue::ProbabilityOutOfRange {
                state,
                action,
                to,
                prob,
            } => {
                write!(
                    f,
                    "probability {prob} on ({state}, {action}) -> {to} is outside (0, 1]"
                )
            }
            ValidationIssue::DuplicateTransition { state, action, to } => {
                write!(f, "duplicate transition ({state}, {action}) -> {to}")
            }
            ValidationIssue::DistributionSum { state, action, sum } => {
                write!(f, "distribution sum of ({state}, {action}) is {sum}, not 1")
            }
            ValidationIssue::NoEnabledAction(s) => write!(f, "state `{s}` has no enabled action"),
            ValidationIssue::UnknownLabelState(s) => {
                write!(f, "label entry references undeclared state `{s}`")
            }
        }
    }
}

/// Result of validating a raw model; empty iff the model is well-formed.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "- {issue}")?;
        }
        Ok(())
    }
}

/// Check every model invariant on raw data: declared endpoints, probabilities
/// in (0, 1], row sums within `DIST_SUM_TOL`, and at least one enabled action
/// per state.
pub fn validate(raw: &RawMdp) -> ValidationReport {
    let mut issues = Vec::new();
    if raw.states.is_empty() {
        issues.push(ValidationIssue::NoStates);
    }
    let mut index = HashMap::new();
    for (i, s) in raw.states.iter().enumerate() {
        if index.insert(s.clone(), i).is_some() {
            issues.push(ValidationIssue::DuplicateState(s.clone()));
        }
    }
    if !raw.states.is_empty() && !index.contains_key(&raw.initial) {
        issues.push(ValidationIssue::UnknownInitial(raw.initial.clone()));
    }

    // Group rows by (state, action) preserving input order.
    let mut rows: BTreeMap<(String, String), Vec<(String, BigRational)>> = BTreeMap::new();
    for (from, action, to, prob) in &raw.transitions {
        for (endpoint, site) in [(from, "source"), (to, "target")] {
            if !index.contains_key(endpoint) {
                issues.push(ValidationIssue::UnknownEndpoint {
                    state: endpoint.clone(),
                    site: format!("{site} of ({from}, {action}) -> {to}"),
                });
            }
        }
        let p = prob.to_f64().unwrap_or(f64::NAN);
        if !(p > 0.0 && p <= 1.0 + DIST_SUM_TOL) {
            issues.push(ValidationIssue::ProbabilityOutOfRange {
                state: from.clone(),
                action: action.clone(),
                to: to.clone(),
                prob: p,
            });
        }
        let row = rows.entry((from.clone(), action.clone())).or_default();
        if row.iter().any(|(t, _)| t == to) {
            issues.push(ValidationIssue::DuplicateTransition {
                state: from.clone(),
                action: action.clone(),
                to: to.clone(),
            });
        }
        row.push((to.clone(), prob.clone()));
    }
    for ((state, action), row) in &rows {
        let sum: BigRational = row.iter().map(|(_, p)| p.clone()).sum();
        let sum_f = sum.to_f64().unwrap_or(f64::NAN);
        if (sum_f - 1.0).abs() > DIST_SUM_TOL {
            issues.push(ValidationIssue::DistributionSum {
                state: state.clone(),
                action: action.clone(),
                sum: sum_f,
            });
        }
    }
    for s in &raw.states {
        if !rows.keys().any(|(from, _)| from == s) {
            issues.push(ValidationIssue::NoEnabledAction(s.clone()));
        }
    }
    for s in raw.labels.keys() {
        if !index.contains_key(s) {
            issues.push(ValidationIssue::UnknownLabelState(s.clone()));
        }
    }
    ValidationReport { issues }
}

/// A finite MDP with string-identified states and per-state enabled actions.
/// Immutable after construction; probabilities carry their exact rational
/// alongside the double used on the fast path.
#[derive(Debug, Clone)]
pub struct Mdp {
    names: Arc<Vec<String>>,
    index: HashMap<String, usize>,
    initial: usize,
    /// Per state: enabled actions in input order, each with its distribution.
    choices: Vec<Vec<(String, Vec<Transition>)>>,
    labels: Vec<Vec<String>>,
}

impl Mdp {
    /// Build from raw data. Rows summing to 1 within tolerance are
    /// renormalized exactly; anything else is rejected with a full report.
    pub fn from_raw(raw: &RawMdp) -> Result<Self, ModelError> {
        let report = validate(raw);
        if !report.is_empty() {
            return Err(ModelError::Invalid(report));
        }
        let names = Arc::new(raw.states.clone());
        let index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut choices: Vec<Vec<(String, Vec<Transition>)>> = vec![Vec::new(); names.len()];
        for (from, action, to, prob) in &raw.transitions {
            let fi = index[from];
            let ti = index[to];
            let row = match choices[fi].iter_mut().find(|(a, _)| a == action) {
                Some((_, row)) => row,
                None => {
                    choices[fi].push((action.clone(), Vec::new()));
                    &mut choices[fi].last_mut().unwrap().1
                }
            };
            row.push(Transition {
                to: ti,
                prob: 0.0,
                exact: prob.clone(),
            });
        }
        for row in choices.iter_mut().flat_map(|c| c.iter_mut()) {
            let sum: BigRational = row.1.iter().map(|t| t.exact.clone()).sum();
            for t in &mut row.1 {
                if !sum.is_one() {
                    t.exact /= sum.clone();
                }
                t.prob = t.exact.to_f64().expect("probability fits in f64");
            }
        }
        let mut labels = vec![Vec::new(); names.len()];
        for (s, ls) in &raw.labels {
            labels[index[s]] = ls.clone();
        }
        Ok(Mdp {
            initial: index[&raw.initial],
            names,
            index,
            choices,
            labels,
        })
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_names(&self) -> &Arc<Vec<String>> {
        &self.names
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.names[s]
    }

    pub fn state_index(&self, name: &str) -> Result<usize, ModelError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownState(name.to_string()))
    }

    pub fn labels_of(&self, s: usize) -> &[String] {
        &self.labels[s]
    }

    /// Enabled actions of `s` in input order.
    pub fn actions(&self, s: usize) -> impl Iterator<Item = &str> {
        self.choices[s].iter().map(|(a, _)| a.as_str())
    }

    pub fn num_actions(&self, s: usize) -> usize {
        self.choices[s].len()
    }

    pub fn action_name(&self, s: usize, a: usize) -> &str {
        &self.choices[s][a].0
    }

    pub fn action_index(&self, s: usize, name: &str) -> Result<usize, ModelError> {
        self.choices[s]
            .iter()
            .position(|(a, _)| a == name)
            .ok_or_else(|| ModelError::UnknownAction(name.to_string(), self.names[s].clone()))
    }

    /// Successor distribution of (s, a).
    pub fn successors(&self, s: usize, a: usize) -> &[Transition] {
        &self.choices[s][a].1
    }

    pub fn transition_prob(&self, s: usize, a: usize, to: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .find(|t| t.to == to)
            .map_or(0.0, |t| t.prob)
    }

    pub fn transition_exact(&self, s: usize, a: usize, to: usize) -> BigRational {
        self.successors(s, a)
            .iter()
            .find(|t| t.to == to)
            .map_or_else(BigRational::zero, |t| t.exact.clone())
    }

    /// True if the only enabled action of `s` is a probability-1 self-loop.
    pub fn is_absorbing(&self, s: usize) -> bool {
        self.choices[s].len() == 1
            && self.choices[s][0].1.len() == 1
            && self.choices[s][0].1[0].to == s
    }

    /// Number of deterministic memoryless strategies.
    pub fn strategy_count(&self) -> f64 {
        self.choices.iter().map(|c| c.len() as f64).product()
    }

    /// Iterate all (state, action, transition) triples.
    pub fn all_transitions(&self) -> impl Iterator<Item = (usize, usize, &Transition)> {
        self.choices.iter().enumerate().flat_map(|(s, acts)| {
            acts.iter()
                .enumerate()
                .flat_map(move |(a, (_, row))| row.iter().map(move |t| (s, a, t)))
        })
    }
}

/// How a strategy resolves choices at one state.
#[derive(Debug, Clone, PartialEq)]
pub enum Choice {
    /// Always pick this enabled-action index.
    Single(usize),
    /// Mix over enabled-action indices; weights sum to 1.
    Mixed(Vec<(usize, f64)>),
}

/// A memoryless strategy over an MDP's states. Memoryful behavior is
/// represented by tables over a product MDP's states.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTable {
    choices: Vec<Choice>,
}

impl StrategyTable {
    /// Deterministic table from per-state enabled-action indices.
    pub fn deterministic(actions: Vec<usize>) -> Self {
        StrategyTable {
            choices: actions.into_iter().map(Choice::Single).collect(),
        }
    }

    /// Deterministic table from a state-name -> action-name map. Every state
    /// must be covered.
    pub fn deterministic_by_name(
        mdp: &Mdp,
        map: &BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        let mut actions = Vec::with_capacity(mdp.num_states());
        for s in 0..mdp.num_states() {
            let name = map.get(mdp.state_name(s)).ok_or_else(|| {
                ModelError::BadStrategy(format!("no choice for state `{}`", mdp.state_name(s)))
            })?;
            actions.push(mdp.action_index(s, name)?);
        }
        Ok(Self::deterministic(actions))
    }

    /// Stochastic table from per-state weighted action lists.
    pub fn stochastic(choices: Vec<Vec<(usize, f64)>>) -> Self {
        StrategyTable {
            choices: choices
                .into_iter()
                .map(|row| {
                    if row.len() == 1 && (row[0].1 - 1.0).abs() <= DIST_SUM_TOL {
                        Choice::Single(row[0].0)
                    } else {
                        Choice::Mixed(row)
                    }
                })
                .collect(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.choices.iter().all(|c| matches!(c, Choice::Single(_)))
    }

    pub fn num_states(&self) -> usize {
        self.choices.len()
    }

    pub fn choice(&self, s: usize) -> &Choice {
        &self.choices[s]
    }

    /// Probability of picking enabled-action `a` in state `s`.
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match &self.choices[s] {
            Choice::Single(pick) => {
                if *pick == a {
                    1.0
                } else {
                    0.0
                }
            }
            Choice::Mixed(row) => row.iter().find(|(i, _)| *i == a).map_or(0.0, |(_, w)| *w),
        }
    }

    /// Check support containment and row sums against `mdp`.
    pub fn validate_for(&self, mdp: &Mdp) -> Result<(), ModelError> {
        if self.choices.len() != mdp.num_states() {
            return Err(ModelError::BadStrategy(format!(
                "table covers {} states, model has {}",
                self.choices.len(),
                mdp.num_states()
            )));
        }
        for (s, choice) in self.choices.iter().enumerate() {
            match choice {
                Choice::Single(a) => {
                    if *a >= mdp.num_actions(s) {
                        return Err(ModelError::BadStrategy(format!(
                            "state `{}` has no enabled action #{a}",
                            mdp.state_name(s)
                        )));
                    }
                }
                Choice::Mixed(row) => {
                    let mut sum = 0.0;
                    for (a, w) in row {
                        if *a >= mdp.num_actions(s) {
                            return Err(ModelError::BadStrategy(format!(
                                "state `{}` has no enabled action #{a}",
                                mdp.state_name(s)
                            )));
                        }
                        if *w < 0.0 {
                            return Err(ModelError::BadStrategy(format!(
                                "negative weight at state `{}`",
                                mdp.state_name(s)
                            )));
                        }
                        sum += w;
                    }
                    if (sum - 1.0).abs() > DIST_SUM_TOL {
                        return Err(ModelError::BadStrategy(format!(
                            "weights at state `{}` sum to {sum}",
                            mdp.state_name(s)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// An alternating state/action path anchored at the initial state. Kept as
/// names; `resolve` checks it against a concrete model.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub states: Vec<String>,
    pub actions: Vec<String>,
}

/// A path resolved against a model: indices plus the actions taken.
#[derive(Debug, Clone)]
pub struct ResolvedPath {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl PathSpec {
    /// Parse from `s0,a0,s1,...,sn` (odd number of comma-separated items).
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let items: Vec<&str> = text.split(',').map(str::trim).collect();
        if items.is_empty() || items.len() % 2 == 0 {
            return Err(ModelError::BadPath(
                "expected s0,a0,s1,...,sn with alternating states and actions".into(),
            ));
        }
        let mut states = Vec::new();
        let mut actions = Vec::new();
        for (i, item) in items.iter().enumerate() {
            if item.is_empty() {
                return Err(ModelError::BadPath("empty path element".into()));
            }
            if i % 2 == 0 {
                states.push(item.to_string());
            } else {
                actions.push(item.to_string());
            }
        }
        Ok(PathSpec { states, actions })
    }

    /// Resolve against `mdp`: must start at the initial state, be simple,
    /// use enabled actions, and follow positive-probability edges.
    pub fn resolve(&self, mdp: &Mdp) -> Result<ResolvedPath, ModelError> {
        let states: Vec<usize> = self
            .states
            .iter()
            .map(|s| mdp.state_index(s))
            .collect::<Result<_, _>>()?;
        if states[0] != mdp.initial() {
            return Err(ModelError::BadPath(format!(
                "path must start at the initial state `{}`",
                mdp.state_name(mdp.initial())
            )));
        }
        for (i, a) in states.iter().enumerate() {
            if states[i + 1..].contains(a) {
                return Err(ModelError::BadPath(format!(
                    "path revisits state `{}`",
                    mdp.state_name(*a)
                )));
            }
        }
        let mut actions = Vec::new();
        for (i, a) in self.actions.iter().enumerate() {
            let ai = mdp.action_index(states[i], a)?;
            if mdp.transition_prob(states[i], ai, states[i + 1]) <= 0.0 {
                return Err(ModelError::BadPath(format!(
                    "({}, {}) cannot reach `{}`",
                    mdp.state_name(states[i]),
                    a,
                    mdp.state_name(states[i + 1])
                )));
            }
            actions.push(ai);
        }
        Ok(ResolvedPath { states, actions })
    }
}
