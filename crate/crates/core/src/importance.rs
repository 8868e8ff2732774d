//! Importance of states and paths for reaching a target: evaluation under a
//! fixed strategy, and lower/upper bounds over strategy classes with witness
//! strategies, delegating the optimization to the exact solver.

use std::time::Duration;

use thiserror::Error;

use crate::chain::{ChainError, MarkovChain};
use crate::mdp::{Mdp, ModelError, PathSpec, ResolvedPath, StrategyTable};
use crate::preprocess::{self, memory_product, PreprocessError, ProductMdp};
use crate::reach;
use crate::solve::{
    self, RatioProblem, ReachEvent, Sense, SolveOptions, SolveOutcome, StrategyClass,
};

/// Witnesses reproduce their interval endpoint within this tolerance.
pub const WITNESS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("importance undefined for target `{0}`: no strategy reaches it above the threshold")]
    Undefined(String),
    #[error("no strategy in the requested class: {0}")]
    InfeasibleClass(String),
    #[error("search budget exhausted before any strategy was found: {0}")]
    Budget(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Solve(#[from] solve::SolveError),
}

/// What a bounds query asks about.
#[derive(Debug, Clone)]
pub enum Subject {
    State(String),
    Path(PathSpec),
}

#[derive(Debug, Clone)]
pub struct ImportanceQuery {
    pub target: String,
    pub subject: Subject,
    pub class: StrategyClass,
    /// Normalized importance divides by the reachability probability;
    /// unnormalized is the plain event probability.
    pub normalized: bool,
}

/// Where witness tables live: over the visit-memory product (with the pivot
/// recorded) or directly over the base model.
#[derive(Debug, Clone, PartialEq)]
pub enum WitnessSpace {
    Base,
    Product { pivot: String },
}

/// Lower/upper bounds of an importance query with the strategies attaining
/// them. Bounds range over deterministic memoryless strategies of the
/// witness space, filtered by the query's strategy class.
#[derive(Debug, Clone)]
pub struct ImportanceInterval {
    pub lower: f64,
    pub upper: f64,
    pub lower_witness: StrategyTable,
    pub upper_witness: StrategyTable,
    pub normalized: bool,
    pub class: StrategyClass,
}

/// Per-side solver diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SideStats {
    pub nodes_explored: u64,
    pub wall_time: Duration,
    /// Set when the side hit a budget; its endpoint is an incumbent, not a
    /// proven optimum.
    pub budget: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BoundsAnalysis {
    pub interval: ImportanceInterval,
    pub witness_space: WitnessSpace,
    pub lower_stats: SideStats,
    pub upper_stats: SideStats,
}

impl BoundsAnalysis {
    pub fn hit_budget(&self) -> bool {
        self.lower_stats.budget.is_some() || self.upper_stats.budget.is_some()
    }
}

/// Importance of `subject` for reaching `target` in the chain induced by
/// `strategy`: the probability of visiting the subject before the first visit
/// of the target, normalized by the probability of reaching the target.
/// Undefined when the strategy cannot reach the target.
pub fn state_importance_under(
    mdp: &Mdp,
    strategy: &StrategyTable,
    subject: &str,
    target: &str,
) -> Result<f64, ImportanceError> {
    let s = mdp.state_index(subject)?;
    let t = mdp.state_index(target)?;
    let chain = MarkovChain::induced(mdp, strategy);
    if !chain.can_reach(chain.initial(), t) {
        return Err(ImportanceError::Undefined(target.to_string()));
    }
    let numerator = chain.visit_before_target_prob(s, t)?;
    let denominator = chain.target_reach_prob(t)?;
    Ok((numerator / denominator).clamp(0.0, 1.0))
}

/// Importance of following `path` as an exact prefix and then reaching the
/// target, under a fixed strategy: the product of the strategy and transition
/// probabilities along the prefix, times the reachability from the path's
/// end, normalized by the overall reachability.
pub fn path_importance_under(
    mdp: &Mdp,
    strategy: &StrategyTable,
    path: &PathSpec,
    target: &str,
) -> Result<f64, ImportanceError> {
    let t = mdp.state_index(target)?;
    let resolved = path.resolve(mdp)?;
    check_path_preconditions(mdp, &resolved, t)?;
    let chain = MarkovChain::induced(mdp, strategy);
    if !chain.can_reach(chain.initial(), t) {
        return Err(ImportanceError::Undefined(target.to_string()));
    }
    let mut prefix = 1.0;
    for (i, &a) in resolved.actions.iter().enumerate() {
        let s = resolved.states[i];
        prefix *= strategy.prob(s, a) * mdp.transition_prob(s, a, resolved.states[i + 1]);
    }
    if prefix == 0.0 {
        return Ok(0.0);
    }
    let n = mdp.num_states();
    let mut goal = vec![false; n];
    goal[t] = true;
    let from_end = chain.reach_prob(*resolved.states.last().unwrap(), &goal, &vec![false; n])?;
    let denominator = chain.target_reach_prob(t)?;
    Ok((prefix * from_end / denominator).clamp(0.0, 1.0))
}

fn check_path_preconditions(
    mdp: &Mdp,
    resolved: &ResolvedPath,
    target: usize,
) -> Result<(), ImportanceError> {
    if resolved.states.contains(&target) {
        return Err(PreprocessError::PathVisitsTarget.into());
    }
    if !reach::reach_set(mdp, target)[*resolved.states.last().unwrap()] {
        return Err(PreprocessError::PathImportanceUndefined.into());
    }
    Ok(())
}

/// The ratio problem whose optimum is the (normalized or absolute) importance
/// of the product's pivot state for reaching `target`.
pub fn state_ratio_problem<'a>(
    product: &'a ProductMdp,
    target: usize,
    normalized: bool,
    class: StrategyClass,
    epsilon: f64,
) -> RatioProblem<'a> {
    let n = product.product().num_states();
    let initial = product.product().initial();
    let (t_u, t_v) = product.target_pair(target);
    let mut numerator = ReachEvent::plain(initial, n, &[t_v]);
    numerator.avoid[t_u] = true;
    let mut complement = ReachEvent::plain(initial, n, &[t_u]);
    complement.avoid[t_v] = true;
    let filter = ReachEvent::plain(initial, n, &[t_u, t_v]);
    let mut forced = vec![None; n];
    forced[product.unreachable_copy()] = Some(0);
    RatioProblem {
        mdp: product.product(),
        forced,
        numerator,
        denominator: normalized.then(|| filter.clone()),
        complement: normalized.then_some(complement),
        filter,
        class,
        epsilon,
        p_star: None,
        scale: 1.0,
    }
}

/// The ratio problem for a path query: reachability from the path's end
/// (`path_end`) over reachability from the initial state, scaled by the
/// prefix probability, over strategies forced to follow the path's choices.
pub fn path_ratio_problem<'a>(
    mdp: &'a Mdp,
    target: usize,
    path_end: usize,
    forced: Vec<Option<usize>>,
    scale: f64,
    class: StrategyClass,
    epsilon: f64,
) -> RatioProblem<'a> {
    let n = mdp.num_states();
    let filter = ReachEvent::plain(mdp.initial(), n, &[target]);
    RatioProblem {
        mdp,
        forced,
        numerator: ReachEvent::plain(path_end, n, &[target]),
        denominator: Some(filter.clone()),
        complement: None,
        filter,
        class,
        epsilon,
        p_star: None,
        scale,
    }
}

/// Shared per-target context so batch queries compute the reachability
/// optimum and its witness policy once.
pub struct TargetContext {
    pub target: usize,
    pub p_star: f64,
    pub optimal_policy: StrategyTable,
    pub target_reachable_from_initial: bool,
}

impl TargetContext {
    pub fn new(mdp: &Mdp, target: &str) -> Result<Self, ImportanceError> {
        let t = mdp.state_index(target)?;
        let (p_star, _, optimal_policy) = reach::max_reach(mdp, t);
        let reachable = reach::reach_set(mdp, t)[mdp.initial()];
        Ok(TargetContext {
            target: t,
            p_star,
            optimal_policy,
            target_reachable_from_initial: reachable,
        })
    }

    fn ensure_class_nonempty(
        &self,
        mdp: &Mdp,
        class: StrategyClass,
        epsilon: f64,
    ) -> Result<(), ImportanceError> {
        if !self.target_reachable_from_initial || self.p_star <= 0.0 {
            return Err(ImportanceError::Undefined(
                mdp.state_name(self.target).to_string(),
            ));
        }
        if class == StrategyClass::All && self.p_star < epsilon {
            return Err(ImportanceError::Undefined(
                mdp.state_name(self.target).to_string(),
            ));
        }
        Ok(())
    }
}

/// Bounds on the importance of a state over the query's strategy class. The
/// initial and target states short-circuit to (1, 1); everything else runs
/// two exact optimizations on the visit-memory product.
pub fn state_importance_bounds(
    mdp: &Mdp,
    subject: &str,
    target: &str,
    class: StrategyClass,
    normalized: bool,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<BoundsAnalysis, ImportanceError> {
    let ctx = TargetContext::new(mdp, target)?;
    state_bounds_with_context(mdp, &ctx, subject, class, normalized, epsilon, options)
}

pub fn state_bounds_with_context(
    mdp: &Mdp,
    ctx: &TargetContext,
    subject: &str,
    class: StrategyClass,
    normalized: bool,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<BoundsAnalysis, ImportanceError> {
    let s = mdp.state_index(subject)?;
    ctx.ensure_class_nonempty(mdp, class, epsilon)?;
    if normalized && (s == mdp.initial() || s == ctx.target) {
        // Always visited before (or at) the target: importance 1 under every
        // strategy that reaches the target at all.
        let witness = ctx.optimal_policy.clone();
        return Ok(BoundsAnalysis {
            interval: ImportanceInterval {
                lower: 1.0,
                upper: 1.0,
                lower_witness: witness.clone(),
                upper_witness: witness,
                normalized,
                class,
            },
            witness_space: WitnessSpace::Base,
            lower_stats: SideStats::default(),
            upper_stats: SideStats::default(),
        });
    }
    let product;
    let problem = if s == mdp.initial() || s == ctx.target {
        // Absolute importance of the initial or target state is the plain
        // reachability probability; optimize it without the product.
        let n = mdp.num_states();
        let filter = ReachEvent::plain(mdp.initial(), n, &[ctx.target]);
        RatioProblem {
            mdp,
            forced: vec![None; n],
            numerator: filter.clone(),
            denominator: None,
            complement: None,
            filter,
            class,
            epsilon,
            p_star: Some(ctx.p_star),
            scale: 1.0,
        }
    } else {
        product = memory_product(mdp, subject)?;
        let mut p = state_ratio_problem(&product, ctx.target, normalized, class, epsilon);
        p.p_star = Some(ctx.p_star);
        p
    };
    let witness_space = if std::ptr::eq(problem.mdp, mdp) {
        WitnessSpace::Base
    } else {
        WitnessSpace::Product {
            pivot: subject.to_string(),
        }
    };
    solve_both_senses(problem, witness_space, normalized, class, mdp, ctx, options)
}

/// Bounds on the importance of a path over strategies that follow its action
/// choices: the ratio machinery on the base model with the prefix forced,
/// scaled by the prefix probability. Forcing is memoryless: a strategy that
/// leaves the prefix and later revisits one of its states still takes the
/// path's action there.
pub fn path_importance_bounds(
    mdp: &Mdp,
    path: &PathSpec,
    target: &str,
    class: StrategyClass,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<BoundsAnalysis, ImportanceError> {
    let ctx = TargetContext::new(mdp, target)?;
    let resolved = path.resolve(mdp)?;
    check_path_preconditions(mdp, &resolved, ctx.target)?;
    ctx.ensure_class_nonempty(mdp, class, epsilon)?;
    if resolved.actions.is_empty() {
        let witness = ctx.optimal_policy.clone();
        return Ok(BoundsAnalysis {
            interval: ImportanceInterval {
                lower: 1.0,
                upper: 1.0,
                lower_witness: witness.clone(),
                upper_witness: witness,
                normalized: true,
                class,
            },
            witness_space: WitnessSpace::Base,
            lower_stats: SideStats::default(),
            upper_stats: SideStats::default(),
        });
    }
    let (forced, prefix) = preprocess::fix_path_prefix(mdp, &resolved, ctx.target)?;
    let path_end = *resolved.states.last().unwrap();
    let mut problem = path_ratio_problem(
        mdp,
        ctx.target,
        path_end,
        forced,
        prefix.probability,
        class,
        epsilon,
    );
    problem.p_star = Some(ctx.p_star);
    solve_both_senses(problem, WitnessSpace::Base, true, class, mdp, &ctx, options)
}

/// Unnormalized bounds: the probability of visiting the subject before the
/// target and then reaching it, optimized over the target-reaching class.
pub fn absolute_importance_bounds(
    mdp: &Mdp,
    subject: &str,
    target: &str,
    class: StrategyClass,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<BoundsAnalysis, ImportanceError> {
    let ctx = TargetContext::new(mdp, target)?;
    state_bounds_with_context(mdp, &ctx, subject, class, false, epsilon, options)
}

fn solve_both_senses(
    problem: RatioProblem,
    witness_space: WitnessSpace,
    normalized: bool,
    class: StrategyClass,
    mdp: &Mdp,
    ctx: &TargetContext,
    options: &SolveOptions,
) -> Result<BoundsAnalysis, ImportanceError> {
    let mut endpoints = Vec::new();
    let mut stats = Vec::new();
    for sense in [Sense::Min, Sense::Max] {
        let result = solve::solve_exact(&problem, sense, options)?;
        let mut side = SideStats {
            nodes_explored: result.nodes_explored,
            wall_time: result.wall_time,
            budget: None,
        };
        let endpoint = match result.outcome {
            SolveOutcome::Optimal { value, witness } => (value, witness),
            SolveOutcome::Budget {
                incumbent: Some((value, witness)),
                reason,
            } => {
                side.budget = Some(reason);
                (value, witness)
            }
            SolveOutcome::Budget {
                incumbent: None,
                reason,
            } => {
                return Err(ImportanceError::Budget(reason));
            }
            SolveOutcome::Undefined => {
                return Err(ImportanceError::Undefined(
                    mdp.state_name(ctx.target).to_string(),
                ));
            }
            SolveOutcome::InfeasibleClass => {
                return Err(ImportanceError::InfeasibleClass(format!(
                    "no strategy attains the optimal reachability {} under the constraints",
                    ctx.p_star
                )));
            }
        };
        endpoints.push(endpoint);
        stats.push(side);
    }
    let (upper, upper_witness) = endpoints.pop().unwrap();
    let (lower, lower_witness) = endpoints.pop().unwrap();
    let upper_stats = stats.pop().unwrap();
    let lower_stats = stats.pop().unwrap();
    debug_assert!(lower <= upper + 1e-12, "bounds crossed: {lower} > {upper}");
    Ok(BoundsAnalysis {
        interval: ImportanceInterval {
            lower,
            upper,
            lower_witness,
            upper_witness,
            normalized,
            class,
        },
        witness_space,
        lower_stats,
        upper_stats,
    })
}

/// Dispatch a full query to the state or path machinery.
pub fn importance_bounds(
    mdp: &Mdp,
    query: &ImportanceQuery,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<BoundsAnalysis, ImportanceError> {
    match &query.subject {
        Subject::State(s) => {
            if query.normalized {
                state_importance_bounds(mdp, s, &query.target, query.class, true, epsilon, options)
            } else {
                absolute_importance_bounds(mdp, s, &query.target, query.class, epsilon, options)
            }
        }
        Subject::Path(path) => {
            path_importance_bounds(mdp, path, &query.target, query.class, epsilon, options)
        }
    }
}

/// One row of a user-facing witness table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WitnessRow {
    pub state: String,
    /// Memory mode over the base model; absent for memoryless witnesses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot_visited: Option<bool>,
    pub action: String,
    /// Choice probability for stochastic rows; absent means 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// Flatten a witness table into rows keyed by base-model state names, with
/// the product memory mode when the witness lives over a product.
pub fn witness_rows(
    mdp: &Mdp,
    space: &WitnessSpace,
    table: &StrategyTable,
) -> Result<Vec<WitnessRow>, ImportanceError> {
    let mut rows = Vec::new();
    let mut push = |model: &Mdp, s: usize, state: String, mode: Option<bool>| match table.choice(s)
    {
        crate::mdp::Choice::Single(a) => rows.push(WitnessRow {
            state,
            pivot_visited: mode,
            action: model.action_name(s, *a).to_string(),
            weight: None,
        }),
        crate::mdp::Choice::Mixed(mix) => {
            for (a, w) in mix {
                rows.push(WitnessRow {
                    state: state.clone(),
                    pivot_visited: mode,
                    action: model.action_name(s, *a).to_string(),
                    weight: Some(*w),
                });
            }
        }
    };
    match space {
        WitnessSpace::Base => {
            for s in 0..mdp.num_states() {
                push(mdp, s, mdp.state_name(s).to_string(), None);
            }
        }
        WitnessSpace::Product { pivot } => {
            let product = memory_product(mdp, pivot)?;
            for p in 0..product.product().num_states() {
                if p == product.unreachable_copy() {
                    continue;
                }
                let (base_state, mode) = product.back(p);
                push(
                    product.product(),
                    p,
                    mdp.state_name(base_state).to_string(),
                    Some(mode == crate::preprocess::Mode::Visited),
                );
            }
        }
    }
    Ok(rows)
}

/// One row of a batch run over all states.
pub struct BatchRow {
    pub state: String,
    pub result: Result<BoundsAnalysis, ImportanceError>,
    pub wall_time: Duration,
}

/// Bounds for every state of the model, sorted by state name. Queries are
/// independent and run data-parallel when the `parallel` feature is enabled.
pub fn batch_state_bounds(
    mdp: &Mdp,
    target: &str,
    class: StrategyClass,
    normalized: bool,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<Vec<BatchRow>, ImportanceError> {
    let ctx = TargetContext::new(mdp, target)?;
    let mut names: Vec<String> = (0..mdp.num_states())
        .map(|s| mdp.state_name(s).to_string())
        .collect();
    names.sort();
    Ok(crate::par::map_collect(&names, |name| {
        let started = std::time::Instant::now();
        let result =
            state_bounds_with_context(mdp, &ctx, name, class, normalized, epsilon, options);
        BatchRow {
            state: name.clone(),
            result,
            wall_time: started.elapsed(),
        }
    }))
}

/// Sequential twin of `batch_state_bounds`; the benchmark suite compares the
/// two directly.
pub fn batch_state_bounds_sequential(
    mdp: &Mdp,
    target: &str,
    class: StrategyClass,
    normalized: bool,
    epsilon: f64,
    options: &SolveOptions,
) -> Result<Vec<BatchRow>, ImportanceError> {
    let ctx = TargetContext::new(mdp, target)?;
    let mut names: Vec<String> = (0..mdp.num_states())
        .map(|s| mdp.state_name(s).to_string())
        .collect();
    names.sort();
    Ok(names
        .iter()
        .map(|name| {
            let started = std::time::Instant::now();
            let result =
                state_bounds_with_context(mdp, &ctx, name, class, normalized, epsilon, options);
            BatchRow {
                state: name.clone(),
                result,
                wall_time: started.elapsed(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    const OPTIONS: fn() -> SolveOptions = SolveOptions::default;

    #[test]
    fn nonmono_importance_under_both_strategies() {
        let mdp = catalog::nonmono();
        let sigma0 = catalog::nonmono_strategy_initial();
        let sigma1 = catalog::nonmono_strategy_updated();
        let v = state_importance_under(&mdp, &sigma0, "s1", "st").unwrap();
        assert!((v - 0.01 / 0.91).abs() < 1e-12, "got {v}");
        let v = state_importance_under(&mdp, &sigma1, "s1", "st").unwrap();
        assert!((v - 1.0).abs() < 1e-12, "got {v}");
        let v = state_importance_under(&mdp, &sigma0, "s2", "st").unwrap();
        assert!((v - 0.9 / 0.91).abs() < 1e-12, "got {v}");
        let v = state_importance_under(&mdp, &sigma1, "s2", "st").unwrap();
        assert!((v - 0.9).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn initial_and_target_have_importance_one() {
        let mdp = catalog::nonmono();
        for sigma in [
            catalog::nonmono_strategy_initial(),
            catalog::nonmono_strategy_updated(),
        ] {
            assert_eq!(
                state_importance_under(&mdp, &sigma, "s0", "st").unwrap(),
                1.0
            );
            assert_eq!(
                state_importance_under(&mdp, &sigma, "st", "st").unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn importance_undefined_without_reaching_strategy() {
        let mut raw = catalog::nonmono_raw();
        raw.states.push("iso".into());
        raw.transitions.push((
            "iso".into(),
            "stay".into(),
            "iso".into(),
            num_rational::BigRational::from_integer(1.into()),
        ));
        let mdp = crate::mdp::Mdp::from_raw(&raw).unwrap();
        let sigma = StrategyTable::deterministic(vec![0; mdp.num_states()]);
        assert!(matches!(
            state_importance_under(&mdp, &sigma, "s1", "iso"),
            Err(ImportanceError::Undefined(_))
        ));
    }

    #[test]
    fn trivial_path_importance_is_one() {
        let mdp = catalog::loan();
        let sigma =
            StrategyTable::deterministic((0..mdp.num_states()).map(|_| 0).collect::<Vec<_>>());
        let path = PathSpec::parse("s0").unwrap();
        let v = path_importance_under(&mdp, &sigma, &path, "Granted").unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn loan_path_importance_under_the_diligent_strategy() {
        let mdp = catalog::loan();
        let map: std::collections::BTreeMap<String, String> = [
            ("s0", "Apply"),
            ("Application", "Provider"),
            ("Error", "Consult"),
            ("Consultation", "Apply"),
            ("Angry", "Quit"),
            ("Application+", "Provider"),
            ("Rework", "Submit"),
            ("Resubmit", "Provider"),
            ("Granted", "stay"),
            ("Rejected", "stay"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let sigma = StrategyTable::deterministic_by_name(&mdp, &map).unwrap();
        let path = PathSpec::parse("s0,Apply,Application").unwrap();
        let v = path_importance_under(&mdp, &sigma, &path, "Granted").unwrap();
        // Independently: prefix 0.95; from Application the value is 0.98 and
        // from s0 it is 0.98, checked by the rational oracle below.
        let exact =
            crate::oracle::rational_path_importance(&mdp, &sigma, &path, "Granted").unwrap();
        let expected = crate::oracle::to_f64(&exact);
        assert!((v - expected).abs() < 1e-12, "got {v}, oracle {expected}");
        assert!((v - 0.95).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn path_importance_zero_when_strategy_leaves_the_path() {
        let mdp = catalog::loan();
        let map: std::collections::BTreeMap<String, String> = [
            ("s0", "Consult"),
            ("Application", "Provider"),
            ("Error", "Consult"),
            ("Consultation", "Apply"),
            ("Angry", "Quit"),
            ("Application+", "Provider"),
            ("Rework", "Submit"),
            ("Resubmit", "Provider"),
            ("Granted", "stay"),
            ("Rejected", "stay"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let sigma = StrategyTable::deterministic_by_name(&mdp, &map).unwrap();
        let path = PathSpec::parse("s0,Apply,Application").unwrap();
        let v = path_importance_under(&mdp, &sigma, &path, "Granted").unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn loan_state_bounds_match_the_worked_example() {
        let mdp = catalog::loan();
        let a = state_importance_bounds(
            &mdp,
            "Application+",
            "Granted",
            StrategyClass::All,
            true,
            1e-4,
            &OPTIONS(),
        )
        .unwrap();
        assert!((a.interval.lower - 1.0).abs() < 1e-9);
        assert!((a.interval.upper - 1.0).abs() < 1e-9);

        let b = state_importance_bounds(
            &mdp,
            "Angry",
            "Granted",
            StrategyClass::All,
            true,
            1e-4,
            &OPTIONS(),
        )
        .unwrap();
        assert_eq!((b.interval.lower, b.interval.upper), (0.0, 0.0));
    }

    #[test]
    fn nonmono_state_bounds_for_s2() {
        let mdp = catalog::nonmono();
        let a =
            state_importance_bounds(&mdp, "s2", "st", StrategyClass::All, true, 1e-4, &OPTIONS())
                .unwrap();
        assert!(
            (a.interval.lower - 0.9).abs() < 1e-12,
            "lower {}",
            a.interval.lower
        );
        assert!(
            (a.interval.upper - 0.9 / 0.91).abs() < 1e-12,
            "upper {}",
            a.interval.upper
        );
    }

    #[test]
    fn witnesses_reproduce_their_endpoints() {
        let mdp = catalog::nonmono();
        let a =
            state_importance_bounds(&mdp, "s1", "st", StrategyClass::All, true, 1e-4, &OPTIONS())
                .unwrap();
        let product = memory_product(&mdp, "s1").unwrap();
        let t = product.base().state_index("st").unwrap();
        for (witness, endpoint) in [
            (&a.interval.lower_witness, a.interval.lower),
            (&a.interval.upper_witness, a.interval.upper),
        ] {
            // Evaluate the product witness through the definitional route.
            let chain = MarkovChain::induced(product.product(), witness);
            let (t_u, t_v) = product.target_pair(t);
            let n = product.product().num_states();
            let mut goal = vec![false; n];
            goal[t_v] = true;
            let mut avoid = vec![false; n];
            avoid[t_u] = true;
            let num = chain.reach_prob(chain.initial(), &goal, &avoid).unwrap();
            let mut both = vec![false; n];
            both[t_u] = true;
            both[t_v] = true;
            let den = chain
                .reach_prob(chain.initial(), &both, &vec![false; n])
                .unwrap();
            assert!((num / den - endpoint).abs() < WITNESS_TOL);
        }
    }

    #[test]
    fn absolute_bounds_on_the_nonmono_model() {
        let mdp = catalog::nonmono();
        let a = absolute_importance_bounds(&mdp, "s1", "st", StrategyClass::All, 1e-4, &OPTIONS())
            .unwrap();
        assert!(
            (a.interval.lower - 0.01).abs() < 1e-12,
            "lower {}",
            a.interval.lower
        );
        assert!(
            (a.interval.upper - 0.1).abs() < 1e-12,
            "upper {}",
            a.interval.upper
        );
        assert!(!a.interval.normalized);
    }

    #[test]
    fn absolute_bounds_of_target_equal_reachability_bounds() {
        let mdp = catalog::nonmono();
        let a = absolute_importance_bounds(&mdp, "st", "st", StrategyClass::All, 1e-4, &OPTIONS())
            .unwrap();
        assert!((a.interval.lower - 0.1).abs() < 1e-12);
        assert!((a.interval.upper - 0.91).abs() < 1e-12);
    }

    #[test]
    fn absolute_bounds_of_unreachable_state_are_zero() {
        let mut raw = catalog::nonmono_raw();
        raw.states.push("iso".into());
        raw.transitions.push((
            "iso".into(),
            "stay".into(),
            "iso".into(),
            num_rational::BigRational::from_integer(1.into()),
        ));
        let mdp = crate::mdp::Mdp::from_raw(&raw).unwrap();
        let a = absolute_importance_bounds(&mdp, "iso", "st", StrategyClass::All, 1e-4, &OPTIONS())
            .unwrap();
        assert_eq!((a.interval.lower, a.interval.upper), (0.0, 0.0));
    }

    #[test]
    fn loan_path_bounds() {
        let mdp = catalog::loan();
        let path = PathSpec::parse("s0,Apply,Application").unwrap();
        let a =
            path_importance_bounds(&mdp, &path, "Granted", StrategyClass::All, 1e-4, &OPTIONS())
                .unwrap();
        // The exhaustive oracle pins these endpoints; see oracle tests for
        // the enumeration. Every strategy that loses the error branch keeps
        // the ratio at 1; the balanced ones bring it down to the prefix
        // probability and no further.
        assert!(
            (a.interval.lower - 0.95).abs() < 1e-9,
            "lower {}",
            a.interval.lower
        );
        assert!(
            (a.interval.upper - 1.0).abs() < 1e-9,
            "upper {}",
            a.interval.upper
        );
    }

    #[test]
    fn path_bounds_trivial_and_error_cases() {
        let mdp = catalog::loan();
        let trivial = PathSpec::parse("s0").unwrap();
        let a = path_importance_bounds(
            &mdp,
            &trivial,
            "Granted",
            StrategyClass::All,
            1e-4,
            &OPTIONS(),
        )
        .unwrap();
        assert_eq!((a.interval.lower, a.interval.upper), (1.0, 1.0));

        let dead_end = PathSpec::parse("s0,Consult,Consultation,Angry,Angry").unwrap();
        assert!(matches!(
            path_importance_bounds(
                &mdp,
                &dead_end,
                "Granted",
                StrategyClass::All,
                1e-4,
                &OPTIONS()
            ),
            Err(ImportanceError::Preprocess(
                PreprocessError::PathImportanceUndefined
            ))
        ));
    }

    #[test]
    fn reach_optimal_class_pins_nonmono_interval() {
        let mdp = catalog::nonmono();
        let a = state_importance_bounds(
            &mdp,
            "s1",
            "st",
            StrategyClass::ReachOptimal,
            true,
            1e-4,
            &OPTIONS(),
        )
        .unwrap();
        let expected = 0.01 / 0.91;
        assert!((a.interval.lower - expected).abs() < 1e-12);
        assert!((a.interval.upper - expected).abs() < 1e-12);
        // Witness attains the optimal reachability.
        let product = memory_product(&mdp, "s1").unwrap();
        let chain = MarkovChain::induced(product.product(), &a.interval.lower_witness);
        let t = mdp.state_index("st").unwrap();
        let (t_u, t_v) = product.target_pair(t);
        let n = product.product().num_states();
        let mut goal = vec![false; n];
        goal[t_u] = true;
        goal[t_v] = true;
        let reached = chain
            .reach_prob(chain.initial(), &goal, &vec![false; n])
            .unwrap();
        assert!((reached - 0.91).abs() <= 1e-8);
    }

    #[test]
    fn nonmonotone_switch_regression() {
        // Switching s2 from the direct action to the detour raises the
        // importance of s1 from 1/91 to 1 while the reachability from s2
        // drops from 1 to 0.1.
        let mdp = catalog::nonmono();
        let sigma0 = catalog::nonmono_strategy_initial();
        let sigma1 = catalog::nonmono_strategy_updated();
        let t = mdp.state_index("st").unwrap();
        let s2 = mdp.state_index("s2").unwrap();
        let imp0 = state_importance_under(&mdp, &sigma0, "s1", "st").unwrap();
        let imp1 = state_importance_under(&mdp, &sigma1, "s1", "st").unwrap();
        assert!(imp1 > imp0);
        assert!((imp0 - 1.0 / 91.0).abs() < 1e-12);
        assert!((imp1 - 1.0).abs() < 1e-12);
        let n = mdp.num_states();
        let mut goal = vec![false; n];
        goal[t] = true;
        let from_s2_0 = MarkovChain::induced(&mdp, &sigma0)
            .reach_prob(s2, &goal, &vec![false; n])
            .unwrap();
        let from_s2_1 = MarkovChain::induced(&mdp, &sigma1)
            .reach_prob(s2, &goal, &vec![false; n])
            .unwrap();
        assert!(from_s2_1 < from_s2_0);
        assert_eq!(from_s2_0, 1.0);
        assert!((from_s2_1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn batch_rows_are_sorted_and_complete() {
        let mdp = catalog::nonmono();
        let rows =
            batch_state_bounds(&mdp, "st", StrategyClass::All, true, 1e-4, &OPTIONS()).unwrap();
        assert_eq!(rows.len(), mdp.num_states());
        let names: Vec<&str> = rows.iter().map(|r| r.state.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        let s1 = rows.iter().find(|r| r.state == "s1").unwrap();
        let interval = &s1.result.as_ref().unwrap().interval;
        assert!((interval.lower - 1.0 / 91.0).abs() < 1e-9);
        assert!((interval.upper - 1.0).abs() < 1e-9);
    }

    #[test]
    fn epsilon_scaling_keeps_witnesses_stable() {
        let mdp = catalog::loan();
        let mut witnesses = Vec::new();
        for eps in [1e-3, 1e-4, 1e-5] {
            let a = state_importance_bounds(
                &mdp,
                "Consultation",
                "Granted",
                StrategyClass::All,
                true,
                eps,
                &OPTIONS(),
            )
            .unwrap();
            witnesses.push((a.interval.lower_witness, a.interval.upper_witness));
        }
        assert_eq!(witnesses[0], witnesses[1]);
        assert_eq!(witnesses[1], witnesses[2]);
    }
}
