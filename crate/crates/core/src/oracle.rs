//! Independent ground truth for the solver: exhaustive enumeration of
//! deterministic strategies and exact chain analysis in rational arithmetic
//! via fraction-free Gaussian elimination.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::importance::state_ratio_problem;
use crate::mdp::{Choice, Mdp, ModelError, PathSpec, StrategyTable};
use crate::preprocess::{fix_path_prefix, memory_product, PreprocessError};
use crate::solve::{evaluate_assignment, RatioProblem, StrategyClass};

/// Enumeration refuses above this many strategies.
pub const ENUMERATION_GUARD: f64 = 1e6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{0} deterministic strategies exceed the enumeration guard")]
    GuardExceeded(f64),
    #[error("rational analysis requires a deterministic strategy")]
    StochasticStrategy,
    #[error("importance undefined: the target is never reached")]
    Undefined,
    #[error("no strategy in the requested class")]
    EmptyClass,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// An interval endpoint: the value and a strategy attaining it.
pub type Endpoint = (f64, StrategyTable);

pub fn to_f64(value: &BigRational) -> f64 {
    value.to_f64().expect("rational fits in f64")
}

/// Every deterministic memoryless strategy of `mdp`, exactly once, in
/// lexicographic order of the per-state action indices.
pub fn enumerate_deterministic(
    mdp: &Mdp,
) -> Result<impl Iterator<Item = StrategyTable> + '_, OracleError> {
    enumerate_with_forced(mdp, vec![None; mdp.num_states()])
}

/// Enumeration with some states pinned to a fixed action.
pub fn enumerate_with_forced(
    mdp: &Mdp,
    forced: Vec<Option<usize>>,
) -> Result<impl Iterator<Item = StrategyTable> + '_, OracleError> {
    let count: f64 = (0..mdp.num_states())
        .map(|s| {
            if forced[s].is_some() {
                1.0
            } else {
                mdp.num_actions(s) as f64
            }
        })
        .product();
    if count > ENUMERATION_GUARD {
        return Err(OracleError::GuardExceeded(count));
    }
    let mut current: Vec<usize> = (0..mdp.num_states())
        .map(|s| forced[s].unwrap_or(0))
        .collect();
    let mut done = false;
    Ok(std::iter::from_fn(move || {
        if done {
            return None;
        }
        let out = StrategyTable::deterministic(current.clone());
        // Odometer step, rightmost state fastest: lexicographic order.
        let mut i = current.len();
        loop {
            if i == 0 {
                done = true;
                break;
            }
            i -= 1;
            if forced[i].is_some() {
                continue;
            }
            if current[i] + 1 < mdp.num_actions(i) {
                current[i] += 1;
                break;
            }
            current[i] = 0;
        }
        Some(out)
    }))
}

fn assignment_of(table: &StrategyTable) -> Vec<usize> {
    (0..table.num_states())
        .map(|s| match table.choice(s) {
            Choice::Single(a) => *a,
            Choice::Mixed(_) => unreachable!("enumeration yields deterministic tables"),
        })
        .collect()
}

/// Extremes of a ratio problem by plain enumeration: scan strategies in
/// lexicographic order, keep the first strictly better value per sense.
/// Entirely search-free, so it is the reference the branch-and-bound solver
/// is checked against.
pub fn brute_force_problem(problem: &RatioProblem) -> Result<(Endpoint, Endpoint), OracleError> {
    type Raw = (f64, Vec<usize>);
    let mut best: Option<(Raw, Raw)> = None;
    for table in enumerate_with_forced(problem.mdp, problem.forced.clone())? {
        let actions = assignment_of(&table);
        let Some(value) = evaluate_assignment(problem, &actions) else {
            continue;
        };
        best = Some(match best.take() {
            None => ((value, actions.clone()), (value, actions)),
            Some((mut lo, mut hi)) => {
                if value < lo.0 {
                    lo = (value, actions.clone());
                }
                if value > hi.0 {
                    hi = (value, actions);
                }
                (lo, hi)
            }
        });
    }
    match best {
        Some((lo, hi)) => Ok((
            (lo.0, StrategyTable::deterministic(lo.1)),
            (hi.0, StrategyTable::deterministic(hi.1)),
        )),
        None => match problem.class {
            StrategyClass::All => Err(OracleError::Undefined),
            StrategyClass::ReachOptimal => Err(OracleError::EmptyClass),
        },
    }
}

/// Brute-force state-importance interval over deterministic strategies of the
/// visit-memory product, with the same class filters the solver applies.
pub fn brute_force_state_bounds(
    mdp: &Mdp,
    subject: &str,
    target: &str,
    class: StrategyClass,
    epsilon: f64,
) -> Result<(Endpoint, Endpoint), OracleError> {
    let t = mdp.state_index(target)?;
    let product = memory_product(mdp, subject)?;
    let mut problem = state_ratio_problem(&product, t, true, class, epsilon);
    if class == StrategyClass::ReachOptimal {
        problem.p_star = Some(exact_p_star(&problem)?);
    }
    brute_force_problem(&problem)
}

/// Brute-force path-importance interval over strategies following the path.
pub fn brute_force_path_bounds(
    mdp: &Mdp,
    path: &PathSpec,
    target: &str,
    class: StrategyClass,
    epsilon: f64,
) -> Result<(Endpoint, Endpoint), OracleError> {
    let t = mdp.state_index(target)?;
    let resolved = path.resolve(mdp)?;
    let (forced, prefix) = fix_path_prefix(mdp, &resolved, t)?;
    let path_end = *resolved.states.last().unwrap();
    let mut problem = crate::importance::path_ratio_problem(
        mdp,
        t,
        path_end,
        forced,
        prefix.probability,
        class,
        epsilon,
    );
    if class == StrategyClass::ReachOptimal {
        problem.p_star = Some(exact_p_star(&problem)?);
    }
    brute_force_problem(&problem)
}

/// The best filter-event probability over all (forced-respecting) strategies,
/// found by enumeration. Used to pin the reach-optimal class without trusting
/// the value-iteration route.
fn exact_p_star(problem: &RatioProblem) -> Result<f64, OracleError> {
    let mut best = 0.0f64;
    for table in enumerate_with_forced(problem.mdp, problem.forced.clone())? {
        let actions = assignment_of(&table);
        let strategy = StrategyTable::deterministic(actions);
        let chain = crate::chain::MarkovChain::induced(problem.mdp, &strategy);
        let f = chain
            .reach_prob(
                problem.filter.from,
                &problem.filter.goal,
                &problem.filter.avoid,
            )
            .expect("filter event");
        best = best.max(f);
    }
    Ok(best)
}

/// A Markov chain with exact rational transition probabilities, induced from
/// an MDP by a deterministic strategy.
#[derive(Debug, Clone)]
pub struct RationalChain {
    initial: usize,
    rows: Vec<Vec<(usize, BigRational)>>,
}

impl RationalChain {
    pub fn induced(mdp: &Mdp, strategy: &StrategyTable) -> Result<Self, OracleError> {
        if !strategy.is_deterministic() {
            return Err(OracleError::StochasticStrategy);
        }
        let rows = (0..mdp.num_states())
            .map(|s| {
                let a = match strategy.choice(s) {
                    Choice::Single(a) => *a,
                    Choice::Mixed(_) => unreachable!(),
                };
                mdp.successors(s, a)
                    .iter()
                    .map(|t| (t.to, t.exact.clone()))
                    .collect()
            })
            .collect();
        Ok(RationalChain {
            initial: mdp.initial(),
            rows,
        })
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    fn relevant(&self, goal: &[bool], avoid: &[bool]) -> Vec<bool> {
        let n = self.rows.len();
        let mut rev = vec![Vec::new(); n];
        for (s, row) in self.rows.iter().enumerate() {
            if goal[s] || avoid[s] {
                continue;
            }
            for (to, p) in row {
                if !p.is_zero() {
                    rev[*to].push(s);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&s| goal[s]).collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &pred in &rev[s] {
                if !seen[pred] {
                    seen[pred] = true;
                    stack.push(pred);
                }
            }
        }
        seen
    }

    /// Exact probability of reaching `goal` from `from` without entering
    /// `avoid` first, by fraction-free elimination on the hitting system.
    pub fn reach_prob(&self, from: usize, goal: &[bool], avoid: &[bool]) -> BigRational {
        if goal[from] {
            return BigRational::one();
        }
        if avoid[from] {
            return BigRational::zero();
        }
        let n = self.rows.len();
        let relevant = self.relevant(goal, avoid);
        if !relevant[from] {
            return BigRational::zero();
        }
        let unknowns: Vec<usize> = (0..n)
            .filter(|&s| relevant[s] && !goal[s] && !avoid[s])
            .collect();
        let mut col_of = vec![usize::MAX; n];
        for (i, &s) in unknowns.iter().enumerate() {
            col_of[s] = i;
        }
        let m = unknowns.len();
        // Augmented rational system (I - Q | b), then scaled to integers.
        let mut rational = vec![vec![BigRational::zero(); m + 1]; m];
        for (i, &s) in unknowns.iter().enumerate() {
            rational[i][i] = BigRational::one();
            for (to, p) in &self.rows[s] {
                if goal[*to] {
                    rational[i][m] += p;
                } else if col_of[*to] != usize::MAX {
                    let j = col_of[*to];
                    rational[i][j] -= p;
                }
            }
        }
        let mut matrix: Vec<Vec<BigInt>> = rational
            .iter()
            .map(|row| {
                let scale = row
                    .iter()
                    .map(|v| v.denom().clone())
                    .fold(BigInt::one(), |acc, d| lcm(&acc, &d));
                row.iter()
                    .map(|v| v.numer() * (&scale / v.denom()))
                    .collect()
            })
            .collect();

        // Bareiss fraction-free elimination with row pivoting; every division
        // below is exact.
        let mut prev = BigInt::one();
        for k in 0..m {
            if matrix[k][k].is_zero() {
                let pivot = (k + 1..m)
                    .find(|&r| !matrix[r][k].is_zero())
                    .expect("hitting system is regular after pruning");
                matrix.swap(k, pivot);
            }
            for i in k + 1..m {
                for j in k + 1..=m {
                    let value =
                        (&matrix[k][k] * &matrix[i][j] - &matrix[i][k] * &matrix[k][j]) / &prev;
                    matrix[i][j] = value;
                }
                matrix[i][k] = BigInt::zero();
            }
            prev = matrix[k][k].clone();
        }
        let mut solution = vec![BigRational::zero(); m];
        for i in (0..m).rev() {
            let mut acc = BigRational::from_integer(matrix[i][m].clone());
            for j in i + 1..m {
                acc -= BigRational::from_integer(matrix[i][j].clone()) * &solution[j];
            }
            solution[i] = acc / BigRational::from_integer(matrix[i][i].clone());
        }
        solution[col_of[from]].clone()
    }

    pub fn target_reach_prob(&self, t: usize) -> BigRational {
        let mut goal = vec![false; self.rows.len()];
        goal[t] = true;
        self.reach_prob(self.initial, &goal, &vec![false; self.rows.len()])
    }
}

fn lcm(a: &BigInt, b: &BigInt) -> BigInt {
    if a.is_zero() || b.is_zero() {
        return BigInt::one();
    }
    (a * b / gcd(a, b)).abs()
}

fn gcd(a: &BigInt, b: &BigInt) -> BigInt {
    let mut a = a.abs();
    let mut b = b.abs();
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

/// Exact state importance under a deterministic strategy.
pub fn rational_state_importance(
    mdp: &Mdp,
    strategy: &StrategyTable,
    subject: &str,
    target: &str,
) -> Result<BigRational, OracleError> {
    let s = mdp.state_index(subject)?;
    let t = mdp.state_index(target)?;
    let chain = RationalChain::induced(mdp, strategy)?;
    let denominator = chain.target_reach_prob(t);
    if denominator.is_zero() {
        return Err(OracleError::Undefined);
    }
    let n = mdp.num_states();
    let mut goal_s = vec![false; n];
    goal_s[s] = true;
    let mut avoid_t = vec![false; n];
    if s != t {
        avoid_t[t] = true;
    }
    let first = chain.reach_prob(chain.initial(), &goal_s, &avoid_t);
    let mut goal_t = vec![false; n];
    goal_t[t] = true;
    let second = chain.reach_prob(s, &goal_t, &vec![false; n]);
    Ok(first * second / denominator)
}

/// Exact path importance under a deterministic strategy.
pub fn rational_path_importance(
    mdp: &Mdp,
    strategy: &StrategyTable,
    path: &PathSpec,
    target: &str,
) -> Result<BigRational, OracleError> {
    let t = mdp.state_index(target)?;
    let resolved = path.resolve(mdp)?;
    let chain = RationalChain::induced(mdp, strategy)?;
    let denominator = chain.target_reach_prob(t);
    if denominator.is_zero() {
        return Err(OracleError::Undefined);
    }
    let mut prefix = BigRational::one();
    for (i, &a) in resolved.actions.iter().enumerate() {
        let s = resolved.states[i];
        if strategy.prob(s, a) != 1.0 {
            return Ok(BigRational::zero());
        }
        prefix *= mdp.transition_exact(s, a, resolved.states[i + 1]);
    }
    let n = mdp.num_states();
    let mut goal = vec![false; n];
    goal[t] = true;
    let from_end = chain.reach_prob(*resolved.states.last().unwrap(), &goal, &vec![false; n]);
    Ok(prefix * from_end / denominator)
}

/// Exact state-importance interval by enumeration in rational arithmetic.
/// The reach-optimal class is pinned by the exact maximal reachability found
/// during the same enumeration.
pub fn rational_state_interval(
    mdp: &Mdp,
    subject: &str,
    target: &str,
    class: StrategyClass,
    epsilon: &BigRational,
) -> Result<(BigRational, BigRational), OracleError> {
    let t = mdp.state_index(target)?;
    let product = memory_product(mdp, subject)?;
    let pmdp = product.product();
    let (t_u, t_v) = product.target_pair(t);
    let n = pmdp.num_states();
    let mut forced = vec![None; n];
    forced[product.unreachable_copy()] = Some(0);

    let mut evaluations: Vec<(BigRational, BigRational)> = Vec::new();
    for table in enumerate_with_forced(pmdp, forced)? {
        let chain = RationalChain::induced(pmdp, &table)?;
        let mut goal_v = vec![false; n];
        goal_v[t_v] = true;
        let mut avoid_u = vec![false; n];
        avoid_u[t_u] = true;
        let numerator = chain.reach_prob(chain.initial(), &goal_v, &avoid_u);
        let mut both = vec![false; n];
        both[t_u] = true;
        both[t_v] = true;
        let denominator = chain.reach_prob(chain.initial(), &both, &vec![false; n]);
        evaluations.push((numerator, denominator));
    }
    let keep: Vec<BigRational> = match class {
        StrategyClass::All => evaluations
            .iter()
            .filter(|(_, d)| d >= epsilon)
            .map(|(n, d)| n / d)
            .collect(),
        StrategyClass::ReachOptimal => {
            let p_star = evaluations
                .iter()
                .map(|(_, d)| d.clone())
                .max()
                .unwrap_or_else(BigRational::zero);
            // Rational twin of the solver's reach-optimal tolerance (1e-8).
            let tol = BigRational::new(1.into(), 100_000_000.into());
            evaluations
                .iter()
                .filter(|(_, d)| (d - &p_star).abs() <= tol)
                .map(|(n, d)| n / d)
                .collect()
        }
    };
    if keep.is_empty() {
        return Err(match class {
            StrategyClass::All => OracleError::Undefined,
            StrategyClass::ReachOptimal => OracleError::EmptyClass,
        });
    }
    let lower = keep.iter().min().unwrap().clone();
    let upper = keep.iter().max().unwrap().clone();
    Ok((lower, upper))
}
