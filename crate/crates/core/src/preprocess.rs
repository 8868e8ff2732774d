//! Preprocessing for importance queries: the two-copy product MDP that tracks
//! whether a pivot state has been visited, and the partial strategy fixing a
//! path prefix for path queries.

use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use thiserror::Error;

use crate::mdp::{Choice, Mdp, ModelError, RawMdp, ResolvedPath, StrategyTable};
use crate::reach::reach_set;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("pivot equals the initial state; handle it as a default-value shortcut")]
    PivotIsInitial,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("path visits the target state")]
    PathVisitsTarget,
    #[error("path importance undefined: the path ends outside the backward closure of the target")]
    PathImportanceUndefined,
}

/// Memory mode of a product state: has the pivot been visited yet?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    NotVisited,
    Visited,
}

impl Mode {
    pub fn suffix(self) -> &'static str {
        match self {
            Mode::NotVisited => "u",
            Mode::Visited => "v",
        }
    }
}

/// The product of a base MDP with the one-bit visit memory for a pivot state.
/// Product states are (base state, mode) pairs; entering the pivot flips the
/// mode to `Visited` and it never flips back. The (pivot, NotVisited) copy is
/// unreachable by construction; analyses skip it via `unreachable_copy`.
#[derive(Debug, Clone)]
pub struct ProductMdp {
    base: Mdp,
    pivot: usize,
    product: Mdp,
}

impl ProductMdp {
    pub fn base(&self) -> &Mdp {
        &self.base
    }

    pub fn pivot(&self) -> usize {
        self.pivot
    }

    pub fn product(&self) -> &Mdp {
        &self.product
    }

    pub fn product_index(&self, base_state: usize, mode: Mode) -> usize {
        2 * base_state + (mode == Mode::Visited) as usize
    }

    pub fn back(&self, product_state: usize) -> (usize, Mode) {
        (
            product_state / 2,
            if product_state % 2 == 1 {
                Mode::Visited
            } else {
                Mode::NotVisited
            },
        )
    }

    /// The (pivot, NotVisited) copy, unreachable from the product initial.
    pub fn unreachable_copy(&self) -> usize {
        self.product_index(self.pivot, Mode::NotVisited)
    }

    /// Product copies (not-visited, visited) of a base target state.
    pub fn target_pair(&self, target: usize) -> (usize, usize) {
        (
            self.product_index(target, Mode::NotVisited),
            self.product_index(target, Mode::Visited),
        )
    }

    /// Lift a memoryless base strategy to the product by ignoring the mode.
    pub fn lift(&self, strategy: &StrategyTable) -> StrategyTable {
        let rows = (0..self.product.num_states())
            .map(|p| {
                let (base_state, _) = self.back(p);
                match strategy.choice(base_state) {
                    Choice::Single(a) => vec![(*a, 1.0)],
                    Choice::Mixed(row) => row.clone(),
                }
            })
            .collect();
        StrategyTable::stochastic(rows)
    }
}

/// Build the visit-memory product for `pivot`. The pivot must differ from the
/// initial state, whose importance is 1 by definition.
pub fn memory_product(base: &Mdp, pivot: &str) -> Result<ProductMdp, PreprocessError> {
    let pivot = base.state_index(pivot)?;
    if pivot == base.initial() {
        return Err(PreprocessError::PivotIsInitial);
    }
    let mut raw = RawMdp {
        states: Vec::with_capacity(2 * base.num_states()),
        initial: format!("{}~u", base.state_name(base.initial())),
        transitions: Vec::new(),
        labels: Default::default(),
    };
    for s in 0..base.num_states() {
        raw.states.push(format!("{}~u", base.state_name(s)));
        raw.states.push(format!("{}~v", base.state_name(s)));
    }
    for s in 0..base.num_states() {
        for a in 0..base.num_actions(s) {
            let action = base.action_name(s, a).to_string();
            for t in base.successors(s, a) {
                let to_mode = |from_visited: bool| {
                    if t.to == pivot || from_visited {
                        "v"
                    } else {
                        "u"
                    }
                };
                for from_visited in [false, true] {
                    raw.transitions.push((
                        format!(
                            "{}~{}",
                            base.state_name(s),
                            if from_visited { "v" } else { "u" }
                        ),
                        action.clone(),
                        format!("{}~{}", base.state_name(t.to), to_mode(from_visited)),
                        t.exact.clone(),
                    ));
                }
            }
        }
    }
    let product = Mdp::from_raw(&raw).expect("product of a valid model is valid");
    Ok(ProductMdp {
        base: base.clone(),
        pivot,
        product,
    })
}

/// The forced prefix of a path query: the partial strategy along the path and
/// the probability of observing the prefix itself.
#[derive(Debug, Clone)]
pub struct PrefixConstraint {
    pub path: ResolvedPath,
    pub probability: f64,
    pub exact: BigRational,
}

/// Fix the action choices along a resolved path: returns per-state forced
/// actions (for all but the final state) and the prefix probability. The path
/// must avoid the target and end inside the target's backward closure.
pub fn fix_path_prefix(
    mdp: &Mdp,
    path: &ResolvedPath,
    target: usize,
) -> Result<(Vec<Option<usize>>, PrefixConstraint), PreprocessError> {
    if path.states.contains(&target) {
        return Err(PreprocessError::PathVisitsTarget);
    }
    let last = *path.states.last().expect("resolved paths are non-empty");
    if !reach_set(mdp, target)[last] {
        return Err(PreprocessError::PathImportanceUndefined);
    }
    let mut forced = vec![None; mdp.num_states()];
    let mut exact = BigRational::one();
    for (i, &a) in path.actions.iter().enumerate() {
        forced[path.states[i]] = Some(a);
        exact *= mdp.transition_exact(path.states[i], a, path.states[i + 1]);
    }
    let probability = exact.to_f64().expect("prefix probability fits in f64");
    Ok((
        forced,
        PrefixConstraint {
            path: path.clone(),
            probability,
            exact,
        },
    ))
}
