//! Attribution-based importance analysis for Markov decision processes:
//! how important is a state, or a path, for reaching a target state?
//!
//! The crate models finite MDPs explicitly, evaluates importance under fixed
//! strategies, computes lower/upper importance bounds over strategy classes
//! with an exact in-process search, and exports the corresponding
//! optimization encodings in LP text format for external solvers.

pub mod catalog;
pub mod chain;
pub mod encodings;
pub mod importance;
pub mod mdp;
pub mod oracle;
pub mod par;
pub mod preprocess;
pub mod reach;
pub mod solve;

pub use chain::MarkovChain;
pub use importance::{
    absolute_importance_bounds, importance_bounds, path_importance_bounds, path_importance_under,
    state_importance_bounds, state_importance_under, witness_rows, BatchRow, BoundsAnalysis,
    ImportanceError, ImportanceInterval, ImportanceQuery, Subject, WitnessRow, WitnessSpace,
};
pub use mdp::{Mdp, PathSpec, RawMdp, StrategyTable, ValidationReport};
pub use preprocess::{memory_product, ProductMdp};
pub use solve::{Sense, SolveOptions, StrategyClass};
