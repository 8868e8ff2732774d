//! Solver-neutral optimization models for importance bounds, their builders,
//! and LP-format serialization for external MILP/QCQP solvers.

mod build;
mod io;

pub use build::{
    build_lp_star, build_qp, build_qp_star, feasibility_precheck, natural_assignment,
    pin_denominator, BuiltModel,
};
pub use io::{
    cross_check_external, parse_solution, serialize_lp, strategy_from_solution, CrossCheckReport,
    AGREEMENT_BOUND,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("variable name `{0}` collides after sanitization")]
    NameCollision(String),
    #[error("the target is unreachable; importance is undefined and the encoding infeasible")]
    TargetUnreachable,
    #[error("fractional objectives cannot be serialized; pin the denominator first")]
    FractionalObjective,
    #[error("malformed solution line: `{0}`")]
    MalformedSolution(String),
    #[error("solution misses variable `{0}`")]
    MissingVariable(String),
    #[error("strategy row at `{state}` sums to {sum}, outside tolerance")]
    BadStrategyRow { state: String, sum: f64 },
    #[error("value {value} of `{name}` is outside [0, 1] beyond tolerance")]
    ValueOutOfRange { name: String, value: f64 },
    #[error("metadata does not match the model: {0}")]
    MetaMismatch(String),
}

/// Constants and switches shared by all encodings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Minimum probability of reaching the target.
    pub epsilon: f64,
    /// Big-M constant deactivating guarded rows.
    pub big_m: f64,
    /// Emit the cross-copy zero rows; not needed for correctness but they
    /// help solvers.
    pub include_redundant_zero: bool,
    /// Fix reachability variables of states outside the backward closure of
    /// the target copies to zero.
    pub restrict_to_reachable: bool,
    /// Override the detected terminal set (absorbing self-loop states) with
    /// explicit product-state names.
    pub terminal_states: Option<Vec<String>>,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            epsilon: 1e-4,
            big_m: 1e16,
            include_redundant_zero: true,
            restrict_to_reachable: true,
            terminal_states: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptSense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarDomain {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub domain: VarDomain,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Comparator {
    Le,
    Eq,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Le => "<=",
            Comparator::Eq => "=",
            Comparator::Ge => ">=",
        }
    }
}

/// Linear-plus-quadratic expression over model variables, kept in sorted maps
/// so construction order never leaks into serialized output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expression {
    pub linear: BTreeMap<usize, f64>,
    pub quadratic: BTreeMap<(usize, usize), f64>,
}

impl Expression {
    pub fn add_linear(&mut self, var: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let slot = self.linear.entry(var).or_insert(0.0);
        *slot += coeff;
        if *slot == 0.0 {
            self.linear.remove(&var);
        }
    }

    pub fn add_quadratic(&mut self, a: usize, b: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let key = if a <= b { (a, b) } else { (b, a) };
        let slot = self.quadratic.entry(key).or_insert(0.0);
        *slot += coeff;
        if *slot == 0.0 {
            self.quadratic.remove(&key);
        }
    }

    pub fn is_quadratic(&self) -> bool {
        !self.quadratic.is_empty()
    }

    pub fn eval(&self, assignment: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|(v, c)| c * assignment[*v]).sum();
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|((a, b), c)| c * assignment[*a] * assignment[*b])
            .sum();
        lin + quad
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveExpr {
    Expression(Expression),
    /// Ratio objective; kept for the in-process route, rejected by the
    /// serializer until the denominator is pinned.
    Fractional {
        numerator: Expression,
        denominator: Expression,
    },
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub name: String,
    pub sense: OptSense,
    pub expr: ObjectiveExpr,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub expr: Expression,
    pub comparator: Comparator,
    pub rhs: f64,
}

/// A complete optimization model. Multiple objectives are hierarchical:
/// later ones are optimized subject to earlier ones being optimal.
#[derive(Debug, Clone, Default)]
pub struct OptModel {
    pub name: String,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objectives: Vec<Objective>,
}

impl OptModel {
    pub fn add_variable(
        &mut self,
        name: String,
        domain: VarDomain,
        lower: f64,
        upper: f64,
    ) -> Result<usize, EncodeError> {
        if self.variables.iter().any(|v| v.name == name) {
            return Err(EncodeError::NameCollision(name));
        }
        self.variables.push(Variable {
            name,
            domain,
            lower,
            upper,
        });
        Ok(self.variables.len() - 1)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn has_quadratic_constraints(&self) -> bool {
        self.constraints.iter().any(|c| c.expr.is_quadratic())
    }

    pub fn binary_count(&self) -> usize {
        self.variables
            .iter()
            .filter(|v| v.domain == VarDomain::Binary)
            .count()
    }

    /// Violated constraint and bound names at `assignment`.
    pub fn check_feasible(&self, assignment: &[f64], tol: f64) -> Vec<String> {
        let mut violated = Vec::new();
        for (i, v) in self.variables.iter().enumerate() {
            if assignment[i] < v.lower - tol || assignment[i] > v.upper + tol {
                violated.push(format!("bounds:{}", v.name));
            }
        }
        for c in &self.constraints {
            let value = c.expr.eval(assignment);
            let ok = match c.comparator {
                Comparator::Le => value <= c.rhs + tol,
                Comparator::Eq => (value - c.rhs).abs() <= tol,
                Comparator::Ge => value >= c.rhs - tol,
            };
            if !ok {
                violated.push(c.name.clone());
            }
        }
        violated
    }

    /// Value of objective `idx` at `assignment`.
    pub fn objective_value(&self, idx: usize, assignment: &[f64]) -> f64 {
        match &self.objectives[idx].expr {
            ObjectiveExpr::Expression(e) => e.eval(assignment),
            ObjectiveExpr::Fractional {
                numerator,
                denominator,
            } => numerator.eval(assignment) / denominator.eval(assignment),
        }
    }
}

/// Sanitize an identifier for LP output: every character outside
/// `[A-Za-z0-9_]` becomes `_`.
pub fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Roles of the variables of a built model, recorded in the metadata file so
/// solutions can be decoded later.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarRole {
    /// Probability of picking `action` at product state `state`.
    Strategy { state: String, action: String },
    /// Probability of reaching the target copy `copy` from `state`.
    Reach { state: String, copy: String },
    /// State-ordering weight of `state`.
    Order { state: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarMeta {
    pub name: String,
    pub role: VarRole,
}

/// Companion metadata written next to every exported model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub version: u32,
    pub encoding: String,
    pub sense: OptSense,
    pub target: String,
    pub pivot: String,
    pub epsilon: f64,
    pub big_m: f64,
    pub p_star: Option<f64>,
    /// Printable objective summaries in hierarchy order.
    pub objectives: Vec<String>,
    pub variables: Vec<VarMeta>,
}
