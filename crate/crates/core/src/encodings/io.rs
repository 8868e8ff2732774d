//! LP-format serialization, solution-file ingestion, and cross-checking of
//! external results against the in-process solver.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::chain::MarkovChain;
use crate::mdp::StrategyTable;
use crate::preprocess::ProductMdp;
use crate::solve::{self, Sense, SolveOptions, StrategyClass};

use super::{
    EncodeError, Expression, ModelMeta, ObjectiveExpr, OptModel, OptSense, VarDomain, VarRole,
};

/// Agreement bound between external solutions and the exact solver; larger
/// gaps are flagged.
pub const AGREEMENT_BOUND: f64 = 4e-4;

/// Numbers are printed with 17 significant digits, enough to round-trip a
/// double exactly; integral values print bare.
fn number(value: f64) -> String {
    if value == value.trunc() && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value:.16e}")
    }
}

fn push_linear(out: &mut String, expr: &Expression, vars: &[super::Variable]) {
    let mut first = true;
    for (&v, &c) in &expr.linear {
        let sign = if c < 0.0 { "-" } else { "+" };
        let mag = c.abs();
        if first {
            if c < 0.0 {
                out.push_str("- ");
            }
            first = false;
        } else {
            out.push_str(&format!(" {sign} "));
        }
        if (mag - 1.0).abs() < f64::EPSILON {
            out.push_str(&vars[v].name);
        } else {
            out.push_str(&format!("{} {}", number(mag), vars[v].name));
        }
    }
    if first && expr.quadratic.is_empty() {
        out.push('0');
    }
}

fn push_quadratic(out: &mut String, expr: &Expression, vars: &[super::Variable]) {
    if expr.quadratic.is_empty() {
        return;
    }
    if !expr.linear.is_empty() {
        out.push(' ');
    }
    out.push_str("+ [ ");
    let mut first = true;
    for (&(a, b), &c) in &expr.quadratic {
        let sign = if c < 0.0 { "-" } else { "+" };
        let mag = c.abs();
        if first {
            if c < 0.0 {
                out.push_str("- ");
            }
            first = false;
        } else {
            out.push_str(&format!(" {sign} "));
        }
        if (mag - 1.0).abs() >= f64::EPSILON {
            out.push_str(&format!("{} ", number(mag)));
        }
        if a == b {
            out.push_str(&format!("{} ^ 2", vars[a].name));
        } else {
            out.push_str(&format!("{} * {}", vars[a].name, vars[b].name));
        }
    }
    out.push_str(" ]");
}

/// Serialize to the LP text format: deterministic and byte-stable. The first
/// objective fills the objective section; further hierarchical objectives are
/// emitted as structured comments (the format has no multi-objective syntax)
/// and live in the metadata file. Fractional objectives are rejected.
pub fn serialize_lp(model: &OptModel) -> Result<String, EncodeError> {
    let mut seen = HashMap::new();
    for v in &model.variables {
        if v.name
            .chars()
            .any(|c| !c.is_ascii_alphanumeric() && c != '_')
        {
            return Err(EncodeError::NameCollision(v.name.clone()));
        }
        if seen.insert(v.name.clone(), ()).is_some() {
            return Err(EncodeError::NameCollision(v.name.clone()));
        }
    }
    let Some(first) = model.objectives.first() else {
        return Err(EncodeError::FractionalObjective);
    };
    let ObjectiveExpr::Expression(head) = &first.expr else {
        return Err(EncodeError::FractionalObjective);
    };
    let mut out = String::new();
    out.push_str(match first.sense {
        OptSense::Minimize => "Minimize\n",
        OptSense::Maximize => "Maximize\n",
    });
    let mut line = format!(" {}: ", first.name);
    push_linear(&mut line, head, &model.variables);
    push_quadratic(&mut line, head, &model.variables);
    out.push_str(&line);
    out.push('\n');
    for extra in &model.objectives[1..] {
        let ObjectiveExpr::Expression(expr) = &extra.expr else {
            return Err(EncodeError::FractionalObjective);
        };
        let mut line = format!(
            "\\ objective {} ({}): {}: ",
            2,
            match extra.sense {
                OptSense::Minimize => "min",
                OptSense::Maximize => "max",
            },
            extra.name
        );
        push_linear(&mut line, expr, &model.variables);
        push_quadratic(&mut line, expr, &model.variables);
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("Subject To\n");
    for c in &model.constraints {
        let mut line = format!(" {}: ", c.name);
        push_linear(&mut line, &c.expr, &model.variables);
        push_quadratic(&mut line, &c.expr, &model.variables);
        let _ = write!(line, " {} {}", c.comparator.symbol(), number(c.rhs));
        out.push_str(&line);
        out.push('\n');
    }
    let bounded: Vec<&super::Variable> = model
        .variables
        .iter()
        .filter(|v| v.domain == VarDomain::Continuous && (v.lower != 0.0 || v.upper != 1.0))
        .collect();
    if !bounded.is_empty() {
        out.push_str("Bounds\n");
        for v in bounded {
            out.push_str(&format!(
                " {} <= {} <= {}\n",
                number(v.lower),
                v.name,
                number(v.upper)
            ));
        }
    }
    let binaries: Vec<&str> = model
        .variables
        .iter()
        .filter(|v| v.domain == VarDomain::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for name in binaries {
            out.push_str(&format!(" {name}\n"));
        }
    }
    out.push_str("End\n");
    Ok(out)
}

/// Parse a flat `name value` per-line solution file. Blank lines and lines
/// starting with `#` or `\` are ignored.
pub fn parse_solution(text: &str) -> Result<HashMap<String, f64>, EncodeError> {
    let mut values = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('\\') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(EncodeError::MalformedSolution(line.to_string()));
        };
        let value: f64 = value
            .parse()
            .map_err(|_| EncodeError::MalformedSolution(line.to_string()))?;
        values.insert(name.to_string(), value);
    }
    Ok(values)
}

/// Decode the strategy variables of a solution into a strategy table over
/// the product. Rows must sum to one within 1e-6; near-binary rows collapse
/// to deterministic choices. States without strategy variables (the target
/// copies and the pruned pivot copy) default to their first action, which
/// the analyses never consult.
pub fn strategy_from_solution(
    meta: &ModelMeta,
    assignment: &HashMap<String, f64>,
    product: &ProductMdp,
) -> Result<StrategyTable, EncodeError> {
    let pmdp = product.product();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pmdp.num_states()];
    for vm in &meta.variables {
        let VarRole::Strategy { state, action } = &vm.role else {
            continue;
        };
        let value = *assignment
            .get(&vm.name)
            .ok_or_else(|| EncodeError::MissingVariable(vm.name.clone()))?;
        if !(-1e-6..=1.0 + 1e-6).contains(&value) {
            return Err(EncodeError::ValueOutOfRange {
                name: vm.name.clone(),
                value,
            });
        }
        let s = pmdp
            .state_index(state)
            .map_err(|_| EncodeError::MetaMismatch(format!("unknown state `{state}`")))?;
        let a = pmdp
            .action_index(s, action)
            .map_err(|_| EncodeError::MetaMismatch(format!("unknown action `{action}`")))?;
        rows[s].push((a, value.clamp(0.0, 1.0)));
    }
    let mut choices = Vec::with_capacity(pmdp.num_states());
    for (s, mut row) in rows.into_iter().enumerate() {
        if row.is_empty() {
            choices.push(vec![(0, 1.0)]);
            continue;
        }
        let sum: f64 = row.iter().map(|(_, v)| v).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(EncodeError::BadStrategyRow {
                state: pmdp.state_name(s).to_string(),
                sum,
            });
        }
        row.retain(|(_, v)| *v > 1e-9);
        for entry in &mut row {
            entry.1 /= sum;
        }
        choices.push(row);
    }
    Ok(StrategyTable::stochastic(choices))
}

/// Outcome of checking an external solution against exact recomputation and
/// the in-process optimum.
#[derive(Debug, Clone)]
pub struct CrossCheckReport {
    /// Importance implied by the external assignment's variables.
    pub external_objective: f64,
    /// Exact importance of the decoded strategy.
    pub exact_recompute: f64,
    /// Exact optimum over the same class and sense.
    pub solver_optimum: Option<f64>,
    pub recompute_gap: f64,
    pub optimum_gap: Option<f64>,
    /// True when a gap exceeds the agreement bound.
    pub flagged: bool,
}

/// Decode an external solution, recompute its importance exactly, and compare
/// it against both the reported objective value and the exact optimum for the
/// same query.
pub fn cross_check_external(
    product: &ProductMdp,
    target: &str,
    meta: &ModelMeta,
    solution: &HashMap<String, f64>,
    options: &SolveOptions,
) -> Result<CrossCheckReport, EncodeError> {
    if meta.pivot != product.base().state_name(product.pivot()) {
        return Err(EncodeError::MetaMismatch(format!(
            "metadata pivot `{}` does not match the product pivot `{}`",
            meta.pivot,
            product.base().state_name(product.pivot())
        )));
    }
    let t = product
        .base()
        .state_index(target)
        .map_err(|_| EncodeError::MetaMismatch(format!("unknown target `{target}`")))?;
    if meta.target != target {
        return Err(EncodeError::MetaMismatch(format!(
            "metadata target `{}` does not match `{target}`",
            meta.target
        )));
    }
    let table = strategy_from_solution(meta, solution, product)?;

    // Exact recomputation of the decoded strategy's normalized importance.
    let pmdp = product.product();
    let (t_u, t_v) = product.target_pair(t);
    let chain = MarkovChain::induced(pmdp, &table);
    let n = pmdp.num_states();
    let mut goal_v = vec![false; n];
    goal_v[t_v] = true;
    let mut avoid_u = vec![false; n];
    avoid_u[t_u] = true;
    let numerator = chain
        .reach_prob(chain.initial(), &goal_v, &avoid_u)
        .map_err(|e| EncodeError::MetaMismatch(e.to_string()))?;
    let mut both = vec![false; n];
    both[t_u] = true;
    both[t_v] = true;
    let denominator = chain
        .reach_prob(chain.initial(), &both, &vec![false; n])
        .map_err(|e| EncodeError::MetaMismatch(e.to_string()))?;
    let exact_recompute = if denominator > 0.0 {
        numerator / denominator
    } else {
        f64::NAN
    };

    // Importance the external solver reported, via its own variables.
    let initial_name = pmdp.state_name(pmdp.initial());
    let rv_name = format!("rv_{}", super::sanitize(initial_name));
    let ru_name = format!("ru_{}", super::sanitize(initial_name));
    let rv = *solution
        .get(&rv_name)
        .ok_or(EncodeError::MissingVariable(rv_name))?;
    let external_objective = match meta.p_star {
        Some(p_star) => rv / p_star,
        None => {
            let ru = *solution
                .get(&ru_name)
                .ok_or(EncodeError::MissingVariable(ru_name))?;
            rv / (ru + rv)
        }
    };

    // The exact optimum for the same query.
    let class = match meta.encoding.as_str() {
        "qp" => StrategyClass::All,
        _ => StrategyClass::ReachOptimal,
    };
    let mut problem = crate::importance::state_ratio_problem(product, t, true, class, meta.epsilon);
    problem.p_star = Some(match meta.p_star {
        Some(p) => p,
        None => crate::reach::max_reach(product.base(), t).0,
    });
    let sense = match meta.sense {
        OptSense::Minimize => Sense::Min,
        OptSense::Maximize => Sense::Max,
    };
    let solver_optimum = solve::solve_exact(&problem, sense, options)
        .ok()
        .and_then(|r| r.optimal().map(|(v, _)| v));

    let recompute_gap = (external_objective - exact_recompute).abs();
    let optimum_gap = solver_optimum.map(|v| (external_objective - v).abs());
    let flagged = recompute_gap > AGREEMENT_BOUND
        || optimum_gap.map(|g| g > AGREEMENT_BOUND).unwrap_or(false);
    Ok(CrossCheckReport {
        external_objective,
        exact_recompute,
        solver_optimum,
        recompute_gap,
        optimum_gap,
        flagged,
    })
}
