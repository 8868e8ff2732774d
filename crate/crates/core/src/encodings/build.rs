//! Builders for the three optimization encodings over a visit-memory product:
//! the fractional quadratic program over all strategies, its
//! reachability-optimal quadratic variant, and the binary linear variant.

use std::collections::BTreeSet;

use crate::chain::MarkovChain;
use crate::mdp::{Mdp, StrategyTable};
use crate::preprocess::ProductMdp;
use crate::reach::reach_set;

use super::{
    sanitize, Comparator, EncodeError, EncodingConfig, Expression, ModelMeta, Objective,
    ObjectiveExpr, OptModel, OptSense, VarDomain, VarMeta, VarRole,
};

/// A model plus the metadata needed to decode its solutions.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub model: OptModel,
    pub meta: ModelMeta,
}

/// Copies of the target state inside the product.
#[derive(Clone, Copy, PartialEq)]
enum Copy {
    NotVisited,
    Visited,
}

impl Copy {
    fn tag(self) -> &'static str {
        match self {
            Copy::NotVisited => "u",
            Copy::Visited => "v",
        }
    }
}

/// Shared scaffolding: variable layout and the constraint families common to
/// all encodings.
struct Scaffold<'a> {
    product: &'a ProductMdp,
    pmdp: &'a Mdp,
    cfg: &'a EncodingConfig,
    target_u: usize,
    target_v: usize,
    /// Product states that take part in the encoding (the unreachable pivot
    /// copy is dropped).
    active: Vec<usize>,
    /// Active states other than the two target copies.
    decision: Vec<usize>,
    /// Terminal states: absorbing self-loops plus the target copies.
    terminal: Vec<bool>,
    /// Backward closures of the two target copies.
    backward_u: Vec<bool>,
    backward_v: Vec<bool>,
    model: OptModel,
    meta_vars: Vec<VarMeta>,
    strategy_vars: Vec<Vec<Option<usize>>>,
    reach_vars: Vec<[Option<usize>; 2]>,
    order_vars: Vec<Option<usize>>,
}

impl<'a> Scaffold<'a> {
    fn new(product: &'a ProductMdp, target: usize, cfg: &'a EncodingConfig, name: String) -> Self {
        let pmdp = product.product();
        let (target_u, target_v) = product.target_pair(target);
        let skip = product.unreachable_copy();
        let active: Vec<usize> = (0..pmdp.num_states()).filter(|&s| s != skip).collect();
        let decision: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&s| s != target_u && s != target_v)
            .collect();
        let override_set: Option<BTreeSet<&str>> = cfg
            .terminal_states
            .as_ref()
            .map(|names| names.iter().map(String::as_str).collect());
        let terminal: Vec<bool> = (0..pmdp.num_states())
            .map(|s| {
                s == target_u
                    || s == target_v
                    || match &override_set {
                        Some(set) => set.contains(pmdp.state_name(s)),
                        None => pmdp.is_absorbing(s),
                    }
            })
            .collect();
        Scaffold {
            product,
            pmdp,
            cfg,
            target_u,
            target_v,
            active,
            decision,
            terminal,
            backward_u: reach_set(pmdp, target_u),
            backward_v: reach_set(pmdp, target_v),
            model: OptModel {
                name,
                ..OptModel::default()
            },
            meta_vars: Vec::new(),
            strategy_vars: vec![Vec::new(); pmdp.num_states()],
            reach_vars: vec![[None, None]; pmdp.num_states()],
            order_vars: vec![None; pmdp.num_states()],
        }
    }

    fn reachable_copy(&self, state: usize, copy: Copy) -> bool {
        match copy {
            Copy::NotVisited => self.backward_u[state],
            Copy::Visited => self.backward_v[state],
        }
    }

    fn add_strategy_vars(&mut self, domain: VarDomain) -> Result<(), EncodeError> {
        for &s in &self.decision.clone() {
            let mut slots = Vec::new();
            for a in 0..self.pmdp.num_actions(s) {
                let name = format!(
                    "p_{}__{}",
                    sanitize(self.pmdp.state_name(s)),
                    sanitize(self.pmdp.action_name(s, a))
                );
                let var = self.model.add_variable(name.clone(), domain, 0.0, 1.0)?;
                self.meta_vars.push(VarMeta {
                    name,
                    role: VarRole::Strategy {
                        state: self.pmdp.state_name(s).to_string(),
                        action: self.pmdp.action_name(s, a).to_string(),
                    },
                });
                slots.push(Some(var));
            }
            self.strategy_vars[s] = slots;
        }
        Ok(())
    }

    fn add_reach_vars(&mut self) -> Result<(), EncodeError> {
        for &s in &self.active.clone() {
            for copy in [Copy::NotVisited, Copy::Visited] {
                // Fixing unreachable entries to zero implements the
                // restriction to states that can reach the target copies.
                let fixed_zero = self.cfg.restrict_to_reachable
                    && !self.reachable_copy(s, copy)
                    && s != self.target_u
                    && s != self.target_v;
                let upper = if fixed_zero { 0.0 } else { 1.0 };
                let name = format!("r{}_{}", copy.tag(), sanitize(self.pmdp.state_name(s)));
                let var =
                    self.model
                        .add_variable(name.clone(), VarDomain::Continuous, 0.0, upper)?;
                self.meta_vars.push(VarMeta {
                    name,
                    role: VarRole::Reach {
                        state: self.pmdp.state_name(s).to_string(),
                        copy: copy.tag().to_string(),
                    },
                });
                self.reach_vars[s][(copy == Copy::Visited) as usize] = Some(var);
            }
        }
        Ok(())
    }

    fn add_order_vars(&mut self) -> Result<(), EncodeError> {
        for &s in &self.active.clone() {
            let name = format!("w_{}", sanitize(self.pmdp.state_name(s)));
            let var = self.model.add_variable(
                name.clone(),
                VarDomain::Continuous,
                -self.cfg.big_m,
                self.cfg.big_m,
            )?;
            self.meta_vars.push(VarMeta {
                name,
                role: VarRole::Order {
                    state: self.pmdp.state_name(s).to_string(),
                },
            });
            self.order_vars[s] = Some(var);
        }
        Ok(())
    }

    fn reach_var(&self, state: usize, copy: Copy) -> Option<usize> {
        self.reach_vars[state][(copy == Copy::Visited) as usize]
    }

    fn constrain(&mut self, name: String, expr: Expression, comparator: Comparator, rhs: f64) {
        self.model.constraints.push(super::Constraint {
            name,
            expr,
            comparator,
            rhs,
        });
    }

    /// One probability-simplex row per decision state.
    fn add_simplex_rows(&mut self) {
        for &s in &self.decision.clone() {
            let mut expr = Expression::default();
            for var in self.strategy_vars[s].iter().flatten() {
                expr.add_linear(*var, 1.0);
            }
            self.constrain(
                format!("simplex_{}", sanitize(self.pmdp.state_name(s))),
                expr,
                Comparator::Eq,
                1.0,
            );
        }
    }

    /// Pin the reach values of the target copies: own copy one, cross copy
    /// zero (the latter behind the redundancy switch).
    fn add_target_fixing_rows(&mut self) {
        for (state, copy, value, cross) in [
            (self.target_u, Copy::NotVisited, 1.0, false),
            (self.target_v, Copy::Visited, 1.0, false),
            (self.target_u, Copy::Visited, 0.0, true),
            (self.target_v, Copy::NotVisited, 0.0, true),
        ] {
            if cross && !self.cfg.include_redundant_zero {
                continue;
            }
            let Some(var) = self.reach_var(state, copy) else {
                continue;
            };
            let mut expr = Expression::default();
            expr.add_linear(var, 1.0);
            let kind = if cross { "zero" } else { "one" };
            self.constrain(
                format!("fix_{kind}_{}", self.model.variables[var].name),
                expr,
                Comparator::Eq,
                value,
            );
        }
    }

    /// The linear expression `sum of reach copies at the initial state`.
    fn initial_reach_sum(&self) -> Expression {
        let initial = self.pmdp.initial();
        let mut expr = Expression::default();
        for copy in [Copy::NotVisited, Copy::Visited] {
            if let Some(var) = self.reach_var(initial, copy) {
                expr.add_linear(var, 1.0);
            }
        }
        expr
    }

    /// Quadratic flow rows: each reach value equals the strategy-weighted
    /// one-step backup, for states that can reach the copy at all.
    fn add_quadratic_flow_rows(&mut self) {
        for &s in &self.decision.clone() {
            for copy in [Copy::NotVisited, Copy::Visited] {
                if !self.reachable_copy(s, copy) {
                    continue;
                }
                let Some(own) = self.reach_var(s, copy) else {
                    continue;
                };
                let mut expr = Expression::default();
                expr.add_linear(own, 1.0);
                for a in 0..self.pmdp.num_actions(s) {
                    let p_sa = self.strategy_vars[s][a].expect("decision state has vars");
                    for t in self.pmdp.successors(s, a) {
                        if let Some(succ) = self.reach_var(t.to, copy) {
                            if self.model.variables[succ].upper > 0.0 {
                                expr.add_quadratic(p_sa, succ, -t.prob);
                            }
                        }
                    }
                }
                self.constrain(
                    format!("flow_{}_{}", copy.tag(), sanitize(self.pmdp.state_name(s))),
                    expr,
                    Comparator::Eq,
                    0.0,
                );
            }
        }
    }

    fn objective_reach_initial_visited(&self) -> Expression {
        let mut expr = Expression::default();
        if let Some(var) = self.reach_var(self.pmdp.initial(), Copy::Visited) {
            expr.add_linear(var, 1.0);
        }
        expr
    }

    fn finish(self, meta: MetaSeed) -> BuiltModel {
        let objectives = self
            .model
            .objectives
            .iter()
            .map(|o| {
                format!(
                    "{} {}",
                    match o.sense {
                        OptSense::Minimize => "min",
                        OptSense::Maximize => "max",
                    },
                    o.name
                )
            })
            .collect();
        BuiltModel {
            meta: ModelMeta {
                version: 1,
                encoding: meta.encoding,
                sense: meta.sense,
                target: meta.target,
                pivot: self
                    .product
                    .base()
                    .state_name(self.product.pivot())
                    .to_string(),
                epsilon: self.cfg.epsilon,
                big_m: self.cfg.big_m,
                p_star: meta.p_star,
                objectives,
                variables: self.meta_vars,
            },
            model: self.model,
        }
    }
}

struct MetaSeed {
    encoding: String,
    sense: OptSense,
    target: String,
    p_star: Option<f64>,
}

/// Refuse queries whose importance is undefined before building any model:
/// the target must be reachable from the product initial state.
pub fn feasibility_precheck(product: &ProductMdp, target: usize) -> Result<(), EncodeError> {
    let (t_u, t_v) = product.target_pair(target);
    let reach_u = reach_set(product.product(), t_u);
    let reach_v = reach_set(product.product(), t_v);
    let initial = product.product().initial();
    if reach_u[initial] || reach_v[initial] {
        Ok(())
    } else {
        Err(EncodeError::TargetUnreachable)
    }
}

/// The fractional quadratic encoding over all strategies: simplex rows,
/// target fixing, the epsilon floor on reaching the target, quadratic flow
/// rows, and quadratic state-ordering rows forcing progress to terminals.
/// The objective is the importance ratio itself.
pub fn build_qp(
    product: &ProductMdp,
    target: usize,
    sense: OptSense,
    cfg: &EncodingConfig,
) -> Result<BuiltModel, EncodeError> {
    let mut sc = Scaffold::new(product, target, cfg, "qp".into());
    sc.add_strategy_vars(VarDomain::Continuous)?;
    sc.add_reach_vars()?;
    sc.add_order_vars()?;
    sc.add_simplex_rows();
    sc.add_target_fixing_rows();
    sc.constrain(
        "min_reach".into(),
        sc.initial_reach_sum(),
        Comparator::Ge,
        cfg.epsilon,
    );
    sc.add_quadratic_flow_rows();
    // Ordering rows: every non-terminal state needs a strategy-weighted
    // weight-decreasing step, which rules out inflated fixpoints.
    for &s in &sc.decision.clone() {
        if sc.terminal[s] {
            continue;
        }
        let own = sc.order_vars[s].unwrap();
        let mut expr = Expression::default();
        expr.add_linear(own, 1.0);
        for a in 0..sc.pmdp.num_actions(s) {
            let p_sa = sc.strategy_vars[s][a].unwrap();
            for t in sc.pmdp.successors(s, a) {
                if let Some(succ) = sc.order_vars[t.to] {
                    expr.add_quadratic(p_sa, succ, -t.prob);
                }
            }
        }
        self_order_row(&mut sc, s, expr);
    }
    let numerator = sc.objective_reach_initial_visited();
    let denominator = sc.initial_reach_sum();
    sc.model.objectives.push(Objective {
        name: "importance_ratio".into(),
        sense,
        expr: ObjectiveExpr::Fractional {
            numerator,
            denominator,
        },
    });
    Ok(sc.finish(MetaSeed {
        encoding: "qp".into(),
        sense,
        target: product.base().state_name(target).to_string(),
        p_star: None,
    }))
}

fn self_order_row(sc: &mut Scaffold, s: usize, expr: Expression) {
    sc.constrain(
        format!("order_{}", sanitize(sc.pmdp.state_name(s))),
        expr,
        Comparator::Le,
        -1.0,
    );
}

/// The reachability-optimal quadratic encoding: the ordering rows are
/// replaced by the fixed optimal-reachability equality plus action-wise
/// dominance rows, so only locally optimal strategies stay feasible. With
/// `hierarchical` the reach-sum minimization precedes the importance
/// objective; otherwise the importance objective stands alone. Either way
/// the objective is linear because the denominator is a constant.
pub fn build_qp_star(
    product: &ProductMdp,
    target: usize,
    p_star: f64,
    sense: OptSense,
    hierarchical: bool,
    cfg: &EncodingConfig,
) -> Result<BuiltModel, EncodeError> {
    if p_star <= 0.0 {
        return Err(EncodeError::TargetUnreachable);
    }
    let mut sc = Scaffold::new(product, target, cfg, "qpstar".into());
    sc.add_strategy_vars(VarDomain::Continuous)?;
    sc.add_reach_vars()?;
    sc.add_simplex_rows();
    sc.add_target_fixing_rows();
    sc.constrain(
        "total_reach".into(),
        sc.initial_reach_sum(),
        Comparator::Eq,
        p_star,
    );
    sc.add_quadratic_flow_rows();
    add_dominance_rows(&mut sc);
    if hierarchical {
        let mut sum = Expression::default();
        for &s in &sc.active.clone() {
            for copy in [Copy::NotVisited, Copy::Visited] {
                if let Some(var) = sc.reach_var(s, copy) {
                    sum.add_linear(var, 1.0);
                }
            }
        }
        sc.model.objectives.push(Objective {
            name: "reach_sum".into(),
            sense: OptSense::Minimize,
            expr: ObjectiveExpr::Expression(sum),
        });
    }
    let importance = sc.objective_reach_initial_visited();
    sc.model.objectives.push(Objective {
        name: "importance".into(),
        sense,
        expr: ObjectiveExpr::Expression(importance),
    });
    Ok(sc.finish(MetaSeed {
        encoding: "qpstar".into(),
        sense,
        target: product.base().state_name(target).to_string(),
        p_star: Some(p_star),
    }))
}

/// Action-wise lower bounds on the per-state reach sums: the sum at `s` must
/// dominate the backup of every enabled action, so strategy mass can only sit
/// on locally optimal actions.
fn add_dominance_rows(sc: &mut Scaffold) {
    for &s in &sc.decision.clone() {
        for a in 0..sc.pmdp.num_actions(s) {
            let mut expr = Expression::default();
            for copy in [Copy::NotVisited, Copy::Visited] {
                if let Some(var) = sc.reach_var(s, copy) {
                    expr.add_linear(var, 1.0);
                }
            }
            for t in sc.pmdp.successors(s, a) {
                for copy in [Copy::NotVisited, Copy::Visited] {
                    if let Some(succ) = sc.reach_var(t.to, copy) {
                        expr.add_linear(succ, -t.prob);
                    }
                }
            }
            sc.constrain(
                format!(
                    "dominance_{}__{}",
                    sanitize(sc.pmdp.state_name(s)),
                    sanitize(sc.pmdp.action_name(s, a))
                ),
                expr,
                Comparator::Ge,
                0.0,
            );
        }
    }
}

/// The binary linear encoding: strategy variables are binary, the flow rows
/// become big-M-free one-sided bounds active only for the chosen action, and
/// the ordering rows are guarded by the big-M constant. No quadratic terms
/// anywhere.
pub fn build_lp_star(
    product: &ProductMdp,
    target: usize,
    p_star: f64,
    sense: OptSense,
    cfg: &EncodingConfig,
) -> Result<BuiltModel, EncodeError> {
    if p_star <= 0.0 {
        return Err(EncodeError::TargetUnreachable);
    }
    let mut sc = Scaffold::new(product, target, cfg, "lpstar".into());
    sc.add_strategy_vars(VarDomain::Binary)?;
    sc.add_reach_vars()?;
    sc.add_order_vars()?;
    sc.add_simplex_rows();
    sc.add_target_fixing_rows();
    sc.constrain(
        "total_reach".into(),
        sc.initial_reach_sum(),
        Comparator::Eq,
        p_star,
    );
    // Per-action flow bounds: p_{s,copy} <= backup_a + (1 - p_{s,a}).
    for &s in &sc.decision.clone() {
        for copy in [Copy::NotVisited, Copy::Visited] {
            if !sc.reachable_copy(s, copy) {
                continue;
            }
            let Some(own) = sc.reach_var(s, copy) else {
                continue;
            };
            for a in 0..sc.pmdp.num_actions(s) {
                let p_sa = sc.strategy_vars[s][a].unwrap();
                let mut expr = Expression::default();
                expr.add_linear(own, 1.0);
                expr.add_linear(p_sa, 1.0);
                for t in sc.pmdp.successors(s, a) {
                    if let Some(succ) = sc.reach_var(t.to, copy) {
                        if sc.model.variables[succ].upper > 0.0 {
                            expr.add_linear(succ, -t.prob);
                        }
                    }
                }
                sc.constrain(
                    format!(
                        "flow_{}_{}__{}",
                        copy.tag(),
                        sanitize(sc.pmdp.state_name(s)),
                        sanitize(sc.pmdp.action_name(s, a))
                    ),
                    expr,
                    Comparator::Le,
                    1.0,
                );
            }
        }
    }
    // Ordering rows guarded by big M: active only for the chosen action.
    let big_m = cfg.big_m;
    for &s in &sc.decision.clone() {
        if sc.terminal[s] {
            continue;
        }
        let own = sc.order_vars[s].unwrap();
        for a in 0..sc.pmdp.num_actions(s) {
            let p_sa = sc.strategy_vars[s][a].unwrap();
            let mut expr = Expression::default();
            expr.add_linear(own, 1.0);
            expr.add_linear(p_sa, big_m);
            for t in sc.pmdp.successors(s, a) {
                if let Some(succ) = sc.order_vars[t.to] {
                    expr.add_linear(succ, -t.prob);
                }
            }
            sc.constrain(
                format!(
                    "order_{}__{}",
                    sanitize(sc.pmdp.state_name(s)),
                    sanitize(sc.pmdp.action_name(s, a))
                ),
                expr,
                Comparator::Le,
                big_m - 1.0,
            );
        }
    }
    let importance = sc.objective_reach_initial_visited();
    sc.model.objectives.push(Objective {
        name: "importance".into(),
        sense,
        expr: ObjectiveExpr::Expression(importance),
    });
    Ok(sc.finish(MetaSeed {
        encoding: "lpstar".into(),
        sense,
        target: product.base().state_name(target).to_string(),
        p_star: Some(p_star),
    }))
}

/// Replace a fractional objective by its numerator and pin the denominator to
/// `p_star` with an equality row. This is the rewrite that makes the
/// fractional encoding serializable.
pub fn pin_denominator(model: &mut OptModel, p_star: f64) -> Result<(), EncodeError> {
    if p_star <= 0.0 {
        return Err(EncodeError::TargetUnreachable);
    }
    let Some(pos) = model
        .objectives
        .iter()
        .position(|o| matches!(o.expr, ObjectiveExpr::Fractional { .. }))
    else {
        return Ok(());
    };
    let ObjectiveExpr::Fractional {
        numerator,
        denominator,
    } = model.objectives[pos].expr.clone()
    else {
        unreachable!();
    };
    model.objectives[pos].expr = ObjectiveExpr::Expression(numerator);
    model.constraints.push(super::Constraint {
        name: "total_reach".into(),
        expr: denominator,
        comparator: Comparator::Eq,
        rhs: p_star,
    });
    Ok(())
}

/// The assignment a concrete strategy induces on a built model: strategy
/// variables from the table, reach variables from exact chain analysis, and
/// ordering weights as negated expected steps to a terminal state. Useful to
/// check encodings for completeness without an external solver. Returns
/// `None` when the strategy admits no ordering weights (some state never
/// reaches a terminal).
pub fn natural_assignment(
    product: &ProductMdp,
    target: usize,
    built: &BuiltModel,
    strategy: &StrategyTable,
) -> Option<Vec<f64>> {
    let pmdp = product.product();
    let (t_u, t_v) = product.target_pair(target);
    let chain = MarkovChain::induced(pmdp, strategy);
    let n = pmdp.num_states();
    let mut goal_u = vec![false; n];
    goal_u[t_u] = true;
    let mut avoid_u = vec![false; n];
    avoid_u[t_v] = true;
    let reach_u = chain.reach_prob_vector(&goal_u, &avoid_u).ok()?;
    let mut goal_v = vec![false; n];
    goal_v[t_v] = true;
    let mut avoid_v = vec![false; n];
    avoid_v[t_u] = true;
    let reach_v = chain.reach_prob_vector(&goal_v, &avoid_v).ok()?;

    // Expected steps to a terminal state under the strategy; undefined when
    // absorption is not almost sure.
    let terminal: Vec<bool> = (0..n)
        .map(|s| s == t_u || s == t_v || pmdp.is_absorbing(s))
        .collect();
    let steps = expected_steps(&chain, &terminal)?;

    let mut assignment = vec![0.0; built.model.variables.len()];
    for (i, vm) in built.meta.variables.iter().enumerate() {
        debug_assert_eq!(built.model.variables[i].name, vm.name);
        assignment[i] = match &vm.role {
            VarRole::Strategy { state, action } => {
                let s = pmdp.state_index(state).ok()?;
                let a = pmdp.action_index(s, action).ok()?;
                strategy.prob(s, a)
            }
            VarRole::Reach { state, copy } => {
                let s = pmdp.state_index(state).ok()?;
                if copy == "u" {
                    reach_u[s]
                } else {
                    reach_v[s]
                }
            }
            VarRole::Order { state } => {
                let s = pmdp.state_index(state).ok()?;
                -steps[s]
            }
        };
    }
    Some(assignment)
}

/// Expected number of steps to reach `terminal` from each state, or `None`
/// when absorption is not almost sure from some state.
fn expected_steps(chain: &MarkovChain, terminal: &[bool]) -> Option<Vec<f64>> {
    let n = terminal.len();
    let reach = chain.reach_prob_vector(terminal, &vec![false; n]).ok()?;
    if reach.iter().any(|&p| p < 1.0 - 1e-9) {
        return None;
    }
    // Solve e = 1 + P e on non-terminal states by the same elimination the
    // hitting probabilities use, via a two-target trick: e_s equals the sum
    // over k of the probability of surviving k steps; here a small dense
    // solve is clearer.
    let unknowns: Vec<usize> = (0..n).filter(|&s| !terminal[s]).collect();
    let mut col_of = vec![usize::MAX; n];
    for (i, &s) in unknowns.iter().enumerate() {
        col_of[s] = i;
    }
    let m = unknowns.len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![1.0; m];
    for (i, &s) in unknowns.iter().enumerate() {
        a[i][i] = 1.0;
        for (to, p) in chain.row(s) {
            if col_of[*to] != usize::MAX {
                a[i][col_of[*to]] -= p;
            }
        }
    }
    // Forward elimination with partial pivoting.
    for k in 0..m {
        let pivot = (k..m).max_by(|&x, &y| a[x][k].abs().partial_cmp(&a[y][k].abs()).unwrap())?;
        if a[pivot][k].abs() < 1e-300 {
            return None;
        }
        a.swap(k, pivot);
        b.swap(k, pivot);
        for i in k + 1..m {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..m {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut acc = b[i];
        for j in i + 1..m {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    let mut steps = vec![0.0; n];
    for (i, &s) in unknowns.iter().enumerate() {
        steps[s] = x[i];
    }
    Some(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::preprocess::memory_product;

    fn nonmono_product() -> (crate::mdp::Mdp, ProductMdp, usize) {
        let mdp = catalog::nonmono();
        let t = mdp.state_index("st").unwrap();
        let product = memory_product(&mdp, "s1").unwrap();
        (mdp, product, t)
    }

    #[test]
    fn qp_counts_on_the_nonmono_product() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let built = build_qp(&product, t, OptSense::Minimize, &cfg).unwrap();
        let model = &built.model;
        // 9 active states (10 minus the pruned pivot copy); 7 decision
        // states; strategy variables follow the enabled actions: both copies
        // of s2 have two, everything else one.
        let strategy = built
            .meta
            .variables
            .iter()
            .filter(|v| matches!(v.role, VarRole::Strategy { .. }))
            .count();
        assert_eq!(strategy, 9);
        let reach = built
            .meta
            .variables
            .iter()
            .filter(|v| matches!(v.role, VarRole::Reach { .. }))
            .count();
        assert_eq!(reach, 18);
        let order = built
            .meta
            .variables
            .iter()
            .filter(|v| matches!(v.role, VarRole::Order { .. }))
            .count();
        assert_eq!(order, 9);
        assert_eq!(model.variables.len(), 36);

        let count = |prefix: &str| {
            model
                .constraints
                .iter()
                .filter(|c| c.name.starts_with(prefix))
                .count()
        };
        assert_eq!(count("simplex_"), 7);
        assert_eq!(count("fix_one_"), 2);
        assert_eq!(count("fix_zero_"), 2);
        assert_eq!(count("min_reach"), 1);
        // Flow rows only where the copy is reachable: 5 toward the visited
        // copy, 2 toward the bypassing copy.
        assert_eq!(count("flow_v_"), 5);
        assert_eq!(count("flow_u_"), 2);
        // Ordering rows for non-terminal decision states.
        assert_eq!(count("order_"), 5);
        assert_eq!(model.constraints.len(), 24);
        assert!(model.has_quadratic_constraints());
        assert!(matches!(
            model.objectives[0].expr,
            ObjectiveExpr::Fractional { .. }
        ));
    }

    #[test]
    fn redundant_zero_rows_follow_the_switch() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig {
            include_redundant_zero: false,
            ..Default::default()
        };
        let built = build_qp(&product, t, OptSense::Minimize, &cfg).unwrap();
        assert_eq!(
            built
                .model
                .constraints
                .iter()
                .filter(|c| c.name.starts_with("fix_zero_"))
                .count(),
            0
        );
    }

    #[test]
    fn qpstar_pins_the_denominator_and_stays_linear_in_the_objective() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let built = build_qp_star(&product, t, 0.91, OptSense::Minimize, false, &cfg).unwrap();
        let row = built
            .model
            .constraints
            .iter()
            .find(|c| c.name == "total_reach")
            .expect("equality present");
        assert_eq!(row.comparator, Comparator::Eq);
        assert_eq!(row.rhs, 0.91);
        assert_eq!(built.model.objectives.len(), 1);
        assert!(
            matches!(&built.model.objectives[0].expr, ObjectiveExpr::Expression(e) if !e.is_quadratic())
        );
        // Quadratic flow rows remain; dominance rows are linear.
        assert!(built.model.has_quadratic_constraints());
        let dominance = built
            .model
            .constraints
            .iter()
            .filter(|c| c.name.starts_with("dominance_"))
            .count();
        assert_eq!(dominance, 9);

        let hier = build_qp_star(&product, t, 0.91, OptSense::Maximize, true, &cfg).unwrap();
        assert_eq!(hier.model.objectives.len(), 2);
        assert_eq!(hier.model.objectives[0].name, "reach_sum");
        assert!(build_qp_star(&product, t, 0.0, OptSense::Minimize, false, &cfg).is_err());
    }

    #[test]
    fn lpstar_is_binary_and_linear() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let built = build_lp_star(&product, t, 0.91, OptSense::Minimize, &cfg).unwrap();
        assert!(!built.model.has_quadratic_constraints());
        for (v, m) in built.model.variables.iter().zip(&built.meta.variables) {
            if matches!(m.role, VarRole::Strategy { .. }) {
                assert_eq!(v.domain, VarDomain::Binary, "{}", v.name);
            } else {
                assert_eq!(v.domain, VarDomain::Continuous, "{}", v.name);
            }
        }
        assert_eq!(built.model.binary_count(), 9);
        // Big-M rows carry the configured constant.
        let order_row = built
            .model
            .constraints
            .iter()
            .find(|c| c.name.starts_with("order_"))
            .expect("ordering rows present");
        assert_eq!(order_row.rhs, 1e16 - 1.0);
    }

    #[test]
    fn feasibility_precheck_matches_reachability() {
        let (_mdp, product, t) = nonmono_product();
        assert!(feasibility_precheck(&product, t).is_ok());
        let mut raw = catalog::nonmono_raw();
        raw.states.push("iso".into());
        raw.transitions.push((
            "iso".into(),
            "stay".into(),
            "iso".into(),
            num_rational::BigRational::from_integer(1.into()),
        ));
        let mdp = crate::mdp::Mdp::from_raw(&raw).unwrap();
        let product = memory_product(&mdp, "s1").unwrap();
        let iso = mdp.state_index("iso").unwrap();
        assert!(matches!(
            feasibility_precheck(&product, iso),
            Err(EncodeError::TargetUnreachable)
        ));
    }

    #[test]
    fn natural_assignments_are_feasible_and_reproduce_importance() {
        let (mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let qp = build_qp(&product, t, OptSense::Minimize, &cfg).unwrap();
        for base in [
            catalog::nonmono_strategy_initial(),
            catalog::nonmono_strategy_updated(),
        ] {
            let lifted = product.lift(&base);
            let assignment =
                natural_assignment(&product, t, &qp, &lifted).expect("absorbing strategy");
            let violated = qp.model.check_feasible(&assignment, 1e-7);
            assert!(violated.is_empty(), "violated: {violated:?}");
            let objective = qp.model.objective_value(0, &assignment);
            let subject = "s1";
            let direct =
                crate::importance::state_importance_under(&mdp, &base, subject, "st").unwrap();
            assert!((objective - direct).abs() < 1e-6, "{objective} vs {direct}");
        }
    }

    #[test]
    fn stochastic_assignment_satisfies_the_fractional_encoding() {
        let (mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let qp = build_qp(&product, t, OptSense::Minimize, &cfg).unwrap();
        let mix = crate::mdp::StrategyTable::stochastic(vec![
            vec![(0, 1.0)],
            vec![(0, 1.0)],
            vec![(0, 0.25), (1, 0.75)],
            vec![(0, 1.0)],
            vec![(0, 1.0)],
        ]);
        let lifted = product.lift(&mix);
        let assignment = natural_assignment(&product, t, &qp, &lifted).unwrap();
        assert!(qp.model.check_feasible(&assignment, 1e-7).is_empty());
        let objective = qp.model.objective_value(0, &assignment);
        let direct = crate::importance::state_importance_under(&mdp, &mix, "s1", "st").unwrap();
        assert!((objective - direct).abs() < 1e-6);
    }

    #[test]
    fn lpstar_accepts_exactly_the_reach_optimal_strategies() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let built = build_lp_star(&product, t, 0.91, OptSense::Minimize, &cfg).unwrap();
        let sigma0 = product.lift(&catalog::nonmono_strategy_initial());
        let a0 = natural_assignment(&product, t, &built, &sigma0).unwrap();
        assert!(built.model.check_feasible(&a0, 1e-7).is_empty());
        // The detour strategy misses the optimal reachability: the equality
        // row must reject its natural assignment.
        let sigma1 = product.lift(&catalog::nonmono_strategy_updated());
        let a1 = natural_assignment(&product, t, &built, &sigma1).unwrap();
        let violated = built.model.check_feasible(&a1, 1e-7);
        assert!(
            violated.iter().any(|v| v == "total_reach"),
            "violated: {violated:?}"
        );
    }

    #[test]
    fn qpstar_dominance_rejects_locally_suboptimal_mass() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let built = build_qp_star(&product, t, 0.91, OptSense::Minimize, false, &cfg).unwrap();
        let sigma0 = product.lift(&catalog::nonmono_strategy_initial());
        let good = natural_assignment(&product, t, &built, &sigma0).unwrap();
        assert!(built.model.check_feasible(&good, 1e-7).is_empty());
        let sigma1 = product.lift(&catalog::nonmono_strategy_updated());
        let bad = natural_assignment(&product, t, &built, &sigma1).unwrap();
        assert!(!built.model.check_feasible(&bad, 1e-7).is_empty());
    }

    #[test]
    fn binary_optima_of_the_star_encodings_match_the_solver() {
        // Over deterministic product strategies, the feasible set of both
        // star encodings is the reachability-optimal class, and the extremes
        // of their objective equal the exact solver's optimum.
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let qps = build_qp_star(&product, t, 0.91, OptSense::Minimize, false, &cfg).unwrap();
        let lps = build_lp_star(&product, t, 0.91, OptSense::Minimize, &cfg).unwrap();
        let mut forced = vec![None; product.product().num_states()];
        forced[product.unreachable_copy()] = Some(0);
        let mut qp_values: Vec<f64> = Vec::new();
        let mut lp_values: Vec<f64> = Vec::new();
        for table in crate::oracle::enumerate_with_forced(product.product(), forced).unwrap() {
            for (built, values) in [(&qps, &mut qp_values), (&lps, &mut lp_values)] {
                if let Some(a) = natural_assignment(&product, t, built, &table) {
                    if built.model.check_feasible(&a, 1e-7).is_empty() {
                        values.push(built.model.objective_value(0, &a));
                    }
                }
            }
        }
        assert!(!qp_values.is_empty() && !lp_values.is_empty());
        let qp_min = qp_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let lp_min = lp_values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((qp_min - lp_min).abs() <= 1e-9, "{qp_min} vs {lp_min}");
        let mut problem = crate::importance::state_ratio_problem(
            &product,
            t,
            true,
            crate::solve::StrategyClass::ReachOptimal,
            1e-4,
        );
        problem.p_star = Some(0.91);
        let solved = crate::solve::solve_exact(
            &problem,
            crate::solve::Sense::Min,
            &crate::solve::SolveOptions::default(),
        )
        .unwrap();
        let (value, _) = solved.optimal().unwrap();
        // The encodings' objective is the unnormalized numerator.
        assert!(
            (qp_min / 0.91 - value).abs() <= 1e-9,
            "{} vs {value}",
            qp_min / 0.91
        );
    }

    #[test]
    fn pin_denominator_makes_qp_serializable() {
        let (_mdp, product, t) = nonmono_product();
        let cfg = EncodingConfig::default();
        let mut built = build_qp(&product, t, OptSense::Minimize, &cfg).unwrap();
        assert!(super::super::serialize_lp(&built.model).is_err());
        pin_denominator(&mut built.model, 0.91).unwrap();
        let text = super::super::serialize_lp(&built.model).unwrap();
        assert!(text.contains("total_reach"));
    }
}
