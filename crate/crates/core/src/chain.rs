//! Markov chains induced by fixing a strategy, and exact hitting-probability
//! computation via Gaussian elimination on the restricted linear system.

use std::sync::Arc;

use thiserror::Error;

use crate::mdp::{Mdp, StrategyTable};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("goal and avoid sets overlap")]
    OverlappingSets,
    #[error("linear system is singular after pruning; this is a bug")]
    SingularSystem,
}

/// A finite Markov chain with sparse rows. Rows sum to 1.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    names: Arc<Vec<String>>,
    initial: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MarkovChain {
    /// The chain induced by resolving `mdp`'s choices with `strategy`:
    /// row(s, s') = sum over actions of strategy(s, a) * delta(s, a, s').
    pub fn induced(mdp: &Mdp, strategy: &StrategyTable) -> Self {
        debug_assert!(strategy.validate_for(mdp).is_ok());
        let mut rows = Vec::with_capacity(mdp.num_states());
        for s in 0..mdp.num_states() {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for a in 0..mdp.num_actions(s) {
                let w = strategy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for t in mdp.successors(s, a) {
                    match row.iter_mut().find(|(to, _)| *to == t.to) {
                        Some((_, p)) => *p += w * t.prob,
                        None => row.push((t.to, w * t.prob)),
                    }
                }
            }
            rows.push(row);
        }
        MarkovChain {
            names: mdp.state_names().clone(),
            initial: mdp.initial(),
            rows,
        }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.names[s]
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn prob(&self, s: usize, to: usize) -> f64 {
        self.rows[s]
            .iter()
            .find(|(t, _)| *t == to)
            .map_or(0.0, |(_, p)| *p)
    }

    /// States from which some `goal` state is reachable without first
    /// entering `avoid`, computed backward over positive-probability edges.
    fn relevant_states(&self, goal: &[bool], avoid: &[bool]) -> Vec<bool> {
        let n = self.rows.len();
        let mut rev = vec![Vec::new(); n];
        for (s, row) in self.rows.iter().enumerate() {
            if goal[s] || avoid[s] {
                continue; // absorbing for this query
            }
            for (to, p) in row {
                if *p > 0.0 {
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

    /// Probability, from each state, of reaching `goal` without entering
    /// `avoid` first. Exact up to the linear solve: goal states get 1, avoid
    /// states and states that cannot reach the goal get 0, and the rest are
    /// solved as one dense system restricted to the relevant states.
    pub fn reach_prob_vector(&self, goal: &[bool], avoid: &[bool]) -> Result<Vec<f64>, ChainError> {
        let n = self.rows.len();
        if (0..n).any(|s| goal[s] && avoid[s]) {
            return Err(ChainError::OverlappingSets);
        }
        let relevant = self.relevant_states(goal, avoid);
        let unknowns: Vec<usize> = (0..n)
            .filter(|&s| relevant[s] && !goal[s] && !avoid[s])
            .collect();
        let mut values = vec![0.0; n];
        for s in 0..n {
            if goal[s] {
                values[s] = 1.0;
            }
        }
        if unknowns.is_empty() {
            return Ok(values);
        }
        let mut col_of = vec![usize::MAX; n];
        for (i, &s) in unknowns.iter().enumerate() {
            col_of[s] = i;
        }
        let m = unknowns.len();
        let mut a = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        for (i, &s) in unknowns.iter().enumerate() {
            a[i][i] = 1.0;
            for (to, p) in &self.rows[s] {
                if goal[*to] {
                    b[i] += p;
                } else if col_of[*to] != usize::MAX {
                    a[i][col_of[*to]] -= p;
                }
            }
        }
        let x = solve_dense(&mut a, &mut b)?;
        for (i, &s) in unknowns.iter().enumerate() {
            // Clamp tiny negative round-off.
            values[s] = x[i].clamp(0.0, 1.0);
        }
        Ok(values)
    }

    /// `reach_prob_vector` evaluated at one start state; skips the linear
    /// solve when the goal is graph-unreachable from `from`, and restricts
    /// the system to states forward-reachable from `from`.
    pub fn reach_prob(
        &self,
        from: usize,
        goal: &[bool],
        avoid: &[bool],
    ) -> Result<f64, ChainError> {
        if goal.iter().zip(avoid).any(|(g, a)| *g && *a) {
            return Err(ChainError::OverlappingSets);
        }
        if goal[from] {
            return Ok(1.0);
        }
        if avoid[from] {
            return Ok(0.0);
        }
        let n = self.rows.len();
        let relevant = self.relevant_states(goal, avoid);
        if !relevant[from] {
            return Ok(0.0);
        }
        // Forward closure of `from`, stopping at absorbing-for-this-query
        // states; values outside cannot influence the requested entry.
        let mut forward = vec![false; n];
        forward[from] = true;
        let mut stack = vec![from];
        while let Some(s) = stack.pop() {
            if goal[s] || avoid[s] {
                continue;
            }
            for (to, p) in &self.rows[s] {
                if *p > 0.0 && !forward[*to] {
                    forward[*to] = true;
                    stack.push(*to);
                }
            }
        }
        let unknowns: Vec<usize> = (0..n)
            .filter(|&s| relevant[s] && forward[s] && !goal[s] && !avoid[s])
            .collect();
        let mut col_of = vec![usize::MAX; n];
        for (i, &s) in unknowns.iter().enumerate() {
            col_of[s] = i;
        }
        let m = unknowns.len();
        let mut a = vec![vec![0.0; m]; m];
        let mut b = vec![0.0; m];
        for (i, &s) in unknowns.iter().enumerate() {
            a[i][i] = 1.0;
            for (to, p) in &self.rows[s] {
                if goal[*to] {
                    b[i] += p;
                } else if col_of[*to] != usize::MAX {
                    a[i][col_of[*to]] -= p;
                }
            }
        }
        let x = solve_dense(&mut a, &mut b)?;
        Ok(x[col_of[from]].clamp(0.0, 1.0))
    }

    /// Probability of eventually reaching `t` having visited `s` strictly
    /// before the first visit of `t`, from the initial state. Decomposes at
    /// the first visit of `s`: reach `s` avoiding `t`, then reach `t`.
    /// For `s == t` and `s == initial` this reduces to the plain probability
    /// of reaching `t`.
    pub fn visit_before_target_prob(&self, s: usize, t: usize) -> Result<f64, ChainError> {
        let n = self.rows.len();
        let mut goal_s = vec![false; n];
        goal_s[s] = true;
        let mut avoid_t = vec![false; n];
        if s != t {
            avoid_t[t] = true;
        }
        let first_leg = self.reach_prob(self.initial, &goal_s, &avoid_t)?;
        if first_leg == 0.0 {
            return Ok(0.0);
        }
        let mut goal_t = vec![false; n];
        goal_t[t] = true;
        let second_leg = self.reach_prob(s, &goal_t, &vec![false; n])?;
        Ok(first_leg * second_leg)
    }

    /// Plain probability of eventually reaching `t` from the initial state.
    pub fn target_reach_prob(&self, t: usize) -> Result<f64, ChainError> {
        let mut goal = vec![false; self.rows.len()];
        goal[t] = true;
        self.reach_prob(self.initial, &goal, &vec![false; self.rows.len()])
    }

    /// True if `t` is graph-reachable from `from` over positive edges.
    pub fn can_reach(&self, from: usize, t: usize) -> bool {
        let mut goal = vec![false; self.rows.len()];
        goal[t] = true;
        self.relevant_states(&goal, &vec![false; self.rows.len()])[from]
    }
}

/// Partial-pivot Gaussian elimination on a dense system; consumes its inputs.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, ChainError> {
    let n = b.len();
    for k in 0..n {
        let pivot = (k..n)
            .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
            .unwrap();
        if a[pivot][k].abs() < 1e-300 {
            return Err(ChainError::SingularSystem);
        }
        a.swap(k, pivot);
        b.swap(k, pivot);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc -= a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    Ok(x)
}
