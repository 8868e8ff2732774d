//! Graph-level reachability on MDPs and the maximal reachability probability:
//! qualitative precomputation, value iteration, and an exact policy-evaluation
//! pass so the returned optimum is tight enough to pin equality constraints.

use crate::chain::MarkovChain;
use crate::mdp::{Mdp, StrategyTable};

/// Value-iteration stopping threshold.
pub const VI_TOL: f64 = 1e-12;
/// Slack when collecting locally optimal actions.
pub const OPT_ACTION_TOL: f64 = 1e-9;

/// States from which `t` is reachable under some action sequence, i.e. the
/// backward closure of `t` over positive-probability edges.
pub fn reach_set(mdp: &Mdp, t: usize) -> Vec<bool> {
    let n = mdp.num_states();
    let mut rev = vec![Vec::new(); n];
    for (s, _, tr) in mdp.all_transitions() {
        rev[tr.to].push(s);
    }
    let mut seen = vec![false; n];
    seen[t] = true;
    let mut stack = vec![t];
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

/// States with a strategy reaching `t` with probability 1: the standard
/// greatest/least double fixpoint over the transition graph.
pub fn almost_sure_set(mdp: &Mdp, t: usize) -> Vec<bool> {
    let n = mdp.num_states();
    let mut outer = vec![true; n];
    loop {
        // Least fixpoint: states with an action whose successors all stay in
        // `outer` and at least one successor already accepted.
        let mut inner = vec![false; n];
        inner[t] = true;
        loop {
            let mut changed = false;
            for s in 0..n {
                if inner[s] {
                    continue;
                }
                let admits = (0..mdp.num_actions(s)).any(|a| {
                    let row = mdp.successors(s, a);
                    row.iter().all(|tr| outer[tr.to]) && row.iter().any(|tr| inner[tr.to])
                });
                if admits {
                    inner[s] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if inner == outer {
            return outer;
        }
        outer = inner;
    }
}

/// Maximal probability of reaching `t`, per state, over all strategies.
/// Returns the optimum from the initial state, the full value vector, and a
/// deterministic witness policy attaining it.
pub fn max_reach(mdp: &Mdp, t: usize) -> (f64, Vec<f64>, StrategyTable) {
    let n = mdp.num_states();
    let reachable = reach_set(mdp, t);
    let sure = almost_sure_set(mdp, t);

    let mut values = vec![0.0; n];
    for s in 0..n {
        if sure[s] {
            values[s] = 1.0;
        }
    }
    let open: Vec<usize> = (0..n).filter(|&s| reachable[s] && !sure[s]).collect();
    loop {
        let mut diff: f64 = 0.0;
        for &s in &open {
            let best = (0..mdp.num_actions(s))
                .map(|a| backup(mdp, &values, s, a))
                .fold(0.0, f64::max);
            diff = diff.max((best - values[s]).abs());
            values[s] = best;
        }
        if diff < VI_TOL {
            break;
        }
    }

    // Policy evaluation removes the iteration error; repeat extraction until
    // no action improves on the evaluated values.
    let mut policy = extract_policy(mdp, t, &values);
    for _ in 0..64 {
        let chain = MarkovChain::induced(mdp, &policy);
        let mut goal = vec![false; n];
        goal[t] = true;
        values = chain
            .reach_prob_vector(&goal, &vec![false; n])
            .expect("policy evaluation system is regular");
        let improvable = (0..n).any(|s| {
            (0..mdp.num_actions(s)).any(|a| backup(mdp, &values, s, a) > values[s] + VI_TOL)
        });
        if !improvable {
            break;
        }
        policy = extract_policy(mdp, t, &values);
    }
    (values[mdp.initial()], values, policy)
}

fn backup(mdp: &Mdp, values: &[f64], s: usize, a: usize) -> f64 {
    mdp.successors(s, a)
        .iter()
        .map(|tr| tr.prob * values[tr.to])
        .sum()
}

/// Greedy policy over `values` that provably realizes them: among locally
/// optimal actions, pick one on a shortest route toward `t` so no chosen
/// action idles inside a value-preserving loop.
fn extract_policy(mdp: &Mdp, t: usize, values: &[f64]) -> StrategyTable {
    let n = mdp.num_states();
    let mut pick = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    settled[t] = true;
    pick[t] = 0;
    loop {
        let mut changed = false;
        for s in 0..n {
            if settled[s] {
                continue;
            }
            let best = (0..mdp.num_actions(s))
                .map(|a| backup(mdp, values, s, a))
                .fold(0.0, f64::max);
            for a in 0..mdp.num_actions(s) {
                if backup(mdp, values, s, a) < best - OPT_ACTION_TOL {
                    continue;
                }
                if mdp.successors(s, a).iter().any(|tr| settled[tr.to]) {
                    pick[s] = a;
                    settled[s] = true;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for p in pick.iter_mut() {
        if *p == usize::MAX {
            *p = 0; // value 0 here; the choice cannot matter
        }
    }
    StrategyTable::deterministic(pick)
}

/// Enabled actions per state whose one-step backup attains the optimal value
/// vector within `OPT_ACTION_TOL`. Local optimality is a necessary filter for
/// reachability-optimal strategies; callers must still verify the attained
/// probability exactly.
pub fn locally_optimal_actions(mdp: &Mdp, values: &[f64]) -> Vec<Vec<usize>> {
    (0..mdp.num_states())
        .map(|s| {
            let best = (0..mdp.num_actions(s))
                .map(|a| backup(mdp, values, s, a))
                .fold(0.0, f64::max);
            (0..mdp.num_actions(s))
                .filter(|&a| backup(mdp, values, s, a) >= best - OPT_ACTION_TOL)
                .collect()
        })
        .collect()
}
