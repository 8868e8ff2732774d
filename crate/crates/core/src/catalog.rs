//! Built-in example models: a loan application process, a small model whose
//! importance optima are not reachability-monotone, a key/door/lava gridworld,
//! and a seeded random generator for test suites.

use std::collections::BTreeMap;

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{Mdp, RawMdp, StrategyTable};

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

fn tr(from: &str, action: &str, to: &str, p: BigRational) -> (String, String, String, BigRational) {
    (from.into(), action.into(), to.into(), p)
}

/// Target state of the loan model.
pub const LOAN_TARGET: &str = "Granted";

/// Loan application process: the applicant controls the nondeterminism, the
/// bank's `Provider` steps are purely stochastic.
pub fn loan_raw() -> RawMdp {
    RawMdp {
        states: vec![
            "s0".into(),
            "Application".into(),
            "Error".into(),
            "Consultation".into(),
            "Angry".into(),
            "Application+".into(),
            "Rework".into(),
            "Resubmit".into(),
            "Granted".into(),
            "Rejected".into(),
        ],
        initial: "s0".into(),
        transitions: vec![
            tr("s0", "Apply", "Application", rat(19, 20)),
            tr("s0", "Apply", "Error", rat(1, 20)),
            tr("s0", "Consult", "Consultation", rat(1, 1)),
            tr("Application", "Provider", "Application+", rat(1, 2)),
            tr("Application", "Provider", "Consultation", rat(1, 2)),
            tr("Error", "Consult", "Consultation", rat(1, 1)),
            tr("Error", "Quit", "Rejected", rat(1, 1)),
            tr("Consultation", "Apply", "Application+", rat(1, 1)),
            tr("Consultation", "Angry", "Angry", rat(1, 1)),
            tr("Angry", "Quit", "Rejected", rat(1, 1)),
            tr("Application+", "Provider", "Granted", rat(9, 10)),
            tr("Application+", "Provider", "Rework", rat(1, 10)),
            tr("Rework", "Submit", "Resubmit", rat(1, 1)),
            tr("Rework", "Quit", "Rejected", rat(1, 1)),
            tr("Resubmit", "Provider", "Granted", rat(4, 5)),
            tr("Resubmit", "Provider", "Rejected", rat(1, 5)),
            tr("Granted", "stay", "Granted", rat(1, 1)),
            tr("Rejected", "stay", "Rejected", rat(1, 1)),
        ],
        labels: BTreeMap::new(),
    }
}

pub fn loan() -> Mdp {
    Mdp::from_raw(&loan_raw()).expect("loan model is well-formed")
}

/// Target state of the `nonmono` model.
pub const NONMONO_TARGET: &str = "st";

/// Five-state model where improving the reachability of the target from `s2`
/// lowers the importance of `s1`: the standard counterexample to greedy,
/// per-state importance optimization.
pub fn nonmono_raw() -> RawMdp {
    RawMdp {
        states: vec![
            "s0".into(),
            "s1".into(),
            "s2".into(),
            "sink".into(),
            "st".into(),
        ],
        initial: "s0".into(),
        transitions: vec![
            tr("s0", "a", "s1", rat(1, 10)),
            tr("s0", "a", "s2", rat(9, 10)),
            tr("s1", "a", "st", rat(1, 10)),
            tr("s1", "a", "sink", rat(9, 10)),
            tr("s2", "a", "st", rat(1, 1)),
            tr("s2", "b", "s1", rat(1, 1)),
            tr("sink", "stay", "sink", rat(1, 1)),
            tr("st", "stay", "st", rat(1, 1)),
        ],
        labels: BTreeMap::new(),
    }
}

pub fn nonmono() -> Mdp {
    Mdp::from_raw(&nonmono_raw()).expect("nonmono model is well-formed")
}

/// All-`a` strategy for the `nonmono` model (maximizes reachability).
pub fn nonmono_strategy_initial() -> StrategyTable {
    StrategyTable::deterministic(vec![0, 0, 0, 0, 0])
}

/// Variant taking `b` at `s2` (routes everything through `s1`).
pub fn nonmono_strategy_updated() -> StrategyTable {
    StrategyTable::deterministic(vec![0, 0, 1, 0, 0])
}

/// Rectangular gridworld with a lava row crossed by a single door cell; the
/// agent must fetch the key before the door move is enabled. All transitions
/// are deterministic. This is a parameterized example layout, not data
/// imported from anywhere.
#[derive(Debug, Clone)]
pub struct GridworldLayout {
    pub width: usize,
    pub height: usize,
    pub lava_row: usize,
    pub door_x: usize,
    pub start: (usize, usize),
    pub key: (usize, usize),
    pub target: (usize, usize),
}

impl Default for GridworldLayout {
    fn default() -> Self {
        GridworldLayout {
            width: 7,
            height: 5,
            lava_row: 2,
            door_x: 3,
            start: (0, 4),
            key: (6, 4),
            target: (6, 0),
        }
    }
}

impl GridworldLayout {
    pub fn is_lava(&self, x: usize, y: usize) -> bool {
        y == self.lava_row && x != self.door_x
    }

    pub fn is_door(&self, x: usize, y: usize) -> bool {
        y == self.lava_row && x == self.door_x
    }

    pub fn state_name(&self, x: usize, y: usize, has_key: bool) -> String {
        format!("c{x}_{y}_{}", if has_key { "k" } else { "n" })
    }

    /// Name of the state the importance analysis targets.
    pub fn target_state(&self) -> String {
        self.state_name(self.target.0, self.target.1, true)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 2 || self.height < 3 {
            return Err("grid must be at least 2x3".into());
        }
        if self.lava_row == 0 || self.lava_row + 1 >= self.height {
            return Err("lava row must have rows above and below".into());
        }
        if self.door_x >= self.width {
            return Err("door column outside the grid".into());
        }
        for (what, (x, y)) in [
            ("start", self.start),
            ("key", self.key),
            ("target", self.target),
        ] {
            if x >= self.width || y >= self.height || self.is_lava(x, y) || self.is_door(x, y) {
                return Err(format!("{what} cell must be a free in-bounds cell"));
            }
        }
        if self.start.1 <= self.lava_row || self.key.1 <= self.lava_row {
            return Err("start and key must lie below the lava row".into());
        }
        if self.target.1 >= self.lava_row {
            return Err("target must lie above the lava row".into());
        }
        Ok(())
    }
}

const MOVES: [(&str, i64, i64); 4] = [
    ("up", 0, -1),
    ("down", 0, 1),
    ("left", -1, 0),
    ("right", 1, 0),
];

pub fn gridworld_raw(layout: &GridworldLayout) -> RawMdp {
    layout.validate().expect("invalid gridworld layout");
    let mut raw = RawMdp {
        states: Vec::new(),
        initial: layout.state_name(layout.start.0, layout.start.1, false),
        transitions: Vec::new(),
        labels: BTreeMap::new(),
    };
    for y in 0..layout.height {
        for x in 0..layout.width {
            for has_key in [false, true] {
                let name = layout.state_name(x, y, has_key);
                raw.states.push(name.clone());
                let mut labels = vec![format!("x={x}"), format!("y={y}")];
                if layout.is_lava(x, y) {
                    labels.push("lava".into());
                } else if layout.is_door(x, y) {
                    labels.push("door".into());
                }
                if (x, y) == layout.key {
                    labels.push("key".into());
                }
                if (x, y) == layout.target {
                    labels.push("target".into());
                }
                if (x, y) == layout.start {
                    labels.push("start".into());
                }
                raw.labels.insert(name, labels);
            }
        }
    }
    raw.states.push("dead".into());
    let one = rat(1, 1);
    for y in 0..layout.height {
        for x in 0..layout.width {
            for has_key in [false, true] {
                let name = layout.state_name(x, y, has_key);
                if layout.is_lava(x, y) {
                    raw.transitions.push(tr(&name, "end", "dead", one.clone()));
                    continue;
                }
                if (x, y) == layout.target && has_key {
                    raw.transitions.push(tr(&name, "stay", &name, one.clone()));
                    continue;
                }
                for (action, dx, dy) in MOVES {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= layout.width as i64 || ny >= layout.height as i64 {
                        continue; // moving off the grid is a disabled action
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if layout.is_door(nx, ny) && !has_key {
                        continue; // the door move needs the key
                    }
                    let to = layout.state_name(nx, ny, has_key);
                    raw.transitions.push(tr(&name, action, &to, one.clone()));
                }
                if (x, y) == layout.key && !has_key {
                    let to = layout.state_name(x, y, true);
                    raw.transitions.push(tr(&name, "pickup", &to, one.clone()));
                }
            }
        }
    }
    raw.transitions.push(tr("dead", "stay", "dead", one));
    raw
}

pub fn gridworld(layout: &GridworldLayout) -> Mdp {
    Mdp::from_raw(&gridworld_raw(layout)).expect("gridworld model is well-formed")
}

/// Parameters for the seeded random generator: layered models with forward
/// edges everywhere (so the target stays reachable) plus occasional
/// back-edges, and small integer-ratio probabilities.
#[derive(Debug, Clone)]
pub struct RandomMdpSpec {
    pub states: usize,
    pub actions: usize,
    pub density: f64,
    pub seed: u64,
}

/// Target state name of a generated random model.
pub fn random_target(spec: &RandomMdpSpec) -> String {
    format!("q{}", spec.states - 1)
}

pub fn random_raw(spec: &RandomMdpSpec) -> RawMdp {
    assert!(spec.states >= 2, "need at least two states");
    assert!(spec.actions >= 1, "need at least one action");
    assert!(
        spec.density > 0.0 && spec.density <= 1.0,
        "density must be in (0, 1]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.states;
    let mut raw = RawMdp {
        states: (0..n).map(|i| format!("q{i}")).collect(),
        initial: "q0".into(),
        transitions: Vec::new(),
        labels: BTreeMap::new(),
    };
    for i in 0..n - 1 {
        let num_actions = 1 + rng.gen_range(0..spec.actions);
        for a in 0..num_actions {
            // One forward edge keeps the target reachable from every state.
            let mut targets = vec![rng.gen_range(i + 1..n)];
            let extra_candidates = 1 + (spec.density * 2.0).round() as usize;
            for _ in 0..extra_candidates {
                if rng.gen_bool(spec.density * 0.75) {
                    let to = rng.gen_range(0..n);
                    if !targets.contains(&to) {
                        targets.push(to);
                    }
                }
            }
            let weights: Vec<i64> = targets.iter().map(|_| rng.gen_range(1..=9)).collect();
            let total: i64 = weights.iter().sum();
            for (to, w) in targets.iter().zip(&weights) {
                raw.transitions.push(tr(
                    &format!("q{i}"),
                    &format!("a{a}"),
                    &format!("q{to}"),
                    rat(*w, total),
                ));
            }
        }
    }
    raw.transitions.push(tr(
        &format!("q{}", n - 1),
        "stay",
        &format!("q{}", n - 1),
        rat(1, 1),
    ));
    raw
}

pub fn random(spec: &RandomMdpSpec) -> Mdp {
    Mdp::from_raw(&random_raw(spec)).expect("generated model is well-formed")
}

/// A seeded stochastic strategy over `mdp`'s enabled actions.
pub fn random_strategy(mdp: &Mdp, seed: u64) -> StrategyTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(mdp.num_states());
    for s in 0..mdp.num_states() {
        let k = mdp.num_actions(s);
        if k == 1 || rng.gen_bool(0.5) {
            rows.push(vec![(rng.gen_range(0..k), 1.0)]);
        } else {
            let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(1..=9) as f64).collect();
            let total: f64 = weights.iter().sum();
            rows.push(
                weights
                    .iter()
                    .enumerate()
                    .map(|(a, w)| (a, w / total))
                    .collect(),
            );
        }
    }
    StrategyTable::stochastic(rows)
}
