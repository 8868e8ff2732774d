//! Analysis reports: the JSON document a query emits and the number
//! formatting shared by the CSV outputs.

use mdpattr::importance::{BoundsAnalysis, WitnessRow};
use mdpattr::{StrategyClass, WitnessSpace};
use serde::{Deserialize, Serialize};

/// Probabilities print with 12 significant digits, '.' decimal separator,
/// trailing zeros trimmed.
pub fn format_probability(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let text = format!("{value:.decimals$}");
    if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    }
}

pub fn class_name(class: StrategyClass) -> &'static str {
    match class {
        StrategyClass::All => "all",
        StrategyClass::ReachOptimal => "opt",
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryEcho {
    pub model: String,
    pub subject_kind: String,
    pub subject: String,
    pub target: String,
    pub class: String,
    pub normalized: bool,
    pub epsilon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntervalReport {
    pub lower: f64,
    pub upper: f64,
    pub normalized: bool,
    pub class: String,
    /// The strategy space the endpoints range over.
    pub bounds_over: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WitnessReport {
    pub space: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<String>,
    pub lower: Vec<WitnessRow>,
    pub upper: Vec<WitnessRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SideReport {
    pub status: String,
    pub nodes_explored: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub query: QueryEcho,
    pub interval: IntervalReport,
    pub witnesses: WitnessReport,
    pub lower_solver: SideReport,
    pub upper_solver: SideReport,
}

impl AnalysisReport {
    pub fn build(
        mdp: &mdpattr::Mdp,
        query: QueryEcho,
        analysis: &BoundsAnalysis,
    ) -> Result<Self, mdpattr::ImportanceError> {
        let (space, pivot) = match &analysis.witness_space {
            WitnessSpace::Base => ("base".to_string(), None),
            WitnessSpace::Product { pivot } => ("product".to_string(), Some(pivot.clone())),
        };
        let lower = mdpattr::witness_rows(
            mdp,
            &analysis.witness_space,
            &analysis.interval.lower_witness,
        )?;
        let upper = mdpattr::witness_rows(
            mdp,
            &analysis.witness_space,
            &analysis.interval.upper_witness,
        )?;
        let side = |stats: &mdpattr::importance::SideStats| SideReport {
            status: match &stats.budget {
                Some(reason) => format!("budget: {reason}"),
                None => "optimal".into(),
            },
            nodes_explored: stats.nodes_explored,
            wall_seconds: stats.wall_time.as_secs_f64(),
        };
        Ok(AnalysisReport {
            interval: IntervalReport {
                lower: analysis.interval.lower,
                upper: analysis.interval.upper,
                normalized: analysis.interval.normalized,
                class: class_name(analysis.interval.class).into(),
                bounds_over: "deterministic memoryless strategies of the witness space".into(),
            },
            witnesses: WitnessReport {
                space,
                pivot,
                lower,
                upper,
            },
            lower_solver: side(&analysis.lower_stats),
            upper_solver: side(&analysis.upper_stats),
            query,
        })
    }
}

/// Quote a CSV field when needed.
pub fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}
