//! On-disk model format: a versioned JSON document with states, actions,
//! transitions, optional labels, and an optional default target. Transition
//! probabilities are JSON numbers (read as exact decimals) or `"p/q"`
//! strings; both engage the exact rational pipeline.

use std::collections::BTreeMap;

use mdpattr::mdp::{Mdp, RawMdp};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot read `{0}`: {1}")]
    Io(String, std::io::Error),
    #[error("invalid JSON in `{0}`: {1}")]
    Json(String, serde_json::Error),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("invalid probability `{0}`")]
    Probability(String),
    #[error("model is not well-formed:\n{0}")]
    Invalid(mdpattr::ValidationReport),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRow {
    pub from: String,
    pub action: String,
    pub to: String,
    pub prob: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub initial: String,
    pub transitions: Vec<TransitionRow>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

/// Parse `p/q` or a decimal (optionally exponent-suffixed) number text into
/// an exact rational.
pub fn parse_probability(text: &str) -> Result<BigRational, ModelFileError> {
    let bad = || ModelFileError::Probability(text.to_string());
    if let Some((p, q)) = text.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    let (mantissa, exponent) = match text.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i64>().map_err(|_| bad())?),
        None => (text, 0),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    let digits = format!("{int_part}{frac_part}");
    let value: BigInt = digits.parse().map_err(|_| bad())?;
    let scale = frac_part.len() as i64 - exponent;
    let ten = BigInt::from(10);
    let rational = if scale >= 0 {
        BigRational::new(value, ten.pow(scale as u32))
    } else {
        BigRational::from_integer(value * ten.pow((-scale) as u32))
    };
    Ok(rational)
}

fn probability_from_value(value: &serde_json::Value) -> Result<BigRational, ModelFileError> {
    match value {
        serde_json::Value::String(s) => parse_probability(s),
        serde_json::Value::Number(n) => parse_probability(&n.to_string()),
        other => Err(ModelFileError::Probability(other.to_string())),
    }
}

/// Emit a probability as a JSON number when its shortest float form denotes
/// the same rational exactly; otherwise as a `"p/q"` string.
pub fn probability_to_value(exact: &BigRational) -> serde_json::Value {
    if let Some(f) = exact.to_f64() {
        if let Some(number) = serde_json::Number::from_f64(f) {
            let round_trip = parse_probability(&number.to_string()).ok();
            if round_trip.as_ref() == Some(exact) {
                return serde_json::Value::Number(number);
            }
        }
    }
    serde_json::Value::String(format!("{}/{}", exact.numer(), exact.denom()))
}

impl ModelFile {
    pub fn load(path: &str) -> Result<Self, ModelFileError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ModelFileError::Io(path.to_string(), e))?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|e| ModelFileError::Json(path.to_string(), e))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(ModelFileError::Version(file.version));
        }
        Ok(file)
    }

    pub fn to_raw(&self) -> Result<RawMdp, ModelFileError> {
        let mut raw = RawMdp {
            states: self.states.clone(),
            initial: self.initial.clone(),
            transitions: Vec::with_capacity(self.transitions.len()),
            labels: self.labels.clone(),
        };
        for row in &self.transitions {
            raw.transitions.push((
                row.from.clone(),
                row.action.clone(),
                row.to.clone(),
                probability_from_value(&row.prob)?,
            ));
        }
        Ok(raw)
    }

    pub fn to_mdp(&self) -> Result<Mdp, ModelFileError> {
        let raw = self.to_raw()?;
        let report = mdpattr::mdp::validate(&raw);
        if !report.is_empty() {
            return Err(ModelFileError::Invalid(report));
        }
        Ok(Mdp::from_raw(&raw).expect("validated"))
    }

    /// Assemble a file from raw model data, deriving the global action list
    /// in first-appearance order.
    pub fn from_raw(raw: &RawMdp, target: Option<String>) -> Self {
        let mut actions: Vec<String> = Vec::new();
        let mut transitions = Vec::with_capacity(raw.transitions.len());
        for (from, action, to, prob) in &raw.transitions {
            if !actions.contains(action) {
                actions.push(action.clone());
            }
            transitions.push(TransitionRow {
                from: from.clone(),
                action: action.clone(),
                to: to.clone(),
                prob: probability_to_value(prob),
            });
        }
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            states: raw.states.clone(),
            actions,
            initial: raw.initial.clone(),
            transitions,
            labels: raw.labels.clone(),
            target,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn probability_texts_parse_exactly() {
        assert_eq!(parse_probability("0.1").unwrap(), rat(1, 10));
        assert_eq!(parse_probability("0.95").unwrap(), rat(19, 20));
        assert_eq!(parse_probability("1/3").unwrap(), rat(1, 3));
        assert_eq!(parse_probability("1e-3").unwrap(), rat(1, 1000));
        assert_eq!(parse_probability("2.5e-1").unwrap(), rat(1, 4));
        assert!(parse_probability("1/0").is_err());
        assert!(parse_probability("abc").is_err());
    }

    #[test]
    fn probabilities_round_trip_through_values() {
        for exact in [rat(19, 20), rat(1, 3), rat(1, 7), rat(1, 1), rat(3, 1000)] {
            let value = probability_to_value(&exact);
            let back = probability_from_value(&value).unwrap();
            assert_eq!(back, exact, "{value:?}");
        }
        // Non-decimal denominators must surface as ratio strings.
        assert!(matches!(
            probability_to_value(&rat(1, 3)),
            serde_json::Value::String(_)
        ));
        assert!(matches!(
            probability_to_value(&rat(19, 20)),
            serde_json::Value::Number(_)
        ));
    }

    #[test]
    fn loan_round_trips_through_the_file_format() {
        let raw = mdpattr::catalog::loan_raw();
        let file = ModelFile::from_raw(&raw, Some("Granted".into()));
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        let mdp = back.to_mdp().unwrap();
        assert_eq!(mdp.num_states(), 10);
        let round = back.to_raw().unwrap();
        assert_eq!(round.transitions, raw.transitions);
    }
}
