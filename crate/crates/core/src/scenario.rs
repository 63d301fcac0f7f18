//! Disturbance interval forecasts, initial conditions and the scenario file.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{MicrogridParams, ModelError};

/// Horizon-indexed disturbance bounds plus the initial state.
///
/// Each `w_min[j]` / `w_max[j]` row holds renewable availabilities (`>= 0`)
/// followed by loads (`<= 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: usize,
    pub w_min: Vec<Vec<f64>>,
    pub w_max: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub delta0: Vec<bool>,
}

/// Forecast slice handed to one controller invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioWindow {
    pub w_min: Vec<Vec<f64>>,
    pub w_max: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub delta0: Vec<bool>,
}

impl ScenarioWindow {
    pub fn len(&self) -> usize {
        self.w_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_min.is_empty()
    }

    /// Single-step window with identical bounds (no uncertainty).
    pub fn certain(w: Vec<Vec<f64>>, x0: Vec<f64>, delta0: Vec<bool>) -> Self {
        Self {
            w_max: w.clone(),
            w_min: w,
            x0,
            delta0,
        }
    }
}

impl Scenario {
    /// Forecast window of `len` steps starting at step `start` with the given
    /// initial condition.
    pub fn window(&self, start: usize, len: usize, x0: Vec<f64>, delta0: Vec<bool>) -> Option<ScenarioWindow> {
        if start + len > self.w_min.len() || start + len > self.w_max.len() {
            return None;
        }
        Some(ScenarioWindow {
            w_min: self.w_min[start..start + len].to_vec(),
            w_max: self.w_max[start..start + len].to_vec(),
            x0,
            delta0,
        })
    }
}

/// One broken scenario invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: Option<usize>,
    pub entry: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.step, self.entry) {
            (Some(s), Some(e)) => write!(f, "step {s}, entry {e}: {}", self.message),
            (Some(s), None) => write!(f, "step {s}: {}", self.message),
            (None, Some(e)) => write!(f, "entry {e}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

fn violation(step: Option<usize>, entry: Option<usize>, message: impl Into<String>) -> Violation {
    Violation {
        step,
        entry,
        message: message.into(),
    }
}

/// Check every scenario invariant against `params`. An empty report means the
/// scenario is valid.
pub fn validate_scenario(scenario: &Scenario, params: &MicrogridParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let nw = params.num_disturbances();
    let nr = params.num_renewable;
    if scenario.w_min.len() != scenario.horizon || scenario.w_max.len() != scenario.horizon {
        out.push(violation(
            None,
            None,
            format!(
                "horizon {} but w_min has {} and w_max has {} rows",
                scenario.horizon,
                scenario.w_min.len(),
                scenario.w_max.len()
            ),
        ));
    }
    for (j, (lo, hi)) in scenario.w_min.iter().zip(&scenario.w_max).enumerate() {
        if lo.len() != nw || hi.len() != nw {
            out.push(violation(Some(j), None, format!("expected {nw} disturbance entries")));
            continue;
        }
        for e in 0..nw {
            let (a, b) = (lo[e], hi[e]);
            if !a.is_finite() || !b.is_finite() {
                out.push(violation(Some(j), Some(e), "non-finite bound"));
                continue;
            }
            if a > b {
                out.push(violation(Some(j), Some(e), format!("w_min {a} > w_max {b}")));
            }
            if e < nr {
                let unit = params.renewable().start + e;
                if a < params.p_min[unit] {
                    out.push(violation(
                        Some(j),
                        Some(e),
                        format!("renewable availability {a} below p_min {}", params.p_min[unit]),
                    ));
                } else if a < 0.0 {
                    out.push(violation(Some(j), Some(e), "negative renewable availability"));
                }
                if params.renewable_cap.len() == nr && b > params.renewable_cap[e] {
                    out.push(violation(
                        Some(j),
                        Some(e),
                        format!("availability {b} exceeds renewable_cap {}", params.renewable_cap[e]),
                    ));
                }
            } else if b > 0.0 {
                out.push(violation(Some(j), Some(e), "load bound must be non-positive"));
            }
        }
    }
    if scenario.x0.len() != params.num_storage {
        out.push(violation(None, None, format!("x0 must have {} entries", params.num_storage)));
    } else {
        for (s, x) in scenario.x0.iter().enumerate() {
            if !(*x >= params.x_min[s] && *x <= params.x_max[s]) {
                out.push(violation(
                    None,
                    Some(s),
                    format!("x0 {x} outside [{}, {}]", params.x_min[s], params.x_max[s]),
                ));
            }
        }
    }
    if scenario.delta0.len() != params.num_conventional {
        out.push(violation(
            None,
            None,
            format!("delta0 must have {} entries", params.num_conventional),
        ));
    }
    out
}

/// On-disk scenario: parameters plus forecast intervals and initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub params: MicrogridParams,
    pub horizon: usize,
    pub w_min: Vec<Vec<f64>>,
    pub w_max: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    /// Missing means every conventional unit starts switched off.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_binary")]
    pub delta0: Option<Vec<bool>>,
}

/// Serialize switch statuses as 0/1 integers.
mod opt_binary {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<bool>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref()
            .map(|d| d.iter().map(|b| u8::from(*b)).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<bool>>, D::Error> {
        let raw: Option<Vec<u8>> = Option::deserialize(d)?;
        raw.map(|v| {
            v.into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(serde::de::Error::custom(format!("switch status {other} is not binary"))),
                })
                .collect()
        })
        .transpose()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Params(#[from] ModelError),
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

impl ScenarioFile {
    pub fn new(params: MicrogridParams, scenario: Scenario) -> Self {
        Self {
            params,
            horizon: scenario.horizon,
            w_min: scenario.w_min,
            w_max: scenario.w_max,
            x0: scenario.x0,
            delta0: Some(scenario.delta0),
        }
    }

    /// Parse, fill defaults and validate.
    pub fn from_json(text: &str) -> Result<(MicrogridParams, Scenario), ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.into_parts()
    }

    pub fn into_parts(self) -> Result<(MicrogridParams, Scenario), ScenarioError> {
        let mut params = self.params;
        if params.renewable_cap.is_empty() && params.num_renewable > 0 {
            params.renewable_cap = (0..params.num_renewable)
                .map(|r| {
                    self.w_max
                        .iter()
                        .filter_map(|row| row.get(r).copied())
                        .fold(f64::NEG_INFINITY, f64::max)
                        .max(1e-3)
                })
                .collect();
        }
        params.validate()?;
        let delta0 = self
            .delta0
            .unwrap_or_else(|| vec![false; params.num_conventional]);
        let scenario = Scenario {
            horizon: self.horizon,
            w_min: self.w_min,
            w_max: self.w_max,
            x0: self.x0,
            delta0,
        };
        let report = validate_scenario(&scenario, &params);
        if !report.is_empty() {
            return Err(ScenarioError::Invalid(report));
        }
        Ok((params, scenario))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MicrogridParams {
        MicrogridParams::case_study(1.0)
    }

    fn scenario() -> Scenario {
        Scenario {
            horizon: 2,
            w_min: vec![vec![0.1, 0.0, -0.8], vec![0.2, 0.3, -0.6]],
            w_max: vec![vec![0.3, 0.1, -0.5], vec![0.4, 0.5, -0.4]],
            x0: vec![2.0],
            delta0: vec![false],
        }
    }

    #[test]
    fn well_formed_is_clean() {
        assert!(validate_scenario(&scenario(), &params()).is_empty());
    }

    #[test]
    fn swapped_bounds_reported() {
        let mut s = scenario();
        s.w_min[1][0] = 0.9;
        let report = validate_scenario(&s, &params());
        assert_eq!(report.len(), 1);
        assert_eq!((report[0].step, report[0].entry), (Some(1), Some(0)));
    }

    #[test]
    fn x0_above_max_reported() {
        let mut s = scenario();
        s.x0 = vec![7.0];
        let report = validate_scenario(&s, &params());
        assert_eq!(report.len(), 1);
        assert!(report[0].message.contains("x0"));
    }

    #[test]
    fn sign_conventions() {
        let mut s = scenario();
        s.w_max[0][2] = 0.1;
        s.w_min[0][0] = -0.1;
        assert_eq!(validate_scenario(&s, &params()).len(), 2);
    }

    #[test]
    fn json_round_trip_fills_defaults() {
        let mut p = params();
        p.renewable_cap.clear();
        let s = scenario();
        let mut file = ScenarioFile::new(p, s.clone());
        file.delta0 = None;
        let text = file.to_json();
        assert!(!text.contains("delta0"));
        let (p2, s2) = ScenarioFile::from_json(&text).unwrap();
        assert_eq!(p2.renewable_cap, vec![0.4, 0.5]);
        assert_eq!(s2, s);
    }

    #[test]
    fn json_rejects_invalid() {
        let mut s = scenario();
        s.w_min[0][1] = 0.2;
        let text = ScenarioFile::new(params(), s).to_json();
        assert!(matches!(ScenarioFile::from_json(&text), Err(ScenarioError::Invalid(_))));
        let text = r#"{"params": 1}"#;
        assert!(matches!(ScenarioFile::from_json(text), Err(ScenarioError::Json(_))));
    }

    #[test]
    fn windows() {
        let s = scenario();
        let w = s.window(1, 1, vec![2.0], vec![true]).unwrap();
        assert_eq!(w.w_min, vec![vec![0.2, 0.3, -0.6]]);
        assert!(s.window(1, 2, vec![2.0], vec![true]).is_none());
    }
}
