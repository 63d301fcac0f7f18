//! Static microgrid description, the saturation operator and storage limit
//! arithmetic shared by every other module.
//!
//! Units are always ordered `[conventional | storage | renewable]`; disturbance
//! vectors are ordered `[renewable availability | load]`. Power is in per-unit,
//! energy in pu·h and time in hours.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by model and dispatch arithmetic.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid bounds: lower {lo} exceeds upper {hi}")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("storage {index} energy {value} outside [{min}, {max}]")]
    StateOutOfBounds {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("no unit has a positive droop gain")]
    NoDroop,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Absolute slack accepted when checking a storage state against its box.
pub const STATE_TOL: f64 = 1e-9;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected == found {
        Ok(())
    } else {
        Err(ModelError::Dimension {
            what,
            expected,
            found,
        })
    }
}

/// Cost weights of the stage cost. All entries must be non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Fuel cost per conventional unit.
    pub c_t: Vec<f64>,
    /// Fixed generation cost per conventional unit.
    pub c_on: Vec<f64>,
    /// Switching cost per conventional unit.
    pub c_sw: Vec<f64>,
    /// Storage power cost per storage unit.
    pub c_s: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Conventional,
    Storage,
    Renewable,
}

/// Static description of all units of the microgrid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridParams {
    pub num_conventional: usize,
    pub num_storage: usize,
    pub num_renewable: usize,
    pub num_loads: usize,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Inverse droop gains, one per unit.
    pub chi: Vec<f64>,
    /// Sampling time in hours.
    pub sampling_time: f64,
    pub cost_weights: CostWeights,
    /// Finite stand-in for the renewable power rating, used only for the
    /// power-sharing bounds and big-M constants. Empty in a scenario file
    /// means "derive from the forecast upper bounds".
    #[serde(default)]
    pub renewable_cap: Vec<f64>,
}

impl MicrogridParams {
    /// The four-unit case study: one conventional unit, one storage, a wind
    /// turbine and a PV plant feeding one load, sampled every 15 minutes.
    pub fn case_study(renewable_cap: f64) -> Self {
        Self {
            num_conventional: 1,
            num_storage: 1,
            num_renewable: 2,
            num_loads: 1,
            u_min: vec![-5.0; 4],
            u_max: vec![5.0; 4],
            p_min: vec![0.2, -1.0, 0.0, 0.0],
            p_max: vec![1.0, 1.0, renewable_cap, renewable_cap],
            x_min: vec![0.0],
            x_max: vec![6.0],
            chi: vec![1.0; 4],
            sampling_time: 0.25,
            cost_weights: CostWeights {
                c_t: vec![1.0],
                c_on: vec![0.2],
                c_sw: vec![0.3],
                c_s: vec![0.9],
            },
            renewable_cap: vec![renewable_cap; 2],
        }
    }

    /// Case-study units with only the first `renewables` renewable units kept
    /// (PV is dropped first). Used for desk-scale runs.
    pub fn case_study_reduced(renewables: usize, renewable_cap: f64) -> Self {
        let mut p = Self::case_study(renewable_cap);
        let keep = 2 + renewables.min(2);
        p.num_renewable = renewables.min(2);
        for v in [&mut p.u_min, &mut p.u_max, &mut p.p_min, &mut p.p_max, &mut p.chi] {
            v.truncate(keep);
        }
        p.renewable_cap.truncate(p.num_renewable);
        p
    }

    pub fn num_units(&self) -> usize {
        self.num_conventional + self.num_storage + self.num_renewable
    }

    /// Length of one disturbance vector (renewables then loads).
    pub fn num_disturbances(&self) -> usize {
        self.num_renewable + self.num_loads
    }

    pub fn conventional(&self) -> Range<usize> {
        0..self.num_conventional
    }

    pub fn storage(&self) -> Range<usize> {
        self.num_conventional..self.num_conventional + self.num_storage
    }

    pub fn renewable(&self) -> Range<usize> {
        let start = self.num_conventional + self.num_storage;
        start..start + self.num_renewable
    }

    pub fn unit_kind(&self, unit: usize) -> UnitKind {
        if unit < self.num_conventional {
            UnitKind::Conventional
        } else if unit < self.num_conventional + self.num_storage {
            UnitKind::Storage
        } else {
            UnitKind::Renewable
        }
    }

    /// Upper power bound used when deriving power-sharing bounds: the
    /// configured cap for renewables, `p_max` otherwise.
    pub fn sharing_upper(&self, unit: usize) -> f64 {
        match self.unit_kind(unit) {
            UnitKind::Renewable => self.renewable_cap[unit - self.renewable().start],
            _ => self.p_max[unit],
        }
    }

    /// Copy of these parameters with different droop gains.
    pub fn with_chi(&self, chi: Vec<f64>) -> Result<Self, ModelError> {
        check_len("chi", self.num_units(), chi.len())?;
        let mut p = self.clone();
        p.chi = chi;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.num_units();
        check_len("u_min", n, self.u_min.len())?;
        check_len("u_max", n, self.u_max.len())?;
        check_len("p_min", n, self.p_min.len())?;
        check_len("p_max", n, self.p_max.len())?;
        check_len("chi", n, self.chi.len())?;
        check_len("x_min", self.num_storage, self.x_min.len())?;
        check_len("x_max", self.num_storage, self.x_max.len())?;
        check_len("renewable_cap", self.num_renewable, self.renewable_cap.len())?;
        let w = &self.cost_weights;
        check_len("c_t", self.num_conventional, w.c_t.len())?;
        check_len("c_on", self.num_conventional, w.c_on.len())?;
        check_len("c_sw", self.num_conventional, w.c_sw.len())?;
        check_len("c_s", self.num_storage, w.c_s.len())?;

        let bad = |msg: String| Err(ModelError::InvalidParams(msg));
        let all = self
            .u_min
            .iter()
            .chain(&self.u_max)
            .chain(&self.p_min)
            .chain(&self.p_max)
            .chain(&self.x_min)
            .chain(&self.x_max)
            .chain(&self.chi)
            .chain(&self.renewable_cap)
            .chain(&w.c_t)
            .chain(&w.c_on)
            .chain(&w.c_sw)
            .chain(&w.c_s);
        if all.clone().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        for i in 0..n {
            if self.u_min[i] > self.u_max[i] {
                return bad(format!("unit {i}: u_min > u_max"));
            }
            if self.p_min[i] > self.p_max[i] {
                return bad(format!("unit {i}: p_min > p_max"));
            }
            if self.chi[i] < 0.0 {
                return bad(format!("unit {i}: negative droop gain"));
            }
            if self.p_max[i] <= 0.0 {
                return bad(format!("unit {i}: p_max must be positive"));
            }
            let ok_sign = match self.unit_kind(i) {
                UnitKind::Storage => self.p_min[i] < 0.0,
                _ => self.p_min[i] >= 0.0,
            };
            if !ok_sign {
                return bad(format!("unit {i}: p_min has the wrong sign"));
            }
        }
        for s in 0..self.num_storage {
            if self.x_min[s] > self.x_max[s] || self.x_min[s] < 0.0 {
                return bad(format!("storage {s}: invalid energy bounds"));
            }
        }
        for (r, cap) in self.renewable_cap.iter().enumerate() {
            if *cap < self.p_min[self.renewable().start + r] || *cap <= 0.0 {
                return bad(format!("renewable {r}: cap below p_min or not positive"));
            }
        }
        if !(self.sampling_time > 0.0) {
            return bad("sampling time must be positive".into());
        }
        if w.c_t.iter().chain(&w.c_on).chain(&w.c_sw).chain(&w.c_s).any(|c| *c < 0.0) {
            return bad("cost weights must be non-negative".into());
        }
        if !self.chi.iter().any(|c| *c > 0.0) {
            return Err(ModelError::NoDroop);
        }
        Ok(())
    }
}

/// Clamp `v` to `[lo, hi]`.
pub fn saturate(lo: f64, v: f64, hi: f64) -> Result<f64, ModelError> {
    if lo > hi {
        return Err(ModelError::InvalidBounds { lo, hi });
    }
    Ok(if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    })
}

/// Elementwise [`saturate`].
pub fn saturate_vec(lo: &[f64], v: &[f64], hi: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_len("saturation lower bounds", v.len(), lo.len())?;
    check_len("saturation upper bounds", v.len(), hi.len())?;
    lo.iter()
        .zip(v)
        .zip(hi)
        .map(|((l, x), h)| saturate(*l, *x, *h))
        .collect()
}

/// State-of-charge dependent power limits of every storage unit.
///
/// Returns `(lower, upper)`; the lower limit blocks charging beyond `x_max`
/// within one sampling period, the upper one blocks discharging below `x_min`.
pub fn dynamic_storage_limits(
    x_prev: &[f64],
    params: &MicrogridParams,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    check_len("storage energies", params.num_storage, x_prev.len())?;
    let ts = params.sampling_time;
    let mut lower = Vec::with_capacity(x_prev.len());
    let mut upper = Vec::with_capacity(x_prev.len());
    for (s, &x) in x_prev.iter().enumerate() {
        let (xmin, xmax) = (params.x_min[s], params.x_max[s]);
        if !(x >= xmin - STATE_TOL && x <= xmax + STATE_TOL) {
            return Err(ModelError::StateOutOfBounds {
                index: s,
                value: x,
                min: xmin,
                max: xmax,
            });
        }
        let x = x.clamp(xmin, xmax);
        let unit = params.storage().start + s;
        let lo = params.p_min[unit].max((x - xmax) / ts);
        let hi = params.p_max[unit].min((x - xmin) / ts);
        lower.push(lo);
        upper.push(hi.max(lo));
    }
    Ok((lower, upper))
}

/// Saturation state of one unit at the settled power-sharing value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SatFlag {
    AtLower,
    Interior,
    AtUpper,
    /// Conventional unit switched off.
    Off,
}

/// Per-step set-points and switch statuses over a horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPlan {
    /// `u[j]` holds the set-points of all units at step `j`.
    pub u: Vec<Vec<f64>>,
    /// `delta[j]` holds the conventional switch statuses at step `j`.
    pub delta: Vec<Vec<bool>>,
}

impl ControlPlan {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn validate(&self, params: &MicrogridParams) -> Result<(), ModelError> {
        check_len("plan delta steps", self.u.len(), self.delta.len())?;
        for (u, d) in self.u.iter().zip(&self.delta) {
            check_len("plan set-points", params.num_units(), u.len())?;
            check_len("plan switch statuses", params.num_conventional, d.len())?;
            for (i, v) in u.iter().enumerate() {
                if *v < params.u_min[i] - STATE_TOL || *v > params.u_max[i] + STATE_TOL {
                    return Err(ModelError::InvalidParams(format!(
                        "set-point {v} of unit {i} outside [{}, {}]",
                        params.u_min[i], params.u_max[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Plant response to one sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Realized unit powers.
    pub p: Vec<f64>,
    /// Storage energies after the step.
    pub x: Vec<f64>,
    /// Settled power-sharing variable.
    pub rho: f64,
    pub sat_flags: Vec<SatFlag>,
    /// Whether the power-sharing variable stayed within its bounds, i.e.
    /// whether the units could balance the disturbance.
    pub feasible: bool,
}
