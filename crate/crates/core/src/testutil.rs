//! Small fixtures shared by unit tests.

use crate::model::{CostWeights, MicrogridParams};

/// One storage unit with the case-study ratings feeding one load.
pub fn storage_only() -> MicrogridParams {
    MicrogridParams {
        num_conventional: 0,
        num_storage: 1,
        num_renewable: 0,
        num_loads: 1,
        u_min: vec![-5.0],
        u_max: vec![5.0],
        p_min: vec![-1.0],
        p_max: vec![1.0],
        x_min: vec![0.0],
        x_max: vec![6.0],
        chi: vec![1.0],
        sampling_time: 0.25,
        cost_weights: CostWeights {
            c_t: vec![],
            c_on: vec![],
            c_sw: vec![],
            c_s: vec![0.9],
        },
        renewable_cap: vec![],
    }
}

/// Storage-only grid with an energy box wide enough that the dispatch
/// limits equal the power limits.
pub fn single_storage() -> MicrogridParams {
    let mut p = storage_only();
    p.x_max = vec![100.0];
    p
}
