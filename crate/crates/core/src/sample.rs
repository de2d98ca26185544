use serde::{Deserialize, Serialize};

/// Outcome of one run of a hitting-time experiment, possibly right-censored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimeSample {
    pub run_index: u64,
    pub base_seed: u64,
    /// First hitting step, if it occurred by the horizon.
    pub t_hit: Option<u64>,
    pub horizon: u64,
    /// The monitored observable when the run stopped: `d_V` for HK runs,
    /// the state norm for projected and walk runs.
    pub end_value: f64,
    /// Result of the post-hit continuation check, when requested.
    pub absorbing_ok: Option<bool>,
}

/// Samples of the projected system and the walks share the same shape.
pub type HittingSample = StoppingTimeSample;

impl StoppingTimeSample {
    pub fn hit(&self) -> bool {
        self.t_hit.is_some()
    }

    pub fn censored(&self) -> bool {
        self.t_hit.is_none()
    }

    /// `min(T, horizon)`.
    pub fn observed(&self) -> u64 {
        self.t_hit.unwrap_or(self.horizon)
    }

    /// `min(T, h)` for `h <= horizon`, i.e. what a run stopped at `h` would
    /// have reported.
    pub fn observed_at(&self, h: u64) -> u64 {
        self.observed().min(h)
    }

    pub fn hit_by(&self, h: u64) -> bool {
        self.t_hit.is_some_and(|t| t <= h)
    }
}
