//! Exact law of `min(T, H)` for micro-instances under Rademacher noise, by
//! walking every sign pattern of every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, AgentStates, InitialCondition, ModelConfig};
use crate::noise::{axis_magnitude, NoiseFamily, SeedSchedule};

/// Largest number of noise paths an enumeration will visit.
pub const MAX_PATHS_LOG2: u64 = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactLaw {
    pub horizon: u64,
    /// `pmf[t] = P{T = t}` for `t = 0..=horizon`.
    pub pmf: Vec<f64>,
    /// `P{T > horizon}`.
    pub tail: f64,
    /// Noise paths actually expanded (hit paths are not extended).
    pub paths: u64,
}

impl ExactLaw {
    /// `P{T >= t}` for `t <= horizon`.
    pub fn survival(&self, t: u64) -> f64 {
        if t > self.horizon {
            return self.tail;
        }
        self.pmf[t as usize..].iter().sum::<f64>() + self.tail
    }

    /// `E min(T, horizon)`.
    pub fn censored_mean(&self) -> f64 {
        let hit: f64 = self.pmf.iter().enumerate().map(|(t, p)| t as f64 * p).sum();
        hit + self.tail * self.horizon as f64
    }
}

/// Enumerates all `2^(n d)` equiprobable sign patterns per step up to
/// `horizon`. Refuses when `2^(n d horizon)` exceeds `2^24`.
pub fn enumerate_law(cfg: &ModelConfig, horizon: u64) -> Result<ExactLaw> {
    cfg.validate()?;
    if cfg.noise.family != NoiseFamily::RademacherAxes {
        return Err(Error::Usage(
            "enumeration requires rademacher_axes noise".into(),
        ));
    }
    let bits = (cfg.n * cfg.d) as u64;
    if bits.saturating_mul(horizon) > MAX_PATHS_LOG2 {
        return Err(Error::ResourceLimit(format!(
            "2^(n*d*horizon) = 2^{} exceeds 2^{MAX_PATHS_LOG2}",
            bits.saturating_mul(horizon)
        )));
    }
    let x0 = match &cfg.initial {
        InitialCondition::Explicit { .. } | InitialCondition::UniformBox { seed: Some(_), .. } => {
            cfg.initial.realize(cfg, &SeedSchedule::new(0, 0))?
        }
        _ => {
            return Err(Error::Usage(
                "enumeration needs a deterministic initial state (explicit or seeded uniform_box)"
                    .into(),
            ))
        }
    };
    let c = axis_magnitude(cfg.delta(), cfg.d);
    let mut law = ExactLaw {
        horizon,
        pmf: vec![0.0; horizon as usize + 1],
        tail: 0.0,
        paths: 0,
    };
    let weight = 0.5f64.powi(bits as i32);
    let mut noise = vec![0.0; bits as usize];
    expand(cfg, &x0, 0, 1.0, weight, c, &mut noise, &mut law)?;
    Ok(law)
}

#[allow(clippy::too_many_arguments)]
fn expand(
    cfg: &ModelConfig,
    x: &AgentStates,
    t: u64,
    p: f64,
    weight: f64,
    c: f64,
    noise: &mut [f64],
    law: &mut ExactLaw,
) -> Result<()> {
    if model::is_quasi_synchronized(x, cfg.epsilon) {
        law.pmf[t as usize] += p;
        return Ok(());
    }
    if t == law.horizon {
        law.tail += p;
        return Ok(());
    }
    for pattern in 0..1u64 << noise.len() {
        for (k, v) in noise.iter_mut().enumerate() {
            *v = if (pattern >> k) & 1 == 1 { c } else { -c };
        }
        let next = model::hk_step(x, noise, cfg)?;
        law.paths += 1;
        expand(cfg, &next, t + 1, p * weight, weight, c, noise, law)?;
    }
    Ok(())
}
