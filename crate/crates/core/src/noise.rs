//! Bounded, zero-mean noise families and counter-keyed seeding.
//!
//! Every draw is a pure function of `(base_seed, run_index, t, i)`: the tuple
//! is folded through the SplitMix64 finalizer into a 64-bit key, and that key
//! seeds a fresh SplitMix64 stream used only for that one draw. Parallel
//! ensembles therefore see the same numbers regardless of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::model::{InitialCondition, ModelConfig, SpaceMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Uniform density on the closed ball of radius delta.
    #[default]
    UniformBall,
    /// Uniform on the cube `[-c, c]^d` with `c = delta / sqrt(d)`.
    UniformCube,
    /// Each coordinate independently `+c` or `-c` with probability one half.
    RademacherAxes,
    /// Each coordinate `+c` with probability 1/3, `-c/2` with probability 2/3.
    /// Zero mean and bounded, but not symmetric.
    SkewedAxes,
}

impl NoiseFamily {
    pub fn is_symmetric(self) -> bool {
        !matches!(self, NoiseFamily::SkewedAxes)
    }

    /// True when the law has a density that is positive on its whole support.
    pub fn has_density(self) -> bool {
        matches!(self, NoiseFamily::UniformBall | NoiseFamily::UniformCube)
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::UniformBall => "uniform_ball",
            NoiseFamily::UniformCube => "uniform_cube",
            NoiseFamily::RademacherAxes => "rademacher_axes",
            NoiseFamily::SkewedAxes => "skewed_axes",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub family: NoiseFamily,
    /// Almost-sure bound on the Euclidean norm of every draw.
    pub delta: f64,
    #[serde(default)]
    pub requires_symmetry: bool,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, delta: f64) -> Self {
        Self {
            family,
            delta,
            requires_symmetry: false,
        }
    }

    pub fn uniform_ball(delta: f64) -> Self {
        Self::new(NoiseFamily::UniformBall, delta)
    }

    pub fn rademacher(delta: f64) -> Self {
        Self::new(NoiseFamily::RademacherAxes, delta)
    }

    pub fn with_symmetry(mut self) -> Self {
        self.requires_symmetry = true;
        self
    }

    /// Checks that do not depend on the model: positivity, finiteness,
    /// and the symmetry flag against the family.
    pub fn basic_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.delta.is_finite() && self.delta > 0.0) {
            out.push(Violation::new(
                "noise.delta",
                "delta must be positive and finite",
            ));
        }
        if self.requires_symmetry && !self.family.is_symmetric() {
            out.push(Violation::new(
                "noise.family",
                format!("symmetry required but {} is asymmetric", self.family.name()),
            ));
        }
        out
    }

    /// Fills `out` with one draw. `out.len()` is the dimension.
    pub(crate) fn draw_into<R: RngCore>(&self, rng: &mut R, out: &mut [f64]) {
        let dim = out.len();
        match self.family {
            NoiseFamily::UniformBall => {
                let norm = loop {
                    for c in out.iter_mut() {
                        *c = rng.sample(StandardNormal);
                    }
                    let norm = l2_norm(out);
                    if norm > 0.0 && norm.is_finite() {
                        break norm;
                    }
                };
                let u: f64 = rng.random();
                let radius = self.delta
                    * match dim {
                        1 => u,
                        2 => u.sqrt(),
                        _ => u.powf(1.0 / dim as f64),
                    };
                let scale = radius / norm;
                for c in out.iter_mut() {
                    *c *= scale;
                }
                enforce_norm_bound(out, self.delta);
            }
            NoiseFamily::UniformCube => {
                let c = axis_magnitude(self.delta, dim);
                for x in out.iter_mut() {
                    let u: f64 = rng.random();
                    *x = (2.0 * u - 1.0) * c;
                }
            }
            NoiseFamily::RademacherAxes => {
                let c = axis_magnitude(self.delta, dim);
                let mut word = 0u64;
                for (k, x) in out.iter_mut().enumerate() {
                    if k % 64 == 0 {
                        word = rng.next_u64();
                    }
                    *x = if (word >> (k % 64)) & 1 == 1 { c } else { -c };
                }
            }
            NoiseFamily::SkewedAxes => {
                let c = axis_magnitude(self.delta, dim);
                for x in out.iter_mut() {
                    let u: f64 = rng.random();
                    *x = if u < 1.0 / 3.0 { c } else { -0.5 * c };
                }
            }
        }
    }
}

/// Identifies the random stream of one run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSchedule {
    pub base_seed: u64,
    pub run_index: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const RUN_MUL: u64 = 0xd1b5_4a32_d192_ed03;
const STEP_MUL: u64 = 0xaef1_7502_108e_f2d9;
const AGENT_MUL: u64 = 0xf135_7aea_2e62_a9c5;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSchedule {
    pub fn new(base_seed: u64, run_index: u64) -> Self {
        Self {
            base_seed,
            run_index,
        }
    }

    /// `key = mix(mix(mix(mix(base ^ G) ^ run*A) ^ t*B) ^ i*C)` with fixed odd
    /// multipliers, so each coordinate of the tuple is fully avalanched
    /// before the next is folded in.
    pub fn key(&self, t: u64, i: u64) -> u64 {
        let h = mix64(self.base_seed ^ GOLDEN);
        let h = mix64(h ^ self.run_index.wrapping_add(1).wrapping_mul(RUN_MUL));
        let h = mix64(h ^ t.wrapping_add(1).wrapping_mul(STEP_MUL));
        mix64(h ^ i.wrapping_add(1).wrapping_mul(AGENT_MUL))
    }

    pub fn rng(&self, t: u64, i: u64) -> SplitMix64 {
        SplitMix64::seed_from_u64(self.key(t, i))
    }

    /// Stream reserved for drawing initial conditions (noise starts at t = 1).
    pub fn initial_rng(&self) -> SplitMix64 {
        self.rng(0, u64::MAX)
    }
}

/// Draws the noise of agent `i` at step `t` into `out`.
pub fn sample_noise(
    spec: &NoiseSpec,
    schedule: &SeedSchedule,
    t: u64,
    i: u64,
    out: &mut [f64],
) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("noise is indexed from t = 1".into()));
    }
    if out.is_empty() {
        return Err(Error::Usage("noise dimension must be at least 1".into()));
    }
    let v = spec.basic_violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    spec.draw_into(&mut schedule.rng(t, i), out);
    Ok(())
}

pub fn sample_noise_vec(
    spec: &NoiseSpec,
    schedule: &SeedSchedule,
    t: u64,
    i: u64,
    dim: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    sample_noise(spec, schedule, t, i, &mut out)?;
    Ok(out)
}

/// Checks a noise spec against the model it drives.
pub fn validate_spec(spec: &NoiseSpec, cfg: &ModelConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(spec.delta.is_finite() && spec.delta > 0.0) {
        out.push(Violation::new(
            "noise.delta",
            "delta must be positive and finite",
        ));
    } else if spec.delta > cfg.epsilon / 2.0 && !cfg.allow_large_delta {
        out.push(Violation::new(
            "noise.delta",
            format!(
                "delta exceeds epsilon/2 ({} > {})",
                spec.delta,
                cfg.epsilon / 2.0
            ),
        ));
    }
    let symmetric_scenario = cfg.space_mode == SpaceMode::Unbounded
        && cfg.d >= 3
        && matches!(cfg.initial, InitialCondition::TwoCluster { .. });
    if (spec.requires_symmetry || symmetric_scenario) && !spec.family.is_symmetric() {
        out.push(Violation::new(
            "noise.family",
            format!("symmetry required but {} is asymmetric", spec.family.name()),
        ));
    }
    out
}

pub fn l2_norm(v: &[f64]) -> f64 {
    norm_of(v.iter().copied())
}

fn norm_of(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest per-axis magnitude `c` such that the corner `(c, .., c)` of
/// dimension `dim` has Euclidean norm at most `delta` in floating point.
pub fn axis_magnitude(delta: f64, dim: usize) -> f64 {
    let mut c = delta / (dim as f64).sqrt();
    while norm_of(std::iter::repeat_n(c, dim)) > delta {
        c = c.next_down();
    }
    c
}

fn enforce_norm_bound(v: &mut [f64], delta: f64) {
    let norm = l2_norm(v);
    if norm <= delta {
        return;
    }
    let s = delta / norm;
    for c in v.iter_mut() {
        *c *= s;
    }
    while l2_norm(v) > delta {
        for c in v.iter_mut() {
            *c = if *c > 0.0 {
                c.next_down()
            } else if *c < 0.0 {
                c.next_up()
            } else {
                0.0
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> SeedSchedule {
        SeedSchedule::new(42, 7)
    }

    #[test]
    fn rademacher_support_d1() {
        let spec = NoiseSpec::rademacher(0.5);
        let mut seen = [false; 2];
        for t in 1..200 {
            let v = sample_noise_vec(&spec, &sched(), t, 0, 1).unwrap();
            assert!(v[0] == 0.5 || v[0] == -0.5, "{v:?}");
            seen[(v[0] > 0.0) as usize] = true;
        }
        assert!(seen[0] && seen[1]);
    }

    #[test]
    fn every_family_respects_bound() {
        for family in [
            NoiseFamily::UniformBall,
            NoiseFamily::UniformCube,
            NoiseFamily::RademacherAxes,
            NoiseFamily::SkewedAxes,
        ] {
            for dim in [1, 2, 3, 5, 7] {
                let spec = NoiseSpec::new(family, 0.3);
                for t in 1..2000 {
                    let v = sample_noise_vec(&spec, &sched(), t, 3, dim).unwrap();
                    assert!(l2_norm(&v) <= 0.3, "{family:?} d={dim}: {v:?}");
                }
            }
        }
    }

    #[test]
    fn axis_magnitude_corner_within_bound() {
        for dim in 1..40 {
            for delta in [0.1, 0.25, 0.5, 1.0, 3.7] {
                let c = axis_magnitude(delta, dim);
                assert!(l2_norm(&vec![c; dim]) <= delta);
                assert!(c > 0.99 * delta / (dim as f64).sqrt());
            }
        }
        assert_eq!(axis_magnitude(0.5, 1), 0.5);
    }

    #[test]
    fn draws_are_pure_functions_of_the_key() {
        let spec = NoiseSpec::uniform_ball(1.0);
        let a = sample_noise_vec(&spec, &sched(), 5, 2, 3).unwrap();
        let b = sample_noise_vec(&spec, &sched(), 5, 2, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_noise_vec(&spec, &sched(), 5, 3, 3).unwrap();
        assert_ne!(a, c);
        let d = sample_noise_vec(&spec, &SeedSchedule::new(42, 8), 5, 2, 3).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn keys_distinct_across_nearby_tuples() {
        let mut keys = std::collections::HashSet::new();
        for run in 0..8 {
            let s = SeedSchedule::new(1, run);
            for t in 0..64 {
                for i in 0..16 {
                    assert!(keys.insert(s.key(t, i)));
                }
            }
        }
    }

    #[test]
    fn t_zero_rejected() {
        let err = sample_noise_vec(&NoiseSpec::uniform_ball(1.0), &sched(), 0, 0, 1);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn bad_delta_is_config_error() {
        let err = sample_noise_vec(&NoiseSpec::uniform_ball(-1.0), &sched(), 1, 0, 1);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn ball_mean_near_zero() {
        // 4 sigma with sigma <= delta / sqrt(N)
        let spec = NoiseSpec::uniform_ball(1.0);
        let n = 1_000_000u64;
        let mut sum = [0.0f64; 3];
        let mut v = [0.0; 3];
        let s = SeedSchedule::new(9, 0);
        for t in 1..=n {
            sample_noise(&spec, &s, t, 0, &mut v).unwrap();
            for (acc, x) in sum.iter_mut().zip(&v) {
                *acc += x;
            }
        }
        for (k, total) in sum.iter().enumerate() {
            let mean = total / n as f64;
            assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "coord {k}: {mean}");
        }
    }

    #[test]
    fn skewed_axes_zero_mean_but_asymmetric() {
        let spec = NoiseSpec::new(NoiseFamily::SkewedAxes, 1.0);
        let s = SeedSchedule::new(3, 0);
        let n = 300_000u64;
        let mut sum = 0.0;
        let mut pos = 0u64;
        for t in 1..=n {
            let v = sample_noise_vec(&spec, &s, t, 0, 1).unwrap();
            sum += v[0];
            pos += (v[0] > 0.0) as u64;
        }
        assert!((sum / n as f64).abs() < 4.0 * 0.71 / (n as f64).sqrt());
        let frac = pos as f64 / n as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.005);
    }
}
