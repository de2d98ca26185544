//! Random-walk oracles: first passage in one dimension, stretched walks,
//! ball-visit profiles by dimension, and the cluster-gap walk that drives
//! two non-interacting HK clusters.

use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::ensemble::par_map_ordered;
use crate::error::{Error, Result, Violation};
use crate::noise::{l2_norm, NoiseSpec, SeedSchedule};
use crate::sample::HittingSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepDist {
    /// Unit step along one uniformly chosen axis, either sign.
    Simple,
    Noise {
        noise: NoiseSpec,
    },
}

impl StepDist {
    pub(crate) fn draw<R: RngCore>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            StepDist::Simple => {
                let w = rng.next_u64();
                out.fill(0.0);
                let axis = ((w >> 1) % out.len() as u64) as usize;
                out[axis] = if w & 1 == 1 { 1.0 } else { -1.0 };
            }
            StepDist::Noise { noise } => noise.draw_into(rng, out),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            StepDist::Simple => 1.0,
            StepDist::Noise { noise } => noise.delta,
        }
    }

    fn violations(&self) -> Vec<Violation> {
        match self {
            StepDist::Simple => Vec::new(),
            StepDist::Noise { noise } => noise.basic_violations(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkSpec {
    pub dim: usize,
    pub steps: StepDist,
    pub start: Vec<f64>,
}

impl WalkSpec {
    pub fn simple(dim: usize) -> Self {
        Self {
            dim,
            steps: StepDist::Simple,
            start: vec![0.0; dim],
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.steps.violations();
        if self.dim == 0 {
            v.push(Violation::new("walk.dim", "must be at least 1"));
        }
        if self.start.len() != self.dim {
            v.push(Violation::new(
                "walk.start",
                format!("expected {} coordinates", self.dim),
            ));
        }
        v
    }

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// `T_U = inf { t >= 1 : U(t) <= b }` for a one-dimensional walk.
pub fn first_passage_below(
    spec: &WalkSpec,
    b: f64,
    schedule: &SeedSchedule,
    horizon: u64,
) -> Result<HittingSample> {
    spec.validate()?;
    if spec.dim != 1 {
        return Err(Error::Usage("first passage is defined for dim = 1".into()));
    }
    let mut u = spec.start[0];
    let mut step = [0.0];
    let mut t_hit = None;
    for t in 1..=horizon {
        spec.steps.draw(&mut schedule.rng(t, 0), &mut step);
        u += step[0];
        if u <= b {
            t_hit = Some(t);
            break;
        }
    }
    Ok(HittingSample {
        run_index: schedule.run_index,
        base_seed: schedule.base_seed,
        t_hit,
        horizon,
        end_value: u,
        absorbing_ok: None,
    })
}

/// Bounded, sign-preserving `h` with `h(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StretchMap {
    Identity,
    Clamp { bound: f64 },
}

impl StretchMap {
    fn apply(self, x: f64) -> f64 {
        match self {
            StretchMap::Identity => x,
            StretchMap::Clamp { bound } => x.clamp(-bound, bound),
        }
    }
}

/// `S(1) = xi(1)`, `S(t+1) = g(U(t)) + h(xi(t+1))` with `g(x) = beta * x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StretchedWalkSpec {
    pub beta: f64,
    pub h: StretchMap,
    pub steps: StepDist,
}

impl StretchedWalkSpec {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.steps.violations();
        if !(self.beta.is_finite() && self.beta > 0.0) {
            v.push(Violation::new(
                "walk.beta",
                "g(x) = beta x is sign-preserving only for beta > 0",
            ));
        }
        if let StretchMap::Clamp { bound } = self.h {
            if !(bound.is_finite() && bound > 0.0) {
                v.push(Violation::new(
                    "walk.h.bound",
                    "h must be sign-preserving: bound > 0",
                ));
            }
        }
        v
    }
}

/// `T_1 = inf { t >= 1 : S(t) <= 0 }`.
pub fn stretched_first_passage(
    spec: &StretchedWalkSpec,
    schedule: &SeedSchedule,
    horizon: u64,
) -> Result<HittingSample> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut xi = [0.0];
    let mut u = 0.0;
    let mut s = 0.0;
    let mut t_hit = None;
    for t in 1..=horizon {
        spec.steps.draw(&mut schedule.rng(t, 0), &mut xi);
        s = if t == 1 {
            xi[0]
        } else {
            spec.beta * u + spec.h.apply(xi[0])
        };
        u += xi[0];
        if s <= 0.0 {
            t_hit = Some(t);
            break;
        }
    }
    Ok(HittingSample {
        run_index: schedule.run_index,
        base_seed: schedule.base_seed,
        t_hit,
        horizon,
        end_value: s,
        absorbing_ok: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceProfile {
    pub radius: f64,
    pub horizons: Vec<u64>,
    /// `visits[run][k]`: number of `t <= horizons[k]` with `||U(t)|| <= radius`.
    pub visits: Vec<Vec<u64>>,
    pub mean_visits: Vec<f64>,
    /// Mean of `||U(h)|| / sqrt(h)` at each horizon (0 for `h = 0`).
    pub mean_scaled_norm: Vec<f64>,
}

/// Counts visits of `runs` independent walks to the centred ball of radius
/// `radius`, including `t = 0`, at each of the increasing `horizons`.
pub fn recurrence_profile(
    spec: &WalkSpec,
    radius: f64,
    horizons: &[u64],
    runs: usize,
    base_seed: u64,
    workers: usize,
    deadline: Option<Instant>,
) -> Result<RecurrenceProfile> {
    spec.validate()?;
    if horizons.is_empty() || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(
            "horizons must be a nonempty increasing list".into(),
        ));
    }
    let last = *horizons.last().unwrap();
    let per_run = par_map_ordered(runs, workers, deadline, |k| {
        let sched = SeedSchedule::new(base_seed, k);
        let mut u = spec.start.clone();
        let mut step = vec![0.0; spec.dim];
        let mut counts = Vec::with_capacity(horizons.len());
        let mut norms = Vec::with_capacity(horizons.len());
        let mut visits = 0u64;
        let mut next = 0;
        for t in 0..=last {
            if t > 0 {
                spec.steps.draw(&mut sched.rng(t, 0), &mut step);
                for (a, b) in u.iter_mut().zip(&step) {
                    *a += b;
                }
            }
            let norm = l2_norm(&u);
            if norm <= radius {
                visits += 1;
            }
            if t == horizons[next] {
                counts.push(visits);
                norms.push(if t == 0 {
                    0.0
                } else {
                    norm / (t as f64).sqrt()
                });
                next += 1;
            }
        }
        Ok((counts, norms))
    })?;
    if per_run.iter().any(Option::is_none) {
        return Err(Error::ResourceLimit(
            "recurrence profile cut short by deadline".into(),
        ));
    }
    let per_run: Vec<(Vec<u64>, Vec<f64>)> = per_run.into_iter().flatten().collect();
    let m = per_run.len().max(1) as f64;
    let mean_visits = (0..horizons.len())
        .map(|k| per_run.iter().map(|r| r.0[k] as f64).sum::<f64>() / m)
        .collect();
    let mean_scaled_norm = (0..horizons.len())
        .map(|k| per_run.iter().map(|r| r.1[k]).sum::<f64>() / m)
        .collect();
    Ok(RecurrenceProfile {
        radius,
        horizons: horizons.to_vec(),
        visits: per_run.into_iter().map(|r| r.0).collect(),
        mean_visits,
        mean_scaled_norm,
    })
}

/// Two non-interacting clusters of sizes `sizes`, agents numbered as in the
/// HK two-cluster layout: the first `sizes[0]` ids form the first cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterWalkSpec {
    pub sizes: [usize; 2],
    pub dim: usize,
    pub noise: NoiseSpec,
    /// Radius of the ball around the origin that `gap + Z(t)` must enter;
    /// `None` skips the ball-hitting time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_radius: Option<f64>,
    /// `T_Q` fires once some `Q_ij` drops to this level. With `margin =
    /// epsilon` it is the first time a cross pair can interact.
    #[serde(default)]
    pub margin: f64,
}

impl ClusterWalkSpec {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.noise.basic_violations();
        if self.sizes[0] == 0 || self.sizes[1] == 0 {
            v.push(Violation::new(
                "walk.sizes",
                "both clusters must be nonempty",
            ));
        }
        if self.dim == 0 {
            v.push(Violation::new("walk.dim", "must be at least 1"));
        }
        if !self.margin.is_finite() {
            v.push(Violation::new("walk.margin", "must be finite"));
        }
        if self.target_radius.is_some_and(|r| !(r >= 0.0)) {
            v.push(Violation::new("walk.target_radius", "must be nonnegative"));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterWalkOutcome {
    /// `T_Q`: first `t` with `min_ij Q_ij(t) <= margin` along the first axis,
    /// oriented so that the initial gap is positive.
    pub t_q: HittingSample,
    /// First `t` with `||gap + Z(t)|| <= target_radius`.
    pub ball: HittingSample,
    /// `(t, Z(t))` every `stride` steps when recording was requested.
    pub z_path: Vec<(u64, Vec<f64>)>,
    /// Largest `||y(t)||` observed.
    pub max_increment: f64,
}

/// Simulates `Z(t) = sum_{k<=t} y(k)` with `y = mean(xi over V1) - mean(xi
/// over V2)` and `Q_ij(t) = g + Z(t-1) + xi_i(t) - xi_j(t)`, `g` the initial
/// centroid gap.
///
/// Noise for agent `i` at step `t` is drawn exactly as the HK engine draws
/// it, so with the same schedule the walk is coupled to an HK run.
pub fn cluster_gap_walk(
    spec: &ClusterWalkSpec,
    initial_gap: &[f64],
    schedule: &SeedSchedule,
    horizon: u64,
    record_stride: Option<u64>,
) -> Result<ClusterWalkOutcome> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if initial_gap.len() != spec.dim {
        return Err(Error::Usage(format!(
            "initial gap must have {} coordinates",
            spec.dim
        )));
    }
    let d = spec.dim;
    let [n1, n2] = spec.sizes;
    let sign = if initial_gap[0] < 0.0 { -1.0 } else { 1.0 };
    let mut z = vec![0.0; d];
    let mut xi = vec![0.0; (n1 + n2) * d];
    let mut mean1 = vec![0.0; d];
    let mut mean2 = vec![0.0; d];
    let mut pos = initial_gap.to_vec();
    let mut t_q = None;
    let mut ball = None;
    let mut z_path = Vec::new();
    let mut max_increment = 0.0f64;
    let mut t = 0;
    while t < horizon && (t_q.is_none() || (spec.target_radius.is_some() && ball.is_none())) {
        t += 1;
        for (i, row) in xi.chunks_exact_mut(d).enumerate() {
            spec.noise.draw_into(&mut schedule.rng(t, i as u64), row);
        }
        if t_q.is_none() {
            let min1 = (0..n1)
                .map(|i| sign * xi[i * d])
                .fold(f64::INFINITY, f64::min);
            let max2 = (n1..n1 + n2)
                .map(|j| sign * xi[j * d])
                .fold(f64::NEG_INFINITY, f64::max);
            if sign * (initial_gap[0] + z[0]) + min1 - max2 <= spec.margin {
                t_q = Some(t);
            }
        }
        mean1.fill(0.0);
        mean2.fill(0.0);
        for i in 0..n1 + n2 {
            let target = if i < n1 { &mut mean1 } else { &mut mean2 };
            for (m, x) in target.iter_mut().zip(&xi[i * d..(i + 1) * d]) {
                *m += x;
            }
        }
        let mut y2 = 0.0;
        for k in 0..d {
            let y = mean1[k] / n1 as f64 - mean2[k] / n2 as f64;
            y2 += y * y;
            z[k] += y;
            pos[k] = initial_gap[k] + z[k];
        }
        max_increment = max_increment.max(y2.sqrt());
        if ball.is_none() && spec.target_radius.is_some_and(|r| l2_norm(&pos) <= r) {
            ball = Some(t);
        }
        if let Some(s) = record_stride {
            if s > 0 && t.is_multiple_of(s) {
                z_path.push((t, z.clone()));
            }
        }
    }
    let mk = |t_hit: Option<u64>, end_value: f64| HittingSample {
        run_index: schedule.run_index,
        base_seed: schedule.base_seed,
        t_hit,
        horizon,
        end_value,
        absorbing_ok: None,
    };
    Ok(ClusterWalkOutcome {
        t_q: mk(t_q, sign * pos[0]),
        ball: mk(ball, l2_norm(&pos)),
        z_path,
        max_increment,
    })
}
