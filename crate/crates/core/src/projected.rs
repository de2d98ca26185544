//! The ball-projected recursion `S(t+1) = P_B(r)(f(S(t)) + xi(t+1))` and its
//! hitting time of the target ball `D = B(r0)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::model;
use crate::noise::{l2_norm, NoiseSpec, SeedSchedule};
use crate::sample::HittingSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapFamily {
    LinearScale {
        alpha: f64,
    },
    /// HK averaging of an `n x d` state read row-major from the ambient point.
    HkMean {
        n: usize,
        d: usize,
        epsilon: f64,
    },
    Identity,
}

impl MapFamily {
    /// The contraction constant this map is declared with.
    pub fn declared_alpha(&self) -> f64 {
        match self {
            MapFamily::LinearScale { alpha } => *alpha,
            MapFamily::HkMean { .. } | MapFamily::Identity => 1.0,
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            MapFamily::LinearScale { alpha } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = alpha * v;
                }
            }
            MapFamily::HkMean { n, d, epsilon } => model::hk_mean_into(x, n, d, epsilon, out),
            MapFamily::Identity => out.copy_from_slice(x),
        }
    }

    fn violations(&self, dim: usize) -> Vec<Violation> {
        let mut v = Vec::new();
        match *self {
            MapFamily::LinearScale { alpha } => {
                if !(alpha.is_finite() && alpha >= 0.0) {
                    v.push(Violation::new(
                        "projected.map.alpha",
                        "alpha must be finite and >= 0",
                    ));
                }
            }
            MapFamily::HkMean { n, d, epsilon } => {
                if n * d != dim {
                    v.push(Violation::new(
                        "projected.map",
                        format!("n*d = {} but dim = {dim}", n * d),
                    ));
                }
                if !(epsilon.is_finite() && epsilon > 0.0) {
                    v.push(Violation::new("projected.map.epsilon", "must be positive"));
                }
            }
            MapFamily::Identity => {}
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSystemSpec {
    pub dim: usize,
    pub r: f64,
    pub r0: f64,
    pub map: MapFamily,
    pub noise: NoiseSpec,
    pub start: Vec<f64>,
}

impl ProjectedSystemSpec {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.dim == 0 {
            v.push(Violation::new("projected.dim", "must be at least 1"));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            v.push(Violation::new("projected.r", "must be positive"));
        }
        if !(self.r0 > 0.0 && self.r0 < self.r) {
            v.push(Violation::new("projected.r0", "need 0 < r0 < r"));
        }
        if self.start.len() != self.dim {
            v.push(Violation::new(
                "projected.start",
                format!("expected {} coordinates", self.dim),
            ));
        } else if !(l2_norm(&self.start) <= self.r) {
            v.push(Violation::new("projected.start", "start must lie in B(r)"));
        }
        v.extend(self.map.violations(self.dim));
        v.extend(self.noise.basic_violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Nearest point of the closed centred ball of radius `r`.
pub fn project_to_ball(x: &[f64], r: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    project_in_place(&mut out, r);
    out
}

pub(crate) fn project_in_place(x: &mut [f64], r: f64) {
    let norm = l2_norm(x);
    if norm <= r {
        return;
    }
    let s = r / norm;
    for v in x.iter_mut() {
        *v *= s;
    }
    // rescaling can land one ulp outside
    while l2_norm(x) > r {
        for v in x.iter_mut() {
            *v = if *v > 0.0 {
                v.next_down()
            } else if *v < 0.0 {
                v.next_up()
            } else {
                0.0
            };
        }
    }
}

/// One step of the recursion with an explicit noise draw.
pub fn projected_step(s: &[f64], spec: &ProjectedSystemSpec, noise: &[f64]) -> Result<Vec<f64>> {
    if s.len() != spec.dim || noise.len() != spec.dim {
        return Err(Error::Usage(format!("expected dimension {}", spec.dim)));
    }
    let mut out = vec![0.0; spec.dim];
    spec.map.apply(s, &mut out);
    for (o, xi) in out.iter_mut().zip(noise) {
        *o += xi;
    }
    project_in_place(&mut out, spec.r);
    Ok(out)
}

/// `T_D = inf { t >= 1 : ||S(t)|| <= r0 }`, censored at `horizon`. The
/// ambient noise is one draw of dimension `dim` per step (agent index 0).
pub fn hitting_time_td(
    spec: &ProjectedSystemSpec,
    schedule: &SeedSchedule,
    horizon: u64,
) -> Result<HittingSample> {
    spec.validate()?;
    let mut s = spec.start.clone();
    let mut next = vec![0.0; spec.dim];
    let mut xi = vec![0.0; spec.dim];
    let mut t_hit = None;
    for t in 1..=horizon {
        spec.noise.draw_into(&mut schedule.rng(t, 0), &mut xi);
        spec.map.apply(&s, &mut next);
        for (o, e) in next.iter_mut().zip(&xi) {
            *o += e;
        }
        project_in_place(&mut next, spec.r);
        std::mem::swap(&mut s, &mut next);
        if l2_norm(&s) <= spec.r0 {
            t_hit = Some(t);
            break;
        }
    }
    Ok(HittingSample {
        run_index: schedule.run_index,
        base_seed: schedule.base_seed,
        t_hit,
        horizon,
        end_value: l2_norm(&s),
        absorbing_ok: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `dist(f(x), D) - alpha * dist(x, D)` seen.
    pub max_excess: f64,
}

/// Samples points outside `D = B(r0)` and counts failures of
/// `dist(f(x), D) <= alpha * dist(x, D)`. A relative slack of `1e-12` absorbs
/// rounding in the map.
pub fn audit_contraction(
    map: &MapFamily,
    alpha: f64,
    r0: f64,
    dim: usize,
    points: usize,
    seed: u64,
) -> AuditReport {
    let mut rng = SeedSchedule::new(seed, 0).initial_rng();
    let scale_hint = match map {
        MapFamily::HkMean { epsilon, .. } => *epsilon,
        _ => r0,
    };
    let mut x = vec![0.0; dim];
    let mut fx = vec![0.0; dim];
    let mut report = AuditReport {
        checked: 0,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
    };
    while report.checked < points {
        // mix of scales so that both sparse and dense neighbor graphs occur
        let spread = scale_hint * (0.05 + 4.0 * rng.random::<f64>());
        let shift = scale_hint * 4.0 * (rng.random::<f64>() - 0.5);
        for v in x.iter_mut() {
            *v = shift + spread * (2.0 * rng.random::<f64>() - 1.0);
        }
        let nx = l2_norm(&x);
        if nx <= r0 {
            continue;
        }
        map.apply(&x, &mut fx);
        let lhs = (l2_norm(&fx) - r0).max(0.0);
        let rhs = alpha * (nx - r0);
        let excess = lhs - rhs;
        report.max_excess = report.max_excess.max(excess);
        if excess > 1e-12 * nx.max(1.0) {
            report.violations += 1;
        }
        report.checked += 1;
    }
    report
}
