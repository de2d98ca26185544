//! Trajectories of the noisy HK system and the stopping time
//! `T = inf { t >= 0 : d_V(t) <= epsilon }`.

use crate::error::{Error, Result};
use crate::model::{self, AgentStates, ModelConfig, SpaceMode, Stepper};
use crate::noise::SeedSchedule;
use crate::sample::StoppingTimeSample;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl Partition {
    pub fn new(first: Vec<usize>, second: Vec<usize>) -> Self {
        Self { first, second }
    }
}

/// What to keep from a trajectory besides the stopping time. Everything is
/// off by default; strides bound memory on long runs.
#[derive(Clone, Debug, Default)]
pub struct RecordOptions {
    /// Record `d_V(t)` every this many steps.
    pub dv_stride: Option<u64>,
    pub snapshot_stride: Option<u64>,
    /// Record the centroid gap of this partition every `gap_stride` steps.
    pub gap_partition: Option<Partition>,
    pub gap_stride: u64,
    /// After a hit, keep stepping this many times and check `d_V <= epsilon`.
    pub continue_after_hit: u64,
}

impl RecordOptions {
    pub fn absorbing(steps: u64) -> Self {
        Self {
            continue_after_hit: steps,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbsorbingOutcome {
    pub steps: u64,
    pub violations: u64,
    pub first_violation: Option<u64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryRecord {
    pub dv_series: Vec<(u64, f64)>,
    pub snapshots: Vec<(u64, AgentStates)>,
    pub gap_series: Vec<(u64, f64)>,
    /// Number of updates applied, including any continuation.
    pub steps_executed: u64,
    pub absorbing: Option<AbsorbingOutcome>,
}

fn record(rec: &mut TrajectoryRecord, opts: &RecordOptions, t: u64, x: &AgentStates) -> Result<()> {
    if let Some(s) = opts.dv_stride {
        if s > 0 && t.is_multiple_of(s) {
            rec.dv_series.push((t, model::max_pairwise_distance(x)));
        }
    }
    if let Some(s) = opts.snapshot_stride {
        if s > 0 && t.is_multiple_of(s) {
            rec.snapshots.push((t, x.clone()));
        }
    }
    if let Some(p) = &opts.gap_partition {
        let s = opts.gap_stride.max(1);
        if t.is_multiple_of(s) {
            rec.gap_series.push((t, cluster_gap(x, p)?));
        }
    }
    Ok(())
}

/// Iterates the HK update from the configured initial state.
///
/// The returned sample hits at the first `t >= 0` with `d_V(t) <= epsilon`
/// and is censored at `horizon` otherwise. The whole run is a deterministic
/// function of `(cfg, schedule, horizon)`.
pub fn run_trajectory(
    cfg: &ModelConfig,
    schedule: &SeedSchedule,
    horizon: u64,
    opts: &RecordOptions,
) -> Result<(StoppingTimeSample, TrajectoryRecord)> {
    cfg.validate()?;
    if horizon < 1 {
        return Err(Error::Usage("horizon must be at least 1".into()));
    }
    let x0 = cfg.initial.realize(cfg, schedule)?;
    let mut traj = Trajectory::new(cfg, schedule, x0)?;
    let mut rec = TrajectoryRecord::default();

    let mut t_hit = None;
    loop {
        record(&mut rec, opts, traj.t, &traj.x)?;
        if traj.synchronized() {
            t_hit = Some(traj.t);
            break;
        }
        if traj.t >= horizon {
            break;
        }
        traj.advance()?;
    }
    let end_value = model::max_pairwise_distance(&traj.x);

    let absorbing = if t_hit.is_some() && opts.continue_after_hit > 0 {
        let mut out = AbsorbingOutcome {
            steps: opts.continue_after_hit,
            violations: 0,
            first_violation: None,
        };
        for _ in 0..opts.continue_after_hit {
            traj.advance()?;
            record(&mut rec, opts, traj.t, &traj.x)?;
            if !traj.synchronized() {
                out.violations += 1;
                out.first_violation.get_or_insert(traj.t);
            }
        }
        Some(out)
    } else {
        None
    };
    rec.steps_executed = traj.t;
    let sample = StoppingTimeSample {
        run_index: schedule.run_index,
        base_seed: schedule.base_seed,
        t_hit,
        horizon,
        end_value,
        absorbing_ok: absorbing.as_ref().map(|a| a.violations == 0),
    };
    rec.absorbing = absorbing;
    Ok((sample, rec))
}

/// Replays the run up to `t_hit`, continues the same noise stream for
/// `extra_steps`, and reports whether `d_V <= epsilon` held throughout.
///
/// Refuses when delta > epsilon / 2 unless the config carries the override.
pub fn check_absorbing(
    cfg: &ModelConfig,
    schedule: &SeedSchedule,
    t_hit: u64,
    extra_steps: u64,
) -> Result<bool> {
    if cfg.delta() > cfg.epsilon / 2.0 && !cfg.allow_large_delta {
        return Err(Error::Usage(
            "absorbing property only holds for delta <= epsilon/2".into(),
        ));
    }
    let (sample, rec) = run_trajectory(
        cfg,
        schedule,
        t_hit.max(1),
        &RecordOptions::absorbing(extra_steps),
    )?;
    if sample.t_hit != Some(t_hit) {
        return Err(Error::Usage(format!(
            "run does not hit at t = {t_hit} (replay gives {:?})",
            sample.t_hit
        )));
    }
    Ok(rec.absorbing.is_none_or(|a| a.violations == 0))
}

fn centroid(x: &AgentStates, part: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; x.d()];
    for &i in part {
        for (s, v) in c.iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for s in c.iter_mut() {
        *s /= part.len() as f64;
    }
    c
}

/// Centroid difference `centroid(first) - centroid(second)`.
pub fn cluster_gap_vector(x: &AgentStates, p: &Partition) -> Result<Vec<f64>> {
    if p.first.is_empty() || p.second.is_empty() {
        return Err(Error::Usage("cluster_gap needs two nonempty parts".into()));
    }
    let mut seen = vec![false; x.n()];
    for &i in p.first.iter().chain(&p.second) {
        if i >= x.n() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Usage(
                "partition must be a disjoint cover of the agents".into(),
            ));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Usage(
            "partition must be a disjoint cover of the agents".into(),
        ));
    }
    let a = centroid(x, &p.first);
    let b = centroid(x, &p.second);
    Ok(a.iter().zip(&b).map(|(u, v)| u - v).collect())
}

pub fn cluster_gap(x: &AgentStates, p: &Partition) -> Result<f64> {
    Ok(crate::noise::l2_norm(&cluster_gap_vector(x, p)?))
}

/// Mutable state of one trajectory with preallocated buffers.
pub(crate) struct Trajectory<'a> {
    cfg: &'a ModelConfig,
    schedule: SeedSchedule,
    pub(crate) t: u64,
    pub(crate) x: AgentStates,
    next: AgentStates,
    noise: Vec<f64>,
    stepper: Stepper,
    fresh: Option<bool>,
}

impl<'a> Trajectory<'a> {
    pub(crate) fn new(
        cfg: &'a ModelConfig,
        schedule: &SeedSchedule,
        x0: AgentStates,
    ) -> Result<Self> {
        let (n, d) = (x0.n(), x0.d());
        Ok(Self {
            cfg,
            schedule: *schedule,
            t: 0,
            stepper: Stepper::new(&x0, cfg.epsilon, cfg.index_mode, cfg.space_mode)?,
            next: AgentStates::zeros(n, d),
            noise: vec![0.0; n * d],
            x: x0,
            fresh: None,
        })
    }

    /// `d_V(t) <= epsilon` for the current state.
    pub(crate) fn synchronized(&mut self) -> bool {
        if let Some(s) = self.fresh {
            return s;
        }
        let s = self.stepper.compute_neighbors(&self.x);
        self.fresh = Some(s);
        s
    }

    pub(crate) fn advance(&mut self) -> Result<()> {
        self.synchronized();
        let t = self.t + 1;
        let d = self.x.d();
        for (i, row) in self.noise.chunks_exact_mut(d).enumerate() {
            self.cfg
                .noise
                .draw_into(&mut self.schedule.rng(t, i as u64), row);
        }
        self.stepper.apply(&self.x, &self.noise, &mut self.next);
        std::mem::swap(&mut self.x, &mut self.next);
        self.t = t;
        self.fresh = None;
        if self.cfg.space_mode == SpaceMode::Unbounded
            && self.x.max_abs() > self.cfg.magnitude_guard
        {
            return Err(Error::Runtime(format!(
                "state magnitude exceeded guard {} at t = {t} (run {})",
                self.cfg.magnitude_guard, self.schedule.run_index
            )));
        }
        Ok(())
    }
}
