//! Monte Carlo harness: replicated runs, censoring-aware survival curves,
//! censored means, and tail-shape fits.
//!
//! Runs are mapped in parallel and collected in `run_index` order, so every
//! summary is bit-identical for any worker count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, RecordOptions};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::noise::SeedSchedule;
use crate::sample::StoppingTimeSample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurvivalGrid {
    /// `0` followed by `ceil(ratio^k)`, deduplicated.
    Geometric {
        ratio: f64,
    },
    Linear {
        step: u64,
    },
}

impl Default for SurvivalGrid {
    fn default() -> Self {
        SurvivalGrid::Geometric { ratio: 1.2 }
    }
}

impl SurvivalGrid {
    /// Grid points in `[0, horizon]`; the horizon itself is always included.
    pub fn points(&self, horizon: u64) -> Vec<u64> {
        let mut pts = vec![0u64];
        match *self {
            SurvivalGrid::Geometric { ratio } => {
                let ratio = if ratio > 1.0 { ratio } else { 1.2 };
                for k in 0.. {
                    let t = ratio.powi(k).ceil() as u64;
                    if t > horizon {
                        break;
                    }
                    if *pts.last().unwrap() != t {
                        pts.push(t);
                    }
                }
            }
            SurvivalGrid::Linear { step } => {
                let step = step.max(1);
                let mut t = step;
                while t <= horizon {
                    pts.push(t);
                    t += step;
                }
            }
        }
        if *pts.last().unwrap() != horizon {
            pts.push(horizon);
        }
        pts
    }
}

/// Empirical `P{T >= t}` on a grid, from `min(T, horizon)` observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<u64>,
    pub values: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub runs: usize,
    pub censored: usize,
    pub horizon: u64,
}

impl SurvivalCurve {
    pub fn from_samples(samples: &[StoppingTimeSample], horizon: u64, grid: &SurvivalGrid) -> Self {
        let mut obs: Vec<u64> = samples.iter().map(|s| s.observed_at(horizon)).collect();
        obs.sort_unstable();
        let censored = samples.iter().filter(|s| !s.hit_by(horizon)).count();
        let m = obs.len();
        let times = grid.points(horizon);
        let at_risk: Vec<usize> = times
            .iter()
            .map(|&t| m - obs.partition_point(|&o| o < t))
            .collect();
        let values = at_risk
            .iter()
            .map(|&k| if m == 0 { 1.0 } else { k as f64 / m as f64 })
            .collect();
        Self {
            times,
            values,
            at_risk,
            runs: m,
            censored,
            horizon,
        }
    }

    /// Survival at the grid point equal to `t`, if present.
    pub fn at(&self, t: u64) -> Option<f64> {
        self.times.binary_search(&t).ok().map(|k| self.values[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailWindow {
    pub t_lo: u64,
    pub t_hi: u64,
}

impl TailWindow {
    pub fn new(t_lo: u64, t_hi: u64) -> Self {
        Self { t_lo, t_hi }
    }

    /// Smallest window covering the grid points whose survival lies in
    /// `[s_lo, s_hi]`.
    pub fn by_survival(curve: &SurvivalCurve, s_lo: f64, s_hi: f64) -> Option<Self> {
        let mut inside = curve
            .times
            .iter()
            .zip(&curve.values)
            .filter(|(_, &s)| s >= s_lo && s <= s_hi)
            .map(|(&t, _)| t);
        let lo = inside.next()?;
        let hi = inside.next_back().unwrap_or(lo);
        Some(Self::new(lo, hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRegime {
    /// `log S` linear in `t`.
    Geometric,
    /// `log S` linear in `log t` with slope in `(-1, 0)`: non-integrable.
    Heavy,
    Degenerate,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub semilog_slope: f64,
    pub semilog_r2: f64,
    pub loglog_slope: f64,
    pub loglog_r2: f64,
    pub window: TailWindow,
    pub points: usize,
    pub degenerate: bool,
    pub regime: TailRegime,
}

pub const MIN_FIT_POINTS: usize = 10;

/// Ordinary least squares `y = a + b x`; returns `(b, r^2)`. `r^2` is 0
/// when `y` is constant.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        0.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, r2)
}

pub fn fit_tail(curve: &SurvivalCurve, window: TailWindow) -> Result<TailFit> {
    if window.t_lo > window.t_hi || window.t_hi > curve.horizon {
        return Err(Error::Usage(format!(
            "window [{}, {}] outside curve support [0, {}]",
            window.t_lo, window.t_hi, curve.horizon
        )));
    }
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.values)
        .filter(|(&t, &s)| t >= window.t_lo && t <= window.t_hi && t > 0 && s > 0.0)
        .map(|(&t, &s)| (t as f64, s.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::Insufficient(format!(
            "{} positive survival points in window, need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let log_s: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let degenerate = log_s.iter().all(|&v| v == log_s[0]);
    let (semilog_slope, semilog_r2) = linear_fit(&t, &log_s);
    let (loglog_slope, loglog_r2) = linear_fit(&log_t, &log_s);
    let regime = if degenerate {
        TailRegime::Degenerate
    } else if loglog_r2 >= semilog_r2 && loglog_slope > -1.0 && loglog_slope < 0.0 {
        TailRegime::Heavy
    } else if semilog_r2 > loglog_r2 && semilog_slope < 0.0 {
        TailRegime::Geometric
    } else {
        TailRegime::Indeterminate
    };
    Ok(TailFit {
        semilog_slope,
        semilog_r2,
        loglog_slope,
        loglog_r2,
        window,
        points: pts.len(),
        degenerate,
        regime,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// Requested run count M.
    pub runs: usize,
    pub completed: usize,
    pub horizon: u64,
    pub hits: usize,
    pub hit_fraction: f64,
    /// Mean of `min(T, horizon)`.
    pub censored_mean: f64,
    pub survival: SurvivalCurve,
    pub tail_fit: Option<TailFit>,
    pub absorbing_violations: Option<usize>,
    pub incomplete: bool,
}

impl EnsembleSummary {
    pub fn from_samples(
        samples: &[StoppingTimeSample],
        runs: usize,
        horizon: u64,
        grid: &SurvivalGrid,
        window: Option<TailWindow>,
    ) -> Self {
        let completed = samples.len();
        let hits = samples.iter().filter(|s| s.hit_by(horizon)).count();
        let total: u128 = samples.iter().map(|s| s.observed_at(horizon) as u128).sum();
        let survival = SurvivalCurve::from_samples(samples, horizon, grid);
        let tail_fit = window.and_then(|w| fit_tail(&survival, w).ok());
        let checked: Vec<bool> = samples.iter().filter_map(|s| s.absorbing_ok).collect();
        Self {
            runs,
            completed,
            horizon,
            hits,
            hit_fraction: if completed == 0 {
                0.0
            } else {
                hits as f64 / completed as f64
            },
            censored_mean: if completed == 0 {
                0.0
            } else {
                total as f64 / completed as f64
            },
            survival,
            tail_fit,
            absorbing_violations: (!checked.is_empty())
                .then(|| checked.iter().filter(|ok| !**ok).count()),
            incomplete: completed < runs,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EnsembleOptions {
    pub workers: usize,
    /// Post-hit continuation length for the absorbing check.
    pub absorbing_steps: u64,
    pub grid: SurvivalGrid,
    pub tail_window: Option<TailWindow>,
    /// Runs not yet started at this instant are skipped and the result is
    /// flagged incomplete.
    pub deadline: Option<Instant>,
}

impl EnsembleOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub summary: EnsembleSummary,
    pub samples: Vec<StoppingTimeSample>,
}

/// Maps `f` over `0..runs` on a pool of `workers` threads, results in index
/// order. Indices not started before `deadline` come back as `None`.
pub fn par_map_ordered<T, F>(
    runs: usize,
    workers: usize,
    deadline: Option<Instant>,
    f: F,
) -> Result<Vec<Option<T>>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<Option<Result<T>>> = pool.install(|| {
        (0..runs as u64)
            .into_par_iter()
            .map(|k| {
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    None
                } else {
                    Some(f(k))
                }
            })
            .collect()
    });
    results.into_iter().map(Option::transpose).collect()
}

/// [`par_map_ordered`] for samples; the flag is true when the deadline cut
/// the ensemble short.
pub fn run_parallel<F>(
    runs: usize,
    workers: usize,
    deadline: Option<Instant>,
    f: F,
) -> Result<(Vec<StoppingTimeSample>, bool)>
where
    F: Fn(u64) -> Result<StoppingTimeSample> + Sync,
{
    let results = par_map_ordered(runs, workers, deadline, f)?;
    let incomplete = results.iter().any(Option::is_none);
    Ok((results.into_iter().flatten().collect(), incomplete))
}

pub fn run_ensemble(
    cfg: &ModelConfig,
    runs: usize,
    horizon: u64,
    base_seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if runs < 1 {
        return Err(Error::Usage("ensemble needs at least one run".into()));
    }
    cfg.validate()?;
    let rec = RecordOptions::absorbing(opts.absorbing_steps);
    let (samples, _) = run_parallel(runs, opts.workers, opts.deadline, |k| {
        engine::run_trajectory(cfg, &SeedSchedule::new(base_seed, k), horizon, &rec).map(|(s, _)| s)
    })?;
    let summary =
        EnsembleSummary::from_samples(&samples, runs, horizon, &opts.grid, opts.tail_window);
    Ok(EnsembleResult { summary, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonPoint {
    pub horizon: u64,
    pub censored_mean: f64,
    pub hit_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthVerdict {
    /// Last mean at least twice the first.
    Growing,
    /// Last mean within 5% of the first.
    Stable,
    Indeterminate,
}

pub const GROWTH_FACTOR: f64 = 2.0;
pub const STABLE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub points: Vec<HorizonPoint>,
    pub verdict: Option<GrowthVerdict>,
}

impl GrowthReport {
    /// Evaluates the same runs truncated at each horizon. The samples must
    /// have been run to at least the largest horizon.
    pub fn from_samples(samples: &[StoppingTimeSample], horizons: &[u64]) -> Self {
        let m = samples.len().max(1) as f64;
        let points: Vec<HorizonPoint> = horizons
            .iter()
            .map(|&h| HorizonPoint {
                horizon: h,
                censored_mean: samples.iter().map(|s| s.observed_at(h) as f64).sum::<f64>() / m,
                hit_fraction: samples.iter().filter(|s| s.hit_by(h)).count() as f64 / m,
            })
            .collect();
        let verdict = (points.len() >= 2).then(|| {
            let first = points[0].censored_mean;
            let last = points[points.len() - 1].censored_mean;
            if first > 0.0 && last >= GROWTH_FACTOR * first {
                GrowthVerdict::Growing
            } else if (last - first).abs() <= STABLE_TOLERANCE * first.max(f64::MIN_POSITIVE) {
                GrowthVerdict::Stable
            } else {
                GrowthVerdict::Indeterminate
            }
        });
        Self { points, verdict }
    }

    pub fn ratio(&self) -> Option<f64> {
        let first = self.points.first()?;
        let last = self.points.last()?;
        Some(last.censored_mean / first.censored_mean)
    }
}

/// Censored means of one ensemble at each horizon. Runs go to the largest
/// horizon once; smaller horizons reuse them truncated, so each run is
/// extended rather than resampled.
pub fn censored_mean_growth(
    cfg: &ModelConfig,
    runs: usize,
    horizons: &[u64],
    base_seed: u64,
    opts: &EnsembleOptions,
) -> Result<(GrowthReport, EnsembleResult)> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(
            "horizons must be a nonempty increasing list".into(),
        ));
    }
    let result = run_ensemble(cfg, runs, *horizons.last().unwrap(), base_seed, opts)?;
    Ok((
        GrowthReport::from_samples(&result.samples, horizons),
        result,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t_hit: Option<u64>, horizon: u64) -> StoppingTimeSample {
        StoppingTimeSample {
            run_index: 0,
            base_seed: 0,
            t_hit,
            horizon,
            end_value: 0.0,
            absorbing_ok: None,
        }
    }

    #[test]
    fn geometric_grid_shape() {
        let g = SurvivalGrid::default().points(10);
        let mut expect = vec![0u64];
        for k in 0..20 {
            let t = 1.2f64.powi(k).ceil() as u64;
            if t <= 10 && *expect.last().unwrap() != t {
                expect.push(t);
            }
        }
        if *expect.last().unwrap() != 10 {
            expect.push(10);
        }
        assert_eq!(g, expect);
        let g = SurvivalGrid::default().points(1_000_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.len() < 100);
    }

    #[test]
    fn survival_basic() {
        let s = vec![
            sample(Some(0), 5),
            sample(Some(2), 5),
            sample(None, 5),
            sample(Some(5), 5),
        ];
        let c = SurvivalCurve::from_samples(&s, 5, &SurvivalGrid::Linear { step: 1 });
        assert_eq!(c.times, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(c.values, vec![1.0, 0.75, 0.75, 0.5, 0.5, 0.5]);
        assert_eq!(c.censored, 1);
    }

    #[test]
    fn synthetic_geometric_law() {
        // P{T >= t} = q^t exactly on the grid: fit recovers ln q
        let q: f64 = 0.99;
        let times: Vec<u64> = (0..=400).collect();
        let values: Vec<f64> = times.iter().map(|&t| q.powi(t as i32)).collect();
        let curve = SurvivalCurve {
            at_risk: vec![0; times.len()],
            times,
            values,
            runs: 0,
            censored: 0,
            horizon: 400,
        };
        let fit = fit_tail(&curve, TailWindow::new(10, 400)).unwrap();
        assert!((fit.semilog_slope - q.ln()).abs() < 1e-9);
        assert_eq!(fit.regime, TailRegime::Geometric);
    }

    #[test]
    fn constant_curve_is_degenerate() {
        let s: Vec<_> = (0..10).map(|_| sample(None, 100)).collect();
        let c = SurvivalCurve::from_samples(&s, 100, &SurvivalGrid::Linear { step: 1 });
        let fit = fit_tail(&c, TailWindow::new(1, 100)).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.semilog_slope, 0.0);
        assert_eq!(fit.loglog_slope, 0.0);
        assert_eq!(fit.regime, TailRegime::Degenerate);
    }

    #[test]
    fn too_few_points() {
        let s = vec![sample(Some(3), 5)];
        let c = SurvivalCurve::from_samples(&s, 5, &SurvivalGrid::Linear { step: 1 });
        assert!(matches!(
            fit_tail(&c, TailWindow::new(1, 5)),
            Err(Error::Insufficient(_))
        ));
        assert!(matches!(
            fit_tail(&c, TailWindow::new(1, 50)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn growth_single_horizon_has_no_verdict() {
        let s = vec![sample(Some(3), 10)];
        let g = GrowthReport::from_samples(&s, &[10]);
        assert_eq!(g.points.len(), 1);
        assert_eq!(g.verdict, None);
    }

    #[test]
    fn growth_verdicts() {
        let s = vec![sample(None, 1000), sample(Some(1), 1000)];
        let g = GrowthReport::from_samples(&s, &[10, 1000]);
        assert_eq!(g.verdict, Some(GrowthVerdict::Growing));
        let s = vec![sample(Some(4), 1000), sample(Some(1), 1000)];
        let g = GrowthReport::from_samples(&s, &[10, 1000]);
        assert_eq!(g.verdict, Some(GrowthVerdict::Stable));
    }
}
