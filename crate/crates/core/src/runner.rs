//! Executes an [`ExperimentConfig`] and writes its output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::{ExperimentConfig, Scenario, WalkScenario};
use crate::engine::{self, RecordOptions};
use crate::ensemble::{run_parallel, EnsembleSummary, GrowthReport, SurvivalCurve};
use crate::error::{Error, Result};
use crate::noise::SeedSchedule;
use crate::projected;
use crate::sample::StoppingTimeSample;
use crate::walk::{self, RecurrenceProfile};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const WORKERS_ENV: &str = "HKSYNC_WORKERS";

/// Hit fractions at successive horizons differing by less than this count
/// as a plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub fingerprint: String,
    pub tool_version: String,
    pub name: Option<String>,
    pub scenario: Scenario,
    pub workers: usize,
    pub ensemble: Option<EnsembleSummary>,
    pub growth: Option<GrowthReport>,
    /// Non-hit fraction above the tolerance and flat over the last two
    /// horizons.
    pub plateau: Option<bool>,
    pub recurrence: Option<RecurrenceSummary>,
    pub incomplete: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecurrenceSummary {
    pub radius: f64,
    pub horizons: Vec<u64>,
    pub mean_visits: Vec<f64>,
    pub mean_scaled_norm: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub samples: Vec<StoppingTimeSample>,
    pub dir: PathBuf,
}

impl RunOutput {
    /// The one-line console report.
    pub fn line(&self) -> String {
        let s = &self.summary;
        let mut out = s.name.as_deref().unwrap_or("experiment").to_string();
        if let Some(e) = &s.ensemble {
            out += &format!(
                " runs={} hit_fraction={} censored_mean={}",
                e.completed, e.hit_fraction, e.censored_mean
            );
            match &e.tail_fit {
                Some(f) => {
                    out += &format!(
                        " semilog_slope={:.4e} loglog_slope={:.4}",
                        f.semilog_slope, f.loglog_slope
                    )
                }
                None => out += " tail_fit=none",
            }
        }
        if let Some(r) = &s.recurrence {
            out += &format!(" mean_visits={:?}", r.mean_visits);
        }
        if let Some(p) = s.plateau {
            out += &format!(" plateau={p}");
        }
        if s.incomplete {
            out += " INCOMPLETE";
        }
        out
    }
}

/// Worker count after the environment override.
pub fn effective_workers(cfg: &ExperimentConfig) -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w >= 1 => Ok(w),
            _ => Err(Error::Usage(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(cfg.ensemble.workers),
    }
}

fn plateau(growth: &GrowthReport) -> Option<bool> {
    let [.., a, b] = growth.points.as_slice() else {
        return None;
    };
    Some(
        1.0 - b.hit_fraction > PLATEAU_TOLERANCE
            && (b.hit_fraction - a.hit_fraction).abs() < PLATEAU_TOLERANCE,
    )
}

/// Runs the experiment and writes `samples.csv`, `survival.csv` (or
/// `visits.csv` for recurrence profiles) and `summary.json` under
/// `out_dir`, defaulting to the configured directory.
///
/// Outputs are written even when the time budget cut the ensemble short;
/// the summary is then flagged and a resource error returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let workers = effective_workers(cfg)?;
    let fingerprint = cfg.fingerprint()?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir)?;

    let ens = &cfg.ensemble;
    let deadline = ens
        .max_seconds
        .map(|s| Instant::now() + Duration::from_secs_f64(s));
    let horizon = ens.horizon;
    let mut summary = RunSummary {
        fingerprint: fingerprint.clone(),
        tool_version: TOOL_VERSION.to_string(),
        name: cfg.name.clone(),
        scenario: cfg.scenario,
        workers,
        ensemble: None,
        growth: None,
        plateau: None,
        recurrence: None,
        incomplete: false,
    };

    let mut samples = Vec::new();
    if let Some(WalkScenario::Recurrence { radius, .. }) = &cfg.walk {
        let spec = cfg.walk.as_ref().and_then(WalkScenario::walk_spec).unwrap();
        let horizons = ens.report_horizons();
        let profile = walk::recurrence_profile(
            &spec,
            *radius,
            &horizons,
            ens.runs,
            ens.base_seed,
            workers,
            deadline,
        );
        let profile = match profile {
            Err(Error::ResourceLimit(_)) => {
                summary.incomplete = true;
                None
            }
            other => Some(other?),
        };
        if let Some(p) = &profile {
            write_visits(&dir.join("visits.csv"), &fingerprint, p)?;
            summary.recurrence = Some(RecurrenceSummary {
                radius: p.radius,
                horizons: p.horizons.clone(),
                mean_visits: p.mean_visits.clone(),
                mean_scaled_norm: p.mean_scaled_norm.clone(),
            });
        }
    } else {
        let (s, incomplete) = match cfg.scenario {
            Scenario::Hk => {
                let model = cfg.model().unwrap();
                let rec = RecordOptions::absorbing(ens.absorbing_steps);
                run_parallel(ens.runs, workers, deadline, |k| {
                    engine::run_trajectory(
                        &model,
                        &SeedSchedule::new(ens.base_seed, k),
                        horizon,
                        &rec,
                    )
                    .map(|r| r.0)
                })?
            }
            Scenario::Projected => {
                let spec = cfg.projected.as_ref().unwrap();
                run_parallel(ens.runs, workers, deadline, |k| {
                    projected::hitting_time_td(spec, &SeedSchedule::new(ens.base_seed, k), horizon)
                })?
            }
            Scenario::Walk => {
                let w = cfg.walk.as_ref().unwrap();
                run_parallel(ens.runs, workers, deadline, |k| {
                    let sch = SeedSchedule::new(ens.base_seed, k);
                    match w {
                        WalkScenario::FirstPassage { b, .. } => {
                            walk::first_passage_below(&w.walk_spec().unwrap(), *b, &sch, horizon)
                        }
                        WalkScenario::Stretched { .. } => walk::stretched_first_passage(
                            &w.stretched_spec().unwrap(),
                            &sch,
                            horizon,
                        ),
                        WalkScenario::ClusterGap { .. } => {
                            let (spec, gap) = w.cluster_spec().unwrap();
                            walk::cluster_gap_walk(&spec, &gap, &sch, horizon, None).map(|o| o.t_q)
                        }
                        WalkScenario::Recurrence { .. } => unreachable!(),
                    }
                })?
            }
        };
        samples = s;
        let curve = SurvivalCurve::from_samples(&samples, horizon, &ens.grid);
        let window = cfg.tail_window(&curve);
        let es = EnsembleSummary::from_samples(&samples, ens.runs, horizon, &ens.grid, window);
        if ens.horizons.iter().any(|&h| h < horizon) {
            let growth = GrowthReport::from_samples(&samples, &ens.report_horizons());
            summary.plateau = plateau(&growth);
            summary.growth = Some(growth);
        }
        summary.incomplete = incomplete;
        write_samples(&dir.join("samples.csv"), &fingerprint, &samples)?;
        write_survival(&dir.join("survival.csv"), &fingerprint, &es.survival)?;
        summary.ensemble = Some(es);
    }

    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Runtime(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    let incomplete = summary.incomplete;
    let out = RunOutput {
        summary,
        samples,
        dir,
    };
    if incomplete {
        return Err(Error::ResourceLimit(format!(
            "time budget exhausted; partial outputs in {} are flagged incomplete",
            out.dir.display()
        )));
    }
    Ok(out)
}

fn csv_writer(path: &Path, fingerprint: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# fingerprint: {fingerprint}")?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn finish(w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Runtime(format!("csv: {e}"))
}

pub fn write_samples(path: &Path, fingerprint: &str, samples: &[StoppingTimeSample]) -> Result<()> {
    let mut w = csv_writer(path, fingerprint)?;
    w.write_record([
        "run_index",
        "hit",
        "t_hit_or_horizon",
        "censored",
        "d_v_end",
    ])
    .map_err(csv_err)?;
    for s in samples {
        w.write_record([
            s.run_index.to_string(),
            u8::from(s.hit()).to_string(),
            s.observed().to_string(),
            u8::from(s.censored()).to_string(),
            s.end_value.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_survival(path: &Path, fingerprint: &str, curve: &SurvivalCurve) -> Result<()> {
    let mut w = csv_writer(path, fingerprint)?;
    w.write_record(["t", "survival", "n_at_risk"])
        .map_err(csv_err)?;
    for ((t, s), r) in curve.times.iter().zip(&curve.values).zip(&curve.at_risk) {
        w.write_record([t.to_string(), s.to_string(), r.to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

fn write_visits(path: &Path, fingerprint: &str, p: &RecurrenceProfile) -> Result<()> {
    let mut w = csv_writer(path, fingerprint)?;
    let mut header = vec!["run_index".to_string()];
    header.extend(p.horizons.iter().map(|h| format!("visits_{h}")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, row) in p.visits.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

/// One `samples.csv` row: `(run_index, hit, t_hit_or_horizon, censored, d_v_end)`.
pub type SampleRow = (u64, bool, u64, bool, f64);

/// Reads back a `samples.csv`, returning its fingerprint and rows.
pub fn read_samples(path: &Path) -> Result<(String, Vec<SampleRow>)> {
    let text = std::fs::read_to_string(path)?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    let fingerprint = first
        .strip_prefix("# fingerprint: ")
        .ok_or_else(|| Error::Parse(format!("{}: missing fingerprint line", path.display())))?
        .to_string();
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(body.as_bytes()).records() {
        let rec = rec.map_err(csv_err)?;
        let field = |k: usize| rec.get(k).unwrap_or_default();
        let bad = |k: usize| Error::Parse(format!("{}: bad field {k} in {rec:?}", path.display()));
        rows.push((
            field(0).parse().map_err(|_| bad(0))?,
            field(1) == "1",
            field(2).parse().map_err(|_| bad(2))?,
            field(3) == "1",
            field(4).parse().map_err(|_| bad(4))?,
        ));
    }
    Ok((fingerprint, rows))
}
