//! Experiment configuration files (TOML) and the built-in presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{SurvivalGrid, TailWindow};
use crate::error::{Error, Result, Violation};
use crate::model::{InitialCondition, ModelConfig, SpaceMode};
use crate::neighbor::IndexMode;
use crate::noise::{NoiseFamily, NoiseSpec};
use crate::projected::{MapFamily, ProjectedSystemSpec};
use crate::walk::{ClusterWalkSpec, StepDist, StretchMap, StretchedWalkSpec, WalkSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Hk,
    Projected,
    Walk,
}

/// The walk experiments the runner knows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WalkScenario {
    FirstPassage {
        #[serde(default = "default_simple")]
        steps: StepDist,
        #[serde(default)]
        start: f64,
        #[serde(default)]
        b: f64,
    },
    Stretched {
        beta: f64,
        h: StretchMap,
        steps: StepDist,
    },
    Recurrence {
        dim: usize,
        #[serde(default = "default_simple")]
        steps: StepDist,
        radius: f64,
    },
    ClusterGap {
        sizes: [usize; 2],
        dim: usize,
        noise: NoiseSpec,
        initial_gap: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_radius: Option<f64>,
        #[serde(default)]
        margin: f64,
    },
}

fn default_simple() -> StepDist {
    StepDist::Simple
}

impl WalkScenario {
    pub fn walk_spec(&self) -> Option<WalkSpec> {
        match self {
            WalkScenario::FirstPassage { steps, start, .. } => Some(WalkSpec {
                dim: 1,
                steps: steps.clone(),
                start: vec![*start],
            }),
            WalkScenario::Recurrence { dim, steps, .. } => Some(WalkSpec {
                dim: *dim,
                steps: steps.clone(),
                start: vec![0.0; *dim],
            }),
            _ => None,
        }
    }

    pub fn stretched_spec(&self) -> Option<StretchedWalkSpec> {
        match self {
            WalkScenario::Stretched { beta, h, steps } => Some(StretchedWalkSpec {
                beta: *beta,
                h: *h,
                steps: steps.clone(),
            }),
            _ => None,
        }
    }

    pub fn cluster_spec(&self) -> Option<(ClusterWalkSpec, Vec<f64>)> {
        match self {
            WalkScenario::ClusterGap {
                sizes,
                dim,
                noise,
                initial_gap,
                target_radius,
                margin,
            } => Some((
                ClusterWalkSpec {
                    sizes: *sizes,
                    dim: *dim,
                    noise: noise.clone(),
                    target_radius: *target_radius,
                    margin: *margin,
                },
                initial_gap.clone(),
            )),
            _ => None,
        }
    }

    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if let Some(spec) = self.walk_spec() {
            v.extend(spec.violations());
        }
        if let Some(spec) = self.stretched_spec() {
            v.extend(spec.violations());
        }
        if let Some((spec, gap)) = self.cluster_spec() {
            v.extend(spec.violations());
            if gap.len() != spec.dim {
                v.push(Violation::new(
                    "walk.initial_gap",
                    format!("expected {} coordinates", spec.dim),
                ));
            }
        }
        match self {
            WalkScenario::FirstPassage { b, .. } if *b > 0.0 => {
                v.push(Violation::new("walk.b", "barrier must be <= 0"));
            }
            WalkScenario::Recurrence { radius, .. } if !(*radius >= 0.0) => {
                v.push(Violation::new("walk.radius", "must be nonnegative"));
            }
            _ => {}
        }
        v
    }
}

fn default_runs() -> usize {
    1000
}

fn default_horizon() -> u64 {
    100_000
}

fn default_workers() -> usize {
    1
}

fn default_tail_survival() -> [f64; 2] {
    [0.01, 0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Largest simulated step; also the horizon of the survival curve.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Intermediate horizons for censored-mean and hit-fraction reports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<u64>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Steps simulated past each hit to check the absorbing property.
    #[serde(default)]
    pub absorbing_steps: u64,
    #[serde(default)]
    pub grid: SurvivalGrid,
    /// Explicit tail-fit window; otherwise chosen by survival level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_window: Option<TailWindow>,
    #[serde(default = "default_tail_survival")]
    pub tail_survival: [f64; 2],
    /// Wall-clock budget; runs not started in time are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seconds: Option<f64>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            runs: default_runs(),
            horizon: default_horizon(),
            horizons: Vec::new(),
            base_seed: 0,
            workers: default_workers(),
            absorbing_steps: 0,
            grid: SurvivalGrid::default(),
            tail_window: None,
            tail_survival: default_tail_survival(),
            max_seconds: None,
        }
    }
}

impl EnsembleSection {
    /// Reporting horizons: the configured list, always ending at `horizon`.
    pub fn report_horizons(&self) -> Vec<u64> {
        let mut h: Vec<u64> = self
            .horizons
            .iter()
            .copied()
            .filter(|&h| h < self.horizon)
            .collect();
        h.push(self.horizon);
        h
    }

    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.runs < 1 {
            v.push(Violation::new("ensemble.runs", "must be at least 1"));
        }
        if self.horizon < 1 {
            v.push(Violation::new("ensemble.horizon", "must be at least 1"));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            v.push(Violation::new(
                "ensemble.horizons",
                "must be strictly increasing",
            ));
        }
        if self.horizons.iter().any(|&h| h > self.horizon) {
            v.push(Violation::new(
                "ensemble.horizons",
                "must not exceed ensemble.horizon",
            ));
        }
        if self.workers < 1 {
            v.push(Violation::new("ensemble.workers", "must be at least 1"));
        }
        if let SurvivalGrid::Geometric { ratio } = self.grid {
            if !(ratio > 1.0) {
                v.push(Violation::new("ensemble.grid.ratio", "must exceed 1"));
            }
        }
        let [lo, hi] = self.tail_survival;
        if !(0.0 < lo && lo < hi && hi <= 1.0) {
            v.push(Violation::new(
                "ensemble.tail_survival",
                "need 0 < lo < hi <= 1",
            ));
        }
        if let Some(w) = self.tail_window {
            if w.t_lo >= w.t_hi {
                v.push(Violation::new("ensemble.tail_window", "need t_lo < t_hi"));
            }
        }
        if self.max_seconds.is_some_and(|s| !(s > 0.0)) {
            v.push(Violation::new("ensemble.max_seconds", "must be positive"));
        }
        v
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_output_dir(),
        }
    }
}

fn default_guard() -> f64 {
    1e12
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn default_initial() -> InitialCondition {
    InitialCondition::UniformBox {
        half_width: 1.0,
        seed: None,
    }
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::uniform_ball(0.0)
}

/// A complete experiment: one scenario payload plus ensemble and output
/// settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space_mode: Option<SpaceMode>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_large_delta: bool,
    #[serde(default)]
    pub index_mode: IndexMode,
    #[serde(default = "default_guard")]
    pub magnitude_guard: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected: Option<ProjectedSystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk: Option<WalkScenario>,

    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    fn blank(scenario: Scenario) -> Self {
        Self {
            scenario,
            name: None,
            n: None,
            d: None,
            epsilon: None,
            space_mode: None,
            allow_large_delta: false,
            index_mode: IndexMode::Auto,
            magnitude_guard: default_guard(),
            noise: None,
            initial: None,
            projected: None,
            walk: None,
            ensemble: EnsembleSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn hk(model: &ModelConfig) -> Self {
        Self {
            n: Some(model.n),
            d: Some(model.d),
            epsilon: Some(model.epsilon),
            space_mode: Some(model.space_mode),
            allow_large_delta: model.allow_large_delta,
            index_mode: model.index_mode,
            magnitude_guard: model.magnitude_guard,
            noise: Some(model.noise.clone()),
            initial: Some(model.initial.clone()),
            ..Self::blank(Scenario::Hk)
        }
    }

    pub fn projected(spec: ProjectedSystemSpec) -> Self {
        Self {
            projected: Some(spec),
            ..Self::blank(Scenario::Projected)
        }
    }

    pub fn walk(walk: WalkScenario) -> Self {
        Self {
            walk: Some(walk),
            ..Self::blank(Scenario::Walk)
        }
    }

    /// The HK model, with defaults for the noise family and initial state.
    /// Only meaningful for the `hk` scenario.
    pub fn model(&self) -> Option<ModelConfig> {
        Some(ModelConfig {
            n: self.n?,
            d: self.d?,
            epsilon: self.epsilon?,
            space_mode: self.space_mode?,
            noise: self.noise.clone().unwrap_or_else(default_noise),
            initial: self.initial.clone().unwrap_or_else(default_initial),
            allow_large_delta: self.allow_large_delta,
            index_mode: self.index_mode,
            magnitude_guard: self.magnitude_guard,
        })
    }

    /// Every problem with the config, each tagged with its key.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let hk_keys = [
            ("n", self.n.is_some()),
            ("d", self.d.is_some()),
            ("epsilon", self.epsilon.is_some()),
            ("space_mode", self.space_mode.is_some()),
            ("noise", self.noise.is_some()),
            ("initial", self.initial.is_some()),
        ];
        match self.scenario {
            Scenario::Hk => {
                for (key, present) in &hk_keys[..5] {
                    if !present {
                        v.push(Violation::new(*key, "required for the hk scenario"));
                    }
                }
                match self.model() {
                    Some(m) if v.is_empty() => v.extend(m.violations()),
                    _ => {}
                }
            }
            Scenario::Projected => match &self.projected {
                Some(p) => v.extend(p.violations()),
                None => v.push(Violation::new(
                    "projected",
                    "required for the projected scenario",
                )),
            },
            Scenario::Walk => match &self.walk {
                Some(w) => v.extend(w.violations()),
                None => v.push(Violation::new("walk", "required for the walk scenario")),
            },
        }
        if self.scenario != Scenario::Hk {
            for (key, present) in hk_keys {
                if present {
                    v.push(Violation::new(key, "only valid for the hk scenario"));
                }
            }
        }
        if self.scenario != Scenario::Projected && self.projected.is_some() {
            v.push(Violation::new(
                "projected",
                "only valid for the projected scenario",
            ));
        }
        if self.scenario != Scenario::Walk && self.walk.is_some() {
            v.push(Violation::new("walk", "only valid for the walk scenario"));
        }
        v.extend(self.ensemble.violations());
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

    /// Canonical TOML serialization; the fingerprint is taken over it.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Runtime(format!("serializing config: {e}")))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Tail-fit window: the configured one, or the grid points whose
    /// survival falls in `tail_survival`.
    pub fn tail_window(&self, curve: &crate::ensemble::SurvivalCurve) -> Option<TailWindow> {
        self.ensemble.tail_window.or_else(|| {
            let [lo, hi] = self.ensemble.tail_survival;
            TailWindow::by_survival(curve, lo, hi)
        })
    }
}

/// Parses without validating.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Reads, parses, defaults and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = toml::from_str::<ExperimentConfig>(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub const PRESET_NAMES: [&str; 8] = [
    "thm1_bounded",
    "thm2a_d1",
    "thm2a_d2",
    "thm2b_d3",
    "lemma1_alpha_gt1",
    "corollary1",
    "lemma2_walk",
    "lemma4_recurrence",
];

fn named(mut cfg: ExperimentConfig, name: &str) -> ExperimentConfig {
    cfg.name = Some(name.to_string());
    cfg.output.dir = PathBuf::from("out").join(name);
    cfg
}

fn two_cluster(d: usize, separation_eps: f64, horizons: &[u64]) -> ExperimentConfig {
    let model = ModelConfig::new(
        4,
        d,
        1.0,
        SpaceMode::Unbounded,
        NoiseSpec::uniform_ball(0.5).with_symmetry(),
        InitialCondition::TwoCluster {
            separation_eps,
            sizes: [2, 2],
            spread: 0.5,
        },
    );
    let mut cfg = ExperimentConfig::hk(&model);
    cfg.ensemble.horizon = *horizons.last().unwrap();
    cfg.ensemble.horizons = horizons.to_vec();
    cfg.ensemble.base_seed = 20_240_401 + d as u64;
    cfg
}

fn projected(map: MapFamily, dim: usize, delta: f64) -> ExperimentConfig {
    let mut start = vec![0.0; dim];
    start[0] = 1.0;
    let mut cfg = ExperimentConfig::projected(ProjectedSystemSpec {
        dim,
        r: 1.0,
        r0: 0.5,
        map,
        noise: NoiseSpec::uniform_ball(delta),
        start,
    });
    cfg.ensemble.horizon = 10_000;
    cfg.ensemble.base_seed = 7;
    cfg
}

/// Desk-scale configs for each scenario family. Some names expand to
/// several variants (one per dimension or walk type).
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let cfgs = match name {
        "thm1_bounded" => (1..=3)
            .map(|d| {
                let model = ModelConfig::new(
                    10,
                    d,
                    0.5,
                    SpaceMode::Bounded,
                    NoiseSpec::uniform_ball(0.25),
                    InitialCondition::UniformBox {
                        half_width: 1.0,
                        seed: Some(1000 + d as u64),
                    },
                );
                let mut cfg = ExperimentConfig::hk(&model);
                cfg.ensemble.horizon = 200_000;
                cfg.ensemble.horizons = vec![100_000, 200_000];
                cfg.ensemble.base_seed = 11 * d as u64;
                cfg.ensemble.grid = SurvivalGrid::Geometric { ratio: 1.05 };
                named(cfg, &format!("thm1_bounded_d{d}"))
            })
            .collect(),
        "thm2a_d1" => vec![named(
            two_cluster(1, 5.0, &[1_000, 10_000, 100_000, 1_000_000]),
            name,
        )],
        "thm2a_d2" => vec![named(
            two_cluster(2, 5.0, &[1_000, 10_000, 100_000, 1_000_000]),
            name,
        )],
        "thm2b_d3" => vec![named(two_cluster(3, 10.0, &[10_000, 100_000]), name)],
        "lemma1_alpha_gt1" => vec![named(
            projected(MapFamily::LinearScale { alpha: 1.2 }, 2, 0.25),
            name,
        )],
        "corollary1" => vec![named(
            projected(
                MapFamily::HkMean {
                    n: 3,
                    d: 1,
                    epsilon: 0.5,
                },
                3,
                0.25,
            ),
            name,
        )],
        "lemma2_walk" => {
            let mut first = ExperimentConfig::walk(WalkScenario::FirstPassage {
                steps: StepDist::Simple,
                start: 0.0,
                b: 0.0,
            });
            let mut stretched = ExperimentConfig::walk(WalkScenario::Stretched {
                beta: 2.0,
                h: StretchMap::Clamp { bound: 1.0 },
                steps: StepDist::Noise {
                    noise: NoiseSpec::new(NoiseFamily::UniformBall, 1.0),
                },
            });
            for (k, c) in [&mut first, &mut stretched].into_iter().enumerate() {
                c.ensemble.horizon = 1_000_000;
                c.ensemble.horizons = vec![10_000, 1_000_000];
                c.ensemble.base_seed = 300 + k as u64;
            }
            vec![
                named(first, "lemma2_walk"),
                named(stretched, "lemma3_stretched"),
            ]
        }
        "lemma4_recurrence" => [1usize, 3]
            .into_iter()
            .map(|dim| {
                let mut c = ExperimentConfig::walk(WalkScenario::Recurrence {
                    dim,
                    steps: StepDist::Simple,
                    radius: 1.0,
                });
                c.ensemble.runs = 200;
                c.ensemble.horizon = 1_000_000;
                c.ensemble.horizons = vec![10_000, 100_000, 1_000_000];
                c.ensemble.base_seed = 400 + dim as u64;
                named(c, &format!("lemma4_recurrence_d{dim}"))
            })
            .collect(),
        other => {
            return Err(Error::Usage(format!(
                "unknown preset {other:?}; known: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(cfgs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
n = 5
d = 1
epsilon = 0.5
space_mode = "bounded"

[noise]
delta = 0.25
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.scenario, Scenario::Hk);
        assert_eq!(cfg.ensemble.runs, 1000);
        assert_eq!(cfg.ensemble.horizon, 100_000);
        let m = cfg.model().unwrap();
        assert_eq!(m.noise.family, NoiseFamily::UniformBall);
        assert!(matches!(
            m.initial,
            InitialCondition::UniformBox { seed: None, .. }
        ));
    }

    #[test]
    fn epsilon_bound_reported() {
        let cfg = parse_config(&MINIMAL.replace("epsilon = 0.5", "epsilon = 3.0")).unwrap();
        let v = cfg.violations();
        assert!(v
            .iter()
            .any(|v| v.key == "epsilon" && v.message.contains("epsilon exceeds 2·sqrt(d)")));
    }

    #[test]
    fn large_delta_reported_and_overridable() {
        let text = MINIMAL
            .replace("epsilon = 0.5", "epsilon = 1.0")
            .replace("delta = 0.25", "delta = 0.6");
        let cfg = parse_config(&text).unwrap();
        let v = cfg.violations();
        assert!(v
            .iter()
            .any(|v| v.key == "noise.delta" && v.message.contains("delta exceeds epsilon/2")));
        let cfg = parse_config(&format!("allow_large_delta = true\n{text}")).unwrap();
        assert!(cfg.violations().is_empty());
    }

    #[test]
    fn every_violation_listed() {
        let text = MINIMAL
            .replace("epsilon = 0.5", "epsilon = 3.0")
            .replace("delta = 0.25", "delta = 2.0")
            + "[ensemble]\nruns = 0\n";
        let keys: Vec<String> = parse_config(&text)
            .unwrap()
            .violations()
            .into_iter()
            .map(|v| v.key)
            .collect();
        for k in ["epsilon", "noise.delta", "ensemble.runs"] {
            assert!(keys.iter().any(|x| x == k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn parse_error_has_line() {
        let err = parse_config("n = 5\nd = \n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_config("n = 5\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn presets_round_trip_and_validate() {
        for name in PRESET_NAMES {
            for cfg in preset(name).unwrap() {
                cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
                let text = cfg.to_toml().unwrap();
                let back = parse_config(&text).unwrap();
                assert_eq!(back, cfg, "{name}");
                assert_eq!(back.fingerprint().unwrap(), cfg.fingerprint().unwrap());
            }
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn two_cluster_presets_separated() {
        for name in ["thm2a_d1", "thm2a_d2", "thm2b_d3"] {
            let m = preset(name).unwrap()[0].model().unwrap();
            assert!(m.clusters_separated(), "{name}");
        }
    }

    #[test]
    fn scenario_payloads_exclusive() {
        let mut cfg = preset("corollary1").unwrap().remove(0);
        cfg.n = Some(3);
        assert!(cfg.violations().iter().any(|v| v.key == "n"));
        let mut cfg = preset("lemma2_walk").unwrap().remove(0);
        cfg.walk = None;
        assert!(cfg.violations().iter().any(|v| v.key == "walk"));
    }

    #[test]
    fn fingerprint_changes_with_config() {
        let a = preset("thm2a_d1").unwrap().remove(0);
        let mut b = a.clone();
        b.ensemble.base_seed += 1;
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }
}
