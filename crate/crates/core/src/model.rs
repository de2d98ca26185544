//! Agent states and the synchronous HK update in bounded and unbounded space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::neighbor::{self, IndexMode, NeighborIndex};
use crate::noise::{self, NoiseSpec, SeedSchedule};

/// n x d matrix of agent positions, row-major. Row i is agent i.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStates {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl AgentStates {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Usage(format!("need at least 2 agents, got {n}")));
        }
        if d < 1 {
            return Err(Error::Usage("dimension must be at least 1".into()));
        }
        if values.len() != n * d {
            return Err(Error::Usage(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!(
                "non-finite entry at agent {}, coordinate {}",
                k / d,
                k % d
            )));
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Usage("rows have unequal length".into()));
        }
        Self::new(n, d, rows.into_iter().flatten().collect())
    }

    /// Zero matrix used as a scratch target; not validated.
    pub(crate) fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            values: vec![0.0; n * d],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn in_box(&self) -> bool {
        self.values.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Adds `c` to every row.
    pub fn translated(&self, c: &[f64]) -> Self {
        let mut out = self.clone();
        for row in out.values.chunks_exact_mut(self.d) {
            for (x, y) in row.iter_mut().zip(c) {
                *x += y;
            }
        }
        out
    }

    /// Rows reordered so that row `k` of the result is row `perm[k]` of self.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            values.extend_from_slice(self.row(p));
        }
        Self {
            n: self.n,
            d: self.d,
            values,
        }
    }

    /// FNV-1a over the bit patterns; used to detect stale indexes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in &self.values {
            h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceMode {
    Bounded,
    Unbounded,
}

fn default_half_width() -> f64 {
    1.0
}

fn default_spread() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Explicit {
        rows: Vec<Vec<f64>>,
    },
    /// Independent uniform draws on `[-half_width, half_width]^d`. With a
    /// seed every run starts from the same state; without one each run
    /// draws its own from the run's seed schedule.
    UniformBox {
        #[serde(default = "default_half_width")]
        half_width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// First `sizes[0]` agents centred at `separation_eps * epsilon` on the
    /// first axis, remaining agents centred at the origin. Within a cluster
    /// agents are spread symmetrically over a segment of length
    /// `spread * epsilon` (second axis when d >= 2).
    TwoCluster {
        separation_eps: f64,
        sizes: [usize; 2],
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

impl InitialCondition {
    pub fn partition(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            InitialCondition::TwoCluster { sizes: [a, b], .. } => {
                Some(((0..a).collect(), (a..a + b).collect()))
            }
            _ => None,
        }
    }

    pub fn realize(&self, cfg: &ModelConfig, schedule: &SeedSchedule) -> Result<AgentStates> {
        let (n, d) = (cfg.n, cfg.d);
        let states = match self {
            InitialCondition::Explicit { rows } => AgentStates::from_rows(rows.clone())?,
            InitialCondition::UniformBox { half_width, seed } => {
                let mut rng = match seed {
                    Some(s) => SeedSchedule::new(*s, 0).initial_rng(),
                    None => schedule.initial_rng(),
                };
                let values = (0..n * d)
                    .map(|_| (2.0 * rng.random::<f64>() - 1.0) * half_width)
                    .collect();
                AgentStates::new(n, d, values)?
            }
            InitialCondition::TwoCluster {
                separation_eps,
                sizes,
                spread,
            } => {
                let mut values = vec![0.0; n * d];
                let spread_axis = if d >= 2 { 1 } else { 0 };
                let width = spread * cfg.epsilon;
                let mut first = 0;
                for (c, &size) in sizes.iter().enumerate() {
                    let centre = if c == 0 {
                        separation_eps * cfg.epsilon
                    } else {
                        0.0
                    };
                    for k in 0..size {
                        let row = &mut values[(first + k) * d..(first + k + 1) * d];
                        row[0] = centre;
                        row[spread_axis] += symmetric_offset(k, size, width);
                    }
                    first += size;
                }
                AgentStates::new(n, d, values)?
            }
        };
        if states.n() != n || states.d() != d {
            return Err(Error::config(
                "initial",
                format!(
                    "initial state is {}x{}, config says {n}x{d}",
                    states.n(),
                    states.d()
                ),
            ));
        }
        if cfg.space_mode == SpaceMode::Bounded && !states.in_box() {
            return Err(Error::config(
                "initial",
                "bounded mode requires entries in [-1, 1]",
            ));
        }
        Ok(states)
    }

    fn violations(&self, cfg: &ModelConfig) -> Vec<Violation> {
        let mut v = Vec::new();
        match self {
            InitialCondition::Explicit { rows } => {
                if rows.len() != cfg.n || rows.iter().any(|r| r.len() != cfg.d) {
                    v.push(Violation::new(
                        "initial.rows",
                        format!("must be {}x{}", cfg.n, cfg.d),
                    ));
                }
                if rows.iter().flatten().any(|x| !x.is_finite()) {
                    v.push(Violation::new("initial.rows", "entries must be finite"));
                }
                if cfg.space_mode == SpaceMode::Bounded
                    && rows.iter().flatten().any(|x| !(-1.0..=1.0).contains(x))
                {
                    v.push(Violation::new(
                        "initial.rows",
                        "bounded mode requires entries in [-1, 1]",
                    ));
                }
            }
            InitialCondition::UniformBox { half_width, .. } => {
                if !(half_width.is_finite() && *half_width > 0.0) {
                    v.push(Violation::new("initial.half_width", "must be positive"));
                } else if cfg.space_mode == SpaceMode::Bounded && *half_width > 1.0 {
                    v.push(Violation::new(
                        "initial.half_width",
                        "bounded mode requires half_width <= 1",
                    ));
                }
            }
            InitialCondition::TwoCluster {
                separation_eps,
                sizes,
                spread,
            } => {
                if sizes[0] == 0 || sizes[1] == 0 || sizes[0] + sizes[1] != cfg.n {
                    v.push(Violation::new(
                        "initial.sizes",
                        format!("need two nonempty sizes summing to n = {}", cfg.n),
                    ));
                }
                if !(separation_eps.is_finite() && *separation_eps > 0.0) {
                    v.push(Violation::new("initial.separation_eps", "must be positive"));
                }
                if !(0.0..=1.0).contains(spread) {
                    v.push(Violation::new(
                        "initial.spread",
                        "intra-cluster diameter must be at most epsilon",
                    ));
                }
                if cfg.space_mode == SpaceMode::Bounded {
                    v.push(Violation::new(
                        "initial.kind",
                        "two_cluster is an unbounded-space construction",
                    ));
                }
            }
        }
        v
    }
}

fn symmetric_offset(k: usize, size: usize, width: f64) -> f64 {
    if size < 2 {
        return 0.0;
    }
    let mirror = size - 1 - k;
    if k == mirror {
        return 0.0;
    }
    let low = k.min(mirror);
    let off = width * (0.5 - low as f64 / (size - 1) as f64);
    if k < mirror {
        -off
    } else {
        off
    }
}

fn default_guard() -> f64 {
    1e12
}

/// Full description of one HK experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n: usize,
    pub d: usize,
    pub epsilon: f64,
    pub space_mode: SpaceMode,
    pub noise: NoiseSpec,
    pub initial: InitialCondition,
    /// Permits delta > epsilon / 2.
    pub allow_large_delta: bool,
    pub index_mode: IndexMode,
    /// Unbounded runs abort once any coordinate exceeds this magnitude.
    pub magnitude_guard: f64,
}

impl ModelConfig {
    pub fn new(
        n: usize,
        d: usize,
        epsilon: f64,
        space_mode: SpaceMode,
        noise: NoiseSpec,
        initial: InitialCondition,
    ) -> Self {
        Self {
            n,
            d,
            epsilon,
            space_mode,
            noise,
            initial,
            allow_large_delta: false,
            index_mode: IndexMode::Auto,
            magnitude_guard: default_guard(),
        }
    }

    pub fn delta(&self) -> f64 {
        self.noise.delta
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.n < 2 {
            v.push(Violation::new("n", "need at least 2 agents"));
        }
        if self.d < 1 {
            v.push(Violation::new("d", "dimension must be at least 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            v.push(Violation::new("epsilon", "must be positive and finite"));
        } else if self.space_mode == SpaceMode::Bounded
            && self.d >= 1
            && self.epsilon > 2.0 * (self.d as f64).sqrt()
        {
            v.push(Violation::new(
                "epsilon",
                format!(
                    "epsilon exceeds 2·sqrt(d) = {}",
                    2.0 * (self.d as f64).sqrt()
                ),
            ));
        }
        if !(self.magnitude_guard > 0.0) {
            v.push(Violation::new("magnitude_guard", "must be positive"));
        }
        v.extend(noise::validate_spec(&self.noise, self));
        if self.n >= 2 && self.d >= 1 {
            v.extend(self.initial.violations(self));
        }
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

    /// True when the two-cluster initial state keeps every cross pair more
    /// than `sqrt(2)·epsilon + 2·delta` apart.
    pub fn clusters_separated(&self) -> bool {
        let Some((a, b)) = self.initial.partition() else {
            return false;
        };
        let Ok(x) = self.initial.realize(self, &SeedSchedule::new(0, 0)) else {
            return false;
        };
        let bound = std::f64::consts::SQRT_2 * self.epsilon + 2.0 * self.delta();
        a.iter().all(|&i| {
            b.iter()
                .all(|&j| neighbor::distance(x.row(i), x.row(j)) > bound)
        })
    }
}

/// Coordinate-wise clamp to `[-1, 1]`.
pub fn clamp_to_box(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidState("clamp of non-finite vector".into()));
    }
    Ok(v.iter().map(|&y| clamp_unit(y)).collect())
}

#[inline]
pub(crate) fn clamp_unit(y: f64) -> f64 {
    y.clamp(-1.0, 1.0)
}

/// `{ j : ||x_j - x_i|| <= epsilon }`, ascending; agent ids are 0-based.
pub fn neighbor_set(
    states: &AgentStates,
    i: usize,
    epsilon: f64,
    index: &NeighborIndex,
) -> Result<Vec<usize>> {
    if i >= states.n() {
        return Err(Error::Usage(format!(
            "agent {i} out of range 0..{}",
            states.n()
        )));
    }
    if index.epsilon() != epsilon {
        return Err(Error::Usage(
            "index was built with a different epsilon".into(),
        ));
    }
    index.query_neighbors(states, i)
}

pub fn max_pairwise_distance(states: &AgentStates) -> f64 {
    let mut m = 0.0f64;
    for i in 0..states.n() {
        for j in i + 1..states.n() {
            m = m.max(neighbor::distance(states.row(i), states.row(j)));
        }
    }
    m
}

pub fn is_quasi_synchronized(states: &AgentStates, epsilon: f64) -> bool {
    max_pairwise_distance(states) <= epsilon
}

/// One synchronous update. `noise` is row-major n x d.
pub fn hk_step(states: &AgentStates, noise: &[f64], cfg: &ModelConfig) -> Result<AgentStates> {
    if noise.len() != states.n() * states.d() {
        return Err(Error::Usage(format!(
            "noise has {} entries, states are {}x{}",
            noise.len(),
            states.n(),
            states.d()
        )));
    }
    if noise.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidState("non-finite noise".into()));
    }
    let mut stepper = Stepper::new(states, cfg.epsilon, cfg.index_mode, cfg.space_mode)?;
    stepper.compute_neighbors(states);
    let mut out = AgentStates::zeros(states.n(), states.d());
    stepper.apply(states, noise, &mut out);
    Ok(out)
}

/// Reusable buffers for repeated stepping of one trajectory.
pub(crate) struct Stepper {
    index: NeighborIndex,
    space_mode: SpaceMode,
    offsets: Vec<usize>,
    ids: Vec<usize>,
    scratch: Vec<usize>,
}

impl Stepper {
    pub(crate) fn new(
        states: &AgentStates,
        epsilon: f64,
        mode: IndexMode,
        space_mode: SpaceMode,
    ) -> Result<Self> {
        Ok(Self {
            index: neighbor::build_index(states, epsilon, mode)?,
            space_mode,
            offsets: Vec::with_capacity(states.n() + 1),
            ids: Vec::new(),
            scratch: Vec::new(),
        })
    }

    /// Computes every neighbor set of `states`. Returns true when each agent
    /// sees all others, which is exactly `d_V <= epsilon`.
    pub(crate) fn compute_neighbors(&mut self, states: &AgentStates) -> bool {
        self.index.rebuild(states);
        self.offsets.clear();
        self.ids.clear();
        self.offsets.push(0);
        let mut all_full = true;
        for i in 0..states.n() {
            self.index.neighbors_into(states, i, &mut self.scratch);
            all_full &= self.scratch.len() == states.n();
            self.ids.extend_from_slice(&self.scratch);
            self.offsets.push(self.ids.len());
        }
        all_full
    }

    /// Writes the update of `states` into `out` using the neighbor sets from
    /// the last `compute_neighbors` call.
    pub(crate) fn apply(&self, states: &AgentStates, noise: &[f64], out: &mut AgentStates) {
        let d = states.d();
        for i in 0..states.n() {
            let nb = &self.ids[self.offsets[i]..self.offsets[i + 1]];
            let count = nb.len() as f64;
            let target = out.row_mut(i);
            target.fill(0.0);
            for &j in nb {
                for (t, x) in target.iter_mut().zip(states.row(j)) {
                    *t += x;
                }
            }
            for (k, t) in target.iter_mut().enumerate() {
                let y = *t / count + noise[i * d + k];
                *t = match self.space_mode {
                    SpaceMode::Bounded => clamp_unit(y),
                    SpaceMode::Unbounded => y,
                };
            }
        }
    }
}

/// HK averaging map without noise or clamp on a flat n x d state.
pub(crate) fn hk_mean_into(x: &[f64], n: usize, d: usize, epsilon: f64, out: &mut [f64]) {
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let target = &mut out[i * d..(i + 1) * d];
        target.fill(0.0);
        let mut count = 0usize;
        for j in 0..n {
            let xj = &x[j * d..(j + 1) * d];
            if neighbor::within(xi, xj, epsilon) {
                count += 1;
                for (t, v) in target.iter_mut().zip(xj) {
                    *t += v;
                }
            }
        }
        for t in target.iter_mut() {
            *t /= count as f64;
        }
    }
}
