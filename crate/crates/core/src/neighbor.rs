//! Fixed-radius neighbor queries.
//!
//! Two backends share one comparison, [`within`]: an O(n) scan per query and a
//! uniform grid with cell size epsilon. Cells are integer tuples
//! `floor(x / epsilon)`, kept in a sorted table so unbounded coordinates need
//! no global bounding box. A query inspects the 3^d cells around the agent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AgentStates;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    /// Brute force when `3^d >= n`, grid otherwise.
    #[default]
    Auto,
    BruteForce,
    UniformGrid,
}

impl IndexMode {
    pub fn resolve(self, n: usize, d: usize) -> IndexMode {
        match self {
            IndexMode::Auto => {
                let stencil = u32::try_from(d)
                    .ok()
                    .and_then(|d| 3usize.checked_pow(d))
                    .unwrap_or(usize::MAX);
                if stencil >= n {
                    IndexMode::BruteForce
                } else {
                    IndexMode::UniformGrid
                }
            }
            m => m,
        }
    }
}

/// Euclidean distance between two rows. Every neighbor test in the crate goes
/// through this function.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let z = x - y;
            z * z
        })
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub fn within(a: &[f64], b: &[f64], epsilon: f64) -> bool {
    distance(a, b) <= epsilon
}

#[derive(Clone, Debug, Default)]
struct Grid {
    /// Cell tuple of each agent, row-major n x d.
    cells: Vec<i64>,
    /// Agent ids sorted by cell tuple, then id.
    order: Vec<usize>,
    /// Distinct occupied cells, row-major, sorted lexicographically.
    keys: Vec<i64>,
    /// `order[starts[k]..starts[k+1]]` are the agents of cell `k`.
    starts: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub cells_visited: usize,
    pub candidates: usize,
}

#[derive(Clone, Debug)]
pub struct NeighborIndex {
    mode: IndexMode,
    epsilon: f64,
    n: usize,
    d: usize,
    grid: Grid,
    fingerprint: u64,
}

pub fn build_index(states: &AgentStates, epsilon: f64, mode: IndexMode) -> Result<NeighborIndex> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Usage(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut index = NeighborIndex {
        mode: mode.resolve(states.n(), states.d()),
        epsilon,
        n: 0,
        d: 0,
        grid: Grid::default(),
        fingerprint: 0,
    };
    index.rebuild(states);
    Ok(index)
}

impl NeighborIndex {
    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Re-indexes `states`, reusing buffers.
    pub(crate) fn rebuild(&mut self, states: &AgentStates) {
        self.n = states.n();
        self.d = states.d();
        self.fingerprint = states.fingerprint();
        if self.mode != IndexMode::UniformGrid {
            return;
        }
        let (n, d) = (self.n, self.d);
        let g = &mut self.grid;
        g.cells.clear();
        g.cells.extend(
            states
                .as_slice()
                .iter()
                .map(|&x| (x / self.epsilon).floor() as i64),
        );
        g.order.clear();
        g.order.extend(0..n);
        let cells = &g.cells;
        g.order.sort_unstable_by(|&a, &b| {
            cells[a * d..(a + 1) * d]
                .cmp(&cells[b * d..(b + 1) * d])
                .then(a.cmp(&b))
        });
        g.keys.clear();
        g.starts.clear();
        for (pos, &a) in g.order.iter().enumerate() {
            let cell = &cells[a * d..(a + 1) * d];
            let k = g.starts.len();
            if k == 0 || g.keys[(k - 1) * d..k * d] != *cell {
                g.keys.extend_from_slice(cell);
                g.starts.push(pos);
            }
        }
        g.starts.push(n);
    }

    fn find_cell(&self, cell: &[i64]) -> Option<usize> {
        let d = self.d;
        let keys = &self.grid.keys;
        let (mut lo, mut hi) = (0usize, keys.len() / d);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match keys[mid * d..(mid + 1) * d].cmp(cell) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Neighbor ids of agent `i` in ascending order, written into `out`.
    /// Skips the staleness check; callers must pass the indexed states.
    pub(crate) fn neighbors_into(
        &self,
        states: &AgentStates,
        i: usize,
        out: &mut Vec<usize>,
    ) -> QueryStats {
        out.clear();
        let xi = states.row(i);
        match self.mode {
            IndexMode::UniformGrid => self.grid_query(states, i, xi, out),
            _ => {
                for j in 0..self.n {
                    if within(xi, states.row(j), self.epsilon) {
                        out.push(j);
                    }
                }
                QueryStats {
                    cells_visited: 0,
                    candidates: self.n,
                }
            }
        }
    }

    fn grid_query(
        &self,
        states: &AgentStates,
        i: usize,
        xi: &[f64],
        out: &mut Vec<usize>,
    ) -> QueryStats {
        let d = self.d;
        let g = &self.grid;
        let home = &g.cells[i * d..(i + 1) * d];
        let mut probe = home.to_vec();
        let mut digits = vec![0u8; d];
        let mut stats = QueryStats::default();
        loop {
            for k in 0..d {
                probe[k] = home[k] + digits[k] as i64 - 1;
            }
            stats.cells_visited += 1;
            if let Some(c) = self.find_cell(&probe) {
                for &j in &g.order[g.starts[c]..g.starts[c + 1]] {
                    stats.candidates += 1;
                    if within(xi, states.row(j), self.epsilon) {
                        out.push(j);
                    }
                }
            }
            // advance the base-3 odometer over the stencil
            let mut k = 0;
            while k < d {
                digits[k] += 1;
                if digits[k] < 3 {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        out.sort_unstable();
        stats
    }

    fn check_fresh(&self, states: &AgentStates, i: usize) -> Result<()> {
        if states.n() != self.n || states.d() != self.d {
            return Err(Error::Usage("index built for a different shape".into()));
        }
        if i >= self.n {
            return Err(Error::Usage(format!(
                "agent {i} out of range 0..{}",
                self.n
            )));
        }
        if cfg!(debug_assertions) && states.fingerprint() != self.fingerprint {
            return Err(Error::Usage(
                "stale neighbor index: states changed since build".into(),
            ));
        }
        Ok(())
    }

    /// Neighbor set of agent `i` (0-based), ascending, including `i` itself.
    pub fn query_neighbors(&self, states: &AgentStates, i: usize) -> Result<Vec<usize>> {
        self.check_fresh(states, i)?;
        let mut out = Vec::new();
        self.neighbors_into(states, i, &mut out);
        Ok(out)
    }

    pub fn query_with_stats(
        &self,
        states: &AgentStates,
        i: usize,
    ) -> Result<(Vec<usize>, QueryStats)> {
        self.check_fresh(states, i)?;
        let mut out = Vec::new();
        let stats = self.neighbors_into(states, i, &mut out);
        Ok((out, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states(rows: &[&[f64]]) -> AgentStates {
        AgentStates::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn auto_resolution() {
        assert_eq!(IndexMode::Auto.resolve(10, 3), IndexMode::BruteForce);
        assert_eq!(IndexMode::Auto.resolve(100, 3), IndexMode::UniformGrid);
        assert_eq!(IndexMode::Auto.resolve(4, 1), IndexMode::UniformGrid);
        assert_eq!(IndexMode::Auto.resolve(3, 1), IndexMode::BruteForce);
        assert_eq!(IndexMode::Auto.resolve(1 << 20, 200), IndexMode::BruteForce);
    }

    #[test]
    fn isolated_agent_gets_itself() {
        let s = states(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, -2.0]]);
        for mode in [IndexMode::BruteForce, IndexMode::UniformGrid] {
            let idx = build_index(&s, 1.0, mode).unwrap();
            assert_eq!(idx.query_neighbors(&s, 0).unwrap(), vec![0]);
        }
    }

    #[test]
    fn all_within_gives_full_set() {
        let s = states(&[&[0.1], &[0.2], &[-0.3], &[0.0]]);
        for mode in [IndexMode::BruteForce, IndexMode::UniformGrid] {
            let idx = build_index(&s, 1.0, mode).unwrap();
            for i in 0..4 {
                assert_eq!(idx.query_neighbors(&s, i).unwrap(), vec![0, 1, 2, 3]);
            }
        }
    }

    #[test]
    fn exact_epsilon_pair_across_cells() {
        // 0.5 -> cell 1, 1.0 -> cell 2 with eps = 0.5: adjacent cells, distance exactly eps
        let s = states(&[&[0.5, 0.0], &[1.0, 0.0], &[-0.5, 0.0]]);
        let brute = build_index(&s, 0.5, IndexMode::BruteForce).unwrap();
        let grid = build_index(&s, 0.5, IndexMode::UniformGrid).unwrap();
        for i in 0..3 {
            assert_eq!(
                grid.query_neighbors(&s, i).unwrap(),
                brute.query_neighbors(&s, i).unwrap()
            );
        }
        assert_eq!(grid.query_neighbors(&s, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn negative_coordinates_floor_correctly() {
        let s = states(&[&[-0.01], &[0.01], &[-0.99], &[0.99]]);
        let brute = build_index(&s, 1.0, IndexMode::BruteForce).unwrap();
        let grid = build_index(&s, 1.0, IndexMode::UniformGrid).unwrap();
        for i in 0..4 {
            assert_eq!(
                grid.query_neighbors(&s, i).unwrap(),
                brute.query_neighbors(&s, i).unwrap()
            );
        }
    }

    #[test]
    fn stale_index_detected() {
        let s = states(&[&[0.0], &[0.5]]);
        let idx = build_index(&s, 1.0, IndexMode::UniformGrid).unwrap();
        let moved = states(&[&[0.0], &[0.7]]);
        if cfg!(debug_assertions) {
            assert!(idx.query_neighbors(&moved, 0).is_err());
        }
        assert!(idx.query_neighbors(&s, 2).is_err());
    }

    #[test]
    fn rejects_bad_epsilon() {
        let s = states(&[&[0.0], &[0.5]]);
        assert!(build_index(&s, 0.0, IndexMode::Auto).is_err());
        assert!(build_index(&s, f64::NAN, IndexMode::Auto).is_err());
    }
}
