#![allow(dead_code)]

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Critical value of the two-sample KS statistic at level 0.001.
pub fn ks_critical(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.95 * ((n + m) / (n * m)).sqrt()
}

/// Neighbor sets by direct pairwise comparison.
pub fn brute_neighbors(rows: &[Vec<f64>], i: usize, eps: f64) -> Vec<usize> {
    (0..rows.len())
        .filter(|&j| {
            let d2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() <= eps
        })
        .collect()
}

/// Exact law of `min(T, horizon)` for two agents on the line with
/// Rademacher noise of magnitude `c`, clamped to `[-1, 1]`. Returns
/// `(pmf[0..=horizon], P{T > horizon})`.
pub fn two_agent_law(a: f64, b: f64, eps: f64, c: f64, horizon: usize) -> (Vec<f64>, f64) {
    #[allow(clippy::too_many_arguments)]
    fn go(
        a: f64,
        b: f64,
        eps: f64,
        c: f64,
        t: usize,
        h: usize,
        p: f64,
        pmf: &mut [f64],
        tail: &mut f64,
    ) {
        if (a - b).abs() <= eps {
            pmf[t] += p;
            return;
        }
        if t == h {
            *tail += p;
            return;
        }
        // no interaction while apart: each agent keeps its own value
        for sa in [-c, c] {
            for sb in [-c, c] {
                let na = (a + sa).clamp(-1.0, 1.0);
                let nb = (b + sb).clamp(-1.0, 1.0);
                go(na, nb, eps, c, t + 1, h, p / 4.0, pmf, tail);
            }
        }
    }
    let mut pmf = vec![0.0; horizon + 1];
    let mut tail = 0.0;
    go(a, b, eps, c, 0, horizon, 1.0, &mut pmf, &mut tail);
    (pmf, tail)
}
