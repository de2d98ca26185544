mod common;

use common::{ks_critical, ks_statistic, two_agent_law};
use hksync::engine::{check_absorbing, run_trajectory, Partition, RecordOptions};
use hksync::ensemble::{run_ensemble, EnsembleOptions};
use hksync::enumerate::enumerate_law;
use hksync::model::{hk_step, AgentStates, InitialCondition, ModelConfig, SpaceMode};
use hksync::noise::{NoiseSpec, SeedSchedule};
use hksync::projected::MapFamily;
use hksync::walk::{cluster_gap_walk, ClusterWalkSpec};

fn micro(rows: [f64; 2]) -> ModelConfig {
    ModelConfig::new(
        2,
        1,
        1.0,
        SpaceMode::Bounded,
        NoiseSpec::rademacher(0.5),
        InitialCondition::Explicit {
            rows: vec![vec![rows[0]], vec![rows[1]]],
        },
    )
}

#[test]
fn enumeration_matches_independent_two_agent_law() {
    for start in [[-1.0, 1.0], [-0.9, 0.6], [1.0, -0.2], [0.0, 0.3]] {
        for h in 1..=6 {
            let law = enumerate_law(&micro(start), h).unwrap();
            let (pmf, tail) = two_agent_law(start[0], start[1], 1.0, 0.5, h as usize);
            for (a, b) in law.pmf.iter().zip(&pmf) {
                assert!(
                    (a - b).abs() < 1e-15,
                    "{start:?} h={h}: {:?} vs {pmf:?}",
                    law.pmf
                );
            }
            assert!((law.tail - tail).abs() < 1e-15);
        }
    }
    let law = enumerate_law(&micro([-1.0, 1.0]), 3).unwrap();
    assert_eq!(law.pmf[1], 0.25);
}

#[test]
fn monte_carlo_matches_enumeration() {
    let cfg = micro([-1.0, 1.0]);
    let h = 5;
    let law = enumerate_law(&cfg, h).unwrap();
    let m = 20_000;
    let res = run_ensemble(&cfg, m, h, 77, &EnsembleOptions::with_workers(1)).unwrap();
    for t in 0..=h {
        let p = law.survival(t);
        let emp = res.samples.iter().filter(|s| s.observed() >= t).count() as f64 / m as f64;
        let se = (p * (1.0 - p) / m as f64).sqrt().max(1e-12);
        assert!((emp - p).abs() <= 3.0 * se + 1e-12, "t={t}: {emp} vs {p}");
    }
}

fn two_cluster(d: usize, sep: f64) -> ModelConfig {
    ModelConfig::new(
        4,
        d,
        1.0,
        SpaceMode::Unbounded,
        NoiseSpec::uniform_ball(0.5),
        InitialCondition::TwoCluster {
            separation_eps: sep,
            sizes: [2, 2],
            spread: 0.5,
        },
    )
}

fn gap_spec(d: usize) -> ClusterWalkSpec {
    ClusterWalkSpec {
        sizes: [2, 2],
        dim: d,
        noise: NoiseSpec::uniform_ball(0.5),
        target_radius: None,
        margin: 1.0,
    }
}

#[test]
fn walk_increments_bounded_by_two_delta() {
    for d in 1..=3 {
        for run in 0..50 {
            let mut gap = vec![0.0; d];
            gap[0] = 5.0;
            let out = cluster_gap_walk(&gap_spec(d), &gap, &SeedSchedule::new(5, run), 2_000, None)
                .unwrap();
            assert!(out.max_increment <= 1.0);
        }
    }
}

#[test]
fn gap_walk_is_symmetric() {
    let t = 40;
    let n = 2000;
    let mut z = Vec::new();
    for run in 0..2 * n {
        let out = cluster_gap_walk(
            &gap_spec(2),
            &[50.0, 0.0],
            &SeedSchedule::new(9, run),
            t,
            Some(t),
        )
        .unwrap();
        z.push(out.z_path[0].1[0]);
    }
    let a = &z[..n as usize];
    let b: Vec<f64> = z[n as usize..].iter().map(|v| -v).collect();
    let d = ks_statistic(a, &b);
    assert!(d < ks_critical(a.len(), b.len()), "KS {d}");
}

#[test]
fn engine_gap_increments_match_walk() {
    let cfg = two_cluster(1, 40.0);
    let p = Partition::new(vec![0, 1], vec![2, 3]);
    let opts = RecordOptions {
        gap_partition: Some(p),
        gap_stride: 1,
        ..RecordOptions::default()
    };
    let steps = 30;
    let mut from_engine = Vec::new();
    let mut from_walk = Vec::new();
    for run in 0..1500 {
        let sch = SeedSchedule::new(21, run);
        let (_, rec) = run_trajectory(&cfg, &sch, steps, &opts).unwrap();
        let g = &rec.gap_series;
        // clusters stay far apart, so the engine gap is 40 + Z(t)
        from_engine.push(g[steps as usize].1 - g[steps as usize - 1].1);

        let other = SeedSchedule::new(22, run);
        let w = cluster_gap_walk(&gap_spec(1), &[40.0], &other, steps, Some(1)).unwrap();
        let zs = &w.z_path;
        from_walk.push(zs[steps as usize - 1].1[0] - zs[steps as usize - 2].1[0]);

        // same stream: the walk reproduces the engine gap path
        let same = cluster_gap_walk(&gap_spec(1), &[40.0], &sch, steps, Some(1)).unwrap();
        for (t, z) in &same.z_path {
            assert!((g[*t as usize].1 - 40.0 - z[0]).abs() < 1e-9);
        }
    }
    let d = ks_statistic(&from_engine, &from_walk);
    assert!(
        d < ks_critical(from_engine.len(), from_walk.len()),
        "KS {d}"
    );
}

#[test]
fn hitting_time_dominates_walk_time() {
    let cfg = two_cluster(1, 3.0);
    let x0 = cfg.initial.realize(&cfg, &SeedSchedule::new(0, 0)).unwrap();
    let gap = (x0.row(0)[0] + x0.row(1)[0]) / 2.0 - (x0.row(2)[0] + x0.row(3)[0]) / 2.0;
    let mut strict = 0;
    for run in 0..300 {
        let sch = SeedSchedule::new(31, run);
        let (s, _) = run_trajectory(&cfg, &sch, 20_000, &RecordOptions::default()).unwrap();
        let w = cluster_gap_walk(&gap_spec(1), &[gap], &sch, 20_000, None).unwrap();
        let (Some(t), Some(tq)) = (s.t_hit, w.t_q.t_hit) else {
            assert!(s.t_hit.is_none() || w.t_q.t_hit.is_some());
            continue;
        };
        assert!(t >= tq, "run {run}: T = {t} < T_Q = {tq}");
        strict += (t > tq) as usize;
    }
    assert!(strict > 0);
}

#[test]
fn absorbing_after_hits() {
    let cfg = micro([-1.0, 1.0]);
    for run in 0..200 {
        let sch = SeedSchedule::new(3, run);
        let (s, _) = run_trajectory(&cfg, &sch, 1000, &RecordOptions::default()).unwrap();
        if let Some(t) = s.t_hit {
            assert!(check_absorbing(&cfg, &sch, t, 500).unwrap());
        }
    }
}

#[test]
fn ensembles_identical_across_worker_counts() {
    let cfg = two_cluster(2, 3.0);
    let a = run_ensemble(&cfg, 64, 3_000, 5, &EnsembleOptions::with_workers(1)).unwrap();
    let b = run_ensemble(&cfg, 64, 3_000, 5, &EnsembleOptions::with_workers(4)).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.summary, b.summary);
}

#[test]
fn hk_mean_map_matches_noiseless_step() {
    let (n, d, eps) = (6, 2, 0.7);
    let map = MapFamily::HkMean { n, d, epsilon: eps };
    let cfg = ModelConfig::new(
        n,
        d,
        eps,
        SpaceMode::Unbounded,
        NoiseSpec::uniform_ball(0.1),
        InitialCondition::UniformBox {
            half_width: 1.0,
            seed: None,
        },
    );
    for seed in 0..50 {
        let x = cfg
            .initial
            .realize(&cfg, &SeedSchedule::new(seed, 0))
            .unwrap();
        let y = hk_step(&x, &vec![0.0; n * d], &cfg).unwrap();
        let mut out = vec![0.0; n * d];
        map.apply(x.as_slice(), &mut out);
        assert_eq!(AgentStates::new(n, d, out).unwrap(), y);
    }
}
