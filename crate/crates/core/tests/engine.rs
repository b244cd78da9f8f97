use std::ops::ControlFlow;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use drsgt::experiment::compute_metrics;
use drsgt::network::build_topology;
use drsgt::oracle::PcaParams;
use drsgt::stiefel::{default_region_radii, region_membership};
use drsgt::{
    AlgoConfig, Algorithm, Engine, FullBatch, InitMode, Network, NetworkSpec, Problem, RowSampling,
    SampleSchedule, Snapshot, Topology,
};

fn problem(agents: usize, seed: u64) -> Arc<Problem> {
    Arc::new(
        Problem::generate(&PcaParams {
            agents,
            rows_per_agent: 300,
            dim: 7,
            rank: 3,
            eigengap: 0.7,
            seed,
        })
        .unwrap(),
    )
}

fn ring(n: usize) -> Arc<Network> {
    Arc::new(build_topology(&Topology::Ring, n).unwrap())
}

fn no_op(_: Snapshot<'_, f64>) -> drsgt::Result<ControlFlow<()>> {
    Ok(ControlFlow::Continue(()))
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn proj(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    y - x * sym(&(x.transpose() * y))
}

/// `(X + V)(I + VᵀV)^{-1/2}` for tangent `V`.
fn retract(x: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let r = x.ncols();
    let eig = SymmetricEigen::new(DMatrix::identity(r, r) + v.transpose() * v);
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    (x + v) * inv_sqrt
}

#[test]
fn engine_matches_straight_line_reference() {
    let p = problem(4, 1);
    let t = 2;
    let config = AlgoConfig {
        alpha: 0.9,
        beta: 0.05,
        t,
        init: InitMode::Independent,
        seed: 5,
        ..AlgoConfig::default()
    };
    let mut engine = Engine::new(FullBatch::new(p.clone()), ring(4), config).unwrap();

    let third = 1.0 / 3.0;
    let w = DMatrix::from_fn(4, 4, |i, j| if (i + 4 - j) % 4 == 2 { 0.0 } else { third });
    let wt = &w * &w;
    let covs: Vec<DMatrix<f64>> = (0..4).map(|i| p.data(i).transpose() * p.data(i)).collect();
    let grad = |i: usize, x: &DMatrix<f64>| proj(x, &-(&covs[i] * x));
    let mut xs: Vec<DMatrix<f64>> = engine.agents().iter().map(|a| a.x.matrix().clone()).collect();
    let mut gs: Vec<DMatrix<f64>> = (0..4).map(|i| grad(i, &xs[i])).collect();
    let mut ys = gs.clone();

    for k in 0..50 {
        engine.step().unwrap();
        let mixed_x: Vec<DMatrix<f64>> = (0..4)
            .map(|i| (0..4).fold(DMatrix::zeros(7, 3), |acc, j| acc + &xs[j] * wt[(i, j)]))
            .collect();
        let mixed_y: Vec<DMatrix<f64>> = (0..4)
            .map(|i| (0..4).fold(DMatrix::zeros(7, 3), |acc, j| acc + &ys[j] * wt[(i, j)]))
            .collect();
        let new_x: Vec<DMatrix<f64>> = (0..4)
            .map(|i| {
                let v = proj(&xs[i], &mixed_x[i]) * 0.9 - proj(&xs[i], &ys[i]) * 0.05;
                retract(&xs[i], &v)
            })
            .collect();
        let new_g: Vec<DMatrix<f64>> = (0..4).map(|i| grad(i, &new_x[i])).collect();
        ys = (0..4).map(|i| &mixed_y[i] + &new_g[i] - &gs[i]).collect();
        xs = new_x;
        gs = new_g;
        for (i, a) in engine.agents().iter().enumerate() {
            assert!((a.x.matrix() - &xs[i]).norm() < 1e-12, "k={k} agent {i} x");
            assert!((&a.y - &ys[i]).norm() < 1e-12, "k={k} agent {i} y");
        }
    }
}

#[test]
fn single_agent_reduces_to_riemannian_gradient_descent() {
    let p = problem(1, 2);
    let net: Arc<Network> = Arc::new(NetworkSpec::metropolis(1, &[]).unwrap());
    let config = AlgoConfig {
        beta: 0.2,
        seed: 3,
        ..AlgoConfig::default()
    };
    let mut engine = Engine::new(FullBatch::new(p.clone()), net, config).unwrap();
    let mut x = engine.agents()[0].x.matrix().clone();
    let cov = p.data(0).transpose() * p.data(0);
    for _ in 0..100 {
        engine.step().unwrap();
        let g = proj(&x, &-(&cov * &x));
        x = retract(&x, &(g * -0.2));
        assert!((engine.agents()[0].x.matrix() - &x).norm() < 1e-12);
    }
    assert_eq!(engine.counters().comm_rounds, 0);
}

#[test]
fn tracker_stays_bounded_on_conservative_runs() {
    let p = problem(6, 4);
    let bound = 10.0 * p.sample_bound() + p.smoothness().l_big_g;
    for schedule in [SampleSchedule::Constant(1), SampleSchedule::Polynomial(1.0)] {
        let config = AlgoConfig {
            beta: 0.05,
            t: 2,
            schedule,
            seed: 6,
            ..AlgoConfig::default()
        };
        let mut engine = Engine::new(RowSampling::new(p.clone()), ring(6), config).unwrap();
        let summary = engine.run(300, &mut no_op).unwrap();
        assert!(summary.max_tracker_norm <= bound, "{} > {bound}", summary.max_tracker_norm);
    }
}

#[test]
fn conservative_runs_stay_in_the_local_region() {
    let p = problem(4, 7);
    let config = AlgoConfig {
        beta: 0.005,
        t: 2,
        schedule: SampleSchedule::Polynomial(1.0),
        seed: 8,
        ..AlgoConfig::default()
    };
    let mut engine = Engine::new(RowSampling::new(p), ring(4), config).unwrap();
    assert!(engine.initial_region().in_region());
    let (d1, d2) = default_region_radii(3);
    let mut observer = |s: Snapshot<'_, f64>| {
        let report = region_membership(&s.points(), d1, d2)?;
        assert!(report.in_region(), "left the region at k={}", s.counters.iteration);
        Ok(ControlFlow::Continue(()))
    };
    engine.run(300, &mut observer).unwrap();
}

#[test]
fn observing_metrics_does_not_perturb_the_run() {
    let p = problem(4, 9);
    let config = AlgoConfig {
        seed: 10,
        init: InitMode::Independent,
        ..AlgoConfig::default()
    };
    let mut plain = Engine::new(RowSampling::new(p.clone()), ring(4), config.clone()).unwrap();
    plain.run(60, &mut no_op).unwrap();
    let mut watched = Engine::new(RowSampling::new(p.clone()), ring(4), config).unwrap();
    let mut observer = |s: Snapshot<'_, f64>| {
        compute_metrics(&p, &s.points(), s.counters, 0)?;
        Ok(ControlFlow::Continue(()))
    };
    watched.run(60, &mut observer).unwrap();
    for (a, b) in plain.agents().iter().zip(watched.agents()) {
        assert_eq!(a.x.matrix(), b.x.matrix());
        assert_eq!(a.y, b.y);
    }
    assert_eq!(plain.counters(), watched.counters());
}

#[test]
fn drsgd_iterates_stay_feasible() {
    let p = problem(4, 11);
    let config = AlgoConfig {
        algorithm: Algorithm::Drsgd {
            beta0: 0.1,
            decay: 0.5,
        },
        init: InitMode::Independent,
        audit_every: 1,
        seed: 12,
        ..AlgoConfig::default()
    };
    let mut engine = Engine::new(RowSampling::new(p), ring(4), config).unwrap();
    let summary = engine.run(200, &mut no_op).unwrap();
    assert_eq!(summary.samples, 4 * 200);
    assert_eq!(summary.comm_rounds, 4 * 200);
    for a in engine.agents() {
        assert!(a.x.orthonormality_defect() < 1e-12);
    }
}

#[test]
fn observer_can_stop_the_run() {
    let p = problem(4, 13);
    let mut engine = Engine::new(FullBatch::new(p), ring(4), AlgoConfig::default()).unwrap();
    let mut observer = |s: Snapshot<'_, f64>| {
        Ok(if s.counters.iteration == 7 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        })
    };
    let summary = engine.run(100, &mut observer).unwrap();
    assert!(summary.stopped_early);
    assert_eq!(summary.iterations, 7);
}

#[test]
fn mismatched_oracle_and_network_are_rejected() {
    let p = problem(3, 14);
    assert!(Engine::new(FullBatch::new(p), ring(4), AlgoConfig::default()).is_err());
}
