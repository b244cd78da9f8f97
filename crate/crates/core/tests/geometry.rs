//! Stiefel geometry checked against independent constructions.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use drsgt::stiefel::{
    consensus_error, induced_arithmetic_mean, polar_retraction, polar_retraction_closed_form,
    procrustes_distance, project_tangent, squared_spread, tangent_projection,
};
use drsgt::{Point, Tangent};

fn gaussian(n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthonormal basis of the tangent space: `X·skew` directions plus
/// `X⊥·E_ab` directions, with `X⊥` taken from a QR completion.
fn tangent_basis(x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let (n, r) = x.shape();
    let mut full = DMatrix::<f64>::zeros(n, n);
    full.columns_mut(0, r).copy_from(x);
    full.columns_mut(r, n - r).copy_from(&gaussian(n, n - r, rng));
    let q = full.qr().q();
    let complement = q.columns(r, n - r).into_owned();
    let mut basis = Vec::new();
    for i in 0..r {
        for j in (i + 1)..r {
            let mut s = DMatrix::<f64>::zeros(r, r);
            s[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
            s[(j, i)] = -std::f64::consts::FRAC_1_SQRT_2;
            basis.push(x * s);
        }
    }
    for a in 0..(n - r) {
        for b in 0..r {
            let mut e = DMatrix::<f64>::zeros(n - r, r);
            e[(a, b)] = 1.0;
            basis.push(&complement * e);
        }
    }
    basis
}

#[test]
fn projection_matches_least_squares_on_tangent_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (n, r) in [(2, 1), (4, 2), (6, 3), (8, 3), (5, 5)] {
        let x = Point::random(n, r, &mut rng).unwrap();
        let basis = tangent_basis(x.matrix(), &mut rng);
        assert_eq!(basis.len(), n * r - r * (r + 1) / 2);
        for (a, u) in basis.iter().enumerate() {
            for (b, v) in basis.iter().enumerate() {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((u.dot(v) - expect).abs() < 1e-12);
            }
        }
        for _ in 0..20 {
            let y = gaussian(n, r, &mut rng);
            let reference = basis
                .iter()
                .fold(DMatrix::<f64>::zeros(n, r), |acc, b| acc + b * y.dot(b));
            let p = tangent_projection(&x, &y).unwrap();
            assert!((p.matrix() - reference).norm() < 1e-12, "n={n} r={r}");
        }
    }
}

/// Riemannian gradient descent with a QR retraction on `Σ‖Y − X_i‖²`.
fn iam_by_descent(points: &[Point]) -> DMatrix<f64> {
    let sum = points
        .iter()
        .fold(DMatrix::<f64>::zeros(points[0].n(), points[0].r()), |acc, p| acc + p.matrix());
    let mut y = points[0].matrix().clone();
    let step = 0.5 / points.len() as f64;
    for _ in 0..5000 {
        let g = &sum * -2.0;
        let sym = {
            let s = y.tr_mul(&g);
            (&s + s.transpose()) * 0.5
        };
        let rgrad = &g - &y * sym;
        if rgrad.norm() < 1e-13 {
            break;
        }
        let qr = (&y - rgrad * step).qr();
        let (mut q, rmat) = (qr.q(), qr.r());
        for j in 0..q.ncols() {
            if rmat[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        y = q;
    }
    y
}

#[test]
fn iam_matches_direct_minimization() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (n, r, agents) in [(5, 2, 3), (8, 3, 4), (6, 1, 6)] {
        let base = Point::random(n, r, &mut rng).unwrap();
        let pts: Vec<Point> = (0..agents)
            .map(|_| Point::project(&(base.matrix() + gaussian(n, r, &mut rng) * 0.3)).unwrap())
            .collect();
        let iam = induced_arithmetic_mean(&pts).unwrap();
        let reference = iam_by_descent(&pts);
        assert!((iam.matrix() - reference).norm() < 1e-8, "n={n} r={r}");
    }
}

#[test]
fn iam_beats_random_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let base = Point::random(7, 3, &mut rng).unwrap();
        let pts: Vec<Point> = (0..5)
            .map(|_| Point::project(&(base.matrix() + gaussian(7, 3, &mut rng) * 0.5)).unwrap())
            .collect();
        let best = consensus_error(&pts).unwrap();
        for _ in 0..100 {
            let y = Point::random(7, 3, &mut rng).unwrap();
            assert!(best <= squared_spread(&pts, &y) + 1e-12);
        }
    }
}

#[test]
fn procrustes_single_column_is_sign_choice() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let x = Point::random(6, 1, &mut rng).unwrap();
        let y = Point::random(6, 1, &mut rng).unwrap();
        let expect = (x.matrix() - y.matrix())
            .norm()
            .min((x.matrix() + y.matrix()).norm());
        assert!((procrustes_distance(&x, &y).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn procrustes_two_columns_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let dist = |x: &Point, y: &Point, q: &DMatrix<f64>| (x.matrix() * q - y.matrix()).norm();
    for _ in 0..20 {
        let x = Point::random(5, 2, &mut rng).unwrap();
        let y = Point::random(5, 2, &mut rng).unwrap();
        let mut best = f64::INFINITY;
        let steps = 20_000;
        for s in 0..steps {
            let th = 2.0 * std::f64::consts::PI * s as f64 / steps as f64;
            let (c, sn) = (th.cos(), th.sin());
            let rot = DMatrix::from_row_slice(2, 2, &[c, -sn, sn, c]);
            let refl = DMatrix::from_row_slice(2, 2, &[c, sn, sn, -c]);
            best = best.min(dist(&x, &y, &rot)).min(dist(&x, &y, &refl));
        }
        let d = procrustes_distance(&x, &y).unwrap();
        assert!(d <= best + 1e-12);
        assert!(best - d < 1e-6, "grid {best} vs {d}");
    }
}

#[test]
fn retraction_forms_agree_for_long_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..200 {
        let x = Point::random(8, 3, &mut rng).unwrap();
        let len: f64 = rng.random_range(0.0..10.0);
        let raw = project_tangent(x.matrix(), &gaussian(8, 3, &mut rng));
        let v = Tangent::new(x.clone(), &raw * (len / raw.norm())).unwrap();
        let a = polar_retraction(&x, &v).unwrap();
        let b = polar_retraction_closed_form(&x, &v).unwrap();
        assert!((a.matrix() - b.matrix()).norm() < 1e-12);
    }
}

#[test]
fn single_precision_matches_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let x = Point::random(6, 2, &mut rng).unwrap();
    let y = gaussian(6, 2, &mut rng) * 0.2;
    let v64 = tangent_projection(&x, &y).unwrap();
    let r64 = polar_retraction(&x, &v64).unwrap();
    let x32 = drsgt::Point32::new(x.matrix().map(|e| e as f32)).unwrap();
    let v32 = tangent_projection(&x32, &y.map(|e| e as f32)).unwrap();
    let r32 = polar_retraction(&x32, &v32).unwrap();
    assert!((r32.matrix().map(|e| e as f64) - r64.matrix()).norm() < 1e-5);
}

fn shape_and_seed() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..9)
        .prop_flat_map(|n| (Just(n), 1usize..=n))
        .prop_flat_map(|(n, r)| (Just(n), Just(r), any::<u64>()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn retraction_lands_on_manifold((n, r, seed) in shape_and_seed(), len in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Point::random(n, r, &mut rng).unwrap();
        let raw = project_tangent(x.matrix(), &gaussian(n, r, &mut rng));
        prop_assume!(raw.norm() > 1e-3);
        let v = Tangent::new(x.clone(), &raw * (len / raw.norm())).unwrap();
        let y = polar_retraction(&x, &v).unwrap();
        prop_assert!(y.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn iam_is_equivariant_under_left_rotation((n, r, seed) in shape_and_seed()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Point::random(n, r, &mut rng).unwrap();
        let pts: Vec<Point> = (0..4)
            .map(|_| Point::project(&(base.matrix() + gaussian(n, r, &mut rng) * 0.2)).unwrap())
            .collect();
        let q = Point::random(n, n, &mut rng).unwrap();
        let rotated: Vec<Point> = pts
            .iter()
            .map(|p| Point::new(q.matrix() * p.matrix()).unwrap())
            .collect();
        let a = induced_arithmetic_mean(&pts).unwrap();
        let b = induced_arithmetic_mean(&rotated).unwrap();
        prop_assert!((q.matrix() * a.matrix() - b.matrix()).norm() < 1e-10);
        let ca = consensus_error(&pts).unwrap();
        let cb = consensus_error(&rotated).unwrap();
        prop_assert!((ca - cb).abs() < 1e-10);
    }

    #[test]
    fn procrustes_is_a_symmetric_nonnegative_distance((n, r, seed) in shape_and_seed()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Point::random(n, r, &mut rng).unwrap();
        let y = Point::random(n, r, &mut rng).unwrap();
        let dxy = procrustes_distance(&x, &y).unwrap();
        let dyx = procrustes_distance(&y, &x).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!((dxy - dyx).abs() < 1e-10);
        prop_assert!(dxy <= (x.matrix() - y.matrix()).norm() + 1e-12);
    }
}
