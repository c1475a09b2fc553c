use dcf::approx::{fvu, mcshane_lower, min_convex_upper, quad_lower, CoverSpec, TargetFunction};
use dcf::baselines::{Kernel, KnnModel, NwModel};
use dcf::features::FeatureKind;
use dcf::model::{DcComponent, Piece};
use dcf::partition::{afpc, Dataset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sum of ridges `a |u.x - t|`, with an L2 Lipschitz constant `sum |a| ||u||`.
fn ridge_target(ridges: Vec<(f64, Vec<f64>, f64)>) -> TargetFunction {
    let lam: f64 = ridges.iter().map(|(a, u, _)| a.abs() * u.iter().map(|v| v * v).sum::<f64>().sqrt()).sum();
    TargetFunction::new(
        move |x| ridges.iter().map(|(a, u, t)| a * (u.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - t).abs()).sum(),
        lam.max(1e-9),
    )
    .unwrap()
}

/// Ratio between the feature's norm bound and its lower scale, computed per kind.
fn norm_ratio(kind: FeatureKind, d: usize) -> f64 {
    match kind {
        FeatureKind::L2 => 1.0,
        _ => (d as f64).sqrt(),
    }
}

fn ridges(d: usize) -> impl Strategy<Value = Vec<(f64, Vec<f64>, f64)>> {
    prop::collection::vec((-2.0..2.0f64, prop::collection::vec(-1.0..1.0f64, d), -1.0..1.0f64), 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lipschitz_sandwich_holds_for_every_kind(d in 1usize..4, seed in any::<u64>(), rs in ridges(3)) {
        let rs: Vec<_> = rs.into_iter().map(|(a, u, t)| (a, u[..d].to_vec(), t)).collect();
        let target = ridge_target(rs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..200).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let centers = pts[..12].to_vec();
        let cover = CoverSpec::covering(centers, &pts).unwrap();
        for kind in FeatureKind::ALL {
            let band = (1.0 + norm_ratio(kind, d)) * target.lipschitz() * cover.eps();
            let lo = mcshane_lower(&target, &cover, kind).unwrap();
            let up = min_convex_upper(&target, &cover, kind).unwrap();
            for p in &pts {
                let f = target.eval(p);
                let l = f - lo.eval_max(p).unwrap();
                let u = up.eval(p).unwrap() - f;
                prop_assert!(l >= -1e-12 && l <= band + 1e-12, "{kind:?} lower gap {l} band {band}");
                prop_assert!(u >= -1e-12 && u <= band + 1e-12, "{kind:?} upper gap {u} band {band}");
            }
        }
    }

    #[test]
    fn fvu_is_zero_for_exact_and_one_for_mean(ys in prop::collection::vec(-10.0..10.0f64, 2..50), scale in 0.1..10.0f64) {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        prop_assume!(ys.iter().any(|y| (y - mean).abs() > 1e-6));
        prop_assert_eq!(fvu(&ys, &ys).unwrap(), 0.0);
        let flat = vec![mean; ys.len()];
        prop_assert!((fvu(&flat, &ys).unwrap() - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = ys.iter().map(|y| y + 0.3).collect();
        let a = fvu(&shifted, &ys).unwrap();
        let ys2: Vec<f64> = ys.iter().map(|y| y * scale).collect();
        let sh2: Vec<f64> = shifted.iter().map(|y| y * scale).collect();
        prop_assert!((fvu(&sh2, &ys2).unwrap() - a).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn knn_and_nw_stay_in_response_hull(seed in any::<u64>(), n in 2usize..60, h in 0.01..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let data = Dataset::new(x, y.clone(), 2).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let all = KnnModel::new(data.clone(), n).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let q = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        prop_assert!((all.predict_one(&q) - mean).abs() < 1e-12);
        for kernel in [Kernel::Gaussian, Kernel::Triweight] {
            let p = NwModel::new(data.clone(), kernel, h).unwrap().predict_one(&q);
            prop_assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn afpc_cells_cover_all_rows(seed in any::<u64>(), n in 1usize..300, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(0..5) as f64).collect();
        let data = Dataset::new(x, vec![0.0; n], d).unwrap();
        let p = afpc(&data, seed);
        prop_assert_eq!(p.assignment.len(), n);
        prop_assert!(p.assignment.iter().all(|&l| l < p.k()));
        for (k, &row) in p.center_source_rows.iter().enumerate() {
            prop_assert_eq!(data.row(row), &p.centers[k][..]);
            prop_assert_eq!(p.assignment[row], k);
        }
    }

    #[test]
    fn linf_component_equals_its_max_min_affine_form(seed in any::<u64>(), d in 1usize..4, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pieces = (0..k)
            .map(|_| {
                let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                w.push(-rng.random_range(0.0..2.0));
                Piece { b: rng.random_range(-1.0..1.0), w }
            })
            .collect();
        let comp = DcComponent::new(FeatureKind::Linf, centers, pieces).unwrap();
        let mma = comp.to_max_min_affine().unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            prop_assert!((comp.eval_max(&x).unwrap() - mma.eval(&x).unwrap()).abs() < 1e-10);
        }
    }
}

/// Quadratic lower envelope band over many random piecewise-linear targets.
#[test]
fn quadratic_band_on_random_piecewise_linear_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let grid: Vec<f64> = (0..201).map(|i| i as f64 * 6.0 / 200.0).collect();
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let knots: Vec<(f64, f64)> = {
            let mut xs: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..6.0)).collect();
            xs.extend([0.0, 6.0]);
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs.into_iter().map(|x| (x, rng.random_range(-2.0..2.0))).collect()
        };
        let lam = knots.windows(2).map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs()).fold(0.0, f64::max);
        let kn = knots.clone();
        let f = move |x: f64| {
            let i = kn.windows(2).position(|w| x <= w[1].0).unwrap_or(kn.len() - 2);
            let (a, b) = (kn[i], kn[i + 1]);
            a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
        };
        let g = f.clone();
        let target = TargetFunction::new(move |x| g(x[0]), lam.max(1e-9)).unwrap();
        let count = rng.random_range(3..15);
        let cover = CoverSpec::interval(0.0, 6.0, count).unwrap();
        let q = quad_lower(&target, &cover).unwrap();
        let (le, eps) = (target.lipschitz(), cover.eps());
        for &x in &grid {
            let gap = f(x) - q.eval(&[x]);
            worst_lo = worst_lo.min(gap + le * eps / 4.0);
            worst_hi = worst_hi.max(gap - 2.0 * le * eps);
        }
    }
    assert!(worst_lo >= -1e-12, "lower band exceeded by {worst_lo}");
    assert!(worst_hi <= 1e-12, "upper band exceeded by {worst_hi}");
}
