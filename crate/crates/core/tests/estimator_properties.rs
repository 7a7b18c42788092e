use nalgebra::{DMatrix, DVector};
use vgx_core::constants::{piterbarg_estimate, IntervalMode};
use vgx_core::models::CovarianceModel;
use vgx_core::tails::{exceedance_mc, TailMode, TailQuery};

#[test]
fn piterbarg_ladder_is_at_least_one_and_increasing() {
    let cases = [
        (1.0, DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.5),
        (1.5, DMatrix::identity(2, 2), DMatrix::identity(2, 2)),
        (1.0, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]), DMatrix::identity(2, 2) * 2.0),
    ];
    for (k, (alpha, v, w)) in cases.iter().enumerate() {
        let est =
            piterbarg_estimate(*alpha, v, w, IntervalMode::Right, &[0.5, 1.0, 2.0, 4.0], 0.05, 4000, k as u64).unwrap();
        for p in &est.ladder {
            assert!(p.value >= 1.0 - 1e-12, "{p:?}");
        }
        // Coupled draws: the same normals drive every interval.
        for pair in est.ladder.windows(2) {
            assert!(pair[1].value >= pair[0].value - 2.0 * pair[1].stderr.max(pair[0].stderr), "{pair:?}");
        }
    }
}

#[test]
fn exceedance_decreases_in_u() {
    let models = [
        CovarianceModel::fou(DMatrix::identity(2, 2) * 0.5, 1.0).unwrap(),
        CovarianceModel::operator_fbm(DMatrix::identity(2, 2) * 0.75, DMatrix::identity(2, 2), 1.0).unwrap(),
    ];
    let b = DVector::from_vec(vec![1.0, 1.0]);
    for m in &models {
        let mut prev: Option<(f64, f64)> = None;
        for u in [1.5, 2.0, 2.5, 3.0, 3.5] {
            let q = TailQuery::uniform(m.clone(), b.clone(), u, 41).unwrap();
            let e = exceedance_mc(&q, 4000, 5, TailMode::Mixture).unwrap().estimate;
            if let Some((v, s)) = prev {
                assert!(e.value <= v + 3.0 * (s * s + e.stderr * e.stderr).sqrt(), "u = {u}");
            }
            prev = Some((e.value, e.stderr));
        }
    }
}

#[test]
fn log_rate_approaches_the_qp_value() {
    // Single point: the rate is exactly min x'Σ⁻¹x = 2 for Σ = I, b = (1,1).
    let m = CovarianceModel::operator_fbm(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 2), 1.0).unwrap();
    let b = DVector::from_vec(vec![1.0, 1.0]);
    let mut pts = Vec::new();
    for u in [2.0, 3.0, 4.0] {
        let q = TailQuery::uniform(m.clone(), b.clone(), u, 21).unwrap();
        let p = exceedance_mc(&q, 4000, 9, TailMode::Mixture).unwrap().estimate.value;
        pts.push((u * u, -2.0 * p.ln()));
    }
    let (slope, _) = vgx_core::models::fit_line(&pts);
    assert!((slope - 2.0).abs() <= 0.15 * 2.0, "slope {slope}");
}
