use nalgebra::DMatrix;
use proptest::prelude::*;
use vgx_core::models::CovarianceModel;
use vgx_core::simulate::{build_grid_cov, factor_psd, sample_cmf, GridSpec, JitterPolicy};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn factor_reconstructs_grid_covariance(h in 0.1f64..1.0, n in 2usize..30) {
        let m = CovarianceModel::fou(DMatrix::identity(2, 2) * h, 1.0).unwrap();
        let grid = GridSpec::uniform(0.0, 1.0, n, 2).unwrap();
        let cov = build_grid_cov(&m, &grid).unwrap();
        let f = factor_psd(&cov, JitterPolicy::default()).unwrap();
        let err = (f.l() * f.l().transpose() - &cov).amax();
        prop_assert!(err <= f.jitter() * cov.diagonal().max() + 1e-10);
    }

    #[test]
    fn batches_do_not_depend_on_thread_count(seed in any::<u64>(), threads in 2usize..8) {
        let m = CovarianceModel::operator_fbm(DMatrix::identity(2, 2) * 0.7, DMatrix::identity(2, 2), 1.0).unwrap();
        let grid = GridSpec::uniform(0.0, 1.0, 17, 2).unwrap();
        let one = in_pool(1, || sample_cmf(&m, &grid, 64, seed, 0).unwrap());
        let many = in_pool(threads, || sample_cmf(&m, &grid, 64, seed, 0).unwrap());
        prop_assert_eq!(one.values, many.values);
    }
}

#[test]
fn sample_mean_error_shrinks_like_root_n() {
    let m = CovarianceModel::fou(DMatrix::identity(1, 1) * 0.5, 1.0).unwrap();
    let grid = GridSpec::uniform(0.0, 1.0, 2, 1).unwrap();
    let mut pts = Vec::new();
    for n in [1_000usize, 10_000, 100_000] {
        // Average |mean| over independent seeds to smooth the slope.
        let mut acc = 0.0;
        for seed in 0..32u64 {
            let b = sample_cmf(&m, &grid, n, seed, 0).unwrap();
            let mean = (0..n).map(|r| b.value(r, 0, 0)).sum::<f64>() / n as f64;
            acc += mean.abs();
        }
        pts.push(((n as f64).ln(), (acc / 32.0).ln()));
    }
    let (slope, _) = vgx_core::models::fit_line(&pts);
    assert!((slope + 0.5).abs() < 0.2, "slope {slope}");
}
