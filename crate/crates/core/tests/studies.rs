//! Statistical properties of the Brownian variance study beyond the acceptance suite.

use otfpf::experiments::{analytic_reference, run_variance_study, Estimator, ExperimentConfig};
use otfpf::FilterKind;

#[test]
fn sample_variance_spread_follows_the_chi_square_law() {
    // Var of the divisor-N sample variance of N Gaussians with variance s is 2(N-1)s²/N²
    let report = run_variance_study(&ExperimentConfig::brownian_study()).unwrap();
    let n = report.n_particles as f64;
    for (kind, growth) in [(FilterKind::MonteCarlo, 1.0), (FilterKind::OtFpf, 0.0)] {
        let series = report.series_for(kind, Estimator::Cov(0, 0)).unwrap();
        for t in [0.0, 0.5, 1.0] {
            let s: f64 = 1.0 + growth * t;
            let expected = 2.0 * (n - 1.0) * s * s / (n * n);
            let measured = series.points[report.time_index(t)].simulation_variance;
            assert!((measured - expected).abs() / expected < 0.2, "{kind} t={t}: {measured} vs {expected}");
        }
    }
}

#[test]
fn monte_carlo_mean_is_unbiased() {
    let report = run_variance_study(&ExperimentConfig::brownian_study()).unwrap();
    let r = report.replications as f64;
    let series = report.series_for(FilterKind::MonteCarlo, Estimator::Mean(0)).unwrap();
    for p in &series.points {
        assert!(p.replication_mean.abs() <= 4.0 * (p.simulation_variance / r).sqrt());
    }
}

#[test]
fn references_are_attached_to_the_brownian_study() {
    let mut cfg = ExperimentConfig::brownian_study();
    cfg.replications = 4;
    cfg.t_max = 0.01;
    let report = run_variance_study(&cfg).unwrap();
    let k = report.times.len() - 1;
    let t = report.times[k];
    for kind in [FilterKind::MonteCarlo, FilterKind::OtFpf] {
        let (mean_ref, cov_ref) = analytic_reference(kind, t, cfg.n_particles).unwrap();
        assert_eq!(report.series_for(kind, Estimator::Mean(0)).unwrap().points[k].analytic_reference, Some(mean_ref));
        assert_eq!(report.series_for(kind, Estimator::Cov(0, 0)).unwrap().points[k].analytic_reference, Some(cov_ref));
    }
}
