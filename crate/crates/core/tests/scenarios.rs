//! Single-run and small replicated checks on the reference scenarios.

use acx::estimate::{self, FitOptions};
use acx::experiments::{self, ScenarioConfig};
use acx::model::{ModelSpec, ParamSpace, Theta};
use acx::select::{self, FitCache, PenaltySchedule};
use acx::simulate::{self, NoiseConfig};

fn fit_truth_model(cfg: &ScenarioConfig, n: usize, rep: usize) -> (Vec<f64>, Vec<f64>) {
    let sample = experiments::simulate_replication(cfg, n, rep).unwrap();
    let (spec, space) = cfg.model.into_model().unwrap();
    let fit = estimate::fit_qmle(&spec, &space, &sample, &[], 5, 1).unwrap();
    (fit.theta_hat.0, cfg.theta.clone())
}

#[test]
fn s1_prime_large_sample_single_run() {
    // Unscaled RMSE at n = 1000 from the reference table (reported ×10).
    let rmse_1000 = [0.0345, 0.0096, 0.0300, 0.0047, 0.0104, 0.0050].map(|v| v / 10.0);
    let cfg = experiments::builtin_scenario("s1_prime").unwrap();
    let (hat, truth) = fit_truth_model(&cfg, 4000, 0);
    for i in 0..6 {
        let err = (hat[i] - truth[i]).abs();
        assert!(
            err <= 4.0 * rmse_1000[i],
            "component {i}: |{:.4} - {:.4}| = {err:.4} > {:.4}",
            hat[i],
            truth[i],
            4.0 * rmse_1000[i]
        );
    }
}

#[test]
fn s2_star_true_support_single_run() {
    let cfg = experiments::builtin_scenario("s2_star").unwrap();
    let (hat, truth) = fit_truth_model(&cfg, 1000, 0);
    for i in 0..truth.len() {
        assert!(
            (hat[i] - truth[i]).abs() <= 0.15,
            "component {i}: {} vs {}",
            hat[i],
            truth[i]
        );
    }
}

#[test]
fn s2_star_overfit_is_penalized() {
    let cfg = experiments::builtin_scenario("s2_star").unwrap();
    let spec = ModelSpec::fdarx(3);
    let space = ParamSpace::default_for(&spec);
    let collection: Vec<_> = select::fdarx_order_supports(3)
        .into_iter()
        .skip(2)
        .collect();
    let pen = PenaltySchedule::hqc(5.0).unwrap();
    let n = 1000;
    let reps = 10;
    let (mut dev2, mut dev3, mut crit2, mut crit3) = (0.0, 0.0, 0.0, 0.0);
    for rep in 0..reps {
        let sample = experiments::simulate_replication(&cfg, n, rep).unwrap();
        let entries = select::fit_collection(
            &spec,
            &space,
            &sample,
            &collection,
            &FitOptions::new(2, rep as u64),
            &mut FitCache::new(),
        )
        .unwrap();
        let table = select::select_from_table(&entries, &pen, n).unwrap().table;
        dev2 += table[0].deviance.unwrap();
        dev3 += table[1].deviance.unwrap();
        crit2 += table[0].criterion.unwrap();
        crit3 += table[1].criterion.unwrap();
    }
    assert!(dev3 <= dev2 + 1e-6 * reps as f64, "{dev3} vs {dev2}");
    assert!(crit3 > crit2, "{crit3} vs {crit2}");
}

#[test]
fn wald_statistic_grows_under_the_alternative() {
    let mut cfg = experiments::builtin_scenario("s1")
        .unwrap()
        .with_sample_sizes(vec![250, 500, 1000])
        .with_reps(15);
    cfg.starts = 2;
    cfg.test.as_mut().unwrap().draws = 1000;
    let report = experiments::run_estimation_study(&[cfg]).unwrap();
    let median = |n: usize| {
        let mut w: Vec<f64> = report
            .records
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.w_n)
            .collect();
        w.sort_by(f64::total_cmp);
        w[w.len() / 2]
    };
    let (a, b, c) = (median(250), median(500), median(1000));
    assert!(a < b && b < c, "median W_n {a:.2}, {b:.2}, {c:.2}");
}

#[test]
fn covariate_permutation_is_equivariant() {
    let spec = ModelSpec::armax(1, 0, 1, 2).unwrap();
    let space = ParamSpace::default_for(&spec);
    let truth = Theta(vec![0.4, 0.8, -0.5]);
    let n = 400;
    let x = simulate::simulate_covariate_matrix(n + 100, 2, 0.0, 0.5, &NoiseConfig::normal(3, 0))
        .unwrap();
    let sample =
        simulate::simulate_response(&spec, &truth, &x, n, 100, &NoiseConfig::normal(3, 1)).unwrap();
    let swapped = sample.permute_columns(&[1, 0]).unwrap();

    let perm = |t: &[f64]| vec![t[0], t[2], t[1]];
    let probe = [0.1, -0.3, 0.7];
    let d1 = acx::likelihood::deviance(&spec, &space, &Theta(probe.to_vec()), &sample).unwrap();
    let d2 = acx::likelihood::deviance(&spec, &space, &Theta(perm(&probe)), &swapped).unwrap();
    assert!((d1 - d2).abs() <= 1e-9 * d1.abs());

    let a = estimate::fit_qmle(&spec, &space, &sample, &[], 3, 8).unwrap();
    let b = estimate::fit_qmle(&spec, &space, &swapped, &[], 3, 8).unwrap();
    let pa = perm(&a.theta_hat.0);
    for i in 0..3 {
        assert!(
            (pa[i] - b.theta_hat.0[i]).abs() <= 1e-4,
            "{pa:?} vs {:?}",
            b.theta_hat.0
        );
    }
    assert!((a.deviance - b.deviance).abs() <= 1e-6 * a.deviance.abs());
}
