use std::sync::Arc;

use irs_core::beamforming::{ao_maxmin, AoOptions};
use irs_core::estimation::estimate_user;
use irs_core::experiments::{net_rate, run_scenario, run_trials, ExperimentConfig, ScenarioKind, MAX_SEED};
use irs_core::sysmodel::{correlation_matrix, gen_los_channel, CorrelationSpec, LosAngles, RankMode};
use irs_core::training::train;
use irs_core::{ChannelSet, ChannelStatistics, CMatrix, EstimatorKind, LinkGains, SystemConfig, TrainingDesign};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cascaded_estimates_ignore_irs_off_diagonals() {
    let (m, n, k) = (3, 5, 2);
    let cfg = SystemConfig { antennas: m, elements: n, users: k, subphases: n + 1, ..Default::default() };
    let gains = LinkGains::uniform(k, 1.0, 0.5, 0.2);
    let r_bs = vec![correlation_matrix(&CorrelationSpec::Exponential { eta: 0.5, dim: m }).unwrap(); k];
    let plain = ChannelStatistics::new(gains.clone(), r_bs.clone(), vec![CMatrix::identity(n, n); k]).unwrap();
    let mut scrambled_irs = correlation_matrix(&CorrelationSpec::Exponential { eta: 0.9, dim: n }).unwrap();
    scrambled_irs[(0, 3)] *= irs_core::C64::new(0.0, 1.0);
    scrambled_irs[(3, 0)] = scrambled_irs[(0, 3)].conj();
    let scrambled = ChannelStatistics::new(gains, r_bs, vec![scrambled_irs; k]).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h1 = gen_los_channel(&cfg, 1.0, &LosAngles::random(m, n, &mut rng), RankMode::HighRank).unwrap();
    let ch = ChannelSet::draw(Arc::new(plain.clone()), h1.clone(), &mut rng).unwrap();
    let design = TrainingDesign::dft(n + 1, n, 1.0, 1e-4, 1e-5).unwrap();
    let obs = train(&ch, &design, &mut rng).unwrap();
    for (user, o) in obs.iter().enumerate() {
        let a = estimate_user(o, &h1, &plain, user, &design, EstimatorKind::MmseDft).unwrap();
        let b = estimate_user(o, &h1, &scrambled, user, &design, EstimatorKind::MmseDft).unwrap();
        assert_eq!(a.h0_hat, b.h0_hat);
        assert_eq!(a.hd_hat, b.hd_hat);
    }
}

#[test]
fn imperfect_csi_ao_reports_true_sinr() {
    let (m, n, k) = (4, 6, 2);
    let cfg = SystemConfig { antennas: m, elements: n, users: k, subphases: n + 1, ..Default::default() };
    let stats = Arc::new(
        ChannelStatistics::new(LinkGains::uniform(k, 1.0, 1.0, 1.0), vec![CMatrix::identity(m, m); k], vec![CMatrix::identity(n, n); k])
            .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h1 = gen_los_channel(&cfg, 1.0, &LosAngles::random(m, n, &mut rng), RankMode::HighRank).unwrap();
    let ch = ChannelSet::draw(stats, h1, &mut rng).unwrap();
    let design = TrainingDesign::dft(n + 1, n, 1.0, 1e-4, 1e-4).unwrap();
    let estimates: Vec<_> = train(&ch, &design, &mut rng)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(u, o)| estimate_user(o, &ch.h1, &ch.stats, u, &design, EstimatorKind::MmseDft).unwrap().link())
        .collect();
    let truth = ch.links();
    let opts = AoOptions { extract: randomizations_hint(), ..AoOptions::new(1.0, 1.0) };
    let sol = ao_maxmin(&estimates, Some(&truth), &opts).unwrap();
    let true_history = sol.true_history.clone().unwrap();
    assert_eq!(true_history.len(), sol.objective_history.len());
    assert_ne!(sol.reported_min_sinr(), sol.min_sinr());
    let perfect = ao_maxmin(&truth, None, &opts).unwrap();
    assert!(sol.reported_min_sinr() <= perfect.min_sinr() * 1.05);
}

fn randomizations_hint() -> irs_core::maxmin_sdp::ExtractOptions {
    irs_core::maxmin_sdp::ExtractOptions { randomizations: 200, ..Default::default() }
}

#[test]
fn scenario_results_do_not_depend_on_thread_count() {
    let mut cfg = ExperimentConfig::preset(ScenarioKind::Ber);
    cfg.scenario.trials = 16;
    cfg.scenario.grid = vec![0.0, 5.0];
    let parallel = run_scenario(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = pool.install(|| run_scenario(&cfg).unwrap());
    assert_eq!(parallel, serial);
}

#[test]
fn trials_map_to_fixed_streams() {
    let a: Vec<f64> = run_trials(4, 3, |_, r| r.random());
    let b: Vec<f64> = run_trials(6, 3, |_, r| r.random());
    assert_eq!(a[..], b[..4]);
}

#[test]
fn convergence_history_is_non_decreasing() {
    let mut cfg = ExperimentConfig::preset(ScenarioKind::Convergence);
    cfg.system.antennas = 4;
    cfg.system.elements = 6;
    cfg.system.users = 2;
    cfg.system.subphases = 7;
    cfg.scenario.trials = 3;
    cfg.scenario.randomizations = 100;
    let t = run_scenario(&cfg).unwrap();
    let col = t.column("min_rate_perfect").unwrap();
    let rates: Vec<f64> = (0..t.rows.len()).map(|i| t.value(i, "min_rate_perfect").unwrap()).collect();
    assert!(col > 0);
    assert!(rates.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{rates:?}");
}

proptest! {
    #[test]
    fn net_rate_decreases_with_training_length(gamma in 0.0f64..1e3, s in 1usize..200, tau_s in 1e-6f64..2e-4) {
        let tau = 0.05;
        prop_assume!((s + 1) as f64 * tau_s <= tau);
        let a = net_rate(gamma, s, tau_s, tau).unwrap();
        let b = net_rate(gamma, s + 1, tau_s, tau).unwrap();
        prop_assert!(b <= a);
        prop_assert!(a <= (1.0 + gamma).log2());
    }

    #[test]
    fn config_toml_round_trips(trials in 1usize..1000, seed in 0..=MAX_SEED, eta in 0.0f64..0.99) {
        let mut cfg = ExperimentConfig::preset(ScenarioKind::SubphaseSweep);
        cfg.scenario.trials = trials;
        cfg.scenario.seed = seed;
        cfg.scenario.eta = eta;
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml_str(&text, None).unwrap(), cfg);
    }
}

#[test]
fn csv_output_and_io_errors() {
    let mut cfg = ExperimentConfig::preset(ScenarioKind::NmseSweep);
    cfg.scenario.trials = 20;
    let table = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    irs_core::experiments::write_csv(&table, &path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().len(), table.columns.len());
    assert_eq!(reader.records().count(), cfg.scenario.grid.len());
    let bad = dir.path().join("missing").join("t.csv");
    let err = irs_core::experiments::write_csv(&table, &bad).unwrap_err();
    assert!(matches!(err, irs_core::Error::Io { ref path, .. } if path == &bad));
}
