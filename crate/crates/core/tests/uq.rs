mod common;

use common::spec;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagwave::{
    probability_map, run_bootstrap, uncertainty_fraction, BinaryMap, BootstrapConfig, Corridor,
    DetectorConfig, GapPolicy, GridSpec, PerturbationSpec, ProbabilityMap, Scenario,
};

fn random_binary(
    rng: &mut ChaCha8Rng,
    n_x: usize,
    n_t: usize,
    p_one: f64,
    p_valid: f64,
) -> BinaryMap {
    BinaryMap {
        spec: spec(n_x, n_t),
        indicators: Array2::from_shape_fn((n_x, n_t), |_| u8::from(rng.random_bool(p_one))),
        valid: Array2::from_shape_fn((n_x, n_t), |_| rng.random_bool(p_valid)),
    }
}

/// Straight-line counting: loop over cells, then over replications.
fn counting_oracle(maps: &[BinaryMap]) -> (Vec<Option<f64>>, usize) {
    let (n_x, n_t) = maps[0].indicators.dim();
    let mut out = Vec::new();
    for i in 0..n_x {
        for j in 0..n_t {
            let all_valid = maps.iter().all(|m| m.valid[[i, j]]);
            let ones = maps.iter().filter(|m| m.indicators[[i, j]] == 1).count();
            out.push(all_valid.then(|| ones as f64 / maps.len() as f64));
        }
    }
    (out, maps.len())
}

#[test]
fn hundred_maps_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let maps: Vec<BinaryMap> = (0..100)
        .map(|_| random_binary(&mut rng, 12, 25, 0.3, 0.999))
        .collect();
    let pm = probability_map(&maps).unwrap();
    let (want, k) = counting_oracle(&maps);
    assert_eq!(pm.k, k);
    for (idx, w) in ndarray::indices(pm.probs.dim()).into_iter().zip(want) {
        match w {
            Some(p) => {
                assert!(pm.valid[idx]);
                assert_eq!(pm.probs[idx], p);
                assert_eq!((pm.probs[idx] * 100.0).round() / 100.0, pm.probs[idx]);
            }
            None => assert!(!pm.valid[idx]),
        }
    }
}

#[test]
fn bernoulli_indicators_converge_to_their_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for rate in [0.1, 0.5, 0.8] {
        let maps: Vec<BinaryMap> = (0..2000)
            .map(|_| random_binary(&mut rng, 2, 3, rate, 1.0))
            .collect();
        let pm = probability_map(&maps).unwrap();
        for p in pm.probs.iter() {
            // Five binomial standard errors.
            assert!(
                (p - rate).abs() < 5.0 * (rate * (1.0 - rate) / 2000.0f64).sqrt(),
                "{p} vs {rate}"
            );
        }
    }
}

fn small_ring() -> (Scenario, GridSpec) {
    let sc = Scenario {
        corridor: Corridor::Ring {
            length: 400.0,
            vehicles: 20,
        },
        duration: 700.0,
        warmup: 400.0,
        detectors: vec![100.0],
        ..Scenario::default()
    };
    (
        sc,
        GridSpec::covering(400.0, 300.0, 0.0, 400.0, 1.0, 10.0).unwrap(),
    )
}

fn boot_cfg(grid: GridSpec, k: usize, workers: usize) -> BootstrapConfig {
    BootstrapConfig {
        // A low threshold so that replications disagree.
        detector: DetectorConfig::new(4, 0.01, 33.3)
            .unwrap()
            .with_gaps(GapPolicy::Filled),
        grid,
        replications: k,
        master_seed: 99,
        workers,
        band: (0.25, 0.75),
    }
}

#[test]
fn serial_and_parallel_runs_agree_byte_for_byte() {
    let (sc, grid) = small_ring();
    let serial = run_bootstrap(&sc, &boot_cfg(grid, 12, 1)).unwrap();
    let parallel = run_bootstrap(&sc, &boot_cfg(grid, 12, 4)).unwrap();
    assert_eq!(serial.map.to_csv_string(), parallel.map.to_csv_string());
    assert_eq!(serial.summary(), parallel.summary());
    assert!(
        serial.map.probs.iter().any(|&p| p > 0.0 && p < 1.0),
        "replications should disagree somewhere"
    );
}

#[test]
fn single_replication_is_its_binary_map() {
    use sagwave::simulator::{derive_seed, sample_replication};
    use sagwave::uq::replication_grid;
    let (sc, grid) = small_ring();
    let cfg = boot_cfg(grid, 1, 1);
    let report = run_bootstrap(&sc, &cfg).unwrap();
    let concrete = sample_replication(&sc, cfg.master_seed, 0);
    let run = sagwave::run_replication(&concrete, derive_seed(cfg.master_seed, 0)).unwrap();
    let g = replication_grid(&run.trajectories, &grid, sc.base_params.v0).unwrap();
    let bin = sagwave::classify(
        &sagwave::kernel_activation(&g, &cfg.detector).unwrap(),
        cfg.detector.epsilon,
    );
    assert_eq!(report.map.valid, bin.valid);
    assert_eq!(report.map.probs, bin.indicators.mapv(f64::from));
}

#[test]
fn zero_perturbation_gives_certain_cells() {
    let (mut sc, grid) = small_ring();
    sc.perturbation = PerturbationSpec::none();
    let report = run_bootstrap(&sc, &boot_cfg(grid, 5, 2)).unwrap();
    assert!(report.map.probs.iter().all(|&p| p == 0.0 || p == 1.0));
    assert_eq!(report.uncertainty, 0.0);
}

proptest! {
    #[test]
    fn map_ignores_replication_order(seed in any::<u64>(), k in 1usize..12, rot in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut maps: Vec<BinaryMap> = (0..k).map(|_| random_binary(&mut rng, 4, 6, 0.4, 0.9)).collect();
        let a = probability_map(&maps).unwrap();
        maps.rotate_left(rot % k);
        prop_assert_eq!(a, probability_map(&maps).unwrap());
    }

    #[test]
    fn setting_an_indicator_never_lowers_probability(seed in any::<u64>(), k in 1usize..10, cell in any::<(usize, usize, usize)>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut maps: Vec<BinaryMap> = (0..k).map(|_| random_binary(&mut rng, 4, 6, 0.4, 1.0)).collect();
        let before = probability_map(&maps).unwrap();
        maps[cell.0 % k].indicators[[cell.1 % 4, cell.2 % 6]] = 1;
        let after = probability_map(&maps).unwrap();
        for (a, b) in after.probs.iter().zip(&before.probs) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn uncertainty_is_a_fraction(probs in prop::collection::vec(0usize..=20, 1..60)) {
        let n = probs.len();
        let pm = ProbabilityMap {
            spec: spec(1, n),
            probs: Array2::from_shape_vec((1, n), probs.iter().map(|&c| c as f64 / 20.0).collect()).unwrap(),
            valid: Array2::from_elem((1, n), true),
            k: 20,
        };
        let u = uncertainty_fraction(&pm, 0.25, 0.75).unwrap();
        let want = probs.iter().filter(|&&c| c > 5 && c < 15).count() as f64 / n as f64;
        prop_assert_eq!(u, want);
        prop_assert!((0.0..=1.0).contains(&u));
    }
}
