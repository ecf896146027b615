use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use relsha::design::Regime;
use relsha::evaluation::{interval_slice, run_grid, ErrorGrid, GridInputs, GridSpec, Method};
use relsha::ingest::{parse_harmonics, parse_water_levels, write_solution, write_water_levels};
use relsha::relsha::{relsha_gradient, relsha_objective};
use relsha::series::resample;
use relsha::synthetic::{synthetic_series, Scenario};
use relsha::{relsha_fit, ConstituentCatalog, HarmonicSolution, RelshaConfig, SamplingPlan, WaterLevelSeries};

fn instance(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h_mat = DMatrix::from_fn(m, 2 * n, |_, _| rng.random_range(-1.0..1.0));
    let x = DVector::from_fn(2 * n, |_, _| rng.random_range(-1.5..1.5));
    let h = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    let q = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
    (h_mat, x, h, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Directional derivative along a random direction, by central differences.
    #[test]
    fn gradient_matches_directional_difference(
        m in 3usize..30, n in 1usize..12, seed in any::<u64>(), lambda in 0.0f64..=1.0,
    ) {
        let (h_mat, x, h, q) = instance(m, n, seed);
        let d = instance(m, n, seed ^ 1).1;
        let g = relsha_gradient(&x, &h_mat, &h, &q, lambda).unwrap();
        let step = 1e-6;
        let up = relsha_objective(&(&x + &d * step), &h_mat, &h, &q, lambda).unwrap();
        let down = relsha_objective(&(&x - &d * step), &h_mat, &h, &q, lambda).unwrap();
        let fd = (up - down) / (2.0 * step);
        let exact = g.dot(&d);
        prop_assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "fd {fd} vs {exact}");
    }

    /// The objective is exactly the weighted sum of its two terms.
    #[test]
    fn objective_interpolates_between_terms(m in 3usize..20, n in 1usize..8, seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let (h_mat, x, h, q) = instance(m, n, seed);
        let data = relsha_objective(&x, &h_mat, &h, &q, 0.0).unwrap();
        let penalty = relsha_objective(&x, &h_mat, &h, &q, 1.0).unwrap();
        let j = relsha_objective(&x, &h_mat, &h, &q, lambda).unwrap();
        prop_assert!((j - ((1.0 - lambda) * data + lambda * penalty)).abs() <= 1e-12 * (1.0 + data + penalty));
        prop_assert!(j >= 0.0);
    }
}

fn grid_fixture(catalog: &ConstituentCatalog) -> (Scenario, WaterLevelSeries) {
    let scenario = Scenario::bundled(catalog, 3).unwrap();
    let record = synthetic_series(&scenario.truth, catalog, 0.1, 2200.0).unwrap();
    (scenario, record)
}

fn small_spec() -> GridSpec {
    GridSpec {
        intervals: vec![1.0, 12.42, 48.0, 237.6],
        lengths: vec![720.0, 2000.0],
        methods: Method::ALL.to_vec(),
        seed: 17,
        noise_sigma: 0.01,
        ..Default::default()
    }
}

#[test]
fn grid_is_independent_of_evaluation_order_and_threads() {
    let catalog = ConstituentCatalog::standard();
    let (scenario, record) = grid_fixture(&catalog);
    let inputs = GridInputs {
        record: &record,
        truth: &scenario.truth.amplitudes,
        catalog: &catalog,
        reference: Some(&scenario.reference),
        gauges: Some((&scenario.gauge_a, &scenario.gauge_b)),
    };
    let spec = small_spec();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = serial.install(|| run_grid(&inputs, &spec)).unwrap();
    let b = wide.install(|| run_grid(&inputs, &spec)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());

    // method order changes the row order only
    let reversed = GridSpec {
        methods: spec.methods.iter().rev().copied().collect(),
        ..spec.clone()
    };
    let c = run_grid(&inputs, &reversed).unwrap();
    for (i, _) in spec.intervals.iter().enumerate() {
        for (j, _) in spec.lengths.iter().enumerate() {
            for m in Method::ALL {
                assert_eq!(a.cell(i, j, m), c.cell(i, j, m));
            }
        }
    }
}

#[test]
fn grid_cells_are_consistent() {
    let catalog = ConstituentCatalog::standard();
    let (scenario, record) = grid_fixture(&catalog);
    let inputs = GridInputs {
        record: &record,
        truth: &scenario.truth.amplitudes,
        catalog: &catalog,
        reference: Some(&scenario.reference),
        gauges: Some((&scenario.gauge_a, &scenario.gauge_b)),
    };
    let grid = run_grid(&inputs, &small_spec()).unwrap();
    assert_eq!(grid.cells.len(), 4 * 2 * 3);
    for c in &grid.cells {
        assert_eq!(c.regime == Regime::Underdetermined, c.sample_count < 74);
        let r = c.rrmse.expect("every cell evaluates");
        assert!(r >= 0.0 && r.is_finite());
        let expected = (c.length / c.interval).floor() as usize + 1;
        assert!(c.sample_count <= expected);
    }
}

#[test]
fn slices_reassemble_the_grid() {
    let catalog = ConstituentCatalog::standard();
    let (scenario, record) = grid_fixture(&catalog);
    let inputs = GridInputs {
        record: &record,
        truth: &scenario.truth.amplitudes,
        catalog: &catalog,
        reference: Some(&scenario.reference),
        gauges: Some((&scenario.gauge_a, &scenario.gauge_b)),
    };
    let grid = run_grid(&inputs, &small_spec()).unwrap();
    let slices: Vec<_> = grid
        .intervals
        .iter()
        .map(|&i| interval_slice(&grid, i).unwrap())
        .collect();
    assert!(slices.iter().all(|s| s.curves.len() == 3));
    let rebuilt = ErrorGrid::from_slices(&slices, grid.lengths.clone(), grid.methods.clone());
    assert_eq!(rebuilt, grid);
    assert!(interval_slice(&grid, 5.0).is_err());

    let empty = ErrorGrid {
        methods: Vec::new(),
        cells: Vec::new(),
        ..grid.clone()
    };
    assert!(interval_slice(&empty, 48.0).unwrap().curves.is_empty());
}

#[test]
fn failing_cells_are_missing_not_fabricated() {
    let catalog = ConstituentCatalog::standard();
    let (scenario, record) = grid_fixture(&catalog);
    let inputs = GridInputs {
        record: &record,
        truth: &scenario.truth.amplitudes,
        catalog: &catalog,
        reference: Some(&scenario.reference),
        gauges: Some((&scenario.gauge_a, &scenario.gauge_b)),
    };
    let spec = GridSpec {
        intervals: vec![48.0],
        lengths: vec![10.0, 720.0],
        methods: vec![Method::Ha, Method::Relsha],
        ..Default::default()
    };
    let grid = run_grid(&inputs, &spec).unwrap();
    let missing: Vec<_> = grid.missing().collect();
    assert_eq!(missing.len(), 2);
    assert!(missing.iter().all(|c| c.length == 10.0 && c.error.is_some()));
    assert!(grid.to_csv().lines().filter(|l| l.ends_with(",NA")).count() == 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regime_tracks_realized_count(interval in 20.0f64..400.0, length in 200.0f64..3000.0, seed in any::<u64>()) {
        let catalog = ConstituentCatalog::standard();
        let (scenario, record) = grid_fixture(&catalog);
        let inputs = GridInputs {
            record: &record,
            truth: &scenario.truth.amplitudes,
            catalog: &catalog,
            reference: None,
            gauges: None,
        };
        let spec = GridSpec {
            intervals: vec![interval],
            lengths: vec![length],
            methods: vec![Method::Ha],
            seed,
            ..Default::default()
        };
        let grid = run_grid(&inputs, &spec).unwrap();
        let c = &grid.cells[0];
        prop_assert_eq!(c.regime, Regime::classify(c.sample_count, 37));
    }
}

fn solve(series: &WaterLevelSeries, reference: &[f64], lambda: f64) -> HarmonicSolution {
    let config = RelshaConfig {
        lambda,
        gradient_tolerance: 1e-12,
        max_iterations: 5000,
        ..Default::default()
    };
    relsha_fit(series, reference, &ConstituentCatalog::standard(), &config)
        .unwrap()
        .solution
}

#[test]
fn doubling_heights_and_reference_doubles_amplitudes() {
    let catalog = ConstituentCatalog::standard();
    let (scenario, record) = grid_fixture(&catalog);
    let plan = SamplingPlan::new(60.0, 2000.0, 5).unwrap();
    let series = resample(&record, &plan).unwrap();
    let doubled = WaterLevelSeries::new(
        series.epoch(),
        series.times().to_vec(),
        series.heights().iter().map(|h| 2.0 * h).collect(),
    )
    .unwrap();
    let reference2: Vec<f64> = scenario.reference.iter().map(|a| 2.0 * a).collect();
    for lambda in [0.0, 0.5, 1.0] {
        let base = solve(&series, &scenario.reference, lambda);
        let scaled = solve(&doubled, &reference2, lambda);
        for (a, b) in base.amplitudes.iter().zip(&scaled.amplitudes) {
            assert!((2.0 * a - b).abs() < 1e-5, "lambda {lambda}: 2·{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn water_levels_survive_a_file_round_trip(
        heights in prop::collection::vec(-5.0f64..5.0, 2..50),
        step in 0.1f64..24.0,
    ) {
        let times: Vec<f64> = (0..heights.len()).map(|i| (i as f64 * step * 3600.0).round() / 3600.0).collect();
        let series = WaterLevelSeries::from_hours(times, heights).unwrap();
        let text = write_water_levels(&series);
        let back = parse_water_levels(&text, "mem").unwrap().value;
        prop_assert_eq!(back.len(), series.len());
        for (a, b) in back.times().iter().zip(series.times()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in back.heights().iter().zip(series.heights()) {
            prop_assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3));
        }
        prop_assert_eq!(write_water_levels(&back), text);
    }

    #[test]
    fn solutions_survive_a_file_round_trip(
        amps in prop::collection::vec(0.0f64..2.0, 37),
        phases in prop::collection::vec(0.0f64..std::f64::consts::TAU, 37),
        mean in -3.0f64..3.0,
    ) {
        let catalog = ConstituentCatalog::standard();
        let sol = HarmonicSolution::new(mean, 1e-6, amps, phases).unwrap();
        let text = write_solution(&sol, &catalog, &[("method".into(), "ha".into())]).unwrap();
        let table = parse_harmonics(&text, "mem", &catalog).unwrap().value;
        prop_assert_eq!(table.metadata.get("method").map(String::as_str), Some("ha"));
        prop_assert!(table.present.iter().all(|&p| p));
        let back = table.solution;
        for (a, b) in back.amplitudes.iter().zip(&sol.amplitudes) {
            prop_assert!((a - b).abs() <= 1e-8 * b.max(1e-9));
        }
        prop_assert_eq!(write_solution(&back, &catalog, &[("method".into(), "ha".into())]).unwrap(), text);
    }
}
