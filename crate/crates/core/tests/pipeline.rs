//! Cross-module integration: oracle data through identification, pseudo-data
//! synthesis and the filter, plus property-based invariants on the pieces.

use lpbf_thermal::datastore::{self, per_layer_rmse, ReportInputs, RmseWindow};
use lpbf_thermal::filter::{self, Covariance, FilterState, NoiseConfig, RunConfig, UpdateMode};
use lpbf_thermal::ident::{identify_build, rmse, GaConfig, ParamBounds};
use lpbf_thermal::oracle::{
    simulate_fd, GeometryMaterialSpec, ProcessSpec, Scheme, SolverConfig,
};
use lpbf_thermal::pseudodata::{fit_triangle, layer_n_pseudo, pseudo_feed, PseudoMode};
use lpbf_thermal::rom::{self, BuildSchedule, LayerParams, ParamSchedule};
use lpbf_thermal::{ThermalTrace, TraceKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// End to end on a small build: simulate, export, ingest, identify, filter,
/// report. Checks the moving parts agree rather than any one number.
#[test]
fn small_build_pipeline_end_to_end() {
    let geom = GeometryMaterialSpec::cube_build(0.2e-3, 3);
    let proc = ProcessSpec {
        interlayer_dwell_s: 10.0,
        ..ProcessSpec::default()
    };
    let solver = SolverConfig {
        scheme: Scheme::Implicit,
        dt: Some(0.1),
        ..SolverConfig::default()
    };
    let result = simulate_fd(&geom, &proc, &solver).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let dataset =
        datastore::export_dataset(tmp.path(), "small", &result, &geom, &proc, &solver, 1).unwrap();
    let dataset = datastore::ingest(&dataset.dir).unwrap();
    assert_eq!(dataset.trace.temps(), result.trace.temps());

    let schedule = dataset.build_schedule(None).unwrap();
    let ga = GaConfig {
        population: 16,
        generations: 10,
        ..GaConfig::default()
    };
    let ident = identify_build(&dataset.trace, &schedule, &ParamBounds::default(), &ga).unwrap();
    assert_eq!(ident.per_layer_rmse.len(), 3);
    assert!(ident.epochs.iter().all(|e| e.fit_rmse.is_finite()));

    let (s1, e1) = schedule.epoch_window(1);
    let triangle = fit_triangle(&[dataset.trace.layer_segment(1, s1, e1).unwrap()]).unwrap();
    let feed = pseudo_feed(&schedule, &dataset.trace, &triangle, PseudoMode::Triangle).unwrap();
    let models = rom::models_for_schedule(&ident.schedule, schedule.dt).unwrap();
    let noise = NoiseConfig::default();
    let config = RunConfig {
        split_time: 4.0,
        ..RunConfig::default()
    };
    let run = filter::run(&schedule, &models, &dataset.trace, &feed, &noise, &config).unwrap();
    let open = filter::open_loop(&schedule, &models, None).unwrap();

    // The corrected estimate must beat the open loop overall.
    let kf = per_layer_rmse(&run.combined, &dataset.trace, &schedule, RmseWindow::OwnEpoch).unwrap();
    let ol = per_layer_rmse(&open, &dataset.trace, &schedule, RmseWindow::OwnEpoch).unwrap();
    let kf_total: f64 = kf.iter().map(|r| r.rmse_c).sum();
    let ol_total: f64 = ol.iter().map(|r| r.rmse_c).sum();
    assert!(
        kf_total < ol_total,
        "filter ({kf_total}) did not improve on the open loop ({ol_total})"
    );

    let report_dir = tmp.path().join("report");
    let paths = datastore::report(
        &report_dir,
        &ReportInputs {
            truth: &dataset.trace,
            open_loop: &open,
            run: &run,
            schedule: &schedule,
            split_time: config.split_time,
        },
    )
    .unwrap();
    assert!(paths.rmse_per_layer.exists());
    assert!(paths.rmse_forecast.exists());
    assert!(paths.error_traces.exists());
    assert!(paths.diagnostics.exists());
    assert_eq!(paths.plots.len(), 3 + 2);

    // Reports are pure functions of their inputs.
    let again_dir = tmp.path().join("report_again");
    datastore::report(
        &again_dir,
        &ReportInputs {
            truth: &dataset.trace,
            open_loop: &open,
            run: &run,
            schedule: &schedule,
            split_time: config.split_time,
        },
    )
    .unwrap();
    let a = std::fs::read(report_dir.join("rmse_per_layer.csv")).unwrap();
    let b = std::fs::read(again_dir.join("rmse_per_layer.csv")).unwrap();
    assert_eq!(a, b);
}

/// First-layer run at the reference dwell: the two triangle-fit routes must
/// agree on the profile they read off the same oracle trace, and epoch-1
/// identification must land in the expected error decade.
#[test]
fn oracle_first_layer_triangle_and_identification() {
    let geom = GeometryMaterialSpec::cube_build(0.2e-3, 1);
    let proc = ProcessSpec::default(); // 200 s dwell
    let solver = SolverConfig {
        scheme: Scheme::Implicit,
        dt: Some(0.1),
        ..SolverConfig::default()
    };
    let result = simulate_fd(&geom, &proc, &solver).unwrap();
    let (s1, e1) = result.schedule.epoch_window(1);
    let segment = result.trace.layer_segment(1, s1, e1).unwrap();

    let by_features = fit_triangle(std::slice::from_ref(&segment)).unwrap();
    let by_lsq =
        lpbf_thermal::pseudodata::fit_triangle_least_squares(std::slice::from_ref(&segment))
            .unwrap();
    // Same peak by construction; settle and width agree between the routes.
    assert_eq!(by_features.t_peak, by_lsq.t_peak);
    assert!(
        (by_features.t_settle - by_lsq.t_settle).abs() < 5.0,
        "settle: {} vs {}",
        by_features.t_settle,
        by_lsq.t_settle
    );
    assert!(by_features.t_base_width > 0.0 && by_lsq.t_base_width > 0.0);
    assert!(
        by_features.t_base_width < 20.0 && by_lsq.t_base_width < 20.0,
        "widths: {} vs {} (the decay is over within seconds)",
        by_features.t_base_width,
        by_lsq.t_base_width
    );

    let ga = GaConfig {
        population: 24,
        generations: 20,
        ..GaConfig::default()
    };
    let epoch = lpbf_thermal::ident::identify_epoch(
        &result.trace,
        1,
        &result.schedule,
        &ParamBounds::default(),
        &ga,
    )
    .unwrap();
    // Fit error lands within a decade of the reference ~1.8e2 °C magnitude.
    assert!(
        epoch.fit_rmse > 18.0 && epoch.fit_rmse < 1800.0,
        "epoch-1 fit RMSE {} outside the expected decade",
        epoch.fit_rmse
    );
}

#[test]
fn filter_runs_are_bit_identical() {
    let p = LayerParams::new(9000.0, 1.0, -3000.0, 3000.0, 0.0).unwrap();
    let schedule =
        BuildSchedule::evenly_spaced(3, 15.0, vec![800.0, 700.0, 600.0], 27.0, 27.0, 0.1).unwrap();
    let params = ParamSchedule::constant(3, p);
    let truth = rom::integrate_build(&schedule, &params).unwrap();
    let models = rom::models_for_schedule(&params, schedule.dt).unwrap();
    let noise = NoiseConfig::default();
    let config = RunConfig {
        split_time: 5.0,
        ..RunConfig::default()
    };
    let a = filter::run(&schedule, &models, &truth, &truth, &noise, &config).unwrap();
    let b = filter::run(&schedule, &models, &truth, &truth, &noise, &config).unwrap();
    assert_eq!(a.combined, b.combined);
    assert_eq!(a.diagnostics.covariance_diag, b.diagnostics.covariance_diag);
    assert_eq!(a.state.gain_history, b.state.gain_history);
}

fn arb_trace(kind: TraceKind) -> impl Strategy<Value = ThermalTrace> {
    // 3..30 samples, strictly increasing times, 1 layer.
    (3usize..30, 0.01f64..2.0, -50.0f64..1500.0).prop_flat_map(move |(n, dt, base)| {
        proptest::collection::vec(-100.0f64..2500.0, n).prop_map(move |values| {
            let times: Vec<f64> = (0..values.len()).map(|i| base + i as f64 * dt).collect();
            ThermalTrace::single_layer(kind, &times, &values).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Scalar-channel gains stay in [0, 1] and every updated entry is a
    /// convex combination of prediction and measurement.
    #[test]
    fn prop_update_gain_bounded_and_interpolating(
        p0 in 0.0f64..1e6,
        sigma_m in 0.0f64..1e6,
        pred in -500.0f64..2500.0,
        y in -500.0f64..2500.0,
    ) {
        prop_assume!(p0 + sigma_m > 1e-12);
        let mut state = FilterState::new(
            DVector::from_element(1, pred),
            DMatrix::from_element(1, 1, p0),
        ).unwrap();
        let noise = NoiseConfig {
            sigma_p: Covariance::Scalar(0.0),
            sigma_m: Covariance::Scalar(sigma_m),
        };
        state.update(&DVector::from_element(1, y), &noise, UpdateMode::Real).unwrap();
        let k = state.gain_history[0][(0, 0)];
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&k));
        let (lo, hi) = if pred <= y { (pred, y) } else { (y, pred) };
        prop_assert!(state.estimate[0] >= lo - 1e-9 && state.estimate[0] <= hi + 1e-9);
    }

    /// Prior-layer averaging is bounded by the pointwise extremes of its
    /// inputs and invariant under permutation of the priors.
    #[test]
    fn prop_layer_average_bounded_and_symmetric(
        seed_values in proptest::collection::vec(0.0f64..2000.0, 24),
        n_priors in 2usize..5,
    ) {
        let per = 24 / n_priors;
        prop_assume!(per >= 3);
        let mut segments = Vec::new();
        for j in 0..n_priors {
            let vals = &seed_values[j * per..(j + 1) * per];
            let times: Vec<f64> = (0..per).map(|i| 100.0 * j as f64 + i as f64).collect();
            segments.push(ThermalTrace::single_layer(TraceKind::GroundTruth, &times, vals).unwrap());
        }
        let grid: Vec<f64> = (0..per).map(|i| i as f64).collect();
        let avg = layer_n_pseudo(&segments, n_priors + 1, &grid).unwrap();

        for (gi, v) in avg.temps().iter().enumerate() {
            let column: Vec<f64> = segments
                .iter()
                .map(|s| s.temps()[gi][0])
                .collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v[0] >= lo - 1e-9 && v[0] <= hi + 1e-9);
        }

        let mut reversed = segments.clone();
        reversed.reverse();
        let avg_rev = layer_n_pseudo(&reversed, n_priors + 1, &grid).unwrap();
        prop_assert_eq!(avg.temps(), avg_rev.temps());
    }

    /// RMSE is symmetric and zero against itself.
    #[test]
    fn prop_rmse_symmetric_and_reflexive(
        a in arb_trace(TraceKind::Rom),
        b in arb_trace(TraceKind::GroundTruth),
    ) {
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        if let (Ok(ab), Ok(ba)) = (rmse(&a, &b), rmse(&b, &a)) {
            prop_assert_eq!(ab, ba);
        }
    }

    /// Export then ingest reproduces every value bit for bit.
    #[test]
    fn prop_trace_csv_roundtrip(trace in arb_trace(TraceKind::GroundTruth)) {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("trace.csv");
        datastore::write_trace_csv(&path, &trace).unwrap();
        let back = datastore::read_trace_csv(&path, TraceKind::GroundTruth).unwrap();
        prop_assert_eq!(trace.times(), back.times());
        prop_assert_eq!(trace.temps(), back.temps());
    }

    /// Equilibrium is a fixed point of the build integrator for any valid
    /// parameter set.
    #[test]
    fn prop_equilibrium_fixed_point(
        c1 in 1.0f64..2e4,
        c2 in 0.1f64..5.0,
        c3 in -5e4f64..5e4,
        c4 in -5e4f64..5e4,
        c5 in 0.0f64..5e4,
        t0 in -20.0f64..800.0,
    ) {
        let p = LayerParams::new(c1, c2, c3, c4, c5).unwrap();
        let schedule = BuildSchedule::evenly_spaced(2, 5.0, vec![t0; 2], t0, t0, 0.5).unwrap();
        let trace = rom::integrate_build(&schedule, &ParamSchedule::constant(2, p)).unwrap();
        for v in trace.temps() {
            for &x in v {
                prop_assert_eq!(x, t0);
            }
        }
    }
}
