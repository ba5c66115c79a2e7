use chrono::{Duration, TimeZone, Utc};
use fleetmon_core::data::ingest::{ingest_reader, write_dataset_csv};
use fleetmon_core::data::windows::fault_windows;
use fleetmon_core::data::{
    apply_normalization, default_cadence, filter_events, fit_normalization, simulate_fleet, ConstantFeaturePolicy,
    Event, EventCategory, EventLog, FaultSpec, Schema, SimConfig,
};
use fleetmon_core::metrics::evaluate;
use fleetmon_core::model::{ModelKind, TrainingMetadata};
use fleetmon_core::monitor::{classify_windows, standardize, LabeledWindow};
use fleetmon_core::training::{split_chronological, train_pmlp};
use fleetmon_core::{ArchitectureSpec, ModelBundle, MonitorConfig, RowStatus, SplitSpec, TrainConfig, TurbineDataset};
use proptest::prelude::*;

fn sim_config() -> SimConfig {
    let start = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    SimConfig {
        n_units: 2,
        rows_per_unit: vec![8000, 4000],
        faults: vec![FaultSpec {
            unit: 1,
            start: start + Duration::hours(500),
            duration_hours: 24.0,
            kind: Default::default(),
            shift_sigmas: Some(4.0),
        }],
        seed: 21,
        ..SimConfig::default()
    }
}

#[test]
fn simulate_train_evaluate_monitor() {
    let cfg = sim_config();
    let fleet = simulate_fleet(&cfg).unwrap();
    let cadence = default_cadence();

    // The datasets are exactly what ingesting the raw CSVs yields.
    for (raw, ds) in fleet.raw.iter().zip(&fleet.datasets) {
        let bytes = raw.to_csv_bytes().unwrap();
        let (again, report) = ingest_reader(bytes.as_slice(), ds.unit_id(), &fleet.schema, cadence).unwrap();
        assert_eq!(&again, ds);
        assert_eq!(report.rows_kept, ds.len());
    }

    let healthy = &fleet.datasets[0];
    let (clean, rep) = filter_events(healthy, &fleet.events, 7.0, cadence).unwrap();
    assert_eq!(rep.removed(), 0, "unit T01 has no events");
    let split = split_chronological(&clean, &SplitSpec::default(), 0).unwrap();
    let norm = fit_normalization(&split.train, ConstantFeaturePolicy::Drop).unwrap();
    let arch = ArchitectureSpec::a1()
        .with_input_dim(norm.output_dim())
        .with_output_scale(cfg.curve.rated_power_kw);
    let tc = TrainConfig::single_unit().with_seed(0);
    let (params, history) = train_pmlp(
        &arch,
        &apply_normalization(&split.train, &norm).unwrap(),
        &apply_normalization(&split.validation, &norm).unwrap(),
        &tc,
    )
    .unwrap();
    let meta = TrainingMetadata {
        kind: ModelKind::Pmlp,
        units: vec!["T01".into()],
        seed: 0,
        config: tc,
        split: Some(SplitSpec::default()),
        history,
    };
    let json = ModelBundle::new(&arch, &params, norm, meta).unwrap().to_json().unwrap();
    let model = ModelBundle::from_json(&json).unwrap().load().unwrap();
    assert_eq!(model.params, params);

    let preds = model.predict_raw(&split.test).unwrap();
    let report = evaluate(&preds, split.test.target(), cfg.curve.rated_power_kw, 20).unwrap();
    assert!(report.nrmse < 5.0, "nrmse {}", report.nrmse);
    assert!((report.coverage["0.95"] - 0.95).abs() < 0.08, "{:?}", report.coverage);

    // The faulty unit's window before its outage should alarm ahead of it.
    let faulty = &fleet.datasets[1];
    let specs = fault_windows(faulty.unit_id(), &fleet.events, 432, cadence);
    assert_eq!(specs.len(), 1);
    let w = faulty.slice_time(specs[0].start, specs[0].end);
    let preds = model.predict_raw(&w).unwrap();
    let residuals: Vec<f64> = preds
        .iter()
        .zip(w.target())
        .map(|(p, &y)| standardize(y, p).unwrap())
        .collect();
    let window = LabeledWindow {
        id: specs[0].id.clone(),
        label: specs[0].label,
        onset: specs[0].onset,
        times: w.timestamps().to_vec(),
        residuals,
    };
    let r = classify_windows(&[window], &MonitorConfig::default()).unwrap();
    assert_eq!(r.true_positives, 1);
    assert!(r.verdicts[0].notice_time_hours.unwrap() > 0.0);
}

fn arb_dataset() -> impl Strategy<Value = TurbineDataset> {
    (1usize..60, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(1i64..5, n),
            prop::collection::vec(-1e3f64..1e3, n * d),
            prop::collection::vec(-50f64..3000.0, n),
        )
            .prop_map(move |(steps, x, y)| {
                let t0 = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
                let mut t = t0;
                let times = steps
                    .iter()
                    .map(|&k| {
                        t += Duration::minutes(10 * k);
                        t
                    })
                    .collect();
                let names = (0..d).map(|j| format!("f{j}")).collect();
                TurbineDataset::new("U1", names, times, x, y, vec![RowStatus::Normal; n]).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expanded_layout_round_trips(ds in arb_dataset()) {
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let schema = Schema::identity(ds.feature_names());
        let (back, _) = ingest_reader(buf.as_slice(), "U1", &schema, default_cadence()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn filtering_keeps_an_ordered_subset(
        ds in arb_dataset(),
        events in prop::collection::vec((0i64..600, 1i64..120, 0usize..4), 0..5),
        days in 0.0f64..2.0,
    ) {
        let t0 = ds.timestamps()[0];
        let cats = [EventCategory::Standby, EventCategory::Warning, EventCategory::Stop, EventCategory::ForcedOutage];
        let log = EventLog::new(
            events
                .iter()
                .map(|&(s, len, c)| {
                    let start = t0 + Duration::minutes(s);
                    Event::new("U1", start, start + Duration::minutes(len), cats[c]).unwrap()
                })
                .collect(),
        );
        let (kept, rep) = filter_events(&ds, &log, days, default_cadence()).unwrap();
        prop_assert_eq!(kept.len() + rep.removed(), ds.len());
        prop_assert_eq!(rep.remaining, kept.len());
        let mut j = 0;
        for i in 0..kept.len() {
            while ds.timestamps()[j] != kept.timestamps()[i] {
                j += 1;
            }
            prop_assert_eq!(ds.row(j), kept.row(i));
            prop_assert_eq!(ds.target()[j], kept.target()[i]);
        }
        let (twice, rep2) = filter_events(&kept, &log, days, default_cadence()).unwrap();
        prop_assert_eq!(rep2.removed(), 0);
        prop_assert_eq!(twice, kept);
    }

    #[test]
    fn normalization_ignores_held_out_rows(ds in arb_dataset(), bump in -1e4f64..1e4) {
        prop_assume!(ds.len() >= 12);
        let split = split_chronological(&ds, &SplitSpec::default(), 1).unwrap();
        let stats = fit_normalization(&split.train, ConstantFeaturePolicy::Drop);
        let mut x = split.test.features().to_vec();
        x.iter_mut().for_each(|v| *v += bump);
        let test2 = TurbineDataset::new(
            "U1",
            ds.feature_names().to_vec(),
            split.test.timestamps().to_vec(),
            x,
            split.test.target().to_vec(),
            split.test.status().to_vec(),
        )
        .unwrap();
        // Refit after replacing the test rows: the training statistics are unchanged.
        let rest = split.train.len() + split.validation.len();
        let split2 = split_chronological(&concat(&ds, rest, &test2), &SplitSpec::default(), 1).unwrap();
        let stats2 = fit_normalization(&split2.train, ConstantFeaturePolicy::Drop);
        match (stats, stats2) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }
}

/// The first `keep` rows of `ds` followed by `tail`.
fn concat(ds: &TurbineDataset, keep: usize, tail: &TurbineDataset) -> TurbineDataset {
    let head: Vec<usize> = (0..keep).collect();
    let h = ds.select(&head);
    let mut times = h.timestamps().to_vec();
    times.extend_from_slice(tail.timestamps());
    let mut x = h.features().to_vec();
    x.extend_from_slice(tail.features());
    let mut y = h.target().to_vec();
    y.extend_from_slice(tail.target());
    let mut s = h.status().to_vec();
    s.extend_from_slice(tail.status());
    TurbineDataset::new("U1", ds.feature_names().to_vec(), times, x, y, s).unwrap()
}
