mod common;

use forage_core::data::Cohort;
use forage_core::exec::Execution;
use forage_core::features::{FeatureBuilder, FeatureConfig, Problem, TaskSpec};
use forage_core::geo::{infer_homes, ClockWindow, DbscanParams, OutletIndex};
use forage_core::synth::generate;

#[test]
fn planted_rates_hold_within_three_sigma() {
    for seed in [41, 42, 43] {
        let synth = generate(&common::small_synth(30, 4, seed)).unwrap();
        println!("seed {seed}: {}", common::event_rate_check(&synth).unwrap());
    }
}

#[test]
fn planted_rule_separates_events_from_featurized_rows() {
    let synth = generate(&common::small_synth(30, 4, 44)).unwrap();
    let cohort = Cohort::from_rows(synth.records.clone(), synth.events.clone())
        .unwrap()
        .drop_out_of_bounds(&synth.truth.config.bbox);
    let outlets = OutletIndex::new(&synth.outlets);
    let homes = infer_homes(&cohort, &ClockWindow::default(), &DbscanParams::default(), Execution::default());
    let config = FeatureConfig::default();
    let builder = FeatureBuilder::new(&cohort, &outlets, &homes, &config, Execution::default()).unwrap();
    for (problem, rule, col) in [
        (Problem::Eating, synth.truth.config.eating, 7),
        (Problem::Purchasing, synth.truth.config.purchasing, 3),
    ] {
        let matrix = builder.matrix(TaskSpec::new(problem, 0).unwrap()).unwrap();
        let ba = common::bayes_rule_ba(&matrix, &rule, col);
        println!("{problem}: rule BA {ba:.4}");
        assert!(ba >= 0.9, "{problem}: rule BA {ba}");
    }
}

#[test]
fn generation_is_reproducible() {
    let cfg = common::small_synth(5, 2, 45);
    assert_eq!(generate(&cfg).unwrap().truth, generate(&cfg).unwrap().truth);
    let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
    assert_eq!(a.records, b.records);
    assert_eq!(a.events, b.events);
}
