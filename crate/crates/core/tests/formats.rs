//! Round trips through every on-disk format the tools exchange.

use std::collections::HashMap;
use std::io::Cursor;

use bodyaffect::annotations::{
    aggregate_labels, build_dataset, parse_annotations, read_label_table, write_annotations, write_label_table,
    DatasetConfig, DsConfig,
};
use bodyaffect::forest::{impute, train_forest, ForestConfig, ModelBundle, Task};
use bodyaffect::lma::{read_feature_table, write_feature_table, FeatureExtractor, FeatureTable};
use bodyaffect::metrics::{read_predictions, write_predictions};
use bodyaffect::quality::{
    build_qc_report, read_hit_assignments, write_hit_assignments, ExponentialErrorScorer, GoldSet, HitAssignment,
    QcConfig, QcReport,
};
use bodyaffect::simkit::{
    chance_predictions, gen_annotations, gen_skeletons, planted_labels, planted_truth, random_motion_spec,
    AnnotatorSpec, Role, TruthConfig,
};
use bodyaffect::skeleton::{parse_skeleton_stream, write_skeleton_stream};
use bodyaffect::SkeletonSequence;
use proptest::prelude::*;

fn crowd(n: usize, seed: u64) -> (Vec<bodyaffect::AnnotationRecord>, HashMap<String, String>) {
    let truth = planted_truth(&TruthConfig { n_instances: n, n_movies: 6, seed, ..TruthConfig::default() });
    let specs = [AnnotatorSpec::new(Role::Honest { sigma: 1.0 }, 8), AnnotatorSpec::new(Role::Dishonest, 2)];
    let pop = gen_annotations(&specs, &truth, Some(5), 300, seed).expect("population");
    let movies = truth.iter().map(|t| (t.instance_id.clone(), t.movie_id.clone())).collect();
    (pop.records, movies)
}

#[test]
fn skeleton_stream_round_trip_keeps_features() {
    let seqs: Vec<SkeletonSequence> =
        (0..4).map(|i| gen_skeletons(&random_motion_spec(i, 150, 5), i as u64).expect("spec")).collect();
    let mut buf = Vec::new();
    write_skeleton_stream(&seqs, &mut buf).expect("write");
    let back = parse_skeleton_stream(Cursor::new(&buf)).expect("parse");
    assert_eq!(back, seqs);
    let ex = FeatureExtractor::default();
    for (a, b) in seqs.iter().zip(&back) {
        let fa = ex.extract(a).expect("extract").values;
        let fb = ex.extract(b).expect("extract").values;
        let bits = |v: &[Option<f64>]| v.iter().map(|x| x.map(f64::to_bits)).collect::<Vec<_>>();
        assert_eq!(bits(&fa), bits(&fb));
    }
}

#[test]
fn annotation_table_round_trip() {
    let (records, _) = crowd(30, 1);
    let mut buf = Vec::new();
    write_annotations(&mut buf, &records).expect("write");
    let back = parse_annotations(Cursor::new(&buf)).expect("parse");
    assert_eq!(back, records);
}

#[test]
fn label_table_round_trip_from_simulated_crowd() {
    let (records, movies) = crowd(60, 2);
    let profiles = bodyaffect::quality::reliability_scores(&records).expect("scores").profiles;
    let cfg = DatasetConfig { confidence_min: 0.0, ..DatasetConfig::default() };
    let ds = build_dataset(&records, &profiles, &movies, &cfg).expect("dataset");
    let rows = ds.rows();
    assert_eq!(rows.len(), 60);
    let mut buf = Vec::new();
    write_label_table(&mut buf, &rows).expect("write");
    assert_eq!(read_label_table(Cursor::new(&buf)).expect("read"), rows);

    let mut with_unsplit = planted_labels(10, &bodyaffect::simkit::default_positive_rates(), 3);
    with_unsplit[4].split = None;
    let mut buf = Vec::new();
    write_label_table(&mut buf, &with_unsplit).expect("write");
    assert_eq!(read_label_table(Cursor::new(&buf)).expect("read"), with_unsplit);
}

#[test]
fn feature_table_keeps_missing_cells() {
    let table = FeatureTable {
        names: vec!["a".into(), "b".into(), "c".into()],
        ids: vec!["x/1".into(), "x/2".into()],
        rows: vec![vec![Some(0.1), None, Some(-3.5e-12)], vec![None, None, Some(1.0 / 3.0)]],
    };
    let mut buf = Vec::new();
    write_feature_table(&mut buf, &table).expect("write");
    assert_eq!(read_feature_table(Cursor::new(&buf)).expect("read"), table);
}

#[test]
fn prediction_table_round_trip() {
    let labels = planted_labels(25, &bodyaffect::simkit::default_positive_rates(), 4);
    let preds = chance_predictions(&labels, 9);
    let mut buf = Vec::new();
    write_predictions(&mut buf, &preds).expect("write");
    assert_eq!(read_predictions(Cursor::new(&buf)).expect("read"), preds);
}

#[test]
fn hit_assignment_round_trip() {
    let hits = vec![
        HitAssignment { hit_id: "h1".into(), participant_id: "p1".into(), instance_ids: vec!["a".into(), "ctl".into()] },
        HitAssignment { hit_id: "h2".into(), participant_id: "p2".into(), instance_ids: vec!["b".into(), "c".into()] },
    ];
    let mut buf = Vec::new();
    write_hit_assignments(&mut buf, &hits).expect("write");
    assert_eq!(read_hit_assignments(Cursor::new(&buf)).expect("read"), hits);
}

#[test]
fn gold_toml_defaults_and_rejections() {
    let gold = GoldSet::parse(
        "[[control]]\ninstance_id = \"ctl/1\"\nvalence = [6, 10]\nrequired = [\"happiness\"]\n\n\
         [[control]]\ninstance_id = \"ctl/2\"\n",
    )
    .expect("gold");
    assert_eq!(gold.controls.len(), 2);
    assert_eq!(gold.controls[0].valence, (6, 10));
    assert_eq!(gold.controls[0].arousal, (1, 10));
    assert!(gold.controls[1].required.is_empty());
    assert!(GoldSet::parse("[[control]]\ninstance_id = \"a\"\ncolour = 1\n").is_err());
    assert!(GoldSet::parse("[[control]]\ninstance_id = \"a\"\n[[control]]\ninstance_id = \"a\"\n").is_err());
}

#[test]
fn model_bundle_round_trip_predicts_identically() {
    let rows: Vec<Vec<Option<f64>>> =
        (0..80).map(|i| vec![Some(i as f64 / 80.0), if i % 7 == 0 { None } else { Some((i * 13 % 11) as f64) }]).collect();
    let y: Vec<f64> = rows.iter().map(|r| (r[0].unwrap() > 0.4) as u8 as f64).collect();
    let x = impute(&rows).expect("impute");
    let cfg = ForestConfig { n_trees: 12, seed: 5, ..ForestConfig::for_task(Task::Classification) };
    let mut bundle = ModelBundle::new(vec!["t".into(), "u".into()]);
    bundle.models.insert("happiness".into(), train_forest(&x, &y, Task::Classification, &cfg).expect("train"));
    let mut buf = Vec::new();
    bundle.to_json(&mut buf).expect("json");
    let back = ModelBundle::from_json(Cursor::new(&buf)).expect("load");
    assert_eq!(back, bundle);
    let a = bundle.models["happiness"].predict(&x).expect("predict");
    let b = back.models["happiness"].predict(&x).expect("predict");
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

    let text = String::from_utf8(buf).expect("utf8").replace("bodyaffect-model-bundle", "something-else");
    assert!(ModelBundle::from_json(Cursor::new(text)).is_err());
}

#[test]
fn qc_report_json_round_trip() {
    let (records, _) = crowd(40, 6);
    let gold = GoldSet::default();
    let report =
        build_qc_report(&records, &[], &gold, &ExponentialErrorScorer::default(), &QcConfig::default(), 1_000)
            .expect("report");
    assert_eq!(report.participants.len(), 10);
    let text = serde_json::to_string(&report).expect("json");
    let back: QcReport = serde_json::from_str(&text).expect("parse");
    assert_eq!(back, report);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // noiseless honest workers reproduce the planted truth exactly
    #[test]
    fn noiseless_crowd_recovers_planted_truth(seed in 0u64..1_000, n in 8usize..30) {
        let truth = planted_truth(&TruthConfig { n_instances: n, n_movies: 4, seed, ..TruthConfig::default() });
        let spec = AnnotatorSpec { flip_prob: Some(0.0), ..AnnotatorSpec::new(Role::Honest { sigma: 0.0 }, 5) };
        let pop = gen_annotations(&[spec], &truth, None, 300, seed).expect("population");
        let movies = truth.iter().map(|t| (t.instance_id.clone(), t.movie_id.clone())).collect();
        let profiles = bodyaffect::quality::reliability_scores(&pop.records).expect("scores").profiles;
        let out = aggregate_labels(&pop.records, &profiles, &movies, &DsConfig::default()).expect("aggregate");
        prop_assert_eq!(out.labels.len(), n);
        for t in &truth {
            let l = out.labels.iter().find(|l| l.instance_id == t.instance_id).expect("label");
            prop_assert_eq!(l.binary_labels, t.categories);
            for d in 0..3 {
                prop_assert!((l.vad[d] - t.vad[d] as f64 / 10.0).abs() < 1e-12);
            }
        }
    }
}
