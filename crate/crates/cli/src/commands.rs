use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use bodyaffect::annotations::{
    build_dataset, parse_annotations, read_label_table, write_annotations, write_label_table, Category, DatasetConfig,
    Dimension, DsConfig, LabelRow, ParticipantStatus, Split,
};
use bodyaffect::forest::{
    cv_search, default_grid, feature_significance, impute, train_forest, FeaturesPerSplit, ForestConfig, ForestError,
    ModelBundle, Task,
};
use bodyaffect::lma::{read_feature_table, write_feature_table, FeatureExtractor, FeatureTable, KinematicParams};
use bodyaffect::metrics::{evaluate, kappa_report, read_predictions, write_predictions, PredictionRow};
use bodyaffect::quality::{
    build_qc_report, read_hit_assignments, reliability_scores, ExponentialErrorScorer, GoldSet, QcConfig, QcReport,
};
use bodyaffect::simkit::{
    chance_predictions, default_positive_rates, gen_annotations, gen_skeletons, planted_labels, planted_truth,
    random_motion_spec, AnnotatorSpec, Role, TruthConfig,
};
use bodyaffect::skeleton::{parse_skeleton_stream, validate_instance, write_skeleton_stream, ValidationConfig, Verdict};
use bodyaffect::{AnnotationRecord, LimbGraph, ParticipantProfile};
use bodyaffect_service::{read_pool, AppState, Pool, Sampling, Service, ServiceConfig, SystemClock};

use crate::{
    AggregateArgs, Cli, CliError, Command, EvaluateArgs, ExtractArgs, KappaArgs, PredictArgs, QcArgs, SamplingArg,
    ServeArgs, SignifArgs, SimKind, SimulateArgs, SplitArg, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn schema(what: &Path) -> impl Fn(&dyn std::fmt::Display) -> CliError + '_ {
    move |e| CliError::Schema(format!("{}: {e}", what.display()))
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or standard output for `-`.
fn write_to(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if path.as_os_str() == "-" {
        let out = std::io::stdout();
        let mut lock = out.lock();
        f(&mut lock)?;
        lock.flush().map_err(failed)
    } else {
        let file = File::create(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(failed)
    }
}

fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(open(path)?).map_err(|e| schema(path)(&e))
}

fn load_labels(path: &Path) -> Result<Vec<LabelRow>> {
    read_label_table(open(path)?).map_err(|e| schema(path)(&e))
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    read_feature_table(open(path)?).map_err(|e| schema(path)(&e))
}

fn load_report(path: &Path) -> Result<QcReport> {
    serde_json::from_reader(open(path)?).map_err(|e| schema(path)(&e))
}

fn split_of(s: SplitArg) -> Option<Split> {
    match s {
        SplitArg::All => None,
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
    }
}

fn profiles(path: Option<&Path>, records: &[AnnotationRecord]) -> Result<Vec<ParticipantProfile>> {
    match path {
        Some(p) => Ok(load_report(p)?.participants.into_iter().map(|s| s.profile).collect()),
        None => Ok(reliability_scores(records).map_err(failed)?.profiles),
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => extract(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Qc(a) => qc(a),
        Command::Kappa(a) => kappa(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Signif(a) => signif(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve(a),
    }
}

fn extract(a: ExtractArgs) -> Result<()> {
    let limbs = match &a.limbs {
        Some(p) => LimbGraph::parse(&read_text(p)?).map_err(|e| schema(p)(&e))?,
        None => LimbGraph::default(),
    };
    let seqs = parse_skeleton_stream(open(&a.input)?).map_err(|e| schema(&a.input)(&e))?;
    let total = seqs.len();
    let seqs: Vec<_> = if a.validate {
        let cfg = ValidationConfig { min_frames: a.min_frames, max_frames: a.max_frames, min_coverage: a.min_coverage };
        seqs.into_iter()
            .filter(|s| match validate_instance(s, &cfg) {
                Verdict::Pass => true,
                Verdict::Reject(why) => {
                    let why: Vec<String> = why.iter().map(|r| r.to_string()).collect();
                    eprintln!("rejected {}: {}", s.instance_id, why.join("; "));
                    false
                }
            })
            .collect()
    } else {
        seqs
    };
    let ex = FeatureExtractor::new(limbs, KinematicParams { tau: a.tau });
    let mut table = FeatureTable { names: ex.names().to_vec(), ids: Vec::new(), rows: Vec::new() };
    for (s, v) in seqs.iter().zip(ex.extract_many(&seqs)) {
        match v {
            Ok(v) => {
                table.ids.push(s.instance_id.clone());
                table.rows.push(v.values);
            }
            Err(e) => eprintln!("skipped {}: {e}", s.instance_id),
        }
    }
    eprintln!("extracted {} of {total} sequences, {} features each", table.len(), ex.dim());
    write_to(&a.output, |w| write_feature_table(w, &table).map_err(failed))
}

fn parse_split(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(
        |_| CliError::Usage(format!("--split `{s}`: expected three comma-separated numbers")),
    )?;
    match v[..] {
        [a, b, c] if v.iter().all(|x| *x >= 0.0 && x.is_finite()) && a + b + c > 0.0 => Ok([a, b, c]),
        _ => Err(CliError::Usage(format!("--split `{s}`: expected three non-negative proportions"))),
    }
}

fn load_movies(path: &Path) -> Result<HashMap<String, String>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = rdr.headers().map_err(|e| schema(path)(&e))?.iter().map(|s| s.trim().to_string()).collect();
    if header != ["instance_id", "movie_id"] {
        return Err(CliError::Schema(format!("{}: header must be instance_id,movie_id", path.display())));
    }
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(path)(&e))?;
        out.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
    }
    Ok(out)
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let mut records = load_annotations(&a.annotations)?;
    let movies = match &a.movies {
        Some(p) => load_movies(p)?,
        None => HashMap::new(),
    };
    let profiles = profiles(a.profiles.as_deref(), &records)?;
    if a.drop_excluded {
        let excluded: Vec<&str> = profiles
            .iter()
            .filter(|p| p.status == ParticipantStatus::Excluded)
            .map(|p| p.participant_id.as_str())
            .collect();
        records.retain(|r| !excluded.contains(&r.participant_id.as_str()));
    }
    let cfg = DatasetConfig {
        confidence_min: a.confidence_min,
        split,
        seed: a.seed,
        ds: DsConfig { max_iters: a.max_iters, smoothing: a.smoothing, ..DsConfig::default() },
    };
    let ds = build_dataset(&records, &profiles, &movies, &cfg).map_err(failed)?;
    eprintln!(
        "{} instances: {} train, {} val, {} test; {} left out",
        ds.len(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.excluded.len()
    );
    if let Some(p) = &a.excluded {
        write_to(p, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(["instance_id", "reason"]).map_err(failed)?;
            for (id, why) in &ds.excluded {
                out.write_record([id, why]).map_err(failed)?;
            }
            out.flush().map_err(failed)
        })?;
    }
    write_to(&a.output, |w| write_label_table(w, &ds.rows()).map_err(failed))
}

fn qc(a: QcArgs) -> Result<()> {
    let records = load_annotations(&a.annotations)?;
    let hits = read_hit_assignments(open(&a.hits)?).map_err(|e| schema(&a.hits)(&e))?;
    let gold = GoldSet::parse(&read_text(&a.gold)?).map_err(|e| schema(&a.gold)(&e))?;
    let cfg = QcConfig {
        hit_size: a.hit_size,
        violation_limit: a.violation_limit,
        block_secs: a.block_secs,
        reliability_threshold: a.reliability_threshold,
        min_effective: a.min_effective,
    };
    let report =
        build_qc_report(&records, &hits, &gold, &ExponentialErrorScorer::default(), &cfg, a.now).map_err(failed)?;
    eprintln!(
        "{} participants: {} active, {} blocked, {} excluded; {} HITs, {} low-performance",
        report.participants.len(),
        report.active,
        report.blocked,
        report.excluded,
        report.hits.len(),
        report.hits.iter().filter(|h| h.low_performance).count()
    );
    write_to(&a.output, |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(failed)?;
        writeln!(w).map_err(failed)
    })
}

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn kappa(a: KappaArgs) -> Result<()> {
    let records = load_annotations(&a.annotations)?;
    let profiles = if a.filtered { Some(profiles(a.profiles.as_deref(), &records)?) } else { None };
    let rows = kappa_report(&records, profiles.as_deref().map(|p| (p, a.reliability_threshold)));
    write_to(&a.output, |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["label", "kappa", "instances"];
        if a.filtered {
            header.extend(["filtered_kappa", "filtered_instances"]);
        }
        out.write_record(&header).map_err(failed)?;
        for r in &rows {
            let mut rec = vec![r.label.clone(), opt_field(r.kappa), r.instances.to_string()];
            if a.filtered {
                rec.extend([opt_field(r.filtered_kappa), r.filtered_instances.to_string()]);
            }
            out.write_record(&rec).map_err(failed)?;
        }
        out.flush().map_err(failed)
    })
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let preds = read_predictions(open(&a.predictions)?).map_err(|e| schema(&a.predictions)(&e))?;
    let labels = load_labels(&a.labels)?;
    let report = evaluate(&labels, &preds, split_of(a.split)).map_err(failed)?;
    if let Some(p) = &a.json {
        write_to(p, |w| serde_json::to_writer_pretty(w, &report).map_err(failed))?;
    }
    write_to(Path::new("-"), |w| w.write_all(report.render_text().as_bytes()).map_err(failed))
}

/// Feature rows with a label row in `split`, sorted by instance id.
fn join<'a>(
    features: &'a FeatureTable,
    labels: &'a [LabelRow],
    split: SplitArg,
) -> Vec<(&'a str, &'a Vec<Option<f64>>, &'a LabelRow)> {
    let want = split_of(split);
    let by_id: HashMap<&str, &LabelRow> = labels
        .iter()
        .filter(|l| want.is_none() || l.split == want)
        .map(|l| (l.instance_id.as_str(), l))
        .collect();
    let mut out: Vec<_> = features
        .ids
        .iter()
        .zip(&features.rows)
        .filter_map(|(id, row)| by_id.get(id.as_str()).map(|l| (id.as_str(), row, *l)))
        .collect();
    out.sort_by(|a, b| a.0.cmp(b.0));
    out
}

fn target_of(name: &str) -> Result<Box<dyn Fn(&LabelRow) -> f64>> {
    if let Some(d) = Dimension::from_name(name) {
        return Ok(Box::new(move |l| l.vad[d.index()]));
    }
    if let Some(c) = Category::from_name(name) {
        return Ok(Box::new(move |l| l.labels[c.index()] as u8 as f64));
    }
    Err(CliError::Usage(format!("--target `{name}`: not a dimension or category")))
}

fn signif(a: SignifArgs) -> Result<()> {
    let target = target_of(&a.target)?;
    let features = load_features(&a.features)?;
    let labels = load_labels(&a.labels)?;
    let joined = join(&features, &labels, a.split);
    let rows: Vec<Vec<Option<f64>>> = joined.iter().map(|j| j.1.clone()).collect();
    let y: Vec<Option<f64>> = joined.iter().map(|j| Some(target(j.2))).collect();
    let out = feature_significance(&features.names, &rows, &y).map_err(failed)?;
    eprintln!("{} rows, {} features fitted, {} skipped", joined.len(), out.rows.len(), out.skipped.len());
    write_to(&a.output, |w| {
        let mut csvw = csv::Writer::from_writer(w);
        csvw.write_record(["feature", "r2", "slope", "intercept", "n"]).map_err(failed)?;
        for r in &out.rows {
            csvw.write_record([
                r.feature.clone(),
                r.r2.to_string(),
                r.slope.to_string(),
                r.intercept.to_string(),
                r.n.to_string(),
            ])
            .map_err(failed)?;
        }
        csvw.flush().map_err(failed)
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let features = load_features(&a.features)?;
    let labels = load_labels(&a.labels)?;
    let joined = join(&features, &labels, a.split);
    if joined.len() < 2 {
        return Err(CliError::Failed(format!("{} labelled feature rows; need at least 2", joined.len())));
    }
    let rows: Vec<Vec<Option<f64>>> = joined.iter().map(|j| j.1.clone()).collect();
    let x = impute(&rows).map_err(failed)?;
    let mut bundle = ModelBundle::new(features.names.clone());
    let mut fit = |name: String, task: Task, y: Vec<f64>| -> Result<()> {
        let model = if a.cv {
            cv_search(&x, &y, task, &default_grid(task, a.seed), a.folds, a.seed).map(|r| r.model)
        } else {
            let cfg = ForestConfig {
                n_trees: a.trees,
                max_depth: (a.max_depth > 0).then_some(a.max_depth),
                min_samples_leaf: a.min_leaf,
                features_per_split: FeaturesPerSplit::for_task(task),
                seed: a.seed,
            };
            train_forest(&x, &y, task, &cfg)
        };
        match model {
            Ok(mut m) => {
                m.feature_names = features.names.clone();
                bundle.models.insert(name, m);
            }
            Err(ForestError::SingleClass) => eprintln!("no model for {name}: one class in the training rows"),
            Err(e) => return Err(failed(format!("{name}: {e}"))),
        }
        Ok(())
    };
    for c in Category::ALL {
        fit(c.name().to_string(), Task::Classification, joined.iter().map(|j| j.2.labels[c.index()] as u8 as f64).collect())?;
    }
    for d in Dimension::ALL {
        fit(d.name().to_string(), Task::Regression, joined.iter().map(|j| j.2.vad[d.index()]).collect())?;
    }
    eprintln!("trained {} models on {} rows", bundle.models.len(), joined.len());
    write_to(&a.output, |w| bundle.to_json(w).map_err(failed))
}

fn predict(a: PredictArgs) -> Result<()> {
    let bundle = ModelBundle::from_json(open(&a.model)?).map_err(|e| schema(&a.model)(&e))?;
    let features = load_features(&a.features)?;
    let cols: Vec<usize> = bundle
        .feature_names
        .iter()
        .map(|n| {
            features
                .column(n)
                .ok_or_else(|| CliError::Schema(format!("{}: missing feature column `{n}`", a.features.display())))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<Option<f64>>> = features.rows.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect();
    if rows.is_empty() {
        return write_to(&a.output, |w| write_predictions(w, &[]).map_err(failed));
    }
    let x = impute(&rows).map_err(failed)?;
    let column = |name: &str| -> Result<Vec<f64>> {
        match bundle.models.get(name) {
            Some(m) => m.predict(&x).map_err(failed),
            None => Ok(vec![0.0; x.n_rows]),
        }
    };
    let cats: Vec<Vec<f64>> = Category::ALL.iter().map(|c| column(c.name())).collect::<Result<_>>()?;
    let dims: Vec<Vec<f64>> = Dimension::ALL.iter().map(|d| column(d.name())).collect::<Result<_>>()?;
    let preds: Vec<PredictionRow> = features
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| PredictionRow {
            instance_id: id.clone(),
            scores: std::array::from_fn(|c| cats[c][i]),
            vad: std::array::from_fn(|d| dims[d][i]),
        })
        .collect();
    write_to(&a.output, |w| write_predictions(w, &preds).map_err(failed))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    match a.kind {
        SimKind::Annotations => {
            let mut specs = Vec::new();
            for (role, n) in [
                (Role::Honest { sigma: a.sigma }, a.honest),
                (Role::Dishonest, a.dishonest),
                (Role::Exotic { delta: a.delta }, a.exotic),
            ] {
                if n > 0 {
                    specs.push(AnnotatorSpec::new(role, n));
                }
            }
            let truth = planted_truth(&TruthConfig {
                n_instances: a.count,
                n_movies: a.movies,
                positive_rates: default_positive_rates(),
                frames: a.frames as u32,
                seed: a.seed,
            });
            let pop = gen_annotations(&specs, &truth, Some(a.per_instance), a.frames as u32, a.seed)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(p) = &a.truth {
                let rows: Vec<LabelRow> = truth
                    .iter()
                    .map(|t| LabelRow {
                        instance_id: t.instance_id.clone(),
                        ds_scores: t.categories.map(|b| b as u8 as f64),
                        labels: t.categories,
                        vad: t.vad.map(|v| v as f64 / 10.0),
                        confidence: 1.0,
                        split: None,
                    })
                    .collect();
                write_to(p, |w| write_label_table(w, &rows).map_err(failed))?;
            }
            write_to(&a.output, |w| write_annotations(w, &pop.records).map_err(failed))
        }
        SimKind::Skeletons => {
            let seqs = (0..a.count)
                .map(|i| {
                    // ids line up with `simulate annotations` for the same --movies
                    let mut spec = random_motion_spec(i, a.frames, a.seed);
                    spec.movie_id = format!("sim{:03}", i % a.movies.max(1));
                    spec.instance_id = format!("{}/inst{i:05}", spec.movie_id);
                    gen_skeletons(&spec, a.seed.wrapping_add(i as u64))
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            write_to(&a.output, |w| write_skeleton_stream(&seqs, w).map_err(failed))
        }
        SimKind::Labels => {
            let rows = planted_labels(a.count, &default_positive_rates(), a.seed);
            write_to(&a.output, |w| write_label_table(w, &rows).map_err(failed))
        }
        SimKind::Chance => {
            let Some(p) = &a.labels else {
                return Err(CliError::Usage("simulate chance needs --labels".into()));
            };
            let preds = chance_predictions(&load_labels(p)?, a.seed);
            write_to(&a.output, |w| write_predictions(w, &preds).map_err(failed))
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let items = read_pool(open(&a.pool)?).map_err(|e| schema(&a.pool)(&e))?;
    let gold = GoldSet::parse(&read_text(&a.gold)?).map_err(|e| schema(&a.gold)(&e))?;
    let qc = QcConfig {
        reliability_threshold: a.reliability_threshold,
        min_effective: a.min_effective,
        block_secs: a.block_secs,
        ..QcConfig::default()
    };
    let pool = Pool::new(items, gold, qc.hit_size).map_err(|e| schema(&a.pool)(&e))?;
    let config = ServiceConfig {
        qc,
        sampling: match a.sampling {
            SamplingArg::LeastAnnotated => Sampling::LeastAnnotated,
            SamplingArg::Uniform => Sampling::Uniform,
        },
        target_per_instance: a.target,
        seed: a.seed,
    };
    let service = match &a.log {
        Some(p) => Service::open_log(config, pool, p).map_err(|e| schema(p)(&e))?,
        None => Service::new(config, pool),
    };
    let addr = a.addr.parse().map_err(|_| CliError::Usage(format!("--addr `{}`: not a socket address", a.addr)))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(failed)?;
    rt.block_on(bodyaffect_service::serve(addr, AppState::new(service, Arc::new(SystemClock)))).map_err(failed)
}
