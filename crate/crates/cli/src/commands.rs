use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use flowcert::classify::{classify, DecisionMode, DecisionPolicy};
use flowcert::eval::{
    compare_classifiers, flow_likelihoods, run_experiment, train_bundle, write_decision_log,
    ExperimentConfig,
};
use flowcert::features::{emit_cdf, write_cdf, write_feature_dump, FeatureExtractor, FeatureSet};
use flowcert::flow::{apply_labels, ClassLabel, Flow, FlowAssembler, DEFAULT_IDLE_TIMEOUT_US};
use flowcert::models::{load_bundle, save_bundle, GbdtParams};
use flowcert::packet_io::{read_any, write_records};
use flowcert::synth::{general_like, generate, parse_labels, scidmz_like, Preset};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::settings::{pick, FileSettings};
use crate::{
    CdfArgs, ClassifyArgs, Command, CommonArgs, DecisionArgs, EvaluateArgs, ExtractArgs,
    FeatureArgs, FlowArgs, ModelArgs, SynthArgs, Toggle, TrainArgs,
};

const DEFAULT_N: usize = 100;
const DEFAULT_CERTAINTY: f64 = 0.95;
const DEFAULT_FLOWS_PER_CLASS: usize = 200;

/// Bad flag combinations that clap cannot express; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Cdf(a) => cdf(a),
    }
}

fn prepare(common: &CommonArgs, command: &str) -> anyhow::Result<(FileSettings, RunManifest)> {
    let file = FileSettings::load(common.config.as_deref())?;
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    let mut manifest = RunManifest::start(command);
    if let Some(path) = &common.config {
        manifest.input(path)?;
    }
    Ok((file, manifest))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Debug, Clone, Copy)]
struct FlowSettings {
    idle_timeout_s: f64,
    bidirectional: bool,
}

impl FlowSettings {
    fn resolve(
        idle: Option<f64>,
        bidirectional: Option<Toggle>,
        file: &FileSettings,
    ) -> anyhow::Result<Self> {
        let idle_timeout_s = pick(
            idle,
            file.idle_timeout_s,
            DEFAULT_IDLE_TIMEOUT_US as f64 / 1e6,
        );
        if !(idle_timeout_s > 0.0 && idle_timeout_s.is_finite()) {
            return Err(usage(format!("--idle-timeout-s must be positive, got {idle_timeout_s}")));
        }
        Ok(FlowSettings {
            idle_timeout_s,
            bidirectional: pick(bidirectional.map(|t| t == Toggle::On), file.bidirectional, true),
        })
    }

    fn json(&self) -> serde_json::Value {
        json!({ "idle_timeout_s": self.idle_timeout_s, "bidirectional": self.bidirectional })
    }
}

/// Reads a capture, assembles flows and applies labels when given.
fn load_flows(
    input: &Path,
    labels: Option<&Path>,
    settings: FlowSettings,
    manifest: &mut RunManifest,
) -> anyhow::Result<Vec<Flow>> {
    manifest.input(input)?;
    let capture = read_any(input)?;
    let skipped = capture.skipped.total();
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} packets ({:?})", input.display(), capture.skipped);
    }
    let assembler = FlowAssembler {
        bidirectional: settings.bidirectional,
        idle_timeout_us: (settings.idle_timeout_s * 1e6).round() as u64,
        ..FlowAssembler::default()
    };
    let mut flows = assembler.assemble(&capture.records)?;
    if let Some(path) = labels {
        manifest.input(path)?;
        let text = fs::read_to_string(path)
            .map_err(|e| flowcert::Error::io(path, e))?;
        apply_labels(&mut flows, &parse_labels(&text)?);
    }
    Ok(flows)
}

/// Splits labeled flows by class; unlabeled flows are dropped.
fn by_class(flows: Vec<Flow>) -> anyhow::Result<(Vec<Flow>, Vec<Flow>)> {
    let total = flows.len();
    let (mut known, mut unknown) = (Vec::new(), Vec::new());
    for f in flows {
        match f.label {
            Some(ClassLabel::Known) => known.push(f),
            Some(ClassLabel::Unknown) => unknown.push(f),
            None => {}
        }
    }
    let unlabeled = total - known.len() - unknown.len();
    if unlabeled > 0 {
        log::warn!("ignoring {unlabeled} unlabeled flows");
    }
    if known.is_empty() || unknown.is_empty() {
        bail!(
            "need labeled flows of both classes, found {} known and {} unknown",
            known.len(),
            unknown.len()
        );
    }
    Ok((known, unknown))
}

fn certainties(d: &DecisionArgs, file: &FileSettings) -> (f64, f64) {
    let resolve = |specific: Option<f64>, file_specific: Option<f64>| {
        specific
            .or(d.certainty)
            .or(file_specific)
            .or(file.certainty)
            .unwrap_or(DEFAULT_CERTAINTY)
    };
    (
        resolve(d.certainty_known, file.certainty_known),
        resolve(d.certainty_unknown, file.certainty_unknown),
    )
}

fn experiment_config(
    d: &DecisionArgs,
    m: &ModelArgs,
    features: Option<FeatureSet>,
    seed: Option<u64>,
    file: &FileSettings,
) -> ExperimentConfig {
    let defaults = ExperimentConfig::default();
    let seed = pick(seed, file.seed, defaults.seed);
    let (certainty_known, certainty_unknown) = certainties(d, file);
    let g = GbdtParams::default();
    ExperimentConfig {
        certainty_known,
        certainty_unknown,
        min_subflows: pick(d.min_subflows, file.min_subflows, defaults.min_subflows),
        alpha: pick(m.alpha, file.alpha, defaults.alpha),
        feature_set: pick(features, file.features, defaults.feature_set),
        calibration_fraction: pick(
            m.calibration_fraction,
            file.calibration_fraction,
            defaults.calibration_fraction,
        ),
        calibrate_on_train: m.calibrate_on_train || file.calibrate_on_train.unwrap_or(false),
        max_train_subflows_per_class: m.max_train_subflows.or(file.max_train_subflows),
        gbdt: GbdtParams {
            trees: pick(m.trees, file.trees, g.trees),
            max_depth: pick(m.max_depth, file.max_depth, g.max_depth),
            learning_rate: pick(m.learning_rate, file.learning_rate, g.learning_rate),
            min_leaf: pick(m.min_leaf, file.min_leaf, g.min_leaf),
            subsample: pick(m.subsample, file.subsample, g.subsample),
            seed,
        },
        seed,
        ..defaults
    }
}

fn preset_profiles(preset: Preset, flows_per_class: usize) -> anyhow::Result<Vec<flowcert::synth::LabeledProfile>> {
    if flows_per_class == 0 {
        return Err(usage("--flows-per-class must be at least 1"));
    }
    Ok(match preset {
        Preset::ScidmzLike => scidmz_like(flows_per_class),
        Preset::GeneralLike => general_like(flows_per_class),
    })
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let (file, mut manifest) = prepare(&a.common, "synth")?;
    let preset = pick(a.preset, file.preset, Preset::ScidmzLike);
    let flows_per_class = pick(a.flows_per_class, file.flows_per_class, DEFAULT_FLOWS_PER_CLASS);
    let seed = pick(a.common.seed, file.seed, 0);
    let trace = generate(&preset_profiles(preset, flows_per_class)?, seed)?;

    let trace_path = a.common.out.join("trace.pktrec");
    write_records(&trace.records(), &trace_path)?;
    let labels_path = a.common.out.join("labels.txt");
    trace.write_labels(create(&labels_path)?)?;

    manifest.seed = Some(seed);
    manifest.config = json!({ "preset": preset, "flows_per_class": flows_per_class });
    manifest.output(&trace_path)?;
    manifest.output(&labels_path)?;
    manifest.finish(&a.common.out)?;
    eprintln!(
        "wrote {} flows, {} packets to {}",
        trace.flows.len(),
        trace.packet_count(),
        trace_path.display()
    );
    Ok(())
}

fn subflow_size(f: &FeatureArgs, file: &FileSettings) -> anyhow::Result<usize> {
    let n = pick(f.n, file.n, DEFAULT_N);
    if n < 2 {
        return Err(usage(format!("--n must be at least 2, got {n}")));
    }
    Ok(n)
}

fn feature_vectors(flows: &[Flow], n: usize, schema: FeatureSet) -> Vec<flowcert::FeatureVector> {
    let mut extractor = FeatureExtractor::new(schema);
    let mut out = Vec::new();
    for flow in flows {
        for sf in flow.subflows(n) {
            out.push(extractor.extract(&sf).with_label(flow.label));
        }
    }
    if extractor.degenerate_subflows > 0 {
        log::warn!("{} zero-span subflows", extractor.degenerate_subflows);
    }
    out
}

fn extract(a: ExtractArgs) -> anyhow::Result<()> {
    let (file, mut manifest) = prepare(&a.common, "extract")?;
    let flow_settings = FlowSettings::resolve(a.flows.idle_timeout_s, a.flows.bidirectional, &file)?;
    let n = subflow_size(&a.features, &file)?;
    let schema = pick(a.features.features, file.features, FeatureSet::Core8);
    let flows = load_flows(&a.flows.input, a.flows.labels.as_deref(), flow_settings, &mut manifest)?;
    let vectors = feature_vectors(&flows, n, schema);

    let path = a.common.out.join("features.csv");
    write_feature_dump(&vectors, create(&path)?)?;
    manifest.config = json!({ "n": n, "features": schema, "flows": flow_settings.json() });
    manifest.output(&path)?;
    manifest.finish(&a.common.out)?;
    eprintln!("wrote {} feature vectors to {}", vectors.len(), path.display());
    Ok(())
}

fn require_labels(flows: &FlowArgs, command: &str) -> anyhow::Result<()> {
    if flows.labels.is_none() {
        return Err(usage(format!("{command} needs --labels")));
    }
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    require_labels(&a.flows, "train")?;
    let (file, mut manifest) = prepare(&a.common, "train")?;
    let flow_settings = FlowSettings::resolve(a.flows.idle_timeout_s, a.flows.bidirectional, &file)?;
    let n = subflow_size(&a.features, &file)?;
    let config = experiment_config(
        &DecisionArgs::none(),
        &a.model,
        a.features.features,
        a.common.seed,
        &file,
    );
    config.validate()?;
    let flows = load_flows(&a.flows.input, a.flows.labels.as_deref(), flow_settings, &mut manifest)?;
    let (known, unknown) = by_class(flows)?;
    let bundle = train_bundle(&config, &known, &unknown, n)?;

    let path = a.common.out.join("model.json");
    save_bundle(&bundle, &path)?;
    manifest.seed = Some(config.seed);
    manifest.config = json!({ "n": n, "experiment": config, "flows": flow_settings.json() });
    manifest.output(&path)?;
    manifest.finish(&a.common.out)?;
    let t = bundle.likelihood_table;
    eprintln!(
        "trained on {} known / {} unknown flows; p_kk {:.4} p_ku {:.4} p_uk {:.4} p_uu {:.4}",
        known.len(),
        unknown.len(),
        t.p_kk,
        t.p_ku,
        t.p_uk,
        t.p_uu
    );
    Ok(())
}

impl DecisionArgs {
    fn none() -> Self {
        DecisionArgs {
            certainty: None,
            certainty_known: None,
            certainty_unknown: None,
            min_subflows: None,
        }
    }
}

fn classify_cmd(a: ClassifyArgs) -> anyhow::Result<()> {
    let (file, mut manifest) = prepare(&a.common, "classify")?;
    let flow_settings = FlowSettings::resolve(a.flows.idle_timeout_s, a.flows.bidirectional, &file)?;
    manifest.input(&a.model)?;
    let bundle = load_bundle(&a.model)?;
    if let Some(n) = a.n.or(file.n) {
        if n != bundle.subflow_size {
            bail!(
                "bundle was trained on {}-packet subflows, --n asks for {n}",
                bundle.subflow_size
            );
        }
    }
    if let Some(schema) = a.features.or(file.features) {
        if schema != bundle.model.schema {
            bail!(flowcert::Error::SchemaMismatch {
                expected: bundle.model.schema,
                found: schema,
            });
        }
    }
    let (ck, cu) = certainties(&a.decision, &file);
    let mode = pick(a.mode, file.mode, DecisionMode::Strict);
    let min_subflows = pick(
        a.decision.min_subflows,
        file.min_subflows,
        flowcert::classify::DEFAULT_MIN_SUBFLOWS,
    );
    let policy = DecisionPolicy::from_certainty(ck, cu, min_subflows, mode)?;
    let flows = load_flows(&a.flows.input, a.flows.labels.as_deref(), flow_settings, &mut manifest)?;

    let path = a.common.out.join("decisions.txt");
    let mut out = create(&path)?;
    let stdout = io::stdout();
    let mut stdout = stdout.lock();
    let (mut classified, mut too_short) = (0usize, 0usize);
    let mut echo = true;
    for flow in &flows {
        let seq = flow_likelihoods(&bundle.model, &bundle.likelihood_table, flow, bundle.subflow_size);
        if seq.is_empty() {
            too_short += 1;
            continue;
        }
        let decision = classify(&seq, &policy)?;
        let line = format!("{} {}", flow.key, decision.fields());
        writeln!(out, "{line}")?;
        if echo {
            match writeln!(stdout, "{line}") {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => echo = false,
                other => other?,
            }
        }
        classified += 1;
    }
    out.flush()?;
    if too_short > 0 {
        log::warn!(
            "{too_short} flows shorter than one {}-packet subflow were not classified",
            bundle.subflow_size
        );
    }
    manifest.config = json!({
        "subflow_size": bundle.subflow_size,
        "features": bundle.model.schema,
        "certainty_known": ck,
        "certainty_unknown": cu,
        "min_subflows": min_subflows,
        "mode": mode,
        "flows": flow_settings.json(),
    });
    manifest.output(&path)?;
    manifest.finish(&a.common.out)?;
    eprintln!("classified {classified} flows");
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let (file, mut manifest) = prepare(&a.common, "evaluate")?;
    let mut config = experiment_config(&a.decision, &a.model, a.features, a.common.seed, &file);
    if let Some(sizes) = a.sizes.clone().or(file.sizes.clone()) {
        config.subflow_sizes = sizes;
    }
    if let Some(fractions) = a.fractions.clone().or(file.fractions.clone()) {
        config.fractions = fractions;
    }
    if let Some(modes) = a.modes.clone().or(file.modes.clone()) {
        config.modes = modes;
    }
    config.split_fraction = pick(a.split_fraction, file.split_fraction, config.split_fraction);
    config.validate()?;

    let source;
    let (known, unknown) = match (&a.input, a.preset.or(file.preset)) {
        (Some(input), _) => {
            let flow_settings = FlowSettings::resolve(a.idle_timeout_s, a.bidirectional, &file)?;
            source = json!({ "input": input, "flows": flow_settings.json() });
            by_class(load_flows(input, a.labels.as_deref(), flow_settings, &mut manifest)?)?
        }
        (None, Some(preset)) => {
            let flows_per_class = pick(a.flows_per_class, file.flows_per_class, DEFAULT_FLOWS_PER_CLASS);
            source = json!({ "preset": preset, "flows_per_class": flows_per_class });
            let trace = generate(&preset_profiles(preset, flows_per_class)?, config.seed)?;
            (trace.flows_of(ClassLabel::Known), trace.flows_of(ClassLabel::Unknown))
        }
        (None, None) => return Err(usage("evaluate needs --preset or --input with --labels")),
    };

    let outcome = run_experiment(&config, &known, &unknown)?;
    let out = &a.common.out;
    let mut written: Vec<PathBuf> = Vec::new();

    let text = outcome.report.to_text();
    let txt = out.join("report.txt");
    fs::write(&txt, &text).with_context(|| format!("writing {}", txt.display()))?;
    written.push(txt);
    let csv = out.join("report.csv");
    outcome.report.write_csv(create(&csv)?)?;
    written.push(csv);
    let log_path = out.join("decisions.txt");
    write_decision_log(&outcome.decisions, create(&log_path)?)?;
    written.push(log_path);
    for bundle in &outcome.bundles {
        let path = out.join(format!("model_n{}.json", bundle.subflow_size));
        save_bundle(bundle, &path)?;
        written.push(path);
    }
    if a.baselines {
        let scores = compare_classifiers(&config, &known, &unknown, 3, 5_000, 5_000)?;
        let path = out.join("baselines.csv");
        let mut w = create(&path)?;
        writeln!(w, "subflow_size,classifier,accuracy,accuracy_known,accuracy_unknown")?;
        for s in &scores {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.subflow_size, s.classifier, s.accuracy, s.accuracy_known, s.accuracy_unknown
            )?;
        }
        w.flush()?;
        written.push(path);
    }

    for path in &written {
        manifest.output(path)?;
    }
    manifest.seed = Some(config.seed);
    manifest.config = json!({ "experiment": config, "source": source });
    manifest.finish(out)?;
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn cdf(a: CdfArgs) -> anyhow::Result<()> {
    require_labels(&a.flows, "cdf")?;
    let (file, mut manifest) = prepare(&a.common, "cdf")?;
    let flow_settings = FlowSettings::resolve(a.flows.idle_timeout_s, a.flows.bidirectional, &file)?;
    let n = subflow_size(&a.features, &file)?;
    let schema = pick(a.features.features, file.features, FeatureSet::Core8);
    let feature = pick(a.feature, file.feature.clone(), "size_mean".to_string());
    let index = schema.feature_index(&feature)?;
    let flows = load_flows(&a.flows.input, a.flows.labels.as_deref(), flow_settings, &mut manifest)?;
    let cdfs = emit_cdf(&feature_vectors(&flows, n, schema), index)?;

    let path = a.common.out.join("cdf.txt");
    write_cdf(&cdfs, create(&path)?)?;
    manifest.config = json!({
        "n": n,
        "features": schema,
        "feature": schema.names()[index],
        "flows": flow_settings.json(),
    });
    manifest.output(&path)?;
    manifest.finish(&a.common.out)?;
    eprintln!("wrote {} to {}", schema.names()[index], path.display());
    Ok(())
}
