//! Experiment harness: flow-level train/test split, GBDT training,
//! out-of-fold likelihood calibration, and per-class flow accuracy over a
//! grid of subflow sizes, subflow-prefix fractions and decision modes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{classify, DecisionMode, DecisionPolicy, FlowDecision, Verdict, DEFAULT_MIN_SUBFLOWS};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureSet};
use crate::flow::{ClassLabel, Flow, FlowKey};
use crate::likelihood::{ConfusionCounts, LikelihoodTable};
use crate::models::{
    train_gbdt, GaussianNb, GbdtModel, GbdtParams, Knn, LabeledDataset, ModelBundle,
    SubflowClassifier,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub subflow_sizes: Vec<usize>,
    pub fractions: Vec<f64>,
    pub certainty_known: f64,
    pub certainty_unknown: f64,
    pub modes: Vec<DecisionMode>,
    /// Share of each class's flows used for training.
    pub split_fraction: f64,
    /// Share of training flows held back to fit the likelihood table.
    pub calibration_fraction: f64,
    /// Fit the likelihood table on the GBDT's own training subflows instead.
    pub calibrate_on_train: bool,
    pub min_subflows: usize,
    pub alpha: f64,
    pub feature_set: FeatureSet,
    pub gbdt: GbdtParams,
    /// Cap on training subflows per class per subflow size (seeded sample).
    pub max_train_subflows_per_class: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            subflow_sizes: vec![25, 100, 1000],
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            certainty_known: 0.95,
            certainty_unknown: 0.95,
            modes: DecisionMode::ALL.to_vec(),
            split_fraction: 0.8,
            calibration_fraction: 0.25,
            calibrate_on_train: false,
            min_subflows: DEFAULT_MIN_SUBFLOWS,
            alpha: 1.0,
            feature_set: FeatureSet::Core8,
            gbdt: GbdtParams::default(),
            max_train_subflows_per_class: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subflow_sizes.is_empty() || self.subflow_sizes.iter().any(|&n| n < 2) {
            return Err(Error::invalid("subflow sizes must be non-empty and >= 2"));
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
            return Err(Error::invalid("fractions must lie in (0, 1]"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split fraction must lie in (0, 1)"));
        }
        if !self.calibrate_on_train
            && !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0)
        {
            return Err(Error::invalid("calibration fraction must lie in (0, 1)"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("at least one decision mode is required"));
        }
        self.policy(DecisionMode::Strict)?;
        Ok(())
    }

    pub fn policy(&self, mode: DecisionMode) -> Result<DecisionPolicy> {
        DecisionPolicy::from_certainty(
            self.certainty_known,
            self.certainty_unknown,
            self.min_subflows,
            mode,
        )
    }
}

/// Returns `(train, test)` indices, each ascending. `round(fraction * n)`
/// indices go to training.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64 * fraction).round() as usize).min(n);
    let mut train = order[..cut].to_vec();
    let mut test = order[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Flow-granularity random split.
pub fn split_flows<T: Clone>(flows: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let (train, test) = split_indices(flows.len(), fraction, seed);
    (
        train.iter().map(|&i| flows[i].clone()).collect(),
        test.iter().map(|&i| flows[i].clone()).collect(),
    )
}

/// The first `ceil(q * len)` items.
pub fn subflow_prefix<T>(items: &[T], q: f64) -> &[T] {
    &items[..prefix_len(items.len(), q)]
}

pub fn prefix_len(m: usize, q: f64) -> usize {
    // shave rounding noise so that e.g. 0.1 * 30 stays 3
    let raw = q * m as f64 - 1e-9;
    (raw.ceil().max(0.0) as usize).min(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mode: DecisionMode,
    pub subflow_size: usize,
    pub fraction: f64,
    pub class: ClassLabel,
    /// `None` when no flow of this class was eligible.
    pub accuracy: Option<f64>,
    pub uncertain_rate: Option<f64>,
    pub evaluated: usize,
    pub excluded: usize,
    /// Incremental modes only: mean of used/available over decided flows.
    pub mean_fraction_to_decision: Option<f64>,
}

/// Held-out subflow-level quality of the GBDT for one subflow size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubflowMetrics {
    pub subflow_size: usize,
    pub train_subflows: usize,
    pub calibration_subflows: usize,
    pub test_subflows: usize,
    pub test_accuracy: f64,
    pub test_accuracy_known: f64,
    pub test_accuracy_unknown: f64,
    pub likelihood_table: LikelihoodTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub certainty_known: f64,
    pub certainty_unknown: f64,
    pub min_subflows: usize,
    pub cells: Vec<ReportCell>,
    pub subflow_metrics: Vec<SubflowMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub subflow_size: usize,
    pub fraction: f64,
    pub flow_key: FlowKey,
    pub truth: ClassLabel,
    pub decision: FlowDecision,
}

impl DecisionLogEntry {
    pub fn is_correct(&self) -> bool {
        self.decision.verdict.class() == Some(self.truth)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    /// One bundle per subflow size, in config order.
    pub bundles: Vec<ModelBundle>,
    pub decisions: Vec<DecisionLogEntry>,
}

/// Truth, key and per-subflow likelihood pairs of one test flow.
type FlowSequence = (ClassLabel, FlowKey, Vec<(f64, f64)>);

/// Per-class flow split shared by every subflow size.
struct FlowSplit<'a> {
    model_train: Vec<&'a Flow>,
    calibration: Vec<&'a Flow>,
    test: Vec<&'a Flow>,
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn split_for<'a>(
    known: &'a [Flow],
    unknown: &'a [Flow],
    config: &ExperimentConfig,
    holdout: bool,
) -> FlowSplit<'a> {
    let mut split = FlowSplit {
        model_train: Vec::new(),
        calibration: Vec::new(),
        test: Vec::new(),
    };
    for (salt, flows) in [(1u64, known), (2, unknown)] {
        let (train, test) = if holdout {
            split_indices(flows.len(), config.split_fraction, derive_seed(config.seed, salt))
        } else {
            ((0..flows.len()).collect(), Vec::new())
        };
        split.test.extend(test.iter().map(|&i| &flows[i]));
        if config.calibrate_on_train {
            split.model_train.extend(train.iter().map(|&i| &flows[i]));
        } else {
            let (fit, cal) = split_indices(
                train.len(),
                1.0 - config.calibration_fraction,
                derive_seed(config.seed, salt + 10),
            );
            split.model_train.extend(fit.iter().map(|&i| &flows[train[i]]));
            split.calibration.extend(cal.iter().map(|&i| &flows[train[i]]));
        }
    }
    split
}

fn dataset_for(
    flows: &[&Flow],
    n: usize,
    schema: FeatureSet,
    truth: impl Fn(&Flow) -> ClassLabel,
) -> Result<LabeledDataset> {
    let mut data = LabeledDataset::new(schema);
    let mut extractor = FeatureExtractor::new(schema);
    for flow in flows {
        let label = truth(flow);
        for sf in flow.subflows(n) {
            data.push(&extractor.extract(&sf).values, label)?;
        }
    }
    if extractor.degenerate_subflows > 0 {
        log::info!(
            "{} zero-span subflows at n = {n}",
            extractor.degenerate_subflows
        );
    }
    Ok(data)
}

fn cap_per_class(data: LabeledDataset, cap: Option<usize>, seed: u64) -> LabeledDataset {
    let Some(cap) = cap else { return data };
    if ClassLabel::ALL.iter().all(|&c| data.count(c) <= cap) {
        return data;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; data.len()];
    for class in ClassLabel::ALL {
        let members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        if members.len() <= cap {
            members.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in index::sample(&mut rng, members.len(), cap) {
                keep[members[j]] = true;
            }
        }
    }
    let mut out = LabeledDataset::new(data.schema);
    for (i, (row, label)) in data.iter().enumerate() {
        if keep[i] {
            out.push(row, label).expect("rows were validated on insertion");
        }
    }
    out
}

/// GBDT, likelihood table and held-out metrics for one subflow size.
struct SizeModel {
    bundle: ModelBundle,
    metrics: SubflowMetrics,
}

fn fit_size(
    split: &FlowSplit<'_>,
    n: usize,
    config: &ExperimentConfig,
    truth: &dyn Fn(&Flow) -> ClassLabel,
) -> Result<SizeModel> {
    let schema = config.feature_set;
    let train = dataset_for(&split.model_train, n, schema, truth)?;
    let train = cap_per_class(
        train,
        config.max_train_subflows_per_class,
        derive_seed(config.seed, 100 + n as u64),
    );
    let model = train_gbdt(&train, &config.gbdt).map_err(|e| {
        Error::Training(format!("subflow size {n}: {e}"))
    })?;

    let calibration = if config.calibrate_on_train {
        train.clone()
    } else {
        dataset_for(&split.calibration, n, schema, truth)?
    };
    let counts = ConfusionCounts::from_pairs(
        calibration
            .iter()
            .map(|(row, label)| (model.predict_row(row).label, label)),
    );
    let table = LikelihoodTable::fit(&counts, config.alpha)?;

    let test = dataset_for(&split.test, n, schema, truth)?;
    let metrics = SubflowMetrics {
        subflow_size: n,
        train_subflows: train.len(),
        calibration_subflows: calibration.len(),
        test_subflows: test.len(),
        test_accuracy: class_accuracy(&model, &test, None),
        test_accuracy_known: class_accuracy(&model, &test, Some(ClassLabel::Known)),
        test_accuracy_unknown: class_accuracy(&model, &test, Some(ClassLabel::Unknown)),
        likelihood_table: table,
    };
    Ok(SizeModel {
        bundle: ModelBundle {
            model,
            subflow_size: n,
            likelihood_table: table,
            calibration_counts: counts,
        },
        metrics,
    })
}

fn class_accuracy<C: SubflowClassifier + ?Sized>(
    model: &C,
    data: &LabeledDataset,
    class: Option<ClassLabel>,
) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (row, label) in data.iter() {
        if class.is_some_and(|c| c != label) {
            continue;
        }
        total += 1;
        hit += usize::from(model.predict_row(row).label == label);
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// `(p_K, p_U)` for every subflow of `flow`, in arrival order.
pub fn flow_likelihoods(
    model: &GbdtModel,
    table: &LikelihoodTable,
    flow: &Flow,
    n: usize,
) -> Vec<(f64, f64)> {
    let mut extractor = FeatureExtractor::new(model.schema);
    flow.subflows(n)
        .map(|sf| {
            let v = extractor.extract(&sf);
            table.likelihoods(model.predict_row(&v.values).label)
        })
        .collect()
}

#[derive(Default, Clone, Copy)]
struct Tally {
    evaluated: usize,
    excluded: usize,
    correct: usize,
    uncertain: usize,
    decided: usize,
    fraction_sum: f64,
}

/// Runs the full grid. Flow labels are taken from which argument a flow
/// appears in, not from `Flow::label`.
pub fn run_experiment(
    config: &ExperimentConfig,
    known: &[Flow],
    unknown: &[Flow],
) -> Result<ExperimentOutcome> {
    config.validate()?;
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::invalid("both classes need at least one flow"));
    }
    let split = split_for(known, unknown, config, true);
    // class comes from which input slice the flow lives in
    let known_range = known.as_ptr_range();
    let truth = move |flow: &Flow| {
        if known_range.contains(&(flow as *const Flow)) {
            ClassLabel::Known
        } else {
            ClassLabel::Unknown
        }
    };

    let mut cells = Vec::new();
    let mut metrics = Vec::new();
    let mut bundles = Vec::new();
    let mut decisions = Vec::new();

    for &n in &config.subflow_sizes {
        let fitted = fit_size(&split, n, config, &truth)?;
        let bundle = &fitted.bundle;
        let sequences: Vec<FlowSequence> = split
            .test
            .iter()
            .map(|flow| {
                (
                    truth(flow),
                    flow.key,
                    flow_likelihoods(&bundle.model, &bundle.likelihood_table, flow, n),
                )
            })
            .collect();

        for &mode in &config.modes {
            let policy = config.policy(mode)?;
            for &q in &config.fractions {
                let mut tallies: BTreeMap<ClassLabel, Tally> =
                    ClassLabel::ALL.iter().map(|&c| (c, Tally::default())).collect();
                for (class, key, seq) in &sequences {
                    let tally = tallies.get_mut(class).expect("both classes tallied");
                    let prefix = subflow_prefix(seq, q);
                    if prefix.len() < config.min_subflows || prefix.is_empty() {
                        tally.excluded += 1;
                        continue;
                    }
                    let decision = classify(prefix, &policy)?;
                    tally.evaluated += 1;
                    match decision.verdict.class() {
                        Some(c) => {
                            tally.decided += 1;
                            tally.correct += usize::from(c == *class);
                            tally.fraction_sum +=
                                decision.subflows_used as f64 / decision.subflows_available as f64;
                        }
                        None => tally.uncertain += 1,
                    }
                    decisions.push(DecisionLogEntry {
                        subflow_size: n,
                        fraction: q,
                        flow_key: *key,
                        truth: *class,
                        decision,
                    });
                }
                for (class, t) in tallies {
                    let rate = |x: usize| (t.evaluated > 0).then(|| x as f64 / t.evaluated as f64);
                    cells.push(ReportCell {
                        mode,
                        subflow_size: n,
                        fraction: q,
                        class,
                        accuracy: rate(t.correct),
                        uncertain_rate: rate(t.uncertain),
                        evaluated: t.evaluated,
                        excluded: t.excluded,
                        mean_fraction_to_decision: (mode.is_incremental() && t.decided > 0)
                            .then(|| t.fraction_sum / t.decided as f64),
                    });
                }
            }
        }
        metrics.push(fitted.metrics);
        bundles.push(fitted.bundle);
    }

    Ok(ExperimentOutcome {
        report: ExperimentReport {
            certainty_known: config.certainty_known,
            certainty_unknown: config.certainty_unknown,
            min_subflows: config.min_subflows,
            cells,
            subflow_metrics: metrics,
        },
        bundles,
        decisions,
    })
}

/// Trains a deployable bundle for subflow size `n` on every flow given:
/// GBDT on part of each class's flows, likelihood table on the rest (or on
/// the GBDT's own subflows with `calibrate_on_train`).
pub fn train_bundle(
    config: &ExperimentConfig,
    known: &[Flow],
    unknown: &[Flow],
    n: usize,
) -> Result<ModelBundle> {
    config.validate()?;
    if n < 2 {
        return Err(Error::invalid("subflow size must be >= 2"));
    }
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::invalid("both classes need at least one flow"));
    }
    let split = split_for(known, unknown, config, false);
    let known_range = known.as_ptr_range();
    let truth = move |flow: &Flow| {
        if known_range.contains(&(flow as *const Flow)) {
            ClassLabel::Known
        } else {
            ClassLabel::Unknown
        }
    };
    Ok(fit_size(&split, n, config, &truth)?.bundle)
}

/// Held-out subflow accuracy of one classifier at one subflow size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub subflow_size: usize,
    pub classifier: String,
    pub accuracy: f64,
    pub accuracy_known: f64,
    pub accuracy_unknown: f64,
}

/// Trains GBDT, Gaussian naive Bayes and KNN (`k = knn_k`) on the same
/// training subflows and scores them on the same held-out test subflows.
/// KNN trains on at most `knn_max_train` subflows per class and is scored on
/// at most `knn_max_test` test subflows per class.
pub fn compare_classifiers(
    config: &ExperimentConfig,
    known: &[Flow],
    unknown: &[Flow],
    knn_k: usize,
    knn_max_train: usize,
    knn_max_test: usize,
) -> Result<Vec<ClassifierScore>> {
    config.validate()?;
    if known.is_empty() || unknown.is_empty() {
        return Err(Error::invalid("both classes need at least one flow"));
    }
    let split = split_for(known, unknown, config, true);
    let known_range = known.as_ptr_range();
    let truth = move |flow: &Flow| {
        if known_range.contains(&(flow as *const Flow)) {
            ClassLabel::Known
        } else {
            ClassLabel::Unknown
        }
    };
    let mut train_flows = split.model_train.clone();
    train_flows.extend(split.calibration.iter().copied());

    let mut scores = Vec::new();
    for &n in &config.subflow_sizes {
        let seed = derive_seed(config.seed, 200 + n as u64);
        let train = cap_per_class(
            dataset_for(&train_flows, n, config.feature_set, &truth)?,
            config.max_train_subflows_per_class,
            seed,
        );
        let test = dataset_for(&split.test, n, config.feature_set, &truth)?;
        let gbdt = train_gbdt(&train, &config.gbdt)?;
        let nb = GaussianNb::fit(&train)?;
        let knn = Knn::fit(&cap_per_class(train.clone(), Some(knn_max_train), seed ^ 1), knn_k)?;
        let knn_test = cap_per_class(test.clone(), Some(knn_max_test), seed ^ 2);

        let score = |name: &str, model: &dyn SubflowClassifier, data: &LabeledDataset| ClassifierScore {
            subflow_size: n,
            classifier: name.to_string(),
            accuracy: class_accuracy(model, data, None),
            accuracy_known: class_accuracy(model, data, Some(ClassLabel::Known)),
            accuracy_unknown: class_accuracy(model, data, Some(ClassLabel::Unknown)),
        };
        scores.push(score("gbdt", &gbdt, &test));
        scores.push(score("naive_bayes", &nb, &test));
        scores.push(score("knn", &knn, &knn_test));
    }
    Ok(scores)
}

impl ExperimentReport {
    pub fn cell(
        &self,
        mode: DecisionMode,
        subflow_size: usize,
        fraction: f64,
        class: ClassLabel,
    ) -> Option<&ReportCell> {
        self.cells.iter().find(|c| {
            c.mode == mode && c.subflow_size == subflow_size && c.fraction == fraction && c.class == class
        })
    }

    pub const CSV_HEADER: &'static str =
        "mode,subflow_size,fraction,class,accuracy,uncertain_rate,evaluated,excluded,mean_fraction_to_decision";

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.mode,
                c.subflow_size,
                c.fraction,
                c.class,
                opt(c.accuracy),
                opt(c.uncertain_rate),
                c.evaluated,
                c.excluded,
                opt(c.mean_fraction_to_decision)
            )?;
        }
        out.flush()
    }

    /// Aligned tables: one block per mode, rows = subflow size, columns =
    /// subflow percentage.
    pub fn to_text(&self) -> String {
        let mut modes: Vec<DecisionMode> = Vec::new();
        let mut sizes: Vec<usize> = Vec::new();
        let mut fractions: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !modes.contains(&c.mode) {
                modes.push(c.mode);
            }
            if !sizes.contains(&c.subflow_size) {
                sizes.push(c.subflow_size);
            }
            if !fractions.contains(&c.fraction) {
                fractions.push(c.fraction);
            }
        }
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.1}", v * 100.0));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "certainty known {} / unknown {}, min subflows {}",
            self.certainty_known, self.certainty_unknown, self.min_subflows
        );
        let header = {
            let mut h = format!("{:<24}", "Percentages of Subflows");
            for q in &fractions {
                h.push_str(&format!("{:>9}", format!("{}%", q * 100.0)));
            }
            h
        };
        let mut block = |title: &str, mode: DecisionMode, metric: &dyn Fn(&ReportCell) -> Option<f64>| {
            let _ = writeln!(s, "\n{title} ({mode})");
            let _ = writeln!(s, "{header}");
            for class in ClassLabel::ALL {
                let name = if class == ClassLabel::Known { "Known" } else { "Unknown" };
                let _ = writeln!(s, "  {name}:");
                for &n in &sizes {
                    let mut row = format!("{:<24}", format!("  {n}-Packet Subflows"));
                    for &q in &fractions {
                        let v = self.cell(mode, n, q, class).and_then(metric);
                        row.push_str(&format!("{:>9}", pct(v)));
                    }
                    let _ = writeln!(s, "{row}");
                }
            }
        };
        for &mode in &modes {
            block("Accuracy %", mode, &|c| c.accuracy);
            if !mode.resolves_ties() {
                block("Uncertain %", mode, &|c| c.uncertain_rate);
            }
            if mode.is_incremental() {
                block("Mean % of subflows to decision", mode, &|c| c.mean_fraction_to_decision);
            }
        }
        let _ = writeln!(s, "\nSubflow classifier (held-out)");
        for m in &self.subflow_metrics {
            let _ = writeln!(
                s,
                "  n = {:<5} accuracy {:.4} (known {:.4}, unknown {:.4}); p_kk {:.4} p_uu {:.4}",
                m.subflow_size,
                m.test_accuracy,
                m.test_accuracy_known,
                m.test_accuracy_unknown,
                m.likelihood_table.p_kk,
                m.likelihood_table.p_uu
            );
        }
        s
    }
}

/// `subflow_size fraction truth flow_key verdict log_ratio used available mode`
pub fn write_decision_log<W: Write>(entries: &[DecisionLogEntry], mut out: W) -> io::Result<()> {
    for e in entries {
        writeln!(
            out,
            "{} {} {} {} {}",
            e.subflow_size,
            e.fraction,
            e.truth,
            e.flow_key,
            e.decision.fields()
        )?;
    }
    out.flush()
}

/// Recomputes a cell's accuracy from the decision log.
pub fn recount_accuracy(
    entries: &[DecisionLogEntry],
    mode: DecisionMode,
    subflow_size: usize,
    fraction: f64,
    class: ClassLabel,
) -> Option<f64> {
    let relevant: Vec<&DecisionLogEntry> = entries
        .iter()
        .filter(|e| {
            e.decision.mode == mode
                && e.subflow_size == subflow_size
                && e.fraction == fraction
                && e.truth == class
        })
        .collect();
    if relevant.is_empty() {
        return None;
    }
    let correct = relevant
        .iter()
        .filter(|e| e.decision.verdict != Verdict::Uncertain && e.is_correct())
        .count();
    Some(correct as f64 / relevant.len() as f64)
}
