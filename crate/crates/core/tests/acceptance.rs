//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::net::Ipv4Addr;
use std::path::Path;
use std::time::{Duration, Instant};

use flowcert::classify::{classify_majority, classify_strict, DecisionMode, DecisionPolicy, Verdict};
use flowcert::eval::{compare_classifiers, run_experiment, ExperimentConfig, ExperimentOutcome};
use flowcert::features::{extract_core8, extract_ext14};
use flowcert::flow::{ClassLabel, Flow, FlowKey, Subflow};
use flowcert::likelihood::{certainty_to_ratio, fit_likelihood_table, LikelihoodState};
use flowcert::packet_io::{parse_pcap, read_pcap, PacketRecord, SkipStats, PROTO_TCP, TCP_ACK};
use flowcert::synth::{general_like, generate, scidmz_like};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn c1_likelihood_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=20);
        let seq: Vec<(f64, f64)> = (0..m)
            .map(|_| (rng.random_range(1e-3..1.0), rng.random_range(1e-3..1.0)))
            .collect();
        let state = seq
            .iter()
            .try_fold(LikelihoodState::new(), |s, &(k, u)| s.accumulate(k, u))
            .map_err(|e| e.to_string())?;
        let (mut pk, mut pu) = (1.0f64, 1.0f64);
        for &(k, u) in &seq {
            pk *= k;
            pu *= u;
        }
        for (got, want) in [(state.log_lk.exp(), pk), (state.log_lu.exp(), pu)] {
            let rel = (got - want).abs() / want;
            worst = worst.max(rel);
            check(rel <= 1e-9, || format!("product mismatch {got} vs {want}"))?;
        }
        check(state.m == m, || "subflow count drifted".into())?;
    }
    let r = certainty_to_ratio(0.95).map_err(|e| e.to_string())?;
    check(r == 19.0, || format!("certainty_to_ratio(0.95) = {r}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("worst relative error {worst:.2e}; ratio(0.95) = {r}"))
}

fn c2_confusion_to_likelihood() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels = [ClassLabel::Known, ClassLabel::Unknown];
    for case in 0..500 {
        let n = rng.random_range(0..200);
        let alpha = if case % 2 == 0 { 1.0 } else { rng.random_range(0.1..3.0) };
        let perfect = case % 5 == 0;
        let pairs: Vec<(ClassLabel, ClassLabel)> = (0..n)
            .map(|_| {
                let t = labels[rng.random_range(0..2)];
                let p = if perfect { t } else { labels[rng.random_range(0..2)] };
                (p, t)
            })
            .collect();
        let table = fit_likelihood_table(pairs.iter().copied(), alpha).map_err(|e| e.to_string())?;
        // counting oracle: P(true = y | predicted = x)
        for (x, got_k, got_u) in [
            (ClassLabel::Known, table.p_kk, table.p_ku),
            (ClassLabel::Unknown, table.p_uk, table.p_uu),
        ] {
            let with_pred: Vec<_> = pairs.iter().filter(|(p, _)| *p == x).collect();
            let hits_k = with_pred.iter().filter(|(_, t)| *t == ClassLabel::Known).count() as f64;
            let total = with_pred.len() as f64;
            let want_k = (hits_k + alpha) / (total + 2.0 * alpha);
            let want_u = (total - hits_k + alpha) / (total + 2.0 * alpha);
            check((got_k - want_k).abs() <= 1e-12 && (got_u - want_u).abs() <= 1e-12, || {
                format!("case {case}: ({got_k}, {got_u}) vs ({want_k}, {want_u})")
            })?;
            check((got_k + got_u - 1.0).abs() <= 1e-12, || format!("case {case}: row sums to {}", got_k + got_u))?;
            if alpha == 1.0 {
                for p in [got_k, got_u] {
                    check(p > 0.0 && p < 1.0, || format!("case {case}: degenerate likelihood {p}"))?;
                }
            }
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok("500 multisets match counting oracle".into())
}

fn grid_config(modes: Vec<DecisionMode>) -> ExperimentConfig {
    ExperimentConfig {
        modes,
        seed: 7,
        ..Default::default()
    }
}

struct Scidmz {
    outcome: ExperimentOutcome,
    known: Vec<Flow>,
    unknown: Vec<Flow>,
    elapsed: Duration,
}

fn scidmz_run() -> Result<Scidmz, String> {
    let start = Instant::now();
    let trace = generate(&scidmz_like(200), 7).map_err(|e| e.to_string())?;
    let known = trace.flows_of(ClassLabel::Known);
    let unknown = trace.flows_of(ClassLabel::Unknown);
    let packets = trace.packet_count();
    drop(trace);
    let outcome = run_experiment(&grid_config(DecisionMode::ALL.to_vec()), &known, &unknown)
        .map_err(|e| e.to_string())?;
    eprintln!("scidmz-like: {packets} packets, experiment {:.1}s", start.elapsed().as_secs_f64());
    Ok(Scidmz { outcome, known, unknown, elapsed: start.elapsed() })
}

fn c3_table4_regime(run: &Scidmz) -> Outcome {
    let report = &run.outcome.report;
    let mut checked = 0;
    for cell in &report.cells {
        if !matches!(cell.mode, DecisionMode::Strict | DecisionMode::Majority) {
            continue;
        }
        checked += 1;
        check(cell.accuracy == Some(1.0) && cell.uncertain_rate == Some(0.0), || {
            format!(
                "{} n={} q={} {}: accuracy {:?}, uncertain {:?}, evaluated {}",
                cell.mode, cell.subflow_size, cell.fraction, cell.class, cell.accuracy, cell.uncertain_rate, cell.evaluated
            )
        })?;
    }
    check(checked == 3 * 4 * 2 * 2, || format!("expected 48 cells, saw {checked}"))?;
    within(run.elapsed, 120.0)?;
    let min_eval = report.cells.iter().map(|c| c.evaluated).min().unwrap_or(0);
    Ok(format!(
        "{checked} cells at 100%, no uncertain flows (min {min_eval} flows/cell, {:.1}s)",
        run.elapsed.as_secs_f64()
    ))
}

fn c4_general_regime(outcome: &ExperimentOutcome, elapsed: Duration) -> Outcome {
    let report = &outcome.report;
    let mut uncertain_cells = 0;
    let mut compared = 0;
    for strict in report.cells.iter().filter(|c| c.mode == DecisionMode::Strict) {
        let majority = report
            .cell(DecisionMode::Majority, strict.subflow_size, strict.fraction, strict.class)
            .ok_or("missing majority cell")?;
        if let (Some(s), Some(m)) = (strict.accuracy, majority.accuracy) {
            compared += 1;
            check(m >= s, || {
                format!("n={} q={} {}: majority {m} < strict {s}", strict.subflow_size, strict.fraction, strict.class)
            })?;
        }
        if strict.uncertain_rate.is_some_and(|u| u > 0.0) {
            uncertain_cells += 1;
        }
    }
    check(compared > 0, || "no comparable cells".into())?;
    check(uncertain_cells > 0, || "strict mode produced no uncertain flows".into())?;
    within(elapsed, 120.0)?;
    Ok(format!(
        "majority >= strict in {compared} cells; strict uncertain in {uncertain_cells} cells ({:.1}s)",
        elapsed.as_secs_f64()
    ))
}

fn c5_incremental_speed(run: &Scidmz) -> Outcome {
    let start = Instant::now();
    let mut decided = 0usize;
    let mut long_fractions = Vec::new();
    for e in &run.outcome.decisions {
        if !e.decision.mode.is_incremental() || e.decision.verdict == Verdict::Uncertain {
            continue;
        }
        decided += 1;
        check(e.decision.subflows_used == 15, || {
            format!("{} decided after {} subflows", e.flow_key, e.decision.subflows_used)
        })?;
        if e.decision.subflows_available >= 150 {
            long_fractions.push(e.decision.subflows_used as f64 / e.decision.subflows_available as f64);
        }
    }
    check(decided > 0, || "no incremental decisions".into())?;
    check(!long_fractions.is_empty(), || "no flows with >= 150 subflows".into())?;
    let mean = long_fractions.iter().sum::<f64>() / long_fractions.len() as f64;
    check(mean <= 0.10, || format!("mean fraction to decision {mean:.4}"))?;
    // the experiment is shared with the previous criterion
    within(run.elapsed + start.elapsed(), 60.0)?;
    Ok(format!(
        "{decided} decisions all at subflow 15; mean fraction {:.2}% over {} long flows",
        mean * 100.0,
        long_fractions.len()
    ))
}

fn c6_subflow_quality(run: &Scidmz) -> Outcome {
    let start = Instant::now();
    let config = grid_config(vec![DecisionMode::Strict]);
    let scores = compare_classifiers(&config, &run.known, &run.unknown, 3, 2000, 1000)
        .map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for &n in &config.subflow_sizes {
        let acc = |name: &str| {
            scores
                .iter()
                .find(|s| s.subflow_size == n && s.classifier == name)
                .map(|s| s.accuracy)
                .ok_or(format!("missing {name} score at n = {n}"))
        };
        let (gbdt, nb, knn) = (acc("gbdt")?, acc("naive_bayes")?, acc("knn")?);
        check(gbdt >= 0.98, || format!("GBDT accuracy {gbdt} at n = {n}"))?;
        check(nb <= gbdt, || format!("NB {nb} beats GBDT {gbdt} at n = {n}"))?;
        summary.push(format!("n={n}: gbdt {gbdt:.4} nb {nb:.4} knn {knn:.4}"));
    }
    within(start.elapsed(), 120.0)?;
    Ok(summary.join("; "))
}

fn random_packets(rng: &mut ChaCha8Rng, n: usize) -> Vec<PacketRecord> {
    let mut t = rng.random_range(0..1_000_000_000u64);
    (0..n)
        .map(|_| {
            t += rng.random_range(0..200_000u64);
            PacketRecord {
                timestamp_us: t,
                src_ip: Ipv4Addr::new(10, 0, 0, 1),
                dst_ip: Ipv4Addr::new(10, 0, 0, 2),
                src_port: 1,
                dst_port: 2,
                protocol: PROTO_TCP,
                size_bytes: rng.random_range(40..=1500),
                tcp_flags: if rng.random_bool(0.7) { TCP_ACK } else { 0 },
                recv_window_bytes: rng.random_range(0..=65535),
            }
        })
        .collect()
}

fn naive_stats(xs: &[f64]) -> [f64; 4] {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let max = xs.iter().cloned().fold(f64::MIN, f64::max);
    let min = xs.iter().cloned().fold(f64::MAX, f64::min);
    [max, min, mean, var.sqrt()]
}

fn naive_features(p: &[PacketRecord]) -> (Vec<f64>, Vec<f64>) {
    let iats: Vec<f64> = p
        .windows(2)
        .map(|w| (w[1].timestamp_us - w[0].timestamp_us) as f64 / 1e6)
        .collect();
    let sizes: Vec<f64> = p.iter().map(|r| f64::from(r.size_bytes)).collect();
    let [imax, imin, imean, istd] = naive_stats(&iats);
    let [smax, smin, smean, sstd] = naive_stats(&sizes);
    let core = vec![imax, imin, imean, istd, smax, smin, smean, sstd];
    let total: f64 = sizes.iter().sum();
    let acks = p.iter().filter(|r| r.tcp_flags & TCP_ACK != 0).count() as f64;
    let rmin = p.iter().map(|r| r.recv_window_bytes).min().unwrap() as f64;
    let rmax = p.iter().map(|r| r.recv_window_bytes).max().unwrap() as f64;
    let span = (p[p.len() - 1].timestamp_us - p[0].timestamp_us) as f64 / 1e6;
    let (pr, br) = if span > 0.0 { (p.len() as f64 / span, total / span) } else { (0.0, 0.0) };
    let ext = vec![total, smax, smin, acks, rmin, rmax, sstd, smean, imean, istd, imax, imin, pr, br];
    (core, ext)
}

fn subflow_of(packets: &[PacketRecord]) -> Subflow<'_> {
    Subflow {
        flow_key: FlowKey::of(&packets[0], true),
        index: 0,
        packets,
    }
}

fn c7_feature_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..10_000 {
        let n = [2, 3, 25, 100, 1000][case % 5].max(rng.random_range(2..40));
        let p = random_packets(&mut rng, n);
        let sf = subflow_of(&p);
        let (core, ext) = naive_features(&p);
        for (got, want, name) in [
            (extract_core8(&sf).values, core, "core8"),
            (extract_ext14(&sf).values, ext, "ext14"),
        ] {
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                check(rel_close(*g, *w, 1e-9), || format!("case {case} {name}[{i}]: {g} vs {w}"))?;
            }
        }
        let shift = rng.random_range(1..1_000_000_000u64);
        let shifted: Vec<PacketRecord> = p
            .iter()
            .map(|r| PacketRecord { timestamp_us: r.timestamp_us + shift, ..*r })
            .collect();
        check(extract_ext14(&subflow_of(&shifted)).values == extract_ext14(&sf).values, || {
            format!("case {case}: timestamp shift changed features")
        })?;
    }
    // zero variance: constant sizes and constant gaps
    let flat: Vec<PacketRecord> = (0..100u64)
        .map(|i| PacketRecord {
            timestamp_us: 5_000 + i * 1_000,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            src_port: 1,
            dst_port: 2,
            protocol: PROTO_TCP,
            size_bytes: 1500,
            tcp_flags: TCP_ACK,
            recv_window_bytes: 1000,
        })
        .collect();
    let v = extract_core8(&subflow_of(&flat)).values;
    check(v == vec![0.001, 0.001, 0.001, 0.0, 1500.0, 1500.0, 1500.0, 0.0], || {
        format!("zero-variance core8 {v:?}")
    })?;
    let frozen: Vec<PacketRecord> = flat.iter().map(|r| PacketRecord { timestamp_us: 5_000, ..*r }).collect();
    let v = extract_ext14(&subflow_of(&frozen)).values;
    check(v[8..].iter().all(|&x| x == 0.0) && v[6] == 0.0, || format!("zero-span ext14 {v:?}"))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("10000 subflows match naive oracle ({:.1}s)", start.elapsed().as_secs_f64()))
}

fn general_run(seed: u64) -> Result<(ExperimentOutcome, Duration), String> {
    let start = Instant::now();
    let trace = generate(&general_like(200), seed).map_err(|e| e.to_string())?;
    let config = grid_config(vec![DecisionMode::Strict, DecisionMode::Majority]);
    let outcome = run_experiment(
        &config,
        &trace.flows_of(ClassLabel::Known),
        &trace.flows_of(ClassLabel::Unknown),
    )
    .map_err(|e| e.to_string())?;
    Ok((outcome, start.elapsed()))
}

fn artifacts(outcome: &ExperimentOutcome) -> Result<(Vec<u8>, Vec<String>), String> {
    let mut csv = Vec::new();
    outcome.report.write_csv(&mut csv).map_err(|e| e.to_string())?;
    let bundles = outcome
        .bundles
        .iter()
        .map(|b| b.to_json().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    Ok((csv, bundles))
}

fn c8_determinism(first: &ExperimentOutcome) -> Outcome {
    let (again, _) = general_run(11)?;
    let (csv_a, bundles_a) = artifacts(first)?;
    let (csv_b, bundles_b) = artifacts(&again)?;
    check(csv_a == csv_b, || "CSV reports differ".into())?;
    check(bundles_a == bundles_b, || "model bundles differ".into())?;
    Ok(format!(
        "CSV ({} bytes) and {} bundles byte-identical",
        csv_a.len(),
        bundles_a.len()
    ))
}

fn c9_strict_majority_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let strict_policy = |min| DecisionPolicy::from_certainty(0.95, 0.95, min, DecisionMode::Strict).unwrap();
    let mut decided = 0;
    for case in 0..10_000 {
        let m = rng.random_range(1..=40);
        let policy = strict_policy(if case % 2 == 0 { 1 } else { 15 });
        let tie = case % 10 == 0;
        let seq: Vec<(f64, f64)> = (0..m)
            .map(|_| {
                let a = rng.random_range(0.01..1.0);
                if tie {
                    (a, a)
                } else {
                    (a, rng.random_range(0.01..1.0))
                }
            })
            .collect();
        let s = classify_strict(&seq, &policy).map_err(|e| e.to_string())?;
        let j = classify_majority(&seq, &policy).map_err(|e| e.to_string())?;
        if s.verdict != Verdict::Uncertain {
            decided += 1;
            check(j.verdict == s.verdict, || format!("case {case}: strict {:?} majority {:?}", s.verdict, j.verdict))?;
        }
        if tie {
            check(s.verdict == Verdict::Uncertain && j.verdict == Verdict::Unknown, || {
                format!("case {case}: tie gave strict {:?} majority {:?}", s.verdict, j.verdict)
            })?;
        }
    }
    Ok(format!("10000 sequences, {decided} strict decisions agree; ties go unknown"))
}

fn expected_records() -> Vec<PacketRecord> {
    let a = Ipv4Addr::new(10, 0, 0, 1);
    let b = Ipv4Addr::new(10, 0, 0, 2);
    let rec = |ts: u64, fwd: bool, size: u32, flags: u8, win: u32| PacketRecord {
        timestamp_us: ts,
        src_ip: if fwd { a } else { b },
        dst_ip: if fwd { b } else { a },
        src_port: if fwd { 40000 } else { 443 },
        dst_port: if fwd { 443 } else { 40000 },
        protocol: PROTO_TCP,
        size_bytes: size,
        tcp_flags: flags,
        recv_window_bytes: win,
    };
    // the ns fixtures carry an extra 123 ns, truncated away
    vec![
        rec(1_600_000_000_250_000, true, 40, 0x02, 64240),
        rec(1_600_000_000_251_500, false, 40, 0x12, 65160),
        rec(1_600_000_001_000_007, true, 1240, 0x18, 502),
        rec(1_600_000_003_999_999, false, 40, 0x11, 1024),
    ]
}

fn c10_pcap_golden() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let expected_skips = SkipStats { non_ipv4: 1, non_tcp: 1, fragments: 1, malformed: 0, truncated: 0 };
    for name in ["le_us", "be_us", "le_ns", "be_ns"] {
        let path = dir.join(format!("{name}.pcap"));
        let capture = read_pcap(&path).map_err(|e| format!("{name}: {e}"))?;
        check(capture.records == expected_records(), || {
            format!("{name}: records {:?}", capture.records)
        })?;
        check(capture.skipped == expected_skips, || format!("{name}: skips {:?}", capture.skipped))?;
        check(!capture.is_partial(), || format!("{name}: flagged partial"))?;

        // cut inside the last packet's data
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let cut = parse_pcap(&bytes[..bytes.len() - 10]).map_err(|e| e.to_string())?;
        check(cut.records == expected_records()[..3] && cut.skipped.truncated == 1, || {
            format!("{name}: truncated parse {:?} {:?}", cut.records, cut.skipped)
        })?;
    }
    Ok("4 fixtures: 4 records, 1 non-IPv4, 1 UDP, 1 fragment each".into())
}

fn main() {
    let scidmz = scidmz_run();
    let general = general_run(11);
    let on_scidmz = |f: fn(&Scidmz) -> Outcome| scidmz.as_ref().map_err(Clone::clone).and_then(f);

    let results: Vec<(&str, Outcome)> = vec![
        ("likelihood algebra oracle", c1_likelihood_algebra()),
        ("confusion-to-likelihood correctness", c2_confusion_to_likelihood()),
        ("scidmz-like all-100 grid", on_scidmz(c3_table4_regime)),
        (
            "general-like majority >= strict",
            general.as_ref().map_err(Clone::clone).and_then(|(g, t)| c4_general_regime(g, *t)),
        ),
        ("incremental decides at the floor", on_scidmz(c5_incremental_speed)),
        ("subflow classifier quality", on_scidmz(c6_subflow_quality)),
        ("feature oracle", c7_feature_oracle()),
        (
            "pipeline determinism",
            general.as_ref().map_err(Clone::clone).and_then(|(g, _)| c8_determinism(g)),
        ),
        ("strict/majority consistency", c9_strict_majority_consistency()),
        ("pcap golden files", c10_pcap_golden()),
    ];

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
