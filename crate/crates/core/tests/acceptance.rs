//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use menunet::dataset::{
    read_sequences, sequence_stats, split_by_user, write_sequences, Organization, SelectionSequence, Trial, MenuSpec,
};
use menunet::eval::{
    block_curves, jacobian_recency_profile, menu_level_r2, r_squared, sequence_level_r2, spearman, target_level_r2,
    write_block_csv, write_level_csv, write_profile_csv, write_sequence_csv, BlockRow, ProfileRow,
};
use menunet::features::{synth_embeddings, EmbeddingSource, FeatureContext};
use menunet::model::{init_params, load_checkpoint, predict_times, save_checkpoint, MenuInputs, ModelDims, ModelParams};
use menunet::numkit::RngStream;
use menunet::oracle::{generate_corpus, mixed_designs, noiseless_times, OracleParams};
use menunet::training::{sequence_loss, train, write_log_csv, TrainConfig};

const PROBE_SEED: u64 = 3;
const CORPUS_SEED: u64 = 4;
const SPLIT_SEED: u64 = 0;
const TRAIN_SEED: u64 = 0;
const EMBEDDING_SEED: u64 = 0;
const PROBE_ITERATIONS: usize = 20_000;
const GEN_ITERATIONS: usize = 200_000;
const MAX_LAG: usize = 10;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(id: usize, name: &str, elapsed: Duration, o: &Outcome) {
    let mut err = std::io::stderr();
    let _ = writeln!(
        err,
        "criterion {id} [{name}]: {} ({:.1}s) {}",
        if o.passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        o.detail
    );
}

fn context(seqs: &[SelectionSequence], fit_on: &[SelectionSequence]) -> FeatureContext {
    let names: Vec<&str> = seqs.iter().flat_map(|s| s.menu.items.iter().map(String::as_str)).collect();
    let table = synth_embeddings(&names, EMBEDDING_SEED);
    FeatureContext::fit(table, fit_on.iter().map(|s| &s.menu)).unwrap()
}

fn predictions(params: &ModelParams, seqs: &[SelectionSequence], ctx: &FeatureContext) -> Vec<Vec<f64>> {
    seqs.iter()
        .map(|s| predict_times(params, &MenuInputs::new(&s.menu, ctx).unwrap(), &s.targets()).unwrap())
        .collect()
}

fn checkpoint_bytes(p: &ModelParams) -> Vec<u8> {
    let mut b = Vec::new();
    save_checkpoint(p, &mut b).unwrap();
    b
}

fn criterion_1() -> Outcome {
    let mut total = common::FdReport::default();
    let mut failing = Vec::new();
    for seed in 0..10 {
        let r = common::fd_check(1000 + seed, 3, 5);
        if !r.passes() {
            failing.push(seed);
        }
        total.merge(&r);
    }
    Outcome {
        passed: failing.is_empty(),
        detail: format!(
            "{} weight and {} input derivatives over 10 seeds; max rel err weights {:.2e}, inputs {:.2e} (tol {:.0e}){}",
            total.params_checked,
            total.inputs_checked,
            total.max_param_rel,
            total.max_input_rel,
            common::FD_TOL,
            if failing.is_empty() { String::new() } else { format!("; failing seeds {failing:?}") }
        ),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = RngStream::derive(2, 0);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let len = 2 + rng.below(150);
        let trials: Vec<Trial> = (0..len)
            .map(|i| Trial {
                block_index: 1 + i / 8,
                target_index: i % 8,
                observed_time: rng.uniform_range(0.2, 4.0),
                noiseless_time: None,
            })
            .collect();
        let seq = SelectionSequence {
            user_id: format!("r{k}"),
            menu: MenuSpec {
                menu_id: "m".into(),
                organization: Organization::Unordered,
                items: (0..8).map(|i| format!("item {i}")).collect(),
            },
            trials,
        };
        let y = seq.observed();
        let t: Vec<f64> = y.iter().map(|v| v + rng.uniform_range(-1.0, 1.0)).collect();
        let c_s = sequence_stats(&seq).variance_sum;
        let r2 = r_squared(&y, &t).unwrap();
        let loss = sequence_loss(&y, &t, c_s, 1e-9).unwrap();
        worst = worst.max((r2 - (1.0 - loss)).abs());
    }
    Outcome {
        passed: worst <= 1e-12,
        detail: format!("max |R² − (1 − loss)| over 1000 sequences = {worst:.2e} (tol 1e-12)"),
    }
}

struct ProbeRun {
    checkpoint: Vec<u8>,
    report: Vec<u8>,
    mean_r2: f64,
    elapsed: Duration,
}

fn run_probe() -> ProbeRun {
    let start = Instant::now();
    let p = OracleParams { sigma: 0.05, ..Default::default() };
    let seqs = generate_corpus(&mixed_designs(&[8], &[Organization::Unordered], 5, 12, PROBE_SEED), &p).unwrap();
    let ctx = context(&seqs, &seqs);
    let init = init_params(ModelDims::default(), TRAIN_SEED, ctx.projection.clone(), EmbeddingSource::Synthetic { seed: EMBEDDING_SEED }).unwrap();
    let cfg = TrainConfig { iterations: PROBE_ITERATIONS, seed: TRAIN_SEED, checkpoint_every: 0, ..Default::default() };
    let (params, _) = train(&seqs, &[], &cfg, init, &ctx, |_, _| Ok(())).unwrap();
    let preds = predictions(&params, &seqs, &ctx);
    let seq_report = sequence_level_r2(&seqs, &preds).unwrap();
    let mut report = Vec::new();
    write_sequence_csv(&seq_report, &mut report).unwrap();
    ProbeRun {
        checkpoint: checkpoint_bytes(&params),
        report,
        mean_r2: seq_report.overall,
        elapsed: start.elapsed(),
    }
}

fn criterion_3(run: &ProbeRun) -> Outcome {
    let in_time = run.elapsed < Duration::from_secs(300);
    Outcome {
        passed: run.mean_r2 >= 0.95 && in_time,
        detail: format!(
            "mean training-sequence R² = {:.4} (need >= 0.95) after {PROBE_ITERATIONS} iterations; runtime {:.0}s (limit 300s)",
            run.mean_r2,
            run.elapsed.as_secs_f64()
        ),
    }
}

struct GenRun {
    corpus: Vec<SelectionSequence>,
    params: ModelParams,
    checkpoint: Vec<u8>,
    reports: BTreeMap<&'static str, Vec<u8>>,
    seq_r2: f64,
    seq_ceiling: f64,
    target_r2: f64,
    target_ceiling: f64,
    blocks: Vec<BlockRow>,
    profile: Vec<ProfileRow>,
    elapsed: Duration,
}

fn run_generalization() -> GenRun {
    let start = Instant::now();
    let designs = mixed_designs(&[8, 12, 16], &Organization::ALL, 200, 12, CORPUS_SEED);
    let corpus = generate_corpus(&designs, &OracleParams::default()).unwrap();
    let (train_set, test_set) = split_by_user(&corpus, 0.5, SPLIT_SEED).unwrap();
    let ctx = context(&corpus, &train_set);
    let init = init_params(ModelDims::default(), TRAIN_SEED, ctx.projection.clone(), EmbeddingSource::Synthetic { seed: EMBEDDING_SEED }).unwrap();
    let cfg = TrainConfig { iterations: GEN_ITERATIONS, seed: TRAIN_SEED, checkpoint_every: 20_000, ..Default::default() };
    let (params, log) = train(&train_set, &test_set, &cfg, init, &ctx, |_, _| Ok(())).unwrap();

    let preds = predictions(&params, &test_set, &ctx);
    let noiseless: Vec<Vec<f64>> = test_set.iter().map(|s| noiseless_times(s).unwrap()).collect();
    let seq = sequence_level_r2(&test_set, &preds).unwrap();
    let target = target_level_r2(&test_set, &preds).unwrap();
    let menu = menu_level_r2(&test_set, &preds).unwrap();
    let blocks = block_curves(&test_set, &preds).unwrap();
    let profile = jacobian_recency_profile(&params, &test_set, &ctx, MAX_LAG).unwrap();

    let mut reports = BTreeMap::new();
    let mut buf = Vec::new();
    write_sequence_csv(&seq, &mut buf).unwrap();
    reports.insert("sequence_level.csv", std::mem::take(&mut buf));
    write_level_csv(&target, &mut buf).unwrap();
    reports.insert("target_level.csv", std::mem::take(&mut buf));
    write_level_csv(&menu, &mut buf).unwrap();
    reports.insert("menu_level.csv", std::mem::take(&mut buf));
    write_block_csv(&blocks, &mut buf).unwrap();
    reports.insert("block_curves.csv", std::mem::take(&mut buf));
    write_profile_csv(&profile, &mut buf).unwrap();
    reports.insert("jacobian_profile.csv", std::mem::take(&mut buf));
    write_log_csv(&log, &mut buf, false).unwrap();
    reports.insert("train_log.csv", std::mem::take(&mut buf));

    GenRun {
        checkpoint: checkpoint_bytes(&params),
        seq_r2: seq.overall,
        seq_ceiling: sequence_level_r2(&test_set, &noiseless).unwrap().overall,
        target_r2: target.overall,
        target_ceiling: target_level_r2(&test_set, &noiseless).unwrap().overall,
        corpus,
        params,
        reports,
        blocks,
        profile,
        elapsed: start.elapsed(),
    }
}

fn criterion_4(run: &GenRun) -> Outcome {
    let seq_ok = run.seq_r2 >= 0.80 * run.seq_ceiling;
    let target_ok = run.target_r2 >= 0.85 * run.target_ceiling;
    let in_time = run.elapsed < Duration::from_secs(1800);
    Outcome {
        passed: seq_ok && target_ok && in_time,
        detail: format!(
            "held-out sequence R² {:.4} vs ceiling {:.4} (ratio {:.3}, need 0.80); target R² {:.4} vs ceiling {:.4} (ratio {:.3}, need 0.85); runtime {:.0}s (limit 1800s)",
            run.seq_r2,
            run.seq_ceiling,
            run.seq_r2 / run.seq_ceiling,
            run.target_r2,
            run.target_ceiling,
            run.target_r2 / run.target_ceiling,
            run.elapsed.as_secs_f64()
        ),
    }
}

fn criterion_5(run: &GenRun) -> Outcome {
    let mut worst = (0.0f64, 0, 0);
    let mut problems = Vec::new();
    let lengths: Vec<usize> = {
        let mut v: Vec<usize> = run.blocks.iter().map(|r| r.n).collect();
        v.dedup();
        v
    };
    for &n in &lengths {
        let rows: Vec<&BlockRow> = run.blocks.iter().filter(|r| r.n == n).collect();
        for r in rows.iter().filter(|r| r.block >= 3) {
            let rel = (r.mean_predicted - r.mean_observed).abs() / r.mean_observed;
            if rel > worst.0 {
                worst = (rel, n, r.block);
            }
        }
        let first = rows.iter().find(|r| r.block == 1).unwrap();
        let last = rows.iter().find(|r| r.block == 12).unwrap();
        if !(last.mean_predicted < first.mean_predicted && last.mean_observed < first.mean_observed) {
            problems.push(format!("n={n} not decreasing from block 1 to 12"));
        }
    }
    Outcome {
        passed: worst.0 <= 0.15 && problems.is_empty(),
        detail: format!(
            "max relative error over blocks >= 3 = {:.3} at n={} block {} (tol 0.15); {}",
            worst.0,
            worst.1,
            worst.2,
            if problems.is_empty() { "both curves fall from block 1 to 12 for every n".to_string() } else { problems.join("; ") }
        ),
    }
}

fn criterion_6(run: &GenRun) -> Outcome {
    let series = |org: Organization| -> Vec<(usize, f64)> {
        run.profile
            .iter()
            .filter(|r| r.organization == org && r.lag <= MAX_LAG)
            .filter_map(|r| r.mean_abs.map(|m| (r.lag, m)))
            .collect()
    };
    let u = series(Organization::Unordered);
    let a = series(Organization::Alphabetical);
    let (lags, mags): (Vec<f64>, Vec<f64>) = u.iter().map(|&(l, m)| (l as f64, m)).unzip();
    let rho = spearman(&lags, &mags).unwrap_or(f64::NAN);
    let mean = |s: &[(usize, f64)]| s.iter().map(|p| p.1).sum::<f64>() / s.len().max(1) as f64;
    let (mu, ma) = (mean(&u), mean(&a));
    let profile: Vec<String> = u.iter().map(|(l, m)| format!("{l}:{m:.4}")).collect();
    Outcome {
        passed: u.len() == MAX_LAG && rho <= -0.7 && mu > ma,
        detail: format!(
            "unordered Spearman(lag, |d|) = {rho:.3} (need <= -0.7) over {} lags; mean |d| U {mu:.4} vs A {ma:.4}; U profile [{}]",
            u.len(),
            profile.join(" ")
        ),
    }
}

fn criterion_7(p1: &ProbeRun, p2: &ProbeRun, g1: &GenRun, g2: &GenRun) -> Outcome {
    let mut diffs = Vec::new();
    if p1.checkpoint != p2.checkpoint {
        diffs.push("probe checkpoint".to_string());
    }
    if p1.report != p2.report {
        diffs.push("probe report".to_string());
    }
    if g1.checkpoint != g2.checkpoint {
        diffs.push("generalization checkpoint".to_string());
    }
    for (name, bytes) in &g1.reports {
        if g2.reports.get(name) != Some(bytes) {
            diffs.push(format!("generalization {name}"));
        }
    }
    Outcome {
        passed: diffs.is_empty(),
        detail: if diffs.is_empty() {
            format!("2 checkpoints and {} reports bit-identical across reruns", 1 + g1.reports.len())
        } else {
            format!("differs: {}", diffs.join(", "))
        },
    }
}

fn criterion_8(run: &GenRun) -> Outcome {
    let mut problems = Vec::new();
    let mut first = Vec::new();
    write_sequences(&run.corpus, &mut first).unwrap();
    let reread = read_sequences(first.as_slice()).unwrap();
    let mut second = Vec::new();
    write_sequences(&reread, &mut second).unwrap();
    if first != second {
        problems.push("dataset");
    }
    let loaded = load_checkpoint(run.checkpoint.as_slice(), Some(&run.params.dims)).unwrap();
    if checkpoint_bytes(&loaded) != run.checkpoint || loaded != run.params {
        problems.push("checkpoint");
    }
    Outcome {
        passed: problems.is_empty(),
        detail: if problems.is_empty() {
            format!(
                "dataset ({} bytes, {} sequences) and checkpoint ({} bytes) byte-identical after save-load-save",
                first.len(),
                run.corpus.len(),
                run.checkpoint.len()
            )
        } else {
            format!("not byte-identical: {}", problems.join(", "))
        },
    }
}

fn main() {
    // `cargo test -- --list` and filters: run the suite only when unfiltered.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = Vec::new();
    let mut record = |id: usize, name: &str, elapsed: Duration, o: Outcome| {
        report(id, name, elapsed, &o);
        if !o.passed {
            failed.push(id);
        }
    };

    let t = Instant::now();
    let o = criterion_1();
    record(1, "gradient correctness", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_2();
    record(2, "loss/metric identity", t.elapsed(), o);

    let probe = run_probe();
    record(3, "overfit probe", probe.elapsed, criterion_3(&probe));

    let gen = run_generalization();
    record(4, "oracle-relative generalization", gen.elapsed, criterion_4(&gen));

    let t = Instant::now();
    let o = criterion_5(&gen);
    record(5, "block curve shape", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_6(&gen);
    record(6, "jacobian recency shape", t.elapsed(), o);

    let t = Instant::now();
    let probe2 = run_probe();
    let gen2 = run_generalization();
    let o = criterion_7(&probe, &probe2, &gen, &gen2);
    record(7, "determinism", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_8(&gen);
    record(8, "format round-trips", t.elapsed(), o);

    if failed.is_empty() {
        eprintln!("acceptance: all 8 criteria passed");
    } else {
        eprintln!("acceptance: {} of 8 criteria failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
