//! Acceptance criteria A1-A9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mie_core::bags::read_bags_jsonl;
use mie_core::losses::mie_rank_weighted_loss_with;
use mie_core::metrics::LabelSets;
use mie_core::synth::{separated_unit_vectors, SynthWorld};
use mie_core::trainer::initial_model;
use mie_core::{
    evaluate_annotations, generate, grid_subregion_geometries, map_at_k, mie_loss, train,
    upper_bound_assignments, whole_image_ranking_loss, zero_shot_predict, EmbeddingModel, InstanceBag,
    LabelSpace, LossConfig, LossKind, MapAveraging, PairSet, RegionFilter, SynthConfig, TrainConfig,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn mie(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_mie"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "mie {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// The A2 dataset: 2000 train and 200 held-out bags, everything else at the
/// synth defaults.
fn a2_data(dir: &Path) -> PathBuf {
    let out = dir.join("a2");
    mie(&["synth", "--out-dir", p(&out), "--num-bags", "2200", "--heldout-count", "200", "--seed", "0"]);
    out
}

fn a1(data: &Path) -> Outcome {
    let start = Instant::now();
    let text = mie(&[
        "gradcheck", "--labels", p(&data.join("labels.tsv")), "--bags", p(&data.join("train.jsonl")),
        "--samples", "100", "--step", "1e-5", "--tolerance", "1e-4", "--seed", "0",
    ]);
    let elapsed = start.elapsed();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for line in text.lines() {
        let (kind, rest) = line.split_once(": max relative error ").unwrap();
        let err: f64 = rest.split_whitespace().next().unwrap().parse().unwrap();
        let points: usize = rest.split(" over ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
        worst = worst.max(err);
        parts.push((kind.to_string(), err, points));
    }
    let kinds_ok = parts.len() == 3 && parts.iter().all(|(_, _, n)| *n >= 100);
    let pass = kinds_ok && worst <= 1e-4 && elapsed <= Duration::from_secs(60);
    let per: Vec<String> = parts.iter().map(|(k, e, n)| format!("{k} {e:.2e}/{n}pts")).collect();
    Outcome::new(
        pass,
        format!("worst {worst:.2e} <= 1e-4 [{}], {:.1}s <= 60s", per.join(", "), elapsed.as_secs_f64()),
    )
}

/// Trains, predicts at k=3 and evaluates on the held-out split; returns
/// the report and the wall time of the whole pipeline.
fn held_out_report(data: &Path, dir: &Path, loss: &str) -> (Value, Duration) {
    let start = Instant::now();
    let model = dir.join(format!("{loss}.json"));
    let preds = dir.join(format!("{loss}.pred.jsonl"));
    let report = dir.join(format!("{loss}.eval.json"));
    mie(&[
        "train", "--labels", p(&data.join("labels.tsv")), "--bags", p(&data.join("train.jsonl")),
        "--out", p(&model), "--loss", loss, "--epochs", "30", "--seed", "0",
    ]);
    mie(&[
        "predict", "--model", p(&model), "--labels", p(&data.join("labels.tsv")),
        "--bags", p(&data.join("heldout.jsonl")), "--k", "3", "--out", p(&preds),
    ]);
    mie(&[
        "evaluate", "--predictions", p(&preds), "--truth-bags", p(&data.join("heldout.jsonl")),
        "--labels", p(&data.join("labels.tsv")), "--k", "3", "--out", p(&report),
    ]);
    (json(&report), start.elapsed())
}

fn a2(report: &Value, elapsed: Duration) -> Outcome {
    let recall = report["overall_recall"].as_f64().unwrap();
    let n_plus = report["n_plus"].as_f64().unwrap();
    let pass = recall >= 85.0 && n_plus == 100.0 && elapsed <= Duration::from_secs(300);
    Outcome::new(
        pass,
        format!(
            "mie-warp overall recall {recall:.2} >= 85, N+ {n_plus:.2} == 100, {:.1}s <= 300s",
            elapsed.as_secs_f64()
        ),
    )
}

fn a3(rank: f64, mie: f64, warp: f64) -> Outcome {
    let pass = warp >= mie && mie >= rank && mie - rank >= 3.0;
    Outcome::new(
        pass,
        format!(
            "overall recall rank {rank:.2}, mie {mie:.2}, mie-warp {warp:.2}; need warp >= mie >= rank, mie - rank = {:.2} >= 3",
            mie - rank
        ),
    )
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn a4() -> Outcome {
    let data = generate::<f64>(&SynthConfig {
        num_bags: 100,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let space = data.space();
    let cfg = LossConfig::new(LossKind::Mie, 0.1).unwrap();
    let (mut single_gap, mut unit_gap) = (0.0f64, 0.0f64);
    for (i, bag) in data.train.iter().take(50).enumerate() {
        let model: EmbeddingModel = initial_model(space.dim(), bag.feature_dim(), 1000 + i as u64);
        let pairs = PairSet::from_names(space, bag.labels()).unwrap();

        let single = bag.whole_image_only();
        let m = mie_loss(&model, &single, space, &pairs, &cfg).unwrap();
        let r = whole_image_ranking_loss(&model, &single, space, &pairs, &cfg).unwrap();
        single_gap = single_gap.max((m.value - r.value).abs()).max(max_abs_diff(&m.grad, &r.grad));

        assert!(bag.len() > 1);
        let m = mie_loss(&model, bag, space, &pairs, &cfg).unwrap();
        let w = mie_rank_weighted_loss_with(&model, bag, space, &pairs, &cfg, &|_, _| 1.0).unwrap();
        unit_gap = unit_gap.max((m.value - w.value).abs()).max(max_abs_diff(&m.grad, &w.grad));
    }
    Outcome::new(
        single_gap <= 1e-12 && unit_gap <= 1e-12,
        format!("|mie - rank| single-instance {single_gap:.1e}, |mie-warp(w=1) - mie| {unit_gap:.1e}, both <= 1e-12 over 50 bags"),
    )
}

fn names(v: usize) -> Vec<String> {
    (0..v).map(|i| format!("l{i}")).collect()
}

fn pct(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        100.0 * num / den
    }
}

/// Brute-force counts over every (label, bag) pair.
fn metric_oracle(preds: &LabelSets, truths: &LabelSets, vocab: &[String]) -> [f64; 5] {
    let has = |sets: &LabelSets, id: &str, l: &str| sets[id].iter().any(|x| x == l);
    let (mut rec_sum, mut rec_n, mut prec_sum, mut prec_n) = (0.0, 0usize, 0.0, 0usize);
    let (mut correct_all, mut truth_all, mut pred_all, mut found) = (0usize, 0usize, 0usize, 0usize);
    for l in vocab {
        let (mut c, mut t, mut q) = (0usize, 0usize, 0usize);
        for id in truths.keys() {
            let in_t = has(truths, id, l);
            let in_p = has(preds, id, l);
            c += usize::from(in_t && in_p);
            t += usize::from(in_t);
            q += usize::from(in_p);
        }
        if t > 0 {
            rec_sum += c as f64 / t as f64;
            rec_n += 1;
        }
        if q > 0 {
            prec_sum += c as f64 / q as f64;
            prec_n += 1;
        }
        correct_all += c;
        truth_all += t;
        pred_all += q;
        found += usize::from(c > 0);
    }
    [
        pct(rec_sum, rec_n as f64),
        pct(prec_sum, prec_n as f64),
        pct(correct_all as f64, truth_all as f64),
        pct(correct_all as f64, pred_all as f64),
        pct(found as f64, vocab.len() as f64),
    ]
}

fn map_oracle(rankings: &LabelSets, truths: &BTreeMap<String, String>, vocab: &[String], k: usize) -> f64 {
    let mut sum = 0.0;
    let mut classes = 0usize;
    for l in vocab {
        let imgs: Vec<&String> = truths.iter().filter(|(_, t)| *t == l).map(|(id, _)| id).collect();
        if imgs.is_empty() {
            continue;
        }
        let hits = imgs.iter().filter(|id| rankings[**id][..k].contains(l)).count();
        sum += hits as f64 / imgs.len() as f64;
        classes += 1;
    }
    pct(sum, classes as f64)
}

fn a5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0usize;
    for _ in 0..200 {
        let v = rng.random_range(1..=10usize);
        let vocab = names(v);
        let k = rng.random_range(1..=v.min(4));
        let bags = rng.random_range(1..=20usize);
        let (mut preds, mut truths) = (LabelSets::new(), LabelSets::new());
        let (mut rankings, mut single) = (LabelSets::new(), BTreeMap::new());
        for b in 0..bags {
            let id = format!("b{b:02}");
            let t = rng.random_range(1..=v);
            truths.insert(id.clone(), vocab.choose_multiple(&mut rng, t).cloned().collect());
            preds.insert(id.clone(), vocab.choose_multiple(&mut rng, k).cloned().collect());
            let mut order = vocab.clone();
            order.shuffle(&mut rng);
            rankings.insert(id.clone(), order);
            single.insert(id, vocab.choose(&mut rng).unwrap().clone());
        }
        let r = evaluate_annotations(&preds, &truths, &vocab, k).unwrap();
        let got = [r.per_class_recall, r.per_class_precision, r.overall_recall, r.overall_precision, r.n_plus];
        if got != metric_oracle(&preds, &truths, &vocab) {
            mismatches += 1;
        }
        let mk = rng.random_range(1..=v);
        if map_at_k(&rankings, &single, mk, MapAveraging::Macro).unwrap() != map_oracle(&rankings, &single, &vocab, mk) {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("{mismatches} mismatches over 200 cases (five metrics + macro MAP@k), exact"))
}

fn label_sets(bags: &[InstanceBag]) -> LabelSets {
    bags.iter().map(|b| (b.id().to_string(), b.labels().to_vec())).collect()
}

fn a6(data: &Path) -> Outcome {
    let space = LabelSpace::read_tsv(data.join("labels.tsv")).unwrap();
    let bags: Vec<InstanceBag> = read_bags_jsonl(data.join("heldout.jsonl"), &RegionFilter::default()).unwrap();
    let truths = label_sets(&bags);
    let min_labels = truths.values().map(Vec::len).min().unwrap();
    let mut worst: Option<(usize, u64, f64, f64)> = None;
    let mut runs = 0;
    for k in 1..=min_labels {
        for seed in 0..5 {
            let ub = upper_bound_assignments(&truths, space.names(), k, seed).unwrap();
            let r = evaluate_annotations(&ub, &truths, space.names(), k).unwrap().rounded();
            runs += 1;
            if r.overall_precision != 100.0 || r.n_plus != 100.0 {
                worst = Some((k, seed, r.overall_precision, r.n_plus));
            }
        }
    }
    match worst {
        None => Outcome::new(true, format!("overall precision and N+ = 100.00 in {runs} runs (k 1..={min_labels}, 5 seeds)")),
        Some((k, s, op, np)) => Outcome::new(false, format!("k {k} seed {s}: overall precision {op:.2}, N+ {np:.2}")),
    }
}

fn a7() -> Outcome {
    let grid = grid_subregion_geometries();
    let filter = RegionFilter::default();
    let admitted = grid.iter().filter(|g| filter.admits(g)).count();
    let distinct: BTreeSet<[u64; 4]> = grid
        .iter()
        .map(|g| [g.x0, g.y0, g.x1, g.y1].map(f64::to_bits))
        .collect();
    Outcome::new(
        grid.len() == 36 && admitted == 36 && distinct.len() == 36,
        format!("{} regions ({} distinct), {admitted} pass the default filter", grid.len(), distinct.len()),
    )
}

/// Trains on 8 of 12 synthetic labels and ranks the other 4 among 8 decoys.
fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let world = SynthWorld::<f64>::new(12, 8, 32, &mut rng).unwrap();
    let seen: Vec<usize> = (0..8).collect();
    let seen_space = world.space().subset(&seen).unwrap();
    let train_bags: Vec<InstanceBag> = (0..2000)
        .map(|i| world.sample_bag(format!("t{i:04}"), &seen, (2, 3), 2, 0.02, &mut rng).unwrap())
        .collect();
    let test_bags: Vec<InstanceBag> = (8..12)
        .flat_map(|l| (0..50).map(move |i| (l, i)))
        .map(|(l, i)| world.sample_bag(format!("z{l}-{i:02}"), &[l], (1, 1), 2, 0.02, &mut rng).unwrap())
        .collect();
    let decoys = separated_unit_vectors(8, 8, 0.0, &mut rng).unwrap();
    let unseen = LabelSpace::from_records(
        (8..12)
            .map(|l| (world.space().name(l).to_string(), world.space().vector(l).to_vec()))
            .chain(decoys.into_iter().enumerate().map(|(i, v)| (format!("decoy{i}"), v))),
    )
    .unwrap();

    let (model, _) = train(&train_bags, &seen_space, &TrainConfig::new(LossKind::MieRankWeighted, 30)).unwrap();
    let rankings: LabelSets = test_bags
        .iter()
        .map(|b| {
            let list = zero_shot_predict(&model, b, &unseen, unseen.len()).unwrap();
            (b.id().to_string(), list.labels().map(str::to_string).collect())
        })
        .collect();
    let truths: BTreeMap<String, String> = test_bags
        .iter()
        .map(|b| (b.id().to_string(), b.labels()[0].clone()))
        .collect();
    let maps: Vec<f64> = [1, 2, 5, 10]
        .iter()
        .map(|&k| map_at_k(&rankings, &truths, k, MapAveraging::Macro).unwrap())
        .collect();
    let hit1 = maps[0];
    let chance = 100.0 / 12.0;
    let monotone = maps.windows(2).all(|w| w[0] <= w[1]);
    Outcome::new(
        hit1 >= 3.0 * chance && monotone,
        format!(
            "hit@1 {hit1:.2} >= {:.2} (3x chance); MAP@1,2,5,10 = {:.2}, {:.2}, {:.2}, {:.2} nondecreasing: {monotone}",
            3.0 * chance,
            maps[0],
            maps[1],
            maps[2],
            maps[3]
        ),
    )
}

/// Every output file under `dir`, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn a9() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    let (labels, train_bags, heldout) = (data.join("labels.tsv"), data.join("train.jsonl"), data.join("heldout.jsonl"));
    let (model, preds, zs) = (d.join("m.json"), d.join("p.jsonl"), d.join("z.jsonl"));
    let (eval, grad) = (d.join("eval.json"), d.join("grad.json"));
    let commands: Vec<Vec<&str>> = vec![
        vec!["synth", "--out-dir", p(&data), "--num-bags", "300", "--heldout-count", "50", "--seed", "9"],
        vec![
            "train", "--labels", p(&labels), "--bags", p(&train_bags), "--out", p(&model), "--loss", "mie-warp",
            "--epochs", "3", "--batch-size", "32", "--seed", "9",
        ],
        vec!["predict", "--model", p(&model), "--labels", p(&labels), "--bags", p(&heldout), "--k", "3", "--out", p(&preds)],
        vec![
            "evaluate", "--predictions", p(&preds), "--truth-bags", p(&heldout), "--labels", p(&labels), "--k", "3",
            "--out", p(&eval),
        ],
        vec![
            "zeroshot", "--model", p(&model), "--unseen-labels", p(&labels), "--bags", p(&heldout), "--k", "5",
            "--out", p(&zs),
        ],
        vec![
            "gradcheck", "--labels", p(&labels), "--bags", p(&train_bags), "--samples", "10", "--seed", "9",
            "--out", p(&grad),
        ],
    ];
    let run_all = || {
        let mut stdout = Vec::new();
        for c in &commands {
            let mut args = vec!["--jobs", "1"];
            args.extend_from_slice(c);
            stdout.push(mie(&args));
        }
        (snapshot(d), stdout)
    };
    let (first, out1) = run_all();
    let (second, out2) = run_all();
    let differing: Vec<String> = first
        .iter()
        .filter(|(path, bytes)| second.get(*path) != Some(*bytes))
        .map(|(path, _)| path.display().to_string())
        .collect();
    let pass = differing.is_empty() && first.len() == second.len() && out1 == out2;
    Outcome::new(
        pass,
        if pass {
            format!("{} output files bitwise identical across two runs of {} commands", first.len(), commands.len())
        } else {
            format!("differing: {differing:?}, stdout equal: {}", out1 == out2)
        },
    )
}

fn main() {
    let tmp = TempDir::new().unwrap();
    let data = a2_data(tmp.path());
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |id, o: Outcome| {
        println!("{id} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, o));
    };

    record("A1", a1(&data));
    let runs = tmp.path().join("runs");
    fs::create_dir(&runs).unwrap();
    let (warp, warp_time) = held_out_report(&data, &runs, "mie-warp");
    record("A2", a2(&warp, warp_time));
    let (mie_r, _) = held_out_report(&data, &runs, "mie");
    let (rank_r, _) = held_out_report(&data, &runs, "rank");
    let recall = |r: &Value| r["overall_recall"].as_f64().unwrap();
    record("A3", a3(recall(&rank_r), recall(&mie_r), recall(&warp)));
    record("A4", a4());
    record("A5", a5());
    record("A6", a6(&data));
    record("A7", a7());
    record("A8", a8());
    record("A9", a9());

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
