use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mie_core::bags::{read_bags_jsonl, write_bags_jsonl};
use mie_core::inference::{predict_all, read_predictions_jsonl, write_predictions_jsonl};
use mie_core::metrics::LabelSets;
use mie_core::synth::Holdout;
use mie_core::trainer::{initial_model, train_from, GradCheckOptions};
use mie_core::{
    evaluate_annotations, finite_difference_check, map_at_k, upper_bound_assignments,
    zero_shot_predict, EmbeddingModel, Error, InstanceBag, LabelSpace, LossConfig, LossKind,
    MapAveraging, PairSet, RegionFilter, SynthConfig, SynthDataset, TrainConfig,
};

use crate::manifest::{manifest_path, sibling, RunManifest};
use crate::{Command, EvaluateArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs, ZeroshotArgs};

pub fn run(command: Command, jobs: usize) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker threads")?;
    pool.install(|| match &command {
        Command::Train(a) => train(a, &command, jobs),
        Command::Predict(a) => predict(a, &command, jobs),
        Command::Evaluate(a) => evaluate(a, &command, jobs),
        Command::Zeroshot(a) => zeroshot(a, &command, jobs),
        Command::Synth(a) => synth(a, &command, jobs),
        Command::Gradcheck(a) => gradcheck(a, &command, jobs),
        Command::Replay(a) => {
            let m = RunManifest::read(&a.manifest)?;
            ensure!(
                m.version == env!("CARGO_PKG_VERSION"),
                "manifest was written by version {}, this is {}",
                m.version,
                env!("CARGO_PKG_VERSION")
            );
            ensure!(!matches!(m.config, Command::Replay(_)), "manifest records a replay");
            m.verify_inputs()?;
            run(m.config, m.jobs)
        }
    })
}

fn load_labels(path: &Path) -> Result<LabelSpace> {
    LabelSpace::read_tsv(path).with_context(|| format!("loading labels from {}", path.display()))
}

fn load_bags(path: &Path) -> Result<Vec<InstanceBag>> {
    read_bags_jsonl(path, &RegionFilter::default())
        .with_context(|| format!("loading bags from {}", path.display()))
}

fn load_model(path: &Path) -> Result<EmbeddingModel> {
    EmbeddingModel::read_json(path).with_context(|| format!("loading model from {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(a: &TrainArgs, command: &Command, jobs: usize) -> Result<()> {
    let space = load_labels(&a.labels)?;
    let bags = load_bags(&a.bags)?;
    let loss = LossConfig::new(a.loss, a.margin)?.with_negative_cap(a.negative_cap)?;
    let config = TrainConfig {
        loss: LossConfig {
            rank_excludes_positives: a.rank_excludes_positives,
            ..loss
        },
        batch_size: a.batch_size,
        momentum: a.momentum,
        initial_lr: a.lr,
        lr_step_epochs: a.lr_step,
        lr_gamma: a.lr_gamma,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        seed: a.seed,
    };
    config.validate()?;
    let feature_dim = bags.first().ok_or(Error::EmptyDataset)?.feature_dim();
    let model = initial_model(space.dim(), feature_dim, a.seed);
    let (model, history) = train_from(model, &bags, &space, &config, |r| {
        eprintln!("epoch {:>3}  loss {:.6}  lr {}", r.epoch, r.mean_loss, r.lr)
    })?;

    let history_path = a.history.clone().unwrap_or_else(|| sibling(&a.out, "history.jsonl"));
    model
        .write_json(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    history
        .write_jsonl(&history_path, a.timing)
        .with_context(|| format!("writing {}", history_path.display()))?;
    RunManifest::new(
        command,
        jobs,
        &[("labels", &a.labels), ("bags", &a.bags)],
        vec![a.out.clone(), history_path],
    )?
    .write(&manifest_path(&a.out))
}

fn predict(a: &PredictArgs, command: &Command, jobs: usize) -> Result<()> {
    let model = load_model(&a.model)?;
    let space = load_labels(&a.labels)?;
    let bags = load_bags(&a.bags)?;
    let lists = predict_all(&model, &bags, &space, a.k)?;
    write_predictions_jsonl(&a.out, &lists).with_context(|| format!("writing {}", a.out.display()))?;
    RunManifest::new(
        command,
        jobs,
        &[("model", &a.model), ("labels", &a.labels), ("bags", &a.bags)],
        vec![a.out.clone()],
    )?
    .write(&manifest_path(&a.out))
}

fn truth_sets(bags: &[InstanceBag]) -> LabelSets {
    bags.iter()
        .map(|b| (b.id().to_string(), b.labels().to_vec()))
        .collect()
}

fn evaluate(a: &EvaluateArgs, command: &Command, jobs: usize) -> Result<()> {
    let space = load_labels(&a.labels)?;
    let truths = truth_sets(&load_bags(&a.truth_bags)?);
    let predictions = match &a.predictions {
        Some(path) if !a.upper_bound => read_predictions_jsonl(path)
            .with_context(|| format!("loading predictions from {}", path.display()))?
            .into_iter()
            .map(|r| {
                let labels = r.predictions.into_iter().take(a.k).map(|p| p.label).collect();
                (r.id, labels)
            })
            .collect(),
        _ => upper_bound_assignments(&truths, space.names(), a.k, a.seed)?,
    };
    let report = evaluate_annotations(&predictions, &truths, space.names(), a.k)?.rounded();
    print!("{}", report.to_table());

    if let Some(out) = &a.out {
        write_json(out, &report)?;
        let mut inputs = vec![("labels", a.labels.as_path()), ("truth-bags", a.truth_bags.as_path())];
        if let (Some(p), false) = (&a.predictions, a.upper_bound) {
            inputs.push(("predictions", p.as_path()));
        }
        RunManifest::new(command, jobs, &inputs, vec![out.clone()])?.write(&manifest_path(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MapReport {
    averaging: MapAveraging,
    num_images: usize,
    vocab_size: usize,
    map_at_k: Vec<MapRow>,
}

#[derive(Serialize)]
struct MapRow {
    k: usize,
    map: f64,
}

fn zeroshot(a: &ZeroshotArgs, command: &Command, jobs: usize) -> Result<()> {
    let model = load_model(&a.model)?;
    let space = load_labels(&a.unseen_labels)?;
    let bags = load_bags(&a.bags)?;
    if a.k == 0 {
        return Err(Error::ZeroK.into());
    }
    if a.k > space.len() {
        return Err(Error::KTooLarge { k: a.k, vocab: space.len() }.into());
    }
    // full rankings are kept for MAP@k; the file gets the top k
    let full = bags
        .iter()
        .map(|b| zero_shot_predict(&model, b, &space, space.len()))
        .collect::<mie_core::Result<Vec<_>>>()?;
    let top: Vec<_> = full
        .iter()
        .map(|p| mie_core::inference::PredictionList {
            bag_id: p.bag_id.clone(),
            entries: p.entries[..a.k].to_vec(),
        })
        .collect();
    write_predictions_jsonl(&a.out, &top).with_context(|| format!("writing {}", a.out.display()))?;
    let mut outputs = vec![a.out.clone()];

    if a.map {
        let mut truths = BTreeMap::new();
        for b in &bags {
            match b.labels() {
                [one] => {
                    space.require(one)?;
                    truths.insert(b.id().to_string(), one.clone());
                }
                other => bail!("bag `{}` has {} labels; MAP@k needs exactly one", b.id(), other.len()),
            }
        }
        let rankings: LabelSets = full
            .iter()
            .map(|p| (p.bag_id.clone(), p.labels().map(String::from).collect()))
            .collect();
        let averaging = if a.micro { MapAveraging::Micro } else { MapAveraging::Macro };
        let rows = a
            .map_k
            .iter()
            .map(|&k| {
                let map = map_at_k(&rankings, &truths, k, averaging)?;
                Ok(MapRow {
                    k,
                    map: (map * 100.0).round() / 100.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        println!("{:<8}{:>8}", "k", "MAP@k");
        for r in &rows {
            println!("{:<8}{:>8.2}", r.k, r.map);
        }
        let path = sibling(&a.out, "map.json");
        write_json(
            &path,
            &MapReport {
                averaging,
                num_images: truths.len(),
                vocab_size: space.len(),
                map_at_k: rows,
            },
        )?;
        outputs.push(path);
    }
    RunManifest::new(
        command,
        jobs,
        &[("model", &a.model), ("unseen-labels", &a.unseen_labels), ("bags", &a.bags)],
        outputs,
    )?
    .write(&manifest_path(&a.out))
}

fn synth(a: &SynthArgs, command: &Command, jobs: usize) -> Result<()> {
    let config = SynthConfig {
        vocab_size: a.vocab_size,
        semantic_dim: a.semantic_dim,
        feature_dim: a.feature_dim,
        labels_per_bag: (a.min_labels, a.max_labels),
        distractor_instances: a.distractors,
        noise_sigma: a.noise_sigma,
        num_bags: a.num_bags,
        holdout: match a.heldout_count {
            Some(n) => Holdout::Count(n),
            None => Holdout::Fraction(a.heldout_fraction),
        },
        seed: a.seed,
    };
    let data: SynthDataset = mie_core::generate(&config)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let labels = a.out_dir.join("labels.tsv");
    let train = a.out_dir.join("train.jsonl");
    let heldout = a.out_dir.join("heldout.jsonl");
    data.space()
        .write_tsv(&labels)
        .with_context(|| format!("writing {}", labels.display()))?;
    write_bags_jsonl(&train, &data.train).with_context(|| format!("writing {}", train.display()))?;
    write_bags_jsonl(&heldout, &data.heldout).with_context(|| format!("writing {}", heldout.display()))?;
    eprintln!(
        "{} labels, {} training bags, {} held-out bags",
        data.space().len(),
        data.train.len(),
        data.heldout.len()
    );
    RunManifest::new(command, jobs, &[], vec![labels, train, heldout])?
        .write(&a.out_dir.join("synth.manifest.json"))
}

#[derive(Serialize)]
struct GradcheckReport {
    loss: LossKind,
    points: usize,
    /// Fresh models drawn because a candidate point sat on a tie.
    rejected: usize,
    entries_checked: usize,
    max_rel_error: f64,
}

fn gradcheck(a: &GradcheckArgs, command: &Command, jobs: usize) -> Result<()> {
    let space = load_labels(&a.labels)?;
    let bags = load_bags(&a.bags)?;
    ensure!(!bags.is_empty(), "{} contains no bags", a.bags.display());
    ensure!(a.samples > 0, "--samples must be positive");
    let kinds: Vec<LossKind> = match a.loss {
        Some(k) => vec![k],
        None => LossKind::ALL.to_vec(),
    };

    let mut reports = Vec::new();
    for kind in kinds {
        let config = LossConfig::new(kind, a.margin)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut report = GradcheckReport {
            loss: kind,
            points: 0,
            rejected: 0,
            entries_checked: 0,
            max_rel_error: 0.0,
        };
        for s in 0..a.samples {
            let bag = &bags[s % bags.len()];
            let known: Vec<&String> = bag.labels().iter().filter(|l| space.index_of(l).is_some()).collect();
            let pairs = PairSet::from_names(&space, &known)
                .with_context(|| format!("bag `{}`", bag.id()))?;
            let mut attempt = 0;
            let check = loop {
                let model = initial_model(space.dim(), bag.feature_dim(), rng.random());
                let opts = GradCheckOptions {
                    step: a.step,
                    seed: rng.random(),
                    ..GradCheckOptions::default()
                };
                match finite_difference_check(&model, bag, &space, &pairs, &config, &opts) {
                    Err(Error::NonGenericPoint(_)) if attempt + 1 < a.max_attempts => {
                        attempt += 1;
                        report.rejected += 1;
                    }
                    other => {
                        break other.with_context(|| format!("{kind}: bag `{}` (point {s})", bag.id()))?
                    }
                }
            };
            report.points += 1;
            report.entries_checked += check.entries_checked;
            report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        }
        println!(
            "{kind}: max relative error {:.3e} over {} points ({} entries, {} re-drawn)",
            report.max_rel_error, report.points, report.entries_checked, report.rejected
        );
        reports.push(report);
    }

    if let Some(out) = &a.out {
        write_json(out, &reports)?;
        RunManifest::new(command, jobs, &[("labels", &a.labels), ("bags", &a.bags)], vec![out.clone()])?
            .write(&manifest_path(out))?;
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    ensure!(
        worst <= a.tolerance,
        "max relative error {worst:.3e} exceeds tolerance {:.1e}",
        a.tolerance
    );
    Ok(())
}
