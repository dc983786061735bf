use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use mmgraph::embedding::io::{load_dataset, load_episode, save_dataset, DatasetIndex, EpisodeManifest};
use mmgraph::embedding::{synth_dataset, Episode, SynthConfig};
use mmgraph::gradcheck::default_gradcheck;
use mmgraph::graph;
use mmgraph::model::{
    forward, load_checkpoint, save_checkpoint, CheckpointManifest, ModelConfig, ModelDims, ModelParams, Variant,
};
use mmgraph::train::{self as core_train, ablation_table, evaluate, num_classes, AblationRow, EpochLog, Metrics, TrainConfig};

use crate::{AblateArgs, CliError, EvalArgs, ExportArgs, GenDataArgs, GradCheckArgs, InspectArgs, ModelFlags, TrainArgs};

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn dataset(data: Option<&Path>, seed: u64) -> Result<Vec<Episode>, CliError> {
    match data {
        Some(dir) => Ok(load_dataset(dir)?),
        None => Ok(synth_dataset(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })?),
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let out = required(a.out, "out")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_classes: a.classes.unwrap_or(d.num_classes),
        episodes_per_class: a.episodes.unwrap_or(d.episodes_per_class),
        frames: a.frames.unwrap_or(d.frames),
        patches: a.patches.unwrap_or(d.patches),
        objects_per_frame: a.objects.unwrap_or(d.objects_per_frame),
        visual_dim: a.visual_dim.unwrap_or(d.visual_dim),
        text_dim: a.text_dim.unwrap_or(d.text_dim),
        noise_std: a.noise.unwrap_or(d.noise_std),
        seed: a.seed.unwrap_or(d.seed),
    };
    let episodes = synth_dataset(&cfg)?;
    save_dataset(&out, &episodes, Some(&cfg))?;
    println!("wrote {} episodes to {}", episodes.len(), out.display());
    Ok(())
}

fn train_config(m: &ModelFlags, variant: Option<Variant>, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let mut model = ModelConfig::default();
    model.variant = variant.unwrap_or(model.variant);
    model.graph.spatial_threshold = m.spatial_threshold.unwrap_or(model.graph.spatial_threshold);
    model.graph.semantic_threshold = m.semantic_threshold.unwrap_or(model.graph.semantic_threshold);
    model.prune_threshold = m.prune_threshold.unwrap_or(model.prune_threshold);
    model.add_threshold = m.add_threshold.unwrap_or(model.add_threshold);
    model.weighted_messages = m.weighted_messages.unwrap_or(model.weighted_messages);
    let cfg = TrainConfig {
        epochs: m.epochs.unwrap_or(d.epochs),
        batch_size: m.batch_size.unwrap_or(d.batch_size),
        base_lr: m.lr.unwrap_or(d.base_lr),
        warmup: m.warmup.unwrap_or(d.warmup),
        seed: seed.unwrap_or(d.seed),
        val_fraction: m.val_fraction.unwrap_or(d.val_fraction),
        hidden: m.hidden.unwrap_or(d.hidden),
        layers: m.layers.unwrap_or(d.layers),
        model,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    variant: Variant,
    config: &'a TrainConfig,
    best_epoch: usize,
    history: &'a [EpochLog],
    train: Metrics,
    validation: Option<Metrics>,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = train_config(&a.model, a.variant, a.seed)?;
    let data = dataset(a.data.as_deref(), cfg.seed)?;
    let out_dir = a.out.unwrap_or_else(|| PathBuf::from("run"));
    let outcome = core_train::train(&data, &cfg)?;
    let subset = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let mut train_m = evaluate(&outcome.params, &subset(&outcome.train_indices), &cfg.model)?;
    train_m.loss_history = outcome.loss_history();
    let validation = if outcome.val_indices.is_empty() {
        None
    } else {
        let mut m = evaluate(&outcome.params, &subset(&outcome.val_indices), &cfg.model)?;
        m.loss_history = outcome.history.iter().filter_map(|h| h.val_loss).collect();
        Some(m)
    };
    save_checkpoint(&outcome.params, &cfg.model, &out_dir.join("model.json"))?;
    let report = TrainReport {
        variant: cfg.variant(),
        config: &cfg,
        best_epoch: outcome.best_epoch,
        history: &outcome.history,
        train: train_m,
        validation,
    };
    write_text(&out_dir.join("metrics.json"), &to_json(&report)?)?;

    for h in &outcome.history {
        println!(
            "epoch {:>3}  lr {:.3e}  loss {:.4}  train acc {:.4}  val acc {}",
            h.epoch,
            h.lr,
            h.train_loss,
            h.train_accuracy,
            h.val_accuracy.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!("selected epoch {}", outcome.best_epoch);
    match &report.validation {
        Some(m) => print!("validation\n{}", m.to_table()),
        None => print!("train\n{}", report.train.to_table()),
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let path = required(a.checkpoint, "checkpoint")?;
    let (params, cfg) = load_checkpoint(&path)?;
    let data = dataset(a.data.as_deref(), a.seed.unwrap_or(TrainConfig::default().seed))?;
    let classes = num_classes(&data);
    if classes > params.dims.num_classes {
        return Err(CliError::Data(format!(
            "dataset has {classes} classes, checkpoint predicts {}",
            params.dims.num_classes
        )));
    }
    let m = evaluate(&params, &data, &cfg)?;
    print!("{}", m.to_table());
    if let Some(out) = a.out {
        write_text(&out, &to_json(&m)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationReport<'a> {
    config: &'a TrainConfig,
    seeds: &'a [u64],
    rows: &'a [AblationRow],
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let cfg = train_config(&a.model, None, a.seed)?;
    let seeds = a.seeds.unwrap_or_else(|| vec![1, 2, 3]);
    let data = dataset(a.data.as_deref(), cfg.seed)?;
    let rows = core_train::ablate(&data, &cfg, &seeds)?;
    print!("{}", ablation_table(&rows));
    if let Some(out) = a.out {
        let report = AblationReport {
            config: &cfg,
            seeds: &seeds,
            rows: &rows,
        };
        write_text(&out, &to_json(&report)?)?;
    }
    Ok(())
}

pub fn export_graph(a: ExportArgs) -> Result<(), CliError> {
    let episode = load_episode(&required(a.episode, "episode")?)?;
    let (params, cfg) = match a.checkpoint {
        Some(p) => load_checkpoint(&p)?,
        None => {
            let variant = a.variant.unwrap_or(Variant::Full);
            let dims = ModelDims::new(episode.visual_dim, episode.text_dim, (episode.class_id + 1).max(2));
            let params = ModelParams::init(&dims, variant, a.seed.unwrap_or(TrainConfig::default().seed))?;
            let cfg = ModelConfig {
                variant,
                ..ModelConfig::default()
            };
            (params, cfg)
        }
    };
    let trace = forward(&episode, &params, &cfg)?;
    let text = graph::export_graph(&trace.graph, a.format.as_deref().unwrap_or("dot"))?;
    match a.out {
        Some(out) => write_text(&out, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn grad_check(a: GradCheckArgs) -> Result<(), CliError> {
    let tol = a.tolerance.unwrap_or(1e-3);
    let reports = default_gradcheck(a.seed.unwrap_or(1))?;
    println!("{:<12} {:>6}  {:>13}  {:>12}", "group", "values", "max rel error", "max |grad|");
    let mut worst: f64 = 0.0;
    for r in &reports {
        println!(
            "{:<12} {:>6}  {:>13.3e}  {:>12.3e}",
            r.group, r.values, r.max_rel_error, r.max_abs_grad
        );
        worst = worst.max(r.max_rel_error);
    }
    if worst.is_nan() || worst >= tol {
        return Err(CliError::Numeric(format!("max relative error {worst:.3e} exceeds {tol:e}")));
    }
    println!("max relative error {worst:.3e} < {tol:e}");
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let path = required(a.path, "path")?;
    if path.is_dir() {
        let index_path = path.join(mmgraph::embedding::io::DATASET_INDEX);
        let index: DatasetIndex = serde_json::from_value(read_json(&index_path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", index_path.display())))?;
        let episodes = load_dataset(&path)?;
        print!("{}", to_json(&index)?);
        println!("episodes {}  classes {}", episodes.len(), num_classes(&episodes));
        return Ok(());
    }
    let doc = read_json(&path)?;
    let format = doc.get("format").and_then(Value::as_str).unwrap_or_default().to_string();
    match format.as_str() {
        mmgraph::model::CHECKPOINT_FORMAT => {
            let manifest: CheckpointManifest =
                serde_json::from_value(doc).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let (params, _) = load_checkpoint(&path)?;
            print!("{}", to_json(&manifest)?);
            println!("tensors {}  values {}", params.params().len(), params.num_values());
        }
        mmgraph::embedding::io::EPISODE_FORMAT => {
            let manifest: EpisodeManifest =
                serde_json::from_value(doc).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let episode = load_episode(&path)?;
            print!("{}", to_json(&manifest)?);
            let objects: usize = episode.frames.iter().map(|f| f.regions.len()).sum();
            println!(
                "class {}  frames {}  patches {}  objects {}",
                episode.class_id,
                episode.num_frames(),
                episode.num_patches,
                objects
            );
        }
        other => {
            return Err(CliError::Data(format!(
                "{}: unrecognised manifest format `{other}`",
                path.display()
            )))
        }
    }
    Ok(())
}
