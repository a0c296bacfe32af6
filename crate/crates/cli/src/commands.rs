use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nanyin_core::config::{named_mode, ConfigError, PipelineConfig};
use nanyin_core::ensemble::generate_ensemble;
use nanyin_core::gnn::{load_checkpoint, save_checkpoint, split_dataset, train_stage1, ModelParams, PreparedGraph};
use nanyin_core::graph::{monophonic, serialize_graph, EdgeKind, OrnamentType};
use nanyin_core::metrics::{frequency_weights, mode_aware_f1, ornament_rationality_score, weighted_f1, MetricsError};
use nanyin_core::midi_io::{parse_midi, write_midi};
use nanyin_core::nianzhi::{pseudo_labels, train_detector, NianzhiDetector};
use nanyin_core::synth::{graph_for, melody_with_runs};
use nanyin_core::tokenizer::{pitch_class_index, primary_track, Mode, Tokenizer, UNK_CLASS};
use nanyin_core::{Instrument, NoteEvent, NoteRole, Score};

use crate::{Cli, Command, EvalArgs, GenerateArgs, GraphArgs, Style, TokenizeArgs, TrainArgs};

/// Bad flags or overrides; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const MODEL_FILE: &str = "model.json";
const DETECTOR_FILE: &str = "detector.json";
/// Notes per synthetic training piece.
const SYNTHETIC_NOTES: usize = 32;
/// Share of synthetic notes expanded into nianzhi runs.
const SYNTHETIC_RUN_RATE: f64 = 0.3;

pub fn run(cli: Cli) -> Result<()> {
    let text = match &cli.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
        None => None,
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = PipelineConfig::resolve(text.as_deref(), &overrides).map_err(|e| match e {
        ConfigError::BadOverride(_) | ConfigError::UnknownKey(_) => anyhow::Error::new(UsageError(e.to_string())),
        other => anyhow::Error::new(other),
    })?;
    info!("resolved config:\n{}", cfg.to_toml());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cli.command {
        Command::Tokenize(a) => tokenize(&cfg, a),
        Command::Graph(a) => graph(&cfg, a, &mut rng),
        Command::Train(a) => train(&cfg, a, &mut rng),
        Command::Generate(a) => generate(&cfg, a, &mut rng),
        Command::Eval(a) => eval(&cfg, a),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn resolve_mode(cfg: &PipelineConfig, flag: &Option<String>) -> Result<Mode> {
    match flag {
        Some(name) => named_mode(name).ok_or_else(|| UsageError(format!("unknown mode `{name}`")).into()),
        None => Ok(cfg.mode()),
    }
}

fn read_score(path: &Path) -> Result<Score> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_midi(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_out(path: &Option<std::path::PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn tokenize(cfg: &PipelineConfig, a: TokenizeArgs) -> Result<()> {
    let mode = resolve_mode(cfg, &a.mode)?;
    let score = read_score(&a.input)?;
    let seq = Tokenizer::new(mode, cfg.tokenizer).encode(&score)?;
    info!("{} notes -> {} tokens", primary_track(&score).len(), seq.len());
    let text = if a.json { seq.to_json() + "\n" } else { seq.to_text() };
    write_out(&a.out, &text)
}

fn graph(cfg: &PipelineConfig, a: GraphArgs, rng: &mut ChaCha8Rng) -> Result<()> {
    let mode = resolve_mode(cfg, &a.mode)?;
    let score = read_score(&a.input)?;
    let g = graph_for(primary_track(&score), &mode, &cfg.graph, rng)?;
    if let Some(p) = &a.out {
        fs::write(p, serialize_graph(&g)).with_context(|| format!("writing {}", p.display()))?;
    }
    let summary = json!({
        "notes": g.notes.len(),
        "ornaments": g.ornaments.len(),
        "techs": g.techs.len(),
        "temporal_edges": g.edges_of(EdgeKind::Temporal).count(),
        "decorative_edges": g.edges_of(EdgeKind::Decorative).count(),
        "trigger_edges": g.edges_of(EdgeKind::Trigger).count(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn training_lines(a: &TrainArgs, mode: &Mode, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<NoteEvent>>> {
    if a.inputs.is_empty() {
        if a.synthetic == 0 {
            bail!(UsageError("no training inputs and --synthetic 0".into()));
        }
        info!("training on {} synthetic pieces", a.synthetic);
        return Ok((0..a.synthetic)
            .map(|_| melody_with_runs(SYNTHETIC_NOTES, SYNTHETIC_RUN_RATE, mode, rng))
            .collect());
    }
    a.inputs
        .iter()
        .map(|p| Ok(monophonic(primary_track(&read_score(p)?))))
        .filter(|l: &Result<Vec<NoteEvent>>| l.as_ref().map_or(true, |l| !l.is_empty()))
        .collect()
}

fn fit_detector(cfg: &PipelineConfig, lines: &[Vec<NoteEvent>], rng: &mut ChaCha8Rng) -> Result<(NianzhiDetector, Vec<f64>)> {
    if cfg.detector.epochs == 0 {
        warn!("detector epochs is 0; using an untrained nianzhi detector");
        return Ok((NianzhiDetector::init(cfg.detector.detector.clone(), rng), Vec::new()));
    }
    let data: Vec<_> = lines.iter().map(|l| pseudo_labels(l, &cfg.tokenizer)).collect();
    Ok(train_detector(&data, &cfg.detector, rng)?)
}

fn train(cfg: &PipelineConfig, a: TrainArgs, rng: &mut ChaCha8Rng) -> Result<()> {
    let mode = resolve_mode(cfg, &a.mode)?;
    let lines = training_lines(&a, &mode, rng)?;
    let mut prepared = Vec::with_capacity(lines.len());
    for line in &lines {
        let g = graph_for(line, &mode, &cfg.graph, rng)?;
        prepared.push(PreparedGraph::new(&g, &mode)?);
    }
    let (train_set, val_set) = split_dataset(&prepared, cfg.train.train_fraction, rng);
    info!("pitch model: {} training / {} validation graphs", train_set.len(), val_set.len());
    let model = ModelParams::init(cfg.model.clone(), rng)?;
    let (model, report) = train_stage1(model, &train_set, &val_set, &cfg.train, rng)?;
    let (detector, det_losses) = fit_detector(cfg, &lines, rng)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join(MODEL_FILE), save_checkpoint(&model, &cfg.train))?;
    fs::write(a.out.join(DETECTOR_FILE), serde_json::to_string(&detector)?)?;
    fs::write(a.out.join("loss.csv"), report.to_csv())?;
    let mut det_csv = String::from("epoch,loss\n");
    for (e, l) in det_losses.iter().enumerate() {
        det_csv.push_str(&format!("{e},{l}\n"));
    }
    fs::write(a.out.join("detector_loss.csv"), det_csv)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    let last = report.epochs.last();
    let summary = json!({
        "epochs": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "final_train_ce": last.map(|e| e.train_ce),
        "stopped_early": report.stopped_early,
        "detector_final_loss": det_losses.last(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_models(cfg: &PipelineConfig, dir: &Option<std::path::PathBuf>, mode: &Mode, rng: &mut ChaCha8Rng) -> Result<(ModelParams, NianzhiDetector)> {
    if let Some(dir) = dir {
        let text = fs::read_to_string(dir.join(MODEL_FILE)).with_context(|| format!("reading {}", dir.join(MODEL_FILE).display()))?;
        let (model, _) = load_checkpoint(&text)?;
        let det_text = fs::read_to_string(dir.join(DETECTOR_FILE))
            .with_context(|| format!("reading {}", dir.join(DETECTOR_FILE).display()))?;
        let mut detector: NianzhiDetector = serde_json::from_str(&det_text).context("parsing detector")?;
        detector.store.reindex();
        return Ok((model, detector));
    }
    warn!("no checkpoint given; using an untrained pitch model and a detector fitted on synthetic runs");
    let model = ModelParams::init(cfg.model.clone(), rng)?;
    let lines: Vec<_> = (0..cfg.detector_sequences)
        .map(|_| melody_with_runs(SYNTHETIC_NOTES, SYNTHETIC_RUN_RATE, mode, rng))
        .collect();
    let (detector, _) = fit_detector(cfg, &lines, rng)?;
    Ok((model, detector))
}

fn generate(cfg: &PipelineConfig, a: GenerateArgs, rng: &mut ChaCha8Rng) -> Result<()> {
    let mode = resolve_mode(cfg, &a.mode)?;
    let input = read_score(&a.skeleton)?;
    let line = primary_track(&input).to_vec();
    if line.is_empty() {
        bail!("skeleton {} has no notes", a.skeleton.display());
    }
    let skeleton = Score::single_track(Instrument::Pipa, line);
    let (model, detector) = load_models(cfg, &a.checkpoint, &mode, rng)?;
    let mut ens_cfg = cfg.generate.clone();
    if let Some(style) = a.ornament_style {
        ens_cfg.style = match style {
            Style::Standard => OrnamentType::Standard,
            Style::Light => OrnamentType::LightAppoggiatura,
            Style::Melodic => OrnamentType::MelodicIntegration,
        };
    }
    ens_cfg.special_notes |= a.special_notes;
    let out = generate_ensemble(&skeleton, &model, &detector, &mode, &ens_cfg, rng)?;
    fs::write(&a.out, write_midi(&out.score)).with_context(|| format!("writing {}", a.out.display()))?;
    let report = json!({
        "seed": cfg.seed,
        "notes": out.score.note_count(),
        "ors": ornament_rationality_score(&out.score, &cfg.eval),
        "ensemble": out.report,
    });
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    info!("wrote {} notes in {} tracks to {}", out.score.note_count(), out.score.tracks.len(), a.out.display());
    Ok(())
}

/// Main notes of the principal track.
fn main_line(score: &Score) -> Vec<NoteEvent> {
    primary_track(score).iter().filter(|n| n.role == NoteRole::Main).copied().collect()
}

fn eval(cfg: &PipelineConfig, a: EvalArgs) -> Result<()> {
    let mode = resolve_mode(cfg, &a.mode)?;
    let pred_score = read_score(&a.pred)?;
    let reference = main_line(&read_score(&a.reference)?);
    if reference.is_empty() {
        bail!("reference {} has no notes", a.reference.display());
    }
    let pred = main_line(&pred_score);
    // Pair each reference note with the predicted main note at its onset;
    // a missing note counts as UNK.
    let mut matched = 0usize;
    let (mut preds, mut targets) = (Vec::new(), Vec::new());
    for r in &reference {
        targets.push(pitch_class_index(r.pitch, &mode));
        match pred.iter().find(|p| (p.onset - r.onset).abs() < 1e-6) {
            Some(p) => {
                matched += 1;
                preds.push(pitch_class_index(p.pitch, &mode));
            }
            None => preds.push(UNK_CLASS),
        }
    }
    let weights = frequency_weights(&targets);
    let wf1 = weighted_f1(&preds, &targets, &weights)?;
    let maf1 = match mode_aware_f1(&preds, &targets, &weights, &mode) {
        Ok(v) => Some(v),
        Err(MetricsError::NoInModeTargets) => None,
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "reference_notes": reference.len(),
        "matched_onsets": matched,
        "weighted_f1": wf1,
        "mode_aware_f1": maf1,
        "ors": ornament_rationality_score(&pred_score, &cfg.eval),
    });
    write_out(&a.out, &(serde_json::to_string_pretty(&report)? + "\n"))
}
