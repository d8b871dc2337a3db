//! Batch front end: `synth`, `train`, `generate`, `evaluate`, `ablate`.
//!
//! Every command writes into a fresh run directory holding `config` (the
//! canonical key listing), `manifest` (JSON with content hashes) and its
//! artifacts. `manifest.content_hash` covers everything except wall-clock
//! time, so identical `(config, seed)` reruns produce identical hashes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codec::vae::Vae;
use crate::config::{Cell, ExperimentConfig};
use crate::dataset::{clip_id, load_dataset, read_pcm, save_dataset, write_pcm, MANIFEST as DATASET_MANIFEST};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::pipeline::{build_vae, split_seeds, synth_split, Context};
use crate::rng::sha256_hex;
use crate::scene::Scene;

pub const MANIFEST: &str = "manifest";
pub const CONFIG: &str = "config";
pub const REPORT: &str = "report";
const MODEL_FILE: &str = "model.ckpt";
const VAE_FILE: &str = "vae.ckpt";

#[derive(Debug, Parser)]
#[command(name = "vtalab", version, about = "Video-to-audio latent diffusion experiments on scripted scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Configuration file (flat `key = value`, `include = path` allowed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured experiment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` assignments applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of scenes (defaults to data.n_train).
        #[arg(long)]
        n: Option<usize>,
        /// Draw from the held-out split instead of the training split.
        #[arg(long)]
        held_out: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the codec (if configured) and the conditional denoiser.
    Train {
        #[command(flatten)]
        common: Common,
        /// A `synth` run directory or a bare dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample one waveform per scene with a trained checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint; the codec is read from `vae.ckpt` beside it.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ignore every conditioner and sample from the null embeddings.
        #[arg(long)]
        unconditional: bool,
        /// Only the first N scenes.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score generated clips against their reference scenes.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// A `generate` run directory.
        #[arg(long)]
        generated: PathBuf,
        /// The dataset the clips were generated for.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every configured modality/fusion cell.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Training dataset; synthesized from the config when absent.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Held-out dataset; synthesized from the config when absent.
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub seed: u64,
    pub config: String,
    /// Content hashes of the inputs, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// Content hashes of every file written, keyed by relative path.
    pub outputs: BTreeMap<String, String>,
    pub metrics: Value,
    pub content_hash: String,
    pub wall_clock_s: f64,
    /// Input locations, keyed by role. Not hashed.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Relative path → file hash for every file under `root`, skipping `skip`.
fn tree_hashes(root: &Path, skip: &[&str]) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, skip: &[&str], out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if skip.contains(&rel.as_str()) {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, skip, out)?;
            } else {
                out.insert(rel, file_hash(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, skip, &mut out)?;
    Ok(out)
}

/// One hash over a whole directory tree.
pub fn tree_hash(root: &Path) -> Result<String> {
    let mut s = String::new();
    for (k, v) in tree_hashes(root, &[])? {
        let _ = writeln!(s, "{k}\t{v}");
    }
    Ok(sha256_hex(s.as_bytes()))
}

struct RunDir {
    root: PathBuf,
    started: Instant,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        if root.exists() {
            let empty = fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_none();
            if !empty {
                return Err(Error::Data(format!("output directory {} already exists and is not empty", root.display())));
            }
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), started: Instant::now() })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn mkdir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Writes `config`, then the manifest atomically (temp file + rename).
    fn finish(
        self,
        command: &str,
        cfg: &ExperimentConfig,
        inputs: BTreeMap<String, String>,
        artifacts: BTreeMap<String, String>,
        metrics: Value,
    ) -> Result<RunManifest> {
        let config = cfg.to_text();
        self.write(CONFIG, config.as_bytes())?;
        let outputs = tree_hashes(&self.root, &[MANIFEST, "manifest.tmp"])?;
        let hashed = json!({
            "command": command,
            "config": config,
            "inputs": inputs,
            "outputs": outputs,
            "metrics": metrics,
        });
        let manifest = RunManifest {
            format: "vtalab-run/1".into(),
            command: command.into(),
            seed: cfg.seed,
            content_hash: sha256_hex(hashed.to_string().as_bytes()),
            config,
            inputs,
            outputs,
            metrics,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            artifacts,
        };
        let tmp = self.path("manifest.tmp");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        let dst = self.path(MANIFEST);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
        Ok(manifest)
    }
}

/// A `synth` run keeps its scenes in `dataset/`; bare dataset directories
/// are accepted too.
pub fn dataset_dir(path: &Path) -> PathBuf {
    let nested = path.join("dataset");
    if nested.join(DATASET_MANIFEST).is_file() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn load_scenes(path: &Path, cfg: &ExperimentConfig) -> Result<(Vec<Scene>, String)> {
    let dir = dataset_dir(path);
    let scenes = load_dataset(&dir)?;
    if scenes.is_empty() {
        return Err(Error::Data(format!("dataset {} is empty", dir.display())));
    }
    if let Some(s) = scenes.iter().find(|s| s.script.sample_rate_hz != cfg.scene.sample_rate_hz) {
        return Err(Error::Data(format!(
            "dataset sample rate {} Hz differs from the configured {} Hz",
            s.script.sample_rate_hz, cfg.scene.sample_rate_hz
        )));
    }
    Ok((scenes, tree_hash(&dir)?))
}

fn report_metrics(r: &EvalReport) -> Value {
    json!({
        "clips": r.summary.clips,
        "fd": r.summary.fd,
        "mean_kl": r.summary.mean_kl,
        "mean_av_align": r.summary.mean_av_align,
    })
}

pub fn cmd_synth(common: &Common, n: Option<usize>, held_out: bool, out: &Path) -> Result<RunManifest> {
    let cfg = load_config(common)?;
    let n = n.unwrap_or(if held_out { cfg.n_eval } else { cfg.n_train });
    if n == 0 {
        return Err(Error::Config("synth needs at least one scene".into()));
    }
    let scenes = synth_split(&cfg, n, held_out)?;
    let run = RunDir::create(out)?;
    save_dataset(&scenes, &run.path("dataset"))?;
    let (train, eval) = split_seeds(cfg.seed);
    let metrics = json!({ "scenes": n, "held_out": held_out, "base_seed": if held_out { eval } else { train } });
    log::info!("wrote {n} scenes to {}", out.display());
    run.finish("synth", &cfg, BTreeMap::new(), BTreeMap::new(), metrics)
}

pub fn cmd_train(common: &Common, data: &Path, out: &Path) -> Result<RunManifest> {
    let cfg = load_config(common)?;
    let (scenes, data_hash) = load_scenes(data, &cfg)?;
    let run = RunDir::create(out)?;
    let ckpt = run.mkdir("checkpoints")?;
    let vae = build_vae(&cfg, &scenes)?;
    vae.save(&ckpt.join(VAE_FILE))?;
    let ctx = Context::new(cfg.clone(), vae)?;
    let items = ctx.train_items(&scenes)?;
    log::info!("training {} on {} scenes for {} steps", cfg.modalities, scenes.len(), cfg.train_steps);
    let mut save = |step: usize, m: &Denoiser| m.save(&ckpt.join(format!("step_{step:06}.ckpt")));
    let (model, log) = ctx.train_model(&items, &mut save)?;
    model.save(&ckpt.join(MODEL_FILE))?;
    run.write("train_log.tsv", log.to_tsv().as_bytes())?;
    let losses = log.losses();
    let tail = losses.len().min(50);
    let metrics = json!({
        "steps": losses.len(),
        "final_loss_mean": if tail == 0 { Value::Null } else { json!(losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64) },
    });
    let inputs = BTreeMap::from([("dataset".to_string(), data_hash)]);
    let artifacts = BTreeMap::from([("dataset".to_string(), data.display().to_string())]);
    run.finish("train", &cfg, inputs, artifacts, metrics)
}

fn load_checkpoint(path: &Path) -> Result<(Denoiser, Vae, String)> {
    let model = Denoiser::load(path)?;
    let vae_path = path.parent().unwrap_or(Path::new(".")).join(VAE_FILE);
    let vae = Vae::load(&vae_path)?;
    let hash = sha256_hex(format!("{}{}", file_hash(path)?, file_hash(&vae_path)?).as_bytes());
    Ok((model, vae, hash))
}

fn write_generated(run: &RunDir, ids: &[String], waves: &[Vec<f32>], mels: &[crate::matrix::Matrix], audio: &str) -> Result<()> {
    let dir = run.mkdir(audio)?;
    for ((id, w), m) in ids.iter().zip(waves).zip(mels) {
        write_pcm(&dir.join(format!("{id}.pcm")), w)?;
        m.save(&dir.join(format!("{id}.mel")))?;
    }
    Ok(())
}

pub fn cmd_generate(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    unconditional: bool,
    limit: Option<usize>,
) -> Result<RunManifest> {
    let mut cfg = load_config(common)?;
    cfg.unconditional |= unconditional;
    let (model, vae, ckpt_hash) = load_checkpoint(checkpoint)?;
    if !cfg.unconditional && (model.config.modalities != cfg.modalities || model.config.fusion != cfg.fusion) {
        return Err(Error::Config(format!(
            "checkpoint was trained for {} with {}, configuration asks for {} with {}",
            model.config.modalities,
            model.config.fusion.name(),
            cfg.modalities,
            cfg.fusion.name()
        )));
    }
    let (mut scenes, data_hash) = load_scenes(data, &cfg)?;
    if let Some(n) = limit {
        scenes.truncate(n);
    }
    let ctx = Context::new(cfg.clone(), vae)?;
    let run = RunDir::create(out)?;
    let ids: Vec<String> = (0..scenes.len()).map(clip_id).collect();
    let mut waves = Vec::with_capacity(scenes.len());
    let mut mels = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let (w, m) = if cfg.unconditional {
            ctx.generate_unconditional(&model, &s.script)?
        } else {
            ctx.generate(&model, &s.script)?
        };
        waves.push(w);
        mels.push(m.values);
    }
    write_generated(&run, &ids, &waves, &mels, "audio")?;
    let inputs = BTreeMap::from([("checkpoint".to_string(), ckpt_hash), ("dataset".to_string(), data_hash)]);
    let artifacts = BTreeMap::from([
        ("checkpoint".to_string(), checkpoint.display().to_string()),
        ("dataset".to_string(), data.display().to_string()),
    ]);
    let metrics = json!({ "clips": scenes.len(), "unconditional": cfg.unconditional });
    run.finish("generate", &cfg, inputs, artifacts, metrics)
}

/// Clip ids of the `.pcm` files in a generated run's `audio/`.
fn generated_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let audio = dir.join("audio");
    let entries = fs::read_dir(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut ids = BTreeSet::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(&audio, e))?.path();
        if p.extension().is_some_and(|x| x == "pcm") {
            if let Some(stem) = p.file_stem() {
                ids.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(ids)
}

pub fn cmd_evaluate(common: &Common, generated: &Path, reference: &Path, out: &Path) -> Result<RunManifest> {
    let cfg = load_config(common)?;
    let (scenes, ref_hash) = load_scenes(reference, &cfg)?;
    let gen_ids = generated_ids(generated)?;
    let ref_ids: BTreeSet<String> = (0..scenes.len()).map(clip_id).collect();
    let missing: Vec<&String> = ref_ids.difference(&gen_ids).collect();
    let extra: Vec<&String> = gen_ids.difference(&ref_ids).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Data(format!(
            "clip ids differ: missing from generated {missing:?}; missing from reference {extra:?}"
        )));
    }
    let ids: Vec<String> = ref_ids.into_iter().collect();
    let audio = generated.join("audio");
    let waves = ids.iter().map(|id| read_pcm(&audio.join(format!("{id}.pcm")))).collect::<Result<Vec<_>>>()?;
    let ctx = Context::new(cfg.clone(), Vae::identity(cfg.mel))?;
    let report = ctx.evaluate(&ids, &waves, &scenes)?;
    let run = RunDir::create(out)?;
    run.write(REPORT, report.to_text().as_bytes())?;
    let inputs = BTreeMap::from([("generated".to_string(), tree_hash(&audio)?), ("reference".to_string(), ref_hash)]);
    let artifacts = BTreeMap::from([
        ("generated".to_string(), generated.display().to_string()),
        ("reference".to_string(), reference.display().to_string()),
    ]);
    run.finish("evaluate", &cfg, inputs, artifacts, report_metrics(&report))
}

/// Outcome of one ablation cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: std::result::Result<EvalReport, CellFailure>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub message: String,
    pub exit_code: i32,
}

pub fn cell_dir_name(cell: &Cell) -> String {
    format!("{}_{}", cell.modalities.name().replace('+', ""), cell.fusion.name())
}

fn run_cell(
    run: &RunDir,
    cfg: &ExperimentConfig,
    cell: Cell,
    vae: &Vae,
    train: &[Scene],
    eval: &[Scene],
) -> Result<EvalReport> {
    let dir = format!("cells/{}", cell_dir_name(&cell));
    let ctx = Context::new(cfg.with_cell(cell), vae.clone())?;
    let items = ctx.train_items(train)?;
    log::info!("cell {}: training for {} steps", cell.name(), cfg.train_steps);
    let (model, log) = ctx.train_model(&items, &mut |_, _| Ok(()))?;
    run.mkdir(&format!("{dir}/checkpoints"))?;
    model.save(&run.path(&format!("{dir}/checkpoints/{MODEL_FILE}")))?;
    run.write(&format!("{dir}/train_log.tsv"), log.to_tsv().as_bytes())?;
    log::info!("cell {}: generating {} clips", cell.name(), eval.len());
    let ids: Vec<String> = (0..eval.len()).map(clip_id).collect();
    let mut waves = Vec::with_capacity(eval.len());
    let mut mels = Vec::with_capacity(eval.len());
    for s in eval {
        let (w, m) = ctx.generate(&model, &s.script)?;
        waves.push(w);
        mels.push(m.values);
    }
    write_generated(run, &ids, &waves, &mels, &format!("{dir}/audio"))?;
    let report = ctx.evaluate(&ids, &waves, eval)?;
    run.write(&format!("{dir}/{REPORT}"), report.to_text().as_bytes())?;
    Ok(report)
}

/// Table with one row per cell; failed cells keep their row.
pub fn ablation_table(results: &[CellResult]) -> String {
    let mut s = String::from("cell\tmodalities\tfusion\tfd\tkl\tav_align\tstatus\n");
    for r in results {
        let m = r.cell.modalities.name();
        let f = r.cell.fusion.name();
        match &r.outcome {
            Ok(rep) => {
                let x = &rep.summary;
                let _ = writeln!(s, "{}\t{m}\t{f}\t{:.6}\t{:.6}\t{:.6}\tok", r.cell.name(), x.fd, x.mean_kl, x.mean_av_align);
            }
            Err(e) => {
                let _ = writeln!(s, "{}\t{m}\t{f}\tn/a\tn/a\tn/a\tfailed: {}", r.cell.name(), e.message.replace(['\t', '\n'], " "));
            }
        }
    }
    s
}

/// Grouped bar chart, one panel per metric, one bar per cell.
pub fn ablation_svg(results: &[CellResult]) -> String {
    const PANEL_W: f64 = 260.0;
    const PANEL_H: f64 = 200.0;
    const TOP: f64 = 40.0;
    const LEFT: f64 = 20.0;
    let metrics: [(&str, fn(&EvalReport) -> f64); 3] = [
        ("FD (lower is better)", |r| r.summary.fd),
        ("KL (lower is better)", |r| r.summary.mean_kl),
        ("AV-Align (higher is better)", |r| r.summary.mean_av_align),
    ];
    let palette = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f"];
    let width = LEFT + metrics.len() as f64 * (PANEL_W + LEFT);
    let height = TOP + PANEL_H + 40.0 + 18.0 * results.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, (title, get)) in metrics.iter().enumerate() {
        let x0 = LEFT + p as f64 * (PANEL_W + LEFT);
        let values: Vec<Option<f64>> = results.iter().map(|r| r.outcome.as_ref().ok().map(get)).collect();
        let max = values.iter().flatten().copied().fold(0.0, f64::max).max(1e-12);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#, x0 + PANEL_W / 2.0, TOP - 15.0);
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
            y = TOP + PANEL_H,
            x2 = x0 + PANEL_W
        );
        let slot = PANEL_W / results.len().max(1) as f64;
        for (i, v) in values.iter().enumerate() {
            let x = x0 + i as f64 * slot + slot * 0.15;
            let w = slot * 0.7;
            match v {
                Some(v) => {
                    let h = PANEL_H * (v / max).clamp(0.0, 1.0);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.1}" y="{:.1}" width="{w:.1}" height="{h:.1}" fill="{}"/>"#,
                        TOP + PANEL_H - h,
                        palette[i % palette.len()]
                    );
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#, x + w / 2.0, TOP + PANEL_H - h - 4.0);
                }
                None => {
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">failed</text>"#, x + w / 2.0, TOP + PANEL_H - 4.0);
                }
            }
        }
    }
    for (i, r) in results.iter().enumerate() {
        let y = TOP + PANEL_H + 30.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{}" width="12" height="12" fill="{}"/>"#, y - 10.0, palette[i % palette.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{} ({})</text>"#, LEFT + 18.0, r.cell.modalities.name(), r.cell.fusion.label());
    }
    s.push_str("</svg>\n");
    s
}

pub fn cmd_ablate(common: &Common, out: &Path, train_data: Option<&Path>, eval_data: Option<&Path>) -> Result<(RunManifest, Vec<CellResult>)> {
    let cfg = load_config(common)?;
    if cfg.cells.is_empty() {
        return Err(Error::Config("ablate.cells is empty".into()));
    }
    let mut inputs = BTreeMap::new();
    let mut artifacts = BTreeMap::new();
    let mut split = |path: Option<&Path>, n: usize, held_out: bool, role: &str| -> Result<Vec<Scene>> {
        match path {
            Some(p) => {
                let (scenes, h) = load_scenes(p, &cfg)?;
                inputs.insert(role.to_string(), h);
                artifacts.insert(role.to_string(), p.display().to_string());
                Ok(scenes)
            }
            None => synth_split(&cfg, n, held_out),
        }
    };
    let train = split(train_data, cfg.n_train, false, "train_data")?;
    let eval = split(eval_data, cfg.n_eval, true, "eval_data")?;
    if train.is_empty() || eval.len() < 2 {
        return Err(Error::Config("ablation needs training scenes and at least 2 held-out scenes".into()));
    }
    let run = RunDir::create(out)?;
    let vae = build_vae(&cfg, &train)?;
    vae.save(&run.path(VAE_FILE))?;
    let mut results = Vec::with_capacity(cfg.cells.len());
    for &cell in &cfg.cells {
        let outcome = run_cell(&run, &cfg, cell, &vae, &train, &eval)
            .map_err(|e| CellFailure { message: e.to_string(), exit_code: e.exit_code() });
        if let Err(e) = &outcome {
            log::error!("cell {} failed: {}", cell.name(), e.message);
        }
        results.push(CellResult { cell, outcome });
    }
    let table = ablation_table(&results);
    run.write(REPORT, table.as_bytes())?;
    run.write("ablation.svg", ablation_svg(&results).as_bytes())?;
    let cells: Vec<Value> = results
        .iter()
        .map(|r| match &r.outcome {
            Ok(rep) => json!({ "cell": r.cell.name(), "status": "ok", "summary": report_metrics(rep) }),
            Err(e) => json!({ "cell": r.cell.name(), "status": "failed", "error": e.message }),
        })
        .collect();
    let (train_seed, eval_seed) = split_seeds(cfg.seed);
    let metrics = json!({
        "shared_seed": cfg.seed,
        "train_scenes": train.len(),
        "eval_scenes": eval.len(),
        "train_split_seed": train_seed,
        "eval_split_seed": eval_seed,
        "cells": cells,
    });
    let manifest = run.finish("ablate", &cfg, inputs, artifacts, metrics)?;
    Ok((manifest, results))
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Synth { common, n, held_out, out } => cmd_synth(common, *n, *held_out, out),
        Command::Train { common, data, out } => cmd_train(common, data, out),
        Command::Generate { common, checkpoint, data, out, unconditional, limit } => {
            cmd_generate(common, checkpoint, data, out, *unconditional, *limit)
        }
        Command::Evaluate { common, generated, reference, out } => cmd_evaluate(common, generated, reference, out),
        Command::Ablate { common, out, train_data, eval_data } => {
            let (manifest, results) = cmd_ablate(common, out, train_data.as_deref(), eval_data.as_deref())?;
            print!("{}", ablation_table(&results));
            if let Some((cell, e)) = results.iter().find_map(|r| r.outcome.as_ref().err().map(|e| (r.cell, e))) {
                return Err(Error::CellFailed {
                    cell: cell.name(),
                    message: format!("{}; partial table written to {}", e.message, out.join(REPORT).display()),
                    exit_code: e.exit_code,
                });
            }
            Ok(manifest)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(m) => {
            println!("{}", m.content_hash);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
