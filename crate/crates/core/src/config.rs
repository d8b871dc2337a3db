//! Experiment configuration as flat `key = value` text.
//!
//! `#` starts a comment. `include = path` splices another file in place,
//! resolved relative to the including file; later assignments win.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::mel::MelParams;
use crate::codec::vae::TinyVaeShape;
use crate::diffusion::model::{DenoiserConfig, FusionMode, Modalities};
use crate::error::{Error, Result};
use crate::scene::GenerationBounds;

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelProfile {
    /// Small widths that train on a laptop CPU.
    Desk,
    /// The full-size widths; kept for reference, far too slow here.
    Full,
}

impl FromStr for ModelProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown model profile {s:?} (desk | full)"))),
        }
    }
}

impl ModelProfile {
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::Full => "full",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VaeKind {
    Identity,
    Tiny,
}

impl FromStr for VaeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "tiny" => Ok(Self::Tiny),
            _ => Err(Error::Config(format!("unknown VAE kind {s:?} (identity | tiny)"))),
        }
    }
}

impl VaeKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Tiny => "tiny",
        }
    }
}

/// One ablation cell: a modality set with the fusion mode that consumes it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub modalities: Modalities,
    pub fusion: FusionMode,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}:{}", self.modalities, self.fusion.name())
    }
}

impl FromStr for Cell {
    type Err = Error;

    /// `MODALITIES:FUSION`, e.g. `V+O:XATTN_V_ADD_O`.
    fn from_str(s: &str) -> Result<Self> {
        let (m, f) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("ablation cell {s:?} is not MODALITIES:FUSION")))?;
        Ok(Self { modalities: m.parse()?, fusion: f.parse()? })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub embedding_dim: usize,
    pub scene: GenerationBounds,
    pub mel: MelParams,
    pub vae_kind: VaeKind,
    pub vae_shape: TinyVaeShape,
    pub vae_steps: usize,
    pub vae_lr: f64,
    pub vae_beta_kl: f64,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub profile: ModelProfile,
    pub d_model: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub n_down: usize,
    pub n_mid: usize,
    pub n_up: usize,
    pub fusion: FusionMode,
    pub modalities: Modalities,
    /// Allows an empty modality set; every conditioner is then its null.
    pub unconditional: bool,
    pub guidance_alpha: f64,
    pub dropout_p: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub grounding_noise: f64,
    pub vocoder_iters: usize,
    pub eval_window_s: f64,
    pub eval_peak_threshold: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub cells: Vec<Cell>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DenoiserConfig::desk(1, 1);
        Self {
            seed: 0,
            embedding_dim: 64,
            scene: GenerationBounds { min_duration_s: 2.0, max_duration_s: 2.0, sample_rate_hz: 8_000, ..Default::default() },
            mel: MelParams {
                sample_rate_hz: 8_000,
                n_fft: 512,
                hop: 256,
                n_mels: 16,
                fmin_hz: 0.0,
                fmax_hz: 4_000.0,
                log_floor_db: -80.0,
            },
            vae_kind: VaeKind::Identity,
            vae_shape: TinyVaeShape::default(),
            vae_steps: 300,
            vae_lr: 3e-3,
            vae_beta_kl: 1e-3,
            schedule_steps: 300,
            beta_start: 1e-4,
            beta_end: 0.02,
            profile: ModelProfile::Desk,
            d_model: d.d_model,
            heads: d.heads,
            ff_mult: d.ff_mult,
            n_down: d.n_down,
            n_mid: d.n_mid,
            n_up: d.n_up,
            fusion: d.fusion,
            modalities: d.modalities,
            unconditional: false,
            guidance_alpha: 3.0,
            dropout_p: 0.1,
            train_steps: 2000,
            batch_size: 4,
            lr: 1e-3,
            checkpoint_every: 500,
            grounding_noise: 0.0,
            vocoder_iters: 32,
            eval_window_s: 0.1,
            eval_peak_threshold: 0.5,
            n_train: 200,
            n_eval: 50,
            cells: ["V:XATTN_V", "V+O:XATTN_V_ADD_O", "V+T:XATTN_V", "V+O+T:XATTN_V_ADD_O"]
                .iter()
                .map(|c| c.parse().expect("default cells parse"))
                .collect(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl ExperimentConfig {
    /// Parses configuration text. Relative includes resolve against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        collect(text, base, &mut pairs, 0)?;
        let mut cfg = Self::default();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies one assignment.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scene;
        let m = &mut self.mel;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "embedding.dim" => self.embedding_dim = parse(key, v)?,
            "scene.min_events" => s.min_events = parse(key, v)?,
            "scene.max_events" => s.max_events = parse(key, v)?,
            "scene.min_duration_s" => s.min_duration_s = parse(key, v)?,
            "scene.max_duration_s" => s.max_duration_s = parse(key, v)?,
            "scene.fps" => s.fps = parse(key, v)?,
            "scene.sample_rate_hz" => {
                s.sample_rate_hz = parse(key, v)?;
                m.sample_rate_hz = s.sample_rate_hz;
            }
            "scene.labels" => s.labels = v.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect(),
            "scene.min_event_s" => s.min_event_s = parse(key, v)?,
            "scene.max_event_s" => s.max_event_s = parse(key, v)?,
            "scene.min_gap_s" => s.min_gap_s = parse(key, v)?,
            "scene.lead_in_s" => s.lead_in_s = parse(key, v)?,
            "mel.n_fft" => m.n_fft = parse(key, v)?,
            "mel.hop" => m.hop = parse(key, v)?,
            "mel.n_mels" => m.n_mels = parse(key, v)?,
            "mel.fmin_hz" => m.fmin_hz = parse(key, v)?,
            "mel.fmax_hz" => m.fmax_hz = parse(key, v)?,
            "mel.floor_db" => m.log_floor_db = parse(key, v)?,
            "vae.kind" => self.vae_kind = v.parse()?,
            "vae.channels" => self.vae_shape.channels = parse(key, v)?,
            "vae.hidden" => self.vae_shape.hidden = parse(key, v)?,
            "vae.downsampling" => self.vae_shape.downsampling = parse(key, v)?,
            "vae.steps" => self.vae_steps = parse(key, v)?,
            "vae.lr" => self.vae_lr = parse(key, v)?,
            "vae.beta_kl" => self.vae_beta_kl = parse(key, v)?,
            "schedule.steps" => self.schedule_steps = parse(key, v)?,
            "schedule.beta_start" => self.beta_start = parse(key, v)?,
            "schedule.beta_end" => self.beta_end = parse(key, v)?,
            "model.profile" => self.profile = v.parse()?,
            "model.d_model" => self.d_model = parse(key, v)?,
            "model.heads" => self.heads = parse(key, v)?,
            "model.ff_mult" => self.ff_mult = parse(key, v)?,
            "model.n_down" => self.n_down = parse(key, v)?,
            "model.n_mid" => self.n_mid = parse(key, v)?,
            "model.n_up" => self.n_up = parse(key, v)?,
            "model.fusion" => self.fusion = v.parse()?,
            "model.modalities" => {
                self.modalities = if v == "none" || v.is_empty() {
                    Modalities { video: false, objects: false, text: false }
                } else {
                    v.parse()?
                }
            }
            "model.unconditional" => self.unconditional = parse_bool(key, v)?,
            "guidance.alpha" => self.guidance_alpha = parse(key, v)?,
            "train.dropout_p" => self.dropout_p = parse(key, v)?,
            "train.steps" => self.train_steps = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "grounding.noise" => self.grounding_noise = parse(key, v)?,
            "vocoder.iters" => self.vocoder_iters = parse(key, v)?,
            "eval.window_s" => self.eval_window_s = parse(key, v)?,
            "eval.peak_threshold" => self.eval_peak_threshold = parse(key, v)?,
            "data.n_train" => self.n_train = parse(key, v)?,
            "data.n_eval" => self.n_eval = parse(key, v)?,
            "ablate.cells" => {
                self.cells = v.split(',').map(str::trim).filter(|c| !c.is_empty()).map(str::parse).collect::<Result<_>>()?
            }
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.mel.validate()?;
        if self.mel.sample_rate_hz != self.scene.sample_rate_hz {
            return Err(Error::Config("mel and scene sample rates differ".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding.dim must be positive".into()));
        }
        check_cell(self.modalities, self.fusion, self.unconditional)?;
        for c in &self.cells {
            check_cell(c.modalities, c.fusion, false)?;
        }
        if !(self.guidance_alpha.is_finite() && self.guidance_alpha >= 0.0) {
            return Err(Error::Config("guidance.alpha must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("train.dropout_p must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.grounding_noise) {
            return Err(Error::Config("grounding.noise must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.vocoder_iters == 0 {
            return Err(Error::Config("train.batch_size and vocoder.iters must be positive".into()));
        }
        if !(self.eval_window_s > 0.0) {
            return Err(Error::Config("eval.window_s must be positive".into()));
        }
        self.denoiser(1, 1).validate()
    }

    /// Denoiser widths for the active profile.
    pub fn denoiser(&self, latent_channels: usize, cond_dim: usize) -> DenoiserConfig {
        let (d_model, heads, ff_mult, n_down, n_mid, n_up) = match self.profile {
            ModelProfile::Desk => (self.d_model, self.heads, self.ff_mult, self.n_down, self.n_mid, self.n_up),
            ModelProfile::Full => (1024, 8, 4, 2, 1, 2),
        };
        DenoiserConfig {
            latent_channels,
            cond_dim,
            d_model,
            heads,
            ff_mult,
            n_down,
            n_mid,
            n_up,
            fusion: self.fusion,
            modalities: self.modalities,
        }
    }

    /// Copy with one ablation cell's modalities and fusion mode.
    pub fn with_cell(&self, cell: Cell) -> Self {
        Self { modalities: cell.modalities, fusion: cell.fusion, unconditional: false, ..self.clone() }
    }

    /// Canonical listing of every key, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let s = &self.scene;
        let m = &self.mel;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("embedding.dim", self.embedding_dim.to_string());
        put("scene.min_events", s.min_events.to_string());
        put("scene.max_events", s.max_events.to_string());
        put("scene.min_duration_s", s.min_duration_s.to_string());
        put("scene.max_duration_s", s.max_duration_s.to_string());
        put("scene.fps", s.fps.to_string());
        put("scene.sample_rate_hz", s.sample_rate_hz.to_string());
        put("scene.labels", s.labels.join(","));
        put("scene.min_event_s", s.min_event_s.to_string());
        put("scene.max_event_s", s.max_event_s.to_string());
        put("scene.min_gap_s", s.min_gap_s.to_string());
        put("scene.lead_in_s", s.lead_in_s.to_string());
        put("mel.n_fft", m.n_fft.to_string());
        put("mel.hop", m.hop.to_string());
        put("mel.n_mels", m.n_mels.to_string());
        put("mel.fmin_hz", m.fmin_hz.to_string());
        put("mel.fmax_hz", m.fmax_hz.to_string());
        put("mel.floor_db", m.log_floor_db.to_string());
        put("vae.kind", self.vae_kind.name().into());
        put("vae.channels", self.vae_shape.channels.to_string());
        put("vae.hidden", self.vae_shape.hidden.to_string());
        put("vae.downsampling", self.vae_shape.downsampling.to_string());
        put("vae.steps", self.vae_steps.to_string());
        put("vae.lr", self.vae_lr.to_string());
        put("vae.beta_kl", self.vae_beta_kl.to_string());
        put("schedule.steps", self.schedule_steps.to_string());
        put("schedule.beta_start", self.beta_start.to_string());
        put("schedule.beta_end", self.beta_end.to_string());
        put("model.profile", self.profile.name().into());
        put("model.d_model", self.d_model.to_string());
        put("model.heads", self.heads.to_string());
        put("model.ff_mult", self.ff_mult.to_string());
        put("model.n_down", self.n_down.to_string());
        put("model.n_mid", self.n_mid.to_string());
        put("model.n_up", self.n_up.to_string());
        put("model.fusion", self.fusion.name().into());
        put("model.modalities", self.modalities.name());
        put("model.unconditional", self.unconditional.to_string());
        put("guidance.alpha", self.guidance_alpha.to_string());
        put("train.dropout_p", self.dropout_p.to_string());
        put("train.steps", self.train_steps.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", self.lr.to_string());
        put("train.checkpoint_every", self.checkpoint_every.to_string());
        put("grounding.noise", self.grounding_noise.to_string());
        put("vocoder.iters", self.vocoder_iters.to_string());
        put("eval.window_s", self.eval_window_s.to_string());
        put("eval.peak_threshold", self.eval_peak_threshold.to_string());
        put("data.n_train", self.n_train.to_string());
        put("data.n_eval", self.n_eval.to_string());
        put("ablate.cells", self.cells.iter().map(Cell::name).collect::<Vec<_>>().join(","));
        out
    }

    /// The bare assignments of [`ExperimentConfig::to_text`].
    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

/// Fusion modes that read the object track need it in the modality set;
/// plain video cross-attention must not silently drop a given object track.
fn check_cell(m: Modalities, fusion: FusionMode, unconditional: bool) -> Result<()> {
    let any = m.video || m.objects || m.text;
    if !any && !unconditional {
        return Err(Error::Config("modality set is empty; set model.unconditional = true to allow it".into()));
    }
    match fusion {
        FusionMode::XattnV if m.objects => Err(Error::Config(format!(
            "fusion {} ignores the object track but modalities are {m}",
            fusion.name()
        ))),
        FusionMode::XattnV => Ok(()),
        _ if !(m.video && m.objects) => Err(Error::Config(format!(
            "fusion {} needs both V and O, modalities are {m}",
            fusion.name()
        ))),
        _ => Ok(()),
    }
}

fn collect(text: &str, base: &Path, out: &mut Vec<(String, String)>, depth: usize) -> Result<()> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config("include nesting is too deep (cycle?)".into()));
    }
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "include" {
            let path: PathBuf = base.join(v);
            let inner = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            collect(&inner, path.parent().unwrap_or(base), out, depth + 1)?;
        } else {
            out.push((k.to_string(), v.to_string()));
        }
    }
    Ok(())
}
