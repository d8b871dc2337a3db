//! The transformer-UNet noise predictor.
//!
//! Latent tokens are the columns of a `C × T_lat` latent, so the network
//! works on `T_lat × C` rows. After an input projection, sinusoidal
//! positions and a time-step embedding, the tokens pass through `n_down`
//! blocks, `n_mid` blocks and `n_up` blocks. Each up block first merges the
//! matching down-block output through a concat-then-linear skip. A block is
//! pre-norm self-attention, then conditioner fusion, then a feed-forward
//! layer, each wrapped in a residual.
//!
//! Conditioners arrive in the embedding space and are mapped to the model
//! width by per-modality projections trained with the network. The object
//! projection has no bias, so an all-zero object track adds exactly nothing
//! in the additive fusion modes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Bound, ParamSet};
use crate::rng::stream;
use crate::tape::{Graph, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    /// `Attn(z, c_v)`
    XattnV,
    /// `Attn(z, [c_v; c_o])`
    XattnConcatVO,
    /// `Attn(z, c_o) + resample(c_v)`
    XattnOAddV,
    /// `Attn(z, c_v) + resample(c_o)`
    XattnVAddO,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::XattnV,
        FusionMode::XattnConcatVO,
        FusionMode::XattnOAddV,
        FusionMode::XattnVAddO,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::XattnV => "XATTN_V",
            FusionMode::XattnConcatVO => "XATTN_CONCAT_VO",
            FusionMode::XattnOAddV => "XATTN_O_ADD_V",
            FusionMode::XattnVAddO => "XATTN_V_ADD_O",
        }
    }

    /// Short table label, `@` marking cross-attention.
    pub fn label(self) -> &'static str {
        match self {
            FusionMode::XattnV => "Z @ V",
            FusionMode::XattnConcatVO => "Z @ (V + O)",
            FusionMode::XattnOAddV => "Z @ O + V",
            FusionMode::XattnVAddO => "Z @ V + O",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

/// Which conditioning modalities a model consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Modalities {
    pub video: bool,
    pub objects: bool,
    pub text: bool,
}

impl Modalities {
    pub const VOT: Modalities = Modalities { video: true, objects: true, text: true };
    pub const VO: Modalities = Modalities { video: true, objects: true, text: false };

    pub fn name(self) -> String {
        let mut parts = Vec::new();
        if self.video {
            parts.push("V");
        }
        if self.objects {
            parts.push("O");
        }
        if self.text {
            parts.push("T");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Modalities {
    type Err = Error;

    /// Accepts `V`, `O`, `T` joined by `+`, e.g. `V+O+T`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modalities { video: false, objects: false, text: false };
        for part in s.split('+').map(str::trim) {
            match part.to_ascii_uppercase().as_str() {
                "V" => m.video = true,
                "O" => m.objects = true,
                "T" => m.text = true,
                _ => return Err(Error::Config(format!("unknown modality {part:?} in {s:?}"))),
            }
        }
        Ok(m)
    }
}

/// Conditioners in the embedding space. Video and object tracks have one row
/// per video frame; the caption is a single row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditionerSet {
    pub video: Option<Matrix>,
    pub objects: Option<Matrix>,
    pub text: Option<Matrix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Conditional,
    /// Every conditioner replaced by its learned null embedding.
    Unconditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub cond_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub n_down: usize,
    pub n_mid: usize,
    pub n_up: usize,
    pub fusion: FusionMode,
    pub modalities: Modalities,
}

impl DenoiserConfig {
    pub fn desk(latent_channels: usize, cond_dim: usize) -> Self {
        Self {
            latent_channels,
            cond_dim,
            d_model: 64,
            heads: 4,
            ff_mult: 4,
            n_down: 2,
            n_mid: 1,
            n_up: 2,
            fusion: FusionMode::XattnVAddO,
            modalities: Modalities::VO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.cond_dim == 0 {
            return Err(Error::Config("latent channels and conditioner width must be positive".into()));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ff_mult == 0 {
            return Err(Error::Config("ff_mult must be positive".into()));
        }
        if self.n_up != self.n_down {
            return Err(Error::Config(format!(
                "skip connections pair down and up blocks ({} vs {})",
                self.n_down, self.n_up
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.n_down + self.n_mid + self.n_up
    }
}

/// Affine standardization of latent values; `z_norm = (z − shift) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub shift: f64,
    pub scale: f64,
}

impl Default for LatentNorm {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl LatentNorm {
    /// Mean and standard deviation over every latent value.
    pub fn fit<'a>(latents: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for m in latents {
            for &v in m.data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Self { shift: mean, scale: var.sqrt().max(1e-6) }
    }

    pub fn normalize(&self, m: &Matrix) -> Matrix {
        m.map(|v| (v - self.shift) / self.scale)
    }

    pub fn denormalize(&self, m: &Matrix) -> Matrix {
        m.map(|v| v * self.scale + self.shift)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub norm: LatentNorm,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Echo {
    config: DenoiserConfig,
    norm: LatentNorm,
}

fn block_name(i: usize, part: &str) -> String {
    format!("blk{i}.{part}")
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let (c, e) = (config.latent_channels, config.cond_dim);
        let ff = d * config.ff_mult;
        let mut rng = stream(seed, "denoiser-init", 0);
        let mut p = ParamSet::new();
        p.insert_xavier("in.w", d, c, &mut rng);
        p.insert("in.b", Matrix::zeros(1, d));
        p.insert_xavier("time.w1", d, d, &mut rng);
        p.insert("time.b1", Matrix::zeros(1, d));
        p.insert_xavier("time.w2", d, d, &mut rng);
        p.insert("time.b2", Matrix::zeros(1, d));
        p.insert_xavier("cond.v.w", d, e, &mut rng);
        p.insert("cond.v.b", Matrix::zeros(1, d));
        p.insert_xavier("cond.o.w", d, e, &mut rng);
        p.insert_xavier("cond.t.w", d, e, &mut rng);
        p.insert("cond.t.b", Matrix::zeros(1, d));
        for name in ["null.v", "null.o", "null.t"] {
            p.insert_normal(name, 1, e, 1.0 / (e as f64).sqrt(), &mut rng);
        }
        for i in 0..config.blocks() {
            for part in ["self", "cross"] {
                for w in ["wq", "wk", "wv", "wo"] {
                    p.insert_xavier(&block_name(i, &format!("{part}.{w}")), d, d, &mut rng);
                }
                p.insert(block_name(i, &format!("{part}.bo")), Matrix::zeros(1, d));
            }
            p.insert_xavier(&block_name(i, "ff.w1"), ff, d, &mut rng);
            p.insert(block_name(i, "ff.b1"), Matrix::zeros(1, ff));
            p.insert_xavier(&block_name(i, "ff.w2"), d, ff, &mut rng);
            p.insert(block_name(i, "ff.b2"), Matrix::zeros(1, d));
        }
        for j in 0..config.n_up {
            p.insert_xavier(&format!("skip{j}.w"), d, 2 * d, &mut rng);
            p.insert(format!("skip{j}.b"), Matrix::zeros(1, d));
        }
        p.insert_xavier("out.w", c, d, &mut rng);
        p.insert("out.b", Matrix::zeros(1, c));
        Ok(Self { config, norm: LatentNorm::default(), params: p })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let echo = serde_json::to_string(&Echo { config: self.config, norm: self.norm }).expect("echo serializes");
        self.params.save(path, &echo)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, echo) = ParamSet::load(path)?;
        let echo: Echo = serde_json::from_str(&echo)
            .map_err(|e| Error::Data(format!("{}: bad model header: {e}", path.display())))?;
        let fresh = Denoiser::new(echo.config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(Error::Data(format!(
                "{}: expected {} parameters, found {}",
                path.display(),
                fresh.params.len(),
                params.len()
            )));
        }
        for (name, m) in fresh.params.iter() {
            match params.get(name) {
                Some(v) if v.shape() == m.shape() => {}
                _ => return Err(Error::Data(format!("{}: parameter {name} missing or misshapen", path.display()))),
            }
        }
        if !params.is_finite() {
            return Err(Error::Data(format!("{}: non-finite parameters", path.display())));
        }
        Ok(Self { config: echo.config, norm: echo.norm, params })
    }

    /// Shape and presence checks for one conditioner set.
    pub fn check_conditioners(&self, cond: &ConditionerSet) -> Result<()> {
        let m = self.config.modalities;
        let e = self.config.cond_dim;
        let slots = [
            ("video", m.video, &cond.video),
            ("object", m.objects, &cond.objects),
            ("text", m.text, &cond.text),
        ];
        for (name, wanted, slot) in slots {
            if !wanted {
                continue;
            }
            let Some(c) = slot else {
                return Err(Error::Conditioning(format!("model uses the {name} conditioner but none was given")));
            };
            if c.cols() != e || c.rows() == 0 {
                return Err(Error::Conditioning(format!(
                    "{name} conditioner is {}×{}, expected n×{e} with n ≥ 1",
                    c.rows(),
                    c.cols()
                )));
            }
            if !c.is_finite() {
                return Err(Error::Conditioning(format!("{name} conditioner has non-finite values")));
            }
        }
        if let Some(t) = &cond.text {
            if m.text && t.rows() != 1 {
                return Err(Error::Conditioning(format!("text conditioner must be one row, got {}", t.rows())));
            }
        }
        if let (true, true, Some(v), Some(o)) = (m.video, m.objects, &cond.video, &cond.objects) {
            if v.rows() != o.rows() {
                return Err(Error::Conditioning(format!(
                    "object track has {} frames but video has {}",
                    o.rows(),
                    v.rows()
                )));
            }
        }
        Ok(())
    }

    /// Predicted noise in token layout (`T_lat × C`) for normalized tokens.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &Matrix,
        t: usize,
        cond: &ConditionerSet,
        branch: Branch,
    ) -> Result<Var> {
        let cfg = &self.config;
        if tokens.cols() != cfg.latent_channels || tokens.rows() == 0 {
            return Err(Error::Contract(format!(
                "latent tokens are {}×{}, model expects n×{}",
                tokens.rows(),
                tokens.cols(),
                cfg.latent_channels
            )));
        }
        if branch == Branch::Conditional {
            self.check_conditioners(cond)?;
        }
        let n = tokens.rows();
        let d = cfg.d_model;

        let x = g.constant(tokens.clone());
        let mut h = g.linear(x, p.var("in.w"), Some(p.var("in.b")));
        let pe = g.constant(positional_encoding(n, d));
        h = g.add(h, pe);
        let temb = g.constant(timestep_embedding(t, d));
        let temb = g.linear(temb, p.var("time.w1"), Some(p.var("time.b1")));
        let temb = g.silu(temb);
        let temb = g.linear(temb, p.var("time.w2"), Some(p.var("time.b2")));
        h = g.add_row(h, temb);

        let fusion = self.fusion_inputs(g, p, cond, branch, n);

        let mut skips = Vec::with_capacity(cfg.n_down);
        let mut block = 0;
        for _ in 0..cfg.n_down {
            h = self.block(g, p, block, h, &fusion);
            skips.push(h);
            block += 1;
        }
        for _ in 0..cfg.n_mid {
            h = self.block(g, p, block, h, &fusion);
            block += 1;
        }
        for j in 0..cfg.n_up {
            let skip = skips.pop().expect("one skip per up block");
            let merged = g.concat_cols(&[h, skip]);
            h = g.linear(merged, p.var(&format!("skip{j}.w")), Some(p.var(&format!("skip{j}.b"))));
            h = self.block(g, p, block, h, &fusion);
            block += 1;
        }
        let h = g.layer_norm(h, LN_EPS);
        Ok(g.linear(h, p.var("out.w"), Some(p.var("out.b"))))
    }

    /// Projected key/value sequence and optional additive track.
    fn fusion_inputs(&self, g: &mut Graph, p: &Bound, cond: &ConditionerSet, branch: Branch, n: usize) -> Fusion {
        let m = self.config.modalities;
        let live = branch == Branch::Conditional;
        let slot = |g: &mut Graph, present: Option<&Matrix>, use_it: bool, null: &str| -> Var {
            match present {
                Some(c) if live && use_it => g.constant(c.clone()),
                _ => p.var(null),
            }
        };
        let v_raw = slot(g, cond.video.as_ref(), m.video, "null.v");
        let o_raw = slot(g, cond.objects.as_ref(), m.objects, "null.o");
        let v = g.linear(v_raw, p.var("cond.v.w"), Some(p.var("cond.v.b")));
        let o = g.linear(o_raw, p.var("cond.o.w"), None);

        let (mut keys, add) = match self.config.fusion {
            FusionMode::XattnV => (vec![v], None),
            FusionMode::XattnConcatVO => (vec![v, o], None),
            FusionMode::XattnOAddV => (vec![o], Some(v)),
            FusionMode::XattnVAddO => (vec![v], Some(o)),
        };
        if m.text {
            let t_raw = slot(g, cond.text.as_ref(), true, "null.t");
            keys.push(g.linear(t_raw, p.var("cond.t.w"), Some(p.var("cond.t.b"))));
        }
        let kv = if keys.len() == 1 { keys[0] } else { g.concat_rows(&keys) };
        let add = add.map(|a| {
            let frames = g.shape(a).0;
            let r = g.constant(resample_matrix(frames, n));
            g.matmul(r, a)
        });
        Fusion { kv, add }
    }

    fn block(&self, g: &mut Graph, p: &Bound, i: usize, h: Var, fusion: &Fusion) -> Var {
        let heads = self.config.heads;
        let x = g.layer_norm(h, LN_EPS);
        let a = attention_on_tape(g, p, &block_name(i, "self"), x, x, heads);
        let h = g.add(h, a);

        let x = g.layer_norm(h, LN_EPS);
        let mut f = attention_on_tape(g, p, &block_name(i, "cross"), x, fusion.kv, heads);
        if let Some(add) = fusion.add {
            f = g.add(f, add);
        }
        let h = g.add(h, f);

        let x = g.layer_norm(h, LN_EPS);
        let y = g.linear(x, p.var(&block_name(i, "ff.w1")), Some(p.var(&block_name(i, "ff.b1"))));
        let y = g.silu(y);
        let y = g.linear(y, p.var(&block_name(i, "ff.w2")), Some(p.var(&block_name(i, "ff.b2"))));
        g.add(h, y)
    }

    /// Noise prediction for a `C × T_lat` normalized latent.
    pub fn predict(&self, z_t: &Matrix, t: usize, cond: &ConditionerSet, branch: Branch) -> Result<Matrix> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &p, &z_t.transpose(), t, cond, branch)?;
        Ok(g.value(out).transpose())
    }

    /// Block `block`'s cross-attention alone: queries from the rows of `x`
    /// (`n × d_model`), keys and values from the rows of `ctx`.
    pub fn cross_attention(&self, block: usize, x: &Matrix, ctx: &Matrix) -> Result<Matrix> {
        let d = self.config.d_model;
        if block >= self.config.blocks() || x.cols() != d || ctx.cols() != d || ctx.rows() == 0 {
            return Err(Error::Contract(format!(
                "cross-attention needs block < {} and {d}-wide non-empty inputs",
                self.config.blocks()
            )));
        }
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let cv = g.constant(ctx.clone());
        let out = attention_on_tape(&mut g, &p, &block_name(block, "cross"), xv, cv, self.config.heads);
        Ok(g.value(out).clone())
    }
}

struct Fusion {
    kv: Var,
    add: Option<Var>,
}

/// Multi-head attention with `q` from `x` and keys/values from `ctx`.
fn attention_on_tape(g: &mut Graph, p: &Bound, prefix: &str, x: Var, ctx: Var, heads: usize) -> Var {
    let d = g.shape(x).1;
    let dh = d / heads;
    let q = g.linear(x, p.var(&format!("{prefix}.wq")), None);
    let k = g.linear(ctx, p.var(&format!("{prefix}.wk")), None);
    let v = g.linear(ctx, p.var(&format!("{prefix}.wv")), None);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, hd * dh, dh), g.slice_cols(k, hd * dh, dh), g.slice_cols(v, hd * dh, dh))
        };
        let s = g.matmul_t(qh, kh);
        let s = g.scale(s, scale);
        let a = g.softmax_rows(s);
        outs.push(g.matmul(a, vh));
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    g.linear(o, p.var(&format!("{prefix}.wo")), Some(p.var(&format!("{prefix}.bo"))))
}

/// Transformer sinusoidal positions, `n × d`.
pub fn positional_encoding(n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for pos in 0..n {
        fill_sinusoid(m.row_mut(pos), pos as f64);
    }
    m
}

/// Sinusoidal embedding of a diffusion step, `1 × d`.
pub fn timestep_embedding(t: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(1, d);
    fill_sinusoid(m.row_mut(0), t as f64);
    m
}

fn fill_sinusoid(row: &mut [f64], x: f64) {
    let d = row.len();
    let half = d / 2;
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half.max(1) as f64).exp();
        row[i] = (x * freq).sin();
        row[half + i] = (x * freq).cos();
    }
}

/// Linear-interpolation matrix `R` (`target × frames`) with first and last
/// rows aligned to the first and last frames. A single target row sits at
/// the middle of the track.
pub fn resample_matrix(frames: usize, target: usize) -> Matrix {
    assert!(frames >= 1 && target >= 1, "resampling needs non-empty tracks");
    let mut r = Matrix::zeros(target, frames);
    for i in 0..target {
        let pos = if target == 1 {
            (frames - 1) as f64 / 2.0
        } else {
            i as f64 * (frames - 1) as f64 / (target - 1) as f64
        };
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if lo + 1 < frames && frac > 0.0 {
            r[(i, lo)] = 1.0 - frac;
            r[(i, lo + 1)] = frac;
        } else {
            r[(i, lo.min(frames - 1))] = 1.0;
        }
    }
    r
}

pub fn resample_conditioner(c: &Matrix, target_len: usize) -> Result<Matrix> {
    if c.rows() == 0 || target_len == 0 {
        return Err(Error::Contract("resampling needs at least one frame and one target row".into()));
    }
    if c.rows() == target_len {
        return Ok(c.clone());
    }
    Ok(resample_matrix(c.rows(), target_len).matmul(c))
}

/// Single-head softmax attention on plain matrices.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let s = q.matmul_t(k).scale(1.0 / (q.cols() as f64).sqrt());
    crate::tape::softmax_rows(&s).matmul(v)
}
