//! The latent space: a tiny chunked VAE over mel frames, plus an identity
//! configuration in which the latent is the mel spectrogram itself.
//!
//! The tiny VAE reads `downsampling` consecutive mel frames as one flattened
//! chunk (a strided convolution with kernel equal to stride) and maps it
//! through a one-hidden-layer tanh MLP to `C` means and `C` log-variances.
//! Mel values are normalized with `x / (−floor/2) + 1`, so the floor maps to
//! −1 and 0 dB maps to +1. The final partial chunk is padded with the floor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::mel::{MelParams, MelSpectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Adam, ParamSet};
use crate::rng::{stream, Rng};
use crate::tape::{Graph, Var};

/// Stand-in for a log-variance of −∞: `exp(LOGVAR_NEG_INF / 2)` is exactly 0.
pub const LOGVAR_NEG_INF: f64 = -1.0e4;

/// `C × T_lat` latent with the frame count of the mel it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent {
    pub values: Matrix,
    pub downsampling: usize,
    pub mel_frames: usize,
}

impl Latent {
    pub fn channels(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    /// Matrix blob followed by `u32` downsampling and `u32` mel frame count.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res = self.values.write_to(&mut w).and_then(|_| {
            w.write_all(&(self.downsampling as u32).to_le_bytes())?;
            w.write_all(&(self.mel_frames as u32).to_le_bytes())?;
            w.flush()
        });
        res.map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let res = (|| {
            let values = Matrix::read_from(&mut r)?;
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            let downsampling = u32::from_le_bytes(b) as usize;
            r.read_exact(&mut b)?;
            let mel_frames = u32::from_le_bytes(b) as usize;
            Ok(Latent { values, downsampling, mel_frames })
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

pub fn latent_frames(mel_frames: usize, downsampling: usize) -> usize {
    mel_frames.div_ceil(downsampling)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyVaeShape {
    pub channels: usize,
    pub hidden: usize,
    pub downsampling: usize,
}

impl Default for TinyVaeShape {
    fn default() -> Self {
        Self { channels: 8, hidden: 64, downsampling: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyVae {
    pub mel: MelParams,
    pub shape: TinyVaeShape,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Vae {
    Identity { mel: MelParams },
    Tiny(TinyVae),
}

#[derive(Serialize, Deserialize)]
struct VaeEcho {
    kind: String,
    mel: MelParams,
    shape: Option<TinyVaeShape>,
}

const PARAM_NAMES: [&str; 8] = ["enc.w1", "enc.b1", "enc.w2", "enc.b2", "dec.w1", "dec.b1", "dec.w2", "dec.b2"];

impl TinyVae {
    pub fn new(mel: MelParams, shape: TinyVaeShape, seed: u64) -> Result<Self> {
        mel.validate()?;
        if shape.channels == 0 || shape.hidden == 0 || shape.downsampling == 0 {
            return Err(Error::Config("VAE channels, hidden width and downsampling must be positive".into()));
        }
        let chunk = mel.n_mels * shape.downsampling;
        let (c, h) = (shape.channels, shape.hidden);
        let mut rng = stream(seed, "vae-init", 0);
        let mut params = ParamSet::new();
        params.insert_xavier("enc.w1", h, chunk, &mut rng);
        params.insert("enc.b1", Matrix::zeros(1, h));
        params.insert_xavier("enc.w2", 2 * c, h, &mut rng);
        params.insert("enc.b2", Matrix::zeros(1, 2 * c));
        params.insert_xavier("dec.w1", h, c, &mut rng);
        params.insert("dec.b1", Matrix::zeros(1, h));
        params.insert_xavier("dec.w2", chunk, h, &mut rng);
        params.insert("dec.b2", Matrix::zeros(1, chunk));
        Ok(Self { mel, shape, params })
    }

    fn chunk_len(&self) -> usize {
        self.mel.n_mels * self.shape.downsampling
    }

    fn half_range(&self) -> f64 {
        -self.mel.log_floor_db / 2.0
    }

    /// `T_lat × (ds · n_mels)` normalized chunks, padded with the floor.
    fn chunks(&self, mel: &MelSpectrogram) -> Result<Matrix> {
        check_mel(mel, &self.mel)?;
        let ds = self.shape.downsampling;
        let n_mels = self.mel.n_mels;
        let t_lat = latent_frames(mel.frames(), ds);
        let scale = self.half_range();
        let mut x = Matrix::filled(t_lat, self.chunk_len(), -1.0);
        for t in 0..mel.frames() {
            let row = x.row_mut(t / ds);
            let off = (t % ds) * n_mels;
            for b in 0..n_mels {
                row[off + b] = mel.values[(b, t)] / scale + 1.0;
            }
        }
        Ok(x)
    }

    fn unchunk(&self, y: &Matrix, mel_frames: usize) -> MelSpectrogram {
        let ds = self.shape.downsampling;
        let n_mels = self.mel.n_mels;
        let scale = self.half_range();
        let floor = self.mel.log_floor_db;
        let mut values = Matrix::zeros(n_mels, mel_frames);
        for t in 0..mel_frames {
            let row = y.row(t / ds);
            let off = (t % ds) * n_mels;
            for b in 0..n_mels {
                values[(b, t)] = ((row[off + b] - 1.0) * scale).max(floor);
            }
        }
        MelSpectrogram { values, params: self.mel }
    }
}

struct Vars {
    w: [Var; 8],
}

impl Vars {
    fn from_slice(v: &[Var]) -> Self {
        Self { w: [v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]] }
    }

    fn encode(&self, g: &mut Graph, x: Var, channels: usize) -> (Var, Var) {
        let h = g.linear(x, self.w[0], Some(self.w[1]));
        let h = g.tanh(h);
        let out = g.linear(h, self.w[2], Some(self.w[3]));
        let mean = g.slice_cols(out, 0, channels);
        let logvar = g.slice_cols(out, channels, channels);
        (mean, logvar)
    }

    fn decode(&self, g: &mut Graph, z: Var) -> Var {
        let h = g.linear(z, self.w[4], Some(self.w[5]));
        let h = g.tanh(h);
        g.linear(h, self.w[6], Some(self.w[7]))
    }
}

/// Reconstruction MSE plus `beta · KL` on normalized chunks, with the
/// reparameterization noise `eps` (`T_lat × C`) supplied by the caller.
fn loss_on_tape(g: &mut Graph, vars: &Vars, x: &Matrix, eps: &Matrix, beta: f64, channels: usize) -> Var {
    let x = g.constant(x.clone());
    let (mean, logvar) = vars.encode(g, x, channels);
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps.clone());
    let noise = g.mul(std, e);
    let z = g.add(mean, noise);
    let y = vars.decode(g, z);
    let diff = g.sub(y, x);
    let sq = g.square(diff);
    let recon = g.mean(sq);
    let kl = kl_on_tape(g, mean, logvar);
    let kl = g.scale(kl, beta);
    g.add(recon, kl)
}

/// Mean over coordinates of `½(exp(lv) + m² − 1 − lv)`.
fn kl_on_tape(g: &mut Graph, mean: Var, logvar: Var) -> Var {
    let ev = g.exp(logvar);
    let m2 = g.square(mean);
    let a = g.add(ev, m2);
    let b = g.sub(a, logvar);
    let s = g.mean(b);
    let one = g.constant(Matrix::filled(1, 1, 1.0));
    let s = g.sub(s, one);
    g.scale(s, 0.5)
}

/// Closed-form `KL(N(mean, exp(logvar)) ‖ N(0, 1))` averaged over coordinates.
pub fn kl_divergence(mean: &Matrix, logvar: &Matrix) -> f64 {
    assert_eq!(mean.shape(), logvar.shape(), "mean/logvar shape mismatch");
    if mean.is_empty() {
        return 0.0;
    }
    let total: f64 = mean
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum();
    total / mean.len() as f64
}

fn check_mel(mel: &MelSpectrogram, expected: &MelParams) -> Result<()> {
    if mel.params != *expected || mel.n_mels() != expected.n_mels {
        return Err(Error::Contract(format!(
            "mel analysed with {:?}, VAE expects {:?}",
            mel.params, expected
        )));
    }
    Ok(())
}

impl Vae {
    pub fn identity(mel: MelParams) -> Self {
        Vae::Identity { mel }
    }

    pub fn mel_params(&self) -> &MelParams {
        match self {
            Vae::Identity { mel } => mel,
            Vae::Tiny(t) => &t.mel,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Vae::Identity { mel } => mel.n_mels,
            Vae::Tiny(t) => t.shape.channels,
        }
    }

    pub fn downsampling(&self) -> usize {
        match self {
            Vae::Identity { .. } => 1,
            Vae::Tiny(t) => t.shape.downsampling,
        }
    }

    /// Returns `(mean, logvar)`.
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<(Latent, Latent)> {
        match self {
            Vae::Identity { mel: p } => {
                check_mel(mel, p)?;
                let mean = Latent { values: mel.values.clone(), downsampling: 1, mel_frames: mel.frames() };
                let logvar = Latent {
                    values: Matrix::filled(mel.n_mels(), mel.frames(), LOGVAR_NEG_INF),
                    ..mean.clone()
                };
                Ok((mean, logvar))
            }
            Vae::Tiny(t) => {
                let x = t.chunks(mel)?;
                let mut g = Graph::new();
                let vars: Vec<Var> = t.params.values().iter().map(|m| g.constant(m.clone())).collect();
                let vars = Vars::from_slice(&vars);
                let xv = g.constant(x);
                let (m, lv) = vars.encode(&mut g, xv, t.shape.channels);
                let wrap = |v: &Matrix| Latent {
                    values: v.transpose(),
                    downsampling: t.shape.downsampling,
                    mel_frames: mel.frames(),
                };
                Ok((wrap(g.value(m)), wrap(g.value(lv))))
            }
        }
    }

    pub fn decode(&self, z: &Latent) -> Result<MelSpectrogram> {
        if !z.values.is_finite() {
            return Err(Error::Contract("latent contains non-finite values".into()));
        }
        if z.channels() != self.channels()
            || z.downsampling != self.downsampling()
            || z.frames() != latent_frames(z.mel_frames, z.downsampling)
        {
            return Err(Error::Contract(format!(
                "latent {}×{} (ds {}, {} mel frames) does not fit a VAE with {} channels and ds {}",
                z.channels(),
                z.frames(),
                z.downsampling,
                z.mel_frames,
                self.channels(),
                self.downsampling()
            )));
        }
        match self {
            Vae::Identity { mel } => {
                let floor = mel.log_floor_db;
                Ok(MelSpectrogram { values: z.values.map(|v| v.max(floor)), params: *mel })
            }
            Vae::Tiny(t) => {
                let mut g = Graph::new();
                let vars: Vec<Var> = t.params.values().iter().map(|m| g.constant(m.clone())).collect();
                let vars = Vars::from_slice(&vars);
                let zv = g.constant(z.values.transpose());
                let y = vars.decode(&mut g, zv);
                Ok(t.unchunk(g.value(y), z.mel_frames))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (echo, params) = match self {
            Vae::Identity { mel } => (VaeEcho { kind: "identity".into(), mel: *mel, shape: None }, ParamSet::new()),
            Vae::Tiny(t) => (
                VaeEcho { kind: "tiny".into(), mel: t.mel, shape: Some(t.shape) },
                t.params.clone(),
            ),
        };
        params.save(path, &serde_json::to_string(&echo).expect("echo serializes"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, echo) = ParamSet::load(path)?;
        let echo: VaeEcho = serde_json::from_str(&echo)
            .map_err(|e| Error::Data(format!("{}: bad VAE header: {e}", path.display())))?;
        match (echo.kind.as_str(), echo.shape) {
            ("identity", _) => Ok(Vae::Identity { mel: echo.mel }),
            ("tiny", Some(shape)) => {
                let fresh = TinyVae::new(echo.mel, shape, 0)?;
                for (name, m) in fresh.params.iter() {
                    match params.get(name) {
                        Some(p) if p.shape() == m.shape() && p.is_finite() => {}
                        _ => return Err(Error::Data(format!("{}: parameter {name} missing or malformed", path.display()))),
                    }
                }
                Ok(Vae::Tiny(TinyVae { mel: echo.mel, shape, params }))
            }
            (kind, _) => Err(Error::Data(format!("{}: unknown VAE kind {kind:?}", path.display()))),
        }
    }
}

pub fn vae_encode(mel: &MelSpectrogram, vae: &Vae) -> Result<(Latent, Latent)> {
    vae.encode(mel)
}

pub fn vae_decode(z: &Latent, vae: &Vae) -> Result<MelSpectrogram> {
    vae.decode(z)
}

/// `mean + exp(logvar/2) ⊙ ε` with seeded standard-normal `ε`.
pub fn vae_sample(mean: &Latent, logvar: &Latent, seed: u64) -> Latent {
    assert_eq!(mean.values.shape(), logvar.values.shape(), "mean/logvar shape mismatch");
    let mut rng = stream(seed, "vae-sample", 0);
    let values = mean.values.zip_map(&logvar.values, |m, lv| {
        let e: f64 = StandardNormal.sample(&mut rng);
        m + (lv / 2.0).exp() * e
    });
    Latent { values, ..mean.clone() }
}

/// Loss value and gradients aligned with `vae.params` order.
pub fn vae_loss(mel: &MelSpectrogram, vae: &TinyVae, beta_kl: f64, seed: u64) -> Result<(f64, Vec<Matrix>)> {
    if !(beta_kl >= 0.0) {
        return Err(Error::Contract(format!("beta_kl must be non-negative, got {beta_kl}")));
    }
    let x = vae.chunks(mel)?;
    let mut rng = stream(seed, "vae-loss", 0);
    let eps = normal_matrix(x.rows(), vae.shape.channels, &mut rng);
    let mut g = Graph::new();
    let bound = vae.params.bind(&mut g);
    let vars = Vars { w: PARAM_NAMES.map(|n| bound.var(n)) };
    let loss = loss_on_tape(&mut g, &vars, &x, &eps, beta_kl, vae.shape.channels);
    let value = g.scalar(loss);
    let grads = bound.gradients(&g.backward(loss));
    Ok((value, grads))
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta_kl: f64,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 300, lr: 3e-3, beta_kl: 1e-3, seed: 0 }
    }
}

/// Adam on one randomly chosen clip per step. Returns the per-step losses.
pub fn train_vae(vae: &mut TinyVae, mels: &[MelSpectrogram], cfg: &VaeTrainConfig) -> Result<Vec<f64>> {
    if mels.is_empty() {
        return Err(Error::Data("VAE training needs at least one clip".into()));
    }
    let mut opt = Adam::new(cfg.lr);
    let mut pick = stream(cfg.seed, "vae-batches", 0);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mel = &mels[pick.random_range(0..mels.len())];
        let (loss, grads) = vae_loss(mel, vae, cfg.beta_kl, cfg.seed.wrapping_add(step as u64))?;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        opt.step(&mut vae.params, &grads);
        log.push(loss);
    }
    Ok(log)
}

/// Mean squared error in dB between a mel and its decoded posterior mean.
pub fn reconstruction_mse(vae: &Vae, mel: &MelSpectrogram) -> Result<f64> {
    let (mean, _) = vae.encode(mel)?;
    let back = vae.decode(&mean)?;
    let d = back.values.sub(&mel.values);
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::mel::compute_mel;
    use crate::scene::{generate_dataset, GenerationBounds};
    use crate::tape::check::max_relative_error;

    fn small_mel() -> MelParams {
        MelParams { sample_rate_hz: 8000, n_fft: 256, hop: 128, n_mels: 16, fmin_hz: 0.0, fmax_hz: 4000.0, log_floor_db: -80.0 }
    }

    fn mel_with_frames(p: MelParams, frames: usize) -> MelSpectrogram {
        let data = (0..p.n_mels * frames).map(|i| -80.0 + 70.0 * ((i as f64 * 0.37).sin().abs())).collect();
        MelSpectrogram { values: Matrix::from_vec(p.n_mels, frames, data), params: p }
    }

    #[test]
    fn identity_mode_is_exact() {
        let p = small_mel();
        let vae = Vae::identity(p);
        let mel = mel_with_frames(p, 9);
        let (mean, logvar) = vae.encode(&mel).unwrap();
        assert_eq!(mean.values, mel.values);
        assert_eq!(vae_sample(&mean, &logvar, 7), mean);
        assert_eq!(vae.decode(&mean).unwrap(), mel);
    }

    #[test]
    fn latent_length_is_ceiling_of_frames_over_factor() {
        let p = small_mel();
        let vae = Vae::Tiny(TinyVae::new(p, TinyVaeShape { channels: 3, hidden: 8, downsampling: 4 }, 1).unwrap());
        for (frames, expected) in [(7, 2), (8, 2), (9, 3)] {
            let mel = mel_with_frames(p, frames);
            let (mean, logvar) = vae.encode(&mel).unwrap();
            assert_eq!(mean.values.shape(), (3, expected));
            assert_eq!(logvar.values.shape(), (3, expected));
            let back = vae.decode(&mean).unwrap();
            assert_eq!(back.frames(), frames);
            assert!(back.values.data().iter().all(|&v| v >= p.log_floor_db));
            assert_eq!(vae.encode(&mel).unwrap().0, mean);
        }
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let p = small_mel();
        let vae = Vae::identity(p);
        let other = MelParams { n_mels: 8, ..p };
        assert!(matches!(vae.encode(&mel_with_frames(other, 4)), Err(Error::Contract(_))));
        let z = Latent { values: Matrix::zeros(5, 3), downsampling: 1, mel_frames: 3 };
        assert!(matches!(vae.decode(&z), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_latent_decodes_to_finite_mel() {
        let p = small_mel();
        let vae = Vae::Tiny(TinyVae::new(p, TinyVaeShape::default(), 3).unwrap());
        let z = Latent { values: Matrix::zeros(8, 5), downsampling: 4, mel_frames: 18 };
        let m = vae.decode(&z).unwrap();
        assert!(m.values.is_finite());
        assert_eq!(m.frames(), 18);
    }

    #[test]
    fn sampling_matches_its_moments() {
        let mean = Latent { values: Matrix::from_vec(1, 3, vec![0.5, -2.0, 3.0]), downsampling: 1, mel_frames: 3 };
        let sigma = [1.0, 0.3, 2.0];
        let logvar = Latent {
            values: Matrix::from_vec(1, 3, sigma.iter().map(|s: &f64| 2.0 * s.ln()).collect()),
            ..mean.clone()
        };
        assert_eq!(vae_sample(&mean, &logvar, 5), vae_sample(&mean, &logvar, 5));
        let n = 10_000;
        let mut acc = [0.0; 3];
        for s in 0..n {
            let z = vae_sample(&mean, &logvar, s);
            for (a, v) in acc.iter_mut().zip(z.values.data()) {
                *a += v;
            }
        }
        for i in 0..3 {
            let m = acc[i] / n as f64;
            assert!((m - mean.values.data()[i]).abs() <= 4.0 * sigma[i] / 100.0, "coord {i}: {m}");
        }
    }

    #[test]
    fn kl_closed_form_hand_cases() {
        assert_eq!(kl_divergence(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)), 0.0);
        assert_eq!(kl_divergence(&Matrix::filled(1, 1, 1.0), &Matrix::zeros(1, 1)), 0.5);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let p = MelParams { n_mels: 3, ..small_mel() };
        let vae = TinyVae::new(p, TinyVaeShape { channels: 2, hidden: 4, downsampling: 2 }, 11).unwrap();
        let mel = mel_with_frames(p, 5);
        let x = vae.chunks(&mel).unwrap();
        let mut rng = stream(4, "test", 0);
        let eps = normal_matrix(x.rows(), 2, &mut rng);
        // perturb the biases away from zero so every path is exercised
        let inputs: Vec<Matrix> = vae.params.values().iter().map(|m| m.map(|v| v + 0.05)).collect();
        let err = max_relative_error(
            &inputs,
            |g, v| loss_on_tape(g, &Vars::from_slice(v), &x, &eps, 0.7, 2),
            1e-6,
            1e-7,
        );
        assert!(err < 1e-4, "relative error {err}");

        // the public entry point returns the same gradients as the tape
        let (loss, grads) = vae_loss(&mel, &vae, 0.7, 9).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grads.len(), 8);
    }

    #[test]
    fn negative_beta_is_rejected() {
        let p = small_mel();
        let vae = TinyVae::new(p, TinyVaeShape::default(), 0).unwrap();
        assert!(vae_loss(&mel_with_frames(p, 4), &vae, -1.0, 0).is_err());
    }

    #[test]
    fn training_beats_the_untrained_model() {
        let p = small_mel();
        let bounds = GenerationBounds { min_duration_s: 2.0, max_duration_s: 2.0, sample_rate_hz: 8000, ..Default::default() };
        let scenes = generate_dataset(6, 3, &bounds).unwrap();
        let mels: Vec<MelSpectrogram> = scenes.iter().map(|s| compute_mel(&s.waveform, &p).unwrap()).collect();
        let mut vae = TinyVae::new(p, TinyVaeShape::default(), 2).unwrap();
        let before: f64 = mels.iter().map(|m| reconstruction_mse(&Vae::Tiny(vae.clone()), m).unwrap()).sum();
        train_vae(&mut vae, &mels, &VaeTrainConfig { steps: 200, ..Default::default() }).unwrap();
        let after: f64 = mels.iter().map(|m| reconstruction_mse(&Vae::Tiny(vae.clone()), m).unwrap()).sum();
        assert!(after < before, "trained {after} vs untrained {before}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = small_mel();
        for vae in [Vae::identity(p), Vae::Tiny(TinyVae::new(p, TinyVaeShape::default(), 8).unwrap())] {
            let path = dir.path().join("vae.ckpt");
            vae.save(&path).unwrap();
            let back = Vae::load(&path).unwrap();
            // checkpoint blobs are f64, so the round trip is exact
            assert_eq!(back, vae);
        }
        let z = Latent { values: Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]), downsampling: 4, mel_frames: 7 };
        let path = dir.path().join("z.lat");
        z.save(&path).unwrap();
        assert_eq!(Latent::load(&path).unwrap(), z);
    }
}
