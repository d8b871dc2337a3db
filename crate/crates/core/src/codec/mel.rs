use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelParams {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor_db: f64,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            n_fft: 512,
            hop: 128,
            n_mels: 64,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor_db: -80.0,
        }
    }
}

impl MelParams {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if self.n_fft < 2 || self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "need 0 < hop <= n_fft (hop {}, n_fft {})",
                self.hop, self.n_fft
            )));
        }
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= fmin < fmax <= {nyquist} Hz (got {}, {})",
                self.fmin_hz, self.fmax_hz
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if !self.log_floor_db.is_finite() {
            return Err(Error::Config("log floor must be finite".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames_for(&self, samples: usize) -> Option<usize> {
        (samples >= self.n_fft).then(|| 1 + (samples - self.n_fft) / self.hop)
    }

    pub fn samples_for(&self, frames: usize) -> usize {
        self.n_fft + frames.saturating_sub(1) * self.hop
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop as f64
    }
}

/// Log-amplitude mel spectrogram, `n_mels × frames`, in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub params: MelParams,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn n_mels(&self) -> usize {
        self.values.rows()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edge frequencies of the triangular filters: `n_mels + 2` points evenly
/// spaced on the mel scale. Band `b` peaks at point `b + 1`.
pub fn mel_points_hz(params: &MelParams) -> Vec<f64> {
    let lo = hz_to_mel(params.fmin_hz);
    let hi = hz_to_mel(params.fmax_hz);
    let n = params.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

pub fn band_center_hz(params: &MelParams, band: usize) -> f64 {
    mel_points_hz(params)[band + 1]
}

/// Triangular filterbank with unit peaks, `n_mels × n_bins`.
pub fn mel_filterbank(params: &MelParams) -> Matrix {
    let pts = mel_points_hz(params);
    let n_bins = params.n_bins();
    let bin_hz = params.sample_rate_hz as f64 / params.n_fft as f64;
    let mut fb = Matrix::zeros(params.n_mels, n_bins);
    for b in 0..params.n_mels {
        let (left, center, right) = (pts[b], pts[b + 1], pts[b + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f >= left && f <= center && center > left {
                (f - left) / (center - left)
            } else if f > center && f <= right && right > center {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[(b, k)] = w;
        }
    }
    fb
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Short-time Fourier analysis shared by the mel front end and phase
/// reconstruction.
pub struct Stft {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    /// Amplitude normalization so a full-band sine of amplitude `A` peaks near `A`.
    pub fn gain(&self) -> f64 {
        self.window.iter().sum::<f64>() / 2.0
    }

    /// Complex spectra of the positive-frequency bins, one vector per frame.
    pub fn analyze(&self, signal: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let frames = if signal.len() >= self.n_fft {
            1 + (signal.len() - self.n_fft) / self.hop
        } else {
            0
        };
        let n_bins = self.n_fft / 2 + 1;
        (0..frames)
            .map(|t| {
                let start = t * self.hop;
                let mut buf: Vec<Complex<f64>> = signal[start..start + self.n_fft]
                    .iter()
                    .zip(&self.window)
                    .map(|(x, w)| Complex::new(x * w, 0.0))
                    .collect();
                self.forward.process(&mut buf);
                buf.truncate(n_bins);
                buf
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`].
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        if spectra.is_empty() {
            return Vec::new();
        }
        let len = self.n_fft + (spectra.len() - 1) * self.hop;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let n = self.n_fft;
        for (t, half) in spectra.iter().enumerate() {
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            buf[..half.len()].copy_from_slice(half);
            for k in 1..n.div_ceil(2) {
                buf[n - k] = half[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(norm) {
            *o = if w > 1e-6 { *o / w } else { 0.0 };
        }
        out
    }
}

pub struct MelAnalyzer {
    pub params: MelParams,
    pub filterbank: Matrix,
    stft: Stft,
}

impl MelAnalyzer {
    pub fn new(params: MelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            filterbank: mel_filterbank(&params),
            stft: Stft::new(params.n_fft, params.hop),
            params,
        })
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Normalized STFT magnitudes, `n_bins × frames`.
    pub fn magnitudes(&self, waveform: &[f32]) -> Result<Matrix> {
        let p = &self.params;
        if waveform.len() < p.n_fft {
            return Err(Error::Analysis(format!(
                "waveform of {} samples is shorter than n_fft {}",
                waveform.len(),
                p.n_fft
            )));
        }
        let signal: Vec<f64> = waveform.iter().map(|&v| v as f64).collect();
        let spectra = self.stft.analyze(&signal);
        let gain = self.stft.gain();
        let mut mag = Matrix::zeros(p.n_bins(), spectra.len());
        for (t, frame) in spectra.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                mag[(k, t)] = c.norm() / gain;
            }
        }
        Ok(mag)
    }

    pub fn compute(&self, waveform: &[f32]) -> Result<MelSpectrogram> {
        let mag = self.magnitudes(waveform)?;
        let amp = self.filterbank.matmul(&mag);
        let floor = self.params.log_floor_db;
        let values = amp.map(|a| (20.0 * a.max(1e-12).log10()).max(floor));
        Ok(MelSpectrogram {
            values,
            params: self.params,
        })
    }
}

/// Magnitude STFT → triangular mel filterbank → dB with floor.
pub fn compute_mel(waveform: &[f32], params: &MelParams) -> Result<MelSpectrogram> {
    MelAnalyzer::new(*params)?.compute(waveform)
}
