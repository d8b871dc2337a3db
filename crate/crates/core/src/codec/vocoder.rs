//! Mel-to-waveform reconstruction: filterbank pseudo-inverse followed by
//! Griffin-Lim phase estimation.

use nalgebra::DMatrix;
use rand::Rng as _;
use rustfft::num_complex::Complex;

use crate::codec::mel::{MelAnalyzer, MelSpectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::stream;

/// Maps log-mel frames back to linear STFT magnitudes.
pub struct MelInverter {
    analyzer: MelAnalyzer,
    pinv: Matrix,
}

impl MelInverter {
    pub fn new(analyzer: MelAnalyzer) -> Result<Self> {
        let fb = &analyzer.filterbank;
        let m = DMatrix::from_row_slice(fb.rows(), fb.cols(), fb.data());
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::Analysis(format!("filterbank pseudo-inverse failed: {e}")))?;
        let pinv = Matrix::from_vec(
            pinv.nrows(),
            pinv.ncols(),
            (0..pinv.nrows())
                .flat_map(|r| (0..pinv.ncols()).map(move |c| (r, c)))
                .map(|(r, c)| pinv[(r, c)])
                .collect(),
        );
        Ok(Self { analyzer, pinv })
    }

    pub fn analyzer(&self) -> &MelAnalyzer {
        &self.analyzer
    }

    /// Linear magnitudes (`n_bins × frames`) in the analyzer's normalized units.
    /// Floor-level entries count as silence.
    pub fn magnitudes(&self, mel: &MelSpectrogram) -> Result<Matrix> {
        let p = &self.analyzer.params;
        if mel.n_mels() != p.n_mels {
            return Err(Error::Contract(format!(
                "mel has {} bands, analyzer expects {}",
                mel.n_mels(),
                p.n_mels
            )));
        }
        let floor = p.log_floor_db;
        let amp = mel
            .values
            .map(|db| if db <= floor + 1e-9 { 0.0 } else { 10f64.powf(db / 20.0) });
        Ok(self.pinv.matmul(&amp).map(|v| v.max(0.0)))
    }

    pub fn reconstruct(&self, mel: &MelSpectrogram, n_iters: usize) -> Result<Vec<f32>> {
        let target = self.magnitudes(mel)?;
        let (wave, _) = griffin_lim(&self.analyzer, &target, n_iters)?;
        Ok(wave.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect())
    }
}

/// Iterative phase estimation for normalized magnitudes `target`
/// (`n_bins × frames`). Returns the waveform and its spectral convergence.
pub fn griffin_lim(analyzer: &MelAnalyzer, target: &Matrix, n_iters: usize) -> Result<(Vec<f64>, f64)> {
    if n_iters == 0 {
        return Err(Error::Contract("phase reconstruction needs at least one iteration".into()));
    }
    let stft = analyzer.stft();
    let gain = stft.gain();
    let (n_bins, frames) = target.shape();
    let mut rng = stream(0, "griffin-lim", 0);
    let mut phase: Vec<Vec<f64>> = (0..frames)
        .map(|_| (0..n_bins).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect())
        .collect();

    let build = |phase: &[Vec<f64>]| -> Vec<Vec<Complex<f64>>> {
        (0..frames)
            .map(|t| {
                (0..n_bins)
                    .map(|k| Complex::from_polar(target[(k, t)] * gain, phase[t][k]))
                    .collect()
            })
            .collect()
    };

    let mut signal = stft.synthesize(&build(&phase));
    for _ in 0..n_iters {
        let spectra = stft.analyze(&signal);
        for (t, frame) in spectra.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                if c.norm() > 0.0 {
                    phase[t][k] = c.arg();
                }
            }
        }
        signal = stft.synthesize(&build(&phase));
    }
    let sc = spectral_convergence(analyzer, &signal, target);
    Ok((signal, sc))
}

/// `‖|STFT(y)| − S‖_F / ‖S‖_F` in normalized magnitude units.
pub fn spectral_convergence(analyzer: &MelAnalyzer, signal: &[f64], target: &Matrix) -> f64 {
    let stft = analyzer.stft();
    let gain = stft.gain();
    let spectra = stft.analyze(signal);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, frame) in spectra.iter().enumerate().take(target.cols()) {
        for (k, c) in frame.iter().enumerate() {
            let s = target[(k, t)];
            num += (c.norm() / gain - s).powi(2);
            den += s * s;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub fn reconstruct_waveform(
    mel: &MelSpectrogram,
    n_iters: usize,
) -> Result<Vec<f32>> {
    MelInverter::new(MelAnalyzer::new(mel.params)?)?.reconstruct(mel, n_iters)
}
