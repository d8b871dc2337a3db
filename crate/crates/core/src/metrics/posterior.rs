use serde::{Deserialize, Serialize};

use crate::codec::mel::{MelAnalyzer, MelParams};
use crate::error::{Error, Result};
use crate::scene::{catalog, render_audio, SceneEvent, SceneScript, SoundClass};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPosterior {
    probs: Vec<f64>,
}

impl ClassPosterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Contract("posterior entries must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("posterior sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![1.0 / k as f64; k] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

/// Mean over `(generated, reference)` pairs of `Σ ref · ln(ref / gen)`.
pub fn kl_metric(pairs: &[(ClassPosterior, ClassPosterior)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Contract("KL metric needs at least one pair".into()));
    }
    let mut total = 0.0;
    for (i, (gen, reference)) in pairs.iter().enumerate() {
        if gen.probs.len() != reference.probs.len() {
            return Err(Error::Contract(format!(
                "pair {i}: posteriors over {} and {} classes",
                gen.probs.len(),
                reference.probs.len()
            )));
        }
        total += reference
            .probs
            .iter()
            .zip(&gen.probs)
            .map(|(r, g)| {
                // the weight stays unfloored so a zero reference entry contributes 0
                r * (r.max(PROB_FLOOR) / g.max(PROB_FLOOR)).ln()
            })
            .sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Softmax temperature over cosine scores.
    pub temperature: f64,
    /// Frames more than this many dB below the loudest frame are ignored.
    pub activity_db: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self { n_fft: 512, hop: 128, n_mels: 48, temperature: 0.1, activity_db: 30.0 }
    }
}

const SILENCE_ENERGY: f64 = 1e-12;
const TEMPLATE_ONSET_S: f64 = 0.05;
const TEMPLATE_OFFSET_S: f64 = 0.55;

/// Nearest-template sound classifier. Each catalog object contributes one
/// template; a class scores the best cosine among its objects.
pub struct AudioClassifier {
    pub params: ClassifierParams,
    analyzer: MelAnalyzer,
    templates: Vec<(SoundClass, Vec<f64>)>,
}

impl AudioClassifier {
    pub fn new(sample_rate_hz: u32, params: ClassifierParams) -> Result<Self> {
        if !(params.temperature > 0.0 && params.activity_db >= 0.0) {
            return Err(Error::Config("classifier temperature must be positive".into()));
        }
        let mel = MelParams {
            sample_rate_hz,
            n_fft: params.n_fft,
            hop: params.hop,
            n_mels: params.n_mels,
            fmin_hz: 0.0,
            fmax_hz: sample_rate_hz as f64 / 2.0,
            log_floor_db: -100.0,
        };
        let analyzer = MelAnalyzer::new(mel)?;
        let mut c = Self { params, analyzer, templates: Vec::new() };
        for entry in catalog() {
            let script = SceneScript {
                duration_s: TEMPLATE_OFFSET_S + 0.05,
                fps: 10.0,
                sample_rate_hz,
                events: vec![SceneEvent {
                    object_label: entry.label.into(),
                    sound_class: entry.class,
                    onset_s: TEMPLATE_ONSET_S,
                    offset_s: TEMPLATE_OFFSET_S,
                    base_freq_hz: entry.base_freq_hz,
                }],
                caption: entry.label.into(),
                seed: 0,
            };
            let profile = c
                .profile(&render_audio(&script))?
                .ok_or_else(|| Error::Analysis(format!("template {} rendered silent", entry.label)))?;
            c.templates.push((entry.class, profile));
        }
        Ok(c)
    }

    /// Mean linear mel-band amplitude over active frames; `None` for silence.
    fn profile(&self, waveform: &[f32]) -> Result<Option<Vec<f64>>> {
        let n_fft = self.params.n_fft;
        let padded;
        let wave = if waveform.len() < n_fft {
            padded = [waveform, &vec![0.0; n_fft - waveform.len()]].concat();
            &padded[..]
        } else {
            waveform
        };
        let mel = self.analyzer.filterbank.matmul(&self.analyzer.magnitudes(wave)?);
        let energy: Vec<f64> = (0..mel.cols()).map(|t| (0..mel.rows()).map(|b| mel[(b, t)].powi(2)).sum()).collect();
        let peak = energy.iter().copied().fold(0.0, f64::max);
        if peak < SILENCE_ENERGY {
            return Ok(None);
        }
        let gate = peak * 10f64.powf(-self.params.activity_db / 10.0);
        let active: Vec<usize> = (0..mel.cols()).filter(|&t| energy[t] >= gate).collect();
        let profile = (0..mel.rows())
            .map(|b| active.iter().map(|&t| mel[(b, t)]).sum::<f64>() / active.len() as f64)
            .collect();
        Ok(Some(profile))
    }

    /// Per-class best cosine similarity, in [`SoundClass::ALL`] order.
    pub fn scores(&self, waveform: &[f32]) -> Result<Option<Vec<f64>>> {
        let Some(p) = self.profile(waveform)? else { return Ok(None) };
        let mut best = vec![f64::NEG_INFINITY; SoundClass::ALL.len()];
        for (class, t) in &self.templates {
            let s = &mut best[class.index()];
            *s = s.max(cosine(&p, t));
        }
        Ok(Some(best))
    }

    pub fn classify(&self, waveform: &[f32]) -> Result<ClassPosterior> {
        let k = SoundClass::ALL.len();
        let Some(scores) = self.scores(waveform)? else { return Ok(ClassPosterior::uniform(k)) };
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| ((s - top) / self.params.temperature).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(ClassPosterior { probs: e.into_iter().map(|v| v / z).collect() })
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One-shot classification; builds the templates on every call.
pub fn classify_audio(waveform: &[f32], sample_rate_hz: u32, params: &ClassifierParams) -> Result<ClassPosterior> {
    AudioClassifier::new(sample_rate_hz, *params)?.classify(waveform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::catalog_entry;
    use proptest::prelude::*;

    fn p(v: &[f64]) -> ClassPosterior {
        ClassPosterior::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_hand_cases() {
        let ln2 = kl_metric(&[(p(&[0.5, 0.5]), p(&[1.0, 0.0]))]).unwrap();
        assert!((ln2 - std::f64::consts::LN_2).abs() < 1e-9);
        let same = vec![(p(&[0.5, 0.5]), p(&[0.5, 0.5])); 7];
        assert_eq!(kl_metric(&same).unwrap(), 0.0);
        assert!(matches!(kl_metric(&[(p(&[1.0]), p(&[0.5, 0.5]))]), Err(Error::Contract(_))));
        assert!(kl_metric(&[]).is_err());
    }

    #[test]
    fn posterior_must_sum_to_one() {
        assert!(ClassPosterior::new(vec![0.5, 0.6]).is_err());
        assert!(ClassPosterior::new(vec![-0.5, 1.5]).is_err());
        assert_eq!(p(&[0.2, 0.7, 0.1]).argmax(), 1);
    }

    fn render(label: &str, duration: f64, sr: u32) -> Vec<f32> {
        let e = catalog_entry(label).unwrap();
        render_audio(&SceneScript {
            duration_s: duration + 0.5,
            fps: 10.0,
            sample_rate_hz: sr,
            events: vec![SceneEvent {
                object_label: label.into(),
                sound_class: e.class,
                onset_s: 0.25,
                offset_s: 0.25 + duration,
                base_freq_hz: e.base_freq_hz,
            }],
            caption: label.into(),
            seed: 99,
        })
    }

    #[test]
    fn every_catalog_object_is_recognized() {
        for sr in [8_000, 16_000] {
            let c = AudioClassifier::new(sr, ClassifierParams::default()).unwrap();
            for e in catalog() {
                let post = c.classify(&render(e.label, 0.3, sr)).unwrap();
                assert_eq!(post.argmax(), e.class.index(), "{} at {sr} Hz: {:?}", e.label, post.probs());
                assert!((post.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn silence_is_uniform() {
        let post = classify_audio(&vec![0.0; 4000], 8_000, &ClassifierParams::default()).unwrap();
        assert_eq!(post, ClassPosterior::uniform(4));
        let short = classify_audio(&[0.0; 10], 8_000, &ClassifierParams::default()).unwrap();
        assert_eq!(short, ClassPosterior::uniform(4));
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_on_equal_pairs(
            raw in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 2..6),
        ) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let g = ClassPosterior { probs: norm(raw.iter().map(|r| r.0).collect()) };
            let r = ClassPosterior { probs: norm(raw.iter().map(|r| r.1).collect()) };
            prop_assert!(kl_metric(&[(g.clone(), r.clone())]).unwrap() >= -1e-12);
            prop_assert!(kl_metric(&[(r.clone(), r)]).unwrap().abs() < 1e-12);
        }
    }
}
