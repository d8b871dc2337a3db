use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::codec::mel::{MelAnalyzer, MelParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::align::{av_align, detect_onsets, detect_video_peaks, OnsetParams};
use crate::metrics::frechet::{frechet_distance, mel_statistics, EmbeddingSet, Source};
use crate::metrics::posterior::{kl_metric, AudioClassifier, ClassifierParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Front end of the mel-statistics embedder.
    pub mel: MelParams,
    pub classifier: ClassifierParams,
    pub onsets: OnsetParams,
    pub peak_threshold: f64,
    pub window_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mel: MelParams::default(),
            classifier: ClassifierParams::default(),
            onsets: OnsetParams::default(),
            peak_threshold: 0.5,
            window_s: 0.1,
        }
    }
}

/// One generated clip, its reference audio and the frame embeddings of the
/// video it was generated for.
pub struct ClipInput<'a> {
    pub id: &'a str,
    pub generated: &'a [f32],
    pub reference: &'a [f32],
    pub video: &'a Matrix,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub clip_id: String,
    pub kl: f64,
    pub av_align: f64,
    pub audio_onsets: usize,
    pub video_peaks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clips: usize,
    pub fd: f64,
    pub mean_kl: f64,
    pub mean_av_align: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

impl EvalReport {
    /// Tab-separated per-clip rows followed by a `# summary` block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("clip_id\tfd_contribution\tkl\tav_align\taudio_onsets\tvideo_peaks\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\tn/a\t{:.6}\t{:.6}\t{}\t{}", r.clip_id, r.kl, r.av_align, r.audio_onsets, r.video_peaks);
        }
        let m = &self.summary;
        let _ = write!(
            s,
            "# summary\nclips\t{}\nfd\t{:.6}\nmean_kl\t{:.6}\nmean_av_align\t{:.6}\n",
            m.clips, m.fd, m.mean_kl, m.mean_av_align
        );
        s
    }
}

/// Scores every clip and aggregates. All clips share one sample rate.
pub fn evaluate_clips(clips: &[ClipInput], sample_rate_hz: u32, config: &EvalConfig) -> Result<EvalReport> {
    if clips.len() < 2 {
        return Err(Error::Metric(format!("evaluation needs at least 2 clips, got {}", clips.len())));
    }
    config.onsets.validate()?;
    let mel = MelAnalyzer::new(MelParams { sample_rate_hz, ..config.mel })?;
    let classifier = AudioClassifier::new(sample_rate_hz, config.classifier)?;
    let (mut gen_stats, mut ref_stats, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for c in clips {
        gen_stats.push(mel_statistics(&mel.compute(c.generated)?));
        ref_stats.push(mel_statistics(&mel.compute(c.reference)?));
        let kl = kl_metric(&[(classifier.classify(c.generated)?, classifier.classify(c.reference)?)])?;
        let onsets = detect_onsets(c.generated, sample_rate_hz, &config.onsets);
        let peaks = detect_video_peaks(c.video, c.fps, config.peak_threshold)?;
        rows.push(EvalRow {
            clip_id: c.id.to_string(),
            kl,
            av_align: av_align(&onsets, &peaks, config.window_s)?,
            audio_onsets: onsets.len(),
            video_peaks: peaks.len(),
        });
    }
    let fd = frechet_distance(
        &EmbeddingSet::from_rows(&gen_stats, Source::Generated)?,
        &EmbeddingSet::from_rows(&ref_stats, Source::Reference)?,
    )?;
    let n = rows.len() as f64;
    let summary = EvalSummary {
        clips: rows.len(),
        fd,
        mean_kl: rows.iter().map(|r| r.kl).sum::<f64>() / n,
        mean_av_align: rows.iter().map(|r| r.av_align).sum::<f64>() / n,
    };
    Ok(EvalReport { rows, summary })
}
