//! Objective evaluation: Fréchet distance between embedding sets, KL between
//! class posteriors and the AV-Align onset/peak matching score.

pub mod align;
pub mod frechet;
pub mod posterior;
pub mod report;

pub use align::{av_align, detect_onsets, detect_video_peaks, OnsetList, OnsetParams};
pub use frechet::{frechet_distance, mel_statistics, EmbeddingSet, Source};
pub use posterior::{classify_audio, kl_metric, AudioClassifier, ClassPosterior, ClassifierParams};
pub use report::{evaluate_clips, ClipInput, EvalConfig, EvalReport, EvalRow, EvalSummary};
