use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Event times in seconds, ascending.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OnsetList {
    times: Vec<f64>,
}

impl OnsetList {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Contract("onset times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Contract("onset times must be sorted ascending".into()));
        }
        Ok(Self { times })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn shifted(&self, by: f64) -> Result<Self> {
        Self::new(self.times.iter().map(|t| t + by).collect())
    }
}

/// Energy-envelope onset detector settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnsetParams {
    pub window_s: f64,
    pub hop_s: f64,
    /// RMS level that opens an event.
    pub threshold_on: f64,
    /// RMS level the envelope must fall below before the next onset.
    pub threshold_off: f64,
    pub refractory_s: f64,
}

impl Default for OnsetParams {
    fn default() -> Self {
        Self { window_s: 0.01, hop_s: 0.005, threshold_on: 0.05, threshold_off: 0.02, refractory_s: 0.05 }
    }
}

impl OnsetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0 && self.refractory_s >= 0.0) {
            return Err(Error::Config("onset window and hop must be positive".into()));
        }
        if !(self.threshold_off >= 0.0 && self.threshold_off <= self.threshold_on) {
            return Err(Error::Config("onset thresholds need 0 <= off <= on".into()));
        }
        Ok(())
    }
}

/// Short-time RMS envelope; value `k` covers `[k·hop, k·hop + window)`.
pub fn rms_envelope(waveform: &[f32], sample_rate_hz: u32, params: &OnsetParams) -> Vec<f64> {
    let sr = sample_rate_hz as f64;
    let win = ((params.window_s * sr).round() as usize).max(1);
    let hop = ((params.hop_s * sr).round() as usize).max(1);
    if waveform.len() < win {
        return Vec::new();
    }
    (0..=(waveform.len() - win) / hop)
        .map(|k| {
            let seg = &waveform[k * hop..k * hop + win];
            (seg.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / win as f64).sqrt()
        })
        .collect()
}

/// Onsets where the RMS envelope rises through `threshold_on`, re-armed once
/// it drops below `threshold_off`. Reported at window centers.
pub fn detect_onsets(waveform: &[f32], sample_rate_hz: u32, params: &OnsetParams) -> OnsetList {
    let sr = sample_rate_hz as f64;
    let win = ((params.window_s * sr).round() as usize).max(1) as f64 / sr;
    let hop = ((params.hop_s * sr).round() as usize).max(1) as f64 / sr;
    let mut times = Vec::new();
    let mut armed = true;
    let mut last = f64::NEG_INFINITY;
    for (k, e) in rms_envelope(waveform, sample_rate_hz, params).into_iter().enumerate() {
        let t = k as f64 * hop + win / 2.0;
        if armed && e >= params.threshold_on && t - last >= params.refractory_s {
            times.push(t);
            last = t;
            armed = false;
        } else if !armed && e < params.threshold_off {
            armed = true;
        }
    }
    OnsetList { times }
}

/// Novelty `‖f_{i+1} − f_i‖`, kept only for steps that increase the frame
/// norm so a disappearance does not count as an event.
pub fn frame_novelty(frames: &Matrix) -> Vec<f64> {
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    (0..frames.rows().saturating_sub(1))
        .map(|i| {
            let (a, b) = (frames.row(i), frames.row(i + 1));
            if norm(b) > norm(a) {
                a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt()
            } else {
                0.0
            }
        })
        .collect()
}

/// Local maxima of [`frame_novelty`] above `threshold`, at `(i + 0.5) / fps`.
pub fn detect_video_peaks(frames: &Matrix, fps: f64, threshold: f64) -> Result<OnsetList> {
    if frames.rows() < 2 {
        return Err(Error::Contract(format!("video peaks need at least 2 frames, got {}", frames.rows())));
    }
    if !(fps > 0.0) {
        return Err(Error::Contract(format!("fps must be positive, got {fps}")));
    }
    let n = frame_novelty(frames);
    let times = (0..n.len())
        .filter(|&i| {
            let left = if i > 0 { n[i - 1] } else { f64::NEG_INFINITY };
            let right = n.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
            n[i] > threshold && n[i] >= left && n[i] > right
        })
        .map(|i| (i as f64 + 0.5) / fps)
        .collect();
    Ok(OnsetList { times })
}

/// Greedy earliest-first one-to-one matching within `±window_s`.
pub fn count_matches(a: &OnsetList, b: &OnsetList, window_s: f64) -> usize {
    let (a, b) = (a.times(), b.times());
    let (mut i, mut j, mut m) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        if (a[i] - b[j]).abs() <= window_s {
            m += 1;
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    m
}

/// Intersection over union of matched events; `1.0` when both lists are empty.
pub fn av_align(audio: &OnsetList, video: &OnsetList, window_s: f64) -> Result<f64> {
    if !(window_s > 0.0) {
        return Err(Error::Contract(format!("matching window must be positive, got {window_s}")));
    }
    if audio.is_empty() && video.is_empty() {
        return Ok(1.0);
    }
    let m = count_matches(audio, video, window_s);
    Ok(m as f64 / (audio.len() + video.len() - m) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(t: &[f64]) -> OnsetList {
        OnsetList::new(t.to_vec()).unwrap()
    }

    #[test]
    fn hand_cases() {
        let a = list(&[1.0, 2.0]);
        assert_eq!(av_align(&a, &a, 0.1).unwrap(), 1.0);
        assert_eq!(av_align(&a, &list(&[1.0, 5.0]), 0.1).unwrap(), 1.0 / 3.0);
        assert_eq!(av_align(&a, &list(&[1.5, 3.0]), 0.1).unwrap(), 0.0);
        assert_eq!(av_align(&OnsetList::empty(), &OnsetList::empty(), 0.1).unwrap(), 1.0);
        assert_eq!(av_align(&a, &OnsetList::empty(), 0.1).unwrap(), 0.0);
        assert!(av_align(&a, &a, 0.0).is_err());
    }

    #[test]
    fn onset_lists_must_be_sorted() {
        assert!(OnsetList::new(vec![2.0, 1.0]).is_err());
        assert!(OnsetList::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn silence_has_no_onsets() {
        let p = OnsetParams::default();
        assert!(detect_onsets(&vec![0.0; 16_000], 16_000, &p).is_empty());
        assert!(detect_onsets(&[], 16_000, &p).is_empty());
    }

    #[test]
    fn hysteresis_ignores_ripple() {
        // 0.06 → 0.03 → 0.06 never falls below the off threshold
        let sr = 1000;
        let mut x = vec![0.0f32; 1000];
        for (i, v) in x.iter_mut().enumerate().skip(100).take(600) {
            *v = if (200..300).contains(&i) { 0.03 } else { 0.06 };
        }
        let on = detect_onsets(&x, sr, &OnsetParams::default());
        assert_eq!(on.len(), 1);
        assert!((on.times()[0] - 0.1).abs() < 0.01);
    }

    fn frames_with(appearances: &[(usize, usize)]) -> Matrix {
        let mut f = Matrix::zeros(30, 2);
        for i in 0..30 {
            f[(i, 0)] = 1.0;
        }
        for &(a, b) in appearances {
            for i in a..b {
                f[(i, 1)] = 1.0;
            }
        }
        f
    }

    #[test]
    fn video_peak_at_an_appearance() {
        let p = detect_video_peaks(&frames_with(&[(10, 15)]), 10.0, 0.5).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.times()[0] - 1.0).abs() <= 0.15);
        let q = detect_video_peaks(&frames_with(&[(10, 15), (20, 25)]), 10.0, 0.5).unwrap();
        assert_eq!(q.len(), 2);
        assert!((q.times()[1] - 2.0).abs() <= 0.15);
        assert!(detect_video_peaks(&Matrix::zeros(1, 2), 10.0, 0.5).is_err());
    }

    #[test]
    fn constant_frames_have_no_peaks() {
        let f = Matrix::filled(12, 3, 0.7);
        assert!(detect_video_peaks(&f, 10.0, 0.5).unwrap().is_empty());
    }

    fn brute_force_matches(a: &[f64], b: &[f64], w: f64) -> usize {
        // maximum bipartite matching by exhaustive search
        fn go(a: &[f64], b: &[f64], used: &mut Vec<bool>, w: f64) -> usize {
            let Some((&x, rest)) = a.split_first() else { return 0 };
            let mut best = go(rest, b, used, w);
            for j in 0..b.len() {
                if !used[j] && (x - b[j]).abs() <= w {
                    used[j] = true;
                    best = best.max(1 + go(rest, b, used, w));
                    used[j] = false;
                }
            }
            best
        }
        go(a, b, &mut vec![false; b.len()], w)
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    proptest! {
        #[test]
        fn score_is_bounded_and_symmetric(
            a in prop::collection::vec(0.0f64..5.0, 0..7),
            b in prop::collection::vec(0.0f64..5.0, 0..7),
            w in 0.01f64..0.5,
        ) {
            let (a, b) = (list(&sorted(a)), list(&sorted(b)));
            let ab = av_align(&a, &b, w).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, av_align(&b, &a, w).unwrap());
        }

        #[test]
        fn greedy_matching_is_maximum(
            a in prop::collection::vec(0.0f64..3.0, 0..6),
            b in prop::collection::vec(0.0f64..3.0, 0..6),
            w in 0.01f64..0.5,
        ) {
            let (a, b) = (sorted(a), sorted(b));
            prop_assert_eq!(count_matches(&list(&a), &list(&b), w), brute_force_matches(&a, &b, w));
        }

        #[test]
        fn shifting_exact_matches_lowers_the_score(
            a in prop::collection::vec(0.0f64..5.0, 1..6),
            w in 0.01f64..0.3,
        ) {
            // well-separated events so a shift cannot create new matches
            let a: Vec<f64> = sorted(a).iter().enumerate().map(|(i, t)| t + 10.0 * i as f64).collect();
            let a = list(&a);
            let before = av_align(&a, &a, w).unwrap();
            let after = av_align(&a, &a.shifted(1.5 * w).unwrap(), w).unwrap();
            prop_assert!(after < before);
        }
    }
}
