//! Scripted audio-visual scenes: a timeline of object events rendered into
//! symbolic frames and an event-triggered waveform.

use std::f64::consts::PI;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoundClass {
    Beep,
    Burst,
    Chirp,
    Thump,
}

impl SoundClass {
    pub const ALL: [SoundClass; 4] = [
        SoundClass::Beep,
        SoundClass::Burst,
        SoundClass::Chirp,
        SoundClass::Thump,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SoundClass::Beep => "beep",
            SoundClass::Burst => "burst",
            SoundClass::Chirp => "chirp",
            SoundClass::Thump => "thump",
        }
    }
}

/// A known object, the sound family it makes and its nominal frequency.
#[derive(Clone, Copy, Debug)]
pub struct CatalogEntry {
    pub label: &'static str,
    pub class: SoundClass,
    pub base_freq_hz: f64,
}

const CATALOG: &[CatalogEntry] = &[
    CatalogEntry { label: "phone", class: SoundClass::Beep, base_freq_hz: 620.0 },
    CatalogEntry { label: "alarm", class: SoundClass::Beep, base_freq_hz: 880.0 },
    CatalogEntry { label: "bell", class: SoundClass::Beep, base_freq_hz: 1250.0 },
    CatalogEntry { label: "dog", class: SoundClass::Burst, base_freq_hz: 1800.0 },
    CatalogEntry { label: "rain", class: SoundClass::Burst, base_freq_hz: 3500.0 },
    CatalogEntry { label: "car", class: SoundClass::Burst, base_freq_hz: 900.0 },
    CatalogEntry { label: "bird", class: SoundClass::Chirp, base_freq_hz: 1400.0 },
    CatalogEntry { label: "whistle", class: SoundClass::Chirp, base_freq_hz: 1000.0 },
    CatalogEntry { label: "man", class: SoundClass::Chirp, base_freq_hz: 450.0 },
    CatalogEntry { label: "drum", class: SoundClass::Thump, base_freq_hz: 90.0 },
    CatalogEntry { label: "door", class: SoundClass::Thump, base_freq_hz: 60.0 },
    CatalogEntry { label: "ball", class: SoundClass::Thump, base_freq_hz: 120.0 },
];

pub fn catalog() -> &'static [CatalogEntry] {
    CATALOG
}

pub fn catalog_entry(label: &str) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.label == label)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub object_label: String,
    pub sound_class: SoundClass,
    pub onset_s: f64,
    pub offset_s: f64,
    pub base_freq_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub duration_s: f64,
    pub fps: f64,
    pub sample_rate_hz: u32,
    pub events: Vec<SceneEvent>,
    pub caption: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicFrame {
    pub index: usize,
    /// Active objects sorted by label, each with its visibility in `[0, 1]`.
    pub active_objects: Vec<(String, f64)>,
}

impl SymbolicFrame {
    pub fn visibility(&self, label: &str) -> Option<f64> {
        self.active_objects
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, v)| v)
    }
}

/// A script together with its rendered waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub script: SceneScript,
    pub waveform: Vec<f32>,
}

impl Scene {
    pub fn render(script: SceneScript) -> Scene {
        let waveform = render_audio(&script);
        Scene { script, waveform }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationBounds {
    pub min_events: usize,
    pub max_events: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub fps: f64,
    pub sample_rate_hz: u32,
    /// Label pool; every label must exist in the catalog.
    pub labels: Vec<String>,
    pub min_event_s: f64,
    pub max_event_s: f64,
    /// Minimum silence between consecutive events.
    pub min_gap_s: f64,
    /// No event starts before this time.
    pub lead_in_s: f64,
}

impl Default for GenerationBounds {
    fn default() -> Self {
        Self {
            min_events: 1,
            max_events: 3,
            min_duration_s: 4.0,
            max_duration_s: 4.0,
            fps: 10.0,
            sample_rate_hz: 16_000,
            labels: CATALOG.iter().map(|e| e.label.to_string()).collect(),
            min_event_s: 0.15,
            max_event_s: 0.6,
            min_gap_s: 0.1,
            lead_in_s: 0.2,
        }
    }
}

impl GenerationBounds {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(1..=8).contains(&self.min_events)
            || !(1..=8).contains(&self.max_events)
            || self.min_events > self.max_events
        {
            return fail(format!(
                "event count bounds [{}, {}] must satisfy 1 <= min <= max <= 8",
                self.min_events, self.max_events
            ));
        }
        if !(self.min_duration_s >= 2.0
            && self.max_duration_s <= 10.0
            && self.min_duration_s <= self.max_duration_s)
        {
            return fail(format!(
                "duration bounds [{}, {}] must lie within [2, 10] s",
                self.min_duration_s, self.max_duration_s
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) || self.sample_rate_hz == 0 {
            return fail("fps and sample rate must be positive".into());
        }
        if self.labels.is_empty() {
            return fail("label pool is empty".into());
        }
        if let Some(bad) = self.labels.iter().find(|l| catalog_entry(l).is_none()) {
            return fail(format!("label {bad:?} is not in the object catalog"));
        }
        if !(self.min_event_s > 0.0 && self.min_event_s <= self.max_event_s) {
            return fail("event length bounds must satisfy 0 < min <= max".into());
        }
        if self.min_gap_s < 0.0 || self.lead_in_s < 0.0 {
            return fail("gap and lead-in must be non-negative".into());
        }
        let needed = self.lead_in_s + self.max_events as f64 * (self.min_event_s + self.min_gap_s);
        if needed > self.min_duration_s + 1e-9 {
            return fail(format!(
                "{} events need {needed:.2} s but scenes may be {} s long",
                self.max_events, self.min_duration_s
            ));
        }
        Ok(())
    }
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Draws a scene deterministically from `(seed, bounds)`.
///
/// Events are placed one per equal slot of the timeline after the lead-in,
/// so consecutive events never overlap and are separated by at least
/// `min_gap_s`.
pub fn generate_scene(seed: u64, bounds: &GenerationBounds) -> Result<SceneScript> {
    bounds.validate()?;
    let mut rng = stream(seed, "scene", 0);

    let duration_s = if bounds.max_duration_s > bounds.min_duration_s {
        let d = rng.random_range(bounds.min_duration_s..=bounds.max_duration_s);
        ((d * 100.0).round() / 100.0).clamp(bounds.min_duration_s, bounds.max_duration_s)
    } else {
        bounds.min_duration_s
    };
    let n_events = rng.random_range(bounds.min_events..=bounds.max_events);

    let usable = duration_s - bounds.lead_in_s;
    let slot = usable / n_events as f64;
    let mut events = Vec::with_capacity(n_events);
    for k in 0..n_events {
        let label = &bounds.labels[rng.random_range(0..bounds.labels.len())];
        let entry = catalog_entry(label).expect("validated label");
        let slot_start = bounds.lead_in_s + k as f64 * slot;
        let max_len = bounds.max_event_s.min(slot - bounds.min_gap_s);
        let len = if max_len > bounds.min_event_s {
            rng.random_range(bounds.min_event_s..=max_len)
        } else {
            bounds.min_event_s
        };
        let slack = (slot - bounds.min_gap_s - len).max(0.0);
        let onset = slot_start + rng.random_range(0.0..=slack);
        let onset_s = round_ms(onset);
        let offset_s = round_ms(onset + len).min(duration_s);
        let jitter = rng.random_range(0.97..=1.03);
        events.push(SceneEvent {
            object_label: label.clone(),
            sound_class: entry.class,
            onset_s,
            offset_s,
            base_freq_hz: round_ms(entry.base_freq_hz * jitter),
        });
    }

    let caption = caption_for(&events);
    Ok(SceneScript {
        duration_s,
        fps: bounds.fps,
        sample_rate_hz: bounds.sample_rate_hz,
        events,
        caption,
        seed,
    })
}

/// `"a scene with a <label> and a <label> ..."`, each label once in onset order.
pub fn caption_for(events: &[SceneEvent]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for e in events {
        if !labels.contains(&e.object_label.as_str()) {
            labels.push(&e.object_label);
        }
    }
    if labels.is_empty() {
        return "a quiet scene".to_string();
    }
    let parts: Vec<String> = labels.iter().map(|l| format!("a {l}")).collect();
    format!("a scene with {}", parts.join(" and "))
}

/// Generates `n` scenes with seeds `base_seed, base_seed + 1, ...`.
pub fn generate_dataset(n: usize, base_seed: u64, bounds: &GenerationBounds) -> Result<Vec<Scene>> {
    (0..n as u64)
        .map(|i| generate_scene(base_seed.wrapping_add(i), bounds).map(Scene::render))
        .collect()
}

impl SceneScript {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps + 1e-9).floor() as usize
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Checks the structural invariants of a script.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Data(m));
        if !(self.duration_s > 0.0 && self.fps > 0.0 && self.sample_rate_hz > 0) {
            return fail("duration, fps and sample rate must be positive".into());
        }
        let tokens: Vec<&str> = self.caption.split_whitespace().collect();
        for (i, e) in self.events.iter().enumerate() {
            if e.object_label.is_empty()
                || e.object_label.chars().any(|c| !c.is_ascii_lowercase())
            {
                return fail(format!("event {i}: label {:?} is not a lowercase token", e.object_label));
            }
            if !(e.onset_s >= 0.0 && e.offset_s > e.onset_s && e.offset_s <= self.duration_s) {
                return fail(format!("event {i}: interval [{}, {}) is invalid", e.onset_s, e.offset_s));
            }
            if !(e.base_freq_hz > 0.0) {
                return fail(format!("event {i}: base frequency must be positive"));
            }
            if !tokens.contains(&e.object_label.as_str()) {
                return fail(format!("caption does not mention {:?}", e.object_label));
            }
        }
        if self.events.windows(2).any(|w| w[0].onset_s > w[1].onset_s) {
            return fail("events are not sorted by onset".into());
        }
        Ok(())
    }
}

/// Symbolic frames at `t = i / fps`; an object is visible (1.0) while some
/// event with its label covers `t` in `[onset, offset)`.
pub fn render_frames(script: &SceneScript) -> Vec<SymbolicFrame> {
    (0..script.frame_count())
        .map(|index| {
            let t = index as f64 / script.fps;
            let mut active: Vec<(String, f64)> = Vec::new();
            for e in &script.events {
                if t >= e.onset_s && t < e.offset_s && !active.iter().any(|(l, _)| *l == e.object_label) {
                    active.push((e.object_label.clone(), 1.0));
                }
            }
            active.sort_by(|a, b| a.0.cmp(&b.0));
            SymbolicFrame {
                index,
                active_objects: active,
            }
        })
        .collect()
}

const ATTACK_S: f64 = 0.005;
const RELEASE_S: f64 = 0.01;
const THUMP_DECAY_S: f64 = 0.08;

/// Sample index range `[start, end)` with `onset <= n / sr < offset`.
pub fn event_sample_range(event: &SceneEvent, sample_rate_hz: u32, total: usize) -> (usize, usize) {
    let sr = sample_rate_hz as f64;
    let start = ((event.onset_s * sr).ceil() as usize).min(total);
    let end = ((event.offset_s * sr).ceil() as usize).min(total);
    (start, end.max(start))
}

/// Renders every event's sound primitive inside its interval, sums overlaps
/// and clips to `[-1, 1]`. Samples outside all events are exactly zero.
pub fn render_audio(script: &SceneScript) -> Vec<f32> {
    let total = script.sample_count();
    let sr = script.sample_rate_hz as f64;
    let mut acc = vec![0.0f64; total];
    for (k, e) in script.events.iter().enumerate() {
        let (start, end) = event_sample_range(e, script.sample_rate_hz, total);
        if start == end {
            continue;
        }
        let len_s = (end - start) as f64 / sr;
        let signal = primitive(e, end - start, sr, derive_seed(script.seed, "burst", k as u64));
        for (i, s) in signal.into_iter().enumerate() {
            let tau = i as f64 / sr;
            let env = (tau / ATTACK_S).min((len_s - tau) / RELEASE_S).clamp(0.0, 1.0);
            acc[start + i] += env * s;
        }
    }
    acc.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

fn primitive(e: &SceneEvent, n: usize, sr: f64, noise_seed: u64) -> Vec<f64> {
    let f0 = e.base_freq_hz;
    let len_s = n as f64 / sr;
    match e.sound_class {
        SoundClass::Beep => (0..n)
            .map(|i| 0.5 * (2.0 * PI * f0 * i as f64 / sr).sin())
            .collect(),
        SoundClass::Chirp => (0..n)
            .map(|i| {
                let tau = i as f64 / sr;
                // instantaneous frequency sweeps f0 -> 2 f0
                0.5 * (2.0 * PI * f0 * (tau + tau * tau / (2.0 * len_s))).sin()
            })
            .collect(),
        SoundClass::Thump => (0..n)
            .map(|i| {
                let tau = i as f64 / sr;
                0.8 * (2.0 * PI * f0 * tau).sin() * (-tau / THUMP_DECAY_S).exp()
            })
            .collect(),
        SoundClass::Burst => {
            let mut rng = Rng::seed_from_u64(noise_seed);
            let a = (-2.0 * PI * f0 / sr).exp();
            let gain = 0.4 * ((1.0 + a) / (1.0 - a)).sqrt();
            let mut y = 0.0;
            (0..n)
                .map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    y = (1.0 - a) * x + a * y;
                    gain * y
                })
                .collect()
        }
    }
}
