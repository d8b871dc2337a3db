//! On-disk scene datasets.
//!
//! A dataset directory holds a `manifest` (JSON lines: a header record with
//! the shared sample rate and frame rate, then one record per scene), one
//! `NNNN.script` JSON file per scene, and one `NNNN.pcm` file per scene with
//! mono little-endian `f32` samples.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Scene, SceneScript};

pub const MANIFEST: &str = "manifest";
const FORMAT: &str = "vtalab-dataset";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    sample_rate_hz: u32,
    fps: f64,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    index: usize,
    seed: u64,
    duration_s: f64,
    caption: String,
    script: String,
    audio: String,
}

pub fn clip_id(index: usize) -> String {
    format!("{index:04}")
}

pub fn write_pcm(path: &Path, samples: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for s in samples {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pcm(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{} is not a whole number of f32 samples",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `scenes` into `dir`, creating it if needed.
pub fn save_dataset(scenes: &[Scene], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (sample_rate_hz, fps) = match scenes.first() {
        Some(s) => (s.script.sample_rate_hz, s.script.fps),
        None => (0, 0.0),
    };
    if let Some(bad) = scenes
        .iter()
        .position(|s| s.script.sample_rate_hz != sample_rate_hz || s.script.fps != fps)
    {
        return Err(Error::Data(format!(
            "scene {bad} does not share the dataset sample rate and frame rate"
        )));
    }

    let header = Header {
        format: FORMAT.into(),
        version: 1,
        sample_rate_hz,
        fps,
        count: scenes.len(),
    };
    let mut manifest = to_line(&header);
    for (index, scene) in scenes.iter().enumerate() {
        let id = clip_id(index);
        let record = Record {
            index,
            seed: scene.script.seed,
            duration_s: scene.script.duration_s,
            caption: scene.script.caption.clone(),
            script: format!("{id}.script"),
            audio: format!("{id}.pcm"),
        };
        let script_path = dir.join(&record.script);
        let json = serde_json::to_string_pretty(&scene.script).expect("script serializes");
        fs::write(&script_path, json).map_err(|e| Error::io(&script_path, e))?;
        write_pcm(&dir.join(&record.audio), &scene.waveform)?;
        manifest.push_str(&to_line(&record));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn to_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("record serializes");
    s.push('\n');
    s
}

/// Loads a dataset written by [`save_dataset`].
///
/// Record numbering in parse errors is zero-based over scene records; the
/// header is reported as record 0 with a "header" message prefix.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    let header: Header = lines
        .next()
        .ok_or_else(|| parse_err(0, "header: manifest is empty"))
        .and_then(|l| serde_json::from_str(l).map_err(|e| parse_err(0, format!("header: {e}"))))?;
    if header.format != FORMAT {
        return Err(parse_err(0, format!("header: unknown format {:?}", header.format)));
    }

    let mut scenes = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let record: Record =
            serde_json::from_str(line).map_err(|e| parse_err(i, e.to_string()))?;
        if record.index != i {
            return Err(parse_err(i, format!("expected index {i}, found {}", record.index)));
        }
        let script_path = dir.join(&record.script);
        let script_text =
            fs::read_to_string(&script_path).map_err(|e| Error::io(&script_path, e))?;
        let script: SceneScript =
            serde_json::from_str(&script_text).map_err(|e| parse_err(i, e.to_string()))?;
        let waveform = read_pcm(&dir.join(&record.audio)).map_err(|e| parse_err(i, e.to_string()))?;
        if waveform.len() != script.sample_count() {
            return Err(parse_err(
                i,
                format!(
                    "audio has {} samples, script implies {}",
                    waveform.len(),
                    script.sample_count()
                ),
            ));
        }
        if record.seed != script.seed || record.caption != script.caption {
            return Err(parse_err(i, "manifest record disagrees with its script"));
        }
        scenes.push(Scene { script, waveform });
    }
    if scenes.len() != header.count {
        return Err(parse_err(
            scenes.len(),
            format!("manifest declares {} scenes but lists {}", header.count, scenes.len()),
        ));
    }
    Ok(scenes)
}

/// Files that make up a dataset, in manifest order (used for content hashing).
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let scenes = load_dataset(dir)?;
    let mut files = vec![dir.join(MANIFEST)];
    for i in 0..scenes.len() {
        let id = clip_id(i);
        files.push(dir.join(format!("{id}.script")));
        files.push(dir.join(format!("{id}.pcm")));
    }
    Ok(files)
}

fn parse_err(record: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        record,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_dataset, GenerationBounds};

    fn bounds() -> GenerationBounds {
        GenerationBounds {
            min_duration_s: 2.0,
            max_duration_s: 3.0,
            sample_rate_hz: 8000,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = generate_dataset(10, 40, &bounds()).unwrap();
        save_dataset(&scenes, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&[], dir.path()).unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn truncated_manifest_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = generate_dataset(3, 1, &bounds()).unwrap();
        save_dataset(&scenes, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 20]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_audio_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = generate_dataset(3, 1, &bounds()).unwrap();
        save_dataset(&scenes, dir.path()).unwrap();
        let pcm = dir.path().join("0001.pcm");
        let bytes = fs::read(&pcm).unwrap();
        fs::write(&pcm, &bytes[..bytes.len() - 8]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_directory_is_a_persistence_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, Error::Persistence { .. }));
        assert!(err.to_string().contains("nope"));
    }
}
