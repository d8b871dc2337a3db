//! Noun extraction, per-frame object grounding and probability-weighted
//! semantic aggregation into the sequential object conditioner.
//!
//! The grounder is an interface: [`OracleGrounder`] reads visibilities off
//! the symbolic frame, and any detector producing `(label, probability)`
//! pairs for the prompted nouns can replace it.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng as _;

use crate::embedding::TextEmbedder;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::stream;
use crate::scene::SymbolicFrame;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    words: BTreeSet<String>,
}

impl Lexicon {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// The labels of the built-in object catalog.
    pub fn catalog() -> Self {
        Self::from_words(crate::scene::catalog().iter().map(|e| e.label))
    }

    /// One lowercase token per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lex = Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        );
        if lex.is_empty() {
            return Err(Error::Config(format!("lexicon {} is empty", path.display())));
        }
        Ok(lex)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

/// Caption tokens found in the lexicon, lowercased, deduplicated, in order
/// of first occurrence.
pub fn extract_nouns(caption: &str, lexicon: &Lexicon) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for token in caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let token = token.to_lowercase();
        if lexicon.contains(&token) && !out.contains(&token) {
            out.push(token);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub label: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundingResult {
    pub frame_index: usize,
    pub detections: Vec<Detection>,
}

pub trait Grounder {
    fn ground(&self, frame: &SymbolicFrame, nouns: &[String]) -> Result<GroundingResult>;
}

/// Reads object visibility off the frame, optionally perturbed by uniform
/// noise of half-width `noise_level` and clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct OracleGrounder {
    pub noise_level: f64,
    pub seed: u64,
}

impl Grounder for OracleGrounder {
    fn ground(&self, frame: &SymbolicFrame, nouns: &[String]) -> Result<GroundingResult> {
        ground_frame(frame, nouns, self.noise_level, self.seed)
    }
}

pub fn ground_frame(
    frame: &SymbolicFrame,
    nouns: &[String],
    noise_level: f64,
    seed: u64,
) -> Result<GroundingResult> {
    if nouns.is_empty() {
        return Err(Error::Grounding("no nouns to prompt the grounder with".into()));
    }
    if !(0.0..1.0).contains(&noise_level) {
        return Err(Error::Grounding(format!("noise level {noise_level} outside [0, 1)")));
    }
    let mut rng = stream(seed, "grounding", frame.index as u64);
    let mut detections = Vec::with_capacity(nouns.len());
    for noun in nouns {
        if detections.iter().any(|d: &Detection| &d.label == noun) {
            continue;
        }
        let base = frame.visibility(noun).unwrap_or(0.0);
        let p = if noise_level > 0.0 {
            base + rng.random_range(-noise_level..=noise_level)
        } else {
            base
        };
        detections.push(Detection {
            label: noun.clone(),
            probability: p.clamp(0.0, 1.0),
        });
    }
    Ok(GroundingResult {
        frame_index: frame.index,
        detections,
    })
}

/// `s = Σ_j p_j · E_t(o_j)`; the zero vector when there is nothing to sum.
pub fn aggregate_semantics(result: &GroundingResult, embedder: &dyn TextEmbedder) -> Result<Vec<f64>> {
    let d = embedder.dim();
    let mut s = vec![0.0; d];
    for det in &result.detections {
        let e = embedder.embed(&det.label)?;
        if e.len() != d {
            return Err(Error::Contract(format!(
                "embedding of {:?} has dimension {}, expected {d}",
                det.label,
                e.len()
            )));
        }
        if det.probability == 0.0 {
            continue;
        }
        for (o, x) in s.iter_mut().zip(e) {
            *o += det.probability * x;
        }
    }
    Ok(s)
}

/// Sequential object conditioner, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectConditioner {
    pub vectors: Matrix,
}

pub fn build_object_conditioner(
    frames: &[SymbolicFrame],
    caption: &str,
    lexicon: &Lexicon,
    embedder: &dyn TextEmbedder,
    grounder: &dyn Grounder,
) -> Result<ObjectConditioner> {
    if frames.is_empty() {
        return Err(Error::Grounding("no frames to ground".into()));
    }
    let d = embedder.dim();
    let nouns = extract_nouns(caption, lexicon);
    if nouns.is_empty() {
        log::warn!("caption {caption:?} has no lexicon nouns; object conditioner is zero");
        return Ok(ObjectConditioner {
            vectors: Matrix::zeros(frames.len(), d),
        });
    }
    let mut data = Vec::with_capacity(frames.len() * d);
    for frame in frames {
        let result = grounder.ground(frame, &nouns)?;
        data.extend(aggregate_semantics(&result, embedder)?);
    }
    Ok(ObjectConditioner {
        vectors: Matrix::from_vec(frames.len(), d, data),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingSpace;

    /// Unit basis vectors keyed by a fixed label order.
    pub(crate) struct Basis(pub Vec<&'static str>);

    impl TextEmbedder for Basis {
        fn dim(&self) -> usize {
            self.0.len()
        }

        fn embed(&self, label: &str) -> Result<Vec<f64>> {
            let i = self
                .0
                .iter()
                .position(|l| *l == label)
                .ok_or_else(|| Error::Contract(format!("unknown {label}")))?;
            let mut v = vec![0.0; self.0.len()];
            v[i] = 1.0;
            Ok(v)
        }
    }

    fn frame(index: usize, objects: &[(&str, f64)]) -> SymbolicFrame {
        SymbolicFrame {
            index,
            active_objects: objects.iter().map(|(l, v)| (l.to_string(), *v)).collect(),
        }
    }

    fn result(dets: &[(&str, f64)]) -> GroundingResult {
        GroundingResult {
            frame_index: 0,
            detections: dets
                .iter()
                .map(|(l, p)| Detection {
                    label: l.to_string(),
                    probability: *p,
                })
                .collect(),
        }
    }

    #[test]
    fn noun_extraction() {
        let lex = Lexicon::from_words(["dog", "car", "man"]);
        assert_eq!(extract_nouns("a scene with a dog and a car", &lex), ["dog", "car"]);
        assert!(extract_nouns("", &lex).is_empty());
        assert_eq!(extract_nouns("dog dog dog", &Lexicon::from_words(["dog"])), ["dog"]);
        assert_eq!(extract_nouns("A Dog, a CAR.", &lex), ["dog", "car"]);
    }

    #[test]
    fn oracle_grounding() {
        let nouns = vec!["car".to_string(), "man".to_string()];
        let r = ground_frame(&frame(0, &[("car", 1.0)]), &nouns, 0.0, 1).unwrap();
        assert_eq!(r, result(&[("car", 1.0), ("man", 0.0)]));
        let r = ground_frame(&frame(0, &[]), &["dog".to_string()], 0.0, 1).unwrap();
        assert_eq!(r, result(&[("dog", 0.0)]));
        assert!(matches!(
            ground_frame(&frame(0, &[]), &[], 0.0, 1),
            Err(Error::Grounding(_))
        ));
    }

    #[test]
    fn noisy_grounding_is_deterministic_and_clamped() {
        let nouns = vec!["car".to_string(), "man".to_string()];
        let f = frame(3, &[("car", 1.0)]);
        let a = ground_frame(&f, &nouns, 0.1, 9).unwrap();
        assert_eq!(a, ground_frame(&f, &nouns, 0.1, 9).unwrap());
        for d in &a.detections {
            assert!((0.0..=1.0).contains(&d.probability));
        }
        assert!(a.detections[0].probability >= 0.9);
        assert!(a.detections[1].probability <= 0.1);
    }

    #[test]
    fn aggregation_cases() {
        let basis = Basis(vec!["a", "b"]);
        assert_eq!(aggregate_semantics(&result(&[("a", 1.0)]), &basis).unwrap(), [1.0, 0.0]);
        assert_eq!(
            aggregate_semantics(&result(&[("a", 0.6), ("b", 0.4)]), &basis).unwrap(),
            [0.6, 0.4]
        );
        assert_eq!(aggregate_semantics(&result(&[]), &basis).unwrap(), [0.0, 0.0]);
    }

    struct Ragged;

    impl TextEmbedder for Ragged {
        fn dim(&self) -> usize {
            2
        }

        fn embed(&self, label: &str) -> Result<Vec<f64>> {
            Ok(vec![1.0; label.len()])
        }
    }

    #[test]
    fn dimension_mismatch_is_a_contract_violation() {
        let err = aggregate_semantics(&result(&[("abc", 1.0)]), &Ragged).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn conditioner_follows_visibility() {
        let space = EmbeddingSpace::new(16, 4).unwrap();
        let frames: Vec<SymbolicFrame> = (0..40)
            .map(|i| {
                if (10..20).contains(&i) {
                    frame(i, &[("dog", 1.0)])
                } else {
                    frame(i, &[])
                }
            })
            .collect();
        let lex = Lexicon::from_words(["dog", "car"]);
        let oracle = OracleGrounder { noise_level: 0.0, seed: 0 };
        let c = build_object_conditioner(&frames, "a scene with a dog", &lex, &space, &oracle).unwrap();
        assert_eq!(c.vectors.rows(), 40);
        let dog = space.embed_text("dog").unwrap();
        for i in 0..40 {
            if (10..20).contains(&i) {
                assert_eq!(c.vectors.row(i), dog.as_slice());
            } else {
                assert!(c.vectors.row(i).iter().all(|&v| v == 0.0));
            }
        }
        let none = build_object_conditioner(&frames, "nothing at all", &lex, &space, &oracle).unwrap();
        assert!(none.vectors.data().iter().all(|&v| v == 0.0));
        assert_eq!(none.vectors.rows(), 40);
    }

    #[test]
    fn shared_space_with_frame_encoder() {
        let space = EmbeddingSpace::new(32, 2).unwrap();
        let f = frame(0, &[("bell", 1.0)]);
        let r = ground_frame(&f, &["bell".to_string()], 0.0, 0).unwrap();
        let s = aggregate_semantics(&r, &space).unwrap();
        let v = space.embed_frame(&f);
        let bg = space.background();
        for i in 0..32 {
            assert!((s[i] - (v[i] - bg[i])).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aggregation_is_linear_and_order_free(
                probs in proptest::collection::vec(0.0f64..1.0, 3),
                lambda in 0.0f64..1.0,
            ) {
                let space = EmbeddingSpace::new(8, 5).unwrap();
                let labels = ["dog", "car", "bell"];
                let dets: Vec<(&str, f64)> = labels.iter().cloned().zip(probs.iter().cloned()).collect();
                let base = aggregate_semantics(&result(&dets), &space).unwrap();
                let scaled: Vec<(&str, f64)> = dets.iter().map(|(l, p)| (*l, p * lambda)).collect();
                let s2 = aggregate_semantics(&result(&scaled), &space).unwrap();
                for (a, b) in base.iter().zip(&s2) {
                    prop_assert!((a * lambda - b).abs() < 1e-12);
                }
                let mut rev = dets.clone();
                rev.reverse();
                let s3 = aggregate_semantics(&result(&rev), &space).unwrap();
                for (a, b) in base.iter().zip(&s3) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
