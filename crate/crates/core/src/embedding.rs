//! The shared text/vision embedding space.
//!
//! Labels map to deterministic unit vectors seeded by a hash of
//! `(space seed, label)`. Frames embed as a fixed background vector plus the
//! visibility-weighted label vectors of their active objects, so frame and
//! object embeddings live in one space.

use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grounding::{extract_nouns, Lexicon};
use crate::matrix::{norm, Matrix};
use crate::rng::Rng;
use crate::scene::SymbolicFrame;
use crate::tape::{Graph, Var};

use rand::SeedableRng;

/// Anything that maps an object label to a vector.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, label: &str) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingSpace {
    pub dim: usize,
    pub seed: u64,
}

/// Key for the background vector; never a valid lowercase label.
const BACKGROUND_KEY: &str = "\u{0}scene";

impl EmbeddingSpace {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn unit_vector(&self, key: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = Rng::from_seed(seed);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    pub fn embed_text(&self, label: &str) -> Result<Vec<f64>> {
        if label.is_empty() {
            return Err(Error::Contract("cannot embed an empty label".into()));
        }
        Ok(self.unit_vector(label))
    }

    pub fn background(&self) -> Vec<f64> {
        self.unit_vector(BACKGROUND_KEY)
    }

    /// Background plus `visibility × embed_text(label)` over active objects.
    pub fn embed_frame(&self, frame: &SymbolicFrame) -> Vec<f64> {
        let mut v = self.background();
        for (label, visibility) in &frame.active_objects {
            let e = self.unit_vector(label);
            for (o, x) in v.iter_mut().zip(e) {
                *o += visibility * x;
            }
        }
        v
    }

    /// The video conditioner: one embedded row per frame.
    pub fn embed_video(&self, frames: &[SymbolicFrame]) -> Matrix {
        let mut data = Vec::with_capacity(frames.len() * self.dim);
        for f in frames {
            data.extend(self.embed_frame(f));
        }
        Matrix::from_vec(frames.len(), self.dim, data)
    }

    /// Utterance-level caption embedding: mean label vector over the
    /// extracted nouns, zero when there are none.
    pub fn embed_caption(&self, caption: &str, lexicon: &Lexicon) -> Matrix {
        let nouns = extract_nouns(caption, lexicon);
        let mut v = vec![0.0; self.dim];
        for noun in &nouns {
            for (o, x) in v.iter_mut().zip(self.unit_vector(noun)) {
                *o += x;
            }
        }
        if !nouns.is_empty() {
            let k = nouns.len() as f64;
            v.iter_mut().for_each(|x| *x /= k);
        }
        Matrix::from_vec(1, self.dim, v)
    }
}

impl TextEmbedder for EmbeddingSpace {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, label: &str) -> Result<Vec<f64>> {
        self.embed_text(label)
    }
}

/// Affine map `x · Wᵀ + b` into the denoiser width.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Projection {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.rows() {
            return Err(Error::Contract(format!(
                "bias shape {:?} does not fit weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d_in() {
            return Err(Error::Contract(format!(
                "projection expects {} columns, got {}",
                self.d_in(),
                x.cols()
            )));
        }
        let mut y = x.matmul_t(&self.weight);
        for r in 0..y.rows() {
            for (o, b) in y.row_mut(r).iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(y)
    }

    /// The same map on a tape, with weight and bias supplied as tape nodes.
    pub fn on_tape(g: &mut Graph, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        if g.shape(x).1 != g.shape(weight).1 {
            return Err(Error::Contract(format!(
                "projection expects {} columns, got {}",
                g.shape(weight).1,
                g.shape(x).1
            )));
        }
        Ok(g.linear(x, weight, bias))
    }
}

pub fn project(x: &Matrix, p: &Projection) -> Result<Matrix> {
    p.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::dot;
    use crate::tape::check::max_relative_error;

    fn space() -> EmbeddingSpace {
        EmbeddingSpace::new(64, 0).unwrap()
    }

    fn frame(objects: &[(&str, f64)]) -> SymbolicFrame {
        SymbolicFrame {
            index: 0,
            active_objects: objects.iter().map(|(l, v)| (l.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn text_embedding_is_deterministic_unit_norm() {
        let s = space();
        let a = s.embed_text("dog").unwrap();
        assert_eq!(a, s.embed_text("dog").unwrap());
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert!(s.embed_text("").is_err());
        assert_ne!(a, EmbeddingSpace::new(64, 1).unwrap().embed_text("dog").unwrap());
    }

    #[test]
    fn fifty_words_are_separable() {
        let s = space();
        let words: Vec<String> = (0..50).map(|i| format!("word{i}")).collect();
        let vecs: Vec<Vec<f64>> = words.iter().map(|w| s.embed_text(w).unwrap()).collect();
        let mut worst: f64 = -1.0;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                worst = worst.max(dot(&vecs[i], &vecs[j]));
            }
        }
        assert!(worst < 0.8, "max pairwise cosine {worst}");
    }

    #[test]
    fn frame_embeddings() {
        let s = space();
        assert_eq!(s.embed_frame(&frame(&[])), s.background());
        let dog = s.embed_frame(&frame(&[("dog", 1.0)]));
        let expected: Vec<f64> = s
            .background()
            .iter()
            .zip(s.embed_text("dog").unwrap())
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(dog, expected);
        assert_eq!(
            s.embed_frame(&frame(&[("car", 1.0), ("dog", 0.5)])),
            s.embed_frame(&frame(&[("car", 1.0), ("dog", 0.5)]))
        );
    }

    #[test]
    fn caption_embedding_is_mean_of_nouns() {
        let s = space();
        let lex = Lexicon::from_words(["dog", "car", "man"]);
        let both = s.embed_caption("a scene with a dog and a car", &lex);
        let (d, c) = (s.embed_text("dog").unwrap(), s.embed_text("car").unwrap());
        for i in 0..64 {
            assert!((both[(0, i)] - (d[i] + c[i]) / 2.0).abs() < 1e-15);
        }
        assert!(s.embed_caption("nothing here", &lex).data().iter().all(|&v| v == 0.0));
        assert_eq!(s.embed_caption("a dog", &lex).data(), d.as_slice());
    }

    #[test]
    fn projection_identity_and_bias() {
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]);
        let id = Projection::new(Matrix::identity(3), Matrix::zeros(1, 3)).unwrap();
        assert_eq!(project(&x, &id).unwrap(), x);
        let b = Matrix::row_vector(&[4.0, 5.0]);
        let zero = Projection::new(Matrix::zeros(2, 3), b.clone()).unwrap();
        let y = project(&x, &zero).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), b.data());
        }
        assert!(project(&Matrix::zeros(1, 4), &id).is_err());
    }

    #[test]
    fn projection_gradient_matches_finite_differences() {
        let x = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let w = Matrix::from_vec(2, 4, (0..8).map(|i| (i as f64 * 0.91).cos()).collect());
        let b = Matrix::row_vector(&[0.1, -0.3]);
        let err = max_relative_error(
            &[x, w, b],
            |g, v| {
                let y = Projection::on_tape(g, v[0], v[1], Some(v[2])).unwrap();
                let y = g.tanh(y);
                let y = g.square(y);
                g.sum(y)
            },
            1e-6,
            1e-8,
        );
        assert!(err < 1e-4, "relative error {err}");
    }
}
