//! Named parameter collections, the Adam optimizer, and the checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic  b"VTACKPT1"
//! u32    config echo length, then UTF-8 bytes
//! u32    parameter count
//! per parameter:
//!   u32 name length, UTF-8 name, u32 rows, u32 cols, rows*cols f64 values
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::tape::{Gradients, Graph, Var};

const MAGIC: &[u8; 8] = b"VTACKPT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.values[i] = value;
        } else {
            self.index.insert(name.clone(), self.names.len());
            self.names.push(name);
            self.values.push(value);
        }
    }

    /// Inserts a `rows × cols` matrix with entries `N(0, std²)`.
    pub fn insert_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) {
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data));
    }

    /// Inserts a `rows × cols` matrix with entries uniform in `±sqrt(6 / (rows + cols))`.
    pub fn insert_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Places every parameter on the tape as a differentiable leaf.
    pub fn bind<'a>(&'a self, g: &mut Graph) -> Bound<'a> {
        let vars = self.values.iter().map(|m| g.param(m.clone())).collect();
        Bound { set: self, vars }
    }

    /// Places every parameter on the tape as a constant (inference only).
    pub fn bind_frozen<'a>(&'a self, g: &mut Graph) -> Bound<'a> {
        let vars = self.values.iter().map(|m| g.constant(m.clone())).collect();
        Bound { set: self, vars }
    }

    pub fn save(&self, path: &Path, config_echo: &str) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w, config_echo)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write, config_echo: &str) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, config_echo.len())?;
        w.write_all(config_echo.as_bytes())?;
        write_u32(w, self.len())?;
        for (name, m) in self.iter() {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, m.rows())?;
            write_u32(w, m.cols())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint, returning the parameters and the config echo.
    pub fn load(path: &Path) -> Result<(ParamSet, String)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<(ParamSet, String)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "not a vtalab checkpoint",
            ));
        }
        let echo = read_string(r)?;
        let count = read_u32(r)?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name = read_string(r)?;
            let rows = read_u32(r)?;
            let cols = read_u32(r)?;
            let mut data = Vec::with_capacity(rows * cols);
            let mut word = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut word)?;
                data.push(f64::from_le_bytes(word));
            }
            set.insert(name, Matrix::from_vec(rows, cols, data));
        }
        Ok((set, echo))
    }
}

/// A [`ParamSet`] bound to a tape.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> Bound<'a> {
    /// Binds `set` to tape nodes created elsewhere, in parameter order.
    pub fn from_vars(set: &'a ParamSet, vars: Vec<Var>) -> Self {
        assert_eq!(set.len(), vars.len(), "one node per parameter");
        Self { set, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self
            .set
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[*i]
    }

    /// Gradients aligned with the parameter order of the bound set.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.vars
            .iter()
            .zip(self.set.values())
            .map(|(v, m)| grads.get_or_zeros(*v, m.shape()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix]) {
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        if self.m.is_empty() {
            self.m = params.values().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, p) in params.values_mut().iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

fn write_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(std::io::Error::other)?;
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<usize> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    Ok(u32::from_le_bytes(word) as usize)
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = stream(1, "test", 0);
        let mut set = ParamSet::new();
        set.insert_normal("a.w", 3, 2, 1.0, &mut rng);
        set.insert_xavier("b", 1, 4, &mut rng);
        let mut buf = Vec::new();
        set.write_to(&mut buf, "seed = 1\n").unwrap();
        let (back, echo) = ParamSet::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, set);
        assert_eq!(echo, "seed = 1\n");
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = stream(2, "test", 0);
        let mut set = ParamSet::new();
        set.insert_normal("w", 2, 2, 1.0, &mut rng);
        let before = set.clone();
        let mut opt = Adam::new(0.0);
        for _ in 0..5 {
            opt.step(&mut set, &[Matrix::filled(2, 2, 3.0)]);
        }
        assert_eq!(set, before);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut set = ParamSet::new();
        set.insert("x", Matrix::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..300 {
            let g = set.get("x").unwrap().scale(2.0);
            opt.step(&mut set, &[g]);
        }
        assert!(set.get("x").unwrap().frobenius() < 0.05);
    }
}
