//! Named parameter storage, Glorot initialisation, Adam and checkpoints.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Grads;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    /// Glorot-uniform matrix of shape `rows x cols`.
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..=limit));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.values[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names
            || self.values.iter().zip(&other.values).any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = params.values.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<()> {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (idx, p) in params.values.iter_mut().enumerate() {
            let Some(g) = grads.get(idx) else { continue };
            if g.dim() != p.dim() {
                return Err(Error::Shape(format!("gradient shape for {}", params.names[idx])));
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"DPLRCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    params: Vec<(String, usize, usize)>,
}

/// Writes `meta` as a JSON header followed by every parameter as
/// little-endian `f64` bits, so a round trip is bit-exact.
pub fn save_checkpoint<W: Write, M: Serialize>(mut w: W, meta: &M, params: &ParamStore) -> Result<()> {
    let header = Header {
        meta,
        params: params
            .iter()
            .map(|(n, v)| (n.to_string(), v.nrows(), v.ncols()))
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, v) in params.iter() {
        for x in v.iter() {
            w.write_all(&x.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read, M: for<'de> Deserialize<'de>>(mut r: R) -> Result<(M, ParamStore)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(b8) as usize;
    if len > 1 << 30 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header<M> = serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = ParamStore::new();
    for (name, rows, cols) in header.params {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut b8).map_err(|_| bad("truncated parameters"))?;
            data.push(f64::from_bits(u64::from_le_bytes(b8)));
        }
        let value = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        params.add(name, value);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok((header.meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::new();
        p.add_glorot("w", 4, 3, &mut rng);
        p.add_zeros("b", 1, 3);
        p
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamStore::new();
        let i = p.add_glorot("w", 64, 64, &mut rng);
        let limit = (6.0f64 / 128.0).sqrt();
        assert!(p.get(i).iter().all(|x| x.abs() <= limit));
        let mean = p.get(i).mean().unwrap();
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut p = store();
        p.get_mut(1)[(0, 1)] = f64::MIN_POSITIVE / 3.0;
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &"meta".to_string(), &p).unwrap();
        let (meta, q): (String, ParamStore) = load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(meta, "meta");
        for ((na, a), (nb, b)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corrupt_checkpoints_fail() {
        let p = store();
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &0u32, &p).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(load_checkpoint::<_, u32>(truncated), Err(Error::Checkpoint(_))));
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(load_checkpoint::<_, u32>(wrong.as_slice()), Err(Error::Checkpoint(_))));
        let mut version = buf.clone();
        version[8] = 9;
        assert!(matches!(load_checkpoint::<_, u32>(version.as_slice()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParamStore::new();
        p.add("x", Array2::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &p);
        for _ in 0..2000 {
            let mut t = Tape::new();
            let x = t.param(0, p.get(0).clone());
            let y = t.offset(x, -1.0);
            let y = t.square(y);
            let l = t.mean(y);
            let g = t.backward(l, 1).unwrap();
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.get(0).iter().all(|x| (x - 1.0).abs() < 1e-3));
        assert_eq!(opt.steps(), 2000);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        p.add("x", Array2::from_elem((1, 1), 0.0));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let grads = Grads {
            grads: vec![Some(Array2::from_elem((1, 1), 5.0))],
        };
        opt.step(&mut p, &grads).unwrap();
        assert!((p.get(0)[(0, 0)] + 1e-4).abs() < 1e-10);
    }
}
