//! Seeded synthetic decode workloads and file-backed ones.
//!
//! A workload is a grid of items indexed by `(prompt, step, layer, group)`.
//! Each item holds one KV head and the queries of the heads that share it.
//! Synthetic items draw from their own ChaCha8 stream, so an item depends
//! only on the seed and its index.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use topp_core::Matrix;

use crate::tensor::{read_tensor, Tensor, TensorError};
use crate::HarnessError;

/// Scale of the noise added to the first head's query for the other heads
/// of a `logit_temperature` group.
pub const HEAD_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    /// i.i.d. standard normal queries, keys and values.
    GaussianQk,
    /// Keys built so the first head's scaled logits are `z / temperature`
    /// with `z` standard normal.
    LogitTemperature,
    /// Tensors read from `keys`, `values` and `queries`.
    File,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Context length.
    pub n: usize,
    pub d: usize,
    /// Query heads.
    pub heads: usize,
    /// Query heads per KV head.
    pub group_size: usize,
    pub layers: usize,
    pub prompts: usize,
    /// Decode steps per prompt.
    pub count: usize,
    pub temperature: f64,
    pub seed: u64,
    /// `[kv_heads, n, d]` or `[n, d]`.
    pub keys: Option<PathBuf>,
    pub values: Option<PathBuf>,
    /// `[steps, heads, d]` or `[heads, d]`.
    pub queries: Option<PathBuf>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::GaussianQk,
            n: 1024,
            d: 64,
            heads: 1,
            group_size: 1,
            layers: 1,
            prompts: 1,
            count: 4,
            temperature: 1.0,
            seed: 0,
            keys: None,
            values: None,
            queries: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        for (name, v) in [
            ("n", self.n),
            ("d", self.d),
            ("heads", self.heads),
            ("group_size", self.group_size),
            ("layers", self.layers),
            ("prompts", self.prompts),
        ] {
            if v == 0 {
                return Err(invalid(format!("workload.{name} must be positive")));
            }
        }
        if self.heads % self.group_size != 0 {
            return Err(invalid("workload.heads must be a multiple of group_size"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(invalid("workload.temperature must be positive and finite"));
        }
        let has_paths = [&self.keys, &self.values, &self.queries].map(Option::is_some);
        match self.kind {
            WorkloadKind::File if has_paths != [true; 3] => Err(invalid(
                "file workloads need keys, values and queries paths",
            )),
            WorkloadKind::File => Ok(()),
            _ if has_paths.contains(&true) => {
                Err(invalid("tensor paths are only valid for file workloads"))
            }
            _ => Ok(()),
        }
    }

    pub fn kv_heads(&self) -> usize {
        self.heads / self.group_size
    }
}

/// One KV head at one `(prompt, step, layer)` with its group's queries.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadItem {
    pub prompt: usize,
    pub step: usize,
    pub layer: usize,
    pub group: usize,
    /// Global index of the first query head in the group.
    pub first_head: usize,
    pub keys: Matrix<f32>,
    pub values: Matrix<f32>,
    pub queries: Vec<Vec<f32>>,
}

struct FileData {
    keys: Vec<Matrix<f32>>,
    values: Vec<Matrix<f32>>,
    /// `[step][head]`.
    queries: Vec<Vec<Vec<f32>>>,
}

/// Items are produced on demand; synthetic ones are regenerated per call.
pub struct Workload {
    spec: WorkloadSpec,
    file: Option<FileData>,
}

fn tensor_err(path: &std::path::Path, e: TensorError) -> HarnessError {
    HarnessError::Tensor {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Splits a rank-3 tensor (or rank-2, as one slab) into row-major slabs.
fn slabs(t: Tensor, path: &std::path::Path) -> Result<(Vec<Vec<f32>>, usize, usize), HarnessError> {
    let dims: Vec<usize> = t.dims().iter().map(|&d| d as usize).collect();
    let (outer, rows, cols) = match dims[..] {
        [r, c] => (1, r, c),
        [o, r, c] => (o, r, c),
        _ => {
            return Err(tensor_err(
                path,
                TensorError::RankMismatch {
                    expected: 3,
                    found: dims.len(),
                },
            ))
        }
    };
    let data = t.into_data();
    let step = rows * cols;
    let out = (0..outer)
        .map(|i| data[i * step..(i + 1) * step].to_vec())
        .collect();
    Ok((out, rows, cols))
}

impl Workload {
    pub fn new(spec: &WorkloadSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        let mut spec = spec.clone();
        let file = match spec.kind {
            WorkloadKind::File => Some(Self::load(&mut spec)?),
            _ => None,
        };
        Ok(Self { spec, file })
    }

    /// Reads the tensors and overwrites the spec's shape fields with theirs.
    fn load(spec: &mut WorkloadSpec) -> Result<FileData, HarnessError> {
        let read = |p: &Option<PathBuf>| {
            let p = p.as_ref().expect("validated");
            read_tensor(p)
                .map_err(|e| tensor_err(p, e))
                .and_then(|t| slabs(t, p))
        };
        let (k, n, d) = read(&spec.keys)?;
        let (v, vn, vd) = read(&spec.values)?;
        let (q, heads, qd) = read(&spec.queries)?;
        if (vn, vd) != (n, d) || k.len() != v.len() {
            return Err(invalid("keys and values tensors differ in shape"));
        }
        if qd != d {
            return Err(invalid("queries and keys differ in head dimension"));
        }
        if n == 0 || d == 0 || heads == 0 || heads % k.len() != 0 {
            return Err(invalid(
                "query heads must be a positive multiple of kv heads",
            ));
        }
        let to_matrix = |s: Vec<f32>| Matrix::new(n, d, s).expect("shape checked");
        spec.n = n;
        spec.d = d;
        spec.heads = heads;
        spec.group_size = heads / k.len();
        spec.layers = 1;
        spec.prompts = 1;
        spec.count = q.len();
        Ok(FileData {
            keys: k.into_iter().map(to_matrix).collect(),
            values: v.into_iter().map(to_matrix).collect(),
            queries: q
                .into_iter()
                .map(|s| s.chunks(d).map(<[f32]>::to_vec).collect())
                .collect(),
        })
    }

    /// The effective spec; file workloads take their shape from the tensors.
    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        let s = &self.spec;
        s.prompts * s.count * s.layers * s.kv_heads()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self, index: usize) -> WorkloadItem {
        assert!(index < self.len(), "workload item {index} out of range");
        let s = &self.spec;
        let groups = s.kv_heads();
        let group = index % groups;
        let layer = index / groups % s.layers;
        let step = index / (groups * s.layers) % s.count;
        let prompt = index / (groups * s.layers * s.count);
        let (keys, values, queries) = match &self.file {
            Some(f) => (
                f.keys[group].clone(),
                f.values[group].clone(),
                f.queries[step][group * s.group_size..(group + 1) * s.group_size].to_vec(),
            ),
            None => self.synthesize(index as u64),
        };
        WorkloadItem {
            prompt,
            step,
            layer,
            group,
            first_head: group * s.group_size,
            keys,
            values,
            queries,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WorkloadItem> + '_ {
        (0..self.len()).map(|i| self.item(i))
    }

    fn synthesize(&self, stream: u64) -> (Matrix<f32>, Matrix<f32>, Vec<Vec<f32>>) {
        let s = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(stream);
        let (keys, queries) = match s.kind {
            WorkloadKind::GaussianQk => {
                let keys = gaussian(&mut rng, s.n * s.d);
                let queries = (0..s.group_size).map(|_| gaussian(&mut rng, s.d)).collect();
                (keys, queries)
            }
            WorkloadKind::LogitTemperature => {
                let q0 = gaussian(&mut rng, s.d);
                let target: Vec<f64> = gaussian(&mut rng, s.n)
                    .into_iter()
                    .map(|z| z / s.temperature)
                    .collect();
                let keys = keys_for_logits(&mut rng, &q0, &target);
                let mut queries = vec![q0.clone()];
                for _ in 1..s.group_size {
                    let noise = gaussian(&mut rng, s.d);
                    queries.push(
                        q0.iter()
                            .zip(noise)
                            .map(|(a, b)| a + HEAD_JITTER * b)
                            .collect(),
                    );
                }
                (keys, queries)
            }
            WorkloadKind::File => unreachable!("file workloads are not synthesized"),
        };
        let values = gaussian(&mut rng, s.n * s.d);
        let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
        (
            Matrix::new(s.n, s.d, to32(keys)).expect("positive dims"),
            Matrix::new(s.n, s.d, to32(values)).expect("positive dims"),
            queries.into_iter().map(to32).collect(),
        )
    }
}

fn gaussian(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Row `i` is `target[i] * sqrt(d) / |q|^2 * q` plus Gaussian noise
/// projected orthogonal to `q`, so `q . k_i / sqrt(d) = target[i]`.
fn keys_for_logits(rng: &mut impl Rng, q: &[f64], target: &[f64]) -> Vec<f64> {
    let d = q.len();
    let qq: f64 = q.iter().map(|x| x * x).sum();
    let mut out = Vec::with_capacity(target.len() * d);
    for &t in target {
        let noise = gaussian(rng, d);
        let proj = noise.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / qq;
        let coef = t * (d as f64).sqrt() / qq;
        out.extend(
            noise
                .iter()
                .zip(q)
                .map(|(r, &qc)| r - proj * qc + coef * qc),
        );
    }
    out
}
