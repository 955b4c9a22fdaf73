//! Named parameter collections, the SGD optimizer, and the binary checkpoint
//! format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Real, Tape, Tensor, ValueId};

/// All learnable weights of a model, keyed by name with a deterministic
/// (insertion) order. The order defines checkpoint layout and optimizer-state
/// alignment.
#[derive(Debug, Clone)]
pub struct ModelParams<R: Real = f64> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> Default for ModelParams<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ModelParams<R> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<R>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Tensor<R> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<R> {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Registers every parameter on the tape (in order) as a gradient leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape<R>) -> BoundParams<'p, R> {
        let ids = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundParams { params: self, ids }
    }

    /// Name/shape differences against another parameter set, for checkpoint
    /// compatibility errors. Empty when fully compatible.
    pub fn shape_mismatches(&self, other: &ModelParams<R>) -> Vec<String> {
        let mut out = Vec::new();
        for (name, t) in self.iter() {
            match other.get(name) {
                None => out.push(format!("{name}: missing (expected shape {:?})", t.shape())),
                Some(o) if o.shape() != t.shape() => out.push(format!(
                    "{name}: shape {:?}, expected {:?}",
                    o.shape(),
                    t.shape()
                )),
                _ => {}
            }
        }
        for (name, o) in other.iter() {
            if self.get(name).is_none() {
                out.push(format!("{name}: unexpected (shape {:?})", o.shape()));
            }
        }
        out
    }
}

/// Tape registration of a [`ModelParams`]: the ids parallel the parameter
/// order.
pub struct BoundParams<'p, R: Real> {
    params: &'p ModelParams<R>,
    ids: Vec<ValueId>,
}

impl<'p, R: Real> BoundParams<'p, R> {
    pub fn id(&self, name: &str) -> Result<ValueId> {
        self.params
            .index
            .get(name)
            .map(|&i| self.ids[i])
            .ok_or_else(|| Error::Internal(format!("unknown parameter {name}")))
    }

    /// Ids for an MLP's parameters under `prefix`, in application order.
    pub fn mlp_ids(&self, prefix: &str, spec: &super::MlpSpec) -> Result<Vec<ValueId>> {
        spec.param_shapes()
            .iter()
            .map(|(suffix, _)| self.id(&format!("{prefix}.{suffix}")))
            .collect()
    }

    pub fn ids(&self) -> &[ValueId] {
        &self.ids
    }

    /// Gradient tensors aligned with the parameter order; zero tensors where
    /// a parameter did not participate in the loss.
    pub fn collect_grads(&self, grads: &super::Gradients<R>) -> Vec<Tensor<R>> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, &id)| match grads.get(id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(self.params.tensors[i].shape().to_vec()),
            })
            .collect()
    }
}

/// Per-parameter momentum buffers, aligned with a [`ModelParams`] order.
#[derive(Debug, Clone)]
pub struct SgdState<R: Real = f64> {
    velocity: Vec<Vec<R>>,
}

impl<R: Real> SgdState<R> {
    pub fn new(params: &ModelParams<R>) -> Self {
        Self {
            velocity: params.tensors.iter().map(|t| vec![R::zero(); t.len()]).collect(),
        }
    }
}

/// One momentum-SGD update on a flat parameter slice:
/// `v = momentum*v + (grad + weight_decay*param); param -= lr*v`.
pub fn sgd_update<R: Real>(
    param: &mut [R],
    grad: &[R],
    velocity: &mut [R],
    lr: R,
    momentum: R,
    weight_decay: R,
) {
    for i in 0..param.len() {
        velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * param[i]);
        param[i] = param[i] - lr * velocity[i];
    }
}

/// Applies [`sgd_update`] across a whole parameter set.
pub fn sgd_step<R: Real>(
    params: &mut ModelParams<R>,
    grads: &[Tensor<R>],
    state: &mut SgdState<R>,
    lr: R,
    momentum: R,
    weight_decay: R,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Validation(format!(
            "sgd_step got {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for i in 0..params.len() {
        if grads[i].shape() != params.tensors[i].shape() {
            return Err(Error::Validation(format!(
                "gradient {} has shape {:?}, parameter has {:?}",
                params.names[i],
                grads[i].shape(),
                params.tensors[i].shape()
            )));
        }
        sgd_update(
            params.tensors[i].data_mut(),
            grads[i].data(),
            &mut state.velocity[i],
            lr,
            momentum,
            weight_decay,
        );
    }
    Ok(())
}

// ---- checkpoint format -----------------------------------------------------
//
// magic (8 bytes) | version u32 | param count u64, then per parameter:
// name len u32 | name bytes | rank u32 | dims u64 each | values f64 LE.

const CKPT_MAGIC: &[u8; 8] = b"PEGRAPH\0";
const CKPT_VERSION: u32 = 1;

/// Writes all parameters in order; values are stored as 64-bit little-endian
/// regardless of the in-memory precision.
pub fn save_checkpoint<R: Real>(params: &ModelParams<R>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Real>(path: &Path) -> Result<ModelParams<R>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("invalid parameter name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(R::from_f64(f64::from_le_bytes(buf)));
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
