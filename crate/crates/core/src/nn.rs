//! Small neural building blocks on top of candle tensors, with a seeded,
//! name-keyed parameter store.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every trainable tensor, keyed by a stable hierarchical name
/// (`gran2.layer0.attn.q.weight`, ...).
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Register a parameter with explicit initial values.
    pub fn with_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| self.rng.gen_range(-bound..=bound))
            .collect();
        self.with_values(name, shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.with_values(name, shape, vec![value; n])
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// L2 norm over all parameters.
    pub fn norm(&self) -> Result<f64> {
        let mut acc = 0.0;
        for v in self.vars.values() {
            acc += v
                .as_tensor()
                .to_dtype(DType::F64)?
                .sqr()?
                .sum_all()?
                .to_scalar::<f64>()?;
        }
        Ok(acc.sqrt())
    }

    /// Detached copies of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    pub fn restore(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        if values.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                values.len(),
                self.vars.len()
            )));
        }
        Ok(())
    }

    /// Write all parameters to a single safetensors file with string metadata
    /// in its header.
    pub fn save(&self, path: &Path, metadata: HashMap<String, String>) -> Result<()> {
        let tensors = self
            .vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().to_dtype(DType::F64)?)))
            .collect::<Result<Vec<_>>>()?;
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
            .iter()
            .map(|(k, t)| {
                let flat: Vec<f64> = t.flatten_all()?.to_vec1()?;
                let raw = flat.iter().flat_map(|x| x.to_le_bytes()).collect();
                Ok((k.clone(), raw, t.dims().to_vec()))
            })
            .collect::<Result<_>>()?;
        let views = bytes
            .iter()
            .map(|(k, raw, shape)| {
                safetensors::tensor::TensorView::new(safetensors::Dtype::F64, shape.clone(), raw)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize_to_file(views, Some(metadata), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Read a file written by [`ParamStore::save`]; returns tensors and metadata.
    pub fn read_file(path: &Path) -> Result<(BTreeMap<String, Tensor>, HashMap<String, String>)> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let metadata = meta.metadata().clone().unwrap_or_default();
        let tensors = candle_core::safetensors::load_buffer(&data, &Device::Cpu)?
            .into_iter()
            .collect();
        Ok((tensors, metadata))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Relu => x.relu()?,
            Activation::Gelu => x.gelu()?,
        })
    }
}

/// Affine map `x W^T + b` over the last dimension.
#[derive(Clone, Debug)]
pub struct Dense {
    inner: candle_nn::Linear,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) initialisation for weight and bias.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let w = store.uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound)?;
        let b = store.uniform(&format!("{name}.bias"), &[out_dim], bound)?;
        Ok(Self {
            inner: candle_nn::Linear::new(w, Some(b)),
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }

    pub fn bias(&self) -> &Tensor {
        self.inner.bias().expect("dense layers carry a bias")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = x.dim(D::Minus1)?;
        if last != self.in_dim {
            return Err(Error::Shape(format!(
                "dense layer expects last dimension {}, got {:?}",
                self.in_dim,
                x.dims()
            )));
        }
        Ok(self.inner.forward(x)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.constant(&format!("{name}.weight"), &[dim], 1.0)?,
            bias: store.constant(&format!("{name}.bias"), &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dim = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / dim)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = (centered.sqr()?.sum_keepdim(D::Minus1)? / dim)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Inverted dropout driven by a caller-owned seeded generator. `None` or
/// `p == 0` is the identity.
pub fn dropout(x: &Tensor, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Single-layer GRU over `[batch, steps, input]`, returning the final hidden
/// state `[batch, hidden]`.
#[derive(Clone, Debug)]
pub struct Gru {
    input: Dense,
    hidden: Dense,
    hidden_dim: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        Ok(Self {
            input: Dense::new(store, &format!("{name}.input"), input_dim, 3 * hidden_dim)?,
            hidden: Dense::new(store, &format!("{name}.hidden"), hidden_dim, 3 * hidden_dim)?,
            hidden_dim,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let (batch, steps, _) = xs.dims3()?;
        let h_dim = self.hidden_dim;
        // Input projections for every step at once: [batch, steps, 3h].
        let gx = self.input.forward(xs)?;
        let mut h = Tensor::zeros((batch, h_dim), xs.dtype(), xs.device())?;
        for s in 0..steps {
            let gx_s = gx.narrow(1, s, 1)?.squeeze(1)?;
            let gh = self.hidden.forward(&h)?;
            let r = candle_nn::ops::sigmoid(
                &(gx_s.narrow(1, 0, h_dim)? + gh.narrow(1, 0, h_dim)?)?,
            )?;
            let z = candle_nn::ops::sigmoid(
                &(gx_s.narrow(1, h_dim, h_dim)? + gh.narrow(1, h_dim, h_dim)?)?,
            )?;
            let n = (gx_s.narrow(1, 2 * h_dim, h_dim)? + (r * gh.narrow(1, 2 * h_dim, h_dim)?)?)?
                .tanh()?;
            // h' = (1 - z) * n + z * h
            h = ((n.clone() - (&z * &n)?)? + (&z * &h)?)?;
        }
        Ok(h)
    }
}
