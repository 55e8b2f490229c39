//! Model checkpoints: magic `FDNN`, u32 version, u64 init seed, u32 length of
//! the JSON model spec, the spec, then every weight and bias tensor in layer
//! order as little-endian f32. All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::model::{ModelSpec, ModelState, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FDNN";
pub const VERSION: u32 = 1;

pub fn encode<T: Scalar>(state: &ModelState<T>) -> Vec<u8> {
    let spec = serde_json::to_vec(state.spec()).expect("spec serializes");
    let mut out = Vec::with_capacity(20 + spec.len() + 4 * state.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.seed().to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for p in state.params().iter().flatten() {
        for &v in p.weight.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes_vec());
        }
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(NnError::Format("checkpoint is truncated".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    let mut cur = Cursor(bytes);
    if cur.take(4)? != MAGIC {
        return Err(NnError::Format("missing FDNN magic".into()));
    }
    let version = u32::from_le_bytes(cur.array()?);
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported checkpoint version {version}")));
    }
    let seed = u64::from_le_bytes(cur.array()?);
    let spec_len = u32::from_le_bytes(cur.array()?) as usize;
    let spec: ModelSpec = serde_json::from_slice(cur.take(spec_len)?)
        .map_err(|e| NnError::Format(format!("bad model spec: {e}")))?;
    let spec = ModelSpec::new(spec.input_shape(), spec.layers().to_vec())?;
    let mut read = |shape: Vec<usize>| -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| cur.array().map(T::from_le_f32)).collect::<Result<Vec<_>>>()?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Format("checkpoint holds non-finite parameters".into()));
        }
        Tensor::new(shape, data)
    };
    let params = spec
        .param_shapes()
        .into_iter()
        .map(|shapes| {
            shapes
                .map(|(ws, bs)| Ok(Param { weight: read(ws)?, bias: read(bs)? }))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    if !cur.0.is_empty() {
        return Err(NnError::Format(format!("{} trailing bytes after parameters", cur.0.len())));
    }
    ModelState::from_params(spec, seed, params)
}

pub fn save<T: Scalar>(state: &ModelState<T>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(state))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<ModelState<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
