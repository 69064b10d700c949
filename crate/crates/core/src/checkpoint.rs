//! Binary checkpoints: a text manifest followed by raw little-endian
//! buffers.
//!
//! ```text
//! CTOCKPT 1
//! meta <key> <value>              (zero or more)
//! tensor <name> <dtype> <d0,d1,..> <offset> <bytes>
//! end
//! <buffers>
//! ```
//!
//! Tensor lines are sorted by name. Offsets count from the first byte after
//! `end\n` and buffers are contiguous in manifest order. Running statistics
//! are stored as `<stats>.mean` / `<stats>.var`, optimizer moments as
//! `adam.m.<param>` / `adam.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use cto_tensor::{DType, Element, ParamStore};

use crate::error::{CtoError, Result};
use crate::optim::Adam;

pub const MAGIC: &str = "CTOCKPT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub dtype: DType,
    pub dims: Vec<usize>,
    /// Raw little-endian bytes.
    pub bytes: Vec<u8>,
}

impl StoredTensor {
    fn from_values<T: Element>(dims: Vec<usize>, values: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * T::DTYPE.size_bytes());
        for &v in values {
            v.write_le(&mut bytes);
        }
        StoredTensor {
            dtype: T::DTYPE,
            dims,
            bytes,
        }
    }

    /// Values at type `T`; exact when the stored dtype is `T`.
    pub fn values<T: Element>(&self) -> Vec<T> {
        let w = self.dtype.size_bytes();
        self.bytes
            .chunks_exact(w)
            .map(|b| match self.dtype {
                DType::F32 => T::lit(f64::from(f32::read_le(b))),
                DType::F64 => T::lit(f64::read_le(b)),
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, StoredTensor>,
}

fn stats_names(stats: &str) -> (String, String) {
    (format!("{stats}.mean"), format!("{stats}.var"))
}

impl Checkpoint {
    /// Snapshot of every parameter, running statistic and (optionally) the
    /// optimizer moments.
    pub fn capture<T: Element>(store: &ParamStore<T>, optim: Option<&Adam<T>>) -> Self {
        let mut ck = Checkpoint::default();
        for (id, p) in store.iter() {
            ck.tensors.insert(
                p.name.clone(),
                StoredTensor::from_values(p.value.dims().to_vec(), &p.value.to_vec()),
            );
            if let Some(opt) = optim {
                let dims = p.value.dims().to_vec();
                ck.tensors.insert(
                    format!("adam.m.{}", p.name),
                    StoredTensor::from_values(dims.clone(), &opt.m[id.index()]),
                );
                ck.tensors.insert(
                    format!("adam.v.{}", p.name),
                    StoredTensor::from_values(dims, &opt.v[id.index()]),
                );
            }
        }
        for (name, s) in store.stats_iter() {
            let (mean, var) = stats_names(name);
            ck.tensors
                .insert(mean, StoredTensor::from_values(vec![s.channels()], &s.mean()));
            ck.tensors
                .insert(var, StoredTensor::from_values(vec![s.channels()], &s.var()));
        }
        if let Some(opt) = optim {
            ck.meta.insert("adam.step".into(), opt.step.to_string());
        }
        ck
    }

    /// Writes every tensor of this checkpoint into `store` (and `optim`).
    /// Each store entry must be present with the same shape.
    pub fn restore<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        optim: Option<&mut Adam<T>>,
    ) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        let find = |name: &str, dims: &[usize]| -> Result<&StoredTensor> {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| CtoError::Data(format!("checkpoint lacks tensor `{name}`")))?;
            if t.dims != dims {
                return Err(CtoError::Data(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    t.dims, dims
                )));
            }
            Ok(t)
        };
        let mut loaded = Vec::with_capacity(ids.len());
        for &id in &ids {
            let name = store.name(id).to_owned();
            let dims = store.get(id).dims().to_vec();
            loaded.push((id, find(&name, &dims)?.values::<T>()));
        }
        let mut stats = Vec::new();
        for (name, s) in store.stats_iter() {
            let (m, v) = stats_names(name);
            let dims = [s.channels()];
            stats.push((find(&m, &dims)?.values::<T>(), find(&v, &dims)?.values::<T>()));
        }
        if let Some(opt) = optim {
            for &id in &ids {
                let name = store.name(id);
                let dims = store.get(id).dims().to_vec();
                opt.m[id.index()] = find(&format!("adam.m.{name}"), &dims)?.values();
                opt.v[id.index()] = find(&format!("adam.v.{name}"), &dims)?.values();
            }
            opt.step = self
                .meta
                .get("adam.step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CtoError::Data("checkpoint lacks `adam.step`".into()))?;
        }
        for (id, values) in loaded {
            store.set_value(id, values)?;
        }
        for ((_, s), (mean, var)) in store.stats_iter().zip(stats) {
            s.set(mean, var);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\n");
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.dims.iter().map(usize::to_string).collect();
            head.push_str(&format!(
                "tensor {name} {} {} {offset} {}\n",
                t.dtype.name(),
                if dims.is_empty() { "-".to_owned() } else { dims.join(",") },
                t.bytes.len()
            ));
            offset += t.bytes.len();
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for t in self.tensors.values() {
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let fail = |offset: usize, msg: String| CtoError::Format {
            path: path.to_owned(),
            offset,
            msg,
        };
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<(usize, String)> {
            let start = *pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| fail(start, "unterminated manifest line".into()))?;
            *pos = start + end + 1;
            let line = std::str::from_utf8(&bytes[start..start + end])
                .map_err(|_| fail(start, "manifest is not UTF-8".into()))?;
            Ok((start, line.to_owned()))
        };
        let (_, magic) = next_line(&mut pos)?;
        if magic != MAGIC {
            return Err(fail(0, format!("expected `{MAGIC}`")));
        }
        let mut ck = Checkpoint::default();
        let mut spans = Vec::new();
        loop {
            let (at, line) = next_line(&mut pos)?;
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["end"] => break,
                ["meta", k, v @ ..] => {
                    ck.meta.insert((*k).to_owned(), v.join(" "));
                }
                ["tensor", name, dtype, dims, offset, len] => {
                    let dtype = DType::parse(dtype)
                        .ok_or_else(|| fail(at, format!("unknown dtype `{dtype}`")))?;
                    let dims: Vec<usize> = if *dims == "-" {
                        Vec::new()
                    } else {
                        dims.split(',')
                            .map(str::parse)
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| fail(at, format!("bad shape `{dims}`")))?
                    };
                    let num = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| fail(at, format!("bad number `{s}`")))
                    };
                    let (offset, len) = (num(offset)?, num(len)?);
                    let expect = dims.iter().product::<usize>() * dtype.size_bytes();
                    if len != expect {
                        return Err(fail(at, format!("`{name}` declares {len} bytes, shape needs {expect}")));
                    }
                    spans.push((at, (*name).to_owned(), dtype, dims, offset, len));
                }
                _ => return Err(fail(at, format!("unrecognized manifest line `{line}`"))),
            }
        }
        let data = &bytes[pos..];
        let mut expected_offset = 0;
        for (at, name, dtype, dims, offset, len) in spans {
            if offset != expected_offset {
                return Err(fail(at, format!("`{name}` offset {offset}, expected {expected_offset}")));
            }
            if offset + len > data.len() {
                return Err(fail(bytes.len(), format!("buffer of `{name}` is truncated")));
            }
            expected_offset += len;
            ck.tensors.insert(
                name,
                StoredTensor {
                    dtype,
                    dims,
                    bytes: data[offset..offset + len].to_vec(),
                },
            );
        }
        if expected_offset != data.len() {
            return Err(fail(pos + expected_offset, "trailing bytes after buffers".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CtoError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| CtoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CtoError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
