//! Binary weight files for derived networks.
//!
//! Layout (little-endian): the magic `CNW1`, a `u32` tensor count, then per
//! tensor a `u32` name length, the UTF-8 name, four `u32` dimensions
//! (`n, c, h, w`) and the `f32` values. Parameters come first in store
//! order, followed by each batch norm's `running_mean` and `running_var`.

use std::path::Path;

use crate::error::DataError;
use crate::tensor::{Real, Shape};

use super::derived::DerivedNet;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CNW1";

struct Entry {
    name: String,
    shape: Shape,
    values: Vec<f32>,
}

fn entries<T: Real>(net: &DerivedNet<T>) -> Vec<Entry> {
    let mut out: Vec<Entry> = net
        .params
        .iter()
        .map(|(name, t)| Entry {
            name: name.to_string(),
            shape: t.shape(),
            values: t.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect();
    for (name, rs) in net.running_names().into_iter().zip(&net.running) {
        for (suffix, v) in [("running_mean", &rs.mean), ("running_var", &rs.var)] {
            out.push(Entry {
                name: format!("{name}.{suffix}"),
                shape: Shape::vector(v.len()),
                values: v.iter().map(|x| x.as_f64() as f32).collect(),
            });
        }
    }
    out
}

pub fn weights_to_bytes<T: Real>(net: &DerivedNet<T>) -> Vec<u8> {
    let entries = entries(net);
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        for d in [e.shape.n, e.shape.c, e.shape.h, e.shape.w] {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_weights<T: Real>(net: &DerivedNet<T>, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, weights_to_bytes(net)).map_err(|e| DataError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn bad(&self, reason: impl Into<String>) -> DataError {
        DataError::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(self.bad("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Loads weights into a network built for the same genotype and size.
/// Every name and shape must match exactly.
pub fn load_weights<T: Real>(net: &mut DerivedNet<T>, path: &Path) -> Result<(), DataError> {
    let buf = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(r.bad("bad magic"));
    }
    let expected = entries(net);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(r.bad(format!("{count} tensors, network expects {}", expected.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for want in &expected {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.bad("non-UTF-8 tensor name"))?;
        let shape = Shape::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        if name != want.name || shape != want.shape {
            return Err(r.bad(format!(
                "found tensor `{name}` {shape:?}, expected `{}` {:?}",
                want.name, want.shape
            )));
        }
        let raw = r.take(4 * shape.numel())?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        loaded.push(values);
    }
    if r.pos != buf.len() {
        return Err(r.bad("trailing bytes"));
    }
    let nparams = net.params.len();
    let mut it = loaded.into_iter();
    for t in net.params.values_mut().iter_mut().take(nparams) {
        t.data_mut().copy_from_slice(&it.next().expect("counted"));
    }
    for rs in net.running.iter_mut() {
        rs.mean = it.next().expect("counted");
        rs.var = it.next().expect("counted");
    }
    Ok(())
}
