//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! "SFAA" | version u32 | dim u32 | n_layers u32
//! per layer: kind u8 (0 mix, 1 coupling, 2 permutation)
//!   mix:         n_reflections u32
//!   coupling:    parity u8 | hidden u32
//!   permutation: dim x u32 source indices
//! n_params u64 | n_params x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::layers::{Coupling, Layer, Mix};
use super::CouplingFlow;
use crate::diffeo::Diffeo;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFAA";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(flow: &CouplingFlow, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(flow.dim() as u32).to_le_bytes())?;
    w.write_all(&(flow.layers().len() as u32).to_le_bytes())?;
    for layer in flow.layers() {
        match layer {
            Layer::Mix(m) => {
                w.write_all(&[0])?;
                w.write_all(&(m.vectors().ncols() as u32).to_le_bytes())?;
            }
            Layer::Coupling(c) => {
                w.write_all(&[1, c.parity() as u8])?;
                w.write_all(&(c.hidden() as u32).to_le_bytes())?;
            }
            Layer::Permutation(p) => {
                w.write_all(&[2])?;
                for &i in p {
                    w.write_all(&(i as u32).to_le_bytes())?;
                }
            }
        }
    }
    let params = flow.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

/// `source` names the input in error messages.
pub fn read_checkpoint<R: Read>(mut r: R, source: &str) -> Result<CouplingFlow> {
    let bad = |reason: String| Error::format(source, reason);
    let truncated = |e: Error| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::format(source, "truncated checkpoint")
        }
        other => other,
    };
    let magic: [u8; 4] = read_array(&mut r).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(bad("missing SFAA magic bytes".into()));
    }
    let version = read_u32(&mut r).map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let dim = read_u32(&mut r).map_err(truncated)? as usize;
    let n_layers = read_u32(&mut r).map_err(truncated)? as usize;
    if dim < 2 {
        return Err(bad(format!("invalid dimension {dim}")));
    }
    let mut layers = Vec::with_capacity(n_layers.min(1 << 16));
    for _ in 0..n_layers {
        let [kind] = read_array::<1, _>(&mut r).map_err(truncated)?;
        let layer = match kind {
            0 => {
                let m = read_u32(&mut r).map_err(truncated)? as usize;
                Layer::Mix(Mix::from_vectors(DMatrix::zeros(dim, m)))
            }
            1 => {
                let [parity] = read_array::<1, _>(&mut r).map_err(truncated)?;
                let hidden = read_u32(&mut r).map_err(truncated)? as usize;
                if parity > 1 || hidden == 0 {
                    return Err(bad(format!("invalid coupling (parity {parity}, hidden {hidden})")));
                }
                Layer::Coupling(Coupling::zeros(dim, parity as usize, hidden))
            }
            2 => {
                let mut perm = Vec::with_capacity(dim);
                for _ in 0..dim {
                    perm.push(read_u32(&mut r).map_err(truncated)? as usize);
                }
                let mut seen = vec![false; dim];
                for &i in &perm {
                    if i >= dim || std::mem::replace(&mut seen[i], true) {
                        return Err(bad("permutation layer is not a permutation".into()));
                    }
                }
                Layer::Permutation(perm)
            }
            k => return Err(bad(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    let mut flow = CouplingFlow::from_layers(dim, layers)?;
    let n_params = u64::from_le_bytes(read_array(&mut r).map_err(truncated)?) as usize;
    if n_params != flow.num_params() {
        return Err(bad(format!(
            "layer descriptors need {} parameters, file declares {n_params}",
            flow.num_params()
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(f64::from_le_bytes(read_array(&mut r).map_err(truncated)?));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    flow.set_params(&params)?;
    Ok(flow)
}

pub fn save_checkpoint(flow: &CouplingFlow, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(flow, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CouplingFlow> {
    let path = path.as_ref();
    read_checkpoint(BufReader::new(File::open(path)?), &path.display().to_string())
}
