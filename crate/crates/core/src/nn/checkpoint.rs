//! Binary network files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CLVDQN1"                       7 bytes magic
//! u32                             layer count
//! per layer: u32 in, u32 out, u8 activation (0 = relu, 1 = linear)
//! f64 * param_count               parameters in flat order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, LayerSpec, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"CLVDQN1";

impl Mlp {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for s in &self.layers {
            w.write_all(&(s.input_dim as u32).to_le_bytes())?;
            w.write_all(&(s.output_dim as u32).to_le_bytes())?;
            let tag: u8 = match s.activation {
                Activation::Relu => 0,
                Activation::Linear => 1,
            };
            w.write_all(&[tag])?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(|_| Error::format("truncated header"))?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic, not a CLVDQN1 network file"));
        }
        let n_layers = read_u32(&mut r)? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::format(format!("implausible layer count {n_layers}")));
        }
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let input_dim = read_u32(&mut r)? as usize;
            let output_dim = read_u32(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(|_| Error::format("truncated layer table"))?;
            let activation = match tag[0] {
                0 => Activation::Relu,
                1 => Activation::Linear,
                t => return Err(Error::format(format!("unknown activation tag {t}"))),
            };
            specs.push(LayerSpec { input_dim, output_dim, activation });
        }
        let mut net = Mlp::zeros(&specs).map_err(|e| Error::format(e.to_string()))?;
        let mut buf = [0u8; 8];
        for p in net.params.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| Error::format("truncated parameter block"))?;
            *p = f64::from_le_bytes(buf);
            if !p.is_finite() {
                return Err(Error::format("non-finite parameter"));
            }
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::format("trailing bytes after parameters"));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.layers.len() * 9 + self.params.len() * 8);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            Error::Format { message, .. } => Error::Format { path: Some(path.to_path_buf()), message },
            other => other,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}
