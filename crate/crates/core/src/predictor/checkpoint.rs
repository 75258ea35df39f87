//! `FNCMLP1` checkpoints (little-endian):
//!
//! ```text
//! magic "FNCMLP1"
//! rng_seed u64 | layer_count u32
//! per layer: in u32 | out u32 | tag u8 (0 identity, 1 leaky relu) | slope f64 (tag 1 only)
//! per layer: weights f32 x in*out (row-major, out rows) | bias f32 x out
//! crc32 u32 over everything after the magic
//! ```
//!
//! Weights and biases are stored as f32, so a loaded model equals the saved
//! one with those rounded to f32. Slopes are kept exact. Re-saving a loaded
//! model reproduces the file.

use std::fs;
use std::path::Path;

use super::mlp::{Activation, Layer, LayerSpec, Mlp};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8] = b"FNCMLP1";

pub fn save_model(m: &Mlp) -> Vec<u8> {
    let mut w = Writer::new(MODEL_MAGIC);
    w.u64(m.rng_seed());
    w.u32(m.layers().len() as u32);
    for l in m.layers() {
        w.u32(l.spec.in_dim as u32);
        w.u32(l.spec.out_dim as u32);
        match l.spec.activation {
            Activation::Identity => w.u8(0),
            Activation::LeakyRelu(s) => {
                w.u8(1);
                w.f64(s);
            }
        }
    }
    for l in m.layers() {
        w.f64s_as_f32(&l.weights);
        w.f64s_as_f32(&l.bias);
    }
    w.finish(MODEL_MAGIC.len())
}

pub fn load_model(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader::open(bytes, MODEL_MAGIC)?;
    let seed = r.u64()?;
    let at = r.offset();
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::format(at, "model has no layers"));
    }
    r.ensure(count, 9)?; // smallest layer header
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::Identity,
            1 => Activation::LeakyRelu(r.f64()?),
            t => return Err(Error::format(at + 8, format!("unknown activation tag {t}"))),
        };
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::format(at, "zero layer dimension"));
        }
        specs.push((
            at,
            LayerSpec {
                in_dim,
                out_dim,
                activation,
            },
        ));
    }
    for w in specs.windows(2) {
        if w[0].1.out_dim != w[1].1.in_dim {
            return Err(Error::format(w[1].0, "layer dimensions do not chain"));
        }
    }
    if specs[count - 1].1.activation != Activation::Identity {
        return Err(Error::format(
            specs[count - 1].0,
            "final layer must be linear",
        ));
    }
    let mut layers = Vec::with_capacity(count);
    for (_, spec) in specs {
        let weights = r.f32s_as_f64(spec.in_dim * spec.out_dim)?;
        let bias = r.f32s_as_f64(spec.out_dim)?;
        layers.push(Layer {
            spec,
            weights,
            bias,
        });
    }
    r.finish()?;
    Ok(Mlp::from_parts(layers, seed))
}

pub fn write_model(m: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, save_model(m))?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Mlp> {
    load_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_f32_exact() {
        let m = Mlp::new(&[5, 7, 3], 0.2, 9).unwrap();
        let bytes = save_model(&m);
        assert_eq!(&bytes[..7], MODEL_MAGIC);
        let back = load_model(&bytes).unwrap();
        assert_eq!(save_model(&back), bytes);
        for (a, b) in m.layers().iter().zip(back.layers()) {
            assert_eq!(a.spec.in_dim, b.spec.in_dim);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(back.rng_seed(), 9);
        // loading f32-representable params is exact
        assert_eq!(load_model(&save_model(&back)).unwrap(), back);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = save_model(&Mlp::new(&[2, 2], 0.2, 0).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            load_model(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = bytes.clone();
        bad[20] ^= 0x40;
        assert!(matches!(load_model(&bad), Err(Error::Format { .. })));
        assert!(load_model(&bytes[..bytes.len() - 2]).is_err());
    }
}
