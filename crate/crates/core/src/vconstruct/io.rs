//! Model files.
//!
//! ```text
//! "VCM1"  u32 version
//! u32 input_pixels  u32 n_attr  u32×n_attr  u32 n_enc  u32×n_enc  u32 latent
//! f64 norm mean  f64 norm std
//! u8 prior (0 standard normal, 1 diagonal)  [u32 n  f64×n means  f64×n stds]
//! u32 n_layers, then per layer: u32 out  u32 in  u8 activation
//!                               f32×(out·in) weights (row-major)  f32×out bias
//! ```
//!
//! All integers and floats little-endian. Layers are in
//! [`VConstructModel::layers`] order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::infer::LatentPrior;
use super::layer::{Activation, DenseLayer};
use super::net::VConstructModel;
use super::{ArchConfig, Result, VConstructError};
use crate::grid::NormStats;

pub const MODEL_MAGIC: [u8; 4] = *b"VCM1";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &VConstructModel<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.parameter_count() * 4 + 256);
    out.extend_from_slice(&MODEL_MAGIC);
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    u32le(&mut out, MODEL_VERSION as usize);
    let a = &model.arch;
    u32le(&mut out, a.input_pixels);
    u32le(&mut out, a.attr_dims.len());
    a.attr_dims.iter().for_each(|&d| u32le(&mut out, d));
    u32le(&mut out, a.enc_dims.len());
    a.enc_dims.iter().for_each(|&d| u32le(&mut out, d));
    u32le(&mut out, a.latent_dim);
    out.extend_from_slice(&model.norm.mean.to_le_bytes());
    out.extend_from_slice(&model.norm.std.to_le_bytes());
    match &model.prior {
        LatentPrior::StandardNormal => out.push(0),
        LatentPrior::Diagonal { mean, std } => {
            out.push(1);
            u32le(&mut out, mean.len());
            for v in mean.iter().chain(std) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let layers = model.layers();
    u32le(&mut out, layers.len());
    for l in layers {
        u32le(&mut out, l.output_dim());
        u32le(&mut out, l.input_dim());
        out.push(l.activation.code());
        for v in l.weights.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(VConstructError::Truncated)?;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or(VConstructError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n.checked_mul(4).ok_or(VConstructError::Truncated)?;
        let b = self.take(bytes)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > self.buf.len() {
            return Err(VConstructError::Truncated);
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Parses a model; any inconsistency fails without returning a partial model.
pub fn decode_model(bytes: &[u8]) -> Result<VConstructModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != MODEL_MAGIC {
        return Err(VConstructError::BadMagic {
            expected: MODEL_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()? as u32;
    if version != MODEL_VERSION {
        return Err(VConstructError::Version(version));
    }
    let input_pixels = r.u32()?;
    let attr_dims = r.dims()?;
    let enc_dims = r.dims()?;
    let latent_dim = r.u32()?;
    let arch = ArchConfig {
        input_pixels,
        attr_dims,
        enc_dims,
        latent_dim,
    };
    arch.validate()
        .map_err(|e| VConstructError::Corrupt(e.to_string()))?;
    let (mean, std) = (r.f64()?, r.f64()?);
    let norm = NormStats::new(mean, std)
        .map_err(|_| VConstructError::Corrupt(format!("norm stats {mean} {std}")))?;
    let prior = match r.u8()? {
        0 => LatentPrior::StandardNormal,
        1 => {
            let n = r.u32()?;
            if n != latent_dim {
                return Err(VConstructError::Corrupt(format!(
                    "prior has {n} dims, latent is {latent_dim}"
                )));
            }
            let mean: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            let std: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            LatentPrior::Diagonal { mean, std }
        }
        t => return Err(VConstructError::Corrupt(format!("prior tag {t}"))),
    };

    if param_bytes(&arch) > (bytes.len() - r.pos) as u128 {
        return Err(VConstructError::Truncated);
    }
    // Shapes come from the architecture; the file must agree.
    let mut model = VConstructModel::<f32>::zeros(arch, norm)?;
    model.prior = prior;
    let n_layers = r.u32()?;
    if n_layers != model.layers().len() {
        return Err(VConstructError::Corrupt(format!(
            "{n_layers} layers, architecture has {}",
            model.layers().len()
        )));
    }
    for (i, layer) in model.layers_mut().into_iter().enumerate() {
        let (out, inp) = (r.u32()?, r.u32()?);
        if (out, inp) != (layer.output_dim(), layer.input_dim()) {
            return Err(VConstructError::Corrupt(format!(
                "layer {i} is {out}x{inp}, expected {}x{}",
                layer.output_dim(),
                layer.input_dim()
            )));
        }
        let act = Activation::from_code(r.u8()?)
            .filter(|&a| a == layer.activation)
            .ok_or_else(|| VConstructError::Corrupt(format!("layer {i} activation")))?;
        let weights = Array2::from_shape_vec((out, inp), r.f32s(out * inp)?)
            .map_err(|e| VConstructError::Corrupt(e.to_string()))?;
        let bias = Array1::from(r.f32s(out)?);
        *layer = DenseLayer {
            weights,
            bias,
            activation: act,
        };
    }
    if r.pos != bytes.len() {
        return Err(VConstructError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if !model.is_finite() {
        return Err(VConstructError::Corrupt("non-finite parameter".into()));
    }
    Ok(model)
}

/// Bytes of f32 parameters implied by `arch`, without overflow.
fn param_bytes(arch: &ArchConfig) -> u128 {
    let chain = |dims: &[usize]| -> u128 {
        dims.windows(2)
            .map(|w| w[0] as u128 * w[1] as u128 + w[1] as u128)
            .sum()
    };
    let mut attr = vec![arch.input_pixels];
    attr.extend(&arch.attr_dims);
    let mut enc = vec![arch.input_pixels];
    enc.extend(&arch.enc_dims);
    let top = *arch.enc_dims.last().expect("validated") as u128;
    let heads = 2 * (top * arch.latent_dim as u128 + arch.latent_dim as u128);
    4 * (chain(&attr) + chain(&enc) + heads + chain(&arch.dec_dims()))
}

pub fn save_model(model: &VConstructModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VConstructModel<f32>> {
    decode_model(&fs::read(path)?)
}
