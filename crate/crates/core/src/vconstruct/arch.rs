use super::{Result, VConstructError};

/// Layer widths of the three networks. Decoder widths are derived: the
/// decoder mirrors the attribute network so every decoder layer has a skip
/// source of equal width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    /// Flattened H×W.
    pub input_pixels: usize,
    pub attr_dims: Vec<usize>,
    pub enc_dims: Vec<usize>,
    pub latent_dim: usize,
}

impl ArchConfig {
    /// Full-size widths: 250×250 input.
    pub fn paper() -> Self {
        Self {
            input_pixels: 62_500,
            attr_dims: vec![1024, 512, 128],
            enc_dims: vec![1024, 512, 256],
            latent_dim: 256,
        }
    }

    /// Widths scaled down for a 32×32 grid.
    pub fn desk() -> Self {
        Self::desk_for(1024)
    }

    pub fn desk_for(input_pixels: usize) -> Self {
        Self {
            input_pixels,
            attr_dims: vec![256, 128, 64],
            enc_dims: vec![256, 128, 64],
            latent_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VConstructError::InvalidArch(m.to_string()));
        if self.input_pixels == 0 || self.latent_dim == 0 {
            return bad("input_pixels and latent_dim must be > 0");
        }
        if self.attr_dims.is_empty() || self.enc_dims.is_empty() {
            return bad("attr_dims and enc_dims need at least one layer");
        }
        if self.attr_dims.contains(&0) || self.enc_dims.contains(&0) {
            return bad("zero-width layer");
        }
        Ok(())
    }

    pub fn attr_out(&self) -> usize {
        *self.attr_dims.last().expect("validated")
    }

    /// `[latent + attr_last, attr_dims[L-2], …, attr_dims[0], input_pixels]`.
    pub fn dec_dims(&self) -> Vec<usize> {
        let mut d = vec![self.latent_dim + self.attr_out()];
        d.extend(self.attr_dims.iter().rev().skip(1));
        d.push(self.input_pixels);
        d
    }

    /// Widths of the skip sources `[input, h1, …, h_{L-1}]`.
    pub fn skip_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_pixels];
        d.extend(&self.attr_dims[..self.attr_dims.len() - 1]);
        d
    }

    pub fn parameter_count(&self) -> usize {
        let chain = |dims: &[usize]| -> usize { dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum() };
        let mut attr = vec![self.input_pixels];
        attr.extend(&self.attr_dims);
        let mut enc = vec![self.input_pixels];
        enc.extend(&self.enc_dims);
        let head = self.enc_dims.last().expect("validated") * self.latent_dim + self.latent_dim;
        chain(&attr) + chain(&enc) + 2 * head + chain(&self.dec_dims())
    }
}
