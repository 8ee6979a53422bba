use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::infer::LatentPrior;
use super::layer::{Activation, DenseLayer};
use super::loss::LossParts;
use super::{f64_of, real, ArchConfig, Real, Result, VConstructError};
use crate::grid::NormStats;

/// `logvar` is clamped to `±LOGVAR_CLAMP`; the gradient is 0 outside.
pub const LOGVAR_CLAMP: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct VConstructModel<F: Real = f32> {
    pub arch: ArchConfig,
    pub norm: NormStats,
    pub prior: LatentPrior,
    pub attr_net: Vec<DenseLayer<F>>,
    pub enc_trunk: Vec<DenseLayer<F>>,
    pub mu_head: DenseLayer<F>,
    pub logvar_head: DenseLayer<F>,
    pub dec_net: Vec<DenseLayer<F>>,
}

/// Attribute vectors plus the activations the decoder adds back in,
/// `[input, h1, …, h_{L-1}]`. Rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AttrOutput<F: Real> {
    pub attr: Array2<F>,
    pub skips: Vec<Array2<F>>,
}

impl<F: Real> AttrOutput<F> {
    pub fn batch_size(&self) -> usize {
        self.attr.nrows()
    }

    /// Repeats row `row` `n` times.
    pub fn broadcast_row(&self, row: usize, n: usize) -> Self {
        let rep = |a: &Array2<F>| {
            let r = a.row(row);
            let mut out = Array2::zeros((n, r.len()));
            out.rows_mut().into_iter().for_each(|mut o| o.assign(&r));
            out
        };
        Self {
            attr: rep(&self.attr),
            skips: self.skips.iter().map(rep).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution<F: Real> {
    pub mu: Array2<F>,
    /// Clamped.
    pub logvar: Array2<F>,
}

impl<F: Real> LatentDistribution<F> {
    /// `z = mu + exp(logvar / 2) ⊙ eps`.
    pub fn reparameterize_with(&self, eps: ArrayView2<F>) -> Array2<F> {
        let half = real::<F>(0.5);
        let mut z = self.mu.clone();
        Zip::from(&mut z)
            .and(&self.logvar)
            .and(eps)
            .for_each(|z, &lv, &e| *z = *z + (lv * half).exp() * e);
        z
    }

    /// Draws `eps ~ N(0, I)` row by row from `rng`.
    pub fn reparameterize<R: Rng + ?Sized>(&self, rng: &mut R) -> Array2<F> {
        let eps = standard_normal(self.mu.dim(), rng);
        self.reparameterize_with(eps.view())
    }
}

pub(crate) fn standard_normal<F: Real, R: Rng + ?Sized>(
    dim: (usize, usize),
    rng: &mut R,
) -> Array2<F> {
    Array2::from_shape_simple_fn(dim, || real(rng.sample::<f64, _>(StandardNormal)))
}

/// Training pairs. `complete` holds the target with invalid entries set to 0;
/// it is both the encoder input and the reconstruction target.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F: Real> {
    pub cloudy: Array2<F>,
    pub complete: Array2<F>,
    pub valid: Array2<bool>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.cloudy.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-parameter gradients, laid out like [`VConstructModel::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F: Real> {
    pub layers: Vec<DenseLayer<F>>,
}

/// Which ReLUs are active and which logvars are clamped. Finite-difference
/// checks compare traces to notice when a perturbation crossed a kink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchTrace(Vec<bool>);

struct Cache<F: Real> {
    attr_acts: Vec<Array2<F>>,
    enc_acts: Vec<Array2<F>>,
    mu: Array2<F>,
    lv_raw: Array2<F>,
    lv: Array2<F>,
    eps: Option<Array2<F>>,
    dec_acts: Vec<Array2<F>>,
}

impl<F: Real> VConstructModel<F> {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, norm: NormStats, rng: &mut R) -> Result<Self> {
        Self::build(arch, norm, |i, o, a| DenseLayer::he_uniform(i, o, a, rng))
    }

    /// All parameters zero.
    pub fn zeros(arch: ArchConfig, norm: NormStats) -> Result<Self> {
        Self::build(arch, norm, DenseLayer::zeros)
    }

    fn build(
        arch: ArchConfig,
        norm: NormStats,
        mut make: impl FnMut(usize, usize, Activation) -> DenseLayer<F>,
    ) -> Result<Self> {
        arch.validate()?;
        let mut stack = |dims: &[usize], last: Activation| -> Vec<DenseLayer<F>> {
            (1..dims.len())
                .map(|i| {
                    let act = if i + 1 == dims.len() {
                        last
                    } else {
                        Activation::Relu
                    };
                    make(dims[i - 1], dims[i], act)
                })
                .collect()
        };
        let mut attr_dims = vec![arch.input_pixels];
        attr_dims.extend(&arch.attr_dims);
        let attr_net = stack(&attr_dims, Activation::Relu);
        let mut enc_dims = vec![arch.input_pixels];
        enc_dims.extend(&arch.enc_dims);
        let enc_trunk = stack(&enc_dims, Activation::Relu);
        let dec_net = stack(&arch.dec_dims(), Activation::Identity);
        let trunk_out = *arch.enc_dims.last().expect("validated");
        let mu_head = make(trunk_out, arch.latent_dim, Activation::Identity);
        let logvar_head = make(trunk_out, arch.latent_dim, Activation::Identity);
        Ok(Self {
            arch,
            norm,
            prior: LatentPrior::StandardNormal,
            attr_net,
            enc_trunk,
            mu_head,
            logvar_head,
            dec_net,
        })
    }

    /// Attribute layers, encoder trunk, mu head, logvar head, decoder layers.
    pub fn layers(&self) -> Vec<&DenseLayer<F>> {
        let mut v: Vec<&DenseLayer<F>> = self.attr_net.iter().collect();
        v.extend(self.enc_trunk.iter());
        v.push(&self.mu_head);
        v.push(&self.logvar_head);
        v.extend(self.dec_net.iter());
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer<F>> {
        let mut v: Vec<&mut DenseLayer<F>> = self.attr_net.iter_mut().collect();
        v.extend(self.enc_trunk.iter_mut());
        v.push(&mut self.mu_head);
        v.push(&mut self.logvar_head);
        v.extend(self.dec_net.iter_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    pub fn cast<G: Real>(&self) -> VConstructModel<G> {
        VConstructModel {
            arch: self.arch.clone(),
            norm: self.norm,
            prior: self.prior.clone(),
            attr_net: self.attr_net.iter().map(DenseLayer::cast).collect(),
            enc_trunk: self.enc_trunk.iter().map(DenseLayer::cast).collect(),
            mu_head: self.mu_head.cast(),
            logvar_head: self.logvar_head.cast(),
            dec_net: self.dec_net.iter().map(DenseLayer::cast).collect(),
        }
    }

    fn check_width(&self, what: &'static str, x: &ArrayView2<F>, expected: usize) -> Result<()> {
        if x.ncols() != expected {
            return Err(VConstructError::DimMismatch {
                what,
                expected,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn attr_acts(&self, cloudy: ArrayView2<F>) -> Vec<Array2<F>> {
        let mut acts = vec![cloudy.to_owned()];
        for layer in &self.attr_net {
            let next = layer.forward(acts.last().expect("non-empty").view());
            acts.push(next);
        }
        acts
    }

    /// Rows of `cloudy` are flattened normalized images with missing pixels 0.
    pub fn attr_forward(&self, cloudy: ArrayView2<F>) -> Result<AttrOutput<F>> {
        self.check_width("cloudy image", &cloudy, self.arch.input_pixels)?;
        let mut acts = self.attr_acts(cloudy);
        let attr = acts.pop().expect("at least one layer");
        Ok(AttrOutput { attr, skips: acts })
    }

    fn enc_forward(&self, complete: ArrayView2<F>) -> (Vec<Array2<F>>, Array2<F>, Array2<F>) {
        let mut acts = vec![complete.to_owned()];
        for layer in &self.enc_trunk {
            let next = layer.forward(acts.last().expect("non-empty").view());
            acts.push(next);
        }
        let top = acts.last().expect("non-empty").view();
        let mu = self.mu_head.forward(top);
        let lv_raw = self.logvar_head.forward(top);
        (acts, mu, lv_raw)
    }

    pub fn encode(&self, complete: ArrayView2<F>) -> Result<LatentDistribution<F>> {
        self.check_width("complete image", &complete, self.arch.input_pixels)?;
        let (_, mu, lv_raw) = self.enc_forward(complete);
        Ok(LatentDistribution {
            mu,
            logvar: clamp_logvar(&lv_raw),
        })
    }

    /// Decoder pre-activations, one per decoder layer (the last one is the
    /// output, since the final activation is the identity).
    pub fn decode_preactivations(
        &self,
        z: ArrayView2<F>,
        attr: &AttrOutput<F>,
    ) -> Result<Vec<Array2<F>>> {
        let mut pres = Vec::with_capacity(self.dec_net.len());
        self.decode_inner(z, attr, |pre| pres.push(pre.clone()))?;
        Ok(pres)
    }

    pub fn decode(&self, z: ArrayView2<F>, attr: &AttrOutput<F>) -> Result<Array2<F>> {
        let mut acts = self.decode_inner(z, attr, |_| {})?;
        Ok(acts.pop().expect("at least one layer"))
    }

    fn decode_inner(
        &self,
        z: ArrayView2<F>,
        attr: &AttrOutput<F>,
        mut on_pre: impl FnMut(&Array2<F>),
    ) -> Result<Vec<Array2<F>>> {
        self.check_width("latent", &z, self.arch.latent_dim)?;
        self.check_width("attribute", &attr.attr.view(), self.arch.attr_out())?;
        let skip_dims = self.arch.skip_dims();
        if attr.skips.len() != skip_dims.len() {
            return Err(VConstructError::DimMismatch {
                what: "skip count",
                expected: skip_dims.len(),
                got: attr.skips.len(),
            });
        }
        for (s, &w) in attr.skips.iter().zip(&skip_dims) {
            self.check_width("skip activation", &s.view(), w)?;
            if s.nrows() != z.nrows() {
                return Err(VConstructError::DimMismatch {
                    what: "skip batch",
                    expected: z.nrows(),
                    got: s.nrows(),
                });
            }
        }
        if attr.attr.nrows() != z.nrows() {
            return Err(VConstructError::DimMismatch {
                what: "attribute batch",
                expected: z.nrows(),
                got: attr.attr.nrows(),
            });
        }
        let d0 = concatenate![Axis(1), z, attr.attr.view()];
        let mut acts = vec![d0];
        let n = self.dec_net.len();
        for (i, layer) in self.dec_net.iter().enumerate() {
            let mut pre = layer.pre(acts.last().expect("non-empty").view());
            pre += &attr.skips[n - 1 - i];
            on_pre(&pre);
            acts.push(layer.activate(pre));
        }
        Ok(acts)
    }

    fn check_batch(&self, batch: &Batch<F>, eps: Option<&ArrayView2<F>>) -> Result<()> {
        let p = self.arch.input_pixels;
        self.check_width("cloudy image", &batch.cloudy.view(), p)?;
        self.check_width("complete image", &batch.complete.view(), p)?;
        let b = batch.len();
        let rows_ok = batch.complete.nrows() == b && batch.valid.dim() == (b, p);
        if !rows_ok {
            return Err(VConstructError::DimMismatch {
                what: "batch rows",
                expected: b,
                got: batch.complete.nrows(),
            });
        }
        if let Some(e) = eps {
            if e.dim() != (b, self.arch.latent_dim) {
                return Err(VConstructError::DimMismatch {
                    what: "noise",
                    expected: b * self.arch.latent_dim,
                    got: e.len(),
                });
            }
        }
        Ok(())
    }

    fn forward_cache(&self, batch: &Batch<F>, eps: Option<ArrayView2<F>>) -> Result<Cache<F>> {
        self.check_batch(batch, eps.as_ref())?;
        let mut attr_acts = self.attr_acts(batch.cloudy.view());
        let (enc_acts, mu, lv_raw) = self.enc_forward(batch.complete.view());
        let lv = clamp_logvar(&lv_raw);
        let dist = LatentDistribution {
            mu: mu.clone(),
            logvar: lv.clone(),
        };
        let z = match &eps {
            Some(e) => dist.reparameterize_with(e.view()),
            None => mu.clone(),
        };
        let attr = AttrOutput {
            attr: attr_acts.pop().expect("non-empty"),
            skips: attr_acts,
        };
        let dec_acts = self.decode_inner(z.view(), &attr, |_| {})?;
        let mut attr_acts = attr.skips;
        attr_acts.push(attr.attr);
        Ok(Cache {
            attr_acts,
            enc_acts,
            mu,
            lv_raw,
            lv,
            eps: eps.map(|e| e.to_owned()),
            dec_acts,
        })
    }

    fn cache_loss(&self, batch: &Batch<F>, cache: &Cache<F>) -> LossParts {
        let out = cache.dec_acts.last().expect("non-empty");
        let b = batch.len().max(1) as f64;
        let mut parts = LossParts::default();
        for i in 0..batch.len() {
            parts.recon +=
                super::loss::recon_term(out.row(i), batch.complete.row(i), batch.valid.row(i));
            parts.kl += super::loss::kl_term(cache.mu.row(i), cache.lv.row(i));
        }
        parts.recon /= b;
        parts.kl /= b;
        parts
    }

    /// Batch-mean loss. `eps = None` decodes from `z = mu`.
    pub fn batch_loss(
        &self,
        batch: &Batch<F>,
        eps: Option<ArrayView2<F>>,
        kl_weight: f64,
    ) -> Result<LossParts> {
        let cache = self.forward_cache(batch, eps)?;
        let mut parts = self.cache_loss(batch, &cache);
        parts.total = parts.recon + kl_weight * parts.kl;
        Ok(parts)
    }

    pub fn batch_trace(&self, batch: &Batch<F>, eps: Option<ArrayView2<F>>) -> Result<BatchTrace> {
        let cache = self.forward_cache(batch, eps)?;
        let mut bits = Vec::new();
        let relu_bits = |acts: &[Array2<F>], bits: &mut Vec<bool>| {
            for a in acts {
                bits.extend(a.iter().map(|&v| v > F::zero()));
            }
        };
        relu_bits(&cache.attr_acts[1..], &mut bits);
        relu_bits(&cache.enc_acts[1..], &mut bits);
        let n = cache.dec_acts.len();
        relu_bits(&cache.dec_acts[1..n - 1], &mut bits);
        let lim = real::<F>(LOGVAR_CLAMP);
        bits.extend(cache.lv_raw.iter().map(|&v| v < -lim || v > lim));
        Ok(BatchTrace(bits))
    }

    /// Draws the reparameterization noise from `rng` and differentiates.
    pub fn backward<R: Rng + ?Sized>(
        &self,
        batch: &Batch<F>,
        rng: &mut R,
        kl_weight: f64,
    ) -> Result<(LossParts, Gradients<F>)> {
        let eps = standard_normal((batch.len(), self.arch.latent_dim), rng);
        self.backward_with_noise(batch, Some(eps.view()), kl_weight)
    }

    /// Exact gradient of the batch-mean loss for fixed noise.
    pub fn backward_with_noise(
        &self,
        batch: &Batch<F>,
        eps: Option<ArrayView2<F>>,
        kl_weight: f64,
    ) -> Result<(LossParts, Gradients<F>)> {
        let cache = self.forward_cache(batch, eps)?;
        let mut parts = self.cache_loss(batch, &cache);
        parts.total = parts.recon + kl_weight * parts.kl;
        if !parts.total.is_finite() {
            return Err(VConstructError::NonFiniteLoss { batch: 0 });
        }
        let b = batch.len();
        let bf = b as f64;

        // d loss / d output.
        let out = cache.dec_acts.last().expect("non-empty");
        let mut g = Array2::<F>::zeros(out.dim());
        for i in 0..b {
            let n_valid = batch.valid.row(i).iter().filter(|&&v| v).count();
            if n_valid == 0 {
                continue;
            }
            let c = real::<F>(2.0 / (bf * n_valid as f64));
            Zip::from(g.row_mut(i))
                .and(out.row(i))
                .and(batch.complete.row(i))
                .and(batch.valid.row(i))
                .for_each(|g, &o, &t, &ok| {
                    if ok {
                        *g = c * (o - t);
                    }
                });
        }

        // Decoder, collecting gradients for the skip sources.
        let n_dec = self.dec_net.len();
        let mut skip_grads: Vec<Option<Array2<F>>> = vec![None; n_dec];
        let mut dec_grads = Vec::with_capacity(n_dec);
        for i in (0..n_dec).rev() {
            let layer = &self.dec_net[i];
            let pre_g = layer.pre_grad(&cache.dec_acts[i + 1], g);
            let (lg, dx) = layer.backward(cache.dec_acts[i].view(), &pre_g, true);
            dec_grads.push(lg);
            skip_grads[n_dec - 1 - i] = Some(pre_g);
            g = dx.expect("requested");
        }
        dec_grads.reverse();
        let latent = self.arch.latent_dim;
        let g_z = g.slice(s![.., ..latent]).to_owned();
        let mut g_attr = g.slice(s![.., latent..]).to_owned();

        // Attribute network; skip source j (j ≥ 1) is the output of layer j-1.
        let n_attr = self.attr_net.len();
        let mut attr_grads = Vec::with_capacity(n_attr);
        for l in (0..n_attr).rev() {
            let layer = &self.attr_net[l];
            let pre_g = layer.pre_grad(&cache.attr_acts[l + 1], g_attr);
            let need = l > 0;
            let (lg, dx) = layer.backward(cache.attr_acts[l].view(), &pre_g, need);
            attr_grads.push(lg);
            if let Some(mut dx) = dx {
                if let Some(sg) = &skip_grads[l] {
                    dx += sg;
                }
                g_attr = dx;
            } else {
                g_attr = Array2::zeros((0, 0));
            }
        }
        attr_grads.reverse();

        // Latent heads: pathwise derivative through z plus the KL term.
        let kw = kl_weight / bf;
        let half = real::<F>(0.5);
        let lim = real::<F>(LOGVAR_CLAMP);
        let mut g_mu = g_z.clone();
        Zip::from(&mut g_mu)
            .and(&cache.mu)
            .for_each(|g, &m| *g = *g + real::<F>(kw) * m);
        let mut g_lv = Array2::<F>::zeros(cache.lv.dim());
        Zip::indexed(&mut g_lv).for_each(|(r, c), g| {
            let lv = cache.lv[[r, c]];
            let raw = cache.lv_raw[[r, c]];
            if raw < -lim || raw > lim {
                return;
            }
            let from_z = match &cache.eps {
                Some(e) => g_z[[r, c]] * e[[r, c]] * half * (lv * half).exp(),
                None => F::zero(),
            };
            *g = from_z + real::<F>(kw * 0.5 * f64_of(lv).exp_m1());
        });
        let top = cache.enc_acts.last().expect("non-empty").view();
        let (mu_g, dx_mu) = self.mu_head.backward(top, &g_mu, true);
        let (lv_g, dx_lv) = self.logvar_head.backward(top, &g_lv, true);
        let mut g_enc = dx_mu.expect("requested") + &dx_lv.expect("requested");

        let n_enc = self.enc_trunk.len();
        let mut enc_grads = Vec::with_capacity(n_enc);
        for l in (0..n_enc).rev() {
            let layer = &self.enc_trunk[l];
            let pre_g = layer.pre_grad(&cache.enc_acts[l + 1], g_enc);
            let (lg, dx) = layer.backward(cache.enc_acts[l].view(), &pre_g, l > 0);
            enc_grads.push(lg);
            g_enc = dx.unwrap_or_else(|| Array2::zeros((0, 0)));
        }
        enc_grads.reverse();

        let mut layers = attr_grads;
        layers.extend(enc_grads);
        layers.push(mu_g);
        layers.push(lv_g);
        layers.extend(dec_grads);
        Ok((parts, Gradients { layers }))
    }
}

fn clamp_logvar<F: Real>(raw: &Array2<F>) -> Array2<F> {
    let lim = real::<F>(LOGVAR_CLAMP);
    raw.mapv(|v| v.max(-lim).min(lim))
}
