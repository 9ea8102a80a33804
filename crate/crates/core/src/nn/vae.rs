use super::mlp::{BoundMlp, Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

/// Lower clamp on the encoder's log-variance.
pub const LOGVAR_MIN: f64 = -30.0;
/// Upper clamp on the encoder's log-variance.
pub const LOGVAR_MAX: f64 = 20.0;

/// Gaussian encoder `q(z|x) = N(mu, diag(exp(logvar)))` and a decoder that
/// emits the mean of `p(x|z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub z_dim: usize,
    pub data_dim: usize,
}

impl VaeModel {
    /// Symmetric architecture: the encoder uses `hidden` as its hidden widths
    /// and the decoder mirrors them.
    pub fn new(data_dim: usize, z_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let (enc, dec) = Self::specs(data_dim, z_dim, hidden)?;
        let encoder = Mlp::init(enc, rng)?;
        let decoder = Mlp::init(dec, rng)?;
        Self::from_parts(encoder, decoder)
    }

    pub fn specs(data_dim: usize, z_dim: usize, hidden: &[usize]) -> Result<(MlpSpec, MlpSpec)> {
        if z_dim == 0 || data_dim == 0 {
            return Err(Error::Dimension("z_dim and data_dim must be positive".into()));
        }
        let mut enc = vec![data_dim];
        enc.extend_from_slice(hidden);
        enc.push(2 * z_dim);
        let mut dec = vec![z_dim];
        dec.extend(hidden.iter().rev());
        dec.push(data_dim);
        Ok((MlpSpec::relu(enc)?, MlpSpec::relu(dec)?))
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        let z2 = encoder.spec.output_dim();
        if z2 % 2 != 0 {
            return Err(Error::Dimension(format!(
                "encoder output width {z2} must be even (mu and logvar)"
            )));
        }
        let z_dim = z2 / 2;
        if decoder.spec.input_dim() != z_dim {
            return Err(Error::Dimension(format!(
                "decoder input width {} != z_dim {z_dim}",
                decoder.spec.input_dim()
            )));
        }
        if decoder.spec.output_dim() != encoder.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "decoder output width {} != data_dim {}",
                decoder.spec.output_dim(),
                encoder.spec.input_dim()
            )));
        }
        let data_dim = encoder.spec.input_dim();
        Ok(Self {
            encoder,
            decoder,
            z_dim,
            data_dim,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }

    pub fn bind(&self, g: &mut Graph, train_encoder: bool, train_decoder: bool) -> BoundVae {
        BoundVae {
            encoder: self.encoder.bind(g, train_encoder),
            decoder: self.decoder.bind(g, train_decoder),
            z_dim: self.z_dim,
        }
    }

    /// Posterior parameters `(mu, logvar)` without recording a graph.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.encoder.forward(x)?;
        let (rows, z) = (out.rows(), self.z_dim);
        let mut mu = Vec::with_capacity(rows * z);
        let mut logvar = Vec::with_capacity(rows * z);
        for r in 0..rows {
            let row = out.row(r);
            mu.extend_from_slice(&row[..z]);
            logvar.extend(row[z..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)));
        }
        Ok((Tensor::matrix(rows, z, mu)?, Tensor::matrix(rows, z, logvar)?))
    }

    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.forward(z)
    }

    /// Draws `n` samples `D(z)`, `z ~ N(0, I)`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z = Tensor::matrix(n, self.z_dim, rng.normal_vec(n * self.z_dim))?;
        self.decode_tensor(&z)
    }
}

/// Posterior parameters on a graph.
#[derive(Clone, Copy, Debug)]
pub struct GaussianLatent {
    /// `batch × z_dim`
    pub mu: Var,
    /// `batch × z_dim`, clamped to `[LOGVAR_MIN, LOGVAR_MAX]`.
    pub logvar: Var,
}

/// A [`VaeModel`] whose parameters are bound to a graph.
#[derive(Clone, Debug)]
pub struct BoundVae {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
    pub z_dim: usize,
}

impl BoundVae {
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<GaussianLatent> {
        let out = self.encoder.forward(g, x)?;
        let mu = g.slice_cols(out, 0, self.z_dim)?;
        let raw = g.slice_cols(out, self.z_dim, 2 * self.z_dim)?;
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        Ok(GaussianLatent { mu, logvar })
    }

    pub fn decode(&self, g: &mut Graph, z: Var) -> Result<Var> {
        self.decoder.forward(g, z)
    }
}

/// `z = mu + exp(0.5 · logvar) ⊙ eps` with `eps ~ N(0, I)` held constant,
/// so gradients reach `mu` and `logvar` but not the noise.
pub fn reparameterize(g: &mut Graph, lat: GaussianLatent, rng: &mut Rng) -> Result<Var> {
    let shape = g.value(lat.mu).shape().to_vec();
    if g.value(lat.logvar).shape() != shape.as_slice() {
        return Err(Error::Dimension("mu and logvar shapes differ".into()));
    }
    let n: usize = shape.iter().product();
    let eps = g.constant(Tensor::new(shape, rng.normal_vec(n))?);
    reparameterize_with(g, lat, eps)
}

/// Reparameterization with caller-provided noise.
pub fn reparameterize_with(g: &mut Graph, lat: GaussianLatent, eps: Var) -> Result<Var> {
    let half = g.scale(lat.logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, eps)?;
    g.add(lat.mu, noise)
}
