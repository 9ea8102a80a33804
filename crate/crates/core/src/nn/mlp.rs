use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_into, Graph, Tensor, Transpose, Unary, Var};

/// Layer widths and hidden activations of a fully-connected network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    /// `widths[0]` is the input dimension, the last entry the output.
    pub widths: Vec<usize>,
    /// One activation per hidden layer. The output layer is linear.
    pub activations: Vec<Unary>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Unary>) -> Result<Self> {
        let spec = Self {
            widths,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// ReLU on every hidden layer.
    pub fn relu(widths: Vec<usize>) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths, vec![Unary::Relu; hidden])
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Dimension(format!(
                "an MLP needs at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Dimension("layer widths must be positive".into()));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(Error::Dimension(format!(
                "{} hidden layers but {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `fan_in × fan_out`, so a layer computes `x · W + b`.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameters of a fully-connected network.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-a, a))
                    .collect();
                Ok(Linear {
                    weight: Tensor::matrix(fan_in, fan_out, data)?,
                    bias: Tensor::zeros(&[fan_out]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, layers })
    }

    /// Network with every parameter set to zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Weights and biases in layer order: `W0, b0, W1, b1, …`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Places the parameters on a graph. Frozen parameters become constants,
    /// so gradients still flow through the network to its inputs but never
    /// accumulate on its weights.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let vars = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        BoundMlp {
            vars,
            activations: self.spec.activations.clone(),
            in_dim: self.spec.input_dim(),
        }
    }

    /// Forward pass without recording a graph.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rows = x.rows();
        if x.cols() != self.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} input columns, got {}",
                self.spec.input_dim(),
                x.cols()
            )));
        }
        let mut h = x.data().to_vec();
        let n_layers = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let (k, n) = (layer.weight.rows(), layer.weight.cols());
            let mut out = vec![0.0; rows * n];
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(layer.bias.data());
            }
            matmul_into(
                rows,
                k,
                n,
                &h,
                Transpose::No,
                layer.weight.data(),
                Transpose::No,
                &mut out,
                1.0,
            );
            if i + 1 < n_layers {
                let f = self.spec.activations[i];
                out.iter_mut().for_each(|v| *v = f.apply(*v));
            }
            h = out;
        }
        Tensor::matrix(rows, self.spec.output_dim(), h)
    }
}

/// An [`Mlp`] whose parameters live on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub vars: Vec<Var>,
    activations: Vec<Unary>,
    in_dim: usize,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.in_dim {
            return Err(Error::Dimension(format!(
                "network expects {} input columns, got {}",
                self.in_dim,
                g.value(x).cols()
            )));
        }
        let n_layers = self.vars.len() / 2;
        let mut h = x;
        for i in 0..n_layers {
            let xw = g.matmul(h, self.vars[2 * i])?;
            h = g.add_bias(xw, self.vars[2 * i + 1])?;
            if i + 1 < n_layers {
                h = g.map(h, self.activations[i])?;
            }
        }
        Ok(h)
    }

    /// Gradients of the bound parameters, in [`Mlp::params`] order.
    pub fn take_grads(&self, g: &mut Graph) -> Vec<Vec<f64>> {
        self.vars.iter().map(|&v| g.take_grad(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::relu(vec![2, 4]).is_err());
        assert!(MlpSpec::relu(vec![2, 0, 4]).is_err());
        assert!(MlpSpec::new(vec![2, 3, 4], vec![]).is_err());
        assert!(MlpSpec::relu(vec![2, 3, 4]).is_ok());
    }

    #[test]
    fn biases_start_at_zero() {
        let mut rng = Rng::seed_from_u64(0);
        let mlp = Mlp::init(MlpSpec::relu(vec![2, 16, 16, 4]).unwrap(), &mut rng).unwrap();
        for l in &mlp.layers {
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn glorot_weights_are_centered_and_bounded() {
        let mut rng = Rng::seed_from_u64(1);
        let mlp = Mlp::init(MlpSpec::relu(vec![256, 256, 256]).unwrap(), &mut rng).unwrap();
        let w = mlp.layers[0].weight.data();
        let a = (6.0f64 / 512.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= a));
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        // U(-a, a) has standard deviation a / sqrt(3).
        let stderr = a / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * stderr, "mean {mean} stderr {stderr}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = MlpSpec::relu(vec![2, 8, 3]).unwrap();
        let a = Mlp::init(spec.clone(), &mut Rng::seed_from_u64(4)).unwrap();
        let b = Mlp::init(spec, &mut Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let mut rng = Rng::seed_from_u64(2);
        let mlp = Mlp::init(MlpSpec::relu(vec![3, 5, 5, 2]).unwrap(), &mut rng).unwrap();
        let x = Tensor::matrix(4, 3, rng.normal_vec(12)).unwrap();
        let plain = mlp.forward(&x).unwrap();
        let mut g = Graph::new();
        let bound = mlp.bind(&mut g, true);
        let xv = g.constant(x);
        let y = bound.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &plain);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mlp = Mlp::zeros(MlpSpec::relu(vec![3, 4, 2]).unwrap()).unwrap();
        assert!(matches!(
            mlp.forward(&Tensor::zeros(&[2, 5])),
            Err(Error::Dimension(_))
        ));
    }
}
