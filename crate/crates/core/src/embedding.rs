//! Feature encoder: a small MLP mapping raw `D`-dimensional rows to
//! `C`-dimensional node embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Affine map `x ↦ x·W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Weights uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| bound * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], data).expect("sizes are positive"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn identity(width: usize) -> Self {
        Linear {
            weight: Tensor::eye(width),
            bias: Tensor::zeros(&[width]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn params(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn bind(vars: &mut impl Iterator<Item = Var>) -> BoundLinear {
        BoundLinear {
            weight: vars.next().expect("weight var"),
            bias: vars.next().expect("bias var"),
        }
    }
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_row(y, self.bias)
    }
}

/// MLP with relu between layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    layers: Vec<BoundLinear>,
}

pub fn init_encoder(widths: &[usize], seed: u64) -> Result<Encoder> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_encoder_with(widths, &mut rng)
}

pub fn init_encoder_with<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Encoder> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Parameter(format!(
            "encoder widths need at least two positive entries, got {widths:?}"
        )));
    }
    let layers = widths
        .windows(2)
        .map(|w| Linear::init(w[0], w[1], rng))
        .collect();
    Ok(Encoder { layers })
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Linear::fan_out));
        w
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(Linear::params_mut)
            .collect()
    }

    /// Consumes vars in [`Encoder::params`] order.
    pub fn bind(&self, vars: &mut impl Iterator<Item = Var>) -> BoundEncoder {
        BoundEncoder {
            layers: self.layers.iter().map(|_| Linear::bind(vars)).collect(),
        }
    }

    /// Embeds `features` (`n × D`) without recording gradients.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let bound = self.bind(&mut vars.into_iter());
        let x = tape.constant(features.clone());
        let out = bound.encode(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}

impl BoundEncoder {
    pub fn encode(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        let expected = tape.value(self.layers[0].weight).shape()[0];
        let got = tape.value(features);
        if got.shape().len() != 2 || got.cols() != expected {
            return Err(Error::dim("encode", got.shape(), &[expected]));
        }
        let mut h = features;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{check_gradients, DEFAULT_EPS};

    fn features() -> Tensor {
        Tensor::from_rows(&[[0.5, -1.0, 2.0], [3.0, 0.1, -0.7]]).unwrap()
    }

    #[test]
    fn identity_encoder_is_identity() {
        let enc = Encoder {
            layers: vec![Linear::identity(3)],
        };
        assert_eq!(enc.encode(&features()).unwrap(), features());
    }

    #[test]
    fn zero_encoder_outputs_zeros() {
        let mut enc = init_encoder(&[3, 5, 4], 1).unwrap();
        for p in enc.params_mut() {
            p.data_mut().fill(0.0);
        }
        let out = enc.encode(&features()).unwrap();
        assert_eq!(out, Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn duplicated_rows_map_to_duplicated_rows() {
        let enc = init_encoder(&[3, 6, 4], 9).unwrap();
        let x = Tensor::from_rows(&[[0.5, -1.0, 2.0], [0.5, -1.0, 2.0]]).unwrap();
        let out = enc.encode(&x).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out, enc.encode(&x).unwrap());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = init_encoder(&[4, 8, 8], 3).unwrap();
        assert_eq!(a, init_encoder(&[4, 8, 8], 3).unwrap());
        assert_ne!(a, init_encoder(&[4, 8, 8], 4).unwrap());
        assert_eq!(a.layers[0].weight.shape(), &[4, 8]);
        assert_eq!(a.layers[1].weight.shape(), &[8, 8]);
        assert!(a
            .layers
            .iter()
            .all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
        assert_eq!(a.widths(), vec![4, 8, 8]);
    }

    #[test]
    fn init_rejects_bad_widths() {
        assert!(matches!(init_encoder(&[4], 0), Err(Error::Parameter(_))));
        assert!(matches!(
            init_encoder(&[4, 0, 2], 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn init_weight_std_matches_uniform_law() {
        // Uniform(-b, b) with b = sqrt(6/fan_in) has std b/sqrt(3) = sqrt(2/fan_in).
        let fan_in = 100;
        let enc = init_encoder(&[fan_in, 100], 17).unwrap();
        let w = enc.layers[0].weight.data();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let expected = (2.0 / fan_in as f64).sqrt();
        assert!((var.sqrt() - expected).abs() < 0.2 * expected);
        let bound = (6.0 / fan_in as f64).sqrt();
        assert!(w.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn encode_dimension_mismatch() {
        let enc = init_encoder(&[5, 4], 0).unwrap();
        assert!(matches!(
            enc.encode(&features()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut enc = init_encoder(&[3, 7, 4], 21).unwrap();
        for p in enc.params_mut() {
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                *x += 0.01 * (i as f64).sin();
            }
        }
        let params: Vec<Tensor> = enc.params().into_iter().cloned().collect();
        let x = features();
        let err = check_gradients(&params, DEFAULT_EPS, |tape, vars| {
            let bound = enc.bind(&mut vars.iter().copied());
            let input = tape.constant(x.clone());
            let out = bound.encode(tape, input)?;
            let sq = tape.mul(out, out)?;
            Ok(tape.mean(sq))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
