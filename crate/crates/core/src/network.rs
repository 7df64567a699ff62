//! Sequential networks: shape-checked layer stacks with cached backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerSpec};
use crate::tensor::{Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Caches intermediates for `backward`; dropout is active.
    Train,
    /// No caching; dropout is the identity.
    Infer,
}

/// A feed-forward stack of layers over a fixed per-sample input shape.
///
/// Inputs are either a single sample (`input_shape`) or a batch
/// (`[N, input_shape..]`); outputs follow the same convention.
#[derive(Debug, Clone)]
pub struct Sequential {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    batched_last: Option<bool>,
}

impl Sequential {
    /// Shape-checks the whole stack and initializes parameters from `seed`.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid input shape {input_shape:?}"
            )));
        }
        let mut shapes = Vec::with_capacity(specs.len());
        let mut current = input_shape.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            let next = spec.output_shape(&current).ok_or_else(|| Error::ShapeMismatch {
                layer: i,
                expected: expected_input(spec, &current),
                actual: current.clone(),
            })?;
            shapes.push(next.clone());
            current = next;
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let feeds_relu = matches!(specs.get(i + 1), Some(LayerSpec::Relu));
                Layer::build(s, feeds_relu, &mut init_rng)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            input_shape: input_shape.to_vec(),
            specs,
            shapes,
            layers,
            rng,
            batched_last: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap_or(&self.input_shape)
    }

    /// Per-sample output shape of every layer, in order.
    pub fn layer_output_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Replaces every parameter value, in declaration order.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter shape {:?} does not match {:?}",
                    v.shape(),
                    p.value.shape()
                )));
            }
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.value = v;
            p.zero_grad();
        }
        Ok(())
    }

    fn batch_view(&self, x: &Tensor) -> Result<(Tensor, bool)> {
        let s = x.shape();
        if s == self.input_shape.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(s);
            return Ok((x.clone().reshape(shape)?, false));
        }
        if s.len() == self.input_shape.len() + 1 && s[1..] == self.input_shape[..] {
            return Ok((x.clone(), true));
        }
        let mut expected = vec![s.first().copied().unwrap_or(1)];
        expected.extend_from_slice(&self.input_shape);
        Err(Error::ShapeMismatch {
            layer: 0,
            expected,
            actual: s.to_vec(),
        })
    }

    fn unbatch(&self, y: Tensor, batched: bool) -> Tensor {
        if batched {
            y
        } else {
            let shape = self.output_shape().to_vec();
            y.reshape(shape).expect("output shape")
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Infer => self.infer(x),
            Mode::Train => {
                let (mut h, batched) = self.batch_view(x)?;
                for layer in self.layers.iter_mut() {
                    h = layer.forward_train(&h, &mut self.rng);
                }
                self.batched_last = Some(batched);
                Ok(self.unbatch(h, batched))
            }
        }
    }

    /// Inference forward pass; does not touch caches or the dropout stream.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (mut h, batched) = self.batch_view(x)?;
        for layer in &self.layers {
            h = layer.infer(&h);
        }
        Ok(self.unbatch(h, batched))
    }

    /// Back-propagates `grad` (shaped like the last training forward output),
    /// accumulating into every `Param::grad`, and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let batched = self
            .batched_last
            .take()
            .ok_or(Error::NoForwardCache { layer: self.layers.len() })?;
        let mut g = if batched {
            grad.clone()
        } else {
            let mut shape = vec![1];
            shape.extend_from_slice(grad.shape());
            grad.clone().reshape(shape)?
        };
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).ok_or(Error::NoForwardCache { layer: i })?;
        }
        if batched {
            Ok(g)
        } else {
            g.reshape(self.input_shape.clone())
        }
    }

    /// Drops any cached training state.
    pub fn clear_cache(&mut self) {
        self.batched_last = None;
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }
}

fn expected_input(spec: &LayerSpec, actual: &[usize]) -> Vec<usize> {
    match *spec {
        LayerSpec::Conv2d { in_channels, .. } => {
            let mut e = actual.to_vec();
            e.resize(3, 1);
            e[2] = in_channels;
            e
        }
        LayerSpec::MaxPool2d { window, .. } => vec![window, window, actual.last().copied().unwrap_or(1)],
        LayerSpec::Dense { inputs, .. } => vec![inputs],
        LayerSpec::Softmax => vec![actual.iter().product()],
        _ => actual.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_arithmetic() {
        let mut net = Sequential::new(&[1], vec![LayerSpec::dense(1, 1)], 0).unwrap();
        net.set_params(vec![
            Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            Tensor::from_vec(vec![0.0]).unwrap(),
        ])
        .unwrap();
        let x = Tensor::from_vec(vec![3.0]).unwrap();
        assert_eq!(net.forward(&x, Mode::Infer).unwrap().data(), &[6.0]);

        let y = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[6.0]);
        let dx = net.backward(&Tensor::from_vec(vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[2.0]);
        assert_eq!(net.params()[0].grad.data(), &[3.0]);
        assert_eq!(net.params()[1].grad.data(), &[1.0]);
    }

    #[test]
    fn conv_all_ones_valid_region() {
        let mut net = Sequential::new(&[5, 5, 1], vec![LayerSpec::conv3x3(1, 1)], 0).unwrap();
        net.set_params(vec![
            Tensor::filled(&[3, 3, 1, 1], 1.0),
            Tensor::zeros(&[1]),
        ])
        .unwrap();
        let y = net.infer(&Tensor::filled(&[5, 5, 1], 1.0)).unwrap();
        // "same" output is 5x5; the valid 3x3 interior is all 9.
        for r in 1..4 {
            for c in 1..4 {
                assert_eq!(y.data()[r * 5 + c], 9.0);
            }
        }
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn shape_error_names_layer() {
        let err = Sequential::new(
            &[4],
            vec![LayerSpec::dense(4, 3), LayerSpec::Relu, LayerSpec::dense(2, 1)],
            0,
        )
        .unwrap_err();
        match err {
            Error::ShapeMismatch {
                layer,
                expected,
                actual,
            } => {
                assert_eq!(layer, 2);
                assert_eq!(expected, vec![2]);
                assert_eq!(actual, vec![3]);
            }
            other => panic!("unexpected {other:?}"),
        }

        let net = Sequential::new(&[4], vec![LayerSpec::dense(4, 3)], 0).unwrap();
        assert!(matches!(
            net.infer(&Tensor::zeros(&[2, 5])),
            Err(Error::ShapeMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Sequential::new(&[2], vec![LayerSpec::dense(2, 1)], 0).unwrap();
        assert!(matches!(
            net.backward(&Tensor::zeros(&[1])),
            Err(Error::NoForwardCache { .. })
        ));
        net.forward(&Tensor::zeros(&[2]), Mode::Infer).unwrap();
        assert!(net.backward(&Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn seeded_construction_is_bitwise_deterministic() {
        let specs = vec![LayerSpec::dense(3, 4), LayerSpec::Relu, LayerSpec::dense(4, 2)];
        let a = Sequential::new(&[3], specs.clone(), 11).unwrap();
        let b = Sequential::new(&[3], specs.clone(), 11).unwrap();
        let c = Sequential::new(&[3], specs, 12).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert!(p.value.bitwise_eq(&q.value));
        }
        assert!(!a.params()[0].value.bitwise_eq(&c.params()[0].value));
    }
}
