use rand::RngCore;

use super::layer::{Dense, Layer, LayerCache, ParamGrad};
use super::tensor::{softmax_rows, Scalar, Tensor};
use crate::error::{Error, Result};

/// A feed-forward classifier: a layer stack ending in `SoftmaxOutput`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Activations recorded by a training-mode forward pass.
pub struct Trace<T> {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    pub activations: Vec<Tensor<T>>,
    caches: Vec<LayerCache<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.activations.last().expect("trace holds the input")
    }
}

/// Per-layer parameter gradients (`None` for parameter-free layers).
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<Option<ParamGrad<T>>>,
    pub input: Option<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in the same order as [`Network::params`].
    pub fn blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network, checking that consecutive layer shapes compose and
    /// that the stack ends in a single `SoftmaxOutput`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("bad input shape {:?}", input_shape)));
        }
        match layers.last() {
            Some(Layer::SoftmaxOutput(d)) if d.units > 0 => {}
            _ => {
                return Err(Error::Shape(
                    "network must end with a non-empty softmax output layer".into(),
                ))
            }
        }
        if layers[..layers.len() - 1]
            .iter()
            .any(|l| matches!(l, Layer::SoftmaxOutput(_)))
        {
            return Err(Error::Shape("softmax output must be the last layer".into()));
        }
        let net = Self {
            input_shape,
            layers,
        };
        net.shapes()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut Vec<Layer<T>> {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.output_layer().units
    }

    pub fn output_layer(&self) -> &Dense<T> {
        match self.layers.last() {
            Some(Layer::SoftmaxOutput(d)) => d,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Per-sample shapes: entry 0 is the input, entry `i + 1` layer `i`'s output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            return Err(Error::Shape(format!(
                "batch {:?} does not match network input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Pre-softmax output scores in evaluation mode.
    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward(&x, None)?.0;
        }
        Ok(x)
    }

    /// Class probabilities in evaluation mode (dropout disabled).
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_rows(&self.logits(batch)?))
    }

    /// Training-mode forward pass recording every activation. Dropout
    /// masks are drawn from `rng`.
    pub fn forward_train(&self, batch: &Tensor<T>, rng: &mut dyn RngCore) -> Result<Trace<T>> {
        self.check_batch(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for layer in &self.layers {
            let (y, cache) = layer.forward(activations.last().unwrap(), Some(&mut *rng))?;
            activations.push(y);
            caches.push(cache);
        }
        Ok(Trace {
            activations,
            caches,
        })
    }

    /// Backpropagates `dlogits` (gradient w.r.t. the output layer's
    /// pre-softmax scores) through a recorded trace.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &Tensor<T>, need_input: bool) -> Gradients<T> {
        let mut grads: Vec<Option<ParamGrad<T>>> = vec![None; self.layers.len()];
        let mut dy = dlogits.clone();
        let mut input = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let want_dx = i > 0 || need_input;
            let (dx, g) = layer.backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &trace.caches[i],
                &dy,
                want_dx,
            );
            grads[i] = g;
            match dx {
                Some(dx) if i > 0 => dy = dx,
                dx => input = dx,
            }
        }
        Gradients {
            layers: grads,
            input,
        }
    }

    /// Parameter blocks in layer order, weight before bias.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|block| block.iter().all(|v| v.is_finite()))
    }
}
