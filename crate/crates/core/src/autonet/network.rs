use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use super::layers::{self, LayerSpec};
use super::params::{Gradients, Param, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Per-layer inputs recorded by [`Network::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ActivationTape {
    network: u64,
    version: u64,
    inputs: Vec<Tensor>,
    /// Set when an L2-normalize layer saw the zero vector.
    pub degenerate_norm: bool,
}

impl ActivationTape {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Input recorded for layer `i`.
    pub fn input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }
}

/// A chain of layers with its parameters.
#[derive(Debug)]
pub struct Network {
    id: u64,
    version: u64,
    layers: Vec<LayerSpec>,
    /// Parameter slot of each layer, `None` for parameter-free layers.
    slots: Vec<Option<usize>>,
    params: ParamStore,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            id: fresh_id(),
            version: 0,
            layers: self.layers.clone(),
            slots: self.slots.clone(),
            params: self.params.clone(),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

impl Network {
    /// Builds a network with fan-in scaled uniform weights
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero biases.
    pub fn new(layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        Self::check_chain(&layers)?;
        let mut params = ParamStore::new();
        let mut slots = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            match layer.param_layout() {
                Some((nw, nb)) => {
                    let bound = (6.0 / layer.fan_in() as f64).sqrt();
                    let mut value: Vec<f64> =
                        (0..nw).map(|_| rng.random_range(-bound..bound)).collect();
                    value.extend(std::iter::repeat_n(0.0, nb));
                    slots.push(Some(params.push(Param::new(format!("{i}.{}", layer.name()), value))));
                }
                None => slots.push(None),
            }
        }
        Ok(Network {
            id: fresh_id(),
            version: 0,
            layers,
            slots,
            params,
        })
    }

    /// Builds a network from explicit parameter arrays (one per learnable
    /// layer, in declaration order).
    pub fn from_parts(layers: Vec<LayerSpec>, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::check_chain(&layers)?;
        let mut params = ParamStore::new();
        let mut slots = Vec::with_capacity(layers.len());
        let mut values = values.into_iter();
        for (i, layer) in layers.iter().enumerate() {
            match layer.param_layout() {
                Some((nw, nb)) => {
                    let v = values
                        .next()
                        .ok_or_else(|| Error::Checkpoint(format!("missing parameters for layer {i}")))?;
                    if v.len() != nw + nb {
                        return Err(Error::Checkpoint(format!(
                            "layer {i} expects {} parameters, got {}",
                            nw + nb,
                            v.len()
                        )));
                    }
                    slots.push(Some(params.push(Param::new(format!("{i}.{}", layer.name()), v))));
                }
                None => slots.push(None),
            }
        }
        if values.next().is_some() {
            return Err(Error::Checkpoint("more parameter arrays than learnable layers".into()));
        }
        Ok(Network {
            id: fresh_id(),
            version: 0,
            layers,
            slots,
            params,
        })
    }

    /// Checks that channel counts chain through conv and dense layers.
    fn check_chain(layers: &[LayerSpec]) -> Result<()> {
        let mut channels: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    if let Some(c) = channels {
                        if c != in_channels {
                            return Err(Error::ShapeMismatch {
                                layer: i,
                                kind: layer.name(),
                                detail: format!("expects {in_channels} channels, chain carries {c}"),
                            });
                        }
                    }
                    channels = Some(out_channels);
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    ..
                } => {
                    if let Some(c) = channels {
                        // a dense layer may follow a spatial map; only a
                        // vector-producing predecessor pins the width
                        if matches!(
                            layers.get(i.wrapping_sub(1)),
                            Some(LayerSpec::GlobalAvgPool | LayerSpec::Dense { .. })
                        ) && c != in_features
                        {
                            return Err(Error::ShapeMismatch {
                                layer: i,
                                kind: layer.name(),
                                detail: format!("expects {in_features} features, chain carries {c}"),
                            });
                        }
                    }
                    channels = Some(out_features);
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access to parameters; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        self.version += 1;
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    fn layer_params(&self, i: usize) -> &[f64] {
        match self.slots[i] {
            Some(s) => &self.params.get(s).value,
            None => &[],
        }
    }

    fn apply(&self, i: usize, x: &Tensor, degenerate: &mut bool) -> Result<Tensor> {
        let layer = self.layers[i];
        let mismatch = |detail: String| Error::ShapeMismatch {
            layer: i,
            kind: layer.name(),
            detail,
        };
        Ok(match layer {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                has_bias,
            } => {
                if x.channels != in_channels {
                    return Err(mismatch(format!(
                        "input has {} channels, expected {in_channels}",
                        x.channels
                    )));
                }
                layers::conv3x3_forward(x, self.layer_params(i), in_channels, out_channels, has_bias)
            }
            LayerSpec::Relu => layers::relu_forward(x),
            LayerSpec::Downsample2 => layers::downsample_forward(x),
            LayerSpec::Upsample2 => layers::upsample_forward(x),
            LayerSpec::GlobalAvgPool => layers::gap_forward(x),
            LayerSpec::Dense {
                in_features,
                out_features,
                has_bias,
            } => {
                if x.len() != in_features {
                    return Err(mismatch(format!(
                        "input has {} values, expected {in_features}",
                        x.len()
                    )));
                }
                layers::dense_forward(x, self.layer_params(i), in_features, out_features, has_bias)
            }
            LayerSpec::L2Normalize => {
                let (y, zero) = layers::l2_forward(x);
                if zero {
                    log::warn!("l2-normalize received the zero vector (layer {i})");
                    *degenerate = true;
                }
                y
            }
        })
    }

    /// Runs the chain and records every layer input.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationTape)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut degenerate = false;
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            let y = self.apply(i, &x, &mut degenerate)?;
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok((
            x,
            ActivationTape {
                network: self.id,
                version: self.version,
                inputs,
                degenerate_norm: degenerate,
            },
        ))
    }

    /// Forward pass without a tape.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut degenerate = false;
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.apply(i, &x, &mut degenerate)?;
        }
        Ok(x)
    }

    /// Propagates `grad_output` back through the recorded pass. Returns the
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, tape: &ActivationTape, grad_output: &Tensor) -> Result<(Gradients, Tensor)> {
        if tape.network != self.id || tape.version != self.version || tape.len() != self.layers.len()
        {
            return Err(Error::StaleTape);
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let mut g = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &tape.inputs[i];
            g = match self.layers[i] {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    has_bias,
                } => {
                    let slot = self.slots[i].expect("conv has parameters");
                    layers::conv3x3_backward(
                        x,
                        &self.params.get(slot).value,
                        &g,
                        in_channels,
                        out_channels,
                        has_bias,
                        &mut grads.0[slot],
                    )
                }
                LayerSpec::Relu => layers::relu_backward(x, &g),
                LayerSpec::Downsample2 => layers::downsample_backward(x, &g),
                LayerSpec::Upsample2 => layers::upsample_backward(x, &g),
                LayerSpec::GlobalAvgPool => layers::gap_backward(x, &g),
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    has_bias,
                } => {
                    let slot = self.slots[i].expect("dense has parameters");
                    layers::dense_backward(
                        x,
                        &self.params.get(slot).value,
                        &g,
                        in_features,
                        out_features,
                        has_bias,
                        &mut grads.0[slot],
                    )
                }
                LayerSpec::L2Normalize => layers::l2_backward(x, &g),
            };
        }
        Ok((grads, g))
    }

    /// Backward pass that accumulates into the parameter store's gradient
    /// buffers. Returns the input gradient.
    pub fn backward_into(&mut self, tape: &ActivationTape, grad_output: &Tensor) -> Result<Tensor> {
        let (grads, gi) = self.backward(tape, grad_output)?;
        self.params.accumulate(&grads);
        Ok(gi)
    }

    /// Signs (-1, 0, +1) of every ReLU input on the tape; a change between two
    /// nearby parameter settings marks a non-differentiable crossing.
    pub fn relu_signature(&self, tape: &ActivationTape) -> Vec<i8> {
        let mut sig = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if *layer == LayerSpec::Relu {
                sig.extend(tape.inputs[i].data.iter().map(|&v| {
                    if v > 0.0 {
                        1
                    } else if v < 0.0 {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        sig
    }

    /// Output shape for an input shape, without computing anything.
    pub fn output_shape(&self, input: [usize; 3]) -> [usize; 3] {
        let [mut c, mut h, mut w] = input;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv3x3 { out_channels, .. } => c = out_channels,
                LayerSpec::Downsample2 => {
                    h = h.div_ceil(2);
                    w = w.div_ceil(2);
                }
                LayerSpec::Upsample2 => {
                    h *= 2;
                    w *= 2;
                }
                LayerSpec::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                LayerSpec::Dense { out_features, .. } => {
                    c = out_features;
                    h = 1;
                    w = 1;
                }
                LayerSpec::Relu | LayerSpec::L2Normalize => {}
            }
        }
        [c, h, w]
    }
}
