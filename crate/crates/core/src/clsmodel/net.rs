use crate::autonet::{ActivationTape, Gradients, LayerSpec, Network, ParamStore, Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::rng::Rng;

/// Unit-norm image embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    /// The pre-normalisation feature was the zero vector.
    pub degenerate: bool,
}

/// Conv stack, global average pooling, dense projection and
/// l2-normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNetToy {
    pub net: Network,
    /// Square input side; other sizes are resized bilinearly.
    pub input_size: usize,
}

impl EmbedNetToy {
    pub fn new(in_channels: usize, dim: usize, input_size: usize, rng: &mut Rng) -> Result<Self> {
        let net = Network::new(
            vec![
                LayerSpec::conv(in_channels, 8),
                LayerSpec::Relu,
                LayerSpec::Downsample2,
                LayerSpec::conv(8, 16),
                LayerSpec::Relu,
                LayerSpec::Downsample2,
                LayerSpec::conv(16, 32),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::dense(32, dim),
                LayerSpec::L2Normalize,
            ],
            rng,
        )?;
        Ok(EmbedNetToy { net, input_size })
    }

    pub fn from_network(net: Network, input_size: usize) -> Result<Self> {
        if net.layers().last() != Some(&LayerSpec::L2Normalize) {
            return Err(Error::Checkpoint("embedding network must end in l2-normalize".into()));
        }
        Ok(EmbedNetToy { net, input_size })
    }

    pub fn dim(&self) -> usize {
        self.net.output_shape([3, self.input_size, self.input_size])[0]
    }

    /// Resizes to the input size and subtracts each channel's mean.
    pub fn prepare(&self, raster: &Raster) -> Tensor {
        let mut t = if raster.width() == self.input_size && raster.height() == self.input_size {
            Tensor::from_raster(raster)
        } else {
            Tensor::from_raster(&raster.resize_bilinear(self.input_size, self.input_size))
        };
        let n = t.plane();
        for plane in t.data.chunks_mut(n) {
            let mean = plane.iter().sum::<f64>() / n as f64;
            for v in plane {
                *v -= mean;
            }
        }
        t
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Embedding, ActivationTape)> {
        let (y, tape) = self.net.forward(input)?;
        Ok((
            Embedding {
                vector: y.data,
                degenerate: tape.degenerate_norm,
            },
            tape,
        ))
    }

    pub fn backward(&self, tape: &ActivationTape, grad: &[f64]) -> Result<Gradients> {
        Ok(self.net.backward(tape, &Tensor::vector(grad.to_vec()))?.0)
    }

    pub fn embed(&self, raster: &Raster) -> Result<Embedding> {
        Ok(self.forward(&self.prepare(raster))?.0)
    }
}

impl Parameterized for EmbedNetToy {
    fn stores(&self) -> Vec<&ParamStore> {
        vec![self.net.params()]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![self.net.params_mut()]
    }
}
