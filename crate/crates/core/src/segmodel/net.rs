use crate::autonet::{ActivationTape, Gradients, LayerSpec, Network, ParamStore, Parameterized, Tensor};
use crate::error::{Error, Result};
use crate::raster::{LabelMask, Raster};
use crate::rng::Rng;

use super::focal::sigmoid;

/// Toy encoder-decoder. The encoder ends in a `feat_channels` map at 1/4
/// resolution (the point features); the decoder upsamples it back to one
/// logit per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SegNetToy {
    pub encoder: Network,
    pub decoder: Network,
}

/// Everything a training step needs from one forward pass.
#[derive(Clone, Debug)]
pub struct SegForward {
    pub features: Tensor,
    /// Logits cropped to the input size, row-major.
    pub logits: Vec<f64>,
    pub height: usize,
    pub width: usize,
    enc_tape: ActivationTape,
    dec_tape: ActivationTape,
    dec_shape: [usize; 3],
}

impl SegNetToy {
    pub fn new(in_channels: usize, feat_channels: usize, rng: &mut Rng) -> Result<Self> {
        let hidden = (feat_channels / 2).max(1);
        let encoder = Network::new(
            vec![
                LayerSpec::conv(in_channels, hidden),
                LayerSpec::Relu,
                LayerSpec::Downsample2,
                LayerSpec::conv(hidden, feat_channels),
                LayerSpec::Relu,
                LayerSpec::Downsample2,
                LayerSpec::conv(feat_channels, feat_channels),
            ],
            rng,
        )?;
        let decoder = Network::new(
            vec![
                LayerSpec::Relu,
                LayerSpec::Upsample2,
                LayerSpec::conv(feat_channels, hidden),
                LayerSpec::Relu,
                LayerSpec::Upsample2,
                LayerSpec::conv(hidden, 1),
            ],
            rng,
        )?;
        Ok(SegNetToy { encoder, decoder })
    }

    pub fn from_networks(encoder: Network, decoder: Network) -> Result<Self> {
        let probe = decoder.output_shape(encoder.output_shape([3, 8, 8]));
        if probe[0] != 1 {
            return Err(Error::Checkpoint(format!("decoder produces {} channels, expected 1", probe[0])));
        }
        Ok(SegNetToy { encoder, decoder })
    }

    pub fn feat_channels(&self) -> usize {
        self.encoder.output_shape([3, 4, 4])[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<SegForward> {
        let (features, enc_tape) = self.encoder.forward(input)?;
        let (full, dec_tape) = self.decoder.forward(&features)?;
        let (h, w) = (input.height, input.width);
        let mut logits = Vec::with_capacity(h * w);
        for y in 0..h {
            let start = y * full.width;
            logits.extend_from_slice(&full.data[start..start + w]);
        }
        Ok(SegForward {
            dec_shape: full.shape(),
            features,
            logits,
            height: h,
            width: w,
            enc_tape,
            dec_tape,
        })
    }

    /// Logits cropped to the input size.
    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.logits)
    }

    /// Back-propagates a logit gradient and an extra gradient on the point
    /// features. Returns `[encoder, decoder]` parameter gradients.
    pub fn backward(
        &self,
        fwd: &SegForward,
        grad_logits: &[f64],
        grad_features: Option<&Tensor>,
    ) -> Result<[Gradients; 2]> {
        let [c, fh, fw] = fwd.dec_shape;
        let mut g = Tensor::zeros(c, fh, fw);
        for y in 0..fwd.height {
            g.data[y * fw..y * fw + fwd.width].copy_from_slice(&grad_logits[y * fwd.width..(y + 1) * fwd.width]);
        }
        let (dec, mut gf) = self.decoder.backward(&fwd.dec_tape, &g)?;
        if let Some(extra) = grad_features {
            gf.add_assign(extra);
        }
        let (enc, _) = self.encoder.backward(&fwd.enc_tape, &gf)?;
        Ok([enc, dec])
    }

    /// ReLU signs of both halves, for gradient checking.
    pub fn relu_signature(&self, fwd: &SegForward) -> Vec<i8> {
        let mut s = self.encoder.relu_signature(&fwd.enc_tape);
        s.extend(self.decoder.relu_signature(&fwd.dec_tape));
        s
    }
}

impl Parameterized for SegNetToy {
    fn stores(&self) -> Vec<&ParamStore> {
        vec![self.encoder.params(), self.decoder.params()]
    }

    fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        vec![self.encoder.params_mut(), self.decoder.params_mut()]
    }
}

/// Water where `sigmoid(logit) >= threshold`.
pub fn mask_from_logits(logits: &[f64], width: usize, height: usize, threshold: f64) -> LabelMask {
    let values = logits.iter().map(|&z| u8::from(sigmoid(z) >= threshold)).collect();
    LabelMask::new(width, height, 2, values).expect("binary values")
}

pub fn predict_mask(model: &SegNetToy, raster: &Raster, threshold: f64) -> Result<LabelMask> {
    let logits = model.logits(&Tensor::from_raster(raster))?;
    Ok(mask_from_logits(&logits, raster.width(), raster.height(), threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn shapes_follow_input() {
        let mut r = rng::stream(0, "t");
        let m = SegNetToy::new(3, 8, &mut r).unwrap();
        for (h, w) in [(16, 16), (13, 18)] {
            let x = Tensor::zeros(3, h, w);
            let f = m.forward(&x).unwrap();
            assert_eq!(f.features.shape(), [8, h.div_ceil(4), w.div_ceil(4)]);
            assert_eq!(f.logits.len(), h * w);
        }
    }

    #[test]
    fn threshold_rules() {
        assert_eq!(mask_from_logits(&[-10.0; 4], 2, 2, 0.5).count(1), 0);
        assert_eq!(mask_from_logits(&[10.0; 4], 2, 2, 0.5).count(1), 4);
        assert_eq!(mask_from_logits(&[0.0], 1, 1, 0.5).get(0, 0), 1);
    }
}
