use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Stand-in for a learned image autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentCodec {
    /// Latent is the image itself.
    #[default]
    Identity,
    /// 2x2 average pooling; decoding upsamples bilinearly.
    AvgPool2,
}

impl LatentCodec {
    pub fn downscale(&self) -> usize {
        match self {
            LatentCodec::Identity => 1,
            LatentCodec::AvgPool2 => 2,
        }
    }

    pub fn encode(&self, img: &Image) -> Result<Tensor> {
        let t = img.to_tensor();
        match self {
            LatentCodec::Identity => Ok(t),
            LatentCodec::AvgPool2 => {
                let mut g = Graph::new();
                let x = g.leaf_f32(t.dims(), t.data())?;
                let y = g.avg_pool2(x)?;
                to_tensor(&g, y)
            }
        }
    }

    /// Decoded image, clamped to `[0, 1]`.
    pub fn decode(&self, latent: &Tensor) -> Result<Image> {
        match self {
            LatentCodec::Identity => Image::from_tensor_clamped(latent),
            LatentCodec::AvgPool2 => {
                let mut g = Graph::new();
                let x = g.leaf_f32(latent.dims(), latent.data())?;
                let y = self.decode_graph(&mut g, x)?;
                Image::from_tensor_clamped(&to_tensor(&g, y)?)
            }
        }
    }

    /// Differentiable decode (no clamping).
    pub fn decode_graph(&self, g: &mut Graph, latent: Var) -> Result<Var> {
        match self {
            LatentCodec::Identity => Ok(latent),
            LatentCodec::AvgPool2 => g.upsample_bilinear2(latent),
        }
    }
}

pub(crate) fn to_tensor(g: &Graph, v: Var) -> Result<Tensor> {
    Tensor::new(g.dims(v).to_vec(), g.value(v).iter().map(|&x| x as f32).collect())
}

impl fmt::Display for LatentCodec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentCodec::Identity => "identity",
            LatentCodec::AvgPool2 => "avgpool2",
        })
    }
}

impl FromStr for LatentCodec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LatentCodec::Identity),
            "avgpool2" => Ok(LatentCodec::AvgPool2),
            _ => Err(Error::domain(format!("unknown codec {s:?} (identity|avgpool2)"))),
        }
    }
}
