use candle_core::{DType, Tensor};

use super::params::{Grad, Param, ParamKind};
use crate::{ops, Result};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Param,
    bias: Option<Param>,
    stride: usize,
    padding: usize,
}

pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(prefix: &str, spec: ConvSpec, dtype: DType) -> Result<Self> {
        let weight = Param::zeros(
            format!("{prefix}.weight"),
            ParamKind::ConvWeight,
            &[spec.c_out, spec.c_in, spec.kernel, spec.kernel],
            dtype,
        )?;
        let bias = if spec.bias {
            Some(Param::zeros(format!("{prefix}.bias"), ParamKind::Bias, &[spec.c_out], dtype)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        let y = ops::conv2d(x, &self.weight.value(grad), self.stride, self.padding)?;
        match &self.bias {
            Some(b) => {
                let c = b.elem_count();
                Ok(y.broadcast_add(&b.value(grad).reshape((1, c, 1, 1))?)?)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        out.push(self.weight.clone());
        out.extend(self.bias.clone());
    }
}

/// Stride-2 upsampling convolution without bias.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Param,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, kernel: usize, dtype: DType) -> Result<Self> {
        Ok(ConvTranspose2d {
            weight: Param::zeros(
                format!("{prefix}.weight"),
                ParamKind::ConvWeight,
                &[c_in, c_out, kernel, kernel],
                dtype,
            )?,
            stride: 2,
            padding: 1,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        ops::conv_transpose2d(x, &self.weight.value(grad), self.stride, self.padding)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        out.push(self.weight.clone());
    }
}

#[derive(Debug, Clone)]
pub struct InstanceNorm {
    scale: Param,
    offset: Param,
}

impl InstanceNorm {
    pub fn new(prefix: &str, channels: usize, dtype: DType) -> Result<Self> {
        Ok(InstanceNorm {
            scale: Param::zeros(format!("{prefix}.scale"), ParamKind::NormScale, &[channels], dtype)?,
            offset: Param::zeros(format!("{prefix}.offset"), ParamKind::NormOffset, &[channels], dtype)?,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        ops::instance_norm(x, &self.scale.value(grad), &self.offset.value(grad), NORM_EPS)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        out.push(self.scale.clone());
        out.push(self.offset.clone());
    }
}

/// Convolution, instance normalization, ReLU.
#[derive(Debug, Clone)]
pub struct ConvNormRelu {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ConvNormRelu {
    pub fn new(prefix: &str, spec: ConvSpec, dtype: DType) -> Result<Self> {
        let c_out = spec.c_out;
        Ok(ConvNormRelu {
            conv: Conv2d::new(&format!("{prefix}.conv"), spec, dtype)?,
            norm: InstanceNorm::new(&format!("{prefix}.norm"), c_out, dtype)?,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x, grad)?, grad)?.relu()?)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        self.conv.params(out);
        self.norm.params(out);
    }
}

/// `x + IN(conv(ReLU(IN(conv(x)))))` at constant width.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    first: ConvNormRelu,
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ResidualBlock {
    pub fn new(prefix: &str, channels: usize, dtype: DType) -> Result<Self> {
        let spec = || ConvSpec {
            c_in: channels,
            c_out: channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: false,
        };
        Ok(ResidualBlock {
            first: ConvNormRelu::new(&format!("{prefix}.0"), spec(), dtype)?,
            conv: Conv2d::new(&format!("{prefix}.1.conv"), spec(), dtype)?,
            norm: InstanceNorm::new(&format!("{prefix}.1.norm"), channels, dtype)?,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        let h = self.first.forward(x, grad)?;
        let h = self.norm.forward(&self.conv.forward(&h, grad)?, grad)?;
        Ok((x + h)?)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        self.first.params(out);
        self.conv.params(out);
        self.norm.params(out);
    }
}

/// Upsampling transposed convolution, instance normalization, ReLU.
#[derive(Debug, Clone)]
pub struct UpNormRelu {
    conv: ConvTranspose2d,
    norm: InstanceNorm,
}

impl UpNormRelu {
    pub fn new(prefix: &str, c_in: usize, c_out: usize, dtype: DType) -> Result<Self> {
        Ok(UpNormRelu {
            conv: ConvTranspose2d::new(&format!("{prefix}.conv"), c_in, c_out, 4, dtype)?,
            norm: InstanceNorm::new(&format!("{prefix}.norm"), c_out, dtype)?,
        })
    }

    pub fn forward(&self, x: &Tensor, grad: Grad) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x, grad)?, grad)?.relu()?)
    }

    pub fn params(&self, out: &mut Vec<Param>) {
        self.conv.params(out);
        self.norm.params(out);
    }
}
