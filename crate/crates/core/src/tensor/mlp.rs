//! Multi-layer perceptrons over the tape: spec, initialization, application.

use rand::Rng;

use crate::error::{Error, Result};

use super::{Real, Tape, Tensor, ValueId};

/// Activation applied after the final affine layer. Hidden layers always use
/// ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

/// Shape of an MLP: `widths[0]` inputs through `widths.last()` outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub final_activation: Activation,
    pub bias: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, final_activation: Activation, bias: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Validation(format!(
                "MLP needs at least two widths, got {:?}",
                widths
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Validation(format!(
                "MLP widths must be positive, got {:?}",
                widths
            )));
        }
        Ok(Self {
            widths,
            final_activation,
            bias,
        })
    }

    pub fn num_affine(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Parameter names and shapes in application order: `w0 [in,out]`,
    /// `b0 [out]`, `w1`, ...
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for i in 0..self.num_affine() {
            out.push((format!("w{i}"), vec![self.widths[i], self.widths[i + 1]]));
            if self.bias {
                out.push((format!("b{i}"), vec![self.widths[i + 1]]));
            }
        }
        out
    }
}

/// Fresh parameter tensors for a spec: weights uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_mlp_params<R: Real>(spec: &MlpSpec, rng: &mut impl Rng) -> Vec<Tensor<R>> {
    let mut out = Vec::new();
    for i in 0..spec.num_affine() {
        let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<R> = (0..fan_in * fan_out)
            .map(|_| R::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        out.push(Tensor::new(vec![fan_in, fan_out], data).unwrap().with_grad());
        if spec.bias {
            out.push(Tensor::zeros(vec![fan_out]).with_grad());
        }
    }
    out
}

/// Applies the MLP to `x (rows × widths[0])`. `params` must match
/// [`MlpSpec::param_shapes`] in order and shape.
pub fn mlp_apply<R: Real>(
    tape: &mut Tape<R>,
    spec: &MlpSpec,
    params: &[ValueId],
    x: ValueId,
) -> Result<ValueId> {
    let expected = spec.param_shapes();
    if params.len() != expected.len() {
        return Err(Error::Validation(format!(
            "MLP expects {} parameter tensors, got {}",
            expected.len(),
            params.len()
        )));
    }
    for (&id, (name, shape)) in params.iter().zip(&expected) {
        if tape.value(id).shape() != shape.as_slice() {
            return Err(Error::Validation(format!(
                "MLP parameter {name} has shape {:?}, expected {:?}",
                tape.value(id).shape(),
                shape
            )));
        }
    }
    if tape.value(x).cols() != spec.input_width() {
        return Err(Error::Validation(format!(
            "MLP input has {} columns, expected {}",
            tape.value(x).cols(),
            spec.input_width()
        )));
    }

    let mut h = x;
    let mut p = 0;
    for i in 0..spec.num_affine() {
        h = tape.matmul(h, params[p])?;
        p += 1;
        if spec.bias {
            h = tape.bias_add(h, params[p])?;
            p += 1;
        }
        let last = i + 1 == spec.num_affine();
        h = match (last, spec.final_activation) {
            (false, _) => tape.relu(h),
            (true, Activation::None) => h,
            (true, Activation::Relu) => tape.relu(h),
            (true, Activation::Sigmoid) => tape.sigmoid(h),
        };
    }
    Ok(h)
}
