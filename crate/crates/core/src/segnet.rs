//! Mini-UNet segmentation network used both as the gradient-trained student
//! and as the EMA teacher.
//!
//! Layout (channels 8 -> 16 -> 32, two 3x3 conv + ReLU per level):
//!
//! ```text
//! enc1 (C->8->8) ─────────────────────────────┐ skip
//!   pool -> enc2 (8->16->16) ──────────┐ skip │
//!     pool -> enc3 (16->32->32)        │      │
//!     up ++ -> dec2 (48->16->16) <─────┘      │
//!   up ++ -> dec1 (24->8->8) <────────────────┘
//! head 1x1 (8->1) -> sigmoid
//! ```
//!
//! Dropout follows every level. No normalization layers anywhere, so train
//! and eval passes only differ in noise/dropout.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_core::{checkpoint, layers, Rng, Scalar, Tensor, Var};

pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

/// `(name prefix, in channels, out channels)` of every 3x3 conv pair, in order.
const LEVELS: [(&str, usize, usize); 5] = [
    ("enc1", 0, 8),
    ("enc2", 8, 16),
    ("enc3", 16, 32),
    ("dec2", 48, 16),
    ("dec1", 24, 8),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Student,
    Teacher,
}

/// How a forward pass treats randomness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pass {
    /// No input noise, no dropout.
    Deterministic,
    /// Input perturbed by `N(0, noise_sigma^2)` and dropout enabled.
    Stochastic { noise_sigma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct SegNetwork<T: Scalar = f32> {
    params: Vec<Parameter<T>>,
    dropout_rate: f64,
    in_channels: usize,
    role: Role,
}

/// Graph leaves for one training step; every forward through the same binding
/// contributes to the same gradients.
pub struct Binding<T: Scalar> {
    leaves: Vec<Var<T>>,
}

fn param_shapes(in_channels: usize) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    for (name, cin, cout) in LEVELS {
        let cin = if cin == 0 { in_channels } else { cin };
        shapes.push((format!("{name}.conv1.weight"), vec![cout, cin, 3, 3]));
        shapes.push((format!("{name}.conv1.bias"), vec![cout]));
        shapes.push((format!("{name}.conv2.weight"), vec![cout, cout, 3, 3]));
        shapes.push((format!("{name}.conv2.bias"), vec![cout]));
    }
    shapes.push(("head.weight".into(), vec![1, 8, 1, 1]));
    shapes.push(("head.bias".into(), vec![1]));
    shapes
}

impl<T: Scalar> SegNetwork<T> {
    /// Kaiming fan-in Gaussian kernels, zero biases.
    pub fn init(in_channels: usize, dropout_rate: f64, rng: &mut Rng) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::InvalidArgument("network needs at least one input channel".into()));
        }
        check_rate(dropout_rate)?;
        let mut params = Vec::new();
        for (name, shape) in param_shapes(in_channels) {
            let value = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let std = (2.0 / fan_in).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| rng.gaussian(0.0, std).map(T::of))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::from_vec(&shape, data)?
            } else {
                Tensor::zeros(&shape)
            };
            params.push(Parameter {
                name,
                value,
                grad: None,
            });
        }
        Ok(Self {
            params,
            dropout_rate,
            in_channels,
            role: Role::Student,
        })
    }

    /// Exact copy of the parameters in the teacher role (never receives gradients).
    pub fn clone_as_teacher(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.clone(),
                    grad: None,
                })
                .collect(),
            dropout_rate: self.dropout_rate,
            in_channels: self.in_channels,
            role: Role::Teacher,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        check_rate(rate)?;
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Leaves for a forward pass; they track gradients only for a student.
    pub fn bind(&self) -> Binding<T> {
        let track = self.role == Role::Student;
        Binding {
            leaves: self
                .params
                .iter()
                .map(|p| Var::leaf(p.value.clone(), track))
                .collect(),
        }
    }

    /// Move gradients collected on `binding` into the parameter gradient
    /// buffers, accumulating with anything already there.
    pub fn absorb_grads(&mut self, binding: &Binding<T>) -> Result<()> {
        if self.role == Role::Teacher {
            return Err(Error::InvalidArgument("teacher parameters never receive gradients".into()));
        }
        if binding.leaves.len() != self.params.len() {
            return Err(Error::ParameterMismatch("binding does not belong to this network".into()));
        }
        for (p, leaf) in self.params.iter_mut().zip(&binding.leaves) {
            if let Some(g) = leaf.take_grad() {
                match p.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g)?,
                    None => p.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Differentiable forward pass returning `N x 1 x H x W` probabilities.
    pub fn forward_var(&self, binding: &Binding<T>, x: &Var<T>, pass: Pass, rng: &mut Rng) -> Result<Var<T>> {
        let (_, c, h, w) = x.value().dims4("segnet forward")?;
        if c != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "segnet forward",
                left: vec![self.in_channels],
                right: x.shape().to_vec(),
            });
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape {
                op: "segnet forward",
                detail: format!("spatial extents must be positive multiples of 4, got {h}x{w}"),
            });
        }
        if binding.leaves.len() != self.params.len() {
            return Err(Error::ParameterMismatch("binding does not belong to this network".into()));
        }

        let (stochastic, input) = match pass {
            Pass::Deterministic => (false, x.clone()),
            Pass::Stochastic { noise_sigma } => {
                if !(noise_sigma >= 0.0) {
                    return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
                }
                let input = if noise_sigma > 0.0 {
                    let noise = (0..x.value().len())
                        .map(|_| rng.gaussian(0.0, noise_sigma).map(T::of))
                        .collect::<Result<Vec<_>>>()?;
                    x.add(&Var::constant(Tensor::from_vec(x.shape(), noise)?))?
                } else {
                    x.clone()
                };
                (true, input)
            }
        };

        let p = &binding.leaves;
        let rate = self.dropout_rate;
        let level = |idx: usize, input: &Var<T>, rng: &mut Rng| -> Result<Var<T>> {
            let base = idx * 4;
            let y = layers::relu(&layers::conv2d(input, &p[base], &p[base + 1], 1)?);
            let y = layers::relu(&layers::conv2d(&y, &p[base + 2], &p[base + 3], 1)?);
            layers::dropout(&y, rate, rng, stochastic)
        };

        let e1 = level(0, &input, rng)?;
        let e2 = level(1, &layers::maxpool2(&e1)?, rng)?;
        let e3 = level(2, &layers::maxpool2(&e2)?, rng)?;
        let d2 = level(3, &layers::concat_channels(&layers::upsample2_nearest(&e3)?, &e2)?, rng)?;
        let d1 = level(4, &layers::concat_channels(&layers::upsample2_nearest(&d2)?, &e1)?, rng)?;
        let logits = layers::conv2d(&d1, &p[20], &p[21], 0)?;
        Ok(layers::sigmoid(&logits))
    }

    /// Forward pass without gradient tracking.
    pub fn forward(&self, x: &Tensor<T>, pass: Pass, rng: &mut Rng) -> Result<Tensor<T>> {
        let binding = Binding {
            leaves: self.params.iter().map(|p| Var::constant(p.value.clone())).collect(),
        };
        Ok(self
            .forward_var(&binding, &Var::constant(x.clone()), pass, rng)?
            .value()
            .clone())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    pub fn from_named_tensors(tensors: Vec<(String, Tensor<T>)>, dropout_rate: f64, role: Role) -> Result<Self> {
        check_rate(dropout_rate)?;
        let in_channels = tensors
            .iter()
            .find(|(n, _)| n == "enc1.conv1.weight")
            .and_then(|(_, t)| t.shape().get(1).copied())
            .ok_or_else(|| Error::ParameterMismatch("missing enc1.conv1.weight".into()))?;
        let expected = param_shapes(in_channels);
        if expected.len() != tensors.len() {
            return Err(Error::ParameterMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        let params = expected
            .into_iter()
            .zip(tensors)
            .map(|((name, shape), (got_name, value))| {
                if name != got_name || shape != value.shape() {
                    return Err(Error::ParameterMismatch(format!(
                        "expected {name} {shape:?}, got {got_name} {:?}",
                        value.shape()
                    )));
                }
                Ok(Parameter {
                    name,
                    value,
                    grad: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            dropout_rate,
            in_channels,
            role,
        })
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> SegNetwork<U> {
        SegNetwork {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
            dropout_rate: self.dropout_rate,
            in_channels: self.in_channels,
            role: self.role,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.named_tensors())
    }

    pub fn load(path: &Path, dropout_rate: f64, role: Role) -> Result<Self> {
        Self::from_named_tensors(checkpoint::load(path)?, dropout_rate, role)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Exponential moving average `phi <- m * phi + (1 - m) * theta`, in place.
pub fn ema_update<T: Scalar>(teacher: &mut SegNetwork<T>, student: &SegNetwork<T>, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!("EMA momentum must be in [0, 1], got {m}")));
    }
    if teacher.params.len() != student.params.len() {
        return Err(Error::ParameterMismatch("different parameter counts".into()));
    }
    for (t, s) in teacher.params.iter().zip(&student.params) {
        if t.name != s.name || t.value.shape() != s.value.shape() {
            return Err(Error::ParameterMismatch(format!("{} vs {}", t.name, s.name)));
        }
    }
    let (keep, take) = (T::of(m), T::of(1.0 - m));
    for (t, s) in teacher.params.iter_mut().zip(&student.params) {
        for (phi, &theta) in t.value.data_mut().iter_mut().zip(s.value.data()) {
            // m*x + (1-m)*x can be off by an ulp; keep the fixed point exact.
            if *phi != theta {
                *phi = keep * *phi + take * theta;
            }
        }
    }
    Ok(())
}
