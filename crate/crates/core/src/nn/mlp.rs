use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::None => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::None),
            _ => None,
        }
    }
}

/// Layer widths from input to output. Hidden layers use ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: &[usize], final_activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidParameter(
                "an MLP needs at least an input and an output size".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            final_activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.final_activation
        } else {
            Activation::Relu
        }
    }
}

/// A learnable tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamTensor {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Fully connected layer; `weight` is `out × in`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// All weights and biases zero.
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Dense {
                in_dim: w[0],
                out_dim: w[1],
                weight: ParamTensor::new(vec![0.0; w[0] * w[1]]),
                bias: ParamTensor::new(vec![0.0; w[1]]),
            })
            .collect();
        Self { spec, layers }
    }

    /// He-uniform weights for ReLU layers, Glorot-uniform for a sigmoid head,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(spec);
        let n = mlp.layers.len();
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let fan_in = layer.in_dim as f64;
            let fan_out = layer.out_dim as f64;
            let bound = if l + 1 == n && mlp.spec.final_activation != Activation::Relu {
                (6.0 / (fan_in + fan_out)).sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            for w in layer.weight.value.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Plain single-vector evaluation without recording.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.bias.value.clone();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &layer.weight.value[o * layer.in_dim..(o + 1) * layer.in_dim];
                *yo += row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            apply_activation(self.spec.activation(l), &mut y);
            x = y;
        }
        Ok(x)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &ParamTensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

pub(crate) fn apply_activation(act: Activation, values: &mut [f64]) {
    match act {
        Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Sigmoid => values.iter_mut().for_each(|v| *v = sigmoid(*v)),
        Activation::None => {}
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable identifier of a network inside [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetId(pub usize);

/// Every learnable network of a model, addressed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    nets: Vec<Mlp>,
    /// Number of optimizer steps taken.
    pub step: u64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelParams {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            nets: Vec::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mlp: Mlp) -> NetId {
        let name = name.into();
        if let Some(pos) = self.names.iter().position(|n| *n == name) {
            self.nets[pos] = mlp;
            return NetId(pos);
        }
        self.names.push(name);
        self.nets.push(mlp);
        NetId(self.nets.len() - 1)
    }

    pub fn id(&self, name: &str) -> Result<NetId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(NetId)
            .ok_or_else(|| Error::MissingNetwork(name.to_string()))
    }

    pub fn net(&self, id: NetId) -> &Mlp {
        &self.nets[id.0]
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut Mlp {
        &mut self.nets[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Mlp> {
        Ok(self.net(self.id(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mlp)> {
        self.names.iter().map(String::as_str).zip(&self.nets)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mlp)> {
        self.names.iter().map(String::as_str).zip(self.nets.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(Mlp::num_params).sum()
    }

    pub fn zero_grad(&mut self) {
        for net in &mut self.nets {
            for t in net.tensors_mut() {
                t.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }

    /// Flat views over every scalar parameter, in a fixed order. Each entry is
    /// `(net, layer, is_bias, index)`.
    pub fn coordinates(&self) -> Vec<ParamCoord> {
        let mut out = Vec::with_capacity(self.num_params());
        for (n, net) in self.nets.iter().enumerate() {
            for (l, layer) in net.layers.iter().enumerate() {
                for i in 0..layer.weight.len() {
                    out.push(ParamCoord {
                        net: n,
                        layer: l,
                        bias: false,
                        index: i,
                    });
                }
                for i in 0..layer.bias.len() {
                    out.push(ParamCoord {
                        net: n,
                        layer: l,
                        bias: true,
                        index: i,
                    });
                }
            }
        }
        out
    }

    pub fn tensor(&self, c: ParamCoord) -> &ParamTensor {
        let layer = &self.nets[c.net].layers[c.layer];
        if c.bias {
            &layer.bias
        } else {
            &layer.weight
        }
    }

    pub fn tensor_mut(&mut self, c: ParamCoord) -> &mut ParamTensor {
        let layer = &mut self.nets[c.net].layers[c.layer];
        if c.bias {
            &mut layer.bias
        } else {
            &mut layer.weight
        }
    }

    pub fn value(&self, c: ParamCoord) -> f64 {
        self.tensor(c).value[c.index]
    }

    pub fn set_value(&mut self, c: ParamCoord, v: f64) {
        self.tensor_mut(c).value[c.index] = v;
    }

    pub fn grad(&self, c: ParamCoord) -> f64 {
        self.tensor(c).grad[c.index]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCoord {
    pub net: usize,
    pub layer: usize,
    pub bias: bool,
    pub index: usize,
}
