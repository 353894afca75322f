use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of direction classes, ordered `[Receives, Gives]`.
pub const NUM_DIRECTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize, embedding_dim: usize, hidden_dim: usize) -> Result<Self> {
        let dims = ModelDims {
            feature_dim,
            embedding_dim,
            hidden_dim,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("model dims must be > 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Input,
    Forget,
    Candidate,
    Output,
}

impl Gate {
    fn code(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Candidate => 'g',
            Gate::Output => 'o',
        }
    }
}

/// Order of the four gate blocks inside the stacked LSTM matrices.
///
/// The default is `(input, forget, candidate, output)`; any permutation
/// describes the same function once the rows are permuted accordingly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateLayout([Gate; 4]);

impl Default for GateLayout {
    fn default() -> Self {
        GateLayout([Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output])
    }
}

impl GateLayout {
    pub fn new(order: [Gate; 4]) -> Result<Self> {
        for gate in [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output] {
            if !order.contains(&gate) {
                return Err(Error::InvalidArgument(format!("gate layout misses {gate:?}")));
            }
        }
        Ok(GateLayout(order))
    }

    /// Block index of `gate`.
    pub fn slot(&self, gate: Gate) -> usize {
        self.0.iter().position(|&g| g == gate).expect("layout is a permutation")
    }

    pub fn order(&self) -> [Gate; 4] {
        self.0
    }

    pub fn code(&self) -> String {
        self.0.iter().map(|g| g.code()).collect()
    }

    pub fn parse(code: &str) -> Result<Self> {
        let gates: Vec<Gate> = code
            .chars()
            .map(|c| match c {
                'i' => Ok(Gate::Input),
                'f' => Ok(Gate::Forget),
                'g' => Ok(Gate::Candidate),
                'o' => Ok(Gate::Output),
                other => Err(Error::InvalidArgument(format!("unknown gate code {other:?}"))),
            })
            .collect::<Result<_>>()?;
        let order: [Gate; 4] = gates
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("gate layout {code:?} needs 4 gates")))?;
        GateLayout::new(order)
    }
}

/// Optimizer parameter group of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// The feature projection (stands in for the backbone group).
    Projection,
    /// LSTM and both heads.
    Temporal,
}

/// Every trainable tensor. Matrices are row-major.
///
/// Also used as the gradient container, with identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub gate_layout: GateLayout,
    /// `D x F`
    pub proj_weight: Vec<f64>,
    /// `D`
    pub proj_bias: Vec<f64>,
    /// `4H x D`, gate blocks in `gate_layout` order
    pub lstm_input_weight: Vec<f64>,
    /// `4H x H`
    pub lstm_recurrent_weight: Vec<f64>,
    /// `4H`
    pub lstm_bias: Vec<f64>,
    /// `1 x H`
    pub det_weight: Vec<f64>,
    /// `1`
    pub det_bias: Vec<f64>,
    /// `2 x H`
    pub dir_weight: Vec<f64>,
    /// `2`
    pub dir_bias: Vec<f64>,
}

/// Tensor names in checkpoint order.
pub const FIELD_ORDER: [&str; 9] = [
    "proj_weight",
    "proj_bias",
    "lstm_input_weight",
    "lstm_recurrent_weight",
    "lstm_bias",
    "det_weight",
    "det_bias",
    "dir_weight",
    "dir_bias",
];

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let (f, d, h) = (dims.feature_dim, dims.embedding_dim, dims.hidden_dim);
        ModelParams {
            dims,
            gate_layout: GateLayout::default(),
            proj_weight: vec![0.0; d * f],
            proj_bias: vec![0.0; d],
            lstm_input_weight: vec![0.0; 4 * h * d],
            lstm_recurrent_weight: vec![0.0; 4 * h * h],
            lstm_bias: vec![0.0; 4 * h],
            det_weight: vec![0.0; h],
            det_bias: vec![0.0; 1],
            dir_weight: vec![0.0; NUM_DIRECTIONS * h],
            dir_bias: vec![0.0; NUM_DIRECTIONS],
        }
    }

    /// Zero tensor set shaped like `self`, same gate layout.
    pub fn zeros_like(&self) -> Self {
        let mut out = ModelParams::zeros(self.dims);
        out.gate_layout = self.gate_layout;
        out
    }

    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except the
    /// forget-gate bias, which is 1.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::zeros(dims);
        let mut fill = |buf: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in buf.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&mut params.proj_weight, dims.feature_dim);
        fill(&mut params.lstm_input_weight, dims.embedding_dim);
        fill(&mut params.lstm_recurrent_weight, dims.hidden_dim);
        fill(&mut params.det_weight, dims.hidden_dim);
        fill(&mut params.dir_weight, dims.hidden_dim);
        let h = dims.hidden_dim;
        let forget = params.gate_layout.slot(Gate::Forget);
        params.lstm_bias[forget * h..(forget + 1) * h].fill(1.0);
        Ok(params)
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 9] {
        [
            (FIELD_ORDER[0], &self.proj_weight),
            (FIELD_ORDER[1], &self.proj_bias),
            (FIELD_ORDER[2], &self.lstm_input_weight),
            (FIELD_ORDER[3], &self.lstm_recurrent_weight),
            (FIELD_ORDER[4], &self.lstm_bias),
            (FIELD_ORDER[5], &self.det_weight),
            (FIELD_ORDER[6], &self.det_bias),
            (FIELD_ORDER[7], &self.dir_weight),
            (FIELD_ORDER[8], &self.dir_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 9] {
        [
            (FIELD_ORDER[0], &mut self.proj_weight),
            (FIELD_ORDER[1], &mut self.proj_bias),
            (FIELD_ORDER[2], &mut self.lstm_input_weight),
            (FIELD_ORDER[3], &mut self.lstm_recurrent_weight),
            (FIELD_ORDER[4], &mut self.lstm_bias),
            (FIELD_ORDER[5], &mut self.det_weight),
            (FIELD_ORDER[6], &mut self.det_bias),
            (FIELD_ORDER[7], &mut self.dir_weight),
            (FIELD_ORDER[8], &mut self.dir_bias),
        ]
    }

    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("proj_") {
            ParamGroup::Projection
        } else {
            ParamGroup::Temporal
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All values in [`FIELD_ORDER`].
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn from_flat(dims: ModelDims, gate_layout: GateLayout, values: &[f64]) -> Result<Self> {
        let mut params = ModelParams::zeros(dims);
        params.gate_layout = gate_layout;
        if values.len() != params.num_values() {
            return Err(Error::Shape(format!(
                "expected {} parameter values, got {}",
                params.num_values(),
                values.len()
            )));
        }
        let mut offset = 0;
        for (_, tensor) in params.tensors_mut() {
            let len = tensor.len();
            tensor.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        }
        Ok(params)
    }

    /// Tensor lengths agree with `dims`.
    pub fn check_shapes(&self) -> Result<()> {
        let expected = ModelParams::zeros(self.dims);
        for ((name, have), (_, want)) in self.tensors().iter().zip(expected.tensors().iter()) {
            if have.len() != want.len() {
                return Err(Error::Shape(format!("{name}: expected {} values, got {}", want.len(), have.len())));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Sum of squares over every tensor.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, tensor) in self.tensors_mut() {
            tensor.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`, shapes assumed equal.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    /// Same function, LSTM rows re-stacked into `layout`.
    pub fn with_gate_layout(&self, layout: GateLayout) -> ModelParams {
        let h = self.dims.hidden_dim;
        let d = self.dims.embedding_dim;
        let mut out = self.clone();
        out.gate_layout = layout;
        for gate in layout.order() {
            let from = self.gate_layout.slot(gate);
            let to = layout.slot(gate);
            out.lstm_input_weight[to * h * d..(to + 1) * h * d]
                .copy_from_slice(&self.lstm_input_weight[from * h * d..(from + 1) * h * d]);
            out.lstm_recurrent_weight[to * h * h..(to + 1) * h * h]
                .copy_from_slice(&self.lstm_recurrent_weight[from * h * h..(from + 1) * h * h]);
            out.lstm_bias[to * h..(to + 1) * h].copy_from_slice(&self.lstm_bias[from * h..(from + 1) * h]);
        }
        out
    }
}
