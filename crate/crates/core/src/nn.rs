//! Small fully connected networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector. Layers are stored in order
//! (input -> hidden_1, hidden_1 -> hidden_2, ..., hidden_L -> output); each layer
//! contributes its weight matrix in row-major `(fan_out, fan_in)` order followed
//! by its `fan_out` biases. Hidden layers apply `tanh`, the output layer is
//! affine.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::seed::SeedTree;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

/// Location of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim: 1,
            activation: Activation::Tanh,
        }
    }

    /// 2 -> (10 x 20) -> 1 tanh network.
    pub fn reference_default() -> Self {
        Self::new(2, 20, 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidSpec(
                "hidden_layers and hidden_width must be positive".into(),
            ));
        }
        if self.output_dim != 1 {
            return Err(Error::InvalidSpec(format!(
                "only scalar-output networks are supported, got output_dim {}",
                self.output_dim
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 2);
        dims.push(self.input_dim);
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(self.output_dim);

        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let slot = LayerSlot {
                    fan_in,
                    fan_out,
                    weights: offset,
                    biases: offset + fan_in * fan_out,
                };
                offset += (fan_in + 1) * fan_out;
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| (l.fan_in + 1) * l.fan_out)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    spec: MlpSpec,
    layers: Vec<LayerSlot>,
    params: Vec<T>,
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let mut params = vec![T::zero(); spec.param_count()];
        let mut rng = SeedTree::new(seed).rng();
        for layer in &layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite Glorot limit");
            for w in &mut params[layer.weights..layer.biases] {
                *w = T::lit(dist.sample(&mut rng));
            }
        }
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        Self::from_params(spec, vec![T::zero(); spec.param_count()])
    }

    pub fn from_params(spec: MlpSpec, params: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network parameter".into()));
        }
        Ok(Self {
            spec,
            layers: spec.layers(),
            params,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<T> {
        self.params
    }

    pub fn layer_slots(&self) -> &[LayerSlot] {
        &self.layers
    }

    /// Index of the output bias in the flat vector.
    pub fn output_bias_index(&self) -> usize {
        self.layers.last().expect("at least one layer").biases
    }

    /// Sum of absolute output weights plus the absolute output bias; bounds
    /// `|forward(x)|` for every input because hidden units lie in [-1, 1].
    pub fn output_bound(&self) -> T {
        let last = self.layers.last().expect("at least one layer");
        let w: T = self.params[last.weights..last.biases]
            .iter()
            .map(|w| w.abs())
            .sum();
        w + self.params[last.biases].abs()
    }

    pub fn workspace(&self) -> MlpWorkspace<T> {
        MlpWorkspace::new(&self.spec)
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<T> {
        self.check_input(input)?;
        let mut ws = self.workspace();
        Ok(self.eval(input, &mut ws))
    }

    pub fn grad_params(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut ws = self.workspace();
        self.eval(input, &mut ws);
        let mut grad = vec![T::zero(); self.params.len()];
        self.backward(&mut ws, T::one(), Some(&mut grad), None);
        Ok(grad)
    }

    pub fn grad_input(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut ws = self.workspace();
        self.eval(input, &mut ws);
        let mut grad = vec![T::zero(); self.spec.input_dim];
        self.backward(&mut ws, T::one(), None, Some(&mut grad));
        Ok(grad)
    }

    /// Forward pass that keeps the activations in `ws` for a following
    /// [`backward`](Self::backward). `input.len()` must equal `input_dim`.
    pub fn eval(&self, input: &[T], ws: &mut MlpWorkspace<T>) -> T {
        debug_assert_eq!(input.len(), self.spec.input_dim);
        ws.acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            let w = &self.params[layer.weights..layer.biases];
            let b = &self.params[layer.biases..layer.biases + layer.fan_out];
            for (j, yj) in y.iter_mut().enumerate() {
                let row = &w[j * layer.fan_in..(j + 1) * layer.fan_in];
                let mut acc = b[j];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc = acc + *wi * *xi;
                }
                *yj = if l == last { acc } else { acc.tanh() };
            }
        }
        ws.acts[last + 1][0]
    }

    /// Reverse pass for the activations stored by the last [`eval`](Self::eval).
    ///
    /// Adds `scale * d(out)/d(param)` into `dparams` and writes `d(out)/d(input)`
    /// into `dinput` (overwriting it).
    pub fn backward(
        &self,
        ws: &mut MlpWorkspace<T>,
        scale: T,
        mut dparams: Option<&mut [T]>,
        dinput: Option<&mut [T]>,
    ) {
        let MlpWorkspace { acts, delta, prev } = ws;
        delta.clear();
        delta.push(T::one());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[l];
            if let Some(g) = dparams.as_deref_mut() {
                for (j, dj) in delta.iter().enumerate() {
                    let s = scale * *dj;
                    let row = layer.weights + j * layer.fan_in;
                    for (gi, xi) in g[row..row + layer.fan_in].iter_mut().zip(x.iter()) {
                        *gi = *gi + s * *xi;
                    }
                    g[layer.biases + j] = g[layer.biases + j] + s;
                }
            }
            if l == 0 && dinput.is_none() {
                break;
            }
            prev.clear();
            prev.resize(layer.fan_in, T::zero());
            let w = &self.params[layer.weights..layer.biases];
            for (j, dj) in delta.iter().enumerate() {
                let row = &w[j * layer.fan_in..(j + 1) * layer.fan_in];
                for (pi, wi) in prev.iter_mut().zip(row.iter()) {
                    *pi = *pi + *wi * *dj;
                }
            }
            if l > 0 {
                // x holds tanh outputs of the previous layer.
                for (pi, xi) in prev.iter_mut().zip(x.iter()) {
                    *pi = *pi * (T::one() - *xi * *xi);
                }
            }
            std::mem::swap(delta, prev);
        }
        if let Some(gin) = dinput {
            gin.copy_from_slice(delta);
        }
    }
}

/// Scratch buffers for [`MlpModel::eval`] / [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct MlpWorkspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    prev: Vec<T>,
}

impl<T: Scalar> MlpWorkspace<T> {
    pub fn new(spec: &MlpSpec) -> Self {
        let mut acts = vec![vec![T::zero(); spec.input_dim]];
        for _ in 0..spec.hidden_layers {
            acts.push(vec![T::zero(); spec.hidden_width]);
        }
        acts.push(vec![T::zero(); spec.output_dim]);
        Self {
            acts,
            delta: Vec::with_capacity(spec.hidden_width.max(spec.input_dim)),
            prev: Vec::with_capacity(spec.hidden_width.max(spec.input_dim)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deep() -> MlpModel<f64> {
        MlpModel::init(MlpSpec::new(2, 4, 6), 11).unwrap()
    }

    #[test]
    fn reference_default_param_count() {
        assert_eq!(MlpSpec::reference_default().param_count(), 2131);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = MlpSpec::new(2, 1, 10);
        let a = MlpModel::<f64>::init(spec, 7).unwrap();
        let b = MlpModel::<f64>::init(spec, 7).unwrap();
        assert_eq!(a, b);
        for layer in a.layer_slots() {
            assert!(a.params()[layer.biases..layer.biases + layer.fan_out]
                .iter()
                .all(|&v| v == 0.0));
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            assert!(a.params()[layer.weights..layer.biases]
                .iter()
                .all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = MlpModel::<f64>::zeros(MlpSpec::new(2, 3, 5)).unwrap();
        assert_eq!(m.forward(&[1.3, -7.0]).unwrap(), 0.0);
        assert_eq!(m.grad_input(&[1.3, -7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn output_bias_passes_through() {
        let mut m = MlpModel::<f64>::zeros(MlpSpec::new(2, 2, 3)).unwrap();
        let ob = m.output_bias_index();
        m.params_mut()[ob] = 3.5;
        assert_eq!(m.forward(&[0.2, 9.0]).unwrap(), 3.5);
    }

    #[test]
    fn unit_width_closed_form() {
        let spec = MlpSpec::new(2, 1, 1);
        // w1 = (1, 1), b1 = 0, w2 = 1, b2 = 0
        let m = MlpModel::from_params(spec, vec![1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = m.forward(&[0.5, 0.5]).unwrap();
        assert!((y - 1.0f64.tanh()).abs() < 1e-15);
        assert!((y - 0.76159).abs() < 1e-5);
    }

    #[test]
    fn output_bias_gradient_is_one() {
        let m = deep();
        let g = m.grad_params(&[0.3, -1.2]).unwrap();
        assert_eq!(g[m.output_bias_index()], 1.0);
    }

    #[test]
    fn zero_weights_give_zero_hidden_gradients() {
        let m = MlpModel::<f64>::zeros(MlpSpec::new(2, 3, 4)).unwrap();
        let g = m.grad_params(&[0.5, 0.5]).unwrap();
        let last = *m.layer_slots().last().unwrap();
        assert!(g[..last.weights].iter().all(|&v| v == 0.0));
        assert_eq!(g[last.biases], 1.0);
    }

    #[test]
    fn linear_gradient_in_input() {
        // At the origin tanh' = 1, so d(out)/dx = w2 * w1 exactly.
        let spec = MlpSpec::new(2, 1, 1);
        let m = MlpModel::from_params(spec, vec![0.25, -0.5, 0.0, 2.0, 0.1]).unwrap();
        let g = m.grad_input(&[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.5, -1.0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = deep();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(m.grad_params(&[1.0, 2.0, 3.0]).is_err());
        assert!(m.grad_input(&[]).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(2, 0, 4).validate().is_err());
        assert!(MlpSpec::new(2, 3, 0).validate().is_err());
        assert!(MlpSpec::new(0, 3, 4).validate().is_err());
        assert!(MlpModel::<f64>::from_params(MlpSpec::new(2, 1, 1), vec![0.0; 3]).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let m = MlpModel::<f32>::init(MlpSpec::new(2, 3, 4), 3).unwrap();
        let y = m.forward(&[0.1, 0.2]).unwrap();
        let m64 = MlpModel::<f64>::from_params(
            *m.spec(),
            m.params().iter().map(|&p| p as f64).collect(),
        )
        .unwrap();
        assert!((y as f64 - m64.forward(&[0.1, 0.2]).unwrap()).abs() < 1e-5);
    }
}
