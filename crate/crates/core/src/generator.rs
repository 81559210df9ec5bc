//! Reference generators: a small MLP from the joint initial state to one
//! player's reference bundle, with a hand-written reverse pass.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lifted_game::{Player, ReferenceBundle};
use crate::tag_env::{TagEnvSpec, STATE_DIM};

pub const INIT_RANGE: f64 = 0.1;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("layer {layer} has zero width")]
    ZeroWidth { layer: usize },
    #[error("expected input of length {expected}, got {got}")]
    Input { expected: usize, got: usize },
    #[error("cotangent shape does not match the bundle")]
    Cotangent,
    #[error("inconsistent parameters: {0}")]
    Inconsistent(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Tanh,
}

/// Layer sizes and output layout of a generator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GeneratorShape {
    pub player: Player,
    pub hidden: Vec<usize>,
    pub candidates: usize,
    pub reference_dim: usize,
    /// Per-coordinate divisor applied to `(x₁, x₂)` before the first layer.
    pub input_scale: Vec<f64>,
    /// Output bound: references are `scale · tanh(·)` of the last layer.
    pub output_scale: f64,
}

impl GeneratorShape {
    /// Default tag generator producing `candidates` control references.
    pub fn tag(env: &TagEnvSpec, player: Player, candidates: usize) -> Self {
        Self::tag_with_hidden(env, player, candidates, DEFAULT_HIDDEN.to_vec())
    }

    pub fn tag_with_hidden(env: &TagEnvSpec, player: Player, candidates: usize, hidden: Vec<usize>) -> Self {
        let radius = env.arena.radius();
        let mut input_scale = Vec::with_capacity(2 * STATE_DIM);
        for _ in 0..2 {
            input_scale.extend_from_slice(&[radius, radius, env.v_max, env.v_max]);
        }
        Self {
            player,
            hidden,
            candidates,
            reference_dim: env.control_reference_dim(),
            input_scale,
            output_scale: env.u_max,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_scale.len()
    }

    pub fn output_dim(&self) -> usize {
        self.candidates * self.reference_dim
    }

    /// All layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim());
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim());
        w
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if let Some(layer) = self.widths().iter().position(|&w| w == 0) {
            return Err(GeneratorError::ZeroWidth { layer });
        }
        if self.input_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(GeneratorError::Inconsistent("input scales must be positive"));
        }
        if !(self.output_scale > 0.0) || !self.output_scale.is_finite() {
            return Err(GeneratorError::Inconsistent("output scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// MLP parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub shape: GeneratorShape,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl GeneratorParams {
    /// Weights and biases i.i.d. uniform on `[−0.1, 0.1]`.
    pub fn init(shape: GeneratorShape, seed: u64) -> Result<Self, GeneratorError> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = shape.widths();
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-INIT_RANGE..=INIT_RANGE)),
                bias: DVector::from_fn(w[1], |_, _| rng.random_range(-INIT_RANGE..=INIT_RANGE)),
            })
            .collect();
        Ok(Self { shape, activation: Activation::Tanh, layers })
    }

    pub fn zeros(shape: GeneratorShape) -> Result<Self, GeneratorError> {
        shape.validate()?;
        let layers = shape
            .widths()
            .windows(2)
            .map(|w| Layer { weights: DMatrix::zeros(w[1], w[0]), bias: DVector::zeros(w[1]) })
            .collect();
        Ok(Self { shape, activation: Activation::Tanh, layers })
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { weights: l.weights.map(|_| 0.0), bias: l.bias.map(|_| 0.0) })
            .collect();
        Self { shape: self.shape.clone(), activation: self.activation, layers }
    }

    /// Checks layer dimensions against the shape and finiteness.
    pub fn validate(&self) -> Result<(), GeneratorError> {
        self.shape.validate()?;
        let widths = self.shape.widths();
        if self.layers.len() + 1 != widths.len() {
            return Err(GeneratorError::Inconsistent("layer count"));
        }
        for (l, w) in self.layers.iter().zip(widths.windows(2)) {
            if l.weights.shape() != (w[1], w[0]) || l.bias.len() != w[1] {
                return Err(GeneratorError::Inconsistent("layer dimensions do not chain"));
            }
        }
        if !self.is_finite() {
            return Err(GeneratorError::Inconsistent("non-finite parameter"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &GeneratorParams) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weights += &o.weights * alpha;
            l.bias.axpy(alpha, &o.bias, 1.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.layers
                .iter()
                .map(|l| l.weights.norm_squared() + l.bias.norm_squared())
                .sum(),
        )
    }

    /// All parameters, layer by layer: row-major weights then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    /// Inverse of [`Self::to_flat`].
    pub fn from_flat(shape: GeneratorShape, values: &[f64]) -> Result<Self, GeneratorError> {
        let mut params = Self::zeros(shape)?;
        if values.len() != params.n_params() {
            return Err(GeneratorError::Inconsistent("parameter count"));
        }
        let mut it = values.iter().copied();
        for l in &mut params.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    l.weights[(r, c)] = it.next().unwrap_or(0.0);
                }
            }
            for v in l.bias.iter_mut() {
                *v = it.next().unwrap_or(0.0);
            }
        }
        Ok(params)
    }

    fn input(&self, x1: &[f64], x2: &[f64]) -> Result<DVector<f64>, GeneratorError> {
        let expected = self.shape.input_dim();
        let got = x1.len() + x2.len();
        if got != expected {
            return Err(GeneratorError::Input { expected, got });
        }
        Ok(DVector::from_iterator(
            expected,
            x1.iter().chain(x2).zip(&self.shape.input_scale).map(|(x, s)| x / s),
        ))
    }

    /// Pre-activations of every layer, for the reverse pass.
    fn forward_trace(&self, input: DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(input);
        for l in &self.layers {
            let z = &l.weights * acts.last().expect("input pushed") + &l.bias;
            acts.push(z.map(libm::tanh));
            pre.push(z);
        }
        (acts, pre)
    }

    fn to_bundle(&self, out: &DVector<f64>) -> ReferenceBundle {
        let d = self.shape.reference_dim;
        let refs = (0..self.shape.candidates)
            .map(|c| DVector::from_iterator(d, out.rows(c * d, d).iter().map(|v| self.shape.output_scale * v)))
            .collect();
        ReferenceBundle::new(self.shape.player, refs)
    }
}

pub fn init_params(shape: GeneratorShape, seed: u64) -> Result<GeneratorParams, GeneratorError> {
    GeneratorParams::init(shape, seed)
}

/// References `scale · tanh(W_L h + b_L)` with tanh hidden layers.
pub fn generate(theta: &GeneratorParams, x1: &[f64], x2: &[f64]) -> Result<ReferenceBundle, GeneratorError> {
    let input = theta.input(x1, x2)?;
    let (acts, _) = theta.forward_trace(input);
    Ok(theta.to_bundle(acts.last().expect("at least one layer")))
}

/// Reverse pass of [`generate`] for a cotangent on the bundle.
pub fn generate_vjp(
    theta: &GeneratorParams,
    x1: &[f64],
    x2: &[f64],
    bundle_bar: &[DVector<f64>],
) -> Result<GeneratorParams, GeneratorError> {
    let shape = &theta.shape;
    if bundle_bar.len() != shape.candidates || bundle_bar.iter().any(|b| b.len() != shape.reference_dim) {
        return Err(GeneratorError::Cotangent);
    }
    let input = theta.input(x1, x2)?;
    let (acts, _) = theta.forward_trace(input);
    let mut grad = theta.zeros_like();

    // Head: out = s·tanh(z) ⇒ z̄ = s·(1 − tanh²)·ξ̄
    let d = shape.reference_dim;
    let top = acts.last().expect("at least one layer");
    let mut delta = DVector::from_fn(shape.output_dim(), |k, _| {
        let t = top[k];
        shape.output_scale * (1.0 - t * t) * bundle_bar[k / d][k % d]
    });
    for li in (0..theta.layers.len()).rev() {
        let below = &acts[li];
        grad.layers[li].weights.ger(1.0, &delta, below, 0.0);
        grad.layers[li].bias.copy_from(&delta);
        if li == 0 {
            break;
        }
        let back = theta.layers[li].weights.tr_mul(&delta);
        delta = back.zip_map(below, |g, h| g * (1.0 - h * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny_shape(candidates: usize) -> GeneratorShape {
        GeneratorShape {
            player: Player::Pursuer,
            hidden: vec![5, 4],
            candidates,
            reference_dim: 3,
            input_scale: vec![2.0, 2.0, 0.5, 0.5],
            output_scale: 0.7,
        }
    }

    fn cotangent(seed: u64, candidates: usize) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..candidates)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn seeds_and_zero_width() {
        let a = init_params(tiny_shape(2), 3).unwrap();
        assert_eq!(a, init_params(tiny_shape(2), 3).unwrap());
        assert_ne!(a, init_params(tiny_shape(2), 4).unwrap());
        assert!(a.to_flat().iter().all(|v| v.abs() <= INIT_RANGE));
        let mut bad = tiny_shape(2);
        bad.hidden[1] = 0;
        assert_eq!(init_params(bad, 0), Err(GeneratorError::ZeroWidth { layer: 2 }));
        assert!(init_params(tiny_shape(0), 0).is_err());
    }

    #[test]
    fn zero_network_gives_zero_references() {
        let theta = GeneratorParams::zeros(tiny_shape(2)).unwrap();
        let b = generate(&theta, &[1.0, -1.0], &[0.3, 0.2]).unwrap();
        assert!(b.references.iter().all(|r| r.amax() == 0.0));
    }

    #[test]
    fn outputs_are_bounded() {
        let mut theta = init_params(tiny_shape(2), 9).unwrap();
        theta.scale(400.0);
        let b = generate(&theta, &[5.0, -3.0], &[9.0, 1.0]).unwrap();
        assert!(b.references.iter().all(|r| r.amax() <= 0.7));
    }

    #[test]
    fn flat_roundtrip() {
        let theta = init_params(tiny_shape(3), 1).unwrap();
        let back = GeneratorParams::from_flat(theta.shape.clone(), &theta.to_flat()).unwrap();
        assert_eq!(theta, back);
        assert!(GeneratorParams::from_flat(theta.shape.clone(), &[0.0; 3]).is_err());
    }

    #[test]
    fn input_length_checked() {
        let theta = init_params(tiny_shape(1), 1).unwrap();
        assert_eq!(generate(&theta, &[1.0], &[1.0]), Err(GeneratorError::Input { expected: 4, got: 2 }));
        assert_eq!(generate_vjp(&theta, &[0.0; 2], &[0.0; 2], &[]), Err(GeneratorError::Cotangent));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for seed in 0..5 {
            let mut theta = init_params(tiny_shape(2), seed).unwrap();
            // Larger weights so the tanh layers are not nearly linear.
            theta.scale(8.0);
            let (x1, x2) = ([0.4, -1.1], [0.3, -0.2]);
            let bar = cotangent(seed + 100, 2);
            let grad = generate_vjp(&theta, &x1, &x2, &bar).unwrap().to_flat();
            let objective = |flat: &[f64]| {
                let p = GeneratorParams::from_flat(theta.shape.clone(), flat).unwrap();
                let b = generate(&p, &x1, &x2).unwrap();
                b.references.iter().zip(&bar).map(|(r, c)| r.dot(c)).sum::<f64>()
            };
            let base = theta.to_flat();
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..base.len() {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                num += (fd - grad[k]).powi(2);
                den += fd * fd;
            }
            let rel = libm::sqrt(num / den);
            assert!(rel <= 1e-6, "seed {seed}: relative error {rel}");
        }
    }

    #[test]
    fn vjp_is_linear_in_cotangent() {
        let theta = init_params(tiny_shape(2), 2).unwrap();
        let (x1, x2) = ([0.1, 0.2], [-0.3, 0.4]);
        let a = cotangent(1, 2);
        let b = cotangent(2, 2);
        let sum: Vec<_> = a.iter().zip(&b).map(|(u, v)| u * 2.0 + v).collect();
        let ga = generate_vjp(&theta, &x1, &x2, &a).unwrap();
        let gb = generate_vjp(&theta, &x1, &x2, &b).unwrap();
        let mut expect = gb.clone();
        expect.axpy(2.0, &ga);
        let got = generate_vjp(&theta, &x1, &x2, &sum).unwrap();
        let mut diff = got.clone();
        diff.axpy(-1.0, &expect);
        assert!(diff.norm() <= 1e-12 * got.norm().max(1.0));
        let zero = vec![DVector::zeros(3); 2];
        assert_eq!(generate_vjp(&theta, &x1, &x2, &zero).unwrap().norm(), 0.0);
    }
}
