//! Dense multilayer perceptron: relu hidden layers, scaled tanh output.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// One affine layer; `weights` is row-major `rows × cols` (`rows` outputs).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    pub fn weight(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    output_scale: f64,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least an input and an output width, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::invalid(format!(
            "layer widths must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Number of trainable scalars: `Σ sizes[i+1]·(sizes[i] + 1)`.
pub fn param_count(layer_sizes: &[usize]) -> Result<usize> {
    validate_sizes(layer_sizes)?;
    Ok(layer_sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum())
}

impl MlpParams {
    /// Uniform `±1/√fan_in` weights, zero biases, deterministic per seed.
    pub fn init(layer_sizes: &[usize], output_scale: f64, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, output_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let bound = 1.0 / libm::sqrt(layer.cols as f64);
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut layer.weights {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn zeros(layer_sizes: &[usize], output_scale: f64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(Error::invalid(format!(
                "output_scale must be positive and finite, got {output_scale}"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[1], w[0]))
            .collect();
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            output_scale,
        })
    }

    /// Assembles parameters from explicit layers, checking every shape.
    pub fn from_layers(layer_sizes: &[usize], layers: Vec<Layer>, output_scale: f64) -> Result<Self> {
        let shell = Self::zeros(layer_sizes, output_scale)?;
        if layers.len() != shell.layers.len() {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                shell.layers.len(),
                layers.len()
            )));
        }
        for (i, (got, want)) in layers.iter().zip(&shell.layers).enumerate() {
            if got.rows != want.rows
                || got.cols != want.cols
                || got.weights.len() != want.rows * want.cols
                || got.biases.len() != want.rows
            {
                return Err(Error::invalid(format!(
                    "layer {i}: expected {}x{} weights and {} biases",
                    want.rows, want.cols, want.rows
                )));
            }
            if got.weights.iter().chain(&got.biases).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: non-finite value")));
            }
        }
        Ok(MlpParams {
            layers,
            ..shell
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of stored scalars (enumerated, not computed from the formula).
    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All scalars in canonical order: per layer, weights row-major then biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn get(&self, mut index: usize) -> Option<f64> {
        for l in &self.layers {
            if index < l.weights.len() {
                return Some(l.weights[index]);
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return Some(l.biases[index]);
            }
            index -= l.biases.len();
        }
        None
    }

    pub fn get_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return Some(&mut l.weights[index]);
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return Some(&mut l.biases[index]);
            }
            index -= l.biases.len();
        }
        None
    }

    /// Zero-valued parameters with the same architecture.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes, self.output_scale).expect("shape already validated")
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    /// `output_scale · tanh(W_L(… relu(W_1 x + b_1) …) + b_L)`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                input.len()
            )));
        }
        let mut act = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let next: Vec<f64> = (0..layer.rows)
                .map(|r| {
                    let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    let z: f64 = row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>()
                        + layer.biases[r];
                    if i == last {
                        self.output_scale * libm::tanh(z)
                    } else if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                })
                .collect();
            act = next;
        }
        Ok(act)
    }
}

/// Network parameters bound as leaves of a tape.
pub struct TapeMlp<'t> {
    tape: &'t Tape,
    params: &'t MlpParams,
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> TapeMlp<'t> {
    pub fn bind(tape: &'t Tape, params: &'t MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| (tape.vector(&l.weights), tape.vector(&l.biases)))
            .collect();
        TapeMlp {
            tape,
            params,
            layers,
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn params(&self) -> &'t MlpParams {
        self.params
    }

    /// `(weights, biases)` leaf nodes per layer.
    pub fn layer_vars(&self) -> &[(Var<'t>, Var<'t>)] {
        &self.layers
    }

    /// Differentiable forward pass; returns the output vector node.
    pub fn forward(&self, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let width: usize = inputs.iter().map(|v| v.len()).sum();
        if width != self.params.input_width() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {width}",
                self.params.input_width()
            )));
        }
        let mut act = self.tape.concat(inputs);
        let last = self.layers.len() - 1;
        for (i, (&(w, b), shape)) in self.layers.iter().zip(&self.params.layers).enumerate() {
            let z = w.matvec(act, shape.rows, shape.cols)? + b;
            act = if i == last {
                z.tanh().scale(self.params.output_scale)
            } else {
                z.relu()
            };
        }
        Ok(act)
    }

    /// Gathers the adjoints of the parameter leaves into parameter shape.
    pub fn collect(&self, grads: &Gradients) -> MlpParams {
        let mut out = self.params.zeros_like();
        for ((w, b), layer) in self.layers.iter().zip(&mut out.layers) {
            layer.weights.copy_from_slice(grads.wrt(*w));
            layer.biases.copy_from_slice(grads.wrt(*b));
        }
        out
    }
}

/// Pins a closure to the higher-ranked signature the gradient helpers expect.
///
/// Closures returning a tape variable need this to be accepted by
/// [`gradient_check`] and friends.
pub fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&TapeMlp<'t>) -> Result<Var<'t>>,
{
    f
}

/// Value and exact reverse-mode gradient of `f` at `params`.
pub fn gradient<F>(params: &MlpParams, f: F) -> Result<(f64, MlpParams)>
where
    F: for<'t> FnOnce(&TapeMlp<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let net = TapeMlp::bind(&tape, params);
    let out = f(&net)?;
    if out.len() != 1 {
        return Err(Error::invalid("gradient needs a scalar-valued function"));
    }
    let grads = tape.backward(out)?;
    Ok((out.value(), net.collect(&grads)))
}

/// Evaluates `f` at `params` without keeping the tape around.
pub fn evaluate<F>(params: &MlpParams, f: &F) -> Result<f64>
where
    F: for<'t> Fn(&TapeMlp<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let net = TapeMlp::bind(&tape, params);
    let out = f(&net)?;
    let v = out.value();
    if !v.is_finite() {
        let at = tape
            .first_non_finite()
            .map(|(id, op)| format!(" (first at `{op}`, node {id})"))
            .unwrap_or_default();
        return Err(Error::numeric(format!("non-finite function value{at}")));
    }
    Ok(v)
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `max_i |a_i − n_i| / max(1, |a_i|, |n_i|)`.
    pub max_relative_error: f64,
    /// Canonical index of the parameter attaining the maximum.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `f` at `params`.
pub fn compare_with_finite_differences<F>(
    analytic: &MlpParams,
    f: &F,
    params: &MlpParams,
    epsilon: f64,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&TapeMlp<'t>) -> Result<Var<'t>>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1e-3], got {epsilon}"
        )));
    }
    if !analytic.same_shape(params) {
        return Err(Error::invalid("gradient and parameters differ in shape"));
    }
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = params.get(i).unwrap();
        *probe.get_mut(i).unwrap() = orig + epsilon;
        let plus = evaluate(&probe, f)?;
        *probe.get_mut(i).unwrap() = orig - epsilon;
        let minus = evaluate(&probe, f)?;
        *probe.get_mut(i).unwrap() = orig;
        let n = (plus - minus) / (2.0 * epsilon);
        let rel = libm::fabs(a - n) / 1f64.max(libm::fabs(a)).max(libm::fabs(n));
        if rel > report.max_relative_error || i == 0 {
            report = GradCheck {
                max_relative_error: rel,
                worst_index: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    Ok(report)
}

/// Reverse-mode gradient of `f` checked against central differences.
pub fn gradient_check<F>(f: &F, params: &MlpParams, epsilon: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&TapeMlp<'t>) -> Result<Var<'t>>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1e-3], got {epsilon}"
        )));
    }
    let (_, analytic) = gradient(params, f)?;
    compare_with_finite_differences(&analytic, f, params, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(param_count(&[5, 50, 50, 50, 1]).unwrap(), 5451);
        assert_eq!(param_count(&[5, 50, 50, 1]).unwrap(), 2901);
        assert_eq!(param_count(&[1, 1]).unwrap(), 2);
        assert!(param_count(&[]).is_err());
        assert!(param_count(&[3]).is_err());
        assert!(param_count(&[3, 0, 1]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpParams::init(&[5, 50, 50, 50, 1], 10.0, 7).unwrap();
        let b = MlpParams::init(&[5, 50, 50, 50, 1], 10.0, 7).unwrap();
        let c = MlpParams::init(&[5, 50, 50, 50, 1], 10.0, 8).unwrap();
        assert_eq!(a.len(), 5451);
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), c.to_flat());
        for l in a.layers() {
            let bound = 1.0 / (l.cols as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(MlpParams::init(&[], 1.0, 0).is_err());
        assert!(MlpParams::init(&[2, 0, 1], 1.0, 0).is_err());
        assert!(MlpParams::init(&[2, 1], 0.0, 0).is_err());
    }

    #[test]
    fn forward_single_unit() {
        let mut p = MlpParams::zeros(&[1, 1], 1.0).unwrap();
        assert_eq!(p.forward(&[0.5]).unwrap(), vec![0.0]);
        *p.get_mut(0).unwrap() = 1.0;
        let out = p.forward(&[0.5]).unwrap()[0];
        assert!((out - 0.46211715726000974).abs() < 1e-15);
        assert!(p.forward(&[0.5, 1.0]).is_err());
    }

    #[test]
    fn single_unit_gradient() {
        let mut p = MlpParams::zeros(&[1, 1], 1.0).unwrap();
        *p.get_mut(0).unwrap() = 1.0;
        let (v, g) = gradient(&p, |net| {
            let x = net.tape().scalar(0.5);
            Ok(net.forward(&[x])?.index(0))
        })
        .unwrap();
        let t = 0.5f64.tanh();
        assert!((v - t).abs() < 1e-15);
        // d/dw = x·(1 − tanh²), d/db = 1 − tanh²
        assert!((g.get(0).unwrap() - 0.5 * (1.0 - t * t)).abs() < 1e-15);
        assert!((g.get(0).unwrap() - 0.39322386648296376).abs() < 1e-12);
        assert!((g.get(1).unwrap() - (1.0 - t * t)).abs() < 1e-15);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let p = MlpParams::init(&[3, 7, 4, 2], 2.5, 3).unwrap();
        let input = [0.3, -1.2, 0.8];
        let plain = p.forward(&input).unwrap();
        let tape = Tape::new();
        let net = TapeMlp::bind(&tape, &p);
        let xs: Vec<_> = input.iter().map(|&v| tape.scalar(v)).collect();
        let taped = net.forward(&xs).unwrap().values();
        assert_eq!(plain, taped);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let p = MlpParams::init(&[2, 3, 1], 1.0, 11).unwrap();
        let (_, g) = gradient(&p, |net| {
            let mut terms = Vec::new();
            for &(w, b) in net.layer_vars() {
                terms.push(w.square().sum());
                terms.push(b.square().sum());
            }
            Ok(terms.into_iter().reduce(|a, b| a + b).unwrap())
        })
        .unwrap();
        for (gi, pi) in g.iter().zip(p.iter()) {
            assert_eq!(*gi, 2.0 * pi);
        }
    }

    #[test]
    fn gradient_check_epsilon_bounds() {
        let p = MlpParams::init(&[1, 1], 1.0, 0).unwrap();
        let f = scalar_fn(|net| {
            let x = net.tape().scalar(0.5);
            Ok(net.forward(&[x])?.index(0))
        });
        assert!(matches!(
            gradient_check(&f, &p, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(gradient_check(&f, &p, 1e-2).is_err());
        assert!(gradient_check(&f, &p, 1e-6).unwrap().max_relative_error < 1e-8);
    }

    #[test]
    fn quadratic_check_is_tight() {
        let p = MlpParams::init(&[3, 4, 2], 1.0, 5).unwrap();
        let f = scalar_fn(|net| {
            let mut acc = net.tape().scalar(0.0);
            for &(w, b) in net.layer_vars() {
                acc = acc + w.square().sum().scale(0.5) + (b * b).sum();
            }
            Ok(acc)
        });
        let r = gradient_check(&f, &p, 1e-4).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let p = MlpParams::init(&[2, 3, 1], 1.0, 2).unwrap();
        let f = scalar_fn(|net| {
            let xs = [net.tape().scalar(0.4), net.tape().scalar(-0.7)];
            Ok(net.forward(&xs)?.index(0).square())
        });
        let (_, mut g) = gradient(&p, &f).unwrap();
        *g.get_mut(4).unwrap() += 0.5;
        let r = compare_with_finite_differences(&g, &f, &p, 1e-6).unwrap();
        assert_eq!(r.worst_index, 4);
        assert!(r.max_relative_error > 0.1);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let p = MlpParams::init(&[1, 1], 1.0, 0).unwrap();
        let err = gradient(&p, |net| {
            let x = net.tape().scalar(0.0);
            Ok(x.recip_scaled(1.0) + net.forward(&[x])?.index(0))
        })
        .unwrap_err();
        match err {
            Error::NumericFailure(m) => assert!(m.contains("recip"), "{m}"),
            e => panic!("unexpected {e:?}"),
        }
    }
}
