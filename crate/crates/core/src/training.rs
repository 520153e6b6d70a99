//! Fitting the force network and the baseline friction factors.
//!
//! Both models are scored with the same one-step transition loss: predict
//! the next sample with RK4 from the measured state and control, then take
//! weighted squared residuals, with the pole angle compared through its
//! `(cos φ, sin φ)` embedding.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datagen::Dataset;
use crate::diff::{MlpParams, Tape, TapeMlp};
use crate::dynamics::{ForceModel, Hybrid, InputMode, PhysicalParams, PureOde, State};
use crate::error::{Error, Result};
use crate::integrator::step_model;
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// Per-coordinate weights of the transition loss.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    /// `[x, φ]`; the angle weight applies in the embedded space.
    pub q: [f64; 2],
    /// `[ẋ, φ̇]`.
    pub q_dot: [f64; 2],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            q: [1.0, 1.0],
            q_dot: [1.0, 1.0],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.q[0], self.q[1], self.q_dot[0], self.q_dot[1]];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(format!("loss weights must be non-negative: {self:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            q: self.q.map(|w| w * c),
            q_dot: self.q_dot.map(|w| w * c),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Shuffle seed. Not read from config files; callers derive it.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Prediction steps per loss term.
    pub horizon: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 60,
            seed: 0,
            loss_weights: LossWeights::default(),
            horizon: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        self.loss_weights.validate()
    }
}

/// A measured transition: state and control, then the state one step later.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: State,
    pub u: f64,
    pub next: State,
}

/// Weighted squared residual between a prediction and a measurement.
///
/// Angles enter through `(cos φ, sin φ)` of the wrapped angle, so adding
/// `2πk` to either side leaves the value unchanged.
pub fn residual<S: Scalar>(pred: &State<S>, target: &State, w: &LossWeights) -> S {
    let phi_t = crate::scalar::wrap_angle(target.phi);
    let phi_p = pred.phi.wrap_angle();
    let dx = pred.x - target.x;
    let dc = phi_p.cos() - libm::cos(phi_t);
    let ds = phi_p.sin() - libm::sin(phi_t);
    let dxd = pred.x_dot - target.x_dot;
    let dpd = pred.phi_dot - target.phi_dot;
    dx.square() * w.q[0]
        + (dc.square() + ds.square()) * w.q[1]
        + dxd.square() * w.q_dot[0]
        + dpd.square() * w.q_dot[1]
}

/// Mean one-step loss of `model` over `batch`.
pub fn step_loss<S: Scalar, M: ForceModel<S> + ?Sized>(
    ctx: S::Context,
    model: &M,
    batch: &[Transition],
    w: &LossWeights,
    h: f64,
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let mut total = S::constant(ctx, 0.0);
    for (i, tr) in batch.iter().enumerate() {
        let pred = step_model(model, &tr.state.lift::<S>(ctx), tr.u, h)
            .map_err(|e| e.context(format_args!("sample {i}")))?;
        total = total + residual(&pred, &tr.next, w);
    }
    Ok(total / batch.len() as f64)
}

/// Loss of `horizon`-step predictions started at each index in `starts`,
/// averaged over starts and steps.
pub fn segment_loss<S: Scalar, M: ForceModel<S> + ?Sized>(
    ctx: S::Context,
    model: &M,
    states: &[State],
    controls: &[f64],
    starts: &[usize],
    horizon: usize,
    w: &LossWeights,
    h: f64,
) -> Result<S> {
    if starts.is_empty() || horizon == 0 {
        return Err(Error::invalid("loss of an empty batch"));
    }
    let mut total = S::constant(ctx, 0.0);
    for &n in starts {
        if n + horizon >= states.len() || n + horizon > controls.len() {
            return Err(Error::invalid(format!(
                "segment at {n} with horizon {horizon} runs past the data"
            )));
        }
        let mut pred = states[n].lift::<S>(ctx);
        for k in 0..horizon {
            pred = step_model(model, &pred, controls[n + k], h)
                .map_err(|e| e.context(format_args!("sample {n}, step {k}")))?;
            total = total + residual(&pred, &states[n + k + 1], w);
        }
    }
    Ok(total / (starts.len() * horizon) as f64)
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let n = params.len();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
    if !params.same_shape(grads) || state.m.len() != params.len() {
        return Err(Error::invalid("optimizer, parameter and gradient shapes differ"));
    }
    state.t += 1;
    let c1 = 1.0 - libm::pow(state.beta1, state.t as f64);
    let c2 = 1.0 - libm::pow(state.beta2, state.t as f64);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
    Ok(())
}

/// Result of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of every epoch.
    pub loss_history: Vec<f64>,
    pub params: MlpParams,
    pub steps: usize,
}

/// Loss and gradient of the hybrid model on one batch of segment starts.
pub fn batch_gradient(
    p: &PhysicalParams,
    net: &MlpParams,
    mode: InputMode,
    states: &[State],
    controls: &[f64],
    starts: &[usize],
    horizon: usize,
    w: &LossWeights,
    h: f64,
) -> Result<(f64, MlpParams)> {
    let tape = Tape::new();
    let bound = TapeMlp::bind(&tape, net);
    let model = Hybrid {
        params: *p,
        net: &bound,
        input_mode: mode,
    };
    let loss = segment_loss(&tape, &model, states, controls, starts, horizon, w, h)?;
    let value = loss.value();
    if !value.is_finite() {
        return Err(Error::numeric(format!("non-finite loss {value}")));
    }
    let grads = tape.backward(loss)?;
    Ok((value, bound.collect(&grads)))
}

/// Adam over shuffled mini-batches of dataset transitions.
///
/// `on_epoch` sees each epoch index and its mean loss as training proceeds.
pub fn train(
    p: &PhysicalParams,
    dataset: &Dataset,
    cfg: &TrainConfig,
    initial: MlpParams,
    mode: InputMode,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    p.validate()?;
    if initial.input_width() != mode.width() || initial.output_width() != 1 {
        return Err(Error::invalid(format!(
            "network {:?} does not fit {mode:?} with one output",
            initial.layer_sizes()
        )));
    }
    let states = dataset.states();
    let controls = dataset.controls();
    let h = dataset.dt();
    let starts: Vec<usize> = contiguous_starts(dataset, cfg.horizon);
    if starts.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "dataset has {} usable transitions, fewer than one batch of {}",
            starts.len(),
            cfg.batch_size
        )));
    }

    let mut params = initial;
    let mut adam = AdamState::new(&params);
    let mut rng = stream_rng(cfg.seed, crate::rng::Stream::Shuffle as u64);
    let mut order = starts;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(
                p,
                &params,
                mode,
                &states,
                &controls,
                batch,
                cfg.horizon,
                &cfg.loss_weights,
                h,
            )
            .map_err(|e| match e {
                Error::NumericFailure(_) => e.context(format_args!("training step {step}")),
                other => other,
            })?;
            adam_step(&mut adam, &mut params, &grads, cfg.learning_rate)?;
            weighted += loss * batch.len() as f64;
            step += 1;
        }
        let mean = weighted / order.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(TrainReport {
        loss_history: history,
        params,
        steps: step,
    })
}

/// Start indices whose next `horizon` samples are all consecutive.
pub fn contiguous_starts(dataset: &Dataset, horizon: usize) -> Vec<usize> {
    let pairs = dataset.transition_starts();
    let mut ok = alloc::vec![false; dataset.len()];
    for &i in &pairs {
        ok[i] = true;
    }
    (0..dataset.len())
        .filter(|&n| n + horizon < dataset.len() && (n..n + horizon).all(|k| ok[k]))
        .collect()
}

/// Mean one-step loss of the pure-ODE model with the given friction factors.
pub fn baseline_loss(
    p: &PhysicalParams,
    mu_c: f64,
    mu_p: f64,
    states: &[State],
    controls: &[f64],
    starts: &[usize],
    w: &LossWeights,
    h: f64,
) -> Result<f64> {
    let model = PureOde {
        params: PhysicalParams { mu_c, mu_p, ..*p },
    };
    segment_loss::<f64, _>((), &model, states, controls, starts, 1, w, h)
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Minimizes `f` over `[lo, hi]`: a coarse grid, then golden-section search
/// between the best grid point's neighbours. The upper bound is widened
/// while the optimum sits on it.
fn minimize_1d(mut f: impl FnMut(f64) -> Result<f64>, lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    const GRID: usize = 16;
    loop {
        let step = (hi - lo) / GRID as f64;
        let mut best = (lo, f(lo)?);
        for i in 1..=GRID {
            let x = lo + step * i as f64;
            let v = f(x)?;
            if v < best.1 {
                best = (x, v);
            }
        }
        if best.0 >= hi && hi < 1e3 {
            hi *= 4.0;
            continue;
        }
        let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let (mut fc, mut fd) = (f(c)?, f(d)?);
        while b - a > tol {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - GOLDEN * (b - a);
                fc = f(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + GOLDEN * (b - a);
                fd = f(d)?;
            }
        }
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        // golden search can drift off a boundary minimum; keep the best seen
        let cands = [(mid, fm), (c, fc), (d, fd), best];
        return Ok(cands
            .into_iter()
            .fold(cands[0], |acc, x| if x.1 < acc.1 { x } else { acc }));
    }
}

/// Least-squares Coulomb (cart) and viscous (pole) friction factors for the
/// pure-ODE model, by alternating one-dimensional searches.
///
/// The friction fields of `p` are ignored.
pub fn fit_baseline_friction(p: &PhysicalParams, dataset: &Dataset, w: &LossWeights) -> Result<(f64, f64)> {
    p.validate()?;
    w.validate()?;
    let starts = contiguous_starts(dataset, 1);
    if starts.is_empty() {
        return Err(Error::invalid("dataset has no transitions to fit"));
    }
    let states = dataset.states();
    let controls = dataset.controls();
    let h = dataset.dt();
    let loss = |mc: f64, mp: f64| baseline_loss(p, mc, mp, &states, &controls, &starts, w, h);

    let (mut mu_c, mut mu_p) = (0.0, 0.0);
    let mut prev: Option<f64> = None;
    for _ in 0..100 {
        let (c, _) = minimize_1d(|mc| loss(mc, mu_p), 0.0, 0.2, 1e-8)?;
        mu_c = c;
        let (q, v) = minimize_1d(|mp| loss(mu_c, mp), 0.0, 0.01, 1e-10)?;
        mu_p = q;
        if v == 0.0 || prev.is_some_and(|pv| pv - v <= 1e-9 * pv) {
            break;
        }
        prev = Some(v);
    }
    Ok((mu_c, mu_p))
}
