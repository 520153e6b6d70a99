//! Synthetic stand-in for the physical test rig.
//!
//! The rig integrates the same rigid-body equations as the models but adds
//! effects neither model class describes exactly: direction-dependent cart
//! friction, a first-order actuator lag, quadratic air drag on the pole and
//! hard rails at the ends of the track. A sensor model then adds position
//! noise and reports finite-difference velocities, the way the real
//! encoders would.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{acceleration, PhysicalParams, State};
use crate::error::{Error, Result};
use crate::integrator::rk4_step;
use crate::scalar::{sign, wrap_angle};

/// Ground-truth apparatus, including effects the models do not contain.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RigConfig {
    /// Rigid-body constants. `base.mu_c` is unused; see `mu_c_pos`/`mu_c_neg`.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub base: PhysicalParams,
    /// Cart friction factor while moving towards +x.
    pub mu_c_pos: f64,
    /// Cart friction factor while moving towards −x.
    pub mu_c_neg: f64,
    /// Actuator lag time constant (s); zero disables the lag.
    pub actuator_tau: f64,
    /// Quadratic pole drag (N·m·s²/rad²).
    pub drag_coeff: f64,
    /// Position noise standard deviation (m).
    pub noise_x: f64,
    /// Angle noise standard deviation (rad).
    pub noise_phi: f64,
    /// The cart stops dead at ±this position (m).
    pub track_half_length: f64,
    /// Integration substep (s); must divide the sample interval.
    pub inner_step: f64,
    /// Operator feedback towards the track centre (N/m). The operator adds
    /// `−operator_kp·x − operator_kd·ẋ` to the excitation at each sample,
    /// and the sum is what the force sensor logs.
    pub operator_kp: f64,
    /// Operator damping (N·s/m).
    pub operator_kd: f64,
    /// Hold the cart when its velocity reaches zero and the drive cannot
    /// overcome friction.
    pub stiction: bool,
    /// Sensor sample rate (Hz).
    pub sample_rate: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            base: PhysicalParams::default(),
            mu_c_pos: 0.065,
            mu_c_neg: 0.025,
            actuator_tau: 0.0,
            drag_coeff: 5e-5,
            noise_x: 2e-5,
            noise_phi: 5e-5,
            track_half_length: 0.35,
            inner_step: 0.002,
            operator_kp: 3.0,
            operator_kd: 0.6,
            stiction: true,
            sample_rate: 50.0,
        }
    }
}

impl RigConfig {
    /// A rig that behaves exactly like the pure-ODE model with `base`'s
    /// frictions: symmetric friction, no lag, no drag, no noise, no rails.
    pub fn ideal(base: PhysicalParams, sample_rate: f64) -> Self {
        RigConfig {
            base,
            mu_c_pos: base.mu_c,
            mu_c_neg: base.mu_c,
            actuator_tau: 0.0,
            drag_coeff: 0.0,
            noise_x: 0.0,
            noise_phi: 0.0,
            track_half_length: f64::INFINITY,
            inner_step: 1.0 / sample_rate,
            operator_kp: 0.0,
            operator_kd: 0.0,
            stiction: false,
            sample_rate,
        }
    }

    pub fn sample_interval(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Number of substeps per sample interval.
    pub fn substeps(&self) -> Result<usize> {
        self.validate()?;
        Ok(libm::round(self.sample_interval() / self.inner_step) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::invalid(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        for (name, v) in [
            ("mu_c_pos", self.mu_c_pos),
            ("mu_c_neg", self.mu_c_neg),
            ("actuator_tau", self.actuator_tau),
            ("drag_coeff", self.drag_coeff),
            ("noise_x", self.noise_x),
            ("noise_phi", self.noise_phi),
            ("operator_kp", self.operator_kp),
            ("operator_kd", self.operator_kd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.track_half_length > 0.0) {
            return Err(Error::invalid(format!(
                "track_half_length must be positive, got {}",
                self.track_half_length
            )));
        }
        let dt = self.sample_interval();
        if !(self.inner_step > 0.0 && self.inner_step <= dt) {
            return Err(Error::invalid(format!(
                "inner_step must lie in (0, {dt}], got {}",
                self.inner_step
            )));
        }
        let n = libm::round(dt / self.inner_step);
        if libm::fabs(n * self.inner_step - dt) > 1e-9 * dt {
            return Err(Error::invalid(format!(
                "inner_step {} does not divide the sample interval {dt}",
                self.inner_step
            )));
        }
        Ok(())
    }
}

/// Random piecewise-constant force resembling manual excitation.
///
/// Levels are uniform in `[−amplitude, amplitude]`, held for a uniform
/// `[0.1, 0.5]` s, sampled at `sample_rate` and smoothed with a causal
/// 3-sample moving average.
pub fn excitation_signal(duration: f64, sample_rate: f64, amplitude: f64, seed: u64) -> Result<Vec<f64>> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid(format!(
            "sample_rate must be positive, got {sample_rate}"
        )));
    }
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(Error::invalid(format!(
            "amplitude must be non-negative, got {amplitude}"
        )));
    }
    let n = libm::round(duration * sample_rate) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hold = Uniform::new_inclusive(0.1, 0.5);
    let level = Uniform::new_inclusive(-1.0, 1.0);

    let mut raw = Vec::with_capacity(n);
    let mut current = amplitude * level.sample(&mut rng);
    let mut switch_at = hold.sample(&mut rng);
    for k in 0..n {
        let t = k as f64 / sample_rate;
        while t >= switch_at {
            current = amplitude * level.sample(&mut rng);
            switch_at += hold.sample(&mut rng);
        }
        raw.push(current);
    }
    Ok((0..n)
        .map(|k| {
            let lo = k.saturating_sub(2);
            raw[lo..=k].iter().sum::<f64>() / (k - lo + 1) as f64
        })
        .collect())
}

fn rig_derivative(cfg: &RigConfig, z: &[f64; 5], u: f64) -> Result<[f64; 5]> {
    let p = &cfg.base;
    let m_tot = p.derived().m_tot;
    let state = State::new(z[0], z[1], z[2], z[3]);
    let lagged = cfg.actuator_tau > 0.0;
    let u_eff = if lagged { z[4] } else { u };
    let mu = if state.x_dot > 0.0 {
        cfg.mu_c_pos
    } else {
        cfg.mu_c_neg
    };
    if cfg.stiction && state.x_dot == 0.0 {
        let drive = holding_force(cfg, z, u);
        let mu = if drive > 0.0 { cfg.mu_c_pos } else { cfg.mu_c_neg };
        if libm::fabs(drive) <= mu * m_tot * p.g {
            let q_phi = -(state.phi_dot * p.mu_p) - cfg.drag_coeff * state.phi_dot * libm::fabs(state.phi_dot);
            let d = p.derived();
            let phidd = (q_phi + d.sigma * p.g * libm::sin(state.phi)) / d.inertia;
            let lag_rate = if lagged { (u - z[4]) / cfg.actuator_tau } else { 0.0 };
            return Ok([0.0, state.phi_dot, 0.0, phidd, lag_rate]);
        }
    }
    let q_x = u_eff - m_tot * p.g * mu * sign(state.x_dot);
    let q_phi = -(state.phi_dot * p.mu_p) - cfg.drag_coeff * state.phi_dot * libm::fabs(state.phi_dot);
    let [xdd, phidd] = acceleration(p, &state, [q_x, q_phi])?;
    let lag_rate = if lagged {
        (u - z[4]) / cfg.actuator_tau
    } else {
        0.0
    };
    Ok([state.x_dot, state.phi_dot, xdd, phidd, lag_rate])
}

/// Force the cart friction must supply to keep the cart at rest.
fn holding_force(cfg: &RigConfig, z: &[f64; 5], u: f64) -> f64 {
    let p = &cfg.base;
    let d = p.derived();
    let u_eff = if cfg.actuator_tau > 0.0 { z[4] } else { u };
    let (s, c) = (libm::sin(z[1]), libm::cos(z[1]));
    let q_phi = -(z[3] * p.mu_p) - cfg.drag_coeff * z[3] * libm::fabs(z[3]);
    let phi_dd = (q_phi + d.sigma * p.g * s) / d.inertia;
    u_eff + d.sigma * s * z[3] * z[3] - d.sigma * c * phi_dd
}

/// Ground truth of one rig run.
#[derive(Clone, Debug, PartialEq)]
pub struct RigRun {
    /// `controls.len() + 1` states at the sample instants, starting with the
    /// initial state.
    pub states: Vec<State>,
    /// Force applied over each sample interval: the excitation plus the
    /// operator's correction.
    pub controls: Vec<f64>,
}

/// Runs the rig under `excitation`, each value held over one sample interval.
pub fn simulate_rig(cfg: &RigConfig, excitation: &[f64], initial: &State) -> Result<RigRun> {
    let substeps = cfg.substeps()?;
    if !initial.is_finite() {
        return Err(Error::invalid("initial state is not finite"));
    }
    let h = cfg.inner_step;
    let dt = cfg.sample_interval();
    let limit = cfg.track_half_length;
    let mut z = [initial.x, initial.phi, initial.x_dot, initial.phi_dot, 0.0];
    let mut out = Vec::with_capacity(excitation.len() + 1);
    let mut applied = Vec::with_capacity(excitation.len());
    out.push(*initial);
    let mut f = |_t: f64, z: &[f64; 5], u: f64| rig_derivative(cfg, z, u);
    for (n, &e) in excitation.iter().enumerate() {
        let u = e - cfg.operator_kp * z[0] - cfg.operator_kd * z[2];
        applied.push(u);
        for k in 0..substeps {
            let t = n as f64 * dt + k as f64 * h;
            let before = z;
            z = rk4_step(&mut f, t, &z, u, h)
                .map_err(|e| e.context(format_args!("rig simulation at t = {t:.4} s")))?;
            if cfg.stiction && before[2] * z[2] < 0.0 {
                let drive = holding_force(cfg, &z, u);
                let mu = if drive > 0.0 { cfg.mu_c_pos } else { cfg.mu_c_neg };
                if libm::fabs(drive) <= mu * cfg.base.derived().m_tot * cfg.base.g {
                    z[2] = 0.0;
                }
            }
            if z[0] > limit {
                z[0] = limit;
                z[2] = z[2].min(0.0);
            } else if z[0] < -limit {
                z[0] = -limit;
                z[2] = z[2].max(0.0);
            }
        }
        out.push(State::new(z[0], z[1], z[2], z[3]));
    }
    Ok(RigRun {
        states: out,
        controls: applied,
    })
}

/// One time-stamped measurement.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub phi: f64,
    pub x_dot: f64,
    pub phi_dot: f64,
    pub u: f64,
}

impl Sample {
    pub fn state(&self) -> State {
        State::new(self.x, self.phi, self.x_dot, self.phi_dot)
    }
}

/// Uniformly sampled measurements with provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_rate: f64,
    samples: Vec<Sample>,
    provenance: String,
}

impl Dataset {
    /// Validates that timestamps are strictly increasing at `1/sample_rate`.
    pub fn new(sample_rate: f64, samples: Vec<Sample>, provenance: impl Into<String>) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::invalid(format!(
                "sample_rate must be positive, got {sample_rate}"
            )));
        }
        let dt = 1.0 / sample_rate;
        for (i, w) in samples.windows(2).enumerate() {
            let gap = w[1].t - w[0].t;
            if !(libm::fabs(gap - dt) <= 1e-6 * dt) {
                return Err(Error::invalid(format!(
                    "timestamps not uniform at sample {}: t = {} after {} (expected spacing {dt})",
                    i + 1,
                    w[1].t,
                    w[0].t
                )));
            }
        }
        Ok(Dataset {
            sample_rate,
            samples,
            provenance: provenance.into(),
        })
    }

    /// Exact states with their controls, no sensor in between.
    pub fn from_states(
        sample_rate: f64,
        states: &[State],
        controls: &[f64],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if states.len() < controls.len() {
            return Err(Error::invalid("fewer states than controls"));
        }
        let samples = controls
            .iter()
            .zip(states)
            .enumerate()
            .map(|(n, (&u, s))| Sample {
                t: n as f64 / sample_rate,
                x: s.x,
                phi: s.phi,
                x_dot: s.x_dot,
                phi_dot: s.phi_dot,
                u,
            })
            .collect();
        Dataset::new(sample_rate, samples, provenance)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: impl Into<String>) {
        self.provenance = provenance.into();
    }

    pub fn states(&self) -> Vec<State> {
        self.samples.iter().map(Sample::state).collect()
    }

    pub fn controls(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.u).collect()
    }

    /// Start indices `n` such that `(n, n+1)` is a consecutive pair.
    pub fn transition_starts(&self) -> Vec<usize> {
        let dt = self.dt();
        self.samples
            .windows(2)
            .enumerate()
            .filter(|(_, w)| libm::fabs(w[1].t - w[0].t - dt) <= 1e-6 * dt)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Noisy positions, backward-difference velocities, wrapped angle.
///
/// Uses the first `controls.len()` truth states; `truth` must already be
/// sampled at `cfg.sample_rate`.
pub fn sensor_model(truth: &[State], controls: &[f64], cfg: &RigConfig, seed: u64) -> Result<Dataset> {
    if truth.len() < controls.len() {
        return Err(Error::invalid(format!(
            "{} truth states cannot cover {} controls",
            truth.len(),
            controls.len()
        )));
    }
    let rate = cfg.sample_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev: Option<(f64, f64)> = None;
    let mut samples = Vec::with_capacity(controls.len());
    for (n, (s, &u)) in truth.iter().zip(controls).enumerate() {
        let ex: f64 = StandardNormal.sample(&mut rng);
        let ep: f64 = StandardNormal.sample(&mut rng);
        let x = s.x + cfg.noise_x * ex;
        let phi = s.phi + cfg.noise_phi * ep;
        let (x_dot, phi_dot) = match prev {
            Some((px, pphi)) => ((x - px) * rate, (phi - pphi) * rate),
            None => (0.0, 0.0),
        };
        prev = Some((x, phi));
        samples.push(Sample {
            t: n as f64 / rate,
            x,
            phi: wrap_angle(phi),
            x_dot,
            phi_dot,
            u,
        });
    }
    Dataset::new(rate, samples, "synthetic")
}

/// Population statistics of one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub name: &'static str,
    pub unit: &'static str,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn channel(name: &'static str, unit: &'static str, values: impl Iterator<Item = f64> + Clone) -> ChannelStats {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.clone().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    ChannelStats {
        name,
        unit,
        mean,
        std: libm::sqrt(var),
        min,
        max,
    }
}

/// Mean, std, min and max of `x`, `phi`, `x_dot`, `phi_dot` and `u`.
pub fn dataset_stats(d: &Dataset) -> Result<Vec<ChannelStats>> {
    if d.is_empty() {
        return Err(Error::invalid("statistics of an empty dataset"));
    }
    let s = d.samples();
    Ok(alloc::vec![
        channel("x", "m", s.iter().map(|v| v.x)),
        channel("phi", "rad", s.iter().map(|v| v.phi)),
        channel("x_dot", "m/s", s.iter().map(|v| v.x_dot)),
        channel("phi_dot", "rad/s", s.iter().map(|v| v.phi_dot)),
        channel("u", "N", s.iter().map(|v| v.u)),
    ])
}

/// Text table: sample rate, sample count, then one row per channel.
pub fn format_stats(d: &Dataset, stats: &[ChannelStats]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Sample rate  {} Hz", d.sample_rate());
    let _ = writeln!(out, "Samples      {}", d.len());
    let _ = writeln!(
        out,
        "{:<16}{:>10}{:>10}{:>10}{:>10}",
        "", "Mean", "STD.", "Min", "Max"
    );
    for c in stats {
        let label = format!("{} ({})", c.name, c.unit);
        let _ = writeln!(
            out,
            "{label:<16}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
            c.mean, c.std, c.min, c.max
        );
    }
    out
}
