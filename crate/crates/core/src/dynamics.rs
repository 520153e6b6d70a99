//! Closed-form cart-pole equations of motion.
//!
//! Generalized coordinates are the cart position `x` and the pole angle
//! `phi` (zero upright). The pole is a uniform rod of mass `m_p` carrying a
//! point mass `m_s` at its tip, so with
//!
//! ```text
//! m_tot = m_c + m_p + m_s
//! sigma = m_p·l/2 + m_s·l          first mass moment about the pivot
//! J     = m_p·l²/3 + m_s·l²        inertia about the pivot
//! ```
//!
//! the energies are `T = ½·m_tot·ẋ² + sigma·cos φ·ẋ·φ̇ + ½·J·φ̇²` and
//! `V = sigma·g·cos φ`, and the equations of motion take the matrix form
//! `M(q)·q̈ + C(q, q̇)·q̇ + G(q) = Q`.

use alloc::format;
use alloc::vec::Vec;

use crate::diff::{MlpParams, TapeMlp, Var};
use crate::error::{Error, Result};
use crate::scalar::{sign, Scalar};

/// Measured constants of the apparatus.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PhysicalParams {
    /// Cart mass (kg).
    pub m_c: f64,
    /// Pole mass (kg).
    pub m_p: f64,
    /// Sphere mass at the pole tip (kg).
    pub m_s: f64,
    /// Pole length (m).
    pub l: f64,
    /// Cart Coulomb friction factor.
    pub mu_c: f64,
    /// Pole viscous friction (N·m·s/rad).
    pub mu_p: f64,
    /// Gravity (m/s²).
    pub g: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            m_c: 0.466,
            m_p: 0.06,
            m_s: 0.012,
            l: 0.201,
            mu_c: 0.0408,
            mu_p: 0.0020,
            g: 9.81,
        }
    }
}

/// Mass moments that appear in `M`, `C` and `G`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedConstants {
    pub m_tot: f64,
    pub sigma: f64,
    pub inertia: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m_c", self.m_c),
            ("m_p", self.m_p),
            ("m_s", self.m_s),
            ("l", self.l),
            ("g", self.g),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu_c", self.mu_c), ("mu_p", self.mu_p)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn derived(&self) -> DerivedConstants {
        let l = self.l;
        DerivedConstants {
            m_tot: self.m_c + self.m_p + self.m_s,
            sigma: self.m_p * l / 2.0 + self.m_s * l,
            inertia: self.m_p * l * l / 3.0 + self.m_s * l * l,
        }
    }

    /// Same apparatus without any friction.
    pub fn frictionless(&self) -> Self {
        PhysicalParams {
            mu_c: 0.0,
            mu_p: 0.0,
            ..*self
        }
    }
}

/// Generalized coordinates and velocities. The angle is never wrapped here.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct State<S = f64> {
    pub x: S,
    pub phi: S,
    pub x_dot: S,
    pub phi_dot: S,
}

impl<S: Copy> State<S> {
    pub fn new(x: S, phi: S, x_dot: S, phi_dot: S) -> Self {
        State {
            x,
            phi,
            x_dot,
            phi_dot,
        }
    }

    /// `z = [x, φ, ẋ, φ̇]`.
    pub fn to_array(&self) -> [S; 4] {
        [self.x, self.phi, self.x_dot, self.phi_dot]
    }

    pub fn from_array(z: [S; 4]) -> Self {
        State::new(z[0], z[1], z[2], z[3])
    }
}

impl State<f64> {
    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn lift<S: Scalar>(&self, ctx: S::Context) -> State<S> {
        State::from_array(self.to_array().map(|v| S::constant(ctx, v)))
    }
}

/// `M(q) = [[m_tot, sigma·cos φ], [sigma·cos φ, J]]`.
pub fn mass_matrix<S: Scalar>(p: &PhysicalParams, state: &State<S>) -> [[S; 2]; 2] {
    let d = p.derived();
    let off = state.phi.cos() * d.sigma;
    [
        [state.phi.lift(d.m_tot), off],
        [off, state.phi.lift(d.inertia)],
    ]
}

/// `C(q, q̇)·q̇ = [−sigma·sin φ·φ̇², 0]`.
pub fn coriolis_term<S: Scalar>(p: &PhysicalParams, state: &State<S>) -> [S; 2] {
    let sigma = p.derived().sigma;
    [
        -(state.phi.sin() * state.phi_dot.square() * sigma),
        state.phi.lift(0.0),
    ]
}

/// `G(q) = ∂V/∂q = [0, −sigma·g·sin φ]`.
pub fn gravity_term<S: Scalar>(p: &PhysicalParams, state: &State<S>) -> [S; 2] {
    let sigma = p.derived().sigma;
    [state.phi.lift(0.0), -(state.phi.sin() * (sigma * p.g))]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

pub fn energy(p: &PhysicalParams, state: &State) -> Energy {
    let d = p.derived();
    let c = libm::cos(state.phi);
    let kinetic = 0.5 * d.m_tot * state.x_dot * state.x_dot
        + d.sigma * c * state.x_dot * state.phi_dot
        + 0.5 * d.inertia * state.phi_dot * state.phi_dot;
    Energy {
        kinetic,
        potential: d.sigma * p.g * c,
    }
}

/// Classical non-conservative forces: Coulomb friction on the cart, viscous
/// friction in the pole bearing.
pub fn pure_ode_forces<S: Scalar>(p: &PhysicalParams, state: &State<S>, u: f64) -> [S; 2] {
    let m_tot = p.derived().m_tot;
    let coulomb = m_tot * p.g * p.mu_c * sign(state.x_dot.value());
    [state.x.lift(u - coulomb), -(state.phi_dot * p.mu_p)]
}

/// How the state is presented to the force network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InputMode {
    /// `[x, φ mod 2π, ẋ, φ̇, u]`.
    #[default]
    RawAngle,
    /// `[x, cos φ, sin φ, ẋ, φ̇, u]`.
    EmbeddedAngle,
}

impl InputMode {
    pub fn width(self) -> usize {
        match self {
            InputMode::RawAngle => 5,
            InputMode::EmbeddedAngle => 6,
        }
    }

    pub fn encode<S: Scalar>(self, state: &State<S>, u: f64) -> Vec<S> {
        let u = state.x.lift(u);
        match self {
            InputMode::RawAngle => alloc::vec![
                state.x,
                state.phi.wrap_angle(),
                state.x_dot,
                state.phi_dot,
                u
            ],
            InputMode::EmbeddedAngle => alloc::vec![
                state.x,
                state.phi.cos(),
                state.phi.sin(),
                state.x_dot,
                state.phi_dot,
                u
            ],
        }
    }
}

/// A scalar-output force approximator usable with scalar type `S`.
pub trait ForceNetwork<S: Scalar> {
    fn input_width(&self) -> usize;
    fn eval(&self, inputs: &[S]) -> Result<S>;
}

impl ForceNetwork<f64> for MlpParams {
    fn input_width(&self) -> usize {
        MlpParams::input_width(self)
    }

    fn eval(&self, inputs: &[f64]) -> Result<f64> {
        Ok(self.forward(inputs)?[0])
    }
}

impl<'t> ForceNetwork<Var<'t>> for TapeMlp<'t> {
    fn input_width(&self) -> usize {
        self.params().input_width()
    }

    fn eval(&self, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        Ok(self.forward(inputs)?.index(0))
    }
}

/// Learned cart force plus viscous pole friction. The control input reaches
/// the model only through the network.
pub fn hybrid_forces<S: Scalar, N: ForceNetwork<S> + ?Sized>(
    p: &PhysicalParams,
    net: &N,
    mode: InputMode,
    state: &State<S>,
    u: f64,
) -> Result<[S; 2]> {
    if net.input_width() != mode.width() {
        return Err(Error::invalid(format!(
            "force network takes {} inputs, {mode:?} supplies {}",
            net.input_width(),
            mode.width()
        )));
    }
    let q_x = net.eval(&mode.encode(state, u))?;
    Ok([q_x, -(state.phi_dot * p.mu_p)])
}

/// `q̈ = M(q)⁻¹·[Q − C·q̇ − G]`, with the 2×2 inverse in closed form.
pub fn acceleration<S: Scalar>(
    p: &PhysicalParams,
    state: &State<S>,
    forces: [S; 2],
) -> Result<[S; 2]> {
    let [[a, b], [_, d]] = mass_matrix(p, state);
    let det = a * d - b * b;
    if !(libm::fabs(det.value()) >= 1e-12) {
        return Err(Error::numeric(format!(
            "mass matrix determinant {} is singular",
            det.value()
        )));
    }
    let c = coriolis_term(p, state);
    let g = gravity_term(p, state);
    let r0 = forces[0] - c[0] - g[0];
    let r1 = forces[1] - c[1] - g[1];
    Ok([(d * r0 - b * r1) / det, (a * r1 - b * r0) / det])
}

/// Source of non-conservative forces for the equations of motion.
pub trait ForceModel<S: Scalar> {
    fn params(&self) -> &PhysicalParams;
    fn forces(&self, state: &State<S>, u: f64) -> Result<[S; 2]>;
}

/// Fully mechanistic model: Coulomb cart friction and viscous pole friction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureOde {
    pub params: PhysicalParams,
}

impl<S: Scalar> ForceModel<S> for PureOde {
    fn params(&self) -> &PhysicalParams {
        &self.params
    }

    fn forces(&self, state: &State<S>, u: f64) -> Result<[S; 2]> {
        Ok(pure_ode_forces(&self.params, state, u))
    }
}

/// Equations of motion with a learned cart force.
#[derive(Clone, Copy, Debug)]
pub struct Hybrid<N> {
    pub params: PhysicalParams,
    pub net: N,
    pub input_mode: InputMode,
}

impl<S: Scalar, N: ForceNetwork<S>> ForceModel<S> for Hybrid<N> {
    fn params(&self) -> &PhysicalParams {
        &self.params
    }

    fn forces(&self, state: &State<S>, u: f64) -> Result<[S; 2]> {
        hybrid_forces(&self.params, &self.net, self.input_mode, state, u)
    }
}

impl<S: Scalar, N: ForceNetwork<S> + ?Sized> ForceNetwork<S> for &N {
    fn input_width(&self) -> usize {
        (**self).input_width()
    }

    fn eval(&self, inputs: &[S]) -> Result<S> {
        (**self).eval(inputs)
    }
}

impl<S: Scalar, M: ForceModel<S> + ?Sized> ForceModel<S> for &M {
    fn params(&self) -> &PhysicalParams {
        (**self).params()
    }

    fn forces(&self, state: &State<S>, u: f64) -> Result<[S; 2]> {
        (**self).forces(state, u)
    }
}

/// First-order form `ż = [ẋ, φ̇, ẍ, φ̈]`.
pub fn state_derivative<S: Scalar, M: ForceModel<S> + ?Sized>(
    model: &M,
    z: &[S; 4],
    u: f64,
) -> Result<[S; 4]> {
    let state = State::from_array(*z);
    let q = model.forces(&state, u)?;
    let [xdd, phidd] = acceleration(model.params(), &state, q)?;
    Ok([state.x_dot, state.phi_dot, xdd, phidd])
}
