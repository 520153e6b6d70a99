//! Classical fixed-step fourth-order Runge–Kutta.
//!
//! The control input is held constant across the four stages. Every stage
//! is plain [`Scalar`] arithmetic, so instantiating the step with tape
//! variables differentiates the unrolled scheme exactly.

use alloc::format;
use alloc::vec::Vec;

use crate::dynamics::{state_derivative, ForceModel, State};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_finite<S: Scalar, const N: usize>(v: &[S; N], what: &str) -> Result<()> {
    if v.iter().all(|s| s.value().is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite {what}")))
    }
}

fn axpy<S: Scalar, const N: usize>(z: &[S; N], k: &[S; N], c: f64) -> [S; N] {
    core::array::from_fn(|i| z[i] + k[i] * c)
}

/// One RK4 step of `ż = f(t, z, u)` from `(t, z)` with step `h`.
///
/// `h` may be negative (integrating backwards) but must be non-zero and finite.
pub fn rk4_step<S, const N: usize, F>(f: &mut F, t: f64, z: &[S; N], u: f64, h: f64) -> Result<[S; N]>
where
    S: Scalar,
    F: FnMut(f64, &[S; N], f64) -> Result<[S; N]>,
{
    if !(h.is_finite() && h != 0.0) {
        return Err(Error::invalid(format!("step size must be non-zero, got {h}")));
    }
    let mut stage = |i: usize, t: f64, z: &[S; N]| -> Result<[S; N]> {
        let d = f(t, z, u).map_err(|e| e.context(format_args!("rk4 stage {i}")))?;
        check_finite(&d, &format!("derivative at rk4 stage {i}"))?;
        Ok(d)
    };
    let k1 = stage(1, t, z)?;
    let k2 = stage(2, t + h / 2.0, &axpy(z, &k1, h / 2.0))?;
    let k3 = stage(3, t + h / 2.0, &axpy(z, &k2, h / 2.0))?;
    let k4 = stage(4, t + h, &axpy(z, &k3, h))?;
    let next: [S; N] =
        core::array::from_fn(|i| z[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0));
    check_finite(&next, "state after rk4 step")?;
    Ok(next)
}

/// One RK4 step of the cart-pole under `model`.
pub fn step_model<S: Scalar, M: ForceModel<S> + ?Sized>(
    model: &M,
    state: &State<S>,
    u: f64,
    h: f64,
) -> Result<State<S>> {
    let mut f = |_t: f64, z: &[S; 4], u: f64| state_derivative(model, z, u);
    rk4_step(&mut f, 0.0, &state.to_array(), u, h).map(State::from_array)
}

/// `[z0, z1, …, z_N]` with `z_{n+1} = rk4_step(f, n·h, z_n, controls[n], h)`.
pub fn rollout<S, const N: usize, F>(
    f: &mut F,
    z0: &[S; N],
    controls: &[f64],
    h: f64,
) -> Result<Vec<[S; N]>>
where
    S: Scalar,
    F: FnMut(f64, &[S; N], f64) -> Result<[S; N]>,
{
    if controls.is_empty() {
        return Err(Error::invalid("rollout needs at least one control value"));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let mut traj = Vec::with_capacity(controls.len() + 1);
    traj.push(*z0);
    for (n, &u) in controls.iter().enumerate() {
        let next = rk4_step(f, n as f64 * h, &traj[n], u, h)
            .map_err(|e| e.context(format_args!("step {n}")))?;
        traj.push(next);
    }
    Ok(traj)
}

/// Rollout of the cart-pole under `model`, as states.
pub fn rollout_model<M: ForceModel<f64> + ?Sized>(
    model: &M,
    initial: &State,
    controls: &[f64],
    h: f64,
) -> Result<Vec<State>> {
    let mut f = |_t: f64, z: &[f64; 4], u: f64| state_derivative(model, z, u);
    Ok(rollout(&mut f, &initial.to_array(), controls, h)?
        .into_iter()
        .map(State::from_array)
        .collect())
}
