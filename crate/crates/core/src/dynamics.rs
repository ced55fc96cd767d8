//! Unicycle vehicle model with speed-command and yaw-rate controls.
//!
//! The same integration runs on plain values in the simulator and on the
//! autodiff tape inside the policy decoder, so the two agree to rounding.

use nncore::loss::TrajVars;
use nncore::{wrap_angle, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Result, SimError};
use crate::world::AgentState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub v_max: f64,
    pub a_max: f64,
    pub omega_max: f64,
    pub dt: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            v_max: 30.0,
            a_max: 10.0,
            omega_max: FRAC_PI_2,
            dt: 0.1,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.v_max, self.a_max, self.omega_max, self.dt];
        if vals.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(SimError::Config(format!("dynamics limits must be positive: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub speed_cmd: f64,
    pub yaw_rate: f64,
}

impl Control {
    pub fn new(speed_cmd: f64, yaw_rate: f64) -> Self {
        Self { speed_cmd, yaw_rate }
    }

    /// Projects onto the feasible set given the current speed.
    pub fn clamped(&self, prev_speed: f64, limits: &Limits) -> Control {
        let dv = limits.a_max * limits.dt;
        let lo = (prev_speed - dv).max(0.0);
        let hi = (prev_speed + dv).min(limits.v_max);
        Control {
            speed_cmd: self.speed_cmd.clamp(lo, hi.max(lo)),
            yaw_rate: self.yaw_rate.clamp(-limits.omega_max, limits.omega_max),
        }
    }
}

/// One Euler step: clamp, move along the current heading at the commanded
/// speed, then turn.
pub fn step(state: &AgentState, u: Control, limits: &Limits) -> Result<AgentState> {
    let finite = [state.x, state.y, state.heading, state.speed, u.speed_cmd, u.yaw_rate];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite("dynamics step"));
    }
    let u = u.clamped(state.speed, limits);
    let (s, c) = state.heading.sin_cos();
    Ok(AgentState {
        x: state.x + u.speed_cmd * c * limits.dt,
        y: state.y + u.speed_cmd * s * limits.dt,
        heading: wrap_angle(state.heading + u.yaw_rate * limits.dt),
        speed: u.speed_cmd,
        ..*state
    })
}

/// Applies `controls` in order; returns the `H` successor states.
pub fn rollout_controls(state: &AgentState, controls: &[Control], limits: &Limits) -> Result<Vec<AgentState>> {
    if controls.is_empty() {
        return Err(SimError::InvalidArgument("rollout needs at least one control".into()));
    }
    let mut out = Vec::with_capacity(controls.len());
    let mut cur = *state;
    for &u in controls {
        cur = step(&cur, u, limits)?;
        out.push(cur);
    }
    Ok(out)
}

/// Recovers the controls that reproduce a recorded state sequence
/// (`states[0]` is the start state).
pub fn back_derive_controls(states: &[AgentState], limits: &Limits) -> Vec<Control> {
    states
        .windows(2)
        .map(|w| Control {
            speed_cmd: w[1].speed,
            yaw_rate: wrap_angle(w[1].heading - w[0].heading) / limits.dt,
        })
        .collect()
}

/// Maps raw network outputs to controls: the speed moves from the previous
/// speed by at most `a_max*dt` through a tanh, the yaw rate is `omega_max*tanh`.
/// `raw` holds `(speed, yaw)` pairs per step.
pub fn decode_controls(raw: &[f64], start_speed: f64, limits: &Limits) -> Vec<Control> {
    let dv = limits.a_max * limits.dt;
    let mut v = start_speed;
    raw.chunks_exact(2)
        .map(|p| {
            v = (v + dv * p[0].tanh()).clamp(0.0, limits.v_max);
            Control::new(v, limits.omega_max * p[1].tanh())
        })
        .collect()
}

/// Tape version of [`decode_controls`] followed by integration from the ego
/// origin. `raw` is `[N, 2H]`; returns per-step `[N]` pose variables.
pub fn decode_rollout_tape(g: &mut Graph, raw: Var, start_speed: &[f64], limits: &Limits) -> Result<TrajVars> {
    let shape = g.shape(raw).to_vec();
    if shape.len() != 2 || !shape[1].is_multiple_of(2) || shape[0] != start_speed.len() {
        return Err(SimError::InvalidArgument(format!(
            "control decoder input {shape:?} for batch {}",
            start_speed.len()
        )));
    }
    let (n, horizon) = (shape[0], shape[1] / 2);
    let dv = limits.a_max * limits.dt;
    let mut v = g.input(Tensor::new(vec![n], start_speed.to_vec())?);
    let mut x = g.constant(&[n], 0.0);
    let mut y = g.constant(&[n], 0.0);
    let mut th = g.constant(&[n], 0.0);
    let mut out = TrajVars {
        x: Vec::with_capacity(horizon),
        y: Vec::with_capacity(horizon),
        heading: Vec::with_capacity(horizon),
    };
    for k in 0..horizon {
        let rv = g.column(raw, 2 * k)?;
        let rw = g.column(raw, 2 * k + 1)?;
        let tv = g.tanh(rv);
        let dvk = g.scale(tv, dv);
        let vk = g.add(v, dvk)?;
        v = g.clamp(vk, 0.0, limits.v_max);
        let tw = g.tanh(rw);
        let w = g.scale(tw, limits.omega_max * limits.dt);
        let (c, s) = (g.cos(th), g.sin(th));
        let vc = g.mul(v, c)?;
        let vs = g.mul(v, s)?;
        let dx = g.scale(vc, limits.dt);
        let dy = g.scale(vs, limits.dt);
        x = g.add(x, dx)?;
        y = g.add(y, dy)?;
        th = g.add(th, w)?;
        out.x.push(x);
        out.y.push(y);
        out.heading.push(th);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(speed: f64) -> AgentState {
        AgentState::new(0, 0.0, 0.0, 0.0, speed, 4.5, 1.8).unwrap()
    }

    #[test]
    fn rest_is_fixed_point() {
        let s = state(0.0);
        assert_eq!(step(&s, Control::new(0.0, 0.0), &Limits::default()).unwrap(), s);
    }

    #[test]
    fn straight_step_and_slew_clamp() {
        let l = Limits::default();
        let s = step(&state(10.0), Control::new(10.0, 0.0), &l).unwrap();
        assert_eq!((s.x, s.y, s.heading, s.speed), (1.0, 0.0, 0.0, 10.0));
        let fast = step(&state(10.0), Control::new(100.0, 0.0), &l).unwrap();
        assert_eq!(fast.speed, 11.0);
    }

    #[test]
    fn clamp_is_idempotent() {
        let l = Limits::default();
        for &(v, c, w) in &[(3.0, 50.0, 9.0), (0.2, -4.0, -9.0), (29.5, 31.0, 0.1)] {
            let once = Control::new(c, w).clamped(v, &l);
            assert_eq!(once.clamped(v, &l), once);
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(step(&state(1.0), Control::new(f64::NAN, 0.0), &Limits::default()).is_err());
        assert!(rollout_controls(&state(1.0), &[], &Limits::default()).is_err());
    }

    #[test]
    fn back_derived_controls_replay_states() {
        let l = Limits::default();
        let controls: Vec<Control> = (0..30)
            .map(|k| Control::new(5.0 + 0.3 * k as f64, 0.4 * (k as f64 * 0.3).sin()))
            .collect();
        let s0 = state(5.0);
        let traj = rollout_controls(&s0, &controls, &l).unwrap();
        let mut all = vec![s0];
        all.extend(traj.iter().copied());
        let back = back_derive_controls(&all, &l);
        let replay = rollout_controls(&s0, &back, &l).unwrap();
        for (a, b) in traj.iter().zip(&replay) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_decoder_matches_plain_rollout() {
        let l = Limits::default();
        let raw: Vec<f64> = (0..40).map(|i| ((i as f64) * 0.7).sin()).collect();
        let controls = decode_controls(&raw, 4.0, &l);
        let traj = rollout_controls(&state(4.0), &controls, &l).unwrap();
        let mut g = Graph::new();
        let r = g.input(Tensor::new(vec![1, 40], raw).unwrap());
        let tv = decode_rollout_tape(&mut g, r, &[4.0], &l).unwrap();
        for (k, s) in traj.iter().enumerate().take(20) {
            assert!((g.value(tv.x[k]).data()[0] - s.x).abs() < 1e-12);
            assert!((g.value(tv.y[k]).data()[0] - s.y).abs() < 1e-12);
            let h = g.value(tv.heading[k]).data()[0];
            assert!(wrap_angle(h - s.heading).abs() < 1e-12);
        }
    }
}
