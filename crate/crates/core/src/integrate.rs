//! Fixed-step closed-loop simulation.
//!
//! The plant and the observer share one augmented state `[x; z]` that is
//! advanced with classical RK4 substeps of `dt_int`. Control is recomputed at
//! the start of every controller period `dt_ctrl` and held constant over it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::{error_energy, ObserverConfig, ObserverState};
use crate::plant::{AffinePlant, ControlSample, StateVec};

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt_ctrl: f64,
    pub dt_int: f64,
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 100.0,
            dt_ctrl: 0.01,
            dt_int: 0.001,
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_end, self.dt_ctrl, self.dt_int].iter().all(|v| v.is_finite());
        if !finite || self.t_end <= 0.0 {
            return Err(Error::config("sim.t_end", "must be positive and finite"));
        }
        if !(self.dt_ctrl > 0.0) {
            return Err(Error::config("sim.dt_ctrl", "must be positive"));
        }
        if !(self.dt_int > 0.0) || self.dt_int > self.dt_ctrl {
            return Err(Error::config("sim.dt_int", "must satisfy 0 < dt_int <= dt_ctrl"));
        }
        if !divides(self.dt_ctrl, self.t_end) {
            return Err(Error::config("sim.dt_ctrl", "must divide t_end"));
        }
        if !divides(self.dt_int, self.dt_ctrl) {
            return Err(Error::config("sim.dt_int", "must divide dt_ctrl"));
        }
        if self.record_every == 0 {
            return Err(Error::config("sim.record_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn control_steps(&self) -> usize {
        (self.t_end / self.dt_ctrl).round() as usize
    }

    pub fn substeps(&self) -> usize {
        (self.dt_ctrl / self.dt_int).round() as usize
    }

    /// Spacing of recorded samples.
    pub fn record_dt(&self) -> f64 {
        self.dt_ctrl * self.record_every as f64
    }
}

fn divides(step: f64, span: f64) -> bool {
    let k = (span / step).round();
    k >= 1.0 && (k * step - span).abs() <= GRID_TOL
}

/// Barrier values recorded with every sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierSample {
    /// Barrier enforced by the controller, evaluated at the current estimate.
    pub h: f64,
    /// `h − σ·V_e` with the true observer error.
    pub h_de: f64,
}

/// A controller step that could not produce a control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub controls: Vec<ControlSample>,
    pub disturbances: Vec<DVector<f64>>,
    pub estimates: Vec<DVector<f64>>,
    pub barrier_values: Vec<BarrierSample>,
    pub failures: Vec<RunFailure>,
    /// First time a state was projected onto its lower bound. From then on the
    /// plant no longer follows its modelled vector field.
    pub first_clamp: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observer error energy `½‖d − d̂‖²` per sample.
    pub fn error_energy(&self) -> Vec<f64> {
        self.disturbances
            .iter()
            .zip(&self.estimates)
            .map(|(d, dh)| error_energy(d, dh))
            .collect()
    }

    /// First input channel per sample.
    pub fn input_series(&self) -> Vec<f64> {
        self.controls.iter().map(|c| c.u[0]).collect()
    }
}

/// A feedback law evaluated once per controller period.
pub trait ControlLaw {
    fn control(&self, t: f64, x: &StateVec, obs: &ObserverState) -> Result<ControlSample>;

    /// Barrier value `h_{d̂}(x, d̂)` enforced by this law, if any.
    fn barrier(&self, _x: &StateVec, _obs: &ObserverState) -> Option<f64> {
        None
    }

    /// Weight `σ` in `h_{d̂e} = h_{d̂} − σ·V_e`.
    fn robustness_weight(&self) -> f64 {
        0.0
    }
}

impl<F> ControlLaw for F
where
    F: Fn(f64, &StateVec, &ObserverState) -> Result<ControlSample>,
{
    fn control(&self, t: f64, x: &StateVec, obs: &ObserverState) -> Result<ControlSample> {
        self(t, x, obs)
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(deriv: F, t: f64, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let eval = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let k = deriv(t, y);
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::Integration {
                t,
                state: y.iter().copied().collect(),
            })
        }
    };
    let half = 0.5 * dt;
    let k1 = eval(t, x)?;
    let k2 = eval(t + half, &(x + &k1 * half))?;
    let k3 = eval(t + half, &(x + &k2 * half))?;
    let k4 = eval(t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Runs the closed loop from `x0` to `cfg.t_end`.
///
/// Barrier violations are recorded, not fatal. A controller error is logged
/// as a [`RunFailure`] and the previous control is held; a non-finite state
/// aborts the run.
pub fn simulate<C, D>(
    plant: &AffinePlant,
    controller: &C,
    observer: &ObserverConfig,
    disturbance: D,
    x0: &StateVec,
    cfg: &SimConfig,
) -> Result<Trajectory>
where
    C: ControlLaw + ?Sized,
    D: Fn(f64) -> DVector<f64>,
{
    cfg.validate()?;
    plant.check_state(x0)?;
    let n_x = plant.n_x();
    let n_d = plant.n_d();
    let steps = cfg.control_steps();
    let substeps = cfg.substeps();
    let sigma = controller.robustness_weight();

    let mut x = x0.clone();
    let mut obs = ObserverState::initial(observer, &x);
    let mut held = ControlSample::new(0.0, DVector::zeros(plant.n_u()), 0.0);
    let mut traj = Trajectory::default();

    for k in 0..=steps {
        let t = k as f64 * cfg.dt_ctrl;
        obs.refresh(observer, &x);
        match controller.control(t, &x, &obs) {
            Ok(c) if c.u.len() == plant.n_u() && c.u.iter().all(|v| v.is_finite()) && c.slack.is_finite() => {
                held = ControlSample::new(t, c.u, c.slack);
            }
            Ok(_) => {
                traj.failures.push(RunFailure {
                    t,
                    message: "controller returned a non-finite or mis-sized control".into(),
                });
                held.t = t;
            }
            Err(e) => {
                traj.failures.push(RunFailure {
                    t,
                    message: e.to_string(),
                });
                held.t = t;
            }
        }

        if k % cfg.record_every == 0 {
            let d = disturbance(t);
            let h = controller.barrier(&x, &obs).unwrap_or(f64::NAN);
            let h_de = h - sigma * error_energy(&d, &obs.d_hat);
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.controls.push(held.clone());
            traj.disturbances.push(d);
            traj.estimates.push(obs.d_hat.clone());
            traj.barrier_values.push(BarrierSample { h, h_de });
        }
        if k == steps {
            break;
        }

        let u = held.u.clone();
        let rhs = |tau: f64, y: &DVector<f64>| -> DVector<f64> {
            let xs = y.rows(0, n_x).into_owned();
            let z = y.rows(n_x, n_d).into_owned();
            let d = disturbance(tau);
            let f = plant.drift(&xs);
            let g1u = plant.input_gain(&xs) * &u;
            let g2 = plant.disturbance_gain(&xs);
            let xdot = &f + &g1u + &g2 * d;
            let d_hat = &z + observer.gain(&xs);
            let zdot = -(observer.gain_jacobian(&xs) * (f + g1u + g2 * d_hat));
            let mut out = DVector::zeros(n_x + n_d);
            out.rows_mut(0, n_x).copy_from(&xdot);
            out.rows_mut(n_x, n_d).copy_from(&zdot);
            out
        };

        let mut y = DVector::zeros(n_x + n_d);
        y.rows_mut(0, n_x).copy_from(&x);
        y.rows_mut(n_x, n_d).copy_from(&obs.z);
        for j in 0..substeps {
            let tau = t + j as f64 * cfg.dt_int;
            y = rk4_step(&rhs, tau, &y, cfg.dt_int)?;
            if let Some(lb) = plant.lower_bounds() {
                for i in 0..n_x {
                    if y[i] < lb[i] {
                        if traj.first_clamp.is_none() {
                            log::warn!("state component {i} clamped to {} at t = {tau}", lb[i]);
                            traj.first_clamp = Some(tau + cfg.dt_int);
                        }
                        y[i] = lb[i];
                    }
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: t + cfg.dt_ctrl,
                state: y.iter().copied().collect(),
            });
        }
        x = y.rows(0, n_x).into_owned();
        obs.z = y.rows(n_x, n_d).into_owned();
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{AlphaDConvention, StateBox};
    use nalgebra::DMatrix;

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn zero_field_keeps_state() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let y = rk4_step(|_, v| DVector::zeros(v.len()), 0.0, &x, 0.3).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn constant_field_integrates_exactly() {
        let y = rk4_step(|_, _| scalar(1.0), 0.0, &scalar(0.0), 0.1).unwrap();
        assert!((y[0] - 0.1).abs() < 1e-16);
    }

    #[test]
    fn exponential_decay_matches_analytic_solution() {
        let y = rk4_step(|_, v| -v, 0.0, &scalar(1.0), 0.1).unwrap();
        assert!((y[0] - (-0.1f64).exp()).abs() <= 1e-7);
        assert!((y[0] - 0.904_837_5).abs() < 1e-7);
    }

    #[test]
    fn non_finite_derivative_reports_time() {
        let err = rk4_step(|t, _| scalar(if t > 0.0 { f64::NAN } else { 0.0 }), 0.0, &scalar(1.0), 0.2)
            .unwrap_err();
        match err {
            Error::Integration { t, .. } => assert!((t - 0.1).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            dt_int: 0.003,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "sim.dt_int"));
        let bad = SimConfig {
            dt_ctrl: 0.03,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "sim.dt_ctrl"));
        let bad = SimConfig {
            record_every: 0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn integrator_plant() -> (AffinePlant, ObserverConfig) {
        let plant = AffinePlant::new(
            1,
            1,
            1,
            |_| DVector::zeros(1),
            |_| DMatrix::identity(1, 1),
            |_| DMatrix::identity(1, 1),
        );
        let obs = ObserverConfig::linear(
            &plant,
            vec![3.0],
            0.0,
            1.0,
            &StateBox::new(vec![-1.0], vec![1.0]),
            AlphaDConvention::Derived,
        )
        .unwrap();
        (plant, obs)
    }

    #[test]
    fn control_is_held_between_ticks() {
        let (plant, obs) = integrator_plant();
        let law = |t: f64, _: &StateVec, _: &ObserverState| Ok(ControlSample::new(t, scalar(t), 0.0));
        let cfg = SimConfig {
            t_end: 1.0,
            dt_ctrl: 0.1,
            dt_int: 0.01,
            record_every: 1,
        };
        let traj = simulate(&plant, &law, &obs, |_| scalar(0.0), &scalar(0.0), &cfg).unwrap();
        assert_eq!(traj.len(), 11);
        // ẋ = u held at t_k over [t_k, t_k + 0.1): x(1) = Σ 0.1·t_k.
        let expected: f64 = (0..10).map(|k| 0.1 * (k as f64 * 0.1)).sum();
        assert!((traj.states[10][0] - expected).abs() < 1e-12);
        for (t, c) in traj.times.iter().zip(&traj.controls) {
            assert_eq!(*t, c.u[0]);
        }
    }

    #[test]
    fn recording_decimates() {
        let (plant, obs) = integrator_plant();
        let law = |t: f64, _: &StateVec, _: &ObserverState| Ok(ControlSample::new(t, scalar(0.0), 0.0));
        let cfg = SimConfig {
            t_end: 1.0,
            dt_ctrl: 0.1,
            dt_int: 0.05,
            record_every: 5,
        };
        let traj = simulate(&plant, &law, &obs, |_| scalar(0.0), &scalar(0.0), &cfg).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn controller_errors_are_recorded_and_control_held() {
        let (plant, obs) = integrator_plant();
        let law = |t: f64, _: &StateVec, _: &ObserverState| {
            if t > 0.25 && t < 0.55 {
                Err(Error::Infeasible)
            } else {
                Ok(ControlSample::new(t, scalar(1.0), 0.0))
            }
        };
        let cfg = SimConfig {
            t_end: 1.0,
            dt_ctrl: 0.1,
            dt_int: 0.1,
            record_every: 1,
        };
        let traj = simulate(&plant, &law, &obs, |_| scalar(0.0), &scalar(0.0), &cfg).unwrap();
        assert_eq!(traj.failures.len(), 3);
        assert!((traj.failures[0].t - 0.3).abs() < 1e-12);
        assert!((traj.states[10][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observer_tracks_constant_disturbance() {
        let (plant, obs) = integrator_plant();
        let law = |t: f64, _: &StateVec, _: &ObserverState| Ok(ControlSample::new(t, scalar(0.0), 0.0));
        let cfg = SimConfig {
            t_end: 1.0,
            dt_ctrl: 0.01,
            dt_int: 0.001,
            record_every: 100,
        };
        let traj = simulate(&plant, &law, &obs, |_| scalar(2.0), &scalar(0.0), &cfg).unwrap();
        let e1 = 2.0 - traj.estimates[1][0];
        assert!((e1 / 2.0 - (-3.0f64).exp()).abs() < 1e-9);
        assert!((e1 / 2.0 - 0.0498).abs() < 1e-4);
    }

    #[test]
    fn runs_are_bit_identical() {
        let (plant, obs) = integrator_plant();
        let law = |t: f64, x: &StateVec, o: &ObserverState| {
            Ok(ControlSample::new(t, scalar(-x[0] - o.d_hat[0]), 0.0))
        };
        let cfg = SimConfig {
            t_end: 2.0,
            dt_ctrl: 0.01,
            dt_int: 0.001,
            record_every: 1,
        };
        let dist = |t: f64| scalar((3.0 * t).sin());
        let a = simulate(&plant, &law, &obs, dist, &scalar(1.0), &cfg).unwrap();
        let b = simulate(&plant, &law, &obs, dist, &scalar(1.0), &cfg).unwrap();
        // No barrier is attached, so h is NaN and compared by bit pattern.
        let bits = |t: &Trajectory| -> Vec<u64> {
            t.barrier_values.iter().flat_map(|b| [b.h.to_bits(), b.h_de.to_bits()]).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.times, b.times);
        assert_eq!(a.states, b.states);
        assert_eq!(a.controls, b.controls);
        assert_eq!(a.estimates, b.estimates);
    }

    #[test]
    fn lower_bounds_clamp_state() {
        let (plant, obs) = integrator_plant();
        let plant = plant.with_lower_bounds(scalar(0.0));
        let law = |t: f64, _: &StateVec, _: &ObserverState| Ok(ControlSample::new(t, scalar(-1.0), 0.0));
        let cfg = SimConfig {
            t_end: 1.0,
            dt_ctrl: 0.1,
            dt_int: 0.1,
            record_every: 1,
        };
        let traj = simulate(&plant, &law, &obs, |_| scalar(0.0), &scalar(0.5), &cfg).unwrap();
        assert!(traj.states.iter().all(|x| x[0] >= 0.0));
        assert_eq!(traj.states[10][0], 0.0);
        // x = 0.5 − t first goes negative in the sixth substep.
        let tc = traj.first_clamp.unwrap();
        assert!((tc - 0.6).abs() < 1e-12, "{tc}");
    }

    #[test]
    fn non_finite_state_aborts() {
        let plant = AffinePlant::new(
            1,
            1,
            1,
            |x| DVector::from_element(1, x[0] * x[0]),
            |_| DMatrix::identity(1, 1),
            |_| DMatrix::identity(1, 1),
        );
        let obs = ObserverConfig::linear(
            &plant,
            vec![3.0],
            0.0,
            1.0,
            &StateBox::new(vec![-1.0], vec![1.0]),
            AlphaDConvention::Derived,
        )
        .unwrap();
        let law = |t: f64, _: &StateVec, _: &ObserverState| Ok(ControlSample::new(t, scalar(0.0), 0.0));
        let cfg = SimConfig {
            t_end: 10.0,
            dt_ctrl: 0.5,
            dt_int: 0.5,
            record_every: 1,
        };
        let err = simulate(&plant, &law, &obs, |_| scalar(0.0), &scalar(10.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }
}
