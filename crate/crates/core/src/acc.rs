//! Adaptive cruise control under road-grade disturbance.
//!
//! State `x = [D, v]` (gap to the lead vehicle, ego speed), input `u`
//! (longitudinal force, N), disturbance `d = −g·sin θ` (along-road gravity,
//! m/s²) with `θ > 0` uphill:
//!
//! ```text
//! Ḋ = v_l − v
//! v̇ = (u − c·v²)/M + d
//! ```
//!
//! The safe gap is braking distance plus reaction distance,
//! `h = D − v²/(2(μ + sin θ̂)g) − T·v`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{
    assemble_qp, cbf_row_regular, clf_row, docbf_row, dopcbf_row, BarrierSpec, ClfSpec, ConstraintRow,
    RobustnessParams,
};
use crate::integrate::ControlLaw;
use crate::observer::{AlphaDConvention, ObserverConfig, ObserverState, StateBox};
use crate::plant::{AffinePlant, ControlSample, StateVec};
use crate::qp::solve_qp;

/// Smallest admissible `μ + sin θ̂` before the braking distance is treated as undefined.
pub const MIN_ADHESION_MARGIN: f64 = 0.05;

/// How the grade disturbance enters the speed equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceChannel {
    /// `v̇ += d`: the disturbance is an acceleration.
    #[default]
    Acceleration,
    /// `v̇ += d/M`, i.e. `g2 = [0, 1/M]`.
    MassScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccParams {
    /// Vehicle mass (kg).
    #[serde(rename = "M")]
    pub mass: f64,
    /// Aerodynamic drag coefficient (N·s²/m²).
    #[serde(rename = "c")]
    pub drag: f64,
    /// Reaction time (s).
    #[serde(rename = "T")]
    pub reaction_time: f64,
    pub mu: f64,
    pub g: f64,
    pub v_l: f64,
    pub v_r: f64,
    /// Steepest decline assumed by the worst-case barrier (rad, ≥ 0).
    pub theta_dm: f64,
    pub disturbance_channel: DisturbanceChannel,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            drag: 0.99428,
            reaction_time: 2.0,
            mu: 0.8,
            g: 9.81,
            v_l: 20.0,
            v_r: 25.0,
            theta_dm: 0.2,
            disturbance_channel: DisturbanceChannel::Acceleration,
        }
    }
}

impl AccParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("acc.M", self.mass),
            ("acc.T", self.reaction_time),
            ("acc.g", self.g),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.drag >= 0.0) || !self.drag.is_finite() {
            return Err(Error::config("acc.c", format!("must be nonnegative, got {}", self.drag)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.5) {
            return Err(Error::config("acc.mu", format!("must lie in (0, 1.5], got {}", self.mu)));
        }
        if !(self.v_l >= 0.0) || !self.v_l.is_finite() {
            return Err(Error::config("acc.v_l", format!("must be nonnegative, got {}", self.v_l)));
        }
        if !(self.v_r >= 0.0) || !self.v_r.is_finite() {
            return Err(Error::config("acc.v_r", format!("must be nonnegative, got {}", self.v_r)));
        }
        if !(self.theta_dm >= 0.0) || !(self.mu - self.theta_dm.sin() > 0.0) {
            return Err(Error::config(
                "acc.theta_dm",
                format!("need theta_dm >= 0 and mu - sin(theta_dm) > 0, got {}", self.theta_dm),
            ));
        }
        Ok(())
    }

    fn disturbance_scale(&self) -> f64 {
        match self.disturbance_channel {
            DisturbanceChannel::Acceleration => 1.0,
            DisturbanceChannel::MassScaled => 1.0 / self.mass,
        }
    }

    /// Along-road gravity disturbance for grade `theta`.
    pub fn grade_disturbance(&self, theta: f64) -> f64 {
        -self.g * theta.sin()
    }

    /// Drag-cancelling force `c·v²` that holds speed on a flat road.
    pub fn cruise_force(&self, v: f64) -> f64 {
        self.drag * v * v
    }

    /// The plant in control-affine form, with `v ≥ 0` enforced by the simulator.
    pub fn plant(&self) -> AffinePlant {
        let p = *self;
        let scale = self.disturbance_scale();
        AffinePlant::new(
            2,
            1,
            1,
            move |x| DVector::from_vec(vec![p.v_l - x[1], -p.drag * x[1] * x[1] / p.mass]),
            move |_| DMatrix::from_vec(2, 1, vec![0.0, 1.0 / p.mass]),
            move |_| DMatrix::from_vec(2, 1, vec![0.0, scale]),
        )
        .with_lower_bounds(DVector::from_vec(vec![f64::NEG_INFINITY, 0.0]))
    }
}

/// `[Ḋ, v̇]` for force `u` on grade `theta`.
pub fn vehicle_rhs(x: &StateVec, u: f64, theta: f64, p: &AccParams) -> Result<[f64; 2]> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            context: "vehicle state",
            expected: 2,
            got: x.len(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) || !u.is_finite() || !theta.is_finite() {
        return Err(Error::NonFinite("vehicle_rhs input"));
    }
    let mut v = x[1];
    if v < 0.0 {
        log::warn!("negative speed {v} clamped to 0");
        v = 0.0;
    }
    let dv = (u - p.drag * v * v) / p.mass + p.disturbance_scale() * p.grade_disturbance(theta);
    Ok([p.v_l - v, dv])
}

fn adhesion_margin(theta_hat: f64, p: &AccParams) -> Result<f64> {
    let margin = p.mu + theta_hat.sin();
    if margin < MIN_ADHESION_MARGIN || !margin.is_finite() {
        return Err(Error::DegenerateGrade {
            theta_hat,
            mu: p.mu,
            margin,
        });
    }
    Ok(margin)
}

/// Braking distance `v²/(2(μ + sin θ̂)g)`.
pub fn braking_distance(v: f64, theta_hat: f64, p: &AccParams) -> Result<f64> {
    let m = adhesion_margin(theta_hat, p)?;
    Ok(v * v / (2.0 * m * p.g))
}

/// `(∂D_sf/∂v, ∂D_sf/∂θ̂)`.
pub fn braking_distance_grad(v: f64, theta_hat: f64, p: &AccParams) -> Result<(f64, f64)> {
    let m = adhesion_margin(theta_hat, p)?;
    Ok((v / (m * p.g), -v * v * theta_hat.cos() / (2.0 * m * m * p.g)))
}

/// Grade-parameterized barrier `D − D_sf(v, θ̂) − T·v`.
pub fn h_dop_acc(x: &StateVec, theta_hat: f64, p: &AccParams) -> Result<f64> {
    Ok(x[0] - braking_distance(x[1], theta_hat, p)? - p.reaction_time * x[1])
}

/// `(∂h/∂D, ∂h/∂v, ∂h/∂θ̂)`.
pub fn h_dop_acc_grad(x: &StateVec, theta_hat: f64, p: &AccParams) -> Result<[f64; 3]> {
    let (dv, dtheta) = braking_distance_grad(x[1], theta_hat, p)?;
    Ok([1.0, -dv - p.reaction_time, -dtheta])
}

/// Worst-case barrier assuming the steepest decline `θ_dm`.
pub fn h_docbf_baseline(x: &StateVec, p: &AccParams) -> f64 {
    let v = x[1];
    x[0] - v * v / (2.0 * p.g * (p.mu - p.theta_dm.sin())) - p.reaction_time * v
}

pub fn h_docbf_baseline_grad(x: &StateVec, p: &AccParams) -> [f64; 2] {
    [1.0, -x[1] / (p.g * (p.mu - p.theta_dm.sin())) - p.reaction_time]
}

/// `sin θ̂` implied by an along-road gravity estimate, saturated to `[−1, 1]`.
fn sin_grade(d_hat: f64, p: &AccParams) -> f64 {
    (-d_hat / p.g).clamp(-1.0, 1.0)
}

/// Braking distance as a function of the raw estimate `d̂`:
/// `v²/(2(μ·g − d̂))` inside the saturation range.
fn braking_distance_from_estimate(v: f64, d_hat: f64, p: &AccParams) -> f64 {
    v * v / (2.0 * (p.mu + sin_grade(d_hat, p)) * p.g)
}

/// Regular barrier: flat-road braking distance, disturbance ignored.
pub fn regular_barrier(p: &AccParams, alpha: f64) -> BarrierSpec {
    let p = *p;
    BarrierSpec::nominal(
        move |x| x[0] - x[1] * x[1] / (2.0 * p.mu * p.g) - p.reaction_time * x[1],
        move |x| DVector::from_vec(vec![1.0, -x[1] / (p.mu * p.g) - p.reaction_time]),
        alpha,
    )
}

/// Worst-case barrier with `δ ≡ 0`.
pub fn worst_case_barrier(p: &AccParams, alpha: f64) -> BarrierSpec {
    let p = *p;
    BarrierSpec::nominal(
        move |x| h_docbf_baseline(x, &p),
        move |x| DVector::from_vec(h_docbf_baseline_grad(x, &p).to_vec()),
        alpha,
    )
}

/// Grade-parameterized barrier: the flat-road barrier plus
/// `δ(x, d̂) = D_sf(v, 0) − D_sf(v, θ̂(d̂))`.
///
/// Callers must check the adhesion guard before evaluating; outside it the
/// impact term is not finite.
pub fn grade_barrier(p: &AccParams, alpha: f64) -> BarrierSpec {
    let p = *p;
    let flat = move |v: f64| v * v / (2.0 * p.mu * p.g);
    regular_barrier(&p, alpha).with_delta(
        move |x, d| {
            let m = p.mu + sin_grade(d[0], &p);
            if m < MIN_ADHESION_MARGIN {
                return f64::NAN;
            }
            flat(x[1]) - braking_distance_from_estimate(x[1], d[0], &p)
        },
        move |x, d| {
            let m = p.mu + sin_grade(d[0], &p);
            if m < MIN_ADHESION_MARGIN {
                return DVector::from_element(2, f64::NAN);
            }
            let v = x[1];
            DVector::from_vec(vec![0.0, v / (p.mu * p.g) - v / (m * p.g)])
        },
        move |x, d| {
            let m = p.mu + sin_grade(d[0], &p);
            if m < MIN_ADHESION_MARGIN {
                return DVector::from_element(1, f64::NAN);
            }
            // d̂ saturates outside ±g and θ̂ stops moving.
            if d[0].abs() >= p.g {
                return DVector::zeros(1);
            }
            let v = x[1];
            let denom = m * p.g;
            DVector::from_element(1, -v * v / (2.0 * denom * denom))
        },
    )
}

/// Reference-speed CLF `V = (v − v_r)²`.
pub fn speed_clf(p: &AccParams, gamma: f64) -> ClfSpec {
    let v_r = p.v_r;
    ClfSpec::new(
        move |x| (x[1] - v_r).powi(2),
        move |x| DVector::from_vec(vec![0.0, 2.0 * (x[1] - v_r)]),
        gamma,
    )
}

/// Default observer validity box: gap, speed.
pub fn scenario_box() -> StateBox {
    StateBox::new(vec![10.0, 0.0], vec![120.0, 35.0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// Regular CBF, blind to the disturbance.
    Cbf,
    /// Disturbance-observer CBF with the worst-case grade barrier.
    Docbf,
    /// Grade-parameterized CBF driven by the observer estimate.
    Dopcbf,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Cbf, ControllerKind::Docbf, ControllerKind::Dopcbf];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Cbf => "cbf",
            ControllerKind::Docbf => "docbf",
            ControllerKind::Dopcbf => "dopcbf",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cbf" => Ok(ControllerKind::Cbf),
            "docbf" => Ok(ControllerKind::Docbf),
            "dopcbf" => Ok(ControllerKind::Dopcbf),
            other => Err(Error::config("controller", format!("unknown controller `{other}`"))),
        }
    }
}

/// Safety-filter settings shared by the three controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    /// Barrier rate α (1/s).
    pub alpha: f64,
    /// Observer-error weight σ.
    pub sigma: f64,
    /// Young's inequality weight ν.
    pub nu: f64,
    /// Disturbance-rate bound ω assumed by the controller.
    pub omega: f64,
    /// CLF rate γ (1/s).
    pub gamma: f64,
    /// Input weight; `None` means `1/M²`.
    pub w_u: Option<f64>,
    /// Slack weight.
    pub w_s: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            sigma: 1.0,
            nu: 1.0,
            omega: 0.0,
            gamma: 0.006,
            w_u: None,
            w_s: 100.0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config("filter.gamma", "must be nonnegative"));
        }
        if let Some(w) = self.w_u {
            if !(w > 0.0) {
                return Err(Error::config("filter.w_u", "must be positive"));
            }
        }
        if !(self.w_s > 0.0) {
            return Err(Error::config("filter.w_s", "must be positive"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("filter.alpha", "must be positive"));
        }
        Ok(())
    }
}

/// A CLF-CBF-QP cruise controller.
#[derive(Debug, Clone)]
pub struct AccController {
    pub kind: ControllerKind,
    pub params: AccParams,
    pub filter: FilterParams,
    plant: AffinePlant,
    observer: ObserverConfig,
    barrier: BarrierSpec,
    clf: ClfSpec,
    rp: RobustnessParams,
}

impl AccController {
    pub fn new(
        kind: ControllerKind,
        params: &AccParams,
        filter: &FilterParams,
        observer: &ObserverConfig,
    ) -> Result<Self> {
        params.validate()?;
        filter.validate()?;
        let rp = RobustnessParams::new(filter.sigma, filter.omega, filter.nu, observer.alpha_d());
        rp.validate(filter.alpha)?;
        let barrier = match kind {
            ControllerKind::Cbf => regular_barrier(params, filter.alpha),
            ControllerKind::Docbf => worst_case_barrier(params, filter.alpha),
            ControllerKind::Dopcbf => grade_barrier(params, filter.alpha),
        };
        Ok(Self {
            kind,
            params: *params,
            filter: *filter,
            plant: params.plant(),
            observer: observer.clone(),
            barrier,
            clf: speed_clf(params, filter.gamma),
            rp,
        })
    }

    pub fn plant(&self) -> &AffinePlant {
        &self.plant
    }

    pub fn barrier_spec(&self) -> &BarrierSpec {
        &self.barrier
    }

    pub fn robustness(&self) -> &RobustnessParams {
        &self.rp
    }

    fn input_weight(&self) -> f64 {
        self.filter.w_u.unwrap_or(1.0 / (self.params.mass * self.params.mass))
    }

    /// The estimate this controller acts on; the regular CBF ignores it.
    fn effective_estimate(&self, obs: &ObserverState) -> DVector<f64> {
        match self.kind {
            ControllerKind::Cbf => DVector::zeros(1),
            _ => obs.d_hat.clone(),
        }
    }

    /// CLF row followed by the barrier row.
    pub fn rows(&self, x: &StateVec, obs: &ObserverState) -> Result<Vec<ConstraintRow>> {
        let d_hat = self.effective_estimate(obs);
        let clf = clf_row(&self.clf, &self.plant, x, &d_hat);
        let barrier = match self.kind {
            ControllerKind::Cbf => cbf_row_regular(&self.barrier, &self.plant, x),
            ControllerKind::Docbf => docbf_row(&self.barrier, &self.rp, &self.plant, x, &d_hat)?,
            ControllerKind::Dopcbf => {
                adhesion_margin(self.estimated_grade(obs), &self.params)?;
                dopcbf_row(&self.barrier, &self.rp, &self.plant, &self.observer, x, &d_hat)?
            }
        };
        Ok(vec![clf, barrier])
    }

    pub fn estimated_grade(&self, obs: &ObserverState) -> f64 {
        crate::observer::grade_from_estimate(obs.d_hat[0], self.params.g)
    }
}

impl ControlLaw for AccController {
    fn control(&self, t: f64, x: &StateVec, obs: &ObserverState) -> Result<ControlSample> {
        let rows = self.rows(x, obs)?;
        let u_ref = DVector::from_element(1, self.params.cruise_force(x[1]));
        let qp = assemble_qp(&rows, &u_ref, self.input_weight(), self.filter.w_s)?;
        let sol = solve_qp(&qp)?;
        Ok(ControlSample::new(t, sol.z.rows(0, 1).into_owned(), sol.z[1]))
    }

    fn barrier(&self, x: &StateVec, obs: &ObserverState) -> Option<f64> {
        Some(match self.kind {
            ControllerKind::Cbf => self.barrier.h(x),
            ControllerKind::Docbf => self.barrier.h(x),
            ControllerKind::Dopcbf => self.barrier.h_dhat(x, &obs.d_hat),
        })
    }

    fn robustness_weight(&self) -> f64 {
        self.rp.sigma
    }
}

/// The three controllers compared in the experiments.
#[derive(Debug, Clone)]
pub struct AccControllers {
    pub regular_cbf: AccController,
    pub docbf: AccController,
    pub dopcbf: AccController,
}

impl AccControllers {
    pub fn get(&self, kind: ControllerKind) -> &AccController {
        match kind {
            ControllerKind::Cbf => &self.regular_cbf,
            ControllerKind::Docbf => &self.docbf,
            ControllerKind::Dopcbf => &self.dopcbf,
        }
    }
}

/// Road-grade observer `p(x) = L_r·x` for the cruise plant.
pub fn grade_observer(
    p: &AccParams,
    gain: [f64; 2],
    omega: f64,
    nu: f64,
    convention: AlphaDConvention,
) -> Result<ObserverConfig> {
    ObserverConfig::linear(&p.plant(), gain.to_vec(), omega, nu, &scenario_box(), convention)
}

pub fn build_acc_controllers(
    p: &AccParams,
    filter: &FilterParams,
    observer: &ObserverConfig,
) -> Result<AccControllers> {
    Ok(AccControllers {
        regular_cbf: AccController::new(ControllerKind::Cbf, p, filter, observer)?,
        docbf: AccController::new(ControllerKind::Docbf, p, filter, observer)?,
        dopcbf: AccController::new(ControllerKind::Dopcbf, p, filter, observer)?,
    })
}
