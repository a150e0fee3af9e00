//! Constraint rows for the CLF-CBF quadratic program.
//!
//! All rows are expressed in the canonical form
//! `coeff_u·u + coeff_slack·s ≤ bound` over the decision vector `[u, s]`,
//! where `s ≥ 0` relaxes the CLF row only. Barrier rows are hard.
//!
//! The disturbance-observer-parameterized barrier is `h_{d̂}(x, d̂) = h(x) + δ(x, d̂)`
//! and its row reads
//!
//! ```text
//! L_f h_{d̂} + L_{g1} h_{d̂}·u + L_{g2} h_{d̂}·d̂ ≥ −α·h_{d̂} + ι(x, d̂)
//! ι = ‖q‖² / (4(σα_d − σα/2)) + σω²/(2ν),   q = L_{g2} h_{d̂} + ∂δ/∂d̂·l(x)·g2(x)
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::ObserverConfig;
use crate::plant::{AffinePlant, StateVec};
use crate::qp::QpProblem;

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ImpactFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type ImpactGradientFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Barrier `h(x)` together with a disturbance-impact term `δ(x, d̂)`.
#[derive(Clone)]
pub struct BarrierSpec {
    h: ScalarFn,
    grad_h: GradientFn,
    delta: Option<ImpactFn>,
    grad_delta_x: Option<ImpactGradientFn>,
    grad_delta_d: Option<ImpactGradientFn>,
    /// Linear class-K rate (1/s).
    pub alpha: f64,
}

impl fmt::Debug for BarrierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BarrierSpec")
            .field("alpha", &self.alpha)
            .field("has_delta", &self.delta.is_some())
            .finish_non_exhaustive()
    }
}

impl BarrierSpec {
    /// A barrier with `δ ≡ 0`.
    pub fn nominal(
        h: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        alpha: f64,
    ) -> Self {
        Self {
            h: Arc::new(h),
            grad_h: Arc::new(grad_h),
            delta: None,
            grad_delta_x: None,
            grad_delta_d: None,
            alpha,
        }
    }

    /// Attaches `δ(x, d̂)` with its partial gradients.
    pub fn with_delta(
        mut self,
        delta: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_delta_x: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad_delta_d: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.delta = Some(Arc::new(delta));
        self.grad_delta_x = Some(Arc::new(grad_delta_x));
        self.grad_delta_d = Some(Arc::new(grad_delta_d));
        self
    }

    pub fn has_delta(&self) -> bool {
        self.delta.is_some()
    }

    pub fn h(&self, x: &StateVec) -> f64 {
        (self.h)(x)
    }

    pub fn grad_h(&self, x: &StateVec) -> DVector<f64> {
        (self.grad_h)(x)
    }

    pub fn delta(&self, x: &StateVec, d_hat: &DVector<f64>) -> f64 {
        self.delta.as_ref().map_or(0.0, |f| f(x, d_hat))
    }

    pub fn grad_delta_x(&self, x: &StateVec, d_hat: &DVector<f64>) -> DVector<f64> {
        self.grad_delta_x
            .as_ref()
            .map_or_else(|| DVector::zeros(x.len()), |f| f(x, d_hat))
    }

    pub fn grad_delta_d(&self, x: &StateVec, d_hat: &DVector<f64>) -> DVector<f64> {
        self.grad_delta_d
            .as_ref()
            .map_or_else(|| DVector::zeros(d_hat.len()), |f| f(x, d_hat))
    }

    /// `h_{d̂} = h + δ`.
    pub fn h_dhat(&self, x: &StateVec, d_hat: &DVector<f64>) -> f64 {
        self.h(x) + self.delta(x, d_hat)
    }

    /// `∂h_{d̂}/∂x`.
    pub fn grad_h_dhat(&self, x: &StateVec, d_hat: &DVector<f64>) -> DVector<f64> {
        self.grad_h(x) + self.grad_delta_x(x, d_hat)
    }
}

/// Observer-error weighting for the robust barrier `h_{d̂e} = h_{d̂} − σ·V_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessParams {
    pub sigma: f64,
    pub omega: f64,
    pub nu: f64,
    pub alpha_d: f64,
}

impl RobustnessParams {
    pub fn new(sigma: f64, omega: f64, nu: f64, alpha_d: f64) -> Self {
        Self {
            sigma,
            omega,
            nu,
            alpha_d,
        }
    }

    /// `σ·α_d − σ·α/2`.
    pub fn margin(&self, alpha: f64) -> f64 {
        self.sigma * self.alpha_d - self.sigma * alpha / 2.0
    }

    /// Checks `σ > 0`, `ν > 0` and `2α_d > α > 0`.
    pub fn validate(&self, alpha: f64) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("filter.sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::config("filter.nu", format!("must be positive, got {}", self.nu)));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::config("filter.omega", format!("must be nonnegative, got {}", self.omega)));
        }
        if !(alpha > 0.0) || !(2.0 * self.alpha_d > alpha) {
            return Err(Error::config(
                "filter.alpha",
                format!("need 2*alpha_d > alpha > 0, got alpha = {alpha}, alpha_d = {}", self.alpha_d),
            ));
        }
        if !(self.margin(alpha) > 0.0) {
            return Err(Error::config("filter.sigma", "sigma*alpha_d - sigma*alpha/2 must be positive"));
        }
        Ok(())
    }

    fn mitigation(&self, q: &RowDVector<f64>, alpha: f64) -> Result<f64> {
        let k = self.margin(alpha);
        if !(k > 0.0) {
            return Err(Error::config("filter.sigma", "sigma*alpha_d - sigma*alpha/2 must be positive"));
        }
        Ok(q.norm_squared() / (4.0 * k) + self.sigma * self.omega * self.omega / (2.0 * self.nu))
    }
}

/// Control Lyapunov function with linear decay rate `γ`.
#[derive(Clone)]
pub struct ClfSpec {
    v: ScalarFn,
    grad_v: GradientFn,
    pub gamma: f64,
}

impl fmt::Debug for ClfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClfSpec").field("gamma", &self.gamma).finish_non_exhaustive()
    }
}

impl ClfSpec {
    pub fn new(
        v: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_v: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        gamma: f64,
    ) -> Self {
        Self {
            v: Arc::new(v),
            grad_v: Arc::new(grad_v),
            gamma,
        }
    }

    pub fn v(&self, x: &StateVec) -> f64 {
        (self.v)(x)
    }

    pub fn grad_v(&self, x: &StateVec) -> DVector<f64> {
        (self.grad_v)(x)
    }

    /// Returns `k·V` with the same rate.
    pub fn scaled(&self, k: f64) -> Self {
        let v = self.v.clone();
        let gv = self.grad_v.clone();
        Self::new(move |x| k * v(x), move |x| gv(x) * k, self.gamma)
    }
}

/// `coeff_u·u + coeff_slack·s ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeff_u: DVector<f64>,
    pub coeff_slack: f64,
    pub bound: f64,
}

impl ConstraintRow {
    pub fn residual(&self, u: &DVector<f64>, s: f64) -> f64 {
        self.coeff_u.dot(u) + self.coeff_slack * s - self.bound
    }
}

/// Lie derivatives of a scalar function with gradient `grad` at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    pub lf: f64,
    pub lg1: RowDVector<f64>,
    pub lg2: RowDVector<f64>,
}

pub fn lie_derivatives(plant: &AffinePlant, x: &StateVec, grad: &DVector<f64>) -> LieDerivatives {
    let gt = grad.transpose();
    LieDerivatives {
        lf: grad.dot(&plant.drift(x)),
        lg1: &gt * plant.input_gain(x),
        lg2: &gt * plant.disturbance_gain(x),
    }
}

/// Slack-relaxed CLF row `L_{g1}V·u − s ≤ −γV − L_fV − L_{g2}V·d̂`.
pub fn clf_row(clf: &ClfSpec, plant: &AffinePlant, x: &StateVec, d_hat: &DVector<f64>) -> ConstraintRow {
    let lie = lie_derivatives(plant, x, &clf.grad_v(x));
    ConstraintRow {
        coeff_u: lie.lg1.transpose(),
        coeff_slack: -1.0,
        bound: -clf.gamma * clf.v(x) - lie.lf - (&lie.lg2 * d_hat)[0],
    }
}

/// Regular CBF row `−L_{g1}h·u ≤ L_fh + α·h`. Any `δ` in `spec` and the
/// disturbance are ignored.
pub fn cbf_row_regular(spec: &BarrierSpec, plant: &AffinePlant, x: &StateVec) -> ConstraintRow {
    let lie = lie_derivatives(plant, x, &spec.grad_h(x));
    ConstraintRow {
        coeff_u: -lie.lg1.transpose(),
        coeff_slack: 0.0,
        bound: lie.lf + spec.alpha * spec.h(x),
    }
}

/// Disturbance-observer CBF row with a disturbance-free barrier:
/// `−L_{g1}h·u ≤ L_fh + L_{g2}h·d̂ + α·h − ‖L_{g2}h‖²/(4(σα_d − σα/2)) − σω²/(2ν)`.
/// Any `δ` in `spec` is ignored.
pub fn docbf_row(
    spec: &BarrierSpec,
    rp: &RobustnessParams,
    plant: &AffinePlant,
    x: &StateVec,
    d_hat: &DVector<f64>,
) -> Result<ConstraintRow> {
    let lie = lie_derivatives(plant, x, &spec.grad_h(x));
    let iota = rp.mitigation(&lie.lg2, spec.alpha)?;
    Ok(ConstraintRow {
        coeff_u: -lie.lg1.transpose(),
        coeff_slack: 0.0,
        bound: lie.lf + (&lie.lg2 * d_hat)[0] + spec.alpha * spec.h(x) - iota,
    })
}

/// `q = L_{g2}h_{d̂} + ∂δ/∂d̂·l(x)·g2(x)`, the coupling of the observer error
/// into `ḣ_{d̂}`.
pub fn error_coupling(
    spec: &BarrierSpec,
    plant: &AffinePlant,
    obs: &ObserverConfig,
    x: &StateVec,
    d_hat: &DVector<f64>,
) -> RowDVector<f64> {
    let grad = spec.grad_h_dhat(x, d_hat);
    let g2 = plant.disturbance_gain(x);
    let lg2 = grad.transpose() * &g2;
    let dd = spec.grad_delta_d(x, d_hat).transpose();
    lg2 + dd * obs.gain_jacobian(x) * g2
}

/// Observer error mitigation term `ι(x, d̂)`.
pub fn iota(
    spec: &BarrierSpec,
    rp: &RobustnessParams,
    plant: &AffinePlant,
    obs: &ObserverConfig,
    x: &StateVec,
    d_hat: &DVector<f64>,
) -> Result<f64> {
    let q = error_coupling(spec, plant, obs, x, d_hat);
    rp.mitigation(&q, spec.alpha)
}

/// DOp-CBF row `−L_{g1}h_{d̂}·u ≤ L_fh_{d̂} + L_{g2}h_{d̂}·d̂ + α·h_{d̂} − ι`.
pub fn dopcbf_row(
    spec: &BarrierSpec,
    rp: &RobustnessParams,
    plant: &AffinePlant,
    obs: &ObserverConfig,
    x: &StateVec,
    d_hat: &DVector<f64>,
) -> Result<ConstraintRow> {
    let grad = spec.grad_h_dhat(x, d_hat);
    let lie = lie_derivatives(plant, x, &grad);
    let iota = iota(spec, rp, plant, obs, x, d_hat)?;
    Ok(ConstraintRow {
        coeff_u: -lie.lg1.transpose(),
        coeff_slack: 0.0,
        bound: lie.lf + (&lie.lg2 * d_hat)[0] + spec.alpha * spec.h_dhat(x, d_hat) - iota,
    })
}

/// Lower bound on `ḣ_{d̂e}` for input `u` and observer error `e_d`, using
/// `V̇_e ≤ −2α_d·V_e + ω²/(2ν)`:
///
/// `L_f h_{d̂} + L_{g1}h_{d̂}·u + L_{g2}h_{d̂}·d̂ + q·e_d + σ(2α_d·V_e − ω²/(2ν))`.
#[allow(clippy::too_many_arguments)]
pub fn robust_rate_lower_bound(
    spec: &BarrierSpec,
    rp: &RobustnessParams,
    plant: &AffinePlant,
    obs: &ObserverConfig,
    x: &StateVec,
    d_hat: &DVector<f64>,
    u: &DVector<f64>,
    e_d: &DVector<f64>,
) -> f64 {
    let lie = lie_derivatives(plant, x, &spec.grad_h_dhat(x, d_hat));
    let q = error_coupling(spec, plant, obs, x, d_hat);
    let ve = 0.5 * e_d.norm_squared();
    lie.lf + (&lie.lg1 * u)[0] + (&lie.lg2 * d_hat)[0] + (q * e_d)[0]
        + rp.sigma * (2.0 * rp.alpha_d * ve - rp.omega * rp.omega / (2.0 * rp.nu))
}

/// Decision vector `[u, s]` with cost `½w_u‖u − u_ref‖² + ½w_s·s²` and
/// `s ≥ 0` appended as the last row.
pub fn assemble_qp(rows: &[ConstraintRow], u_ref: &DVector<f64>, w_u: f64, w_s: f64) -> Result<QpProblem> {
    if !(w_u > 0.0) || !(w_s > 0.0) {
        return Err(Error::config("filter.weights", "QP weights must be positive"));
    }
    let n_u = u_ref.len();
    let n_z = n_u + 1;
    let m = rows.len() + 1;
    let mut h = DMatrix::zeros(n_z, n_z);
    for i in 0..n_u {
        h[(i, i)] = w_u;
    }
    h[(n_u, n_u)] = w_s;
    let mut f = DVector::zeros(n_z);
    f.rows_mut(0, n_u).copy_from(&(u_ref * -w_u));
    let mut g = DMatrix::zeros(m, n_z);
    let mut e = DVector::zeros(m);
    for (i, row) in rows.iter().enumerate() {
        if row.coeff_u.len() != n_u {
            return Err(Error::DimensionMismatch {
                context: "constraint row",
                expected: n_u,
                got: row.coeff_u.len(),
            });
        }
        g.view_mut((i, 0), (1, n_u)).copy_from(&row.coeff_u.transpose());
        g[(i, n_u)] = row.coeff_slack;
        e[i] = row.bound;
    }
    g[(m - 1, n_u)] = -1.0;
    QpProblem::new(h, f, g, e)
}
