//! Nonlinear disturbance observer
//!
//! ```text
//! ż = −l(x)·(f(x) + g1(x)·u + g2(x)·d̂)
//! d̂ = z + p(x),   l(x) = ∂p/∂x
//! ```
//!
//! With this structure the estimation error `e_d = d − d̂` obeys
//! `ė_d = ḋ − l(x)·g2(x)·e_d`, independent of the input. If `‖ḋ‖ ≤ ω` and
//! `l·g2 ⪰ κ·I`, Young's inequality gives
//! `V̇_e ≤ −2·α_d·V_e + ω²/(2ν)` for `V_e = ½‖e_d‖²` with `α_d = κ − ν/2`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{check_len, AffinePlant, StateVec};

pub type GainFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type GainJacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// How the observer convergence rate `α_d` is derived from `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaDConvention {
    /// `α_d = inf_x λ_min(l(x)·g2(x)) − ν/2`, the rate the Young's-inequality
    /// bound actually supports.
    #[default]
    Derived,
    /// `α_d = 1 − ν/4`, kept for comparison only.
    Printed,
}

/// Axis-aligned box of states used to bound `l(x)·g2(x)` from below.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        }
    }

    /// Visits a regular grid with `per_dim` points along each axis.
    pub fn for_each_grid_point(&self, per_dim: usize, mut visit: impl FnMut(&DVector<f64>)) {
        let n = self.lower.len();
        let per_dim = per_dim.max(1);
        let mut idx = vec![0usize; n];
        let mut x = DVector::zeros(n);
        loop {
            for k in 0..n {
                let frac = if per_dim == 1 {
                    0.5
                } else {
                    idx[k] as f64 / (per_dim - 1) as f64
                };
                x[k] = self.lower[k] + frac * (self.upper[k] - self.lower[k]);
            }
            visit(&x);
            let mut k = 0;
            loop {
                if k == n {
                    return;
                }
                idx[k] += 1;
                if idx[k] < per_dim {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Grid resolution used when bounding `l·g2` over a state box.
pub const GRID_POINTS_PER_DIM: usize = 50;

#[derive(Clone)]
pub struct ObserverConfig {
    n_x: usize,
    n_d: usize,
    gain: GainFn,
    gain_jacobian: GainJacobianFn,
    /// Bound on `‖ḋ‖`.
    pub omega: f64,
    /// Young's inequality weight.
    pub nu: f64,
    alpha_d: f64,
    convention: AlphaDConvention,
}

impl fmt::Debug for ObserverConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObserverConfig")
            .field("n_x", &self.n_x)
            .field("n_d", &self.n_d)
            .field("omega", &self.omega)
            .field("nu", &self.nu)
            .field("alpha_d", &self.alpha_d)
            .field("convention", &self.convention)
            .finish_non_exhaustive()
    }
}

impl ObserverConfig {
    /// Builds an observer for `plant` and computes `α_d` over `state_box`.
    ///
    /// Fails with a configuration error when `α_d ≤ 0` or `ν ≤ 0`.
    pub fn new(
        plant: &AffinePlant,
        gain: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        gain_jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        omega: f64,
        nu: f64,
        state_box: &StateBox,
        convention: AlphaDConvention,
    ) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::config("observer.nu", format!("must be positive, got {nu}")));
        }
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::config(
                "observer.omega",
                format!("must be nonnegative, got {omega}"),
            ));
        }
        check_len("state box", plant.n_x(), state_box.lower.len())?;
        let mut cfg = Self {
            n_x: plant.n_x(),
            n_d: plant.n_d(),
            gain: Arc::new(gain),
            gain_jacobian: Arc::new(gain_jacobian),
            omega,
            nu,
            alpha_d: 0.0,
            convention,
        };
        let alpha_d = match convention {
            AlphaDConvention::Derived => min_gain_coupling(&cfg, plant, state_box) - nu / 2.0,
            AlphaDConvention::Printed => 1.0 - nu / 4.0,
        };
        if !(alpha_d > 0.0) {
            return Err(Error::config(
                "observer.alpha_d",
                format!("observer convergence rate must be positive, got {alpha_d}"),
            ));
        }
        cfg.alpha_d = alpha_d;
        Ok(cfg)
    }

    /// Linear observer `p(x) = L·x` for a single disturbance channel.
    pub fn linear(
        plant: &AffinePlant,
        gain_row: Vec<f64>,
        omega: f64,
        nu: f64,
        state_box: &StateBox,
        convention: AlphaDConvention,
    ) -> Result<Self> {
        check_len("observer gain", plant.n_x(), gain_row.len())?;
        if plant.n_d() != 1 {
            return Err(Error::DimensionMismatch {
                context: "linear observer disturbance",
                expected: 1,
                got: plant.n_d(),
            });
        }
        let l = DMatrix::from_row_slice(1, gain_row.len(), &gain_row);
        let l_for_p = l.clone();
        Self::new(
            plant,
            move |x| &l_for_p * x,
            move |_| l.clone(),
            omega,
            nu,
            state_box,
            convention,
        )
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn alpha_d(&self) -> f64 {
        self.alpha_d
    }

    pub fn convention(&self) -> AlphaDConvention {
        self.convention
    }

    /// `p(x)`.
    pub fn gain(&self, x: &StateVec) -> DVector<f64> {
        (self.gain)(x)
    }

    /// `l(x) = ∂p/∂x`, an `n_d × n_x` matrix.
    pub fn gain_jacobian(&self, x: &StateVec) -> DMatrix<f64> {
        (self.gain_jacobian)(x)
    }

    /// Returns a copy with a different disturbance-rate bound. `α_d` is unchanged.
    pub fn with_omega(&self, omega: f64) -> Self {
        let mut c = self.clone();
        c.omega = omega;
        c
    }
}

/// `inf_x λ_min(sym(l(x)·g2(x)))` sampled on the grid of `state_box`.
pub fn min_gain_coupling(cfg: &ObserverConfig, plant: &AffinePlant, state_box: &StateBox) -> f64 {
    let mut lowest = f64::INFINITY;
    state_box.for_each_grid_point(GRID_POINTS_PER_DIM, |x| {
        let m = cfg.gain_jacobian(x) * plant.disturbance_gain(x);
        let sym = (&m + m.transpose()) * 0.5;
        let lam = if sym.nrows() == 1 {
            sym[(0, 0)]
        } else {
            sym.symmetric_eigenvalues().min()
        };
        lowest = lowest.min(lam);
    });
    lowest
}

/// Internal observer state and its current estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub z: DVector<f64>,
    pub d_hat: DVector<f64>,
}

impl ObserverState {
    /// Starts with no prior knowledge: `z(0) = −p(x0)` so `d̂(0) = 0`.
    pub fn initial(cfg: &ObserverConfig, x0: &StateVec) -> Self {
        let z = -cfg.gain(x0);
        let d_hat = &z + cfg.gain(x0);
        Self { z, d_hat }
    }

    /// Builds the state from `z` and recomputes `d̂ = z + p(x)`.
    pub fn from_internal(cfg: &ObserverConfig, z: DVector<f64>, x: &StateVec) -> Self {
        let d_hat = &z + cfg.gain(x);
        Self { z, d_hat }
    }

    pub fn refresh(&mut self, cfg: &ObserverConfig, x: &StateVec) {
        self.d_hat = &self.z + cfg.gain(x);
    }
}

/// `ż = −l(x)·(f(x) + g1(x)·u + g2(x)·(z + p(x)))`.
pub fn observer_rhs(
    cfg: &ObserverConfig,
    plant: &AffinePlant,
    x: &StateVec,
    u: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    plant.check_state(x)?;
    plant.check_input(u)?;
    check_len("observer state", cfg.n_d, z.len())?;
    let d_hat = z + cfg.gain(x);
    let xdot_est = plant.drift(x) + plant.input_gain(x) * u + plant.disturbance_gain(x) * d_hat;
    Ok(-(cfg.gain_jacobian(x) * xdot_est))
}

/// Upper bound on `V_e(t)` from the comparison lemma applied to
/// `V̇_e ≤ −2·α_d·V_e + ω²/(2ν)`.
pub fn envelope(cfg: &ObserverConfig, ve0: f64, t: f64) -> Result<f64> {
    envelope_with_rate(cfg.alpha_d, cfg.omega, cfg.nu, ve0, t)
}

pub fn envelope_with_rate(alpha_d: f64, omega: f64, nu: f64, ve0: f64, t: f64) -> Result<f64> {
    if !(alpha_d > 0.0) {
        return Err(Error::config(
            "observer.alpha_d",
            format!("must be positive, got {alpha_d}"),
        ));
    }
    if !(ve0 >= 0.0) || !(t >= 0.0) {
        return Err(Error::NonFinite("envelope requires Ve0 >= 0 and t >= 0"));
    }
    let asymptote = omega * omega / (4.0 * nu * alpha_d);
    if ve0 > asymptote {
        Ok((ve0 - asymptote) * (-2.0 * alpha_d * t).exp() + asymptote)
    } else {
        Ok(asymptote)
    }
}

/// `V_e = ½·‖d − d̂‖²`.
pub fn error_energy(d: &DVector<f64>, d_hat: &DVector<f64>) -> f64 {
    0.5 * (d - d_hat).norm_squared()
}

/// Road grade recovered from an along-road gravity estimate `d̂ = −g·sin θ̂`
/// (uphill positive). Out-of-range estimates saturate at ±π/2.
pub fn grade_from_estimate(d_hat: f64, g: f64) -> f64 {
    -(d_hat / g).clamp(-1.0, 1.0).asin()
}

/// Road-grade observer read-out: `d̂ = ξ + L_r·x` and the matching grade.
///
/// Returns `(θ̂, d̂)`.
pub fn road_grade_estimate(xi: &DVector<f64>, x: &StateVec, lr: &[f64], g: f64) -> (f64, f64) {
    let d_hat = xi[0] + lr.iter().zip(x.iter()).map(|(l, xi)| l * xi).sum::<f64>();
    (grade_from_estimate(d_hat, g), d_hat)
}
