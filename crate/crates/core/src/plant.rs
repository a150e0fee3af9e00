//! Disturbed control-affine plants `ẋ = f(x) + g1(x)·u + g2(x)·d`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// State vector. For the cruise-control plant this is `[D, v]`.
pub type StateVec = DVector<f64>;

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A control-affine plant with a matched or unmatched additive disturbance channel.
///
/// Dimensions are fixed at construction. The functions must be pure.
#[derive(Clone)]
pub struct AffinePlant {
    n_x: usize,
    n_u: usize,
    n_d: usize,
    drift: VectorField,
    input_gain: MatrixField,
    disturbance_gain: MatrixField,
    lower_bounds: Option<DVector<f64>>,
}

impl fmt::Debug for AffinePlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AffinePlant")
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("n_d", &self.n_d)
            .field("lower_bounds", &self.lower_bounds)
            .finish_non_exhaustive()
    }
}

impl AffinePlant {
    pub fn new(
        n_x: usize,
        n_u: usize,
        n_d: usize,
        drift: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        input_gain: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        disturbance_gain: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n_x,
            n_u,
            n_d,
            drift: Arc::new(drift),
            input_gain: Arc::new(input_gain),
            disturbance_gain: Arc::new(disturbance_gain),
            lower_bounds: None,
        }
    }

    /// Componentwise lower bounds applied by the simulator after every substep.
    pub fn with_lower_bounds(mut self, bounds: DVector<f64>) -> Self {
        assert_eq!(bounds.len(), self.n_x, "lower bound length must equal n_x");
        self.lower_bounds = Some(bounds);
        self
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn lower_bounds(&self) -> Option<&DVector<f64>> {
        self.lower_bounds.as_ref()
    }

    pub fn drift(&self, x: &StateVec) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_gain(&self, x: &StateVec) -> DMatrix<f64> {
        (self.input_gain)(x)
    }

    pub fn disturbance_gain(&self, x: &StateVec) -> DMatrix<f64> {
        (self.disturbance_gain)(x)
    }

    pub(crate) fn check_state(&self, x: &StateVec) -> Result<()> {
        check_len("state", self.n_x, x.len())
    }

    pub(crate) fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        check_len("input", self.n_u, u.len())
    }

    pub(crate) fn check_disturbance(&self, d: &DVector<f64>) -> Result<()> {
        check_len("disturbance", self.n_d, d.len())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

/// Control applied over one controller period.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSample {
    pub t: f64,
    pub u: DVector<f64>,
    /// CLF relaxation, never negative.
    pub slack: f64,
}

impl ControlSample {
    pub fn new(t: f64, u: DVector<f64>, slack: f64) -> Self {
        Self {
            t,
            u,
            slack: slack.max(0.0),
        }
    }
}

/// Evaluates `f(x) + g1(x)·u + g2(x)·d`.
pub fn eval_affine_dynamics(
    plant: &AffinePlant,
    x: &StateVec,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    plant.check_state(x)?;
    plant.check_input(u)?;
    plant.check_disturbance(d)?;
    Ok(plant.drift(x) + plant.input_gain(x) * u + plant.disturbance_gain(x) * d)
}
