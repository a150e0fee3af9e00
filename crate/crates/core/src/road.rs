//! Road-grade profiles.
//!
//! All profiles are piecewise linear in time between knots and hold the last
//! knot value afterwards. Grades are in radians, positive uphill.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest grade magnitude any profile may reach (rad).
pub const MAX_GRADE: f64 = 0.2;
/// Default bound on `|θ̇|` (rad/s).
pub const DEFAULT_RATE_BOUND: f64 = 0.02;
/// Spacing of random-road knots (s).
pub const RANDOM_KNOT_SPACING: f64 = 10.0;

const RATE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    ThreeSection,
    Random,
    Constant,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    pub kind: RoadKind,
    /// `(t, θ)` pairs with strictly increasing times.
    pub knots: Vec<(f64, f64)>,
    pub rate_bound: f64,
}

impl RoadProfile {
    /// Builds and validates a profile from explicit knots.
    pub fn from_knots(kind: RoadKind, knots: Vec<(f64, f64)>, rate_bound: f64) -> Result<Self> {
        let p = Self {
            kind,
            knots,
            rate_bound,
        };
        p.validate()?;
        Ok(p)
    }

    /// Flat, then a decline, then an incline.
    pub fn three_section() -> Self {
        Self {
            kind: RoadKind::ThreeSection,
            knots: vec![
                (0.0, 0.0),
                (30.0, 0.0),
                (40.0, -0.15),
                (65.0, -0.15),
                (80.0, 0.15),
                (100.0, 0.15),
            ],
            rate_bound: DEFAULT_RATE_BOUND,
        }
    }

    pub fn constant(theta: f64) -> Result<Self> {
        Self::from_knots(RoadKind::Constant, vec![(0.0, theta)], DEFAULT_RATE_BOUND)
    }

    /// Random grades drawn every 10 s from `U[−0.2, 0.2]`, with successive
    /// differences clipped so that the interpolated rate stays within `rate_bound`.
    pub fn random(seed: u64, t_end: f64, rate_bound: f64) -> Result<Self> {
        if !(rate_bound > 0.0) || !rate_bound.is_finite() {
            return Err(Error::config("road.rate_bound", format!("must be positive, got {rate_bound}")));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::config("sim.t_end", format!("must be positive, got {t_end}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_step = rate_bound * RANDOM_KNOT_SPACING;
        let n = (t_end / RANDOM_KNOT_SPACING).ceil() as usize;
        let mut knots = Vec::with_capacity(n + 1);
        let mut prev: Option<f64> = None;
        for i in 0..=n {
            let draw: f64 = rng.random_range(-MAX_GRADE..=MAX_GRADE);
            let theta = match prev {
                None => draw,
                Some(p) => p + (draw - p).clamp(-max_step, max_step),
            };
            knots.push((i as f64 * RANDOM_KNOT_SPACING, theta));
            prev = Some(theta);
        }
        Ok(Self {
            kind: RoadKind::Random,
            knots,
            rate_bound,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::config("road.knots", "at least one knot is required"));
        }
        if !(self.rate_bound > 0.0) || !self.rate_bound.is_finite() {
            return Err(Error::config("road.rate_bound", "must be positive"));
        }
        for (i, &(t, theta)) in self.knots.iter().enumerate() {
            if !t.is_finite() || !theta.is_finite() {
                return Err(Error::config("road.knots", format!("knot {i} is not finite")));
            }
            if theta.abs() > MAX_GRADE {
                return Err(Error::config(
                    "road.knots",
                    format!("knot {i}: |theta| = {} exceeds {MAX_GRADE}", theta.abs()),
                ));
            }
        }
        if self.knots[0].0 != 0.0 {
            return Err(Error::config("road.knots", "first knot must be at t = 0"));
        }
        if self.knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("road.knots", "knot times must be strictly increasing"));
        }
        let rate = self.max_rate();
        if rate > self.rate_bound * (1.0 + RATE_SLACK) {
            return Err(Error::config(
                "road.rate_bound",
                format!("profile rate {rate} exceeds bound {}", self.rate_bound),
            ));
        }
        Ok(())
    }

    /// Grade at time `t` (clamped to the knot range).
    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        // First knot strictly after t; t lies in [k[i-1], k[i]).
        let i = k.partition_point(|&(tk, _)| tk <= t);
        let (ta, a) = k[i - 1];
        let (tb, b) = k[i];
        let s = (t - ta) / (tb - ta);
        (1.0 - s) * a + s * b
    }

    /// Grade rate `θ̇` at `t` (right derivative).
    pub fn rate(&self, t: f64) -> f64 {
        let k = &self.knots;
        if k.len() < 2 || t < k[0].0 || t >= k[k.len() - 1].0 {
            return 0.0;
        }
        let i = k.partition_point(|&(tk, _)| tk <= t);
        (k[i].1 - k[i - 1].1) / (k[i].0 - k[i - 1].0)
    }

    /// Largest `|θ̇|` over all segments.
    pub fn max_rate(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }

    /// Two-column `t theta` table, one knot per line, values in shortest round-trip form.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# t theta\n");
        for (t, theta) in &self.knots {
            let _ = writeln!(out, "{t} {theta}");
        }
        out
    }

    /// Parses a two-column table; blank lines and `#` comments are ignored.
    pub fn from_table(text: &str, rate_bound: f64) -> Result<Self> {
        let mut knots = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            if cols.len() != 2 {
                return Err(Error::config(
                    "road.table",
                    format!("line {}: expected 2 columns, got {}", line_no + 1, cols.len()),
                ));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::config("road.table", format!("line {}: {e}", line_no + 1)))
            };
            knots.push((parse(cols[0])?, parse(cols[1])?));
        }
        Self::from_knots(RoadKind::Table, knots, rate_bound)
    }
}

/// Per-run seed derived from the master seed and the run index (splitmix64 finalizer).
pub fn run_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
