//! Run evaluation: control smoothness, barrier minima and paired comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;

/// Default transient excluded from the smoothness metric (s).
pub const DEFAULT_SKIP: f64 = 5.0;

/// RMS of the forward-difference rate of a uniformly sampled signal,
/// ignoring samples before `skip`.
pub fn rms_control_rate(u: &[f64], dt: f64, skip: f64) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidProblem(format!("sample period must be positive, got {dt}")));
    }
    if !(skip >= 0.0) {
        return Err(Error::InvalidProblem(format!("skip must be nonnegative, got {skip}")));
    }
    // Tolerate skip values that are an exact multiple of dt up to rounding.
    let start = ((skip / dt) - 1e-9).ceil().max(0.0) as usize;
    let have = u.len().saturating_sub(start);
    if have < 3 {
        return Err(Error::InsufficientSamples { needed: 3, have });
    }
    let tail = &u[start..];
    let sum: f64 = tail.windows(2).map(|w| ((w[1] - w[0]) / dt).powi(2)).sum();
    Ok((sum / (tail.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierMin {
    pub value: f64,
    pub time: f64,
    /// First sample with a negative value.
    pub first_negative: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierKind {
    H,
    HDe,
}

/// Minimum of a sampled series, skipping NaN samples.
pub fn min_series(times: &[f64], values: &[f64]) -> Option<BarrierMin> {
    let mut best: Option<BarrierMin> = None;
    let mut first_negative = None;
    for (&t, &v) in times.iter().zip(values) {
        if v.is_nan() {
            continue;
        }
        if v < 0.0 && first_negative.is_none() {
            first_negative = Some(t);
        }
        if best.is_none_or(|b| v < b.value) {
            best = Some(BarrierMin {
                value: v,
                time: t,
                first_negative: None,
            });
        }
    }
    best.map(|b| BarrierMin { first_negative, ..b })
}

pub fn min_barrier(traj: &Trajectory, which: BarrierKind) -> Option<BarrierMin> {
    let values: Vec<f64> = traj
        .barrier_values
        .iter()
        .map(|b| match which {
            BarrierKind::H => b.h,
            BarrierKind::HDe => b.h_de,
        })
        .collect();
    min_series(&traj.times, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub controller: String,
    /// RMS of `du/dt` after the transient skip (N/s).
    pub rms_du: f64,
    pub min_h: f64,
    pub min_h_time: f64,
    pub min_hde: f64,
    /// `min_h < 0`.
    pub violation: bool,
    pub violation_time: Option<f64>,
    pub qp_failures: usize,
    pub final_time: f64,
}

/// Summarizes a trajectory. `dt` must be the recording period.
pub fn report_from_trajectory(controller: &str, traj: &Trajectory, dt: f64, skip: f64) -> Result<RunReport> {
    if traj.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let u: Vec<f64> = traj.controls.iter().map(|c| c.u[0]).collect();
    let rms_du = rms_control_rate(&u, dt, skip)?;
    let h = min_barrier(traj, BarrierKind::H);
    let hde = min_barrier(traj, BarrierKind::HDe);
    let (min_h, min_h_time, violation_time) = match h {
        Some(b) => (b.value, b.time, b.first_negative),
        None => (f64::NAN, f64::NAN, None),
    };
    Ok(RunReport {
        controller: controller.to_string(),
        rms_du,
        min_h,
        min_h_time,
        min_hde: hde.map_or(f64::NAN, |b| b.value),
        violation: min_h < 0.0,
        violation_time,
        qp_failures: traj.failures.len(),
        final_time: *traj.times.last().unwrap_or(&0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchComparison {
    /// Pairs that entered the statistics.
    pub n_pairs: usize,
    /// Pairs dropped because the baseline RMS was zero.
    pub skipped: usize,
    /// Improvement of `b` over `a` in percent, `(a − b)/a·100`.
    pub mean_improvement: f64,
    pub max_improvement: f64,
    pub min_improvement: f64,
    /// Fraction of pairs with a strictly positive improvement.
    pub win_rate: f64,
}

/// Paired comparison of smoothness; `a` is the baseline.
pub fn compare_rms(a: &[f64], b: &[f64]) -> Result<BatchComparison> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "paired reports",
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut improvements = Vec::with_capacity(a.len());
    let mut skipped = 0;
    for (i, (&ra, &rb)) in a.iter().zip(b).enumerate() {
        if ra == 0.0 || !ra.is_finite() || !rb.is_finite() {
            log::warn!("pair {i} skipped: baseline rms {ra}, candidate rms {rb}");
            skipped += 1;
            continue;
        }
        improvements.push((ra - rb) / ra * 100.0);
    }
    if improvements.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let n = improvements.len();
    Ok(BatchComparison {
        n_pairs: n,
        skipped,
        mean_improvement: improvements.iter().sum::<f64>() / n as f64,
        max_improvement: improvements.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_improvement: improvements.iter().copied().fold(f64::INFINITY, f64::min),
        win_rate: improvements.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64,
    })
}

pub fn compare_batch(baseline: &[RunReport], candidate: &[RunReport]) -> Result<BatchComparison> {
    let a: Vec<f64> = baseline.iter().map(|r| r.rms_du).collect();
    let b: Vec<f64> = candidate.iter().map(|r| r.rms_du).collect();
    compare_rms(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sampled(dt: f64, t_end: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = (t_end / dt).round() as usize;
        (0..=n).map(|k| f(k as f64 * dt)).collect()
    }

    #[test]
    fn constant_signal_has_zero_rate() {
        assert_eq!(rms_control_rate(&[3.0; 10], 0.1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn unit_slope() {
        for dt in [1e-3, 0.01, 0.5] {
            let u = sampled(dt, 10.0, |t| t);
            assert!((rms_control_rate(&u, dt, 0.0).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sine_rate_matches_cosine_rms() {
        let u = sampled(1e-3, 2.0 * PI, f64::sin);
        let r = rms_control_rate(&u, 1e-3, 0.0).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn skip_removes_transient() {
        let u = sampled(0.01, 10.0, |t| if t < 5.0 { 100.0 * t } else { 500.0 });
        assert!(rms_control_rate(&u, 0.01, 0.0).unwrap() > 10.0);
        assert_eq!(rms_control_rate(&u, 0.01, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn insufficient_samples() {
        assert!(matches!(
            rms_control_rate(&[1.0, 2.0], 0.1, 0.0),
            Err(Error::InsufficientSamples { needed: 3, have: 2 })
        ));
        assert!(rms_control_rate(&[1.0; 10], 0.1, 0.85).is_err());
        assert!(rms_control_rate(&[1.0; 10], 0.0, 0.0).is_err());
    }

    #[test]
    fn halving_dt_moves_rms_by_first_order() {
        let r1 = rms_control_rate(&sampled(0.02, 10.0, |t| (2.0 * t).sin()), 0.02, 0.0).unwrap();
        let r2 = rms_control_rate(&sampled(0.01, 10.0, |t| (2.0 * t).sin()), 0.01, 0.0).unwrap();
        assert!((r1 - r2).abs() < 0.05);
    }

    #[test]
    fn barrier_minimum_scan() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let m = min_series(&t, &[3.0, 2.0, 1.5, 4.0]).unwrap();
        assert_eq!((m.value, m.time, m.first_negative), (1.5, 2.0, None));
        let m = min_series(&t, &[3.0, -0.5, 1.0, -2.0]).unwrap();
        assert_eq!((m.value, m.time, m.first_negative), (-2.0, 3.0, Some(1.0)));
        let m = min_series(&t, &[f64::NAN, 2.0, f64::NAN, 1.0]).unwrap();
        assert_eq!(m.value, 1.0);
        assert!(min_series(&t, &[f64::NAN; 4]).is_none());
    }

    #[test]
    fn comparison_examples() {
        let c = compare_rms(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((c.mean_improvement, c.max_improvement, c.min_improvement, c.win_rate), (0.0, 0.0, 0.0, 0.0));
        let c = compare_rms(&[0.0038], &[0.0034]).unwrap();
        assert!((c.mean_improvement - 10.526).abs() < 1e-3);
        let c = compare_rms(&[1.0, 2.0, 4.0], &[0.5, 1.5, 3.9]).unwrap();
        assert_eq!(c.win_rate, 1.0);
        assert_eq!(c.max_improvement, 50.0);
    }

    #[test]
    fn zero_baseline_pairs_are_skipped() {
        let c = compare_rms(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((c.n_pairs, c.skipped), (1, 1));
        assert_eq!(c.mean_improvement, 50.0);
        assert!(compare_rms(&[0.0], &[1.0]).is_err());
        assert!(compare_rms(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn offset_invariance(u in prop::collection::vec(-1e3..1e3f64, 3..60), c in -1e4..1e4f64) {
            let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
            let a = rms_control_rate(&u, 0.01, 0.0).unwrap();
            let b = rms_control_rate(&shifted, 0.01, 0.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        }
    }
}
