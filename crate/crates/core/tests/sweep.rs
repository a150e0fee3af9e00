use dopcbf::acc::ControllerKind;
use dopcbf::experiment::{sweep_sigma, ExperimentConfig};

/// With the default road, a larger σ lets the filter sit closer to its
/// boundary: the minimum gap shrinks and the control gets smoother.
#[test]
fn larger_sigma_trades_gap_for_smoothness() {
    let cfg = ExperimentConfig {
        controller: ControllerKind::Dopcbf,
        ..ExperimentConfig::default()
    };
    let rows = sweep_sigma(&cfg, &[0.1, 1.0, 10.0]).unwrap();
    assert!(rows.iter().all(|r| r.status == "ok"));
    for w in rows.windows(2) {
        assert!(w[1].min_h <= w[0].min_h + 1e-9, "{rows:?}");
        assert!(w[1].rms_du < w[0].rms_du, "{rows:?}");
        assert!(w[1].min_hde >= -1e-6);
    }
}
