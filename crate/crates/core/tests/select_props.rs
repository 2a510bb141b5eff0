use cnnlayout::select::{calibrate, choose_layout, HeuristicThresholds, LayerKind, Probe};
use cnnlayout::Layout;
use proptest::prelude::*;

/// Fixture conv layers as (name, N, C_i) and the layout reported faster for each.
const CONV_TABLE: [(&str, usize, usize, Layout); 12] = [
    ("CV1", 128, 1, Layout::Chwn),
    ("CV2", 128, 16, Layout::Chwn),
    ("CV3", 128, 3, Layout::Chwn),
    ("CV4", 128, 64, Layout::Chwn),
    ("CV5", 64, 3, Layout::Chwn),
    ("CV6", 64, 96, Layout::Nchw),
    ("CV7", 64, 256, Layout::Nchw),
    ("CV8", 64, 384, Layout::Nchw),
    ("CV9", 32, 3, Layout::Chwn),
    ("CV10", 32, 128, Layout::Nchw),
    ("CV11", 32, 256, Layout::Nchw),
    ("CV12", 32, 512, Layout::Nchw),
];

#[test]
fn preference_table() {
    for (name, n, c, want) in CONV_TABLE {
        let got = choose_layout(LayerKind::Convolution, n, c, HeuristicThresholds::TITAN_BLACK);
        assert_eq!(got, want, "{name}");
    }
}

proptest! {
    #[test]
    fn monotone(n in 1usize..512, c in 1usize..1024, dn in 0usize..256, dc in 0usize..1024, c_t in 1usize..512, n_t in 1usize..512) {
        let th = HeuristicThresholds::new(c_t, n_t).unwrap();
        let at = |n, c| choose_layout(LayerKind::Convolution, n, c, th);
        if at(n, c) == Layout::Chwn {
            prop_assert_eq!(at(n + dn, c), Layout::Chwn);
            prop_assert_eq!(at(n, c.saturating_sub(dc).max(1)), Layout::Chwn);
        }
        prop_assert_eq!(choose_layout(LayerKind::Pooling, n, c, th), Layout::Chwn);
    }

    #[test]
    fn calibration_is_deterministic(seed in any::<u64>()) {
        let model = |p: &Probe| {
            let h = (p.n as u64 * 31 + p.c as u64 * 17 + p.layout.code() as u64).wrapping_mul(seed | 1);
            Ok((h % 1000) as f64)
        };
        let a = calibrate(model).unwrap();
        let b = calibrate(model).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.thresholds.c_t >= 1 && a.thresholds.n_t >= 1);
    }
}
