use cnnlayout::conv::{conv_direct, conv_fft, conv_gemm, conv_oracle, ConvParams};
use cnnlayout::layout::transform;
use cnnlayout::random::{uniform_filter, uniform_tensor};
use cnnlayout::{Layout, Shape, Tensor};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Config {
    n: usize,
    c: usize,
    hw: usize,
    c_o: usize,
    f: usize,
    stride: usize,
    pad: usize,
}

fn config() -> impl Strategy<Value = Config> {
    (1usize..40, 1usize..5, 1usize..9, 1usize..5, 1usize..4, 1usize..3, 0usize..3)
        .prop_filter("window fits", |&(_, _, hw, _, f, _, pad)| f <= hw + 2 * pad)
        .prop_map(|(n, c, hw, c_o, f, stride, pad)| Config { n, c, hw, c_o, f, stride, pad })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn algorithms_agree_with_oracle(cfg in config(), seed in any::<u64>()) {
        let shape = Shape::new(cfg.n, cfg.c, cfg.hw, cfg.hw).unwrap();
        let x = uniform_tensor::<f32>(shape, Layout::Nchw, seed);
        let f = uniform_filter::<f32>(cfg.c_o, cfg.c, cfg.f, cfg.f, seed ^ 1);
        let p = ConvParams::new(cfg.stride, cfg.pad).unwrap();
        let want = conv_oracle(&x, &f, p).unwrap();
        let chwn = conv_direct(&transform(&x, Layout::Chwn), &f, p).unwrap();
        prop_assert!(want.max_rel_diff(&chwn).unwrap() <= 1e-5);
        prop_assert!(want.max_rel_diff(&conv_direct(&x, &f, p).unwrap()).unwrap() <= 1e-5);
        prop_assert!(want.max_rel_diff(&conv_gemm(&x, &f, p).unwrap()).unwrap() <= 1e-5);
        match conv_fft(&x, &f, p) {
            Ok(y) => {
                prop_assert_eq!(cfg.stride, 1);
                prop_assert!(want.max_rel_diff(&y).unwrap() <= 1e-3);
            }
            Err(_) => prop_assert!(cfg.stride > 1),
        }
    }

    #[test]
    fn convolution_is_linear(cfg in config(), seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let shape = Shape::new(cfg.n.min(4), cfg.c, cfg.hw, cfg.hw).unwrap();
        let x = uniform_tensor::<f64>(shape, Layout::Nchw, seed);
        let y = uniform_tensor::<f64>(shape, Layout::Nchw, seed ^ 7);
        let f = uniform_filter::<f64>(cfg.c_o, cfg.c, cfg.f, cfg.f, seed ^ 3);
        let p = ConvParams::new(cfg.stride, cfg.pad).unwrap();
        let mix = Tensor::from_fn(shape, Layout::Nchw, |n, c, h, w| a * x.get(n, c, h, w) + b * y.get(n, c, h, w));
        let (cx, cy) = (conv_gemm(&x, &f, p).unwrap(), conv_gemm(&y, &f, p).unwrap());
        let lhs = conv_gemm(&mix, &f, p).unwrap();
        let rhs = Tensor::from_fn(lhs.shape(), Layout::Nchw, |n, c, h, w| a * cx.get(n, c, h, w) + b * cy.get(n, c, h, w));
        prop_assert!(lhs.max_rel_diff(&rhs).unwrap() <= 1e-10);
    }
}
