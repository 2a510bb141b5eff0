//! The benchmark layers of the five evaluation networks.

use std::fmt;

use cnnlayout::conv::ConvParams;
use cnnlayout::pool::{PoolMode, PoolParams};
use cnnlayout::{Result, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Conv {
        n: usize,
        c_o: usize,
        hw: usize,
        f: usize,
        c_i: usize,
        stride: usize,
        /// Not published; set so extent-preserving layers keep their size.
        pad: usize,
    },
    Pool {
        n: usize,
        hw: usize,
        win: usize,
        c: usize,
        stride: usize,
    },
    Class {
        n: usize,
        categories: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fixture {
    pub id: &'static str,
    pub network: &'static str,
    pub kind: FixtureKind,
}

const fn conv(id: &'static str, network: &'static str, n: usize, c_o: usize, hw: usize, f: usize, c_i: usize, stride: usize, pad: usize) -> Fixture {
    Fixture {
        id,
        network,
        kind: FixtureKind::Conv { n, c_o, hw, f, c_i, stride, pad },
    }
}

const fn pool(id: &'static str, network: &'static str, n: usize, hw: usize, win: usize, c: usize, stride: usize) -> Fixture {
    Fixture {
        id,
        network,
        kind: FixtureKind::Pool { n, hw, win, c, stride },
    }
}

const fn class(id: &'static str, network: &'static str, n: usize, categories: usize) -> Fixture {
    Fixture {
        id,
        network,
        kind: FixtureKind::Class { n, categories },
    }
}

pub const FIXTURES: [Fixture; 27] = [
    conv("CV1", "LeNet", 128, 16, 28, 5, 1, 1, 2),
    conv("CV2", "LeNet", 128, 16, 14, 5, 16, 1, 2),
    pool("PL1", "LeNet", 128, 28, 2, 16, 2),
    pool("PL2", "LeNet", 128, 14, 2, 16, 2),
    class("CLASS1", "LeNet", 128, 10),
    conv("CV3", "Cifar10", 128, 64, 24, 5, 3, 1, 2),
    conv("CV4", "Cifar10", 128, 64, 12, 5, 64, 1, 2),
    pool("PL3", "Cifar10", 128, 24, 3, 64, 2),
    pool("PL4", "Cifar10", 128, 12, 3, 64, 2),
    class("CLASS2", "Cifar10", 128, 10),
    pool("PL5", "AlexNet", 128, 55, 3, 96, 2),
    pool("PL6", "AlexNet", 128, 27, 3, 192, 2),
    pool("PL7", "AlexNet", 128, 13, 3, 256, 2),
    class("CLASS3", "AlexNet", 128, 1000),
    conv("CV5", "ZFNet", 64, 96, 224, 3, 3, 2, 0),
    conv("CV6", "ZFNet", 64, 256, 55, 5, 96, 2, 0),
    conv("CV7", "ZFNet", 64, 384, 13, 3, 256, 1, 1),
    conv("CV8", "ZFNet", 64, 384, 13, 3, 384, 1, 1),
    pool("PL8", "ZFNet", 64, 110, 3, 96, 2),
    pool("PL9", "ZFNet", 64, 26, 3, 256, 2),
    pool("PL10", "ZFNet", 64, 13, 3, 256, 2),
    class("CLASS4", "ZFNet", 64, 1000),
    conv("CV9", "VGG", 32, 64, 224, 3, 3, 1, 1),
    conv("CV10", "VGG", 32, 256, 56, 3, 128, 1, 1),
    conv("CV11", "VGG", 32, 512, 28, 3, 256, 1, 1),
    conv("CV12", "VGG", 32, 512, 14, 3, 512, 1, 1),
    class("CLASS5", "VGG", 32, 1000),
];

/// Spatial cap applied whenever `scale > 1`.
pub const SCALED_EXTENT_CAP: usize = 64;
pub const DEFAULT_SCALE: usize = 8;

pub fn fixture(id: &str) -> Option<Fixture> {
    FIXTURES.iter().copied().find(|f| f.id.eq_ignore_ascii_case(id))
}

pub fn conv_fixtures() -> impl Iterator<Item = Fixture> {
    FIXTURES.iter().copied().filter(|f| matches!(f.kind, FixtureKind::Conv { .. }))
}

pub fn pool_fixtures() -> impl Iterator<Item = Fixture> {
    FIXTURES.iter().copied().filter(|f| matches!(f.kind, FixtureKind::Pool { .. }))
}

pub fn class_fixtures() -> impl Iterator<Item = Fixture> {
    FIXTURES.iter().copied().filter(|f| matches!(f.kind, FixtureKind::Class { .. }))
}

impl Fixture {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            FixtureKind::Conv { .. } => "conv",
            FixtureKind::Pool { .. } => "pool",
            FixtureKind::Class { .. } => "class",
        }
    }

    /// `scale == 1` is the table verbatim; larger scales divide `N` (at
    /// least 1) and cap `H`/`W` at [`SCALED_EXTENT_CAP`].
    pub fn scaled(&self, scale: usize) -> Fixture {
        let scale = scale.max(1);
        if scale == 1 {
            return *self;
        }
        let n_of = |n: usize| (n / scale).max(1);
        let hw_of = |hw: usize| hw.min(SCALED_EXTENT_CAP);
        let kind = match self.kind {
            FixtureKind::Conv { n, c_o, hw, f, c_i, stride, pad } => FixtureKind::Conv {
                n: n_of(n),
                c_o,
                hw: hw_of(hw),
                f,
                c_i,
                stride,
                pad,
            },
            FixtureKind::Pool { n, hw, win, c, stride } => FixtureKind::Pool {
                n: n_of(n),
                hw: hw_of(hw),
                win,
                c,
                stride,
            },
            FixtureKind::Class { n, categories } => FixtureKind::Class { n: n_of(n), categories },
        };
        Fixture { kind, ..*self }
    }

    pub fn batch(&self) -> usize {
        match self.kind {
            FixtureKind::Conv { n, .. } | FixtureKind::Pool { n, .. } | FixtureKind::Class { n, .. } => n,
        }
    }

    /// Input activation shape; classifier fixtures are `N x categories x 1 x 1`.
    pub fn input_shape(&self) -> Result<Shape> {
        match self.kind {
            FixtureKind::Conv { n, hw, c_i, .. } => Shape::new(n, c_i, hw, hw),
            FixtureKind::Pool { n, hw, c, .. } => Shape::new(n, c, hw, hw),
            FixtureKind::Class { n, categories } => Shape::new(n, categories, 1, 1),
        }
    }

    pub fn conv_params(&self) -> Option<ConvParams> {
        match self.kind {
            FixtureKind::Conv { stride, pad, .. } => ConvParams::new(stride, pad).ok(),
            _ => None,
        }
    }

    /// Every pooling layer in these networks is max pooling.
    pub fn pool_params(&self) -> Option<PoolParams> {
        match self.kind {
            FixtureKind::Pool { win, stride, .. } => PoolParams::square(win, stride, PoolMode::Max).ok(),
            _ => None,
        }
    }

    pub const CSV_HEADER: &'static str = "id,kind,network,n,c_in,hw,c_out,f,stride,pad";

    pub fn csv_line(&self) -> String {
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
        let (n, c_in, hw, c_out, f, stride, pad) = match self.kind {
            FixtureKind::Conv { n, c_o, hw, f, c_i, stride, pad } => {
                (n, Some(c_i), Some(hw), Some(c_o), Some(f), Some(stride), Some(pad))
            }
            FixtureKind::Pool { n, hw, win, c, stride } => (n, Some(c), Some(hw), None, Some(win), Some(stride), None),
            FixtureKind::Class { n, categories } => (n, Some(categories), None, None, None, None, None),
        };
        format!(
            "{},{},{},{n},{},{},{},{},{},{}",
            self.id,
            self.kind_name(),
            self.network,
            opt(c_in),
            opt(hw),
            opt(c_out),
            opt(f),
            opt(stride),
            opt(pad)
        )
    }
}

impl fmt::Display for Fixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_table() {
        assert_eq!(FIXTURES.len(), 27);
        assert_eq!(conv_fixtures().count(), 12);
        assert_eq!(pool_fixtures().count(), 10);
        assert_eq!(class_fixtures().count(), 5);
        let cv = |id| match fixture(id).unwrap().kind {
            FixtureKind::Conv { n, c_o, hw, f, c_i, stride, .. } => (n, c_o, hw, f, c_i, stride),
            _ => panic!(),
        };
        assert_eq!(cv("CV1"), (128, 16, 28, 5, 1, 1));
        assert_eq!(cv("CV2"), (128, 16, 14, 5, 16, 1));
        assert_eq!(cv("CV3"), (128, 64, 24, 5, 3, 1));
        assert_eq!(cv("CV4"), (128, 64, 12, 5, 64, 1));
        assert_eq!(cv("CV5"), (64, 96, 224, 3, 3, 2));
        assert_eq!(cv("CV6"), (64, 256, 55, 5, 96, 2));
        assert_eq!(cv("CV7"), (64, 384, 13, 3, 256, 1));
        assert_eq!(cv("CV8"), (64, 384, 13, 3, 384, 1));
        assert_eq!(cv("CV9"), (32, 64, 224, 3, 3, 1));
        assert_eq!(cv("CV10"), (32, 256, 56, 3, 128, 1));
        assert_eq!(cv("CV11"), (32, 512, 28, 3, 256, 1));
        assert_eq!(cv("CV12"), (32, 512, 14, 3, 512, 1));
        let pl = |id| match fixture(id).unwrap().kind {
            FixtureKind::Pool { n, hw, win, c, stride } => (n, hw, win, c, stride),
            _ => panic!(),
        };
        assert_eq!(pl("PL1"), (128, 28, 2, 16, 2));
        assert_eq!(pl("PL2"), (128, 14, 2, 16, 2));
        assert_eq!(pl("PL3"), (128, 24, 3, 64, 2));
        assert_eq!(pl("PL4"), (128, 12, 3, 64, 2));
        assert_eq!(pl("PL5"), (128, 55, 3, 96, 2));
        assert_eq!(pl("PL6"), (128, 27, 3, 192, 2));
        assert_eq!(pl("PL7"), (128, 13, 3, 256, 2));
        assert_eq!(pl("PL8"), (64, 110, 3, 96, 2));
        assert_eq!(pl("PL9"), (64, 26, 3, 256, 2));
        assert_eq!(pl("PL10"), (64, 13, 3, 256, 2));
        let cl: Vec<_> = class_fixtures()
            .map(|f| match f.kind {
                FixtureKind::Class { n, categories } => (n, categories),
                _ => panic!(),
            })
            .collect();
        assert_eq!(cl, [(128, 10), (128, 10), (128, 1000), (64, 1000), (32, 1000)]);
    }

    #[test]
    fn padding_keeps_the_chain_consistent() {
        // CV1 feeds PL1 at 28 and CV3 feeds PL3 at 24; CV6 feeds PL9 at 26
        let out = |id| {
            let f = fixture(id).unwrap();
            let s = f.input_shape().unwrap();
            let FixtureKind::Conv { f: k, .. } = f.kind else { panic!() };
            let p = f.conv_params().unwrap();
            cnnlayout::conv::output_extent(s.h(), k, p.stride, p.pad).unwrap()
        };
        assert_eq!(out("CV1"), 28);
        assert_eq!(out("CV3"), 24);
        assert_eq!(out("CV6"), 26);
        assert_eq!(out("CV7"), 13);
        assert_eq!(out("CV10"), 56);
    }

    #[test]
    fn scaling() {
        let cv5 = fixture("cv5").unwrap();
        assert_eq!(cv5.scaled(1), cv5);
        let s = cv5.scaled(8).input_shape().unwrap();
        assert_eq!((s.n(), s.c(), s.h()), (8, 3, 64));
        assert_eq!(fixture("CV12").unwrap().scaled(64).batch(), 1);
        for f in FIXTURES {
            assert!(f.scaled(1000).input_shape().is_ok(), "{f}");
        }
    }

    #[test]
    fn csv_lines() {
        assert_eq!(fixture("CV7").unwrap().csv_line(), "CV7,conv,ZFNet,64,256,13,384,3,1,1");
        assert_eq!(fixture("PL1").unwrap().csv_line(), "PL1,pool,LeNet,128,16,28,,2,2,");
        assert_eq!(fixture("CLASS3").unwrap().csv_line(), "CLASS3,class,AlexNet,128,1000,,,,,");
    }
}
