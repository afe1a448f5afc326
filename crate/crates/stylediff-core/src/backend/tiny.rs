//! The `tiny` backend: three 3x3 convolutions (8, 16, 16 channels)
//! with rectifiers and 2x2 pooling between them, weights drawn once
//! from a seeded uniform distribution. It exists so every loss and
//! gradient test runs in milliseconds without any weight files.

use alloc::vec::Vec;

use super::{BackendDescriptor, BackendKind, Network, Op, Pooling, WeightSource};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::rng;
use crate::{Result, Scalar};

const CHANNELS: [usize; 3] = [8, 16, 16];

pub(crate) fn build<T: Scalar>(pooling: Pooling, seed: u64) -> Result<Network<T>> {
    let mut r = rng::seeded(seed);
    let mut ops: Vec<Op<T>> = Vec::new();
    let mut taps = Vec::new();
    let mut in_ch = 3usize;
    for (i, &out_ch) in CHANNELS.iter().enumerate() {
        let fan_in = in_ch * 9;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = ndarray::Array2::from_shape_simple_fn((out_ch, fan_in), || {
            T::from_f64(rng::symmetric(&mut r, bound))
        });
        ops.push(Op::Conv {
            weight,
            bias: alloc::vec![T::zero(); out_ch],
            in_ch,
        });
        taps.push((alloc::format!("conv{}", i + 1), ops.len() - 1));
        if i + 1 < CHANNELS.len() {
            ops.push(Op::Relu);
            ops.push(Op::Pool(pooling));
        }
        in_ch = out_ch;
    }
    Ok(Network::assemble(
        ops,
        taps,
        true,
        BackendDescriptor {
            kind: BackendKind::Tiny,
            variant: None,
            pooling,
            weight_source: WeightSource::Seeded { seed },
        },
    ))
}
