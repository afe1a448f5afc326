//! VGG-family convolutional stacks (convolutional part only; no
//! classifier head is ever built).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use ndarray::Array2;

use super::{BackendDescriptor, BackendKind, Network, Op, Pooling, VggVariant, WeightSource};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::rng;
use crate::{Error, Result, Scalar};

/// Raw tensors for one convolution, flattened row-major as
/// `(out, in, 3, 3)` — the layout of the publicly distributed weights.
#[derive(Debug, Clone)]
pub struct ConvTensors {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub out_ch: usize,
    pub in_ch: usize,
}

/// A full set of ingested convolution weights in network order, plus
/// the checksum of the file they came from.
#[derive(Debug, Clone)]
pub struct PretrainedVgg {
    pub convs: Vec<ConvTensors>,
    pub sha256_hex: String,
}

/// Channel plan per block: (convs in block, output channels).
fn block_plan(variant: VggVariant) -> [(usize, usize); 5] {
    match variant {
        VggVariant::Vgg19 => [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)],
        VggVariant::Vgg16 => [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
    }
}

/// `(name, in_ch, out_ch)` for every conv, shallow to deep.
pub(crate) fn conv_plan(variant: VggVariant) -> Vec<(String, usize, usize)> {
    let mut plan = Vec::new();
    let mut in_ch = 3;
    for (b, (count, ch)) in block_plan(variant).into_iter().enumerate() {
        for i in 0..count {
            plan.push((format!("conv{}_{}", b + 1, i + 1), in_ch, ch));
            in_ch = ch;
        }
    }
    plan
}

fn seeded_conv<T: Scalar>(
    r: &mut rng::SeededRng,
    in_ch: usize,
    out_ch: usize,
) -> (Array2<T>, Vec<T>) {
    let fan_in = in_ch * 9;
    let bound = (6.0 / fan_in as f64).sqrt();
    let weight = Array2::from_shape_simple_fn((out_ch, fan_in), || {
        T::from_f64(rng::symmetric(r, bound))
    });
    let bias = alloc::vec![T::zero(); out_ch];
    (weight, bias)
}

pub(crate) fn build<T: Scalar>(
    variant: VggVariant,
    pooling: Pooling,
    seed: u64,
    pretrained: Option<PretrainedVgg>,
) -> Result<Network<T>> {
    let plan = conv_plan(variant);
    let weight_source = match &pretrained {
        Some(p) => {
            if p.convs.len() != plan.len() {
                return Err(Error::invalid(format!(
                    "pretrained weights carry {} convolutions, {:?} needs {}",
                    p.convs.len(),
                    variant,
                    plan.len()
                )));
            }
            WeightSource::Pretrained {
                sha256: p.sha256_hex.clone(),
            }
        }
        None => WeightSource::Seeded { seed },
    };

    let mut r = rng::seeded(seed);
    let mut ops: Vec<Op<T>> = Vec::new();
    let mut taps: Vec<(String, usize)> = Vec::new();
    let mut block = 1usize;
    for (ci, (name, in_ch, out_ch)) in plan.iter().enumerate() {
        let (weight, bias) = match &pretrained {
            Some(p) => {
                let c = &p.convs[ci];
                if c.in_ch != *in_ch || c.out_ch != *out_ch {
                    return Err(Error::invalid(format!(
                        "conv {name}: expected {in_ch}->{out_ch} channels, file has {}->{}",
                        c.in_ch, c.out_ch
                    )));
                }
                if c.weight.len() != out_ch * in_ch * 9 || c.bias.len() != *out_ch {
                    return Err(Error::invalid(format!(
                        "conv {name}: tensor sizes do not match declared channels"
                    )));
                }
                let weight = Array2::from_shape_vec(
                    (*out_ch, in_ch * 9),
                    c.weight.iter().map(|&v| T::from_f64(v as f64)).collect(),
                )
                .expect("validated size");
                let bias: Vec<T> = c.bias.iter().map(|&v| T::from_f64(v as f64)).collect();
                (weight, bias)
            }
            None => seeded_conv(&mut r, *in_ch, *out_ch),
        };
        ops.push(Op::Conv {
            weight,
            bias,
            in_ch: *in_ch,
        });
        taps.push((name.clone(), ops.len() - 1));
        ops.push(Op::Relu);
        // pool at each block boundary
        let this_block: usize = name[4..5].parse().expect("convN_");
        let next_block = plan.get(ci + 1).map(|(n, _, _)| {
            n[4..5].parse::<usize>().expect("convN_")
        });
        if next_block != Some(this_block) && ci + 1 < plan.len() {
            ops.push(Op::Pool(pooling));
            block += 1;
        }
    }
    debug_assert_eq!(block, 5);

    Ok(Network::assemble(
        ops,
        taps,
        false,
        BackendDescriptor {
            kind: BackendKind::Vgg,
            variant: Some(variant),
            pooling,
            weight_source,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg19_has_sixteen_convs_and_vgg16_thirteen() {
        assert_eq!(conv_plan(VggVariant::Vgg19).len(), 16);
        assert_eq!(conv_plan(VggVariant::Vgg16).len(), 13);
    }

    #[test]
    fn plan_names_and_channels() {
        let plan = conv_plan(VggVariant::Vgg19);
        assert_eq!(plan[0], ("conv1_1".to_string(), 3, 64));
        assert_eq!(plan[1], ("conv1_2".to_string(), 64, 64));
        assert_eq!(plan[15], ("conv5_4".to_string(), 512, 512));
    }
}
