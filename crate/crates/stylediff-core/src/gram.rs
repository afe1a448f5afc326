//! Gram matrices: the style representation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use ndarray::Array2;

use crate::{Error, Result, Scalar};

/// Per-layer Gram matrices, keyed by layer name. Iteration order is the
/// sorted name order, which coincides with shallow-to-deep for every
/// shipped backend (`conv1_2 < conv2_2 < ...`).
pub type GramSet<T> = BTreeMap<String, Array2<T>>;

/// Per-layer signed matrices (Gram or feature differences); same keying
/// as [`GramSet`] but with no positive-semidefiniteness expectation.
pub type SignedLayerMatrices<T> = BTreeMap<String, Array2<T>>;

/// `G = D * D^T` over a flattened feature matrix `D` of shape `N x M`.
///
/// Deliberately unnormalized; the `1/(4 N^2 M^2)` and `1/(2 N M)`
/// factors live in the loss denominators.
pub fn gram<T: Scalar>(features: &Array2<T>) -> Result<Array2<T>> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("gram input contains NaN or Inf"));
    }
    let g = features.dot(&features.t());
    Ok(g)
}

/// Per-layer elementwise `a - b`. Requires the same layer set and
/// per-layer shapes on both sides.
pub fn matrix_difference<T: Scalar>(
    a: &BTreeMap<String, Array2<T>>,
    b: &BTreeMap<String, Array2<T>>,
) -> Result<SignedLayerMatrices<T>> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::invalid("layer sets differ between operands"));
    }
    let mut out = SignedLayerMatrices::new();
    for (name, ma) in a {
        let mb = &b[name];
        if ma.dim() != mb.dim() {
            return Err(Error::invalid(format!(
                "shape mismatch on layer {name}: {:?} vs {:?}",
                ma.dim(),
                mb.dim()
            )));
        }
        out.insert(name.clone(), ma - mb);
    }
    Ok(out)
}
