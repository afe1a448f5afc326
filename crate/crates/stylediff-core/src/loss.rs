//! Loss mathematics.
//!
//! Four scalar losses are defined over per-layer feature matrices and
//! Gram matrices:
//!
//! * `content_loss`  — weighted squared feature error, `w / (2 N M)`.
//! * `style_loss`    — weighted squared Gram error, `w / (4 N^2 M^2)`.
//! * `content_difference_loss` / `style_difference_loss` — the same
//!   normalizations applied to *differences of differences*: the gap
//!   between (generated - content) and (style1 - style2).
//!
//! Layers with zero weight are ignored; the per-layer weight maps are
//! the only weighting mechanism in difference mode (no global
//! alpha/beta), while classic mode combines its two terms with
//! [`NstWeights`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use ndarray::Array2;

use crate::gram::SignedLayerMatrices;
use crate::{Error, Result, Scalar};

/// Per-layer feature matrices of shape `N_l x M_l` (feature maps x
/// spatial positions), keyed by layer name.
pub type LayerFeatures<T> = BTreeMap<String, Array2<T>>;

/// `(N_l, M_l)` per layer; needed wherever a Gram matrix alone cannot
/// recover the spatial size.
pub type LayerDims = BTreeMap<String, (usize, usize)>;

/// Per-layer weights for the style and content terms. A missing or
/// zero entry disables the layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights<T: Scalar> {
    pub style: BTreeMap<String, T>,
    pub content: BTreeMap<String, T>,
}

impl<T: Scalar> LossWeights<T> {
    pub fn new(style: BTreeMap<String, T>, content: BTreeMap<String, T>) -> Result<Self> {
        for (name, &w) in style.iter().chain(content.iter()) {
            if !(w >= T::zero()) {
                return Err(Error::invalid(format!(
                    "weight for layer {name} must be >= 0, got {w}"
                )));
            }
        }
        Ok(Self { style, content })
    }

    /// Layers that actually contribute to the style term.
    pub fn active_style_layers(&self) -> impl Iterator<Item = (&String, T)> {
        self.style
            .iter()
            .filter(|(_, &w)| w > T::zero())
            .map(|(n, &w)| (n, w))
    }

    pub fn active_content_layers(&self) -> impl Iterator<Item = (&String, T)> {
        self.content
            .iter()
            .filter(|(_, &w)| w > T::zero())
            .map(|(n, &w)| (n, w))
    }
}

/// Global weighting of the two terms in classic style transfer. The
/// difference mode does not use these; its layers are weighted
/// individually instead.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NstWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl NstWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || (alpha == 0.0 && beta == 0.0) {
            return Err(Error::invalid(
                "alpha and beta must be >= 0 with at least one positive",
            ));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for NstWeights {
    /// Artifact defaults for the classic comparison mode.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1e3,
        }
    }
}

fn lookup<'a, T: Scalar>(
    map: &'a BTreeMap<String, Array2<T>>,
    name: &str,
    role: &str,
) -> Result<&'a Array2<T>> {
    map.get(name).ok_or_else(|| {
        Error::invalid(format!(
            "layer {name} missing from {role}; available: {:?}",
            map.keys().collect::<alloc::vec::Vec<_>>()
        ))
    })
}

fn check_same_shape<T: Scalar>(name: &str, a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "shape mismatch on layer {name}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Sum over active layers of `w / (2 N M) * sum((a - b)^2)`.
fn weighted_feature_sq_error<T: Scalar>(
    layers: impl Iterator<Item = (impl AsRef<str>, T)>,
    a: &BTreeMap<String, Array2<T>>,
    b: &BTreeMap<String, Array2<T>>,
) -> Result<T> {
    let two = T::from_f64(2.0);
    let mut total = T::zero();
    for (name, w) in layers {
        let name = name.as_ref();
        let fa = lookup(a, name, "first operand")?;
        let fb = lookup(b, name, "second operand")?;
        check_same_shape(name, fa, fb)?;
        let (n, m) = fa.dim();
        let mut sq = T::zero();
        for (x, y) in fa.iter().zip(fb.iter()) {
            let d = *x - *y;
            sq += d * d;
        }
        let norm = two * T::from_f64((n * m) as f64);
        total += w / norm * sq;
    }
    Ok(total)
}

/// Sum over active layers of `w / (4 N^2 M^2) * sum((a - b)^2)`, where
/// `(N, M)` come from `dims`.
fn weighted_gram_sq_error<T: Scalar>(
    layers: impl Iterator<Item = (impl AsRef<str>, T)>,
    a: &BTreeMap<String, Array2<T>>,
    b: &BTreeMap<String, Array2<T>>,
    dims: &LayerDims,
) -> Result<T> {
    let four = T::from_f64(4.0);
    let mut total = T::zero();
    for (name, w) in layers {
        let name = name.as_ref();
        let ga = lookup(a, name, "first operand")?;
        let gb = lookup(b, name, "second operand")?;
        check_same_shape(name, ga, gb)?;
        let &(n, m) = dims
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing dims for layer {name}")))?;
        let mut sq = T::zero();
        for (x, y) in ga.iter().zip(gb.iter()) {
            let d = *x - *y;
            sq += d * d;
        }
        let nm = (n * m) as f64;
        let norm = four * T::from_f64(nm * nm);
        total += w / norm * sq;
    }
    Ok(total)
}

/// Classic content loss between generated and content features.
pub fn content_loss<T: Scalar>(
    gen: &LayerFeatures<T>,
    content: &LayerFeatures<T>,
    weights: &LossWeights<T>,
) -> Result<T> {
    weighted_feature_sq_error(weights.active_content_layers(), gen, content)
}

/// Classic style loss between generated and style Gram matrices.
pub fn style_loss<T: Scalar>(
    gen_grams: &crate::gram::GramSet<T>,
    style_grams: &crate::gram::GramSet<T>,
    weights: &LossWeights<T>,
    dims: &LayerDims,
) -> Result<T> {
    weighted_gram_sq_error(weights.active_style_layers(), gen_grams, style_grams, dims)
}

/// Classic total: `alpha * content + beta * style`.
pub fn nst_total<T: Scalar>(content_term: T, style_term: T, w: &NstWeights) -> T {
    T::from_f64(w.alpha) * content_term + T::from_f64(w.beta) * style_term
}

/// Per-layer `a - b` over Gram sets (signed output).
pub fn gram_difference<T: Scalar>(
    a: &crate::gram::GramSet<T>,
    b: &crate::gram::GramSet<T>,
) -> Result<SignedLayerMatrices<T>> {
    crate::gram::matrix_difference(a, b)
}

/// Per-layer `a - b` over feature sets (signed output).
pub fn feature_difference<T: Scalar>(
    a: &LayerFeatures<T>,
    b: &LayerFeatures<T>,
) -> Result<SignedLayerMatrices<T>> {
    crate::gram::matrix_difference(a, b)
}

/// Squared error between the two style differences, normalized like
/// the classic style loss.
pub fn style_difference_loss<T: Scalar>(
    dg_gen: &SignedLayerMatrices<T>,
    dg_style: &SignedLayerMatrices<T>,
    weights: &LossWeights<T>,
    dims: &LayerDims,
) -> Result<T> {
    weighted_gram_sq_error(weights.active_style_layers(), dg_gen, dg_style, dims)
}

/// Squared error between the two content differences, normalized like
/// the classic content loss.
pub fn content_difference_loss<T: Scalar>(
    df_gen: &SignedLayerMatrices<T>,
    df_style: &SignedLayerMatrices<T>,
    weights: &LossWeights<T>,
) -> Result<T> {
    weighted_feature_sq_error(weights.active_content_layers(), df_gen, df_style)
}

/// Plain sum of the two difference terms; no global weighting factors.
pub fn total_difference_loss<T: Scalar>(content_diff: T, style_diff: T) -> T {
    content_diff + style_diff
}

// ---------------------------------------------------------------------------
// Gradients consumed by the optimization engine.
// ---------------------------------------------------------------------------

/// d(content-style squared error)/d(first operand), per layer:
/// `w / (N M) * (a - b)`.
pub(crate) fn feature_term_grad<T: Scalar>(
    layers: impl Iterator<Item = (impl AsRef<str>, T)>,
    a: &BTreeMap<String, Array2<T>>,
    b: &BTreeMap<String, Array2<T>>,
) -> Result<SignedLayerMatrices<T>> {
    let mut out = SignedLayerMatrices::new();
    for (name, w) in layers {
        let name = name.as_ref();
        let fa = lookup(a, name, "first operand")?;
        let fb = lookup(b, name, "second operand")?;
        check_same_shape(name, fa, fb)?;
        let (n, m) = fa.dim();
        let scale = w / T::from_f64((n * m) as f64);
        out.insert(String::from(name), (fa - fb).mapv(|d| d * scale));
    }
    Ok(out)
}

/// d(Gram-style squared error)/d(first operand), per layer:
/// `w / (2 N^2 M^2) * (a - b)`.
pub(crate) fn gram_term_grad<T: Scalar>(
    layers: impl Iterator<Item = (impl AsRef<str>, T)>,
    a: &BTreeMap<String, Array2<T>>,
    b: &BTreeMap<String, Array2<T>>,
    dims: &LayerDims,
) -> Result<SignedLayerMatrices<T>> {
    let mut out = SignedLayerMatrices::new();
    for (name, w) in layers {
        let name = name.as_ref();
        let ga = lookup(a, name, "first operand")?;
        let gb = lookup(b, name, "second operand")?;
        check_same_shape(name, ga, gb)?;
        let &(n, m) = dims
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing dims for layer {name}")))?;
        let nm = (n * m) as f64;
        let scale = w / T::from_f64(2.0 * nm * nm);
        out.insert(String::from(name), (ga - gb).mapv(|d| d * scale));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn one_layer(name: &str, m: Array2<f64>) -> BTreeMap<String, Array2<f64>> {
        let mut map = BTreeMap::new();
        map.insert(name.into(), m);
        map
    }

    fn weights_style(name: &str, w: f64) -> LossWeights<f64> {
        LossWeights::new(
            [(String::from(name), w)].into_iter().collect(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn weights_content(name: &str, w: f64) -> LossWeights<f64> {
        LossWeights::new(
            BTreeMap::new(),
            [(String::from(name), w)].into_iter().collect(),
        )
        .unwrap()
    }

    #[test]
    fn content_loss_zero_when_equal() {
        let f = one_layer("l", array![[0.3, 0.7]]);
        let w = weights_content("l", 5.0);
        assert_eq!(content_loss(&f, &f, &w).unwrap(), 0.0);
    }

    #[test]
    fn content_loss_hand_evaluated_case() {
        // one layer, N=1, M=2, w=2, difference [1, 1] -> 2/(2*1*2) * 2 = 1
        let gen = one_layer("l", array![[2.0, 3.0]]);
        let content = one_layer("l", array![[1.0, 2.0]]);
        let w = weights_content("l", 2.0);
        let loss = content_loss(&gen, &content, &w).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn content_loss_ignores_zero_weight_layers() {
        let gen = one_layer("l", array![[2.0, 3.0]]);
        let content = one_layer("l", array![[0.0, 0.0]]);
        let w = weights_content("l", 0.0);
        assert_eq!(content_loss(&gen, &content, &w).unwrap(), 0.0);
    }

    #[test]
    fn style_loss_hand_evaluated_case() {
        // one layer, N=1, M=1, w=4, delta G = [[1]] -> 4/(4*1*1) * 1 = 1
        let g1 = one_layer("l", array![[2.0]]);
        let g2 = one_layer("l", array![[1.0]]);
        let w = weights_style("l", 4.0);
        let dims: LayerDims = [(String::from("l"), (1usize, 1usize))].into_iter().collect();
        let loss = style_loss(&g1, &g2, &w, &dims).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn style_loss_scales_linearly_in_weights() {
        let mut r = rng::seeded(11);
        let d1 = Array2::from_shape_simple_fn((3, 4), || rng::symmetric(&mut r, 1.0));
        let d2 = Array2::from_shape_simple_fn((3, 4), || rng::symmetric(&mut r, 1.0));
        let g1 = one_layer("l", crate::gram::gram(&d1).unwrap());
        let g2 = one_layer("l", crate::gram::gram(&d2).unwrap());
        let dims: LayerDims = [(String::from("l"), (3usize, 4usize))].into_iter().collect();
        let base = style_loss(&g1, &g2, &weights_style("l", 1.0), &dims).unwrap();
        let scaled = style_loss(&g1, &g2, &weights_style("l", 3.5), &dims).unwrap();
        assert!((scaled - 3.5 * base).abs() <= 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn nst_total_arithmetic() {
        let w10 = NstWeights::new(1.0, 0.0).unwrap();
        assert_eq!(nst_total(1.0, 1.0, &w10), 1.0);
        let w12 = NstWeights::new(1.0, 2.0).unwrap();
        assert_eq!(nst_total(2.0, 3.0, &w12), 8.0);
        assert_eq!(nst_total(0.0, 0.0, &w12), 0.0);
    }

    #[test]
    fn nst_weights_reject_both_zero_or_negative() {
        assert!(NstWeights::new(0.0, 0.0).is_err());
        assert!(NstWeights::new(-1.0, 2.0).is_err());
        assert!(NstWeights::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn style_difference_loss_zero_when_differences_agree() {
        let dg = one_layer("l", array![[3.0, -1.0], [-1.0, 2.0]]);
        let w = weights_style("l", 7.0);
        let dims: LayerDims = [(String::from("l"), (2usize, 5usize))].into_iter().collect();
        assert_eq!(style_difference_loss(&dg, &dg, &w, &dims).unwrap(), 0.0);
        let zero = one_layer("l", Array2::zeros((2, 2)));
        assert_eq!(
            style_difference_loss(&zero, &zero, &w, &dims).unwrap(),
            0.0
        );
    }

    #[test]
    fn style_difference_loss_hand_evaluated_case() {
        // one layer, N=1, M=1, w=4, dG_gen=[[2]], dG_style=[[1]] -> 1
        let dg_gen = one_layer("l", array![[2.0]]);
        let dg_style = one_layer("l", array![[1.0]]);
        let w = weights_style("l", 4.0);
        let dims: LayerDims = [(String::from("l"), (1usize, 1usize))].into_iter().collect();
        let loss = style_difference_loss(&dg_gen, &dg_style, &w, &dims).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn content_difference_loss_hand_evaluated_case() {
        // one layer, N=1, M=2, w=2, dF_gen - dF_style = [1, 1] -> 1
        let df_gen = one_layer("l", array![[1.5, -0.5]]);
        let df_style = one_layer("l", array![[0.5, -1.5]]);
        let w = weights_content("l", 2.0);
        let loss = content_difference_loss(&df_gen, &df_style, &w).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn total_difference_loss_is_plain_sum() {
        assert_eq!(total_difference_loss(0.0, 0.0), 0.0);
        assert_eq!(total_difference_loss(1.5, 2.5), 4.0);
        // identical to the classic total with alpha = beta = 1
        let w = NstWeights::new(1.0, 1.0).unwrap();
        assert_eq!(total_difference_loss(1.5, 2.5), nst_total(1.5, 2.5, &w));
    }

    #[test]
    fn style_difference_degenerates_to_style_loss_against_zero() {
        // with second operands all zero, dG_gen = G_gen and dG_style = G_style,
        // so the difference loss must equal the plain style loss exactly
        let mut r = rng::seeded(3);
        let d1 = Array2::from_shape_simple_fn((4, 6), || rng::symmetric(&mut r, 1.0));
        let d2 = Array2::from_shape_simple_fn((4, 6), || rng::symmetric(&mut r, 1.0));
        let g_gen = one_layer("l", crate::gram::gram(&d1).unwrap());
        let g_style = one_layer("l", crate::gram::gram(&d2).unwrap());
        let zero = one_layer("l", Array2::zeros((4, 4)));
        let dg_gen = gram_difference(&g_gen, &zero).unwrap();
        let dg_style = gram_difference(&g_style, &zero).unwrap();
        let w = weights_style("l", 2.25);
        let dims: LayerDims = [(String::from("l"), (4usize, 6usize))].into_iter().collect();
        let a = style_difference_loss(&dg_gen, &dg_style, &w, &dims).unwrap();
        let b = style_loss(&g_gen, &g_style, &w, &dims).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn losses_error_on_shape_mismatch() {
        let a = one_layer("l", array![[1.0, 2.0]]);
        let b = one_layer("l", array![[1.0], [2.0]]);
        let w = weights_content("l", 1.0);
        assert!(content_loss(&a, &b, &w).is_err());
    }

    #[test]
    fn losses_invariant_under_layer_relabeling() {
        // moving the same data to a different name (with the weight map
        // renamed consistently) gives the identical value
        let mut r = rng::seeded(9);
        let fa = Array2::from_shape_simple_fn((2, 3), || rng::symmetric(&mut r, 1.0));
        let fb = Array2::from_shape_simple_fn((2, 3), || rng::symmetric(&mut r, 1.0));
        let l1 = content_loss(
            &one_layer("alpha", fa.clone()),
            &one_layer("alpha", fb.clone()),
            &weights_content("alpha", 2.0),
        )
        .unwrap();
        let l2 = content_loss(
            &one_layer("zeta", fa),
            &one_layer("zeta", fb),
            &weights_content("zeta", 2.0),
        )
        .unwrap();
        assert_eq!(l1, l2);
    }
}
