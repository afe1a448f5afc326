//! Pretrained VGG weight handling.
//!
//! Weights travel as a safetensors file holding the convolutional
//! tensors under their torchvision names (`features.N.weight` /
//! `features.N.bias`, f32). `scripts/export_vgg_weights.py` produces
//! such a file from the public torchvision checkpoints; this module
//! finds it, checks its SHA-256, and hands the tensors to the engine.
//!
//! When no file resolves, VGG backends fall back to a deterministic
//! seeded initialization, so everything stays runnable (and testable)
//! without any download.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use stylediff_core::backend::{BackendConfig, BackendKind, ConvTensors, PretrainedVgg, VggVariant};

use crate::{Error, Result};

/// Environment variable pointing directly at a weights file.
pub const ENV_WEIGHTS_FILE: &str = "STYLEDIFF_VGG_WEIGHTS";
/// Environment variable naming the cache directory searched for
/// `vgg19.safetensors` / `vgg16.safetensors`.
pub const ENV_CACHE_DIR: &str = "STYLEDIFF_CACHE_DIR";

/// torchvision `features` indices of the conv layers.
fn conv_indices(variant: VggVariant) -> &'static [usize] {
    match variant {
        VggVariant::Vgg19 => &[0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34],
        VggVariant::Vgg16 => &[0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28],
    }
}

fn cache_file_name(variant: VggVariant) -> &'static str {
    match variant {
        VggVariant::Vgg19 => "vgg19.safetensors",
        VggVariant::Vgg16 => "vgg16.safetensors",
    }
}

/// Locate a weights file: explicit path, then `STYLEDIFF_VGG_WEIGHTS`,
/// then `STYLEDIFF_CACHE_DIR`, then `~/.cache/stylediff`.
pub fn resolve_weights_file(explicit: Option<&Path>, variant: VggVariant) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    if let Ok(p) = std::env::var(ENV_WEIGHTS_FILE) {
        if !p.is_empty() {
            return Some(PathBuf::from(p));
        }
    }
    let mut candidates = Vec::new();
    if let Ok(dir) = std::env::var(ENV_CACHE_DIR) {
        if !dir.is_empty() {
            candidates.push(PathBuf::from(dir).join(cache_file_name(variant)));
        }
    }
    if let Ok(home) = std::env::var("HOME") {
        candidates.push(
            PathBuf::from(home)
                .join(".cache/stylediff")
                .join(cache_file_name(variant)),
        );
    }
    candidates.into_iter().find(|p| p.exists())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn tensor_to_f32(view: &safetensors::tensor::TensorView<'_>, name: &str) -> Result<Vec<f32>> {
    if view.dtype() != safetensors::Dtype::F32 {
        return Err(Error::Weights(format!(
            "tensor {name} has dtype {:?}, expected F32",
            view.dtype()
        )));
    }
    Ok(view
        .data()
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

/// Load and verify a weights file. `expected_sha256`, when given, pins
/// the exact file.
pub fn load_pretrained(
    path: &Path,
    variant: VggVariant,
    expected_sha256: Option<&str>,
) -> Result<PretrainedVgg> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Weights(format!("cannot read {}: {e}", path.display())))?;
    let sha = sha256_hex(&bytes);
    if let Some(expected) = expected_sha256 {
        if !expected.eq_ignore_ascii_case(&sha) {
            return Err(Error::Weights(format!(
                "checksum mismatch for {}: expected {expected}, got {sha}",
                path.display()
            )));
        }
    }
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Weights(format!("cannot parse {}: {e}", path.display())))?;

    let mut convs = Vec::new();
    for idx in conv_indices(variant) {
        let wname = format!("features.{idx}.weight");
        let bname = format!("features.{idx}.bias");
        let w = st
            .tensor(&wname)
            .map_err(|e| Error::Weights(format!("missing tensor {wname}: {e}")))?;
        let b = st
            .tensor(&bname)
            .map_err(|e| Error::Weights(format!("missing tensor {bname}: {e}")))?;
        let shape = w.shape().to_vec();
        if shape.len() != 4 || shape[2] != 3 || shape[3] != 3 {
            return Err(Error::Weights(format!(
                "tensor {wname} has shape {shape:?}, expected (out, in, 3, 3)"
            )));
        }
        convs.push(ConvTensors {
            weight: tensor_to_f32(&w, &wname)?,
            bias: tensor_to_f32(&b, &bname)?,
            out_ch: shape[0],
            in_ch: shape[1],
        });
    }
    Ok(PretrainedVgg {
        convs,
        sha256_hex: sha,
    })
}

/// Resolve weights for a backend config: pretrained when the backend
/// is VGG and a file is found, seeded fallback otherwise. Returns the
/// loaded tensors (if any) and a note describing the source.
pub fn weights_for_backend(
    cfg: &BackendConfig,
    explicit: Option<&Path>,
    expected_sha256: Option<&str>,
) -> Result<(Option<PretrainedVgg>, String)> {
    if cfg.kind != BackendKind::Vgg {
        return Ok((None, "tiny backend (seeded)".to_string()));
    }
    match resolve_weights_file(explicit, cfg.variant) {
        Some(path) => {
            let loaded = load_pretrained(&path, cfg.variant, expected_sha256)?;
            let note = format!("pretrained from {} (sha256 {})", path.display(), loaded.sha256_hex);
            Ok((Some(loaded), note))
        }
        None => Ok((
            None,
            format!("seeded random init (seed {}); no weight file found", cfg.seed),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use safetensors::tensor::TensorView;
    use safetensors::Dtype;

    fn f32_bytes(v: &[f32]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    /// Build a miniature valid safetensors file for the VGG16 plan.
    fn fake_vgg16_file(path: &Path) {
        let plan: Vec<(usize, usize, usize)> = {
            // (index, in, out) mirroring the torchvision layout
            let idx = conv_indices(VggVariant::Vgg16);
            let mut chans = Vec::new();
            let blocks = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];
            let mut in_ch = 3;
            for (count, ch) in blocks {
                for _ in 0..count {
                    chans.push((in_ch, ch));
                    in_ch = ch;
                }
            }
            idx.iter()
                .zip(chans)
                .map(|(&i, (ic, oc))| (i, ic, oc))
                .collect()
        };
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (i, ic, oc) in plan {
            buffers.push((
                format!("features.{i}.weight"),
                vec![oc, ic, 3, 3],
                f32_bytes(&vec![0.01f32; oc * ic * 9]),
            ));
            buffers.push((
                format!("features.{i}.bias"),
                vec![oc],
                f32_bytes(&vec![0.0f32; oc]),
            ));
        }
        let views: Vec<(String, TensorView<'_>)> = buffers
            .iter()
            .map(|(n, shape, data)| {
                (
                    n.clone(),
                    TensorView::new(Dtype::F32, shape.clone(), data).unwrap(),
                )
            })
            .collect();
        let bytes = safetensors::serialize(views, None).unwrap();
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn loads_a_well_formed_file_and_checks_sha() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg16.safetensors");
        fake_vgg16_file(&path);
        let loaded = load_pretrained(&path, VggVariant::Vgg16, None).unwrap();
        assert_eq!(loaded.convs.len(), 13);
        assert_eq!(loaded.convs[0].in_ch, 3);
        assert_eq!(loaded.convs[0].out_ch, 64);
        // checksum pin: correct value passes, wrong value fails
        let sha = loaded.sha256_hex.clone();
        assert!(load_pretrained(&path, VggVariant::Vgg16, Some(&sha)).is_ok());
        let err = load_pretrained(&path, VggVariant::Vgg16, Some("deadbeef")).unwrap_err();
        assert!(matches!(err, Error::Weights(_)));
    }

    #[test]
    fn missing_tensors_are_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg19.safetensors");
        fake_vgg16_file(&path); // vgg16 layout lacks features.16.*
        let err = load_pretrained(&path, VggVariant::Vgg19, None).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("features.16"), "{msg}");
    }

    #[test]
    fn loaded_weights_build_a_working_backend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg16.safetensors");
        fake_vgg16_file(&path);
        let loaded = load_pretrained(&path, VggVariant::Vgg16, None).unwrap();
        let cfg = BackendConfig {
            variant: VggVariant::Vgg16,
            ..BackendConfig::default()
        };
        let net = cfg.build::<f32>(Some(loaded)).unwrap();
        let img = stylediff_core::image::ImageTensor::<f32>::random(32, 32, 1, 1).unwrap();
        let (f, _) = net.extract_features(&img, &["conv1_2"]).unwrap();
        assert!(f["conv1_2"].iter().all(|v| v.is_finite()));
        match &net.descriptor().weight_source {
            stylediff_core::backend::WeightSource::Pretrained { sha256 } => {
                assert_eq!(sha256.len(), 64)
            }
            other => panic!("expected pretrained source, got {other:?}"),
        }
    }

    #[test]
    fn resolution_prefers_explicit_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.safetensors");
        std::fs::write(&f, b"stub").unwrap();
        let got = resolve_weights_file(Some(&f), VggVariant::Vgg19).unwrap();
        assert_eq!(got, f);
    }
}
