//! Config-driven experiment runs.
//!
//! An experiment spec is a TOML file with three blocks: `[inputs]`
//! (the glyph or image triple), `[transfer]` (engine configuration,
//! all fields optional), and `[output]` (the run directory). Running
//! one produces a fixed artifact set: `generated.png`,
//! `loss_trace.csv`, the two red/blue difference visualizations, any
//! snapshots, and a `manifest.json` capturing the fully resolved
//! configuration and backend identity.

pub mod sweep;
pub mod viz;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylediff_core::backend::BackendDescriptor;
use stylediff_core::image::ImageTensor;
use stylediff_core::optim::Termination;
use stylediff_core::transfer::{TracePoint, TransferConfig, TransferResult, TransferSession};

use crate::raster::GlyphSpec;
use crate::{io, weights, Error, Result};

pub const DEFAULT_CANVAS: usize = 256;
pub const DEFAULT_MARGIN: f64 = 0.15;
pub const DIFF_THRESHOLD: f64 = 0.5;

fn default_canvas() -> usize {
    DEFAULT_CANVAS
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

/// One input image: either a glyph to rasterize or an image file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum InputSource {
    Glyph {
        font: PathBuf,
        #[serde(rename = "char")]
        glyph: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        canvas: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
    },
    Image { image: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputsSpec {
    #[serde(default = "default_canvas")]
    pub canvas: usize,
    #[serde(default = "default_margin")]
    pub margin: f64,
    pub content: InputSource,
    pub style1: InputSource,
    pub style2: InputSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub inputs: InputsSpec,
    #[serde(default)]
    pub transfer: TransferConfig,
    pub output: OutputSpec,
}

impl ExperimentSpec {
    /// Parse a spec file, resolve its relative paths against the file's
    /// directory, and validate everything that can be checked before
    /// running.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::spec("file", format!("{}: {e}", path.display())))?;
        let mut spec: ExperimentSpec = toml::from_str(&text)
            .map_err(|e| Error::spec("parse", e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve_paths(base);
        spec.validate()?;
        Ok(spec)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        for src in [
            &mut self.inputs.content,
            &mut self.inputs.style1,
            &mut self.inputs.style2,
        ] {
            match src {
                InputSource::Glyph { font, .. } => fix(font),
                InputSource::Image { image } => fix(image),
            }
        }
        fix(&mut self.output.dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::spec("name", "must not be empty"));
        }
        if self.inputs.canvas == 0 {
            return Err(Error::spec("inputs.canvas", "must be positive"));
        }
        if !(0.0..0.4).contains(&self.inputs.margin) {
            return Err(Error::spec("inputs.margin", "must lie in [0, 0.4)"));
        }
        let mut image_dims: Vec<(String, (usize, usize))> = Vec::new();
        for (field, src) in [
            ("inputs.content", &self.inputs.content),
            ("inputs.style1", &self.inputs.style1),
            ("inputs.style2", &self.inputs.style2),
        ] {
            match src {
                InputSource::Glyph { font, glyph, canvas, margin } => {
                    if !font.exists() {
                        return Err(Error::spec(
                            format!("{field}.font"),
                            format!("no such file: {}", font.display()),
                        ));
                    }
                    if glyph.chars().count() != 1 {
                        return Err(Error::spec(
                            format!("{field}.char"),
                            format!("must be a single character, got {glyph:?}"),
                        ));
                    }
                    if let Some(c) = canvas {
                        if *c != self.inputs.canvas {
                            return Err(Error::spec(
                                format!("{field}.canvas"),
                                "per-input canvas must match inputs.canvas (all images share one size)",
                            ));
                        }
                    }
                    if let Some(m) = margin {
                        if !(0.0..0.4).contains(m) {
                            return Err(Error::spec(
                                format!("{field}.margin"),
                                "must lie in [0, 0.4)",
                            ));
                        }
                    }
                }
                InputSource::Image { image } => {
                    if !image.exists() {
                        return Err(Error::spec(
                            format!("{field}.image"),
                            format!("no such file: {}", image.display()),
                        ));
                    }
                    let (w, h) = image::image_dimensions(image)
                        .map_err(|e| Error::spec(format!("{field}.image"), e.to_string()))?;
                    image_dims.push((field.to_string(), (h as usize, w as usize)));
                }
            }
        }
        // every image input must agree with the canvas the glyphs render at
        let any_glyph = [&self.inputs.content, &self.inputs.style1, &self.inputs.style2]
            .iter()
            .any(|s| matches!(s, InputSource::Glyph { .. }));
        if let Some((first_field, first_dim)) = image_dims.first().cloned() {
            let expected = if any_glyph {
                (self.inputs.canvas, self.inputs.canvas)
            } else {
                first_dim
            };
            for (field, dim) in &image_dims {
                if *dim != expected {
                    return Err(Error::spec(
                        format!("{field}.image"),
                        format!(
                            "image size {}x{} does not match {} ({}x{})",
                            dim.0,
                            dim.1,
                            if any_glyph { "inputs.canvas" } else { first_field.as_str() },
                            expected.0,
                            expected.1
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The square size every input materializes at.
    pub fn resolved_size(&self) -> Result<usize> {
        let all_images: Option<Vec<&PathBuf>> =
            [&self.inputs.content, &self.inputs.style1, &self.inputs.style2]
                .into_iter()
                .map(|s| match s {
                    InputSource::Image { image } => Some(image),
                    _ => None,
                })
                .collect();
        if let Some(images) = all_images {
            let (w, h) = image::image_dimensions(images[0])
                .map_err(|e| Error::spec("inputs.content.image", e.to_string()))?;
            if w != h {
                // non-square image triples run at their native height
                return Ok(h as usize);
            }
            return Ok(w as usize);
        }
        Ok(self.inputs.canvas)
    }

    fn build_input(&self, src: &InputSource) -> Result<ImageTensor<f32>> {
        match src {
            InputSource::Glyph { font, glyph, canvas, margin } => {
                let c = glyph.chars().next().expect("validated single char");
                let spec = GlyphSpec::new(font.clone(), c)
                    .with_canvas(canvas.unwrap_or(self.inputs.canvas))
                    .with_margin(margin.unwrap_or(self.inputs.margin));
                crate::raster::rasterize_glyph(&spec)
            }
            InputSource::Image { image } => io::load_image_native(image, true),
        }
    }

    /// Materialize the (content, style1, style2) triple.
    pub fn build_inputs(&self) -> Result<[ImageTensor<f32>; 3]> {
        Ok([
            self.build_input(&self.inputs.content)?,
            self.build_input(&self.inputs.style1)?,
            self.build_input(&self.inputs.style2)?,
        ])
    }
}

fn describe_input(src: &InputSource) -> String {
    match src {
        InputSource::Glyph { font, glyph, .. } => {
            format!("glyph {:?} from {}", glyph, font.display())
        }
        InputSource::Image { image } => format!("image {}", image.display()),
    }
}

/// Everything recorded about a finished run; `manifest.json` is the
/// serialized form and round-trips losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub tool_version: String,
    /// The configuration exactly as executed.
    pub config: TransferConfig,
    /// Backend identity including the weight source checksum.
    pub backend: BackendDescriptor,
    pub weight_note: String,
    pub resolved_style_weights: BTreeMap<String, f64>,
    pub resolved_content_weights: BTreeMap<String, f64>,
    pub inputs: [String; 3],
    pub image_size: [usize; 3],
    pub iterations_run: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub wall_time_secs: f64,
    pub final_loss: TracePoint,
    pub artifacts: Vec<String>,
}

/// Write the comma-separated loss trace.
pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "iteration,content_diff,style_diff,total")?;
    for p in trace {
        writeln!(f, "{},{},{},{}", p.iteration, p.content_term, p.style_term, p.total)?;
    }
    Ok(())
}

/// Serialize the manifest as the run's last, atomic step.
pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let tmp = dir.join("manifest.json.tmp");
    let final_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::spec("manifest", e.to_string()))?;
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, &final_path)?;
    Ok(final_path)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::spec("manifest", e.to_string()))
}

/// Run a loaded spec and write its artifact set. Returns the output
/// directory.
pub fn run_spec(spec: &ExperimentSpec) -> Result<PathBuf> {
    let [content, style1, style2] = spec.build_inputs()?;
    let (pretrained, weight_note) =
        weights::weights_for_backend(&spec.transfer.backend, None, None)?;
    let session = TransferSession::<f32>::new(spec.transfer.clone(), pretrained)?;
    let result = session.run_transfer(&content, &style1, &style2)?;
    write_run_artifacts(
        &spec.output.dir,
        &spec.name,
        &session,
        &result,
        &content,
        &style1,
        &style2,
        weight_note,
        [
            describe_input(&spec.inputs.content),
            describe_input(&spec.inputs.style1),
            describe_input(&spec.inputs.style2),
        ],
    )?;
    Ok(spec.output.dir.clone())
}

/// Load, validate, and run a spec file.
pub fn run_experiment(spec_path: impl AsRef<Path>) -> Result<PathBuf> {
    let spec = ExperimentSpec::load(spec_path)?;
    run_spec(&spec)
}

/// Write the declared artifact set for a finished difference run.
#[allow(clippy::too_many_arguments)]
pub fn write_run_artifacts(
    dir: &Path,
    name: &str,
    session: &TransferSession<f32>,
    result: &TransferResult<f32>,
    content: &ImageTensor<f32>,
    style1: &ImageTensor<f32>,
    style2: &ImageTensor<f32>,
    weight_note: String,
    input_desc: [String; 3],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();

    io::save_image(&result.generated, dir.join("generated.png"))?;
    artifacts.push("generated.png".to_string());

    write_trace(&dir.join("loss_trace.csv"), &result.loss_trace)?;
    artifacts.push("loss_trace.csv".to_string());

    let style_diff = viz::diff_visualization(style1, style2, DIFF_THRESHOLD)?;
    io::save_image(&style_diff, dir.join("style_diff.png"))?;
    artifacts.push("style_diff.png".to_string());

    let gen_diff = viz::diff_visualization(&result.generated, content, DIFF_THRESHOLD)?;
    io::save_image(&gen_diff, dir.join("generated_content_diff.png"))?;
    artifacts.push("generated_content_diff.png".to_string());

    for (iter, snap) in &result.snapshots {
        let file = format!("iter_{iter}.png");
        io::save_image(snap, dir.join(&file))?;
        artifacts.push(file);
    }

    let weights = session.resolved_weights();
    let manifest = RunManifest {
        name: name.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: session.config().clone(),
        backend: session.network().descriptor().clone(),
        weight_note,
        resolved_style_weights: weights
            .style
            .iter()
            .map(|(k, v)| (k.clone(), *v as f64))
            .collect(),
        resolved_content_weights: weights
            .content
            .iter()
            .map(|(k, v)| (k.clone(), *v as f64))
            .collect(),
        inputs: input_desc,
        image_size: [content.height(), content.width(), content.channels()],
        iterations_run: result.loss_trace.last().map(|p| p.iteration).unwrap_or(0),
        evaluations: result.evaluations,
        termination: result.termination,
        wall_time_secs: result.wall_time_secs,
        final_loss: *result.loss_trace.last().expect("trace never empty"),
        artifacts,
    };
    write_manifest(dir, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fonts_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/fonts")
    }

    fn tiny_spec_toml(dir: &Path, name: &str) -> PathBuf {
        let fonts = fonts_dir();
        let toml_text = format!(
            r#"
name = "{name}"

[inputs]
canvas = 32
margin = 0.1
content = {{ font = "{f}/DejaVuSans.ttf", char = "A" }}
style1 = {{ font = "{f}/DejaVuSerif.ttf", char = "A" }}
style2 = {{ font = "{f}/DejaVuSans.ttf", char = "A" }}

[transfer]
iterations = 2
style_layers = ["conv1", "conv2", "conv3"]
content_layers = ["conv2"]

[transfer.backend]
kind = "tiny"
seed = 0

[output]
dir = "out/{name}"
"#,
            f = fonts.display()
        );
        let p = dir.join(format!("{name}.toml"));
        std::fs::write(&p, toml_text).unwrap();
        p
    }

    #[test]
    fn spec_parses_resolves_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = tiny_spec_toml(dir.path(), "smoke");
        let spec = ExperimentSpec::load(&p).unwrap();
        assert_eq!(spec.name, "smoke");
        assert_eq!(spec.inputs.canvas, 32);
        // output dir resolved relative to the spec file
        assert!(spec.output.dir.starts_with(dir.path()));
    }

    #[test]
    fn missing_font_is_a_named_spec_error() {
        let dir = tempfile::tempdir().unwrap();
        let toml_text = r#"
name = "bad"
[inputs]
content = { font = "/nope/missing.ttf", char = "A" }
style1 = { font = "/nope/missing.ttf", char = "A" }
style2 = { font = "/nope/missing.ttf", char = "A" }
[output]
dir = "out"
"#;
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, toml_text).unwrap();
        let err = ExperimentSpec::load(&p).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("inputs.content.font"), "{msg}");
        assert!(err.is_usage());
    }

    #[test]
    fn multi_char_glyph_is_rejected_by_field_name() {
        let dir = tempfile::tempdir().unwrap();
        let fonts = fonts_dir();
        let toml_text = format!(
            r#"
name = "bad"
[inputs]
content = {{ font = "{f}/DejaVuSans.ttf", char = "AB" }}
style1 = {{ font = "{f}/DejaVuSans.ttf", char = "A" }}
style2 = {{ font = "{f}/DejaVuSans.ttf", char = "A" }}
[output]
dir = "out"
"#,
            f = fonts.display()
        );
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, toml_text).unwrap();
        let err = ExperimentSpec::load(&p).unwrap_err();
        assert!(format!("{err}").contains("inputs.content.char"));
    }

    #[test]
    fn mismatched_image_sizes_fail_validation_with_nothing_written() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        image::ImageBuffer::from_pixel(16, 16, image::Luma([200u8]))
            .save(&a)
            .unwrap();
        image::ImageBuffer::from_pixel(8, 8, image::Luma([200u8]))
            .save(&b)
            .unwrap();
        let toml_text = format!(
            r#"
name = "mismatch"
[inputs]
content = {{ image = "{}" }}
style1 = {{ image = "{}" }}
style2 = {{ image = "{}" }}
[output]
dir = "out/mismatch"
"#,
            a.display(),
            b.display(),
            a.display()
        );
        let p = dir.path().join("mismatch.toml");
        std::fs::write(&p, toml_text).unwrap();
        let err = ExperimentSpec::load(&p).unwrap_err();
        assert!(format!("{err}").contains("style1"), "{err}");
        assert!(!dir.path().join("out/mismatch").exists());
    }

    #[test]
    fn run_writes_the_declared_artifact_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = tiny_spec_toml(dir.path(), "artifacts");
        let out = run_experiment(&p).unwrap();
        for f in [
            "generated.png",
            "loss_trace.csv",
            "style_diff.png",
            "generated_content_diff.png",
            "manifest.json",
        ] {
            assert!(out.join(f).exists(), "missing {f}");
        }
        let manifest = read_manifest(&out).unwrap();
        assert_eq!(manifest.name, "artifacts");
        assert_eq!(manifest.iterations_run, 2);
        // manifest round-trips to an equal value
        let json = serde_json::to_string(&manifest).unwrap();
        let back: RunManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(manifest, back);
        // csv header and row count
        let csv = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,content_diff,style_diff,total"
        );
        assert_eq!(lines.count(), manifest.iterations_run + 1);
    }
}
