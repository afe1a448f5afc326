//! Layer sweeps: re-run one experiment with the content (or style)
//! representation taken from each layer individually, everything else
//! pinned to the default protocol. Cells are independent and
//! restartable; a cell whose manifest already exists is skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylediff_core::backend::BackendKind;

use super::{run_spec, ExperimentSpec};
use crate::{io, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ContentLayer,
    StyleLayer,
}

/// The layers a sweep iterates over, shallow to deep.
pub fn sweep_layers(kind: BackendKind) -> Vec<String> {
    match kind {
        BackendKind::Vgg => ["conv1_2", "conv2_2", "conv3_2", "conv4_2", "conv5_2"]
            .map(String::from)
            .to_vec(),
        BackendKind::Tiny => ["conv1", "conv2", "conv3"].map(String::from).to_vec(),
    }
}

/// The content layer the style-axis protocol pins.
fn protocol_content_layer(kind: BackendKind) -> &'static str {
    match kind {
        BackendKind::Vgg => "conv4_2",
        BackendKind::Tiny => "conv2",
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub layer: String,
    pub spec: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub layer: String,
    pub dir: PathBuf,
    pub ok: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub cells: Vec<CellOutcome>,
    pub contact_sheet: Option<PathBuf>,
    pub dir: PathBuf,
}

impl SweepSummary {
    pub fn completed(&self) -> usize {
        self.cells.iter().filter(|c| c.ok).count()
    }
}

/// Derive the per-cell specs from a base experiment.
pub fn prepare_sweep(
    base: &ExperimentSpec,
    axis: SweepAxis,
    iterations_override: Option<usize>,
) -> Vec<SweepCell> {
    let kind = base.transfer.backend.kind;
    let layers = sweep_layers(kind);
    layers
        .into_iter()
        .map(|layer| {
            let mut spec = base.clone();
            spec.name = format!("{}_{}_{}", base.name, axis_slug(axis), layer);
            spec.output.dir = base.output.dir.join(format!("cell_{layer}"));
            if let Some(iters) = iterations_override {
                spec.transfer.iterations = iters;
            }
            match axis {
                SweepAxis::ContentLayer => {
                    // sweep the content layer; style side stays at the
                    // default five-layer protocol with default weights
                    spec.transfer.content_layers = vec![layer.clone()];
                    spec.transfer.content_weights =
                        BTreeMap::from([(layer.clone(), 1e4)]);
                    spec.transfer.style_layers = sweep_layers(kind);
                    spec.transfer.style_weights = BTreeMap::new();
                }
                SweepAxis::StyleLayer => {
                    // sweep one style layer at a time, content pinned
                    spec.transfer.style_layers = vec![layer.clone()];
                    spec.transfer.style_weights = BTreeMap::new();
                    let content = protocol_content_layer(kind).to_string();
                    spec.transfer.content_layers = vec![content.clone()];
                    spec.transfer.content_weights = BTreeMap::from([(content, 1e4)]);
                }
            }
            SweepCell { layer, spec }
        })
        .collect()
}

fn axis_slug(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::ContentLayer => "content",
        SweepAxis::StyleLayer => "style",
    }
}

/// Serialize each cell spec under `<gallery>/specs/` so cells can be
/// re-run individually (or farmed out to worker processes).
pub fn write_cell_specs(gallery: &Path, cells: &[SweepCell]) -> Result<Vec<PathBuf>> {
    let dir = gallery.join("specs");
    std::fs::create_dir_all(&dir)?;
    let mut paths = Vec::new();
    for cell in cells {
        let text = toml::to_string_pretty(&cell.spec)
            .map_err(|e| Error::spec("sweep cell", e.to_string()))?;
        let p = dir.join(format!("{}.toml", cell.layer));
        std::fs::write(&p, text)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Run one prepared cell unless its manifest already exists.
pub fn run_cell(cell: &SweepCell) -> CellOutcome {
    let dir = cell.spec.output.dir.clone();
    if dir.join("manifest.json").exists() {
        return CellOutcome {
            layer: cell.layer.clone(),
            dir,
            ok: true,
            message: "already complete".into(),
        };
    }
    match run_spec(&cell.spec) {
        Ok(_) => CellOutcome {
            layer: cell.layer.clone(),
            dir,
            ok: true,
            message: "ok".into(),
        },
        Err(e) => CellOutcome {
            layer: cell.layer.clone(),
            dir,
            ok: false,
            message: e.to_string(),
        },
    }
}

/// Tile the completed cells' generated images into one contact sheet.
pub fn contact_sheet(gallery: &Path, outcomes: &[CellOutcome]) -> Result<Option<PathBuf>> {
    let mut tiles = Vec::new();
    for cell in outcomes.iter().filter(|c| c.ok) {
        let p = cell.dir.join("generated.png");
        if p.exists() {
            tiles.push(io::load_image_native::<f32>(&p, true)?);
        }
    }
    if tiles.is_empty() {
        return Ok(None);
    }
    let gap = 4usize;
    let h = tiles.iter().map(|t| t.height()).max().unwrap();
    let w_total: usize =
        tiles.iter().map(|t| t.width()).sum::<usize>() + gap * (tiles.len() - 1);
    let mut sheet = ndarray::Array3::<f32>::from_elem((h, w_total, 1), 1.0);
    let mut x0 = 0usize;
    for t in &tiles {
        let px = t.pixels();
        for y in 0..t.height() {
            for x in 0..t.width() {
                sheet[[y, x0 + x, 0]] = px[[y, x, 0]];
            }
        }
        x0 += t.width() + gap;
    }
    let img = stylediff_core::image::ImageTensor::new(sheet, false)?;
    let path = gallery.join("contact_sheet.png");
    io::save_image(&img, &path)?;
    Ok(Some(path))
}

/// Write `summary.json` and the contact sheet for a finished sweep.
pub fn finish_sweep(
    gallery: &Path,
    axis: SweepAxis,
    outcomes: Vec<CellOutcome>,
) -> Result<SweepSummary> {
    std::fs::create_dir_all(gallery)?;
    let sheet = contact_sheet(gallery, &outcomes)?;
    let summary = SweepSummary {
        axis,
        cells: outcomes,
        contact_sheet: sheet,
        dir: gallery.to_path_buf(),
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::spec("sweep summary", e.to_string()))?;
    std::fs::write(gallery.join("summary.json"), json)?;
    Ok(summary)
}

/// Full in-process sweep: prepare cells, run each (continuing past
/// failures), then summarize.
pub fn layer_sweep(
    base: &ExperimentSpec,
    axis: SweepAxis,
    iterations_override: Option<usize>,
) -> Result<SweepSummary> {
    let gallery = base.output.dir.clone();
    std::fs::create_dir_all(&gallery)?;
    let cells = prepare_sweep(base, axis, iterations_override);
    write_cell_specs(&gallery, &cells)?;
    let outcomes: Vec<CellOutcome> = cells.iter().map(run_cell).collect();
    finish_sweep(&gallery, axis, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn base_spec(dir: &Path) -> ExperimentSpec {
        let fonts = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/fonts");
        let toml_text = format!(
            r#"
name = "sweep_smoke"
[inputs]
canvas = 32
content = {{ font = "{f}/DejaVuSans.ttf", char = "H" }}
style1 = {{ font = "{f}/DejaVuSerif.ttf", char = "H" }}
style2 = {{ font = "{f}/DejaVuSans.ttf", char = "H" }}
[transfer]
iterations = 2
style_layers = ["conv1", "conv2", "conv3"]
content_layers = ["conv2"]
[transfer.backend]
kind = "tiny"
[output]
dir = "gallery"
"#,
            f = fonts.display()
        );
        let p = dir.join("base.toml");
        std::fs::write(&p, toml_text).unwrap();
        ExperimentSpec::load(&p).unwrap()
    }

    #[test]
    fn content_sweep_produces_one_cell_per_layer() {
        let dir = tempfile::tempdir().unwrap();
        let base = base_spec(dir.path());
        let summary = layer_sweep(&base, SweepAxis::ContentLayer, Some(2)).unwrap();
        assert_eq!(summary.cells.len(), 3); // tiny backend has 3 layers
        assert_eq!(summary.completed(), 3);
        for cell in &summary.cells {
            assert!(cell.dir.join("generated.png").exists());
            assert!(cell.dir.join("loss_trace.csv").exists());
        }
        assert!(summary.contact_sheet.as_ref().unwrap().exists());
        assert!(dir.path().join("gallery/summary.json").exists());
        // cell specs are written for restart/worker use
        assert!(dir.path().join("gallery/specs/conv1.toml").exists());
    }

    #[test]
    fn style_sweep_pins_the_protocol_content_layer() {
        let dir = tempfile::tempdir().unwrap();
        let base = base_spec(dir.path());
        let cells = prepare_sweep(&base, SweepAxis::StyleLayer, Some(1));
        for cell in &cells {
            assert_eq!(cell.spec.transfer.style_layers, vec![cell.layer.clone()]);
            assert_eq!(cell.spec.transfer.content_layers, vec!["conv2".to_string()]);
            assert_eq!(cell.spec.transfer.content_weights["conv2"], 1e4);
        }
    }

    #[test]
    fn finished_cells_are_skipped_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let base = base_spec(dir.path());
        layer_sweep(&base, SweepAxis::ContentLayer, Some(1)).unwrap();
        let again = layer_sweep(&base, SweepAxis::ContentLayer, Some(1)).unwrap();
        assert!(again
            .cells
            .iter()
            .all(|c| c.ok && c.message == "already complete"));
    }

    #[test]
    fn failing_cells_do_not_abort_the_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = base_spec(dir.path());
        // sabotage: layer names that exist only partially would fail at
        // session build; instead point style1 at a file that vanishes
        // after validation
        let ghost = dir.path().join("ghost.png");
        image::ImageBuffer::from_pixel(32, 32, image::Luma([0u8]))
            .save(&ghost)
            .unwrap();
        base.inputs.style1 = super::super::InputSource::Image { image: ghost.clone() };
        let cells = prepare_sweep(&base, SweepAxis::ContentLayer, Some(1));
        std::fs::remove_file(&ghost).unwrap();
        let outcomes: Vec<CellOutcome> = cells.iter().map(run_cell).collect();
        assert!(outcomes.iter().all(|c| !c.ok));
        let summary = finish_sweep(&base.output.dir, SweepAxis::ContentLayer, outcomes);
        assert!(summary.is_ok());
    }
}
