//! Empirical probe of the serif add/remove behavior across canvas
//! sizes, glyphs, and content fonts.
use std::path::PathBuf;
use stylediff::experiments::viz::{diff_counts, diff_visualization, ink_fraction};
use stylediff::raster::GlyphSpec;
use stylediff::weights;
use stylediff_core::transfer::{TransferConfig, TransferSession};

fn main() {
    let fonts = PathBuf::from("assets/fonts");
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(64);
    let iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);
    let glyph: char = args.get(3).and_then(|s| s.chars().next()).unwrap_or('A');
    let content_font = args.get(4).cloned().unwrap_or("cmss10.ttf".to_string());

    let rast = |font: &str, c: char| {
        stylediff::raster::rasterize_glyph::<f32>(
            &GlyphSpec::new(fonts.join(font), c).with_canvas(size),
        )
        .unwrap()
    };

    for (label, s1f, s2f, cf) in [
        ("serif-gen", "DejaVuSerif.ttf", "DejaVuSans.ttf", content_font.as_str()),
        ("serif-rem", "DejaVuSans.ttf", "DejaVuSerif.ttf", "STIXGeneral.ttf"),
    ] {
        let content = rast(cf, glyph);
        let s1 = rast(s1f, glyph);
        let s2 = rast(s2f, glyph);
        let cfg = TransferConfig { iterations: iters, ..TransferConfig::default() };
        let (pre, note) = weights::weights_for_backend(&cfg.backend, None, None).unwrap();
        let session = TransferSession::<f32>::new(cfg, pre).unwrap();
        let t = std::time::Instant::now();
        let r = session.run_transfer(&content, &s1, &s2).unwrap();
        let dt = t.elapsed().as_secs_f64();
        let diff = diff_visualization(&r.generated, &content, 0.5).unwrap();
        let c = diff_counts(&diff);
        let canvas_px = size * size;
        let ink_c = ink_fraction(&content, 0.5);
        let ink_g = ink_fraction(&r.generated, 0.5);
        println!(
            "{label} size={size} glyph={glyph} content={cf}: {:.1}s evals={} loss {:.1}->{:.1} ({:.1}%) red={} ({:.3}% canvas) blue={} ({:.3}%) ink_c={:.4} ink_g={:.4} (ratio {:.2}) [{}]",
            dt, r.evaluations,
            r.loss_trace.first().unwrap().total,
            r.loss_trace.last().unwrap().total,
            100.0 * r.loss_trace.last().unwrap().total / r.loss_trace.first().unwrap().total,
            c.red, 100.0 * c.red as f64 / canvas_px as f64,
            c.blue, 100.0 * c.blue as f64 / canvas_px as f64,
            ink_c, ink_g, ink_g / ink_c, note
        );
        let dir = PathBuf::from(format!("/tmp/probe_{label}_{size}_{glyph}"));
        std::fs::create_dir_all(&dir).unwrap();
        stylediff::io::save_image(&r.generated, dir.join("generated.png")).unwrap();
        stylediff::io::save_image(&diff, dir.join("diff.png")).unwrap();
        stylediff::io::save_image(&content, dir.join("content.png")).unwrap();
    }
}
