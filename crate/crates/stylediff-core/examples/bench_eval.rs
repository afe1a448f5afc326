//! Rough timing of one loss+gradient evaluation at several sizes.
use std::time::Instant;
use stylediff_core::image::ImageTensor;
use stylediff_core::transfer::{TransferConfig, TransferSession};

fn main() {
    for size in [64usize, 128, 256] {
        let cfg = TransferConfig {
            iterations: 2,
            ..TransferConfig::default()
        };
        let session = TransferSession::<f32>::new(cfg, None).unwrap();
        let c = ImageTensor::<f32>::random(size, size, 1, 1).unwrap();
        let s1 = ImageTensor::<f32>::random(size, size, 1, 2).unwrap();
        let s2 = ImageTensor::<f32>::random(size, size, 1, 3).unwrap();
        let t = Instant::now();
        let r = session.run_transfer(&c, &s1, &s2).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!(
            "size {size}: {} evals in {:.2}s -> {:.2}s/eval (trace {} -> {})",
            r.evaluations,
            dt,
            dt / r.evaluations as f64,
            r.loss_trace.first().unwrap().total,
            r.loss_trace.last().unwrap().total
        );
    }
}
