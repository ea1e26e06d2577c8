//! Scaled-down desk-run rehearsal: synthetic train/val, default augmentation.

use idseg::data::{generate_synthetic_sample, GeneratorConfig};
use idseg::models::{build_densenet10, build_mobileunet, ModelSpec, SegNet};
use idseg::train::{train, EpochRecord, TrainConfig};

fn main() {
    let arch = std::env::args().nth(1).unwrap_or_else(|| "mobileunet".into());
    let n_train: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let n_val: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let epochs: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(8);
    let lr: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let gen = GeneratorConfig::desk(320, 180);
    let train_set: Vec<_> = (0..n_train)
        .map(|i| generate_synthetic_sample(&gen, i as u64).unwrap())
        .collect();
    let val_set: Vec<_> = (0..n_val)
        .map(|i| generate_synthetic_sample(&gen, 10_000 + i as u64).unwrap())
        .collect();

    let mut spec = if arch == "densenet10" {
        ModelSpec::densenet10(224, 5)
    } else {
        ModelSpec::mobileunet(224)
    };
    spec.pretrained_encoder = false;
    let mut net: Box<dyn SegNet<f32>> = idseg::models::build_net(&spec, 7).unwrap();
    let _ = (build_mobileunet::<f32>, build_densenet10::<f32>);
    let mut cfg = TrainConfig::new(spec);
    cfg.learning_rate = lr;
    cfg.epochs = epochs;
    cfg.batch_size = 10;
    cfg.seed = 7;
    let t0 = std::time::Instant::now();
    let hist = train(
        net.as_mut(),
        &train_set,
        &val_set,
        &cfg,
        Some(&mut |rec: &EpochRecord| {
            eprintln!(
                "epoch {:3} loss {:.4} train-iou {:.4} val-loss {:.4} val-iou {:.4} ({:.1}s)",
                rec.epoch, rec.train_loss, rec.train_miou, rec.val_loss, rec.val_miou, rec.wall_secs
            );
        }),
    )
    .unwrap();
    eprintln!(
        "{arch}: best epoch {} val-iou {:.4}; total {:.1}s",
        hist.best_epoch,
        hist.best().unwrap().val_miou,
        t0.elapsed().as_secs_f64()
    );
}
