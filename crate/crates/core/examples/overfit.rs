//! Overfit-one-sample sanity run (acceptance rehearsal).

use idseg::augment::AugPipeline;
use idseg::data::{generate_synthetic_sample, GeneratorConfig};
use idseg::eval::iou;
use idseg::models::{build_mobileunet, predict_mask, ModelSpec};
use idseg::train::{train, TrainConfig};

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let cfg_gen = GeneratorConfig::desk(320, 180);
    let sample = generate_synthetic_sample(&cfg_gen, 424242).unwrap();
    let mut spec = ModelSpec::mobileunet(224);
    spec.pretrained_encoder = false;
    let mut net = build_mobileunet::<f32>(spec.clone(), 7).unwrap();
    let mut cfg = TrainConfig::new(spec);
    cfg.learning_rate = lr;
    cfg.epochs = epochs;
    cfg.batch_size = 1;
    cfg.augment = AugPipeline::disabled();
    cfg.seed = 7;
    let t0 = std::time::Instant::now();
    let train_set = vec![sample.clone()];
    let val_set = vec![sample.clone()];
    let hist = train(
        &mut net,
        &train_set,
        &val_set,
        &cfg,
        Some(&mut |rec: &idseg::train::EpochRecord| {
            if rec.epoch % 5 == 0 || rec.epoch == epochs - 1 {
                eprintln!(
                    "epoch {:3} loss {:.4} train-iou {:.4} val-iou {:.4}",
                    rec.epoch, rec.train_loss, rec.train_miou, rec.val_miou
                );
            }
        }),
    )
    .unwrap();
    let final_iou = iou(&sample.mask, &predict_mask(&net, &sample.image)).unwrap();
    eprintln!(
        "lr {lr}: best epoch {} val-iou {:.4}; final IoU {:.4}; wall {:.1}s",
        hist.best_epoch,
        hist.best().unwrap().val_miou,
        final_iou,
        t0.elapsed().as_secs_f64()
    );
}
