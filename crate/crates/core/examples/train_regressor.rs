// Train the ranking-conditioned regressor on a small synthetic split and
// evaluate it on a held-out subject.

use depthrank::dpnet::{ModelConfig, TrainConfig};
use depthrank::harness::{
    build_datasets, default_rig, evaluate, generate_motion, train_model, PipelineConfig, ProtocolSplit,
    SyntheticMotionConfig,
};

pub fn run_example() -> depthrank::Result<f64> {
    let cfg = PipelineConfig {
        motion: SyntheticMotionConfig { num_poses: 600, num_subjects: 4, ..Default::default() },
        split: ProtocolSplit::subject_holdout(4, vec![3], 4),
        augment: None,
        model: ModelConfig { hidden_width: 48, ..Default::default() },
        train: TrainConfig { epochs: 5, ..Default::default() },
        ..Default::default()
    }
    .with_seed(21);
    let motion = generate_motion(&cfg.motion)?;
    let data = build_datasets(&cfg, &motion, &default_rig())?;
    let (model, outcome) = train_model(&data.train, &data.val, &cfg.model, &cfg.train)?;
    for h in &outcome.history {
        println!("epoch {:>2}  train {:.4}  val {:.4}", h.epoch, h.train_loss, h.val_loss);
    }
    let ev = evaluate(&model, &data.test, cfg.eps)?;
    println!("test MPJPE {:.1} mm, aligned {:.1} mm", ev.mpjpe, ev.pa_mpjpe);

    let s = &data.test[0];
    let pose = model.predict(&s.ranking, &s.s2d)?;
    println!("head top of the first test sample: {:.0?}", pose.joints[9].as_slice());
    Ok(ev.mpjpe)
}

fn main() -> depthrank::Result<()> {
    run_example().map(|_| ())
}
