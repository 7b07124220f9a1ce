// Compare the full pipeline with its ablated variants on one split.

use depthrank::camera::AugmentConfig;
use depthrank::dpnet::{ModelConfig, TrainConfig};
use depthrank::harness::{run_ablation, AblationAxis, PipelineConfig, ProtocolSplit, SyntheticMotionConfig};

pub fn run_example() -> depthrank::Result<usize> {
    let base = PipelineConfig {
        motion: SyntheticMotionConfig { num_poses: 400, num_subjects: 4, ..Default::default() },
        split: ProtocolSplit::subject_holdout(4, vec![3], 4),
        augment: Some(AugmentConfig { factor: 1, ..Default::default() }),
        model: ModelConfig { hidden_width: 32, ..Default::default() },
        train: TrainConfig { epochs: 3, ..Default::default() },
        ..Default::default()
    }
    .with_seed(5);
    let reports = run_ablation(&AblationAxis::ALL, &base)?;
    println!("{:<12} {:>8} {:>8}", "arm", "MPJPE", "aligned");
    for r in &reports {
        println!("{:<12} {:>8.1} {:>8.1}", r.label, r.mpjpe, r.pa_mpjpe);
    }
    Ok(reports.len())
}

fn main() -> depthrank::Result<()> {
    run_example().map(|_| ())
}
