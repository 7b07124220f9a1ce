// Virtual-camera augmentation: locate the rig's optical center, fit the
// camera distance distribution, and render extra samples from random
// viewpoints with detector-like 2D noise and ranking flips.

use depthrank::camera::{
    augment_dataset, fit_distance_distribution, optical_center, AugmentConfig, Camera, Gmm, NoiseConfig,
};
use depthrank::harness::{default_rig, generate_motion, SyntheticMotionConfig};
use depthrank::ranking::AccuracyMatrix;
use depthrank::skeleton::ranking_matrix_from_pose;

pub fn run_example() -> depthrank::Result<usize> {
    let rig = default_rig();
    let axes: Vec<_> = rig.iter().map(Camera::optical_axis).collect();
    let center = optical_center(&axes)?;
    let (mean, std) = fit_distance_distribution(&rig, &center)?;
    println!("optical center {:.3?}, distance {mean:.0} ± {std:.0} mm", center.as_slice());

    let motion = generate_motion(&SyntheticMotionConfig { num_poses: 50, num_subjects: 2, seed: 1, ..Default::default() })?;
    let noise = NoiseConfig {
        gmm: Some(Gmm::default()),
        acc: Some(AccuracyMatrix::uniform(0.9)?),
    };
    let cfg = AugmentConfig { factor: 3, seed: 11, ..Default::default() };
    let samples = augment_dataset(&motion.poses, &rig, &noise, &cfg)?;

    let mut flipped = 0;
    let mut pairs = 0;
    for s in &samples {
        let truth = ranking_matrix_from_pose(&s.s3d, 0.0)?;
        for i in 0..16 {
            for j in i + 1..16 {
                pairs += 1;
                flipped += usize::from(truth.get(i, j) != s.ranking.get(i, j));
            }
        }
    }
    println!(
        "{} samples from {} poses, {:.1}% of pairs flipped",
        samples.len(),
        motion.poses.len(),
        100.0 * flipped as f64 / pairs as f64
    );
    Ok(samples.len())
}

fn main() -> depthrank::Result<()> {
    run_example().map(|_| ())
}
