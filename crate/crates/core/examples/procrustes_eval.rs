// Evaluation metrics: root-centered MPJPE and MPJPE after similarity
// alignment.

use depthrank::geometry::{mpjpe, procrustes_align};
use depthrank::harness::{generate_motion, SyntheticMotionConfig};
use depthrank::skeleton::{root_center, Pose3D};
use nalgebra::{Rotation3, Vector3};

pub fn run_example() -> depthrank::Result<(f64, f64)> {
    let motion = generate_motion(&SyntheticMotionConfig { num_poses: 2, num_subjects: 1, seed: 8, ..Default::default() })?;
    let gt = root_center(&motion.poses[0].0);

    let r = Rotation3::from_euler_angles(0.3, -0.8, 0.2);
    let moved = Pose3D::new(gt.joints.map(|v| r * v * 1.2 + Vector3::new(40.0, -10.0, 900.0)));
    let fit = procrustes_align(&moved, &gt)?;
    println!("rigid copy: scale {:.3}, aligned error {:.2e} mm", fit.scale, fit.error);

    // a different pose stays different after alignment
    let other = root_center(&motion.poses[1].0);
    let raw = mpjpe(&other, &gt);
    let aligned = procrustes_align(&other, &gt)?.error;
    println!("unrelated pose: MPJPE {raw:.1} mm, aligned {aligned:.1} mm");
    Ok((raw, aligned))
}

fn main() -> depthrank::Result<()> {
    run_example().map(|_| ())
}
