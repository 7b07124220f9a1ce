// Recover joint depths from an orthographic 2D pose, the bone lengths and
// the depth ranking of every joint pair.
//
// Run with `cargo run --example reconstruct_from_rankings`.

use depthrank::geometry::{project_orthogonal, reconstruct_depths};
use depthrank::harness::{generate_motion, SyntheticMotionConfig};
use depthrank::skeleton::{ranking_matrix_from_pose, JointId, SkeletonTopology, NUM_JOINTS};
use nalgebra::Vector2;

pub fn run_example() -> depthrank::Result<f64> {
    let cfg = SyntheticMotionConfig {
        num_poses: 5,
        num_subjects: 1,
        subject_scale: [1.0, 1.0],
        seed: 3,
        ..Default::default()
    };
    let motion = generate_motion(&cfg)?;
    let topo = SkeletonTopology::default();

    let mut worst: f64 = 0.0;
    for (pose, _) in &motion.poses {
        let p2d = project_orthogonal(pose);
        let m = ranking_matrix_from_pose(pose, 0.0)?;
        let rec = reconstruct_depths(&p2d, &m, &topo, pose.root().z)?;
        for j in 0..NUM_JOINTS {
            worst = worst.max((rec.pose.joints[j].z - pose.joints[j].z).abs());
        }
    }
    println!("exact inputs: worst depth error {worst:.2e} mm");

    // stretch the right forearm beyond its bone length in the image
    let (pose, _) = &motion.poses[0];
    let mut p2d = project_orthogonal(pose);
    p2d.joints[10] += Vector2::new(400.0, 0.0);
    let m = ranking_matrix_from_pose(pose, 0.0)?;
    let rec = reconstruct_depths(&p2d, &m, &topo, 0.0)?;
    for j in rec.clamped_joints() {
        let name = JointId::new(j)?.name();
        println!("clamped bone ending at {name}");
    }
    Ok(worst)
}

fn main() -> depthrank::Result<()> {
    run_example().map(|_| ())
}
