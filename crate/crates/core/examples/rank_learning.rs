// Fit per-joint scores to a ranking matrix with the pairwise cross-entropy
// cost, then read the depth order back.

use depthrank::ranking::{
    discretize, prob_matrix_from_features, rank_cost, rank_cost_gradient, topo_sort_order,
    JointFeatures, DEFAULT_DISCRETIZE_THRESHOLD,
};
use depthrank::skeleton::{depth_order, ranking_matrix_from_pose, Pose3D, NUM_JOINTS};
use nalgebra::Vector3;

pub fn run_example() -> depthrank::Result<f64> {
    let depths = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0, 5.5, 3.5, 8.0, 9.7, 7.0, 9.3, 2.3, 8.4];
    let pose = Pose3D::new(std::array::from_fn(|j| Vector3::new(0.0, 0.0, depths[j])));
    let target = ranking_matrix_from_pose(&pose, 0.0)?;

    let mut f = JointFeatures::zeros();
    println!("initial cost {:.3}", rank_cost(&f, &target));
    for step in 0..5000 {
        let g = rank_cost_gradient(&f, &target);
        for k in 0..NUM_JOINTS {
            f.0[k] -= 0.1 * g[k];
        }
        if step % 1000 == 999 {
            println!("step {:>4}: cost {:.4}", step + 1, rank_cost(&f, &target));
        }
    }

    let learned = discretize(&prob_matrix_from_features(&f), DEFAULT_DISCRETIZE_THRESHOLD)?;
    let strict = target.strict_pairs();
    let mut agree = 0;
    for i in 0..NUM_JOINTS {
        for j in 0..NUM_JOINTS {
            if target.get(i, j) != 0.5 && learned.get(i, j) == target.get(i, j) {
                agree += 1;
            }
        }
    }
    let agreement = agree as f64 / (2 * strict) as f64;
    println!("strict-pair agreement {:.1}%", 100.0 * agreement);
    println!("recovered order {:?}", topo_sort_order(&learned).ranks());
    println!("true order      {:?}", depth_order(&pose).ranks());
    Ok(agreement)
}

fn main() -> depthrank::Result<()> {
    run_example().map(|_| ())
}
