//! Projection models, closed-form depth recovery along the kinematic tree
//! and pose-error metrics.

use nalgebra::{Matrix3, Vector2, Vector3, SVD};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Pose3D, RankingMatrix, SkeletonTopology, NUM_JOINTS};

pub fn project_orthogonal(pose: &Pose3D) -> Pose2D {
    Pose2D::new(pose.joints.map(|v| Vector2::new(v.x, v.y)))
}

/// Pinhole projection of a world-frame pose through `cam`.
pub fn project_perspective(pose: &Pose3D, cam: &Camera) -> Result<Pose2D> {
    project_camera_frame(&cam.to_camera_frame(pose), cam.focal)
}

/// Pinhole projection of a pose already expressed in camera coordinates.
pub fn project_camera_frame(pose_cam: &Pose3D, focal: f64) -> Result<Pose2D> {
    let mut out = [Vector2::zeros(); NUM_JOINTS];
    for (j, v) in pose_cam.joints.iter().enumerate() {
        if !(v.z > 0.0) {
            return Err(Error::Projection { joint: j, depth: v.z });
        }
        out[j] = Vector2::new(focal * v.x / v.z, focal * v.y / v.z);
    }
    Ok(Pose2D::new(out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMagnitude {
    pub value: f64,
    /// The image-plane offset exceeded the bone length and the radicand was
    /// clamped to zero.
    pub clamped: bool,
}

/// Absolute depth offset between two adjacent joints under orthogonal
/// projection: `sqrt(l^2 - dx^2 - dy^2)`.
pub fn adjacent_depth_magnitude(l: f64, dx: f64, dy: f64) -> Result<DepthMagnitude> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::Input(format!("bone length must be positive, got {l}")));
    }
    if !dx.is_finite() || !dy.is_finite() {
        return Err(Error::Input("non-finite image-plane offset".into()));
    }
    // l^2 - r^2 as (l - r)(l + r) keeps precision when the bone is nearly
    // parallel to the image plane.
    let r = dx.hypot(dy);
    let radicand = (l - r) * (l + r);
    if radicand < 0.0 {
        Ok(DepthMagnitude {
            value: 0.0,
            clamped: true,
        })
    } else {
        Ok(DepthMagnitude {
            value: radicand.sqrt(),
            clamped: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub pose: Pose3D,
    /// Per joint: the bone ending at this joint was clamped.
    pub clamped: [bool; NUM_JOINTS],
}

impl Reconstruction {
    pub fn clamped_joints(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_JOINTS).filter(|&j| self.clamped[j])
    }
}

/// Recovers depths from orthographic 2D joints, bone lengths and the depth
/// relation of every bone's child to its parent.
pub fn reconstruct_depths(
    p2d: &Pose2D,
    m: &RankingMatrix,
    topo: &SkeletonTopology,
    root_depth: f64,
) -> Result<Reconstruction> {
    if !p2d.is_finite() || !root_depth.is_finite() {
        return Err(Error::Input("non-finite 2D pose or root depth".into()));
    }
    let mut z = [0.0; NUM_JOINTS];
    let mut clamped = [false; NUM_JOINTS];
    for &joint in topo.dfs_order() {
        let c = joint.index();
        let Some(parent) = topo.parent(joint) else {
            z[c] = root_depth;
            continue;
        };
        let p = parent.index();
        let l = topo.bone_length(joint).expect("non-root joint has a bone");
        let d = p2d.joints[c] - p2d.joints[p];
        let mag = adjacent_depth_magnitude(l, d.x, d.y)?;
        clamped[c] = mag.clamped;
        let sign = match m.get(c, p) {
            v if v == 1.0 => 1.0,
            v if v == 0.0 => -1.0,
            _ => 0.0,
        };
        z[c] = z[p] + sign * mag.value;
    }
    let pose = Pose3D::new(std::array::from_fn(|j| {
        Vector3::new(p2d.joints[j].x, p2d.joints[j].y, z[j])
    }));
    Ok(Reconstruction { pose, clamped })
}

/// Mean per-joint Euclidean distance.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D) -> f64 {
    per_joint_errors(pred, gt).iter().sum::<f64>() / NUM_JOINTS as f64
}

pub fn per_joint_errors(pred: &Pose3D, gt: &Pose3D) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|j| (pred.joints[j] - gt.joints[j]).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned: Pose3D,
    pub error: f64,
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

/// Similarity (rotation, translation, uniform scale) alignment of `pred` onto
/// `gt` minimizing the summed squared joint distance.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<Alignment> {
    if !pred.is_finite() || !gt.is_finite() {
        return Err(Error::Input("non-finite pose in alignment".into()));
    }
    let n = NUM_JOINTS as f64;
    let mu_p = pred.joints.iter().sum::<Vector3<f64>>() / n;
    let mu_g = gt.joints.iter().sum::<Vector3<f64>>() / n;
    let p0 = pred.joints.map(|v| v - mu_p);
    let g0 = gt.joints.map(|v| v - mu_g);
    let var_p: f64 = p0.iter().map(|v| v.norm_squared()).sum();
    let var_g: f64 = g0.iter().map(|v| v.norm_squared()).sum();
    if var_p <= f64::MIN_POSITIVE || var_g <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate(
            "cannot align a pose whose joints all coincide".into(),
        ));
    }

    let cov: Matrix3<f64> = g0.iter().zip(&p0).map(|(g, p)| g * p.transpose()).sum();
    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("SVD did not converge".into())),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = (svd.singular_values[0] * d[(0, 0)]
        + svd.singular_values[1] * d[(1, 1)]
        + svd.singular_values[2] * d[(2, 2)])
        / var_p;
    let translation = mu_g - scale * rotation * mu_p;
    let aligned = Pose3D::new(pred.joints.map(|v| scale * rotation * v + translation));
    let error = mpjpe(&aligned, gt);
    Ok(Alignment {
        aligned,
        error,
        rotation,
        scale,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{ranking_matrix_from_pose, root_center, JointId};
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose3D {
        Pose3D::new(std::array::from_fn(|_| {
            Vector3::new(
                rng.random_range(-800.0..800.0),
                rng.random_range(-900.0..900.0),
                rng.random_range(-500.0..500.0),
            )
        }))
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-3.1..3.1))
    }

    #[test]
    fn orthogonal_projection() {
        let pose = Pose3D::new([Vector3::new(1.0, 2.0, 3.0); NUM_JOINTS]);
        let p = project_orthogonal(&pose);
        assert!(p.joints.iter().all(|v| *v == Vector2::new(1.0, 2.0)));
        let shifted = pose.translated(&Vector3::new(0.0, 0.0, 250.0));
        assert_eq!(project_orthogonal(&shifted), p);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        let a = project_orthogonal(&root_center(&pose));
        let b = project_orthogonal(&pose);
        let r = b.joints[JointId::ROOT.index()];
        for j in 0..NUM_JOINTS {
            assert_eq!(a.joints[j], b.joints[j] - r);
        }
    }

    #[test]
    fn perspective_projection() {
        let on_axis = Pose3D::new([Vector3::new(0.0, 0.0, 7.0); NUM_JOINTS]);
        let p = project_camera_frame(&on_axis, 3.0).unwrap();
        assert!(p.joints.iter().all(|v| *v == Vector2::zeros()));

        let pose = Pose3D::new([Vector3::new(1.0, 1.0, 2.0); NUM_JOINTS]);
        let cam = Camera::identity(2.0);
        let p = project_perspective(&pose, &cam).unwrap();
        assert!(p.joints.iter().all(|v| *v == Vector2::new(1.0, 1.0)));

        let mut behind = pose;
        behind.joints[4].z = 0.0;
        assert!(matches!(
            project_perspective(&behind, &cam),
            Err(Error::Projection { joint: 4, .. })
        ));
    }

    #[test]
    fn depth_magnitude_cases() {
        let m = adjacent_depth_magnitude(5.0, 3.0, 0.0).unwrap();
        assert_eq!(m, DepthMagnitude { value: 4.0, clamped: false });
        let m = adjacent_depth_magnitude(5.0, 5.0, 0.0).unwrap();
        assert_eq!(m, DepthMagnitude { value: 0.0, clamped: false });
        let m = adjacent_depth_magnitude(5.0, 4.0, 4.0).unwrap();
        assert_eq!(m, DepthMagnitude { value: 0.0, clamped: true });
        assert!(adjacent_depth_magnitude(0.0, 1.0, 1.0).is_err());
        assert!(adjacent_depth_magnitude(-2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn depth_magnitude_pythagorean_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let l: f64 = rng.random_range(1.0..600.0);
            let dx = rng.random_range(-l..l);
            let dy = rng.random_range(-l..l);
            let m = adjacent_depth_magnitude(l, dx, dy).unwrap();
            if !m.clamped {
                let lhs = m.value * m.value + dx * dx + dy * dy;
                assert!((lhs - l * l).abs() <= 1e-9 * l * l);
            }
        }
    }

    /// Two-joint chain embedded in the skeleton: pelvis at the origin with
    /// depth 0, r_hip offset (3, 0) in the image.
    #[test]
    fn reconstruct_single_bone() {
        let mut lengths = crate::skeleton::DEFAULT_BONE_LENGTHS;
        lengths[2] = 5.0;
        let topo = SkeletonTopology::mpii(lengths).unwrap();

        // forward-project a known 3D pose using the same sign convention
        let mut truth = Pose3D::zeros();
        truth.joints[2] = Vector3::new(3.0, 0.0, 4.0);
        let m = ranking_matrix_from_pose(&truth, 0.0).unwrap();
        assert_eq!(m.get(2, 6), 1.0);
        let p2d = project_orthogonal(&truth);
        let rec = reconstruct_depths(&p2d, &m, &topo, 0.0).unwrap();
        assert_eq!(rec.pose.joints[2], Vector3::new(3.0, 0.0, 4.0));
        assert!(!rec.clamped[2]);
        // bones outside the right leg are tied in depth
        assert!(rec.pose.joints.iter().enumerate().all(|(j, v)| j <= 2 || v.z == 0.0));

        // tie on the bone: child keeps the parent's depth
        let tie = RankingMatrix::all_ties();
        let rec = reconstruct_depths(&p2d, &tie, &topo, 12.0).unwrap();
        assert_eq!(rec.pose.joints[2].z, 12.0);
    }

    #[test]
    fn reconstruct_reports_clamped_bones() {
        let topo = SkeletonTopology::default();
        let mut p2d = project_orthogonal(&Pose3D::zeros());
        // r_knee 600 mm away from r_hip in the image, thigh is 450 mm;
        // r_ankle stays at the origin, 600 mm from the knee
        p2d.joints[1] = Vector2::new(600.0, 0.0);
        let rec = reconstruct_depths(&p2d, &RankingMatrix::all_ties(), &topo, 0.0).unwrap();
        assert_eq!(rec.clamped_joints().collect::<Vec<_>>(), vec![0, 1]);
        p2d.joints[0] = Vector2::new(600.0, 300.0);
        let rec = reconstruct_depths(&p2d, &RankingMatrix::all_ties(), &topo, 0.0).unwrap();
        assert_eq!(rec.clamped_joints().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn mpjpe_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        assert_eq!(mpjpe(&a, &a), 0.0);
        let shifted = a.translated(&Vector3::new(3.0, 4.0, 0.0));
        assert!((mpjpe(&shifted, &a) - 5.0).abs() < 1e-12);
        assert_eq!(mpjpe(&a, &b), mpjpe(&b, &a));
        assert!(mpjpe(&a, &b) > 0.0);
    }

    #[test]
    fn procrustes_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = random_pose(&mut rng);
        let al = procrustes_align(&gt, &gt).unwrap();
        assert!(al.error < 1e-9);
        assert!((al.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!((al.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn procrustes_rigid_copies_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let gt = random_pose(&mut rng);
            let rot = random_rotation(&mut rng);
            let t = Vector3::new(rng.random_range(-1e3..1e3), 50.0, rng.random_range(-1e3..1e3));
            let moved = Pose3D::new(gt.joints.map(|v| rot * v + t));
            let al = procrustes_align(&moved, &gt).unwrap();
            assert!(al.error < 1e-9, "rigid copy misaligned by {}", al.error);
            assert!((al.rotation.determinant() - 1.0).abs() < 1e-9);

            let pred = random_pose(&mut rng);
            let al = procrustes_align(&pred, &gt).unwrap();
            assert!(al.error <= mpjpe(&pred, &gt));
        }
    }

    #[test]
    fn procrustes_error_invariant_to_rigid_motion_of_pred() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let pred = random_pose(&mut rng);
            let rot = random_rotation(&mut rng);
            let moved = Pose3D::new(pred.joints.map(|v| rot * v + Vector3::new(10.0, -3.0, 99.0)));
            let a = procrustes_align(&pred, &gt).unwrap().error;
            let b = procrustes_align(&moved, &gt).unwrap().error;
            assert!((a - b).abs() < 1e-8 * a.max(1.0));
        }
    }

    #[test]
    fn procrustes_degenerate() {
        let gt = Pose3D::new([Vector3::new(1.0, 2.0, 3.0); NUM_JOINTS]);
        assert!(matches!(procrustes_align(&gt, &gt), Err(Error::Degenerate(_))));
    }
}
