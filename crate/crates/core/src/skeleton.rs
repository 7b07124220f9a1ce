//! Canonical 16-joint skeleton, pairwise depth-ranking matrices, depth
//! orders and the normalization helpers shared by the rest of the crate.
//!
//! Joint layout (MPII order, pelvis is the root):
//!
//! | idx | joint       | idx | joint       |
//! |-----|-------------|-----|-------------|
//! | 0   | r_ankle     | 8   | upper_neck  |
//! | 1   | r_knee      | 9   | head_top    |
//! | 2   | r_hip       | 10  | r_wrist     |
//! | 3   | l_hip       | 11  | r_elbow     |
//! | 4   | l_knee      | 12  | r_shoulder  |
//! | 5   | l_ankle     | 13  | l_shoulder  |
//! | 6   | pelvis      | 14  | l_elbow     |
//! | 7   | thorax      | 15  | l_wrist     |
//!
//! Camera coordinates have z pointing into the screen, so a larger z is
//! farther from the viewer.

use std::fmt;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 16;
pub const NUM_ENTRIES: usize = NUM_JOINTS * NUM_JOINTS;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "pelvis",
    "thorax",
    "upper_neck",
    "head_top",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointId(u8);

impl JointId {
    pub const ROOT: JointId = JointId(6);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_JOINTS {
            Ok(JointId(index as u8))
        } else {
            Err(Error::Input(format!("joint index {index} out of range")))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = JointId> {
        (0..NUM_JOINTS as u8).map(JointId)
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Default anthropometric bone lengths in mm, indexed by child joint.
pub const DEFAULT_BONE_LENGTHS: [f64; NUM_JOINTS] = [
    440.0, // r_knee -> r_ankle
    450.0, // r_hip -> r_knee
    130.0, // pelvis -> r_hip
    130.0, // pelvis -> l_hip
    450.0, // l_hip -> l_knee
    440.0, // l_knee -> l_ankle
    0.0,   // root
    480.0, // pelvis -> thorax
    120.0, // thorax -> upper_neck
    180.0, // upper_neck -> head_top
    260.0, // r_elbow -> r_wrist
    290.0, // r_shoulder -> r_elbow
    170.0, // thorax -> r_shoulder
    170.0, // thorax -> l_shoulder
    290.0, // l_shoulder -> l_elbow
    260.0, // l_elbow -> l_wrist
];

const MPII_PARENTS: [Option<u8>; NUM_JOINTS] = [
    Some(1),
    Some(2),
    Some(6),
    Some(6),
    Some(3),
    Some(4),
    None,
    Some(6),
    Some(7),
    Some(8),
    Some(11),
    Some(12),
    Some(7),
    Some(7),
    Some(13),
    Some(14),
];

/// Kinematic tree with fixed bone lengths. `bone_length[c]` is the length of
/// the bone from `parent[c]` to `c`; the root entry is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    parent: [Option<JointId>; NUM_JOINTS],
    bone_length: [f64; NUM_JOINTS],
    /// Root-first depth-first visiting order.
    order: Vec<JointId>,
}

impl SkeletonTopology {
    pub fn new(parent: [Option<JointId>; NUM_JOINTS], bone_length: [f64; NUM_JOINTS]) -> Result<Self> {
        let roots: Vec<usize> = (0..NUM_JOINTS).filter(|&j| parent[j].is_none()).collect();
        if roots != [JointId::ROOT.index()] {
            return Err(Error::Input(format!(
                "topology must have exactly one root at joint {}, found {roots:?}",
                JointId::ROOT.index()
            )));
        }
        for j in 0..NUM_JOINTS {
            if parent[j].is_some() && !(bone_length[j] > 0.0 && bone_length[j].is_finite()) {
                return Err(Error::Input(format!(
                    "bone ending at {} has non-positive length {}",
                    JOINT_NAMES[j], bone_length[j]
                )));
            }
        }
        let order = dfs_order(&parent)?;
        Ok(SkeletonTopology {
            parent,
            bone_length,
            order,
        })
    }

    /// The MPII 16-joint tree with the given bone lengths.
    pub fn mpii(bone_length: [f64; NUM_JOINTS]) -> Result<Self> {
        Self::new(MPII_PARENTS.map(|p| p.map(JointId)), bone_length)
    }

    pub fn parent(&self, joint: JointId) -> Option<JointId> {
        self.parent[joint.index()]
    }

    pub fn bone_length(&self, joint: JointId) -> Option<f64> {
        self.parent[joint.index()].map(|_| self.bone_length[joint.index()])
    }

    pub fn bone_lengths(&self) -> &[f64; NUM_JOINTS] {
        &self.bone_length
    }

    /// Joints in depth-first order starting at the root; every joint appears
    /// after its parent.
    pub fn dfs_order(&self) -> &[JointId] {
        &self.order
    }

    /// `(parent, child)` pairs in depth-first order.
    pub fn bones(&self) -> impl Iterator<Item = (JointId, JointId)> + '_ {
        self.order
            .iter()
            .filter_map(move |&c| self.parent(c).map(|p| (p, c)))
    }

    /// Same tree with every bone length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.parent, self.bone_length.map(|l| l * factor))
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::mpii(DEFAULT_BONE_LENGTHS).expect("default topology is valid")
    }
}

fn dfs_order(parent: &[Option<JointId>; NUM_JOINTS]) -> Result<Vec<JointId>> {
    let mut children: Vec<Vec<JointId>> = vec![Vec::new(); NUM_JOINTS];
    for j in JointId::all() {
        if let Some(p) = parent[j.index()] {
            children[p.index()].push(j);
        }
    }
    let mut order = Vec::with_capacity(NUM_JOINTS);
    let mut stack = vec![JointId::ROOT];
    while let Some(j) = stack.pop() {
        if order.len() > NUM_JOINTS {
            break;
        }
        order.push(j);
        stack.extend(children[j.index()].iter().rev());
    }
    if order.len() != NUM_JOINTS {
        return Err(Error::Input(
            "parent graph is not a tree reachable from the root".into(),
        ));
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: [Vector3<f64>; NUM_JOINTS],
}

impl Pose3D {
    pub fn new(joints: [Vector3<f64>; NUM_JOINTS]) -> Self {
        Pose3D { joints }
    }

    pub fn zeros() -> Self {
        Pose3D {
            joints: [Vector3::zeros(); NUM_JOINTS],
        }
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 3 * NUM_JOINTS {
            return Err(Error::Shape(format!(
                "expected {} values for a 3D pose, got {}",
                3 * NUM_JOINTS,
                values.len()
            )));
        }
        Ok(Pose3D {
            joints: std::array::from_fn(|j| {
                Vector3::new(values[3 * j], values[3 * j + 1], values[3 * j + 2])
            }),
        })
    }

    /// `[x0, y0, z0, x1, ...]`
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn depths(&self) -> [f64; NUM_JOINTS] {
        self.joints.map(|v| v.z)
    }

    pub fn root(&self) -> Vector3<f64> {
        self.joints[JointId::ROOT.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Pose3D {
            joints: self.joints.map(|v| v + offset),
        }
    }

    /// Largest deviation between adjacent-joint distances and the topology's
    /// bone lengths.
    pub fn bone_length_error(&self, topo: &SkeletonTopology) -> f64 {
        topo.bones()
            .map(|(p, c)| {
                let d = (self.joints[c.index()] - self.joints[p.index()]).norm();
                (d - topo.bone_length(c).unwrap_or(0.0)).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub joints: [Vector2<f64>; NUM_JOINTS],
}

impl Pose2D {
    pub fn new(joints: [Vector2<f64>; NUM_JOINTS]) -> Self {
        Pose2D { joints }
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 2 * NUM_JOINTS {
            return Err(Error::Shape(format!(
                "expected {} values for a 2D pose, got {}",
                2 * NUM_JOINTS,
                values.len()
            )));
        }
        Ok(Pose2D {
            joints: std::array::from_fn(|j| Vector2::new(values[2 * j], values[2 * j + 1])),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|v| [v.x, v.y]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Hard pairwise depth relations. `get(i, j)` is 1 when joint `i` lies
/// behind joint `j`, 0 when in front, 0.5 when tied within tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingMatrix {
    entries: [[f64; NUM_JOINTS]; NUM_JOINTS],
}

impl RankingMatrix {
    /// Every pair tied.
    pub fn all_ties() -> Self {
        RankingMatrix {
            entries: [[0.5; NUM_JOINTS]; NUM_JOINTS],
        }
    }

    pub fn from_entries(entries: [[f64; NUM_JOINTS]; NUM_JOINTS]) -> Result<Self> {
        for (i, row) in entries.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 && v != 0.5 && v != 1.0 {
                    return Err(Error::Input(format!(
                        "ranking entry ({i},{j}) = {v} is not one of 0, 0.5, 1"
                    )));
                }
                if i == j && v != 0.5 {
                    return Err(Error::Input(format!("ranking diagonal ({i},{i}) = {v}")));
                }
                if v + entries[j][i] != 1.0 {
                    return Err(Error::Input(format!(
                        "ranking entries ({i},{j}) and ({j},{i}) do not sum to 1"
                    )));
                }
            }
        }
        Ok(RankingMatrix { entries })
    }

    /// Builds the matrix from strictly-upper-triangular relations; the lower
    /// triangle and diagonal follow from the invariants.
    pub(crate) fn from_upper(mut rel: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = [[0.5; NUM_JOINTS]; NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            for j in i + 1..NUM_JOINTS {
                let v = rel(i, j);
                debug_assert!(v == 0.0 || v == 0.5 || v == 1.0);
                entries[i][j] = v;
                entries[j][i] = 1.0 - v;
            }
        }
        RankingMatrix { entries }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn entries(&self) -> &[[f64; NUM_JOINTS]; NUM_JOINTS] {
        &self.entries
    }

    /// Number of unordered pairs with a strict (non-tie) relation.
    pub fn strict_pairs(&self) -> usize {
        (0..NUM_JOINTS)
            .flat_map(|i| (i + 1..NUM_JOINTS).map(move |j| (i, j)))
            .filter(|&(i, j)| self.entries[i][j] != 0.5)
            .count()
    }
}

/// Rank of every joint along the camera z axis (1 = nearest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthOrder {
    ranks: [u8; NUM_JOINTS],
}

impl DepthOrder {
    pub fn from_ranks(ranks: [u8; NUM_JOINTS]) -> Result<Self> {
        let mut seen = [false; NUM_JOINTS];
        for &r in &ranks {
            let r = r as usize;
            if r == 0 || r > NUM_JOINTS || seen[r - 1] {
                return Err(Error::Input(format!("ranks {ranks:?} are not a permutation of 1..=16")));
            }
            seen[r - 1] = true;
        }
        Ok(DepthOrder { ranks })
    }

    /// Ranks in removal order: `sequence[k]` receives rank `k + 1`.
    pub(crate) fn from_sequence(sequence: &[usize]) -> Self {
        let mut ranks = [0u8; NUM_JOINTS];
        for (pos, &j) in sequence.iter().enumerate() {
            ranks[j] = (pos + 1) as u8;
        }
        debug_assert!(Self::from_ranks(ranks).is_ok());
        DepthOrder { ranks }
    }

    pub fn ranks(&self) -> &[u8; NUM_JOINTS] {
        &self.ranks
    }

    /// Ranks standardized to mean 0 and unit population standard deviation.
    pub fn normalized(&self) -> [f64; NUM_JOINTS] {
        let values: Vec<f64> = self.ranks.iter().map(|&r| r as f64).collect();
        let out = normalize(&values).expect("a permutation has non-zero variance");
        std::array::from_fn(|i| out[i])
    }
}

/// Pairwise depth relations with tolerance `eps` (mm).
pub fn ranking_matrix_from_pose(pose: &Pose3D, eps: f64) -> Result<RankingMatrix> {
    if !(eps >= 0.0) {
        return Err(Error::Input(format!("ranking tolerance must be >= 0, got {eps}")));
    }
    let z = pose.depths();
    if let Some(j) = z.iter().position(|d| !d.is_finite()) {
        return Err(Error::Input(format!("joint {j} has non-finite depth")));
    }
    Ok(RankingMatrix::from_upper(|i, j| {
        if z[i] > z[j] + eps {
            1.0
        } else if z[i] < z[j] - eps {
            0.0
        } else {
            0.5
        }
    }))
}

/// Ranks joints by depth, ties broken by ascending joint index.
pub fn depth_order(pose: &Pose3D) -> DepthOrder {
    let z = pose.depths();
    let mut idx: Vec<usize> = (0..NUM_JOINTS).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    DepthOrder::from_sequence(&idx)
}

/// Standardizes `values` to mean 0 and population standard deviation 1.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Degenerate("need at least two values to normalize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("cannot normalize non-finite values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if values.iter().all(|&v| v == values[0]) || std == 0.0 {
        return Err(Error::Degenerate("values have zero variance".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Translates the pose so the pelvis is at the origin.
pub fn root_center(pose: &Pose3D) -> Pose3D {
    let root = pose.root();
    Pose3D {
        joints: pose.joints.map(|v| v - root),
    }
}

/// Row-major: entry `(i, j)` lands at `16 * i + j`.
pub fn flatten_ranking(m: &RankingMatrix) -> Vec<f64> {
    m.entries.iter().flatten().copied().collect()
}

pub fn unflatten_ranking(values: &[f64]) -> Result<RankingMatrix> {
    if values.len() != NUM_ENTRIES {
        return Err(Error::Shape(format!(
            "expected {NUM_ENTRIES} ranking values, got {}",
            values.len()
        )));
    }
    RankingMatrix::from_entries(std::array::from_fn(|i| {
        std::array::from_fn(|j| values[NUM_JOINTS * i + j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose_with_depths(z: [f64; NUM_JOINTS]) -> Pose3D {
        Pose3D::new(std::array::from_fn(|j| Vector3::new(j as f64, -(j as f64), z[j])))
    }

    #[test]
    fn ranking_matrix_cases() {
        let mut z = [0.0; NUM_JOINTS];
        z[0] = 100.0;
        let m = ranking_matrix_from_pose(&pose_with_depths(z), 10.0).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(3, 3), 0.5);

        z[0] = 5.0;
        let m = ranking_matrix_from_pose(&pose_with_depths(z), 10.0).unwrap();
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.get(1, 0), 0.5);
    }

    #[test]
    fn ranking_matrix_rejects_bad_input() {
        let mut z = [0.0; NUM_JOINTS];
        z[4] = f64::NAN;
        assert!(ranking_matrix_from_pose(&pose_with_depths(z), 0.0).is_err());
        assert!(ranking_matrix_from_pose(&pose_with_depths([0.0; 16]), -1.0).is_err());
    }

    #[test]
    fn depth_order_cases() {
        let mut z = [100.0; NUM_JOINTS];
        z[0] = 30.0;
        z[1] = 10.0;
        z[2] = 20.0;
        let order = depth_order(&pose_with_depths(z));
        assert_eq!(&order.ranks()[..3], &[3, 1, 2]);

        let order = depth_order(&pose_with_depths([7.0; NUM_JOINTS]));
        let expected: [u8; 16] = std::array::from_fn(|i| i as u8 + 1);
        assert_eq!(order.ranks(), &expected);

        let order = depth_order(&pose_with_depths(std::array::from_fn(|i| i as f64 * 3.0)));
        assert_eq!(order.ranks(), &expected);
    }

    #[test]
    fn normalize_cases() {
        let out = normalize(&[1.0, 2.0, 3.0]).unwrap();
        let s = 1.224_744_871_391_589;
        assert!((out[0] + s).abs() < 1e-12 && out[1].abs() < 1e-12 && (out[2] - s).abs() < 1e-12);
        let again = normalize(&out).unwrap();
        for (a, b) in out.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(normalize(&[5.0, 5.0, 5.0]), Err(Error::Degenerate(_))));
        assert!(normalize(&[1.0]).is_err());
    }

    #[test]
    fn root_center_cases() {
        let mut pose = pose_with_depths([1.0; NUM_JOINTS]);
        pose.joints[6] = Vector3::new(10.0, 20.0, 30.0);
        let c = root_center(&pose);
        assert_eq!(c.root(), Vector3::zeros());
        assert_eq!(c.joints[0], pose.joints[0] - Vector3::new(10.0, 20.0, 30.0));
        assert_eq!(root_center(&c), c);
    }

    #[test]
    fn flatten_layout() {
        let m = RankingMatrix::all_ties();
        assert!(flatten_ranking(&m).iter().all(|&v| v == 0.5));
        let m = ranking_matrix_from_pose(&pose_with_depths(std::array::from_fn(|i| i as f64)), 0.0).unwrap();
        let flat = flatten_ranking(&m);
        assert_eq!(flat[16 * 3 + 5], m.get(3, 5));
        assert_eq!(flat[16 * 5 + 3], m.get(5, 3));
        assert_eq!(unflatten_ranking(&flat).unwrap(), m);
    }

    #[test]
    fn matrix_validation() {
        let mut e = [[0.5; 16]; 16];
        e[0][1] = 1.0;
        assert!(RankingMatrix::from_entries(e).is_err());
        e[1][0] = 0.0;
        assert!(RankingMatrix::from_entries(e).is_ok());
        e[2][2] = 1.0;
        assert!(RankingMatrix::from_entries(e).is_err());
    }

    #[test]
    fn topology_validation() {
        let topo = SkeletonTopology::default();
        assert_eq!(topo.dfs_order()[0], JointId::ROOT);
        assert_eq!(topo.bones().count(), 15);
        let mut seen = [false; 16];
        for &j in topo.dfs_order() {
            if let Some(p) = topo.parent(j) {
                assert!(seen[p.index()]);
            }
            seen[j.index()] = true;
        }

        let mut lengths = DEFAULT_BONE_LENGTHS;
        lengths[3] = 0.0;
        assert!(SkeletonTopology::mpii(lengths).is_err());

        // 0 -> 1 -> 0 cycle detached from root
        let mut parents = MPII_PARENTS.map(|p| p.map(JointId));
        parents[1] = Some(JointId(0));
        assert!(SkeletonTopology::new(parents, DEFAULT_BONE_LENGTHS).is_err());
    }

    fn arb_depths() -> impl Strategy<Value = [f64; NUM_JOINTS]> {
        prop::array::uniform16(-2000.0..2000.0f64)
    }

    proptest! {
        #[test]
        fn matrix_invariants(z in arb_depths(), eps in 0.0..300.0f64) {
            let m = ranking_matrix_from_pose(&pose_with_depths(z), eps).unwrap();
            for i in 0..16 {
                prop_assert_eq!(m.get(i, i), 0.5);
                for j in 0..16 {
                    prop_assert_eq!(m.get(i, j) + m.get(j, i), 1.0);
                }
            }
        }

        #[test]
        fn strict_relation_matches_depth_order(z in arb_depths()) {
            let pose = pose_with_depths(z);
            let m = ranking_matrix_from_pose(&pose, 0.0).unwrap();
            let order = depth_order(&pose);
            for i in 0..16 {
                for j in 0..16 {
                    if z[i] != z[j] {
                        prop_assert_eq!(m.get(i, j) == 1.0, order.ranks()[i] > order.ranks()[j]);
                    }
                }
            }
        }

        #[test]
        fn depth_order_translation_scale_invariant(z in arb_depths(), shift in -1e4..1e4f64, scale in 0.01..100.0f64) {
            let a = depth_order(&pose_with_depths(z));
            let b = depth_order(&pose_with_depths(z.map(|d| d * scale + shift)));
            // shifting can merge nearly-equal depths only through rounding
            let min_gap = {
                let mut s = z; s.sort_by(f64::total_cmp);
                s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
            };
            prop_assume!(min_gap > 1e-6);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalize_moments(v in prop::collection::vec(-1e3..1e3f64, 2..64)) {
            prop_assume!(v.iter().any(|&x| x != v[0]));
            let out = normalize(&v).unwrap();
            let n = out.len() as f64;
            let mean = out.iter().sum::<f64>() / n;
            let std = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-12);
            prop_assert!((std - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ranking_invariant_under_root_center(z in arb_depths()) {
            let pose = pose_with_depths(z);
            let a = ranking_matrix_from_pose(&pose, 0.0).unwrap();
            let b = ranking_matrix_from_pose(&root_center(&pose), 0.0).unwrap();
            // root-centering subtracts the same value from every depth; exact
            // ties can only appear through rounding of near-equal depths
            let min_gap = {
                let mut s = z; s.sort_by(f64::total_cmp);
                s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
            };
            prop_assume!(min_gap > 1e-6);
            prop_assert_eq!(a, b);
        }
    }
}
