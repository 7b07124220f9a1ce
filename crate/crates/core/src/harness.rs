//! Experiment orchestration: synthetic motion, protocol splits, dataset
//! assembly, training/evaluation runs, ablations and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{
    augment_dataset, sample_rng, synthesize_sample, AugmentConfig, Camera, Gmm, NoiseConfig, Provenance,
    Sample,
};
use crate::dpnet::{self, EpochStats, ModelConfig, NormStats, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::geometry::{mpjpe, per_joint_errors, procrustes_align, reconstruct_depths, Reconstruction};
use crate::io;
use crate::ranking::{noisy_ranking_oracle, pairwise_accuracy, AccuracyMatrix};
use crate::skeleton::{
    ranking_matrix_from_pose, root_center, JointId, Pose3D, RankingMatrix, SkeletonTopology,
    DEFAULT_BONE_LENGTHS, JOINT_NAMES, NUM_JOINTS,
};

/// Angle range in degrees, `[min, max]`.
pub type AngleRange = [f64; 2];

/// Per-bone rotation ranges relative to the parent bone, in degrees.
/// Rotations compose as yaw (about y), then pitch (about x), then roll
/// (about z).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BoneAngles {
    pub x: AngleRange,
    pub y: AngleRange,
    pub z: AngleRange,
}

impl BoneAngles {
    const fn new(x: AngleRange, y: AngleRange, z: AngleRange) -> Self {
        BoneAngles { x, y, z }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticMotionConfig {
    pub num_poses: usize,
    pub num_subjects: usize,
    /// Indexed by child joint, mm; the root entry is ignored.
    pub bone_lengths: [f64; NUM_JOINTS],
    /// Each subject scales every bone by a factor drawn from this range.
    pub subject_scale: [f64; 2],
    /// Heading of the whole body about the vertical axis.
    pub root_yaw: AngleRange,
    /// Keyed by the child joint of the bone. Bones that are not listed stay
    /// at rest.
    pub angles: BTreeMap<String, BoneAngles>,
    pub seed: u64,
}

/// Rest direction of the bone ending at each joint. The subject faces +z
/// with +y up, so its right side is -x.
const REST_DIRECTIONS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
];

fn default_angles() -> BTreeMap<String, BoneAngles> {
    let table = [
        ("r_ankle", BoneAngles::new([0.0, 120.0], [-10.0, 10.0], [-5.0, 5.0])),
        ("r_knee", BoneAngles::new([-100.0, 30.0], [-30.0, 30.0], [-10.0, 40.0])),
        ("r_hip", BoneAngles::new([-5.0, 5.0], [-10.0, 10.0], [-5.0, 5.0])),
        ("l_hip", BoneAngles::new([-5.0, 5.0], [-10.0, 10.0], [-5.0, 5.0])),
        ("l_knee", BoneAngles::new([-100.0, 30.0], [-30.0, 30.0], [-40.0, 10.0])),
        ("l_ankle", BoneAngles::new([0.0, 120.0], [-10.0, 10.0], [-5.0, 5.0])),
        ("thorax", BoneAngles::new([-15.0, 45.0], [-30.0, 30.0], [-20.0, 20.0])),
        ("upper_neck", BoneAngles::new([-20.0, 30.0], [-20.0, 20.0], [-15.0, 15.0])),
        ("head_top", BoneAngles::new([-30.0, 30.0], [-45.0, 45.0], [-20.0, 20.0])),
        ("r_shoulder", BoneAngles::new([-10.0, 10.0], [-15.0, 15.0], [-10.0, 15.0])),
        ("l_shoulder", BoneAngles::new([-10.0, 10.0], [-15.0, 15.0], [-15.0, 10.0])),
        ("r_elbow", BoneAngles::new([-150.0, 40.0], [-40.0, 40.0], [-90.0, 10.0])),
        ("l_elbow", BoneAngles::new([-150.0, 40.0], [-40.0, 40.0], [-10.0, 90.0])),
        ("r_wrist", BoneAngles::new([-140.0, 0.0], [-30.0, 30.0], [-10.0, 10.0])),
        ("l_wrist", BoneAngles::new([-140.0, 0.0], [-30.0, 30.0], [-10.0, 10.0])),
    ];
    table.into_iter().map(|(n, a)| (n.to_string(), a)).collect()
}

impl Default for SyntheticMotionConfig {
    fn default() -> Self {
        SyntheticMotionConfig {
            num_poses: 7000,
            num_subjects: 7,
            bone_lengths: DEFAULT_BONE_LENGTHS,
            subject_scale: [0.9, 1.1],
            root_yaw: [-180.0, 180.0],
            angles: default_angles(),
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: &[f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi) {
        return Err(Error::Config(format!("{name} range {r:?} must satisfy {lo} <= min <= max <= {hi}")));
    }
    Ok(())
}

impl SyntheticMotionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_poses == 0 || self.num_subjects == 0 {
            return Err(Error::Config("need at least one pose and one subject".into()));
        }
        if self.num_subjects > self.num_poses {
            return Err(Error::Config("more subjects than poses".into()));
        }
        check_range("subject scale", &self.subject_scale, f64::MIN_POSITIVE, f64::MAX)?;
        check_range("root yaw", &self.root_yaw, -180.0, 180.0)?;
        for (name, a) in &self.angles {
            let j = JOINT_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("unknown joint {name:?} in angle table")))?;
            if j == JointId::ROOT.index() {
                return Err(Error::Config("the root has no bone to rotate".into()));
            }
            for (axis, r) in [("x", &a.x), ("y", &a.y), ("z", &a.z)] {
                check_range(&format!("{name}.{axis}"), r, -180.0, 180.0)?;
            }
        }
        self.topology().map(|_| ())
    }

    pub fn topology(&self) -> Result<SkeletonTopology> {
        SkeletonTopology::mpii(self.bone_lengths).map_err(|e| Error::Config(e.to_string()))
    }
}

/// World-frame poses tagged with their subject, plus each subject's
/// skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub poses: Vec<(Pose3D, usize)>,
    pub subjects: Vec<SkeletonTopology>,
}

fn draw(range: &AngleRange, rng: &mut impl Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

fn bone_rotation(a: &BoneAngles, rng: &mut impl Rng) -> Matrix3<f64> {
    let yaw = draw(&a.y, rng).to_radians();
    let pitch = draw(&a.x, rng).to_radians();
    let roll = draw(&a.z, rng).to_radians();
    let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), pitch)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), roll);
    r.into_inner()
}

/// Forward kinematics from joint angles sampled in the configured ranges.
/// The pelvis sits at the world origin.
pub fn generate_motion(cfg: &SyntheticMotionConfig) -> Result<Motion> {
    cfg.validate()?;
    let base = cfg.topology()?;
    let mut scale_rng = sample_rng(cfg.seed, 0);
    let subjects = (0..cfg.num_subjects)
        .map(|_| base.scaled(draw(&cfg.subject_scale, &mut scale_rng)))
        .collect::<Result<Vec<_>>>()?;
    let angles: [BoneAngles; NUM_JOINTS] = std::array::from_fn(|j| {
        cfg.angles.get(JOINT_NAMES[j]).copied().unwrap_or_default()
    });

    let poses = (0..cfg.num_poses)
        .map(|i| {
            let subject = i % cfg.num_subjects;
            let topo = &subjects[subject];
            let mut rng = sample_rng(cfg.seed, i as u64 + 1);
            let mut frame = [Matrix3::identity(); NUM_JOINTS];
            let mut joints = [Vector3::zeros(); NUM_JOINTS];
            frame[JointId::ROOT.index()] = *Rotation3::from_axis_angle(
                &Vector3::y_axis(),
                draw(&cfg.root_yaw, &mut rng).to_radians(),
            )
            .matrix();
            for &joint in topo.dfs_order() {
                let Some(parent) = topo.parent(joint) else { continue };
                let (c, p) = (joint.index(), parent.index());
                frame[c] = frame[p] * bone_rotation(&angles[c], &mut rng);
                let rest = Vector3::from(REST_DIRECTIONS[c]);
                joints[c] = joints[p] + frame[c] * rest * topo.bone_lengths()[c];
            }
            (Pose3D::new(joints), subject)
        })
        .collect();
    Ok(Motion { poses, subjects })
}

/// Four cameras around the origin: front, both sides, and a raised view
/// from behind.
pub fn default_rig() -> Vec<Camera> {
    let placements = [
        Vector3::new(0.0, 400.0, 4800.0),
        Vector3::new(5200.0, 200.0, 0.0),
        Vector3::new(-5000.0, 300.0, 0.0),
        Vector3::new(0.0, 2500.0, -4600.0),
    ];
    placements
        .iter()
        .map(|p| Camera::look_at(*p, Vector3::zeros(), 1000.0).expect("rig cameras are not vertical"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    SubjectHoldout,
    CameraHoldout,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::SubjectHoldout => "subject-holdout",
            SplitKind::CameraHoldout => "camera-holdout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSplit {
    pub kind: SplitKind,
    pub train_subjects: Vec<usize>,
    pub test_subjects: Vec<usize>,
    pub train_cameras: Vec<usize>,
    pub test_cameras: Vec<usize>,
}

impl ProtocolSplit {
    /// Disjoint subjects, every camera on both sides.
    pub fn subject_holdout(num_subjects: usize, test_subjects: Vec<usize>, num_cameras: usize) -> Self {
        ProtocolSplit {
            kind: SplitKind::SubjectHoldout,
            train_subjects: (0..num_subjects).filter(|s| !test_subjects.contains(s)).collect(),
            test_subjects,
            train_cameras: (0..num_cameras).collect(),
            test_cameras: (0..num_cameras).collect(),
        }
    }

    /// Disjoint subjects; test poses are seen only through `test_camera`,
    /// which training never sees.
    pub fn camera_holdout(
        num_subjects: usize,
        test_subjects: Vec<usize>,
        num_cameras: usize,
        test_camera: usize,
    ) -> Self {
        ProtocolSplit {
            kind: SplitKind::CameraHoldout,
            train_subjects: (0..num_subjects).filter(|s| !test_subjects.contains(s)).collect(),
            test_subjects,
            train_cameras: (0..num_cameras).filter(|&c| c != test_camera).collect(),
            test_cameras: vec![test_camera],
        }
    }

    pub fn validate(&self, num_subjects: usize, num_cameras: usize) -> Result<()> {
        let lists = [
            ("train subjects", &self.train_subjects, num_subjects),
            ("test subjects", &self.test_subjects, num_subjects),
            ("train cameras", &self.train_cameras, num_cameras),
            ("test cameras", &self.test_cameras, num_cameras),
        ];
        for (name, ids, n) in lists {
            if ids.is_empty() {
                return Err(Error::Split(format!("{name} are empty")));
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= n) {
                return Err(Error::Split(format!("{name} contain {bad}, only {n} exist")));
            }
        }
        let overlap = |a: &[usize], b: &[usize]| a.iter().find(|x| b.contains(x)).copied();
        match self.kind {
            SplitKind::SubjectHoldout => {
                if let Some(s) = overlap(&self.train_subjects, &self.test_subjects) {
                    return Err(Error::Split(format!("subject {s} is in both train and test")));
                }
            }
            SplitKind::CameraHoldout => {
                if self.test_cameras.len() != 1 {
                    return Err(Error::Split("camera holdout needs exactly one test camera".into()));
                }
                if let Some(c) = overlap(&self.train_cameras, &self.test_cameras) {
                    return Err(Error::Split(format!("camera {c} is in both train and test")));
                }
            }
        }
        Ok(())
    }

    /// Fails if any training sample comes from a held-out subject or camera.
    pub fn check_training_samples(&self, samples: &[Sample]) -> Result<()> {
        for (k, s) in samples.iter().enumerate() {
            let p = &s.provenance;
            if self.kind == SplitKind::SubjectHoldout && self.test_subjects.contains(&p.subject) {
                return Err(Error::Split(format!("training sample {k} is from test subject {}", p.subject)));
            }
            if self.kind == SplitKind::CameraHoldout {
                if let Some(c) = p.camera.filter(|c| self.test_cameras.contains(c)) {
                    return Err(Error::Split(format!("training sample {k} is from test camera {c}")));
                }
            }
        }
        Ok(())
    }
}

/// What the network sees in place of a ranking matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankSource {
    Gt,
    /// Ground truth passed through the flip oracle.
    Noisy,
    /// A constant all-ties matrix.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub source: RankSource,
    /// Per-pair oracle accuracies are drawn from this range unless a file
    /// is given.
    pub accuracy: [f64; 2],
    pub accuracy_file: Option<PathBuf>,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            source: RankSource::Noisy,
            accuracy: [0.85, 0.95],
            accuracy_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub motion: SyntheticMotionConfig,
    /// Rig cameras; the built-in four-camera rig when unset.
    pub camera_file: Option<PathBuf>,
    pub split: ProtocolSplit,
    /// Rig views rendered per pose (0 renders every allowed camera).
    pub views_per_pose: usize,
    /// Share of training poses held back for model selection.
    pub val_fraction: f64,
    /// Depth tolerance for ranking matrices, mm.
    pub eps: f64,
    pub rank: RankConfig,
    /// Detector-like noise on every 2D input.
    pub noise_2d: Option<Gmm>,
    /// Virtual-camera samples added to the training set.
    pub augment: Option<AugmentConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let motion = SyntheticMotionConfig::default();
        let split = ProtocolSplit::subject_holdout(motion.num_subjects, vec![motion.num_subjects - 1], 4);
        PipelineConfig {
            seed: 0,
            motion,
            camera_file: None,
            split,
            views_per_pose: 1,
            val_fraction: 0.1,
            eps: 0.0,
            rank: RankConfig::default(),
            noise_2d: None,
            augment: Some(AugmentConfig::default()),
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }
}

const STREAM_RANK_TRAIN: u64 = 0x5241_4e4b;
const STREAM_RANK_TEST: u64 = 0x5445_5354;
const STREAM_ACCURACY: u64 = 0x4143_4355;

impl PipelineConfig {
    /// Sets the master seed and the seeds of every stage derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.motion.seed = seed;
        if let Some(a) = &mut self.augment {
            a.seed = seed.wrapping_add(1);
        }
        self.train.seed = seed.wrapping_add(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if let Some(g) = &self.noise_2d {
            g.validate()?;
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config("eps must be >= 0".into()));
        }
        let [lo, hi] = self.rank.accuracy;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("rank accuracy range {:?} is invalid", self.rank.accuracy)));
        }
        if self.model.hidden_width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn fingerprint(&self) -> Result<String> {
        let text = toml::to_string(self)?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        match &self.camera_file {
            Some(path) => io::read_cameras(path),
            None => Ok(default_rig()),
        }
    }

    pub fn accuracy_matrix(&self) -> Result<AccuracyMatrix> {
        match &self.rank.accuracy_file {
            Some(path) => io::read_accuracy(path),
            None => {
                let mut rng = sample_rng(self.seed, STREAM_ACCURACY);
                AccuracyMatrix::random(self.rank.accuracy[0], self.rank.accuracy[1], &mut rng)
            }
        }
    }
}

pub struct Datasets {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn render(
    poses: &[(usize, &(Pose3D, usize))],
    cams: &[Camera],
    allowed: &[usize],
    views: usize,
    eps: f64,
) -> Result<Vec<Sample>> {
    let views = if views == 0 { allowed.len() } else { views.min(allowed.len()) };
    let mut out = Vec::with_capacity(poses.len() * views);
    for &(i, (pose, subject)) in poses {
        for k in 0..views {
            let cam_id = allowed[(i + k) % allowed.len()];
            let (s2d, ranking, s3d) = synthesize_sample(pose, &cams[cam_id], eps)?;
            out.push(Sample {
                s2d,
                ranking,
                s3d,
                provenance: Provenance {
                    subject: *subject,
                    camera: Some(cam_id),
                    augmented: false,
                },
            });
        }
    }
    Ok(out)
}

/// Applies 2D noise and the configured ranking source, drawing randomness
/// per sample from `(seed, stream, index)`.
pub fn perturb_inputs(samples: &mut [Sample], cfg: &PipelineConfig, acc: &AccuracyMatrix, stream: u64) {
    let ties = RankingMatrix::all_ties();
    for (k, s) in samples.iter_mut().enumerate() {
        let mut rng = sample_rng(cfg.seed, stream.wrapping_mul(1 << 32).wrapping_add(k as u64));
        if let Some(g) = &cfg.noise_2d {
            s.s2d = crate::skeleton::Pose2D::new(s.s2d.joints.map(|v| v + g.sample(&mut rng)));
        }
        match cfg.rank.source {
            RankSource::Gt => {}
            RankSource::Noisy => s.ranking = noisy_ranking_oracle(&s.ranking, acc, &mut rng),
            RankSource::None => s.ranking = ties.clone(),
        }
    }
}

/// Renders the split into train, validation and test samples.
pub fn build_datasets(cfg: &PipelineConfig, motion: &Motion, cams: &[Camera]) -> Result<Datasets> {
    cfg.validate()?;
    cfg.split.validate(motion.subjects.len(), cams.len())?;
    let acc = cfg.accuracy_matrix()?;
    let indexed: Vec<(usize, &(Pose3D, usize))> = motion.poses.iter().enumerate().collect();
    let train_poses: Vec<_> = indexed.iter().filter(|(_, p)| cfg.split.train_subjects.contains(&p.1)).copied().collect();
    let test_poses: Vec<_> = indexed.iter().filter(|(_, p)| cfg.split.test_subjects.contains(&p.1)).copied().collect();
    if train_poses.is_empty() || test_poses.is_empty() {
        return Err(Error::Split("split leaves no training or no test poses".into()));
    }
    let holdout = |j: usize| {
        let f = cfg.val_fraction;
        (j as f64 * f).floor() != ((j + 1) as f64 * f).floor()
    };
    let (val_poses, fit_poses): (Vec<_>, Vec<_>) =
        train_poses.iter().enumerate().partition(|(j, _)| holdout(*j));
    let fit_poses: Vec<_> = fit_poses.into_iter().map(|(_, p)| *p).collect();
    let val_poses: Vec<_> = val_poses.into_iter().map(|(_, p)| *p).collect();

    let mut train = render(&fit_poses, cams, &cfg.split.train_cameras, cfg.views_per_pose, cfg.eps)?;
    if let Some(aug) = &cfg.augment {
        let world: Vec<(Pose3D, usize)> = fit_poses.iter().map(|(_, p)| (*p).clone()).collect();
        let train_cams: Vec<Camera> = cfg.split.train_cameras.iter().map(|&c| cams[c].clone()).collect();
        let aug_cfg = AugmentConfig { eps: cfg.eps, ..aug.clone() };
        train.extend(augment_dataset(&world, &train_cams, &NoiseConfig::none(), &aug_cfg)?);
    }
    let mut val = render(&val_poses, cams, &cfg.split.train_cameras, cfg.views_per_pose, cfg.eps)?;
    let mut test = render(&test_poses, cams, &cfg.split.test_cameras, cfg.views_per_pose, cfg.eps)?;
    perturb_inputs(&mut train, cfg, &acc, STREAM_RANK_TRAIN);
    perturb_inputs(&mut val, cfg, &acc, STREAM_RANK_TRAIN + 1);
    perturb_inputs(&mut test, cfg, &acc, STREAM_RANK_TEST);
    if val.is_empty() {
        return Err(Error::Config("val_fraction leaves no validation poses".into()));
    }
    Ok(Datasets { train, val, test })
}

/// Evaluation summary for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub label: String,
    pub protocol: SplitKind,
    pub fingerprint: String,
    /// Root-centered MPJPE, mm.
    pub mpjpe: f64,
    /// MPJPE after similarity alignment, mm.
    pub pa_mpjpe: f64,
    pub per_joint: [f64; NUM_JOINTS],
    /// Agreement of the rankings fed at test time with the true ones.
    pub ranking_accuracy: AccuracyMatrix,
    pub train_samples: usize,
    pub test_samples: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Report {
    /// The per-joint table must average to the overall MPJPE.
    pub fn check(&self) -> Result<()> {
        let mean = self.per_joint.iter().sum::<f64>() / NUM_JOINTS as f64;
        if (mean - self.mpjpe).abs() > 1e-9 {
            return Err(Error::Degenerate(format!(
                "per-joint mean {mean} disagrees with MPJPE {}",
                self.mpjpe
            )));
        }
        Ok(())
    }
}

/// Metrics of a trained model on labelled samples.
pub struct Evaluation {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub per_joint: [f64; NUM_JOINTS],
    pub ranking_accuracy: AccuracyMatrix,
}

pub fn evaluate(model: &TrainedModel, test: &[Sample], eps: f64) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let preds = dpnet::predict_samples(test, &model.params, &model.stats)?;
    let n = test.len() as f64;
    let mut total = 0.0;
    let mut aligned = 0.0;
    let mut per_joint = [0.0; NUM_JOINTS];
    let mut truth_rankings = Vec::with_capacity(test.len());
    for (pred, s) in preds.iter().zip(test) {
        let gt = root_center(&s.s3d);
        total += mpjpe(pred, &gt);
        aligned += procrustes_align(pred, &gt)?.error;
        for (acc, e) in per_joint.iter_mut().zip(per_joint_errors(pred, &gt)) {
            *acc += e;
        }
        truth_rankings.push(ranking_matrix_from_pose(&s.s3d, eps)?);
    }
    let fed: Vec<RankingMatrix> = test.iter().map(|s| s.ranking.clone()).collect();
    Ok(Evaluation {
        mpjpe: total / n,
        pa_mpjpe: aligned / n,
        per_joint: per_joint.map(|v| v / n),
        ranking_accuracy: pairwise_accuracy(&fed, &truth_rankings)?,
    })
}

/// Fits normalization statistics on `train` and trains a model.
pub fn train_model(
    train: &[Sample],
    val: &[Sample],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, dpnet::TrainOutcome)> {
    let stats = NormStats::from_samples(train)?;
    let train_b = dpnet::prepare_batch(train, &stats)?;
    let val_b = dpnet::prepare_batch(val, &stats)?;
    let outcome = dpnet::train(&train_b, &val_b, model, cfg)?;
    let trained = TrainedModel {
        params: outcome.params.clone(),
        stats,
        train: Some(cfg.clone()),
    };
    Ok((trained, outcome))
}

/// Trains on the split's training side and evaluates on its test side.
pub fn run_protocol(cfg: &PipelineConfig, label: &str) -> Result<Report> {
    let motion = generate_motion(&cfg.motion)?;
    let cams = cfg.cameras()?;
    run_protocol_on(cfg, label, &motion, &cams)
}

pub fn run_protocol_on(cfg: &PipelineConfig, label: &str, motion: &Motion, cams: &[Camera]) -> Result<Report> {
    let data = build_datasets(cfg, motion, cams)?;
    cfg.split.check_training_samples(&data.train)?;
    cfg.split.check_training_samples(&data.val)?;
    let (model, outcome) = train_model(&data.train, &data.val, &cfg.model, &cfg.train)?;
    let ev = evaluate(&model, &data.test, cfg.eps)?;
    let report = Report {
        label: label.to_string(),
        protocol: cfg.split.kind,
        fingerprint: cfg.fingerprint()?,
        mpjpe: ev.mpjpe,
        pa_mpjpe: ev.pa_mpjpe,
        per_joint: ev.per_joint,
        ranking_accuracy: ev.ranking_accuracy,
        train_samples: data.train.len(),
        test_samples: data.test.len(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    };
    report.check()?;
    Ok(report)
}

/// Runs independent configurations on separate threads; results keep the
/// input order.
pub fn run_protocols(runs: &[(PipelineConfig, String)]) -> Vec<Result<Report>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = runs
            .iter()
            .map(|(cfg, label)| scope.spawn(move || run_protocol(cfg, label)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Degenerate("run panicked".into()))))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    NoRank,
    NoDepthnet,
    NoAugment,
    GtRank,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::NoRank,
        AblationAxis::NoDepthnet,
        AblationAxis::NoAugment,
        AblationAxis::GtRank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::NoRank => "no-rank",
            AblationAxis::NoDepthnet => "no-depthnet",
            AblationAxis::NoAugment => "no-augment",
            AblationAxis::GtRank => "gt-rank",
        }
    }

    /// The base configuration with only this component changed.
    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            AblationAxis::NoRank => cfg.rank.source = RankSource::None,
            AblationAxis::NoDepthnet => cfg.model.use_depthnet = false,
            AblationAxis::NoAugment => cfg.augment = None,
            AblationAxis::GtRank => cfg.rank.source = RankSource::Gt,
        }
        cfg
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation axis {s:?}")))
    }
}

/// Parses a comma-separated axis list.
pub fn parse_axes(text: &str) -> Result<Vec<AblationAxis>> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

/// The base run followed by one run per axis, executed in parallel.
pub fn run_ablation(axes: &[AblationAxis], base: &PipelineConfig) -> Result<Vec<Report>> {
    base.validate()?;
    let mut runs = vec![(base.clone(), "base".to_string())];
    runs.extend(axes.iter().map(|a| (a.apply(base), a.name().to_string())));
    run_protocols(&runs).into_iter().collect()
}

/// Writes `summary.toml`, `per_joint.csv`, `ranking_accuracy.csv` and
/// `history.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        label: &'a str,
        protocol: SplitKind,
        fingerprint: &'a str,
        mpjpe_mm: f64,
        pa_mpjpe_mm: f64,
        mean_ranking_accuracy: f64,
        train_samples: usize,
        test_samples: usize,
        best_epoch: usize,
    }
    io::write_toml(
        &dir.join("summary.toml"),
        &Summary {
            label: &report.label,
            protocol: report.protocol,
            fingerprint: &report.fingerprint,
            mpjpe_mm: report.mpjpe,
            pa_mpjpe_mm: report.pa_mpjpe,
            mean_ranking_accuracy: report.ranking_accuracy.mean_off_diagonal(),
            train_samples: report.train_samples,
            test_samples: report.test_samples,
            best_epoch: report.best_epoch,
        },
    )?;
    write_csv(
        &dir.join("per_joint.csv"),
        "joint,mpjpe_mm",
        JOINT_NAMES.iter().zip(&report.per_joint).map(|(n, e)| format!("{n},{e}")),
    )?;
    io::write_accuracy(&dir.join("ranking_accuracy.csv"), &report.ranking_accuracy)?;
    write_history(&dir.join("history.csv"), &report.history)
}

pub fn write_history(path: &Path, history: &[EpochStats]) -> Result<()> {
    write_csv(
        path,
        "epoch,learning_rate,batch_loss,train_loss,val_loss",
        history.iter().map(|h| {
            format!("{},{},{},{},{}", h.epoch, h.learning_rate, h.batch_loss, h.train_loss, h.val_loss)
        }),
    )
}

/// One row per report, for comparing ablation arms.
pub fn write_comparison(path: &Path, reports: &[Report]) -> Result<()> {
    write_csv(
        path,
        "label,protocol,mpjpe_mm,pa_mpjpe_mm,mean_ranking_accuracy",
        reports.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.label,
                r.protocol,
                r.mpjpe,
                r.pa_mpjpe,
                r.ranking_accuracy.mean_off_diagonal()
            )
        }),
    )
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    io::write_atomic(path, |w| {
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })
}

/// Reconstructs every pose in the 2D file from the matching ranking record
/// and writes poses plus clamp flags to `out`. Nothing is written unless
/// every input parses.
pub fn reconstruct_files(
    pose2d: &Path,
    ranking: &Path,
    topology: &Path,
    root_depth: f64,
    out: &Path,
) -> Result<Vec<Reconstruction>> {
    let poses = io::read_poses2d(pose2d)?;
    let rankings = io::read_rankings(ranking)?;
    let topo = io::read_topology(topology)?;
    if poses.len() != rankings.len() {
        let (path, n) = if poses.len() < rankings.len() {
            (pose2d, poses.len())
        } else {
            (ranking, rankings.len())
        };
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: n + 2,
            msg: format!("{} poses but {} ranking records", poses.len(), rankings.len()),
        });
    }
    let recs = poses
        .iter()
        .zip(&rankings)
        .map(|(p, m)| reconstruct_depths(p, m, &topo, root_depth))
        .collect::<Result<Vec<_>>>()?;
    io::write_reconstructions(out, &recs)?;
    Ok(recs)
}

/// Writes the rendered split and everything needed to reproduce it:
/// `poses_world.csv`, `cameras.csv`, `topology.csv`, `train.csv`,
/// `val.csv`, `test.csv` and `config.toml`.
pub fn synth_to_dir(cfg: &PipelineConfig, out: &Path) -> Result<Datasets> {
    let motion = generate_motion(&cfg.motion)?;
    let cams = cfg.cameras()?;
    let data = build_datasets(cfg, &motion, &cams)?;
    std::fs::create_dir_all(out)?;
    io::write_subject_poses(&out.join("poses_world.csv"), &motion.poses)?;
    io::write_cameras(&out.join("cameras.csv"), &cams)?;
    io::write_topology(&out.join("topology.csv"), &cfg.motion.topology()?)?;
    io::write_dataset(&out.join("train.csv"), &data.train)?;
    io::write_dataset(&out.join("val.csv"), &data.val)?;
    io::write_dataset(&out.join("test.csv"), &data.test)?;
    io::write_toml(&out.join("config.toml"), cfg)?;
    Ok(data)
}

/// Virtual-camera samples for world poses seen by a rig, written to
/// `augmented.csv`. Rankings are flipped with `accuracy` when given, or
/// with the configured oracle when the rank source is noisy.
pub fn augment_files(
    cfg: &PipelineConfig,
    poses: &Path,
    cameras: &Path,
    accuracy: Option<&Path>,
    out: &Path,
) -> Result<Vec<Sample>> {
    let world = io::read_subject_poses(poses)?;
    let cams = io::read_cameras(cameras)?;
    let acc = match accuracy {
        Some(path) => Some(io::read_accuracy(path)?),
        None if cfg.rank.source == RankSource::Noisy => Some(cfg.accuracy_matrix()?),
        None => None,
    };
    let noise = NoiseConfig { gmm: cfg.noise_2d.clone(), acc };
    let aug = AugmentConfig { eps: cfg.eps, ..cfg.augment.clone().unwrap_or_default() };
    let samples = augment_dataset(&world, &cams, &noise, &aug)?;
    std::fs::create_dir_all(out)?;
    io::write_dataset(&out.join("augmented.csv"), &samples)?;
    Ok(samples)
}

/// Holds back every `1 / fraction`-th sample for validation.
pub fn split_validation(samples: Vec<Sample>, fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let f = if fraction > 0.0 { fraction } else { 0.1 };
    let (val, fit): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .enumerate()
        .partition(|(j, _)| (*j as f64 * f).floor() != ((*j + 1) as f64 * f).floor());
    (fit.into_iter().map(|x| x.1).collect(), val.into_iter().map(|x| x.1).collect())
}

/// Trains from dataset files, or from the configured synthetic split when
/// none are given, and writes `model.json` and `history.csv`.
pub fn train_to_dir(
    cfg: &PipelineConfig,
    train: Option<&Path>,
    val: Option<&Path>,
    out: &Path,
) -> Result<(TrainedModel, dpnet::TrainOutcome)> {
    cfg.validate()?;
    let (train_set, val_set) = match (train, val) {
        (Some(t), Some(v)) => (io::read_dataset(t)?, io::read_dataset(v)?),
        (Some(t), None) => split_validation(io::read_dataset(t)?, cfg.val_fraction),
        (None, Some(_)) => return Err(Error::Config("a validation file needs a training file".into())),
        (None, None) => {
            let motion = generate_motion(&cfg.motion)?;
            let data = build_datasets(cfg, &motion, &cfg.cameras()?)?;
            cfg.split.check_training_samples(&data.train)?;
            (data.train, data.val)
        }
    };
    let (model, outcome) = train_model(&train_set, &val_set, &cfg.model, &cfg.train)?;
    std::fs::create_dir_all(out)?;
    let json = model.to_json()?;
    io::write_atomic(&out.join("model.json"), |w| Ok(w.write_all(json.as_bytes())?))?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    Ok((model, outcome))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    TrainedModel::from_json(&std::fs::read_to_string(path)?)
}

/// Evaluates a saved model on a dataset file and writes a report.
pub fn eval_to_dir(cfg: &PipelineConfig, model: &Path, dataset: &Path, out: &Path) -> Result<Report> {
    let model = load_model(model)?;
    let test = io::read_dataset(dataset)?;
    let ev = evaluate(&model, &test, cfg.eps)?;
    let report = Report {
        label: "eval".into(),
        protocol: cfg.split.kind,
        fingerprint: cfg.fingerprint()?,
        mpjpe: ev.mpjpe,
        pa_mpjpe: ev.pa_mpjpe,
        per_joint: ev.per_joint,
        ranking_accuracy: ev.ranking_accuracy,
        train_samples: 0,
        test_samples: test.len(),
        best_epoch: 0,
        history: Vec::new(),
    };
    report.check()?;
    write_report(out, &report)?;
    Ok(report)
}

/// Runs the base configuration and every requested arm, writing one report
/// directory per arm plus `ablation.csv`.
pub fn ablate_to_dir(cfg: &PipelineConfig, axes: &[AblationAxis], out: &Path) -> Result<Vec<Report>> {
    let reports = run_ablation(axes, cfg)?;
    for r in &reports {
        write_report(&out.join(&r.label), r)?;
    }
    write_comparison(&out.join("ablation.csv"), &reports)?;
    Ok(reports)
}
