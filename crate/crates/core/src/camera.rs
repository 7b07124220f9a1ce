//! Virtual-camera synthesis for augmenting (2D pose, ranking matrix, 3D pose)
//! training triples.
//!
//! World convention: `+y` is vertical. Camera frames have `z` along the
//! optical axis (into the screen), `x` horizontal (parallel to the ground
//! plane) and `y = z × x`.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::project_camera_frame;
use crate::ranking::{noisy_ranking_oracle, AccuracyMatrix};
use crate::skeleton::{ranking_matrix_from_pose, Pose2D, Pose3D, RankingMatrix};

pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Viewing directions whose vertical component exceeds this are resampled.
const MAX_VERTICAL_VIEW: f64 = 0.999;
/// Sampled distances are truncated below this fraction of the mean.
const MIN_DISTANCE_FRACTION: f64 = 0.1;
/// Joints closer than this to the camera plane (mm) trigger a resample
/// during augmentation.
const MIN_SUBJECT_DEPTH: f64 = 100.0;
const MAX_CAMERA_RESAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vector3<f64>,
    /// World-to-camera rotation; rows are the camera axes in world frame.
    pub rotation: Matrix3<f64>,
    pub focal: f64,
}

impl Camera {
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>, focal: f64) -> Result<Self> {
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::Input(format!("focal length must be positive, got {focal}")));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return Err(Error::Input("camera position is not finite".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(ortho <= 1e-9) || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Input("camera rotation is not a proper rotation".into()));
        }
        if rotation.row(0).dot(&WORLD_UP.transpose()).abs() > 1e-9 {
            return Err(Error::Input(
                "camera x axis must be parallel to the ground plane".into(),
            ));
        }
        Ok(Camera {
            position,
            rotation,
            focal,
        })
    }

    /// Camera at the origin looking down world `+z`.
    pub fn identity(focal: f64) -> Self {
        Camera {
            position: Vector3::zeros(),
            rotation: Matrix3::identity(),
            focal,
        }
    }

    /// Camera at `position` whose optical axis passes through `target`, with
    /// its horizontal axis parallel to the ground plane.
    pub fn look_at(position: Vector3<f64>, target: Vector3<f64>, focal: f64) -> Result<Self> {
        let forward = target - position;
        let dist = forward.norm();
        if !(dist > 0.0) {
            return Err(Error::Degenerate("camera position coincides with its target".into()));
        }
        let forward = forward / dist;
        let right = WORLD_UP.cross(&forward);
        let rn = right.norm();
        if rn < 1e-9 {
            return Err(Error::Degenerate("vertical viewing direction has no horizontal axis".into()));
        }
        let right = right / rn;
        let down_or_up = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down_or_up.transpose(),
            forward.transpose(),
        ]);
        Camera::new(position, rotation, focal)
    }

    pub fn to_camera_frame(&self, pose: &Pose3D) -> Pose3D {
        Pose3D::new(pose.joints.map(|v| self.rotation * (v - self.position)))
    }

    pub fn optical_axis(&self) -> OpticalAxis {
        OpticalAxis {
            origin: self.position,
            direction: self.rotation.row(2).transpose(),
        }
    }

    /// Numbers in camera-file order: position, row-major rotation, focal.
    pub fn to_record(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[..3].copy_from_slice(self.position.as_slice());
        for r in 0..3 {
            for c in 0..3 {
                out[3 + 3 * r + c] = self.rotation[(r, c)];
            }
        }
        out[12] = self.focal;
        out
    }

    pub fn from_record(values: &[f64]) -> Result<Self> {
        if values.len() != 13 {
            return Err(Error::Shape(format!("camera record needs 13 values, got {}", values.len())));
        }
        let position = Vector3::new(values[0], values[1], values[2]);
        let rotation = Matrix3::from_row_slice(&values[3..12]);
        Camera::new(position, rotation, values[12])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalAxis {
    origin: Vector3<f64>,
    direction: Vector3<f64>,
}

impl OpticalAxis {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) || !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::Input("optical axis needs a finite origin and non-zero direction".into()));
        }
        Ok(OpticalAxis {
            origin,
            direction: direction / n,
        })
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn distance_to(&self, point: &Vector3<f64>) -> f64 {
        let d = point - self.origin;
        (d - self.direction * self.direction.dot(&d)).norm()
    }
}

/// Point with the least summed squared distance to all axes, from the normal
/// equations `Σ(I - d dᵀ) V = Σ(I - d dᵀ) o`.
pub fn optical_center(axes: &[OpticalAxis]) -> Result<Vector3<f64>> {
    if axes.len() < 2 {
        return Err(Error::Degenerate("need at least two optical axes".into()));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for axis in axes {
        let proj = Matrix3::identity() - axis.direction * axis.direction.transpose();
        a += proj;
        b += proj * axis.origin;
    }
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-10 * max) {
        return Err(Error::Degenerate("optical axes are (nearly) parallel".into()));
    }
    a.cholesky()
        .map(|c| c.solve(&b))
        .ok_or_else(|| Error::Degenerate("optical-axis normal equations are singular".into()))
}

/// Mean and population standard deviation of camera-to-center distances.
pub fn fit_distance_distribution(cams: &[Camera], center: &Vector3<f64>) -> Result<(f64, f64)> {
    if cams.is_empty() {
        return Err(Error::Input("no cameras to fit a distance distribution".into()));
    }
    let d: Vec<f64> = cams.iter().map(|c| (c.position - center).norm()).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Unit viewing direction uniform on the sphere, excluding the near-vertical
/// caps.
pub fn sample_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
        if y.abs() <= MAX_VERTICAL_VIEW {
            return Vector3::new(x, y, z);
        }
    }
}

/// A camera on a sphere around `center` looking at it; radius drawn from a
/// normal distribution truncated below `0.1 * dist_mean`.
pub fn sample_camera(
    center: &Vector3<f64>,
    dist_mean: f64,
    dist_std: f64,
    focal: f64,
    rng: &mut impl Rng,
) -> Result<Camera> {
    if !(dist_mean > 0.0) || !(dist_std >= 0.0) {
        return Err(Error::Input(format!(
            "invalid camera distance distribution N({dist_mean}, {dist_std})"
        )));
    }
    let dist = if dist_std == 0.0 {
        dist_mean
    } else {
        let normal = Normal::new(dist_mean, dist_std).map_err(|e| Error::Input(e.to_string()))?;
        loop {
            let d = normal.sample(rng);
            if d > MIN_DISTANCE_FRACTION * dist_mean {
                break d;
            }
        }
    };
    let dir = sample_direction(rng);
    Camera::look_at(center + dir * dist, *center, focal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major symmetric 2x2 covariance.
    pub cov: [[f64; 2]; 2],
}

/// Mixture of 2D Gaussians used to perturb joint positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub components: Vec<GmmComponent>,
}

impl Gmm {
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                return Err(Error::Config(format!("component {k} has negative weight")));
            }
            total += c.weight;
            let [[a, b], [b2, d]] = c.cov;
            if b != b2 {
                return Err(Error::Config(format!("component {k} covariance is not symmetric")));
            }
            let tol = 1e-12 * (a.abs() + d.abs()).max(1.0);
            if a < 0.0 || d < 0.0 || a * d - b * b < -tol {
                return Err(Error::Config(format!(
                    "component {k} covariance is not positive semi-definite"
                )));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Lower-triangular factor of a PSD 2x2 covariance.
    fn factor(cov: &[[f64; 2]; 2]) -> Matrix2<f64> {
        let [[a, b], [_, d]] = *cov;
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        Matrix2::new(l11, 0.0, l21, l22)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector2<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.last().expect("validated mixture");
        for c in &self.components {
            acc += c.weight;
            if u < acc && c.weight > 0.0 {
                chosen = c;
                break;
            }
        }
        let z = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
        Vector2::from(chosen.mean) + Self::factor(&chosen.cov) * z
    }
}

impl Default for Gmm {
    /// Mostly small jitter with heavier tails, in image units.
    fn default() -> Self {
        Gmm {
            components: vec![
                GmmComponent {
                    weight: 0.7,
                    mean: [0.0, 0.0],
                    cov: [[1.0, 0.0], [0.0, 1.0]],
                },
                GmmComponent {
                    weight: 0.2,
                    mean: [0.0, 0.0],
                    cov: [[9.0, 0.0], [0.0, 9.0]],
                },
                GmmComponent {
                    weight: 0.1,
                    mean: [0.0, 0.0],
                    cov: [[36.0, 0.0], [0.0, 36.0]],
                },
            ],
        }
    }
}

pub fn gmm_noise_2d(p2d: &Pose2D, gmm: &Gmm, rng: &mut impl Rng) -> Result<Pose2D> {
    gmm.validate()?;
    Ok(Pose2D::new(p2d.joints.map(|v| v + gmm.sample(rng))))
}

/// Optional perturbations applied to synthesized samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub gmm: Option<Gmm>,
    pub acc: Option<AccuracyMatrix>,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraSampling {
    /// Fresh cameras on a sphere around the rig's optical center.
    Sphere,
    /// Cycle through the training cameras themselves.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub factor: usize,
    /// Fitted from the training cameras when unset.
    pub dist_mean: Option<f64>,
    pub dist_std: Option<f64>,
    pub eps: f64,
    pub cameras: CameraSampling,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            factor: 3,
            dist_mean: None,
            dist_std: None,
            eps: 0.0,
            cameras: CameraSampling::Sphere,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor < 1 {
            return Err(Error::Config("augmentation factor must be >= 1".into()));
        }
        if let Some(std) = self.dist_std {
            if !(std >= 0.0) {
                return Err(Error::Config("distance std must be >= 0".into()));
            }
        }
        if let Some(mean) = self.dist_mean {
            if !(mean > 0.0) {
                return Err(Error::Config("distance mean must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Where a sample came from, used to check split hygiene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: usize,
    /// Rig camera index; `None` for virtual cameras.
    pub camera: Option<usize>,
    pub augmented: bool,
}

/// One training/evaluation triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub s2d: Pose2D,
    pub ranking: RankingMatrix,
    /// Camera-frame 3D pose.
    pub s3d: Pose3D,
    pub provenance: Provenance,
}

/// Moves a world-frame pose into `cam`'s frame, projects it and ranks the
/// camera-frame depths.
pub fn synthesize_sample(
    pose_world: &Pose3D,
    cam: &Camera,
    eps: f64,
) -> Result<(Pose2D, RankingMatrix, Pose3D)> {
    let s3d = cam.to_camera_frame(pose_world);
    let s2d = project_camera_frame(&s3d, cam.focal)?;
    let ranking = ranking_matrix_from_pose(&s3d, eps)?;
    Ok((s2d, ranking, s3d))
}

/// Per-sample generator derived from `(seed, index)` so the output does not
/// depend on the order samples are produced in.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn min_depth(pose: &Pose3D) -> f64 {
    pose.joints.iter().map(|v| v.z).fold(f64::INFINITY, f64::min)
}

/// Produces `factor` synthesized samples per input pose, optionally
/// perturbing the 2D joints with the mixture and flipping ranking pairs
/// according to the accuracy matrix.
pub fn augment_dataset(
    poses_world: &[(Pose3D, usize)],
    cams_train: &[Camera],
    noise: &NoiseConfig,
    cfg: &AugmentConfig,
) -> Result<Vec<Sample>> {
    cfg.validate()?;
    if let Some(gmm) = &noise.gmm {
        gmm.validate()?;
    }
    if cams_train.is_empty() {
        return Err(Error::Input("augmentation needs at least one training camera".into()));
    }
    let focal = cams_train.iter().map(|c| c.focal).sum::<f64>() / cams_train.len() as f64;
    let (center, dist_mean, dist_std) = match cfg.cameras {
        CameraSampling::Sphere => {
            let axes: Vec<_> = cams_train.iter().map(Camera::optical_axis).collect();
            let center = optical_center(&axes)?;
            let (m, s) = fit_distance_distribution(cams_train, &center)?;
            (center, cfg.dist_mean.unwrap_or(m), cfg.dist_std.unwrap_or(s))
        }
        CameraSampling::Fixed => (Vector3::zeros(), 1.0, 0.0),
    };

    let mut out = Vec::with_capacity(poses_world.len() * cfg.factor);
    for (pi, (pose, subject)) in poses_world.iter().enumerate() {
        for k in 0..cfg.factor {
            let index = (pi * cfg.factor + k) as u64;
            let mut rng = sample_rng(cfg.seed, index);
            let (cam, camera_id) = match cfg.cameras {
                CameraSampling::Fixed => {
                    let id = (pi * cfg.factor + k) % cams_train.len();
                    (cams_train[id].clone(), Some(id))
                }
                CameraSampling::Sphere => {
                    let mut tries = 0;
                    loop {
                        let cam = sample_camera(&center, dist_mean, dist_std, focal, &mut rng)?;
                        if min_depth(&cam.to_camera_frame(pose)) > MIN_SUBJECT_DEPTH {
                            break (cam, None);
                        }
                        tries += 1;
                        if tries >= MAX_CAMERA_RESAMPLES {
                            return Err(Error::Degenerate(format!(
                                "could not place a camera in front of pose {pi}"
                            )));
                        }
                    }
                }
            };
            let (mut s2d, mut ranking, s3d) = synthesize_sample(pose, &cam, cfg.eps)?;
            if let Some(gmm) = &noise.gmm {
                s2d = Pose2D::new(s2d.joints.map(|v| v + gmm.sample(&mut rng)));
            }
            if let Some(acc) = &noise.acc {
                ranking = noisy_ranking_oracle(&ranking, acc, &mut rng);
            }
            out.push(Sample {
                s2d,
                ranking,
                s3d,
                provenance: Provenance {
                    subject: *subject,
                    camera: camera_id,
                    augmented: true,
                },
            });
        }
    }
    debug_assert_eq!(out.len(), poses_world.len() * cfg.factor);
    Ok(out)
}
