//! Comma-separated file formats and TOML configs.
//!
//! Every reader reports the offending line on failure. Every writer goes
//! through a temporary file in the destination directory that is renamed
//! into place only once the whole table has been written, so a failed run
//! never leaves a partial output behind.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::camera::{Camera, Provenance, Sample};
use crate::error::{Error, Result};
use crate::geometry::Reconstruction;
use crate::ranking::AccuracyMatrix;
use crate::skeleton::{
    flatten_ranking, unflatten_ranking, JointId, Pose2D, Pose3D, RankingMatrix, SkeletonTopology,
    JOINT_NAMES, NUM_JOINTS,
};

const AXES_3D: [&str; 3] = ["x", "y", "z"];
const AXES_2D: [&str; 2] = ["x", "y"];
const CAMERA_HEADER: [&str; 13] = [
    "px", "py", "pz", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "focal",
];
const TOPOLOGY_HEADER: [&str; 3] = ["joint", "parent", "bone_length"];
const SUBJECT_COLUMN: &str = "subject";

fn joint_columns(prefix: &str, axes: &[&str]) -> Vec<String> {
    JOINT_NAMES
        .iter()
        .flat_map(|n| axes.iter().map(move |a| format!("{prefix}{n}_{a}")))
        .collect()
}

/// `r_ankle_x, r_ankle_y, r_ankle_z, r_knee_x, ...`
pub fn pose3d_header() -> Vec<String> {
    joint_columns("", &AXES_3D)
}

pub fn pose2d_header() -> Vec<String> {
    joint_columns("", &AXES_2D)
}

/// `m_0_0, m_0_1, ..., m_15_15`, row-major.
pub fn ranking_header() -> Vec<String> {
    (0..NUM_JOINTS)
        .flat_map(|i| (0..NUM_JOINTS).map(move |j| format!("m_{i}_{j}")))
        .collect()
}

pub fn dataset_header() -> Vec<String> {
    let mut h = vec![SUBJECT_COLUMN.to_string(), "camera".into(), "augmented".into()];
    h.extend(joint_columns("s2d_", &AXES_2D));
    h.extend(ranking_header());
    h.extend(joint_columns("s3d_", &AXES_3D));
    h
}

/// Writes `path` via a sibling temporary file that is renamed on success.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header).map_err(csv_io)?;
        for row in rows {
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn numbers(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| v.to_string())
}

struct Row {
    line: usize,
    fields: Vec<String>,
}

struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Row>,
}

impl Table {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn expect_header(&self, expected: &[String]) -> Result<()> {
        if self.header != expected {
            let first = self
                .header
                .iter()
                .zip(expected)
                .position(|(a, b)| a != b)
                .unwrap_or(self.header.len().min(expected.len()));
            return Err(self.err(
                1,
                format!(
                    "unexpected header: column {} is {:?}, expected {:?} ({} columns, expected {})",
                    first + 1,
                    self.header.get(first).map(String::as_str).unwrap_or(""),
                    expected.get(first).map(String::as_str).unwrap_or(""),
                    self.header.len(),
                    expected.len()
                ),
            ));
        }
        Ok(())
    }

    fn expect_width(&self, row: &Row, width: usize) -> Result<()> {
        if row.fields.len() != width {
            return Err(self.err(
                row.line,
                format!("expected {width} values, found {}", row.fields.len()),
            ));
        }
        Ok(())
    }

    fn number(&self, row: &Row, col: usize) -> Result<f64> {
        let text = &row.fields[col];
        let v: f64 = text
            .parse()
            .map_err(|_| self.err(row.line, format!("column {}: {text:?} is not a number", col + 1)))?;
        if !v.is_finite() {
            return Err(self.err(row.line, format!("column {}: non-finite value", col + 1)));
        }
        Ok(v)
    }

    fn numbers(&self, row: &Row, cols: std::ops::Range<usize>) -> Result<Vec<f64>> {
        cols.map(|c| self.number(row, c)).collect()
    }

    fn index(&self, row: &Row, col: usize) -> Result<usize> {
        let text = &row.fields[col];
        text.parse()
            .map_err(|_| self.err(row.line, format!("column {}: {text:?} is not an index", col + 1)))
    }
}

fn read_table(path: &Path, has_header: bool) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        let fields: Vec<String> = record.iter().map(str::to_string).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        if has_header && header.is_empty() && rows.is_empty() {
            header = fields;
        } else {
            rows.push(Row { line, fields });
        }
    }
    let table = Table {
        path: path.to_path_buf(),
        header,
        rows,
    };
    if has_header && table.header.is_empty() {
        return Err(table.err(1, "missing header line"));
    }
    Ok(table)
}

pub fn write_poses3d(path: &Path, poses: &[Pose3D]) -> Result<()> {
    write_table(path, &pose3d_header(), poses.iter().map(|p| numbers(&p.to_flat()).collect()))
}

pub fn read_poses3d(path: &Path) -> Result<Vec<Pose3D>> {
    let t = read_table(path, true)?;
    t.expect_header(&pose3d_header())?;
    t.rows
        .iter()
        .map(|r| {
            t.expect_width(r, 3 * NUM_JOINTS)?;
            Pose3D::from_flat(&t.numbers(r, 0..3 * NUM_JOINTS)?)
        })
        .collect()
}

/// World-frame poses with a leading subject column.
pub fn write_subject_poses(path: &Path, poses: &[(Pose3D, usize)]) -> Result<()> {
    let mut header = vec![SUBJECT_COLUMN.to_string()];
    header.extend(pose3d_header());
    write_table(
        path,
        &header,
        poses.iter().map(|(p, s)| std::iter::once(s.to_string()).chain(numbers(&p.to_flat())).collect()),
    )
}

/// Reads a 3D pose file; a leading `subject` column is optional and
/// defaults to subject 0.
pub fn read_subject_poses(path: &Path) -> Result<Vec<(Pose3D, usize)>> {
    let t = read_table(path, true)?;
    let with_subject = t.header.first().map(String::as_str) == Some(SUBJECT_COLUMN);
    let mut header = Vec::new();
    if with_subject {
        header.push(SUBJECT_COLUMN.to_string());
    }
    header.extend(pose3d_header());
    t.expect_header(&header)?;
    let offset = usize::from(with_subject);
    t.rows
        .iter()
        .map(|r| {
            t.expect_width(r, offset + 3 * NUM_JOINTS)?;
            let subject = if with_subject { t.index(r, 0)? } else { 0 };
            Ok((Pose3D::from_flat(&t.numbers(r, offset..offset + 3 * NUM_JOINTS)?)?, subject))
        })
        .collect()
}

pub fn write_poses2d(path: &Path, poses: &[Pose2D]) -> Result<()> {
    write_table(path, &pose2d_header(), poses.iter().map(|p| numbers(&p.to_flat()).collect()))
}

pub fn read_poses2d(path: &Path) -> Result<Vec<Pose2D>> {
    let t = read_table(path, true)?;
    t.expect_header(&pose2d_header())?;
    t.rows
        .iter()
        .map(|r| {
            t.expect_width(r, 2 * NUM_JOINTS)?;
            Pose2D::from_flat(&t.numbers(r, 0..2 * NUM_JOINTS)?)
        })
        .collect()
}

pub fn write_rankings(path: &Path, rankings: &[RankingMatrix]) -> Result<()> {
    write_table(path, &ranking_header(), rankings.iter().map(|m| numbers(&flatten_ranking(m)).collect()))
}

pub fn read_rankings(path: &Path) -> Result<Vec<RankingMatrix>> {
    let t = read_table(path, true)?;
    t.expect_header(&ranking_header())?;
    t.rows
        .iter()
        .map(|r| {
            t.expect_width(r, NUM_JOINTS * NUM_JOINTS)?;
            unflatten_ranking(&t.numbers(r, 0..NUM_JOINTS * NUM_JOINTS)?)
                .map_err(|e| t.err(r.line, e.to_string()))
        })
        .collect()
}

pub fn write_topology(path: &Path, topo: &SkeletonTopology) -> Result<()> {
    let header: Vec<String> = TOPOLOGY_HEADER.iter().map(|s| s.to_string()).collect();
    write_table(
        path,
        &header,
        JointId::all().map(|j| match topo.parent(j) {
            Some(p) => vec![j.name().into(), p.name().into(), topo.bone_lengths()[j.index()].to_string()],
            None => vec![j.name().into(), String::new(), String::new()],
        }),
    )
}

fn joint_by_name(name: &str) -> Option<JointId> {
    JOINT_NAMES
        .iter()
        .position(|n| *n == name)
        .or_else(|| name.parse().ok().filter(|&i: &usize| i < NUM_JOINTS))
        .and_then(|i| JointId::new(i).ok())
}

/// One row per joint: `joint,parent,bone_length`. Joints are named or
/// indexed; the root has an empty parent and bone length.
pub fn read_topology(path: &Path) -> Result<SkeletonTopology> {
    let t = read_table(path, true)?;
    let header: Vec<String> = TOPOLOGY_HEADER.iter().map(|s| s.to_string()).collect();
    t.expect_header(&header)?;
    let mut parent = [None; NUM_JOINTS];
    let mut length = [0.0; NUM_JOINTS];
    let mut seen = [false; NUM_JOINTS];
    for r in &t.rows {
        t.expect_width(r, 3)?;
        let joint = joint_by_name(&r.fields[0])
            .ok_or_else(|| t.err(r.line, format!("unknown joint {:?}", r.fields[0])))?;
        if std::mem::replace(&mut seen[joint.index()], true) {
            return Err(t.err(r.line, format!("joint {joint} listed twice")));
        }
        if r.fields[1].is_empty() {
            continue;
        }
        let p = joint_by_name(&r.fields[1])
            .ok_or_else(|| t.err(r.line, format!("unknown parent {:?}", r.fields[1])))?;
        parent[joint.index()] = Some(p);
        length[joint.index()] = t.number(r, 2)?;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let line = t.rows.last().map(|r| r.line).unwrap_or(1);
        return Err(t.err(line, format!("joint {} is missing", JOINT_NAMES[missing])));
    }
    SkeletonTopology::new(parent, length).map_err(|e| t.err(t.rows.last().map(|r| r.line).unwrap_or(1), e.to_string()))
}

/// 16 lines of 16 per-pair accuracies, no header.
pub fn write_accuracy(path: &Path, acc: &AccuracyMatrix) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for row in &acc.p {
            out.write_record(numbers(row)).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn read_accuracy(path: &Path) -> Result<AccuracyMatrix> {
    let t = read_table(path, false)?;
    if t.rows.len() != NUM_JOINTS {
        let line = t.rows.last().map(|r| r.line).unwrap_or(1);
        return Err(t.err(line, format!("expected {NUM_JOINTS} rows, found {}", t.rows.len())));
    }
    let mut p = [[0.0; NUM_JOINTS]; NUM_JOINTS];
    for (i, r) in t.rows.iter().enumerate() {
        t.expect_width(r, NUM_JOINTS)?;
        for (j, v) in t.numbers(r, 0..NUM_JOINTS)?.into_iter().enumerate() {
            p[i][j] = v;
        }
    }
    AccuracyMatrix::from_values(p).map_err(|e| t.err(1, e.to_string()))
}

pub fn write_cameras(path: &Path, cams: &[Camera]) -> Result<()> {
    let header: Vec<String> = CAMERA_HEADER.iter().map(|s| s.to_string()).collect();
    write_table(path, &header, cams.iter().map(|c| numbers(&c.to_record()).collect()))
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let t = read_table(path, true)?;
    let header: Vec<String> = CAMERA_HEADER.iter().map(|s| s.to_string()).collect();
    t.expect_header(&header)?;
    t.rows
        .iter()
        .map(|r| {
            t.expect_width(r, CAMERA_HEADER.len())?;
            Camera::from_record(&t.numbers(r, 0..CAMERA_HEADER.len())?).map_err(|e| t.err(r.line, e.to_string()))
        })
        .collect()
}

/// Provenance columns, then S2D (32), the flattened matrix (256) and the
/// camera-frame S3D (48). Virtual cameras leave the camera column empty.
pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    write_table(
        path,
        &dataset_header(),
        samples.iter().map(|s| {
            let mut row = vec![
                s.provenance.subject.to_string(),
                s.provenance.camera.map(|c| c.to_string()).unwrap_or_default(),
                u8::from(s.provenance.augmented).to_string(),
            ];
            row.extend(numbers(&s.s2d.to_flat()));
            row.extend(numbers(&flatten_ranking(&s.ranking)));
            row.extend(numbers(&s.s3d.to_flat()));
            row
        }),
    )
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let t = read_table(path, true)?;
    let header = dataset_header();
    t.expect_header(&header)?;
    let a = 3;
    let b = a + 2 * NUM_JOINTS;
    let c = b + NUM_JOINTS * NUM_JOINTS;
    let d = c + 3 * NUM_JOINTS;
    t.rows
        .iter()
        .map(|r| {
            t.expect_width(r, header.len())?;
            let camera = if r.fields[1].is_empty() { None } else { Some(t.index(r, 1)?) };
            let augmented = match r.fields[2].as_str() {
                "0" => false,
                "1" => true,
                other => return Err(t.err(r.line, format!("augmented flag must be 0 or 1, got {other:?}"))),
            };
            let ranking = unflatten_ranking(&t.numbers(r, b..c)?).map_err(|e| t.err(r.line, e.to_string()))?;
            Ok(Sample {
                s2d: Pose2D::from_flat(&t.numbers(r, a..b)?)?,
                ranking,
                s3d: Pose3D::from_flat(&t.numbers(r, c..d)?)?,
                provenance: Provenance {
                    subject: t.index(r, 0)?,
                    camera,
                    augmented,
                },
            })
        })
        .collect()
}

/// 3D joints followed by one 0/1 clamp flag per joint.
pub fn write_reconstructions(path: &Path, recs: &[Reconstruction]) -> Result<()> {
    let mut header = pose3d_header();
    header.extend(JOINT_NAMES.iter().map(|n| format!("{n}_clamped")));
    write_table(
        path,
        &header,
        recs.iter().map(|r| {
            let mut row: Vec<String> = numbers(&r.pose.to_flat()).collect();
            row.extend(r.clamped.iter().map(|&c| u8::from(c).to_string()));
            row
        }),
    )
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.message().to_string(),
        }
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value)?;
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}
