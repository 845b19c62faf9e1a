//! Frame records, the synthetic pose generator, the JSON-lines dataset file,
//! and train/test protocol splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{FrameKind, JointAngles, JointId, Pose3D, SkeletonModel, N_JOINTS};

pub const SCHEMA_TAG: &str = "depthlift-pose-v1";
pub const N_ACTIONS: usize = 15;
pub const N_CAMERAS: usize = 4;

/// Action abbreviations in report order; action id `k` is `ACTION_NAMES[k - 1]`.
pub const ACTION_NAMES: [&str; N_ACTIONS] = [
    "Dir.", "Dis.", "Eat", "Gre.", "Phon.", "Pose", "Pur.", "Sit.", "SitD.", "Smo.", "Phot.",
    "Wait", "Walk", "WalkD.", "WalkP.",
];

/// Synthetic subject `k` (1-based) plays the role of subject `S{SUBJECT_ROLES[k - 1]}`
/// in the protocol splits.
pub const SUBJECT_ROLES: [u32; 7] = [1, 5, 6, 7, 8, 9, 11];

/// Test frames are every `TEST_FRAME_STRIDE`-th frame of each sequence.
pub const TEST_FRAME_STRIDE: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub subject_id: u32,
    /// 1..=15
    pub action_id: u8,
    /// 1..=4
    pub camera_id: u8,
    pub frame_index: u32,
    pub pose_world: Pose3D,
    /// Simulated per-joint depth, when present.
    pub depth: Option<[f64; N_JOINTS]>,
    /// Projected pixel coordinates, when present.
    pub pixels: Option<[[f64; 2]; N_JOINTS]>,
}

impl FrameRecord {
    pub fn key(&self) -> (u32, u8, u8, u32) {
        (
            self.subject_id,
            self.action_id,
            self.camera_id,
            self.frame_index,
        )
    }

    /// (subject, action, camera): one continuous capture.
    pub fn sequence(&self) -> (u32, u8, u8) {
        (self.subject_id, self.action_id, self.camera_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectInfo {
    pub id: u32,
    pub limb_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<FrameRecord>,
    pub skeleton: SkeletonModel,
    pub subjects: Vec<SubjectInfo>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        frames: Vec<FrameRecord>,
        skeleton: SkeletonModel,
        subjects: Vec<SubjectInfo>,
        provenance: String,
    ) -> Result<Self> {
        let d = Dataset {
            frames,
            skeleton,
            subjects,
            provenance,
        };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("dataset has no frames".into()));
        }
        let mut keys = HashSet::with_capacity(self.frames.len());
        for f in &self.frames {
            if !(1..=N_ACTIONS as u8).contains(&f.action_id) {
                return Err(Error::Data(format!(
                    "action id {} out of range",
                    f.action_id
                )));
            }
            if !(1..=N_CAMERAS as u8).contains(&f.camera_id) {
                return Err(Error::Data(format!(
                    "camera id {} out of range",
                    f.camera_id
                )));
            }
            if !keys.insert(f.key()) {
                return Err(Error::Data(format!("duplicate frame key {:?}", f.key())));
            }
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> BTreeSet<u32> {
        self.frames.iter().map(|f| f.subject_id).collect()
    }

    pub fn limb_scale(&self, subject: u32) -> Option<f64> {
        self.subjects
            .iter()
            .find(|s| s.id == subject)
            .map(|s| s.limb_scale)
    }

    pub fn has_depth(&self) -> bool {
        self.frames.iter().all(|f| f.depth.is_some())
    }

    /// Keep only frames matching `keep`; the result must be non-empty.
    pub fn filtered(&self, keep: impl Fn(&FrameRecord) -> bool) -> Result<Dataset> {
        let frames: Vec<_> = self.frames.iter().filter(|f| keep(f)).cloned().collect();
        let ids: BTreeSet<u32> = frames.iter().map(|f| f.subject_id).collect();
        let subjects = self
            .subjects
            .iter()
            .filter(|s| ids.contains(&s.id))
            .copied()
            .collect();
        Dataset::new(
            frames,
            self.skeleton.clone(),
            subjects,
            self.provenance.clone(),
        )
    }

    /// Replicate every frame once per camera id, in sequence-major order
    /// (subject, action, camera, frame).
    pub fn with_cameras(&self, camera_ids: &[u8]) -> Result<Dataset> {
        let mut grouped: BTreeMap<(u32, u8), Vec<&FrameRecord>> = BTreeMap::new();
        for f in &self.frames {
            grouped
                .entry((f.subject_id, f.action_id))
                .or_default()
                .push(f);
        }
        let mut frames = Vec::with_capacity(self.frames.len() * camera_ids.len());
        for ((_, _), seq) in grouped {
            for &cam in camera_ids {
                frames.extend(seq.iter().map(|f| FrameRecord {
                    camera_id: cam,
                    depth: None,
                    pixels: None,
                    ..(*f).clone()
                }));
            }
        }
        Dataset::new(
            frames,
            self.skeleton.clone(),
            self.subjects.clone(),
            self.provenance.clone(),
        )
    }
}

fn reflect_into(x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    let mut y = (x - lo).rem_euclid(2.0 * w);
    if y > w {
        y = 2.0 * w - y;
    }
    lo + y
}

/// Per-action angular step (rad/frame) of the posture random walk.
pub fn action_step_size(action_id: u8) -> f64 {
    0.008 + 0.004 * f64::from(action_id - 1)
}

const ROOT_WALK_STEP_MM: f64 = 8.0;
const ROOT_RANGE_MM: f64 = 1000.0;
const YAW_STEP: f64 = 0.03;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generate `n_subjects × 15 × n_frames_per` world-frame poses.
///
/// Every (subject, action) sequence is a bounded random walk over joint angles
/// starting near an action-specific base posture; each subject has a single
/// limb-length scale drawn from [0.9, 1.1]. Frames carry `camera_id = 1`; use
/// [`Dataset::with_cameras`] to create the multi-view layout. The output is a
/// pure function of the arguments.
pub fn synth_generate(
    model: &SkeletonModel,
    n_subjects: u32,
    n_frames_per: u32,
    seed: u64,
) -> Result<Dataset> {
    if n_subjects == 0 || n_frames_per == 0 {
        return Err(Error::Config(
            "n_subjects and n_frames_per must both be at least 1".into(),
        ));
    }
    let order = model.validate()?;
    let n_bones = model.bones.len();

    let base_postures: Vec<Vec<[f64; 3]>> = (1..=N_ACTIONS as u64)
        .map(|a| {
            let mut rng = stream_rng(seed, a);
            model
                .bones
                .iter()
                .map(|b| std::array::from_fn(|k| rng.random_range(b.angle_min[k]..=b.angle_max[k])))
                .collect()
        })
        .collect();

    let mut subjects = Vec::with_capacity(n_subjects as usize);
    let mut frames = Vec::with_capacity((n_subjects * n_frames_per) as usize * N_ACTIONS);
    for s in 1..=n_subjects {
        let mut srng = stream_rng(seed, 1000 * u64::from(s));
        let scale = srng.random_range(0.9..=1.1);
        subjects.push(SubjectInfo {
            id: s,
            limb_scale: scale,
        });
        for a in 1..=N_ACTIONS as u8 {
            let mut rng = stream_rng(seed, 1000 * u64::from(s) + u64::from(a));
            let step = action_step_size(a);
            let base = &base_postures[usize::from(a) - 1];
            let mut angles = JointAngles {
                bone_angles: (0..n_bones)
                    .map(|bi| {
                        let b = &model.bones[bi];
                        std::array::from_fn(|k| {
                            let spread = 0.25 * (b.angle_max[k] - b.angle_min[k]);
                            let jitter: f64 = rng.sample(StandardNormal);
                            reflect_into(
                                base[bi][k] + spread * jitter,
                                b.angle_min[k],
                                b.angle_max[k],
                            )
                        })
                    })
                    .collect(),
                root_yaw: rng.random_range(0.0..std::f64::consts::TAU),
                root_position: Vector3::new(
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-500.0..500.0),
                    model.root_height * scale,
                ),
            };
            for frame_index in 0..n_frames_per {
                if frame_index > 0 {
                    for (bi, b) in model.bones.iter().enumerate() {
                        for k in 0..3 {
                            let z: f64 = rng.sample(StandardNormal);
                            let a = &mut angles.bone_angles[bi][k];
                            *a = reflect_into(*a + step * z, b.angle_min[k], b.angle_max[k]);
                        }
                    }
                    let z: f64 = rng.sample(StandardNormal);
                    angles.root_yaw =
                        (angles.root_yaw + YAW_STEP * z).rem_euclid(std::f64::consts::TAU);
                    for k in 0..2 {
                        let z: f64 = rng.sample(StandardNormal);
                        angles.root_position[k] = reflect_into(
                            angles.root_position[k] + ROOT_WALK_STEP_MM * z,
                            -ROOT_RANGE_MM,
                            ROOT_RANGE_MM,
                        );
                    }
                }
                frames.push(FrameRecord {
                    subject_id: s,
                    action_id: a,
                    camera_id: 1,
                    frame_index,
                    pose_world: model.forward_kinematics(&order, &angles, scale),
                    depth: None,
                    pixels: None,
                });
            }
        }
    }
    Dataset::new(
        frames,
        model.clone(),
        subjects,
        format!("synthetic: subjects={n_subjects} frames_per_sequence={n_frames_per} seed={seed}"),
    )
}

// ---------------------------------------------------------------------------
// JSON-lines file format

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    joints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    skeleton: Option<SkeletonModel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    subjects: Vec<SubjectInfo>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    subject: u32,
    action: u8,
    camera: u8,
    frame: u32,
    pose: Vec<[f64; 3]>,
    #[serde(default)]
    depth: Option<Vec<f64>>,
    #[serde(default)]
    uv: Option<Vec<[f64; 2]>>,
}

/// Nine significant digits, valid JSON.
pub(crate) fn fmt_num(out: &mut String, x: f64) {
    write!(out, "{x:.8e}").expect("writing to a String cannot fail");
}

fn write_frame_line(out: &mut String, f: &FrameRecord) {
    write!(
        out,
        "{{\"subject\":{},\"action\":{},\"camera\":{},\"frame\":{},\"pose\":[",
        f.subject_id, f.action_id, f.camera_id, f.frame_index
    )
    .unwrap();
    for (i, p) in f.pose_world.joints.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for k in 0..3 {
            if k > 0 {
                out.push(',');
            }
            fmt_num(out, p[k]);
        }
        out.push(']');
    }
    out.push(']');
    if let Some(depth) = &f.depth {
        out.push_str(",\"depth\":[");
        for (i, d) in depth.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            fmt_num(out, *d);
        }
        out.push(']');
    }
    if let Some(px) = &f.pixels {
        out.push_str(",\"uv\":[");
        for (i, p) in px.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            fmt_num(out, p[0]);
            out.push(',');
            fmt_num(out, p[1]);
            out.push(']');
        }
        out.push(']');
    }
    out.push('}');
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: SCHEMA_TAG.to_string(),
        joints: JointId::ALL.iter().map(|j| j.name().to_string()).collect(),
        provenance: Some(d.provenance.clone()),
        skeleton: Some(d.skeleton.clone()),
        subjects: d.subjects.clone(),
    };
    let header = serde_json::to_string(&header).map_err(|e| Error::Schema(e.to_string()))?;
    let mut line = String::with_capacity(2048);
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for f in &d.frames {
        line.clear();
        write_frame_line(&mut line, f);
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, l)) => {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| parse_err(1, e.to_string()))?
        }
        None => return Err(parse_err(1, "empty file".into())),
    };
    if header.schema != SCHEMA_TAG {
        return Err(Error::Schema(format!(
            "unknown schema tag {:?}, expected {SCHEMA_TAG:?}",
            header.schema
        )));
    }
    let expected: Vec<&str> = JointId::ALL.iter().map(|j| j.name()).collect();
    if header.joints != expected {
        return Err(Error::Schema(format!(
            "header lists {} joints {:?}; expected {:?}",
            header.joints.len(),
            header.joints,
            expected
        )));
    }

    let mut frames = Vec::new();
    for (i, l) in lines {
        let lineno = i + 1;
        let l = l.map_err(|e| Error::io(path, e))?;
        if l.trim().is_empty() {
            continue;
        }
        let fl: FrameLine =
            serde_json::from_str(&l).map_err(|e| parse_err(lineno, e.to_string()))?;
        if fl.pose.len() != N_JOINTS {
            return Err(Error::Schema(format!(
                "line {lineno}: pose has {} joints, expected {N_JOINTS}",
                fl.pose.len()
            )));
        }
        let depth = match fl.depth {
            Some(d) if d.len() != N_JOINTS => {
                return Err(Error::Schema(format!(
                    "line {lineno}: depth has {} values, expected {N_JOINTS}",
                    d.len()
                )))
            }
            Some(d) => Some(std::array::from_fn(|j| d[j])),
            None => None,
        };
        let pixels = match fl.uv {
            Some(uv) if uv.len() != N_JOINTS => {
                return Err(Error::Schema(format!(
                    "line {lineno}: uv has {} entries, expected {N_JOINTS}",
                    uv.len()
                )))
            }
            Some(uv) => Some(std::array::from_fn(|j| uv[j])),
            None => None,
        };
        frames.push(FrameRecord {
            subject_id: fl.subject,
            action_id: fl.action,
            camera_id: fl.camera,
            frame_index: fl.frame,
            pose_world: Pose3D::new(
                std::array::from_fn(|j| Vector3::from(fl.pose[j])),
                FrameKind::World,
            ),
            depth,
            pixels,
        });
    }
    let skeleton = header.skeleton.unwrap_or_else(SkeletonModel::standard);
    let subjects = if header.subjects.is_empty() {
        frames
            .iter()
            .map(|f| f.subject_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|id| SubjectInfo {
                id,
                limb_scale: 1.0,
            })
            .collect()
    } else {
        header.subjects
    };
    Dataset::new(
        frames,
        skeleton,
        subjects,
        header.provenance.unwrap_or_default(),
    )
}

// ---------------------------------------------------------------------------
// Protocol splits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    P1,
    P2,
}

impl Protocol {
    /// (train roles, test roles), as `S` numbers.
    pub fn roles(self) -> (&'static [u32], &'static [u32]) {
        match self {
            Protocol::P1 => (&[1, 5, 6, 7, 8, 9], &[11]),
            Protocol::P2 => (&[1, 5, 6, 7, 8], &[9, 11]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::P1 => "P1",
            Protocol::P2 => "P2",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "1" => Ok(Protocol::P1),
            "p2" | "2" => Ok(Protocol::P2),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Role number (`S` index) of a synthetic subject id, if it has one.
pub fn subject_role(subject_id: u32) -> Option<u32> {
    SUBJECT_ROLES
        .get(subject_id.checked_sub(1)? as usize)
        .copied()
}

/// Split into (train, test). Test frames are additionally thinned to every
/// 64th frame of each sequence.
pub fn split_protocol(d: &Dataset, protocol: Protocol) -> Result<(Dataset, Dataset)> {
    let present = d.subject_ids();
    let missing: Vec<u32> = (1..=SUBJECT_ROLES.len() as u32)
        .filter(|s| !present.contains(s))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "protocol {protocol} needs synthetic subjects 1..={} (roles S1..S11); missing {missing:?}",
            SUBJECT_ROLES.len()
        )));
    }
    let (train_roles, test_roles) = protocol.roles();
    let role_of = |f: &FrameRecord| subject_role(f.subject_id);
    let train = d.filtered(|f| role_of(f).is_some_and(|r| train_roles.contains(&r)))?;
    let test = d.filtered(|f| {
        role_of(f).is_some_and(|r| test_roles.contains(&r))
            && f.frame_index % TEST_FRAME_STRIDE == 0
    })?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        synth_generate(&SkeletonModel::standard(), 1, 1, 7).unwrap()
    }

    #[test]
    fn one_subject_one_frame_gives_fifteen_frames() {
        let d = small();
        assert_eq!(d.frames.len(), 15);
        let scale = d.limb_scale(1).unwrap();
        assert!((0.9..=1.1).contains(&scale));
        for f in &d.frames {
            for b in &d.skeleton.bones {
                let len = f.pose_world.bone_length(b.parent, b.child);
                assert!((len / b.length - 1.0).abs() <= 0.1 + 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(&SkeletonModel::standard(), 2, 5, 7).unwrap();
        let b = synth_generate(&SkeletonModel::standard(), 2, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SkeletonModel::standard(), 2, 5, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_model_is_a_structural_error() {
        let mut m = SkeletonModel::standard();
        m.bones[3].length = 900.0;
        assert!(matches!(
            synth_generate(&m, 1, 1, 0),
            Err(Error::Structural(_))
        ));
        assert!(matches!(
            synth_generate(&SkeletonModel::standard(), 0, 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reflect_stays_in_range() {
        for x in [-7.3, -1.0, 0.0, 0.5, 1.0, 2.4, 9.9] {
            let y = reflect_into(x, -0.5, 1.0);
            assert!((-0.5..=1.0).contains(&y), "{x} -> {y}");
        }
        assert_eq!(reflect_into(0.3, 0.0, 1.0), 0.3);
        assert!((reflect_into(1.2, 0.0, 1.0) - 0.8).abs() < 1e-12);
        assert_eq!(reflect_into(5.0, 0.2, 0.2), 0.2);
    }

    #[test]
    fn with_cameras_replicates_per_view() {
        let d = small().with_cameras(&[1, 2, 3, 4]).unwrap();
        assert_eq!(d.frames.len(), 60);
        let seqs: BTreeSet<_> = d.frames.iter().map(|f| f.sequence()).collect();
        assert_eq!(seqs.len(), 60);
    }

    #[test]
    fn split_needs_seven_subjects() {
        let d = synth_generate(&SkeletonModel::standard(), 6, 2, 1).unwrap();
        assert!(matches!(
            split_protocol(&d, Protocol::P1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn protocol_parsing() {
        assert_eq!("P1".parse::<Protocol>().unwrap(), Protocol::P1);
        assert_eq!("p2".parse::<Protocol>().unwrap(), Protocol::P2);
        assert!("p3".parse::<Protocol>().is_err());
        assert_eq!(subject_role(7), Some(11));
        assert_eq!(subject_role(8), None);
        assert_eq!(subject_role(0), None);
    }
}
