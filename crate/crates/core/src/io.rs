//! On-disk formats: JSON for poses, dictionaries, parameters and traces, a
//! little-endian binary container for heat maps.
//!
//! Every reader validates what it loads; writing a loaded value reproduces the
//! original bytes.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2xX, Matrix3, Matrix3xX, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bcd::{BcdTrace, Termination};
use crate::em::{EmIteration, EmTrace, HeatMapStack};
use crate::error::{Error, Result};
use crate::geom::{
    CameraMode, Limb, ModelParams, PoseDictionary, PoseSequence2D, PoseSequence3D, Skeleton,
};

pub const FORMAT_VERSION: u32 = 1;
pub const HEATMAP_MAGIC: &[u8; 4] = b"MCHM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbEntry {
    pub a: usize,
    pub b: usize,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonHeader {
    pub p: usize,
    pub names: Vec<String>,
    pub root_index: usize,
    pub edges: Vec<[usize; 2]>,
    pub limb_pairs: Vec<LimbEntry>,
}

impl SkeletonHeader {
    pub fn from_skeleton(s: &Skeleton) -> Self {
        Self {
            p: s.joint_count(),
            names: s.names().to_vec(),
            root_index: s.root(),
            edges: s.edges().iter().map(|&(a, b)| [a, b]).collect(),
            limb_pairs: s
                .limbs()
                .iter()
                .map(|l| LimbEntry {
                    a: l.a,
                    b: l.b,
                    group: l.group.clone(),
                })
                .collect(),
        }
    }

    pub fn to_skeleton(&self) -> Result<Skeleton> {
        if self.names.len() != self.p {
            return Err(Error::Format(format!(
                "skeleton declares p = {} but lists {} names",
                self.p,
                self.names.len()
            )));
        }
        Skeleton::new(
            self.names.clone(),
            self.root_index,
            self.edges.iter().map(|e| (e[0], e[1])).collect(),
            self.limb_pairs
                .iter()
                .map(|l| Limb::new(l.a, l.b, l.group.clone()))
                .collect(),
        )
        .map_err(|e| Error::Format(format!("skeleton: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseKind {
    Pose3d,
    Pose2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseHeader {
    pub format_version: u32,
    pub kind: PoseKind,
    pub skeleton: SkeletonHeader,
    pub units: String,
}

/// Joint coordinates are `null` only where a hidden joint holds a non-finite value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub header: PoseHeader,
    pub frames: Vec<Vec<Vec<Option<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Vec<Vec<bool>>>,
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {v}")));
    }
    Ok(())
}

fn encode(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl PoseFile {
    pub fn from_3d(seq: &PoseSequence3D, skeleton: &Skeleton, units: &str) -> Result<Self> {
        check_joint_count(seq.joint_count(), skeleton)?;
        Ok(Self {
            header: PoseHeader {
                format_version: FORMAT_VERSION,
                kind: PoseKind::Pose3d,
                skeleton: SkeletonHeader::from_skeleton(skeleton),
                units: units.to_string(),
            },
            frames: seq
                .frames()
                .iter()
                .map(|f| {
                    f.column_iter()
                        .map(|c| c.iter().map(|&v| encode(v)).collect())
                        .collect()
                })
                .collect(),
            visibility: None,
        })
    }

    pub fn from_2d(seq: &PoseSequence2D, skeleton: &Skeleton, units: &str) -> Result<Self> {
        check_joint_count(seq.joint_count(), skeleton)?;
        Ok(Self {
            header: PoseHeader {
                format_version: FORMAT_VERSION,
                kind: PoseKind::Pose2d,
                skeleton: SkeletonHeader::from_skeleton(skeleton),
                units: units.to_string(),
            },
            frames: seq
                .frames()
                .iter()
                .map(|f| {
                    f.column_iter()
                        .map(|c| c.iter().map(|&v| encode(v)).collect())
                        .collect()
                })
                .collect(),
            visibility: seq.visibility().map(|v| v.to_vec()),
        })
    }

    fn flat_frames(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        check_version(self.header.format_version)?;
        let p = self.header.skeleton.p;
        self.frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                if f.len() != p {
                    return Err(Error::Format(format!(
                        "frame {t} has {} joints, header declares {p}",
                        f.len()
                    )));
                }
                let mut out = Vec::with_capacity(dim * p);
                for (j, joint) in f.iter().enumerate() {
                    if joint.len() != dim {
                        return Err(Error::Format(format!(
                            "frame {t}, joint {j} has {} coordinates, expected {dim}",
                            joint.len()
                        )));
                    }
                    out.extend(joint.iter().map(|v| v.unwrap_or(f64::NAN)));
                }
                Ok(out)
            })
            .collect()
    }

    pub fn to_3d(&self) -> Result<(PoseSequence3D, Skeleton)> {
        if self.header.kind != PoseKind::Pose3d {
            return Err(Error::Format("expected a pose3d file".into()));
        }
        let skeleton = self.header.skeleton.to_skeleton()?;
        let p = skeleton.joint_count();
        let frames = self
            .flat_frames(3)?
            .into_iter()
            .map(|v| Matrix3xX::from_column_slice(&v))
            .collect::<Vec<_>>();
        if frames.iter().any(|f| f.ncols() != p) {
            return Err(Error::Format(
                "frame layout does not match the skeleton".into(),
            ));
        }
        let seq = PoseSequence3D::new(frames).map_err(|e| Error::Format(e.to_string()))?;
        Ok((seq, skeleton))
    }

    pub fn to_2d(&self) -> Result<(PoseSequence2D, Skeleton)> {
        if self.header.kind != PoseKind::Pose2d {
            return Err(Error::Format("expected a pose2d file".into()));
        }
        let skeleton = self.header.skeleton.to_skeleton()?;
        let frames = self
            .flat_frames(2)?
            .into_iter()
            .map(|v| Matrix2xX::from_column_slice(&v))
            .collect();
        let seq = PoseSequence2D::new(frames, self.visibility.clone())
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((seq, skeleton))
    }
}

fn check_joint_count(p: usize, skeleton: &Skeleton) -> Result<()> {
    if p != skeleton.joint_count() {
        return Err(Error::Dimension(format!(
            "poses have {p} joints, skeleton has {}",
            skeleton.joint_count()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictHeader {
    pub format_version: u32,
    pub k: usize,
    pub p: usize,
    pub atom_scale: f64,
    pub mean_limb_length: f64,
    pub alpha_used: f64,
    pub seed: u64,
    pub skeleton: SkeletonHeader,
}

/// Atoms are stored `k × 3 × p`, row-major within each atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictFile {
    pub header: DictHeader,
    pub atoms: Vec<[Vec<f64>; 3]>,
    pub mean_pose_code: Vec<f64>,
}

impl DictFile {
    pub fn from_dictionary(dict: &PoseDictionary) -> Self {
        Self {
            header: DictHeader {
                format_version: FORMAT_VERSION,
                k: dict.k(),
                p: dict.joint_count(),
                atom_scale: dict.atom_scale,
                mean_limb_length: dict.mean_limb_length,
                alpha_used: dict.alpha_used,
                seed: dict.seed,
                skeleton: SkeletonHeader::from_skeleton(dict.skeleton()),
            },
            atoms: dict
                .atoms()
                .iter()
                .map(|a| [0, 1, 2].map(|r| a.row(r).iter().copied().collect()))
                .collect(),
            mean_pose_code: dict.mean_pose_code.iter().copied().collect(),
        }
    }

    /// Rebuilds the dictionary, re-checking every atom against the norm bound.
    pub fn to_dictionary(&self) -> Result<PoseDictionary> {
        let h = &self.header;
        check_version(h.format_version)?;
        let skeleton = h.skeleton.to_skeleton()?;
        if h.p != skeleton.joint_count() || self.atoms.len() != h.k {
            return Err(Error::Format(format!(
                "header declares k = {}, p = {} but the file holds {} atoms over {} joints",
                h.k,
                h.p,
                self.atoms.len(),
                skeleton.joint_count()
            )));
        }
        let atoms = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                if rows.iter().any(|r| r.len() != h.p) {
                    return Err(Error::Format(format!("atom {i} row length differs from p")));
                }
                Ok(Matrix3xX::from_fn(h.p, |r, c| rows[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        PoseDictionary::new(
            skeleton,
            atoms,
            h.atom_scale,
            h.mean_limb_length,
            DVector::from_vec(self.mean_pose_code.clone()),
        )
        .map(|d| d.with_provenance(h.alpha_used, h.seed))
        .map_err(|e| Error::Format(format!("dictionary: {e}")))
    }
}

/// Per-frame model parameters; rotations row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub format_version: u32,
    pub camera: CameraMode,
    pub k: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub rotations: Vec<[[f64; 3]; 3]>,
    pub translations: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<Vec<f64>>>,
}

impl ParamsFile {
    pub fn from_params(params: &ModelParams) -> Self {
        let n = params.frames();
        Self {
            format_version: FORMAT_VERSION,
            camera: params.camera,
            k: params.coeffs.nrows(),
            coeffs: (0..n)
                .map(|t| params.coeffs.column(t).iter().copied().collect())
                .collect(),
            rotations: params
                .rotations
                .iter()
                .map(|r| [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[(i, j)])))
                .collect(),
            translations: params
                .translations
                .iter()
                .map(|t| [t.x, t.y, t.z])
                .collect(),
            depths: params.depths.as_ref().map(|z| {
                (0..n)
                    .map(|t| z.column(t).iter().copied().collect())
                    .collect()
            }),
        }
    }

    /// Shapes are checked here; rotation validity and dictionary agreement are
    /// checked by the solvers that consume the parameters.
    pub fn to_params(&self) -> Result<ModelParams> {
        check_version(self.format_version)?;
        let n = self.coeffs.len();
        if n == 0 || self.rotations.len() != n || self.translations.len() != n {
            return Err(Error::Format(format!(
                "{n} coefficient frames, {} rotations, {} translations",
                self.rotations.len(),
                self.translations.len()
            )));
        }
        if self.coeffs.iter().any(|c| c.len() != self.k) {
            return Err(Error::Format(
                "coefficient frame length differs from k".into(),
            ));
        }
        let depths = match &self.depths {
            None => None,
            Some(z) => {
                let p = z.first().map_or(0, Vec::len);
                if z.len() != n || z.iter().any(|c| c.len() != p) {
                    return Err(Error::Format("ragged depth array".into()));
                }
                Some(DMatrix::from_fn(p, n, |j, t| z[t][j]))
            }
        };
        Ok(ModelParams {
            camera: self.camera,
            coeffs: DMatrix::from_fn(self.k, n, |i, t| self.coeffs[t][i]),
            rotations: self
                .rotations
                .iter()
                .map(|r| Matrix3::from_fn(|i, j| r[i][j]))
                .collect(),
            translations: self
                .translations
                .iter()
                .map(|t| Vector3::from(*t))
                .collect(),
            depths,
        })
    }
}

/// Serializable summary of an EM run; the per-iteration expected poses are
/// written separately as pose files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmTraceFile<'a> {
    pub initial_objective: f64,
    pub iterations: &'a [EmIteration],
    pub termination: Termination,
}

impl<'a> From<&'a EmTrace> for EmTraceFile<'a> {
    fn from(t: &'a EmTrace) -> Self {
        Self {
            initial_objective: t.initial_objective,
            iterations: &t.iterations,
            termination: t.termination,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_pose3d(
    path: &Path,
    seq: &PoseSequence3D,
    skeleton: &Skeleton,
    units: &str,
) -> Result<()> {
    write_json(path, &PoseFile::from_3d(seq, skeleton, units)?)
}

pub fn read_pose3d(path: &Path) -> Result<(PoseSequence3D, Skeleton)> {
    read_json::<PoseFile>(path)?.to_3d()
}

pub fn write_pose2d(
    path: &Path,
    seq: &PoseSequence2D,
    skeleton: &Skeleton,
    units: &str,
) -> Result<()> {
    write_json(path, &PoseFile::from_2d(seq, skeleton, units)?)
}

pub fn read_pose2d(path: &Path) -> Result<(PoseSequence2D, Skeleton)> {
    read_json::<PoseFile>(path)?.to_2d()
}

pub fn write_dictionary(path: &Path, dict: &PoseDictionary) -> Result<()> {
    write_json(path, &DictFile::from_dictionary(dict))
}

pub fn read_dictionary(path: &Path) -> Result<PoseDictionary> {
    read_json::<DictFile>(path)?.to_dictionary()
}

pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    write_json(path, &ParamsFile::from_params(params))
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    read_json::<ParamsFile>(path)?.to_params()
}

pub fn write_bcd_trace(path: &Path, trace: &BcdTrace) -> Result<()> {
    write_json(path, trace)
}

const HEATMAP_HEADER: usize = 4 + 5 * 4;

/// Heat maps as `MCHM`, five u32 fields, f32 values in frame, joint, row,
/// column order, then the payload byte count as u64. Values are narrowed to f32.
pub fn encode_heatmaps(maps: &HeatMapStack) -> Vec<u8> {
    let payload = maps.values().len() * 4;
    let mut out = Vec::with_capacity(HEATMAP_HEADER + payload + 8);
    out.extend_from_slice(HEATMAP_MAGIC);
    for v in [
        FORMAT_VERSION as usize,
        maps.frames(),
        maps.joints(),
        maps.height(),
        maps.width(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in maps.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(payload as u64).to_le_bytes());
    out
}

pub fn decode_heatmaps(bytes: &[u8]) -> Result<HeatMapStack> {
    if bytes.len() < HEATMAP_HEADER + 8 || &bytes[..4] != HEATMAP_MAGIC {
        return Err(Error::Format("not a heat-map file (bad magic)".into()));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte field")) as usize
    };
    if field(0) != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported heat-map version {}",
            field(0)
        )));
    }
    let (n, p, h, w) = (field(1), field(2), field(3), field(4));
    let payload = [n, p, h, w, 4]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("heat-map dimensions overflow".into()))?;
    if bytes.len() != HEATMAP_HEADER + payload + 8 {
        return Err(Error::Format(format!(
            "heat-map payload is {} bytes, header implies {payload}",
            bytes.len().saturating_sub(HEATMAP_HEADER + 8)
        )));
    }
    let tail = &bytes[HEATMAP_HEADER + payload..];
    let declared = u64::from_le_bytes(tail.try_into().expect("8-byte trailer"));
    if declared != payload as u64 {
        return Err(Error::Format(format!(
            "trailing length {declared} does not match payload {payload}"
        )));
    }
    let values = bytes[HEATMAP_HEADER..HEATMAP_HEADER + payload]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte value")) as f64)
        .collect();
    HeatMapStack::new(n, p, h, w, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_heatmaps(path: &Path, maps: &HeatMapStack) -> Result<()> {
    fs::write(path, encode_heatmaps(maps))?;
    Ok(())
}

pub fn read_heatmaps(path: &Path) -> Result<HeatMapStack> {
    decode_heatmaps(&fs::read(path)?)
}
