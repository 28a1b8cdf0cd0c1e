//! Multi-traversal dataset directories: `manifest.json` plus per-frame image
//! layers and an initialization point cloud.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Camera, Mat3, Vec3};
use crate::image::Image;
use crate::io::{read_pfm, read_ply, read_png};
use crate::model::InitPoint;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?} (expected train or test)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// World-to-camera extrinsics of one camera pose, shared by every traversal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub id: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraPose {
    pub fn from_camera(id: usize, c: &Camera) -> Self {
        Self { id, rotation: c.rotation.m, translation: c.translation.to_array() }
    }

    pub fn camera(&self, k: &Intrinsics) -> Camera {
        Camera {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: Mat3 { m: self.rotation },
            translation: Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
        }
    }
}

/// Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub traversal: usize,
    pub camera: usize,
    pub timestamp: f64,
    pub split: Split,
    pub rgb: String,
    pub gt_material: String,
    pub gt_normal: String,
    pub gt_depth: String,
    pub gt_light: String,
    pub static_mask: String,
}

impl FrameEntry {
    pub fn paths(&self) -> [&str; 6] {
        [&self.rgb, &self.gt_material, &self.gt_normal, &self.gt_depth, &self.gt_light, &self.static_mask]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraversalEntry {
    pub id: usize,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub intrinsics: Intrinsics,
    pub cameras: Vec<CameraPose>,
    pub traversals: Vec<TraversalEntry>,
    pub init_points: String,
}

impl DatasetManifest {
    pub fn frames(&self) -> impl Iterator<Item = &FrameEntry> {
        self.traversals.iter().flat_map(|t| t.frames.iter())
    }

    pub fn camera(&self, id: usize) -> Result<Camera> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.camera(&self.intrinsics))
            .ok_or_else(|| Error::invalid(format!("manifest has no camera {id}")))
    }

    /// Structural checks: traversal ids `0..n` in order, known cameras, one
    /// split per (traversal, camera), and a test frame in every traversal.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::VersionMismatch { found: self.version, expected: MANIFEST_VERSION });
        }
        if self.traversals.is_empty() {
            return Err(Error::invalid("manifest lists no traversals"));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, t) in self.traversals.iter().enumerate() {
            if t.id != i {
                return Err(Error::invalid(format!("traversal {i} has id {}; ids must be 0..n in order", t.id)));
            }
            for f in &t.frames {
                if f.traversal != t.id {
                    return Err(Error::invalid(format!("frame of traversal {} listed under traversal {}", f.traversal, t.id)));
                }
                self.camera(f.camera)?;
                if !seen.insert((f.traversal, f.camera)) {
                    return Err(Error::invalid(format!("traversal {} lists camera {} twice", f.traversal, f.camera)));
                }
            }
            if !t.frames.iter().any(|f| f.split == Split::Test) {
                return Err(Error::invalid(format!("traversal {} has no test frame", t.id)));
            }
        }
        Ok(())
    }

    /// Check that every referenced file exists below `root`.
    pub fn check_files(&self, root: &Path) -> Result<()> {
        let mut paths: Vec<&str> = self.frames().flat_map(|f| f.paths()).collect();
        paths.push(&self.init_points);
        for p in paths {
            let full = root.join(p);
            if !full.is_file() {
                return Err(Error::io(full, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing")));
            }
        }
        Ok(())
    }
}

/// One loaded observation with its supervision layers.
#[derive(Clone, Debug)]
pub struct Frame {
    pub traversal: usize,
    pub camera_id: usize,
    pub timestamp: f64,
    pub split: Split,
    pub camera: Camera,
    pub rgb: Image<f32>,
    pub material: Image<f32>,
    pub normal: Image<f32>,
    pub depth: Image<f32>,
    pub light: Image<f32>,
    pub static_mask: Image<f32>,
}

impl Frame {
    /// Binary static mask used by the supervised losses.
    pub fn loss_mask(&self) -> Image<f32> {
        self.static_mask.map(|v| if v > 0.5 { 1.0 } else { 0.0 })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub frames: Vec<Frame>,
    pub points: Vec<InitPoint>,
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    m.validate()?;
    Ok(m)
}

fn expect_shape(img: Image<f32>, k: &Intrinsics, channels: usize, path: &str) -> Result<Image<f32>> {
    if img.width != k.width || img.height != k.height || img.channels != channels {
        return Err(Error::format(
            "dataset",
            format!(
                "{path}: expected {}x{}x{channels}, found {}x{}x{}",
                k.width, k.height, img.width, img.height, img.channels
            ),
        ));
    }
    Ok(img)
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = read_manifest(root)?;
        manifest.check_files(root)?;
        let k = manifest.intrinsics;
        let mut frames = Vec::new();
        for f in manifest.frames() {
            let pfm = |p: &str, c: usize| expect_shape(read_pfm(&root.join(p))?, &k, c, p);
            frames.push(Frame {
                traversal: f.traversal,
                camera_id: f.camera,
                timestamp: f.timestamp,
                split: f.split,
                camera: manifest.camera(f.camera)?,
                rgb: expect_shape(read_png(&root.join(&f.rgb))?, &k, 3, &f.rgb)?,
                material: pfm(&f.gt_material, 3)?,
                normal: pfm(&f.gt_normal, 3)?,
                depth: pfm(&f.gt_depth, 1)?,
                light: pfm(&f.gt_light, 3)?,
                static_mask: pfm(&f.static_mask, 1)?,
            });
        }
        let points = read_ply(&root.join(&manifest.init_points))?;
        Ok(Self { root: root.to_path_buf(), manifest, frames, points })
    }

    pub fn traversal_count(&self) -> usize {
        self.manifest.traversals.len()
    }

    /// Indices of the frames in `split`, in manifest order.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == split).collect()
    }

    pub fn find(&self, traversal: usize, camera: usize) -> Option<&Frame> {
        self.frames.iter().find(|f| f.traversal == traversal && f.camera_id == camera)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        let k = Intrinsics { width: 4, height: 3, fx: 4.0, fy: 4.0, cx: 2.0, cy: 1.5 };
        let frame = |t: usize, c: usize, split| FrameEntry {
            traversal: t,
            camera: c,
            timestamp: 0.0,
            split,
            rgb: format!("t{t}c{c}.png"),
            gt_material: "m.pfm".into(),
            gt_normal: "n.pfm".into(),
            gt_depth: "d.pfm".into(),
            gt_light: "l.pfm".into(),
            static_mask: "s.pfm".into(),
        };
        DatasetManifest {
            version: MANIFEST_VERSION,
            name: "t".into(),
            intrinsics: k,
            cameras: vec![
                CameraPose { id: 0, rotation: Mat3::identity().m, translation: [0.0, 0.0, 2.0] },
                CameraPose { id: 1, rotation: Mat3::identity().m, translation: [0.1, 0.0, 2.0] },
            ],
            traversals: vec![TraversalEntry { id: 0, frames: vec![frame(0, 0, Split::Train), frame(0, 1, Split::Test)] }],
            init_points: "p.ply".into(),
        }
    }

    #[test]
    fn validation_catches_structural_errors() {
        let m = manifest();
        m.validate().unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<DatasetManifest>(&json).unwrap(), m);

        let mut no_test = m.clone();
        no_test.traversals[0].frames[1].split = Split::Train;
        assert!(no_test.validate().is_err());
        let mut dup = m.clone();
        dup.traversals[0].frames[1].camera = 0;
        assert!(dup.validate().is_err());
        let mut unknown_cam = m.clone();
        unknown_cam.traversals[0].frames[0].camera = 9;
        assert!(unknown_cam.validate().is_err());
        let mut ver = m.clone();
        ver.version = 7;
        assert!(matches!(ver.validate(), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(manifest().check_files(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let mut v = serde_json::to_value(manifest()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<DatasetManifest>(v).is_err());
    }
}
