//! File formats.
//!
//! | data          | format                                                      |
//! |---------------|-------------------------------------------------------------|
//! | depth         | 16-bit grayscale PNG, millimeters, 0 = invalid              |
//! | mask          | 8-bit grayscale PNG, nonzero = object                       |
//! | feature map   | `FMAP`, u16 version, u32 H W F, f32 payload, u32 CRC32 (LE) |
//! | intrinsics    | JSON `{fx, fy, cx, cy, width, height}`                      |
//! | pose          | JSON `{rotation[9], translation[3], frame}`                 |
//! | matches       | CSV `uA,vA,uQ,vQ,dist`, distances to 6 decimals             |
//! | object model  | JSON `{points_path, diameter, symmetries}` + XYZ text       |
//!
//! Every error names the offending file and field.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Point3, RigidTransform};
use crate::loss::MatchSupervision;
use crate::matching::{FeatureMap, Mask, Match, MatchSet, Pixel};
use crate::metrics::ObjectModel;
use crate::synth::ScenePair;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u16 = 1;
const FMAP_HEADER_LEN: usize = 4 + 2 + 12;

pub const FRAME_A_TO_Q: &str = "A_to_Q";
pub const FRAME_MODEL_TO_A: &str = "model_to_A";
pub const FRAME_MODEL_TO_Q: &str = "model_to_Q";

pub const MATCH_HEADER: [&str; 5] = ["uA", "vA", "uQ", "vQ", "dist"];
pub const SUPERVISION_HEADER: [&str; 4] = ["uA", "vA", "uQ", "vQ"];

fn format_err(path: &Path, field: &'static str, reason: impl ToString) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field,
        reason: reason.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path, field: &'static str) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| format_err(path, field, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| format_err(path, "json", e))?;
    s.push('\n');
    write(path, s.as_bytes())
}

// ---- PNG ----

fn encode_png(width: u32, height: u32, depth: png::BitDepth, data: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(|e| format_err(path, "png header", e))?;
    w.write_image_data(data).map_err(|e| format_err(path, "png data", e))?;
    w.finish().map_err(|e| format_err(path, "png data", e))?;
    Ok(out)
}

fn decode_png(bytes: &[u8], want: png::BitDepth, path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| format_err(path, "png header", e))?;
    let info = reader.info();
    let (w, h) = (info.width, info.height);
    if info.color_type != png::ColorType::Grayscale {
        return Err(format_err(path, "color type", format!("{:?}, expected grayscale", info.color_type)));
    }
    if info.bit_depth != want {
        return Err(format_err(path, "bit depth", format!("{:?}, expected {:?}", info.bit_depth, want)));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "png header", "image too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| format_err(path, "png data", e))?;
    buf.truncate(frame.buffer_size());
    Ok((w, h, buf))
}

/// Depth in meters to millimeter PNG. Values are rounded to the nearest
/// millimeter; depths at or above 65.535 m are rejected.
pub fn encode_depth(depth: &DepthMap, path: &Path) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(depth.values.len() * 2);
    for &d in &depth.values {
        let mm = (d * 1000.0).round();
        if !(0.0..=u16::MAX as f64).contains(&mm) {
            return Err(format_err(path, "depth value", format!("{d} m not representable")));
        }
        data.extend_from_slice(&(mm as u16).to_be_bytes());
    }
    encode_png(depth.width, depth.height, png::BitDepth::Sixteen, &data, path)
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let (w, h, buf) = decode_png(bytes, png::BitDepth::Sixteen, path)?;
    let values = buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    DepthMap::new(w, h, values)
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write(path, &encode_depth(depth, path)?)
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(&read(path)?, path)
}

pub fn encode_mask(mask: &Mask, path: &Path) -> Result<Vec<u8>> {
    let data: Vec<u8> = mask.values.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_png(mask.width, mask.height, png::BitDepth::Eight, &data, path)
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<Mask> {
    let (w, h, buf) = decode_png(bytes, png::BitDepth::Eight, path)?;
    Mask::new(h, w, buf.iter().map(|&b| b != 0).collect())
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    write(path, &encode_mask(mask, path)?)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    decode_mask(&read(path)?, path)
}

// ---- feature maps ----

/// Values are stored as `f32`; maps whose entries are `f32`-representable
/// round-trip exactly.
pub fn encode_feature_map(fmap: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(FMAP_HEADER_LEN + fmap.data.len() * 4 + 4);
    out.extend_from_slice(FMAP_MAGIC);
    out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
    out.extend_from_slice(&fmap.height.to_le_bytes());
    out.extend_from_slice(&fmap.width.to_le_bytes());
    out.extend_from_slice(&(fmap.dim as u32).to_le_bytes());
    for &x in &fmap.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out[FMAP_HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode_feature_map(bytes: &[u8], path: &Path) -> Result<FeatureMap> {
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(format_err(path, "header", format!("{} bytes, need {FMAP_HEADER_LEN}", bytes.len())));
    }
    if &bytes[..4] != FMAP_MAGIC {
        return Err(format_err(path, "magic", format!("{:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FMAP_VERSION {
        return Err(format_err(path, "version", format!("{version}, expected {FMAP_VERSION}")));
    }
    let (h, w, f) = (le_u32(&bytes[6..]), le_u32(&bytes[10..]), le_u32(&bytes[14..]));
    let count = (h as u64) * (w as u64) * (f as u64);
    let expected = FMAP_HEADER_LEN as u64 + count * 4 + 4;
    if bytes.len() as u64 != expected {
        return Err(format_err(
            path,
            "header",
            format!("{h}x{w}x{f} needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if f == 0 {
        return Err(format_err(path, "header", "descriptor dimension is 0"));
    }
    let payload = &bytes[FMAP_HEADER_LEN..bytes.len() - 4];
    let stored = le_u32(&bytes[bytes.len() - 4..]);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeatureMap::new(h, w, f as usize, data)
}

pub fn save_feature_map(path: &Path, fmap: &FeatureMap) -> Result<()> {
    write(path, &encode_feature_map(fmap))
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    decode_feature_map(&read(path)?, path)
}

// ---- JSON ----

pub fn save_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    write_json(path, k)
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let k: CameraIntrinsics = read_json(path, "intrinsics")?;
    k.validate()
        .map_err(|e| format_err(path, "intrinsics", e))?;
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub frame: String,
}

impl PoseFile {
    pub fn new(t: &RigidTransform, frame: &str) -> Self {
        let r = t.rotation;
        Self {
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [t.translation.x, t.translation.y, t.translation.z],
            frame: frame.to_string(),
        }
    }
}

pub fn save_pose(path: &Path, t: &RigidTransform, frame: &str) -> Result<()> {
    write_json(path, &PoseFile::new(t, frame))
}

/// Loads a pose and checks its `frame` tag.
pub fn load_pose(path: &Path, frame: &str) -> Result<RigidTransform> {
    let p: PoseFile = read_json(path, "pose")?;
    if p.frame != frame {
        return Err(format_err(path, "frame", format!("{:?}, expected {frame:?}", p.frame)));
    }
    RigidTransform::new(
        Matrix3::from_row_slice(&p.rotation),
        Vector3::from(p.translation),
    )
    .map_err(|e| format_err(path, "rotation", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectModelFile {
    /// Relative to the directory holding the JSON file.
    pub points_path: String,
    pub diameter: f64,
    pub symmetries: Vec<[f64; 9]>,
}

pub fn format_xyz(points: &[Point3]) -> String {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    s
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<Vec<Point3>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, "points", format!("line {}: {e}", n + 1)))?;
        if vals.len() != 3 {
            return Err(format_err(path, "points", format!("line {}: expected 3 values", n + 1)));
        }
        out.push(Point3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

/// Writes `path` (JSON) and the point file next to it. Symmetries must be
/// pure rotations, as the format stores no translation.
pub fn save_object_model(path: &Path, model: &ObjectModel) -> Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let points_name = format!("{stem}.xyz");
    let mut symmetries = Vec::with_capacity(model.symmetries.len());
    for s in &model.symmetries {
        if s.translation.norm() != 0.0 {
            return Err(format_err(path, "symmetries", "symmetry with nonzero translation"));
        }
        symmetries.push(PoseFile::new(s, "").rotation);
    }
    write(&path.with_file_name(&points_name), format_xyz(&model.points).as_bytes())?;
    write_json(
        path,
        &ObjectModelFile {
            points_path: points_name,
            diameter: model.diameter,
            symmetries,
        },
    )
}

pub fn load_object_model(path: &Path) -> Result<ObjectModel> {
    let f: ObjectModelFile = read_json(path, "object model")?;
    let points_path = resolve(path, &f.points_path);
    let text = String::from_utf8(read(&points_path)?).map_err(|e| format_err(&points_path, "points", e))?;
    let points = parse_xyz(&text, &points_path)?;
    let symmetries = f
        .symmetries
        .iter()
        .map(|r| RigidTransform::new(Matrix3::from_row_slice(r), Vector3::zeros()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| format_err(path, "symmetries", e))?;
    ObjectModel::with_diameter(points, f.diameter, symmetries).map_err(|e| format_err(path, "object model", e))
}

fn resolve(base_file: &Path, rel: &str) -> PathBuf {
    let rel = Path::new(rel);
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base_file.parent().unwrap_or(Path::new("")).join(rel)
    }
}

// ---- CSV ----

pub fn encode_matches(matches: &MatchSet) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing into a Vec cannot fail
    w.write_record(MATCH_HEADER).expect("in-memory csv");
    for m in &matches.pairs {
        w.write_record([
            m.a.u.to_string(),
            m.a.v.to_string(),
            m.q.u.to_string(),
            m.q.v.to_string(),
            format!("{:.6}", m.distance),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn csv_rows(bytes: &[u8], header: &[&str], path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let found = r.headers().map_err(|e| format_err(path, "header", e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(format_err(path, "header", format!("{:?}, expected {:?}", found.iter().collect::<Vec<_>>(), header)));
    }
    r.records()
        .map(|rec| rec.map_err(|e| format_err(path, "row", e)))
        .collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &'static str, path: &Path) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i)
        .ok_or_else(|| format_err(path, name, format!("line {line}: missing")))?
        .trim()
        .parse()
        .map_err(|e| format_err(path, name, format!("line {line}: {e}")))
}

/// The file does not record the capacity; the loaded set uses its length.
pub fn decode_matches(bytes: &[u8], path: &Path) -> Result<MatchSet> {
    let pairs = csv_rows(bytes, &MATCH_HEADER, path)?
        .iter()
        .map(|r| {
            Ok(Match {
                a: Pixel::new(field(r, 0, "uA", path)?, field(r, 1, "vA", path)?),
                q: Pixel::new(field(r, 2, "uQ", path)?, field(r, 3, "vQ", path)?),
                distance: field(r, 4, "dist", path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchSet {
        capacity: pairs.len(),
        pairs,
    })
}

pub fn save_matches(path: &Path, matches: &MatchSet) -> Result<()> {
    write(path, &encode_matches(matches))
}

pub fn load_matches(path: &Path) -> Result<MatchSet> {
    decode_matches(&read(path)?, path)
}

pub fn encode_supervision(sup: &MatchSupervision) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUPERVISION_HEADER).expect("in-memory csv");
    for (a, q) in &sup.pairs {
        w.write_record([a.u, a.v, q.u, q.v].map(|x| x.to_string()))
            .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn decode_supervision(bytes: &[u8], path: &Path) -> Result<MatchSupervision> {
    let pairs = csv_rows(bytes, &SUPERVISION_HEADER, path)?
        .iter()
        .map(|r| {
            Ok((
                Pixel::new(field(r, 0, "uA", path)?, field(r, 1, "vA", path)?),
                Pixel::new(field(r, 2, "uQ", path)?, field(r, 3, "vQ", path)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    MatchSupervision::new(pairs).map_err(|e| format_err(path, "pairs", e))
}

pub fn save_supervision(path: &Path, sup: &MatchSupervision) -> Result<()> {
    write(path, &encode_supervision(sup))
}

pub fn load_supervision(path: &Path) -> Result<MatchSupervision> {
    decode_supervision(&read(path)?, path)
}

// ---- scene pairs ----

/// File names of one scene pair, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePairManifest {
    pub depth_a: String,
    pub depth_q: String,
    pub mask_a: String,
    pub mask_q: String,
    pub features_a: String,
    pub features_q: String,
    pub intrinsics_a: String,
    pub intrinsics_q: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_pose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_matches: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_pose_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_pose_q: Option<String>,
}

impl Default for ScenePairManifest {
    fn default() -> Self {
        Self {
            depth_a: "depth_a.png".into(),
            depth_q: "depth_q.png".into(),
            mask_a: "mask_a.png".into(),
            mask_q: "mask_q.png".into(),
            features_a: "features_a.fmap".into(),
            features_q: "features_q.fmap".into(),
            intrinsics_a: "intrinsics_a.json".into(),
            intrinsics_q: "intrinsics_q.json".into(),
            gt_pose: Some("gt_pose.json".into()),
            gt_matches: Some("gt_matches.csv".into()),
            object_model: Some("model.json".into()),
            object_pose_a: Some("object_pose_a.json".into()),
            object_pose_q: Some("object_pose_q.json".into()),
        }
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// A scene pair as loaded from disk; ground truth is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScene {
    pub depth_a: DepthMap,
    pub depth_q: DepthMap,
    pub mask_a: Mask,
    pub mask_q: Mask,
    pub fmap_a: FeatureMap,
    pub fmap_q: FeatureMap,
    pub intrinsics_a: CameraIntrinsics,
    pub intrinsics_q: CameraIntrinsics,
    pub gt_pose: Option<RigidTransform>,
    pub gt_matches: Option<MatchSupervision>,
    pub model: Option<ObjectModel>,
    pub object_pose_a: Option<RigidTransform>,
    pub object_pose_q: Option<RigidTransform>,
}

/// Writes every component of `scene` into `dir` and returns the manifest path.
pub fn save_scene(dir: &Path, scene: &ScenePair) -> Result<PathBuf> {
    let m = ScenePairManifest::default();
    let p = |name: &str| dir.join(name);
    save_depth(&p(&m.depth_a), &scene.depth_a)?;
    save_depth(&p(&m.depth_q), &scene.depth_q)?;
    save_mask(&p(&m.mask_a), &scene.mask_a)?;
    save_mask(&p(&m.mask_q), &scene.mask_q)?;
    save_feature_map(&p(&m.features_a), &scene.fmap_a)?;
    save_feature_map(&p(&m.features_q), &scene.fmap_q)?;
    save_intrinsics(&p(&m.intrinsics_a), &scene.intrinsics_a)?;
    save_intrinsics(&p(&m.intrinsics_q), &scene.intrinsics_q)?;
    let opt = |o: &Option<String>| p(o.as_deref().unwrap_or_default());
    save_pose(&opt(&m.gt_pose), &scene.gt_pose, FRAME_A_TO_Q)?;
    save_supervision(&opt(&m.gt_matches), &scene.gt_matches)?;
    save_object_model(&opt(&m.object_model), &scene.model)?;
    save_pose(&opt(&m.object_pose_a), &scene.object_pose_a, FRAME_MODEL_TO_A)?;
    save_pose(&opt(&m.object_pose_q), &scene.object_pose_q, FRAME_MODEL_TO_Q)?;
    let manifest = dir.join(MANIFEST_NAME);
    write_json(&manifest, &m)?;
    Ok(manifest)
}

pub fn load_scene(manifest_path: &Path) -> Result<LoadedScene> {
    let m: ScenePairManifest = read_json(manifest_path, "manifest")?;
    let p = |rel: &str| resolve(manifest_path, rel);
    let scene = LoadedScene {
        depth_a: load_depth(&p(&m.depth_a))?,
        depth_q: load_depth(&p(&m.depth_q))?,
        mask_a: load_mask(&p(&m.mask_a))?,
        mask_q: load_mask(&p(&m.mask_q))?,
        fmap_a: load_feature_map(&p(&m.features_a))?,
        fmap_q: load_feature_map(&p(&m.features_q))?,
        intrinsics_a: load_intrinsics(&p(&m.intrinsics_a))?,
        intrinsics_q: load_intrinsics(&p(&m.intrinsics_q))?,
        gt_pose: m.gt_pose.as_deref().map(|f| load_pose(&p(f), FRAME_A_TO_Q)).transpose()?,
        gt_matches: m.gt_matches.as_deref().map(|f| load_supervision(&p(f))).transpose()?,
        model: m.object_model.as_deref().map(|f| load_object_model(&p(f))).transpose()?,
        object_pose_a: m
            .object_pose_a
            .as_deref()
            .map(|f| load_pose(&p(f), FRAME_MODEL_TO_A))
            .transpose()?,
        object_pose_q: m
            .object_pose_q
            .as_deref()
            .map(|f| load_pose(&p(f), FRAME_MODEL_TO_Q))
            .transpose()?,
    };
    scene.check_consistent(manifest_path)?;
    Ok(scene)
}

impl LoadedScene {
    fn check_consistent(&self, path: &Path) -> Result<()> {
        let views = [
            ("view A", &self.intrinsics_a, &self.depth_a, &self.mask_a, &self.fmap_a),
            ("view Q", &self.intrinsics_q, &self.depth_q, &self.mask_q, &self.fmap_q),
        ];
        for (field, k, d, m, f) in views {
            let dims = [
                (d.width, d.height),
                (m.width, m.height),
                (f.width, f.height),
            ];
            if dims.iter().any(|&wh| wh != (k.width, k.height)) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    field,
                    reason: format!(
                        "intrinsics {}x{}, depth/mask/features {:?}",
                        k.width, k.height, dims
                    ),
                });
            }
        }
        if self.fmap_a.dim != self.fmap_q.dim {
            return Err(format_err(path, "features", "descriptor dimensions differ between views"));
        }
        Ok(())
    }
}
