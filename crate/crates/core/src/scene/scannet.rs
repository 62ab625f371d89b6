//! Adapter for the ScanNet v2 per-scan layout:
//!
//! ```text
//! <scene>/<scene>_vh_clean_2.ply                 vertices with x y z red green blue
//! <scene>/<scene>_vh_clean_2.0.010000.segs.json  {"segIndices": [...]}
//! <scene>/<scene>.aggregation.json               {"segGroups": [{"objectId", "segments", "label"}]}
//! <scene>/pose/<frame>.txt                       4×4 camera-to-world matrix per frame
//! ```
//!
//! `<scene>_vh_clean.aggregation.json` is accepted as well.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use serde::Deserialize;

use super::{SceneBundle, SceneParts};
use crate::error::{Error, Result};
use crate::geometry::{Axis, CameraPose};

pub const DEFAULT_BACKGROUND_LABELS: [&str; 3] = ["wall", "floor", "ceiling"];

#[derive(Deserialize)]
struct Segments {
    #[serde(rename = "segIndices")]
    seg_indices: Vec<i64>,
}

#[derive(Deserialize)]
struct Aggregation {
    #[serde(rename = "segGroups", default)]
    seg_groups: Vec<SegGroup>,
}

#[derive(Deserialize)]
struct SegGroup {
    #[serde(rename = "objectId")]
    object_id: Option<u32>,
    id: Option<u32>,
    segments: Vec<i64>,
    label: String,
}

fn find_file(dir: &Path, suffixes: &[&str]) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.sort();
    for suffix in suffixes {
        if let Some(p) = names.iter().find(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().ends_with(suffix))
        }) {
            return Ok(p.clone());
        }
    }
    Err(Error::MissingFile(dir.join(format!("*{}", suffixes[0]))))
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn read_vertices(path: &Path) -> Result<(Vec<[f32; 3]>, Vec<[u8; 3]>)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let ply = Parser::<DefaultElement>::new()
        .read_ply(&mut reader)
        .map_err(|e| Error::MalformedHeader {
            path: path.to_owned(),
            msg: e.to_string(),
        })?;
    let verts = ply
        .payload
        .get("vertex")
        .ok_or_else(|| Error::MalformedHeader {
            path: path.to_owned(),
            msg: "no vertex element".into(),
        })?;
    let mut positions = Vec::with_capacity(verts.len());
    let mut colors = Vec::with_capacity(verts.len());
    for v in verts {
        let get = |k: &str| v.get(k).and_then(scalar);
        let (Some(x), Some(y), Some(z)) = (get("x"), get("y"), get("z")) else {
            return Err(Error::MalformedHeader {
                path: path.to_owned(),
                msg: "vertex lacks x/y/z".into(),
            });
        };
        positions.push([x as f32, y as f32, z as f32]);
        let c = |k: &str| get(k).unwrap_or(0.0).clamp(0.0, 255.0) as u8;
        colors.push([c("red"), c("green"), c("blue")]);
    }
    Ok((positions, colors))
}

fn parse_pose(path: &Path) -> Result<[f64; 16]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::PoseParse {
            path: path.to_owned(),
            msg: e.to_string(),
        })?;
    vals.as_slice().try_into().map_err(|_| Error::PoseParse {
        path: path.to_owned(),
        msg: format!("expected 16 numbers, found {}", vals.len()),
    })
}

fn read_trajectory(dir: &Path) -> Result<Vec<CameraPose>> {
    let pose_dir = dir.join("pose");
    if !pose_dir.is_dir() {
        return Err(Error::MissingFile(pose_dir));
    }
    let mut frames: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&pose_dir).map_err(|e| Error::io(&pose_dir, e))? {
        let path = entry.map_err(|e| Error::io(&pose_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let idx = stem.parse::<u64>().map_err(|_| Error::PoseParse {
                path: path.clone(),
                msg: "file name is not a frame index".into(),
            })?;
            frames.push((idx, path));
        }
    }
    frames.sort();
    let mut poses = Vec::with_capacity(frames.len());
    for (_, path) in &frames {
        let m = parse_pose(path)?;
        // ScanNet marks tracking failures with -inf / nan matrices.
        if m.iter().any(|v| !v.is_finite()) {
            log::debug!("dropping non-finite pose {}", path.display());
            continue;
        }
        poses.push(CameraPose::from_matrix(m).map_err(|e| Error::PoseParse {
            path: path.clone(),
            msg: e.to_string(),
        })?);
    }
    if poses.is_empty() {
        return Err(Error::NoPoses(pose_dir));
    }
    Ok(poses)
}

/// Converts one ScanNet scan directory into a [`SceneBundle`] (Z-up).
pub fn convert_scannet(scan_dir: &Path, background_labels: &[String]) -> Result<SceneBundle> {
    let scene_id = scan_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let ply_path = find_file(scan_dir, &["_vh_clean_2.ply"])?;
    let segs_path = find_file(scan_dir, &["_vh_clean_2.0.010000.segs.json", ".segs.json"])?;
    let agg_path = find_file(scan_dir, &[".aggregation.json"])?;

    let (positions, colors) = read_vertices(&ply_path)?;
    let segs: Segments =
        serde_json::from_slice(&fs::read(&segs_path).map_err(|e| Error::io(&segs_path, e))?)
            .map_err(|e| Error::MalformedHeader {
                path: segs_path.clone(),
                msg: e.to_string(),
            })?;
    if segs.seg_indices.len() != positions.len() {
        return Err(Error::LengthMismatch {
            field: "segIndices",
            expected: positions.len(),
            found: segs.seg_indices.len(),
        });
    }
    let agg: Aggregation =
        serde_json::from_slice(&fs::read(&agg_path).map_err(|e| Error::io(&agg_path, e))?)
            .map_err(|e| Error::MalformedHeader {
                path: agg_path.clone(),
                msg: e.to_string(),
            })?;
    if agg.seg_groups.is_empty() {
        return Err(Error::NoInstances(agg_path));
    }

    let mut seg_owner: HashMap<i64, u32> = HashMap::new();
    let mut labels = BTreeMap::new();
    for (k, g) in agg.seg_groups.iter().enumerate() {
        let id = g.object_id.or(g.id).unwrap_or(k as u32);
        labels.entry(id).or_insert_with(|| g.label.clone());
        for &s in &g.segments {
            // first claim wins on the rare overlapping groups
            seg_owner.entry(s).or_insert(id);
        }
    }
    let point_instance: Vec<Option<u32>> = segs
        .seg_indices
        .iter()
        .map(|s| seg_owner.get(s).copied())
        .collect();
    let mut used: Vec<u32> = point_instance.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    labels.retain(|id, _| used.binary_search(id).is_ok());
    if labels.is_empty() {
        return Err(Error::NoInstances(agg_path));
    }

    let trajectory = read_trajectory(scan_dir)?;
    SceneBundle::from_parts(SceneParts {
        scene_id,
        positions,
        colors,
        point_instance,
        labels,
        up_axis: Axis::Z,
        trajectory,
        background_labels: background_labels.to_vec(),
    })
}
