//! Dataset files: line-delimited sample records, the dataset manifest,
//! prompt rendering, and the prediction-file format read by the evaluator.
//!
//! Field names and ordering are documented in `docs/FORMATS.md`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::relations::{RelationLabel, RelationSet};
use crate::sampler::{GenConfig, Sample, SkippedScene, StatsTable};
use crate::scene::{InstanceId, SceneBundle};
use crate::util::write_atomic;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const SHARD_DIR: &str = "shards";

pub const LOC_TOKEN: &str = "<loc>";
pub const VIEWPOINT_TOKEN: &str = "<viewpoint>";

/// A rendered referring expression carrying the `<loc>` and `<viewpoint>`
/// placeholder tokens exactly once each.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptText(String);

impl PromptText {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for PromptText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn relation_phrase(r: RelationLabel) -> &'static str {
    match r {
        RelationLabel::Left => "to the left of",
        RelationLabel::Right => "to the right of",
        RelationLabel::Front => "in front of",
        RelationLabel::Behind => "behind",
        RelationLabel::Above => "above",
        RelationLabel::Under => "under",
    }
}

pub fn render_prompt_for(set: RelationSet, anchor_label: &str) -> PromptText {
    let phrase = set
        .labels()
        .map(relation_phrase)
        .collect::<Vec<_>>()
        .join(" and ");
    PromptText(format!(
        "the object that is {phrase} the highlighted {anchor_label} at {LOC_TOKEN}, \
         relative to the camera pose {VIEWPOINT_TOKEN}."
    ))
}

pub fn render_prompt(sample: &Sample) -> PromptText {
    render_prompt_for(sample.relation_set, &sample.anchor_label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: "viewrel".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub checksum: String,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub relation: RelationSet,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub tool: ToolInfo,
    pub config: GenConfig,
    pub scenes: Vec<SceneEntry>,
    pub skipped_scenes: Vec<SkippedScene>,
    pub excluded_scenes: Vec<String>,
    pub shards: Vec<ShardEntry>,
    pub total_samples: u64,
    pub stats: Vec<StatsRow>,
    /// SHA-256 over every sample line (with its trailing LF) in canonical order.
    pub determinism_token: String,
}

impl DatasetManifest {
    pub fn stats_table(&self) -> Result<StatsTable> {
        let mut t = StatsTable::default();
        for row in &self.stats {
            for _ in 0..row.count {
                t.add(row.relation);
            }
        }
        Ok(t)
    }
}

pub fn stats_rows(stats: &StatsTable) -> Vec<StatsRow> {
    stats
        .rows()
        .map(|(relation, count)| StatsRow { relation, count })
        .collect()
}

/// Formats a pose entry with 17 significant digits.
fn fmt_pose(pose: &CameraPose) -> String {
    let mut s = String::from("[");
    for (i, v) in pose.matrix().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v:.16e}").unwrap();
    }
    s.push(']');
    s
}

#[derive(Serialize)]
struct RecordOut<'a> {
    sample_id: &'a str,
    scene_id: &'a str,
    viewpoint_id: usize,
    pose: &'a RawValue,
    anchor_id: InstanceId,
    anchor_label: &'a str,
    relation: RelationSet,
    target_ids: &'a [InstanceId],
    prompt: &'a str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    sample_id: String,
    scene_id: String,
    viewpoint_id: usize,
    pose: CameraPose,
    anchor_id: InstanceId,
    anchor_label: String,
    relation: RelationSet,
    target_ids: Vec<InstanceId>,
    prompt: String,
}

/// One sample as a single JSON line (without the trailing LF).
pub fn sample_line(sample: &Sample) -> Result<String> {
    let pose = RawValue::from_string(fmt_pose(&sample.pose))?;
    let prompt = render_prompt(sample);
    Ok(serde_json::to_string(&RecordOut {
        sample_id: &sample.sample_id,
        scene_id: &sample.scene_id,
        viewpoint_id: sample.viewpoint_id,
        pose: &pose,
        anchor_id: sample.anchor_id,
        anchor_label: &sample.anchor_label,
        relation: sample.relation_set,
        target_ids: &sample.target_ids,
        prompt: prompt.as_str(),
    })?)
}

pub fn parse_sample_line(line: &str) -> std::result::Result<Sample, String> {
    let r: RecordIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let sample = Sample {
        sample_id: r.sample_id,
        scene_id: r.scene_id,
        viewpoint_id: r.viewpoint_id,
        pose: r.pose,
        anchor_id: r.anchor_id,
        anchor_label: r.anchor_label,
        relation_set: r.relation,
        target_ids: r.target_ids,
    };
    if render_prompt(&sample).as_str() != r.prompt {
        return Err("prompt does not match relation and anchor label".into());
    }
    if sample.target_ids.is_empty() {
        return Err("empty target set".into());
    }
    if !sample.target_ids.windows(2).all(|w| w[0] < w[1]) {
        return Err("target_ids must be strictly ascending".into());
    }
    Ok(sample)
}

fn shard_file_name(scene_id: &str) -> String {
    format!("{SHARD_DIR}/{scene_id}.jsonl")
}

/// Streams samples into a dataset directory. Files are written under a
/// temporary sibling directory and moved into place by [`finish`](Self::finish).
pub struct DatasetWriter {
    out_dir: PathBuf,
    tmp_dir: PathBuf,
    shard_by_scene: bool,
    overwrite: bool,
    current: Option<(String, BufWriter<fs::File>, u64)>,
    shards: Vec<ShardEntry>,
    hasher: Sha256,
    count: u64,
    last_key: Option<(String, usize, InstanceId, usize)>,
}

impl DatasetWriter {
    pub fn create(out_dir: &Path, shard_by_scene: bool, overwrite: bool) -> Result<Self> {
        if out_dir.exists() && !overwrite {
            return Err(Error::InvalidConfig(format!(
                "{} already exists (pass overwrite to replace it)",
                out_dir.display()
            )));
        }
        let name = out_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        let tmp_dir = out_dir.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        if tmp_dir.exists() {
            fs::remove_dir_all(&tmp_dir).map_err(|e| Error::io(&tmp_dir, e))?;
        }
        fs::create_dir_all(&tmp_dir).map_err(|e| Error::io(&tmp_dir, e))?;
        if shard_by_scene {
            let d = tmp_dir.join(SHARD_DIR);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(Self {
            out_dir: out_dir.to_owned(),
            tmp_dir,
            shard_by_scene,
            overwrite,
            current: None,
            shards: Vec::new(),
            hasher: Sha256::new(),
            count: 0,
            last_key: None,
        })
    }

    fn close_current(&mut self) -> Result<()> {
        if let Some((file, mut w, n)) = self.current.take() {
            w.flush().map_err(|e| Error::io(&file, e))?;
            self.shards.push(ShardEntry { file, samples: n });
        }
        Ok(())
    }

    pub fn push(&mut self, sample: &Sample) -> Result<()> {
        let key = sample.order_key();
        if let Some(last) = &self.last_key {
            if (last.0.as_str(), last.1, last.2, last.3) >= key {
                return Err(Error::OutOfOrder(sample.sample_id.clone()));
            }
        }
        self.last_key = Some((key.0.to_string(), key.1, key.2, key.3));

        let file = if self.shard_by_scene {
            shard_file_name(&sample.scene_id)
        } else {
            SAMPLES_FILE.to_string()
        };
        if self.current.as_ref().map(|c| &c.0) != Some(&file) {
            self.close_current()?;
            let path = self.tmp_dir.join(&file);
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.current = Some((file, BufWriter::new(f), 0));
        }
        let mut line = sample_line(sample)?;
        line.push('\n');
        self.hasher.update(line.as_bytes());
        let (file, w, n) = self.current.as_mut().expect("open shard");
        w.write_all(line.as_bytes())
            .map_err(|e| Error::io(&*file, e))?;
        *n += 1;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Writes the manifest last and moves the dataset into place.
    pub fn finish(
        mut self,
        config: &GenConfig,
        scenes: Vec<SceneEntry>,
        skipped: Vec<SkippedScene>,
        excluded: Vec<String>,
        stats: &StatsTable,
    ) -> Result<DatasetManifest> {
        self.close_current()?;
        if !self.shard_by_scene && self.shards.is_empty() {
            // an empty dataset still has its (empty) sample file
            let path = self.tmp_dir.join(SAMPLES_FILE);
            fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.shards.push(ShardEntry {
                file: SAMPLES_FILE.into(),
                samples: 0,
            });
        }
        if stats.total() != self.count {
            return Err(Error::CountMismatch {
                manifest: stats.total() as usize,
                found: self.count as usize,
            });
        }
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            tool: ToolInfo::default(),
            config: config.clone(),
            scenes,
            skipped_scenes: skipped,
            excluded_scenes: excluded,
            shards: std::mem::take(&mut self.shards),
            total_samples: self.count,
            stats: stats_rows(stats),
            determinism_token: hex::encode(self.hasher.clone().finalize()),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&self.tmp_dir.join(MANIFEST_FILE), text.as_bytes())?;
        if self.out_dir.exists() && self.overwrite {
            fs::remove_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        }
        fs::rename(&self.tmp_dir, &self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        Ok(manifest)
    }
}

impl Drop for DatasetWriter {
    fn drop(&mut self) {
        // leftover temp dir from an abandoned or failed write
        if self.tmp_dir.exists() {
            let _ = fs::remove_dir_all(&self.tmp_dir);
        }
    }
}

/// Writes a complete dataset from samples already in canonical order.
pub fn write_samples<'a>(
    samples: impl IntoIterator<Item = &'a Sample>,
    config: &GenConfig,
    out_dir: &Path,
    shard_by_scene: bool,
) -> Result<DatasetManifest> {
    let mut w = DatasetWriter::create(out_dir, shard_by_scene, false)?;
    let mut stats = StatsTable::default();
    let mut scenes: Vec<SceneEntry> = Vec::new();
    for s in samples {
        w.push(s)?;
        stats.add(s.relation_set);
        match scenes.last_mut() {
            Some(e) if e.scene_id == s.scene_id => e.samples += 1,
            _ => scenes.push(SceneEntry {
                scene_id: s.scene_id.clone(),
                checksum: String::new(),
                samples: 1,
            }),
        }
    }
    w.finish(config, scenes, Vec::new(), Vec::new(), &stats)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    // check the version before the full schema so old/new files get a clear error
    let probe: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::MalformedHeader {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(probe).map_err(|e| Error::MalformedHeader {
        path,
        msg: e.to_string(),
    })
}

/// Reads and verifies a dataset: format version, per-shard and total
/// counts, determinism token and canonical order.
pub fn read_samples(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest = read_manifest(dir)?;
    let mut hasher = Sha256::new();
    let mut samples = Vec::with_capacity(manifest.total_samples as usize);
    for shard in &manifest.shards {
        let path = dir.join(&shard.file);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut n = 0u64;
        let mut reader = BufReader::new(f);
        let mut buf = String::new();
        let mut lineno = 0usize;
        loop {
            buf.clear();
            let read = reader
                .read_line(&mut buf)
                .map_err(|e| Error::io(&path, e))?;
            if read == 0 {
                break;
            }
            lineno += 1;
            hasher.update(buf.as_bytes());
            let Some(line) = buf.strip_suffix('\n') else {
                // a truncated final line cannot have been written by us
                let computed = hex::encode(hasher.clone().finalize());
                return Err(Error::TokenMismatch {
                    expected: manifest.determinism_token.clone(),
                    computed,
                });
            };
            match parse_sample_line(line) {
                Ok(s) => samples.push(s),
                Err(msg) => {
                    return Err(Error::Parse {
                        path: path.clone(),
                        line: lineno,
                        msg,
                    })
                }
            }
            n += 1;
        }
        if n != shard.samples {
            return Err(Error::CountMismatch {
                manifest: shard.samples as usize,
                found: n as usize,
            });
        }
    }
    let computed = hex::encode(hasher.finalize());
    if computed != manifest.determinism_token {
        return Err(Error::TokenMismatch {
            expected: manifest.determinism_token.clone(),
            computed,
        });
    }
    if samples.len() as u64 != manifest.total_samples {
        return Err(Error::CountMismatch {
            manifest: manifest.total_samples as usize,
            found: samples.len(),
        });
    }
    if let Some(w) = samples
        .windows(2)
        .find(|w| w[0].order_key() >= w[1].order_key())
    {
        return Err(Error::OutOfOrder(w[1].sample_id.clone()));
    }
    Ok((manifest, samples))
}

/// Predicted mask: explicit point-index runs or a set of instance ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMask {
    /// `[start, length]` runs over the scene's point order.
    Rle(Vec<[u64; 2]>),
    Instances(Vec<InstanceId>),
}

/// Run-length encodes a set of point indices (any order, duplicates allowed).
pub fn rle_encode(indices: &[u32]) -> Vec<[u64; 2]> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut runs: Vec<[u64; 2]> = Vec::new();
    for i in sorted {
        let i = i as u64;
        match runs.last_mut() {
            Some(r) if r[0] + r[1] == i => r[1] += 1,
            _ => runs.push([i, 1]),
        }
    }
    runs
}

/// Expands runs to sorted, de-duplicated point indices bounded by `point_count`.
pub fn rle_decode(runs: &[[u64; 2]], point_count: usize) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for &[start, len] in runs {
        if len == 0 {
            continue;
        }
        let end = start.checked_add(len).ok_or(Error::IndexOutOfRange {
            index: u64::MAX,
            count: point_count,
        })?;
        if end > point_count as u64 {
            return Err(Error::IndexOutOfRange {
                index: end - 1,
                count: point_count,
            });
        }
        out.extend((start..end).map(|i| i as u32));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl PredictionMask {
    /// Sorted point indices selected by this mask.
    pub fn to_points(&self, scene: &SceneBundle) -> Result<Vec<u32>> {
        match self {
            PredictionMask::Rle(runs) => rle_decode(runs, scene.point_count()),
            PredictionMask::Instances(ids) => {
                let mut out = Vec::new();
                for &id in ids {
                    out.extend_from_slice(&scene.instance(id)?.point_indices);
                }
                out.sort_unstable();
                out.dedup();
                Ok(out)
            }
        }
    }

    fn check(
        &self,
        point_count: usize,
        instances: &BTreeSet<InstanceId>,
    ) -> std::result::Result<(), String> {
        match self {
            PredictionMask::Rle(runs) => rle_decode(runs, point_count)
                .map(|_| ())
                .map_err(|e| e.to_string()),
            PredictionMask::Instances(ids) => match ids.iter().find(|id| !instances.contains(id)) {
                Some(id) => Err(format!("unknown instance id {id}")),
                None => Ok(()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub mask: PredictionMask,
}

/// What the prediction reader needs to know about each sample's scene.
#[derive(Debug, Default, Clone)]
pub struct SceneIndex {
    sample_scene: HashMap<String, String>,
    scenes: HashMap<String, (usize, BTreeSet<InstanceId>)>,
}

impl SceneIndex {
    pub fn new<'a>(
        samples: impl IntoIterator<Item = &'a Sample>,
        scenes: impl IntoIterator<Item = &'a SceneBundle>,
    ) -> Self {
        Self {
            sample_scene: samples
                .into_iter()
                .map(|s| (s.sample_id.clone(), s.scene_id.clone()))
                .collect(),
            scenes: scenes
                .into_iter()
                .map(|s| {
                    let ids = s.instances().iter().map(|m| m.id).collect();
                    (s.scene_id().to_string(), (s.point_count(), ids))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    /// Last record wins for a repeated sample id.
    pub records: BTreeMap<String, PredictionRecord>,
    pub unknown: Vec<String>,
    pub duplicates: usize,
}

pub fn read_predictions(path: &Path, index: &SceneIndex) -> Result<PredictionSet> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = PredictionSet::default();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_owned(),
            line: k + 1,
            msg,
        };
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let Some(scene_id) = index.sample_scene.get(&rec.sample_id) else {
            out.unknown.push(rec.sample_id);
            continue;
        };
        let (points, ids) = index
            .scenes
            .get(scene_id)
            .ok_or_else(|| parse_err(format!("scene {scene_id} is not loaded")))?;
        rec.mask.check(*points, ids).map_err(parse_err)?;
        if out.records.insert(rec.sample_id.clone(), rec).is_some() {
            out.duplicates += 1;
        }
    }
    if !out.unknown.is_empty() {
        log::warn!(
            "{}: {} predictions for unknown sample ids",
            path.display(),
            out.unknown.len()
        );
    }
    if out.duplicates > 0 {
        log::warn!(
            "{}: {} duplicate sample ids (last record kept)",
            path.display(),
            out.duplicates
        );
    }
    Ok(out)
}

pub fn write_predictions<'a>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}
