//! Viewpoint selection, per-viewpoint annotation into referring samples,
//! corpus generation and relation-category statistics.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_samples, DatasetWriter, SceneEntry};
use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::relations::{
    relation_mask, valid_relation_sets, InstanceFrameBoxes, RelationConfig, RelationLabel,
    RelationSet,
};
use crate::scene::{load_bundle, InstanceId, SceneBundle};
use crate::util::{derive_seed, sha256_hex};
use crate::visibility::{Intrinsics, ProjectedScene, VisibilityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ViewpointStrategy {
    #[default]
    UniformStride,
    Random,
}

impl std::str::FromStr for ViewpointStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-stride" => Ok(Self::UniformStride),
            "random" => Ok(Self::Random),
            _ => Err(Error::InvalidConfig(format!(
                "unknown viewpoint strategy {s:?}"
            ))),
        }
    }
}

/// Dataset generation settings. Every field is recorded in the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub viewpoints_per_scene: usize,
    pub viewpoint_strategy: ViewpointStrategy,
    pub seed: u64,
    /// `up_axis` is taken from each scene during generation; only `tau` is read here.
    pub relation: RelationConfig,
    pub visibility: VisibilityConfig,
    pub intrinsics: Intrinsics,
    /// Smaller instances never become anchors or targets but still occlude.
    pub min_instance_points: usize,
    pub exclude_scenes: Vec<String>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            viewpoints_per_scene: 10,
            viewpoint_strategy: ViewpointStrategy::UniformStride,
            seed: 0,
            relation: RelationConfig::default(),
            visibility: VisibilityConfig::default(),
            intrinsics: Intrinsics::default(),
            min_instance_points: 10,
            exclude_scenes: Vec::new(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.viewpoints_per_scene == 0 {
            return Err(Error::InvalidConfig(
                "viewpoints_per_scene must be at least 1".into(),
            ));
        }
        self.relation.validate()?;
        self.visibility.validate()?;
        self.intrinsics.validate()
    }

    /// Relation settings with the scene's own up axis.
    pub fn relation_for(&self, scene: &SceneBundle) -> RelationConfig {
        RelationConfig {
            tau: self.relation.tau,
            up_axis: scene.up_axis(),
        }
    }
}

/// One referring-segmentation problem: (scene, viewpoint, anchor, relation set)
/// plus its ground-truth targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub scene_id: String,
    pub viewpoint_id: usize,
    pub pose: CameraPose,
    pub anchor_id: InstanceId,
    pub anchor_label: String,
    pub relation_set: RelationSet,
    pub target_ids: Vec<InstanceId>,
}

pub fn sample_id(
    scene_id: &str,
    viewpoint_id: usize,
    anchor_id: InstanceId,
    set: RelationSet,
) -> String {
    let key = format!("{scene_id}\n{viewpoint_id}\n{anchor_id}\n{set}");
    sha256_hex(key.as_bytes())[..16].to_string()
}

impl Sample {
    /// Canonical ordering key.
    pub fn order_key(&self) -> (&str, usize, InstanceId, usize) {
        (
            &self.scene_id,
            self.viewpoint_id,
            self.anchor_id,
            self.relation_set.category_index(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatsTable {
    counts: [u64; 26],
    total: u64,
}

impl StatsTable {
    pub fn add(&mut self, set: RelationSet) {
        self.counts[set.category_index()] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &StatsTable) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn count(&self, set: RelationSet) -> u64 {
        self.counts[set.category_index()]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `(category, count)` in table order.
    pub fn rows(&self) -> impl Iterator<Item = (RelationSet, u64)> + '_ {
        valid_relation_sets().iter().copied().zip(self.counts)
    }

    pub fn is_consistent(&self) -> bool {
        self.counts.iter().sum::<u64>() == self.total
    }
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12}", "Relation", "Samples")?;
        for (set, n) in self.rows() {
            writeln!(f, "{:<24} {:>12}", set.to_string(), n)?;
        }
        write!(f, "{:<24} {:>12}", "Total", self.total)
    }
}

/// Picks observation viewpoints from a trajectory as `(index, pose)` pairs,
/// sorted by index.
pub fn select_viewpoints(
    trajectory: &[CameraPose],
    k: usize,
    strategy: ViewpointStrategy,
    seed: u64,
) -> Result<Vec<(usize, CameraPose)>> {
    let len = trajectory.len();
    if len == 0 {
        return Err(Error::EmptyGeometry("empty trajectory"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("need at least one viewpoint".into()));
    }
    let mut idx: Vec<usize> = if k >= len {
        (0..len).collect()
    } else {
        match strategy {
            ViewpointStrategy::UniformStride if k == 1 => vec![0],
            ViewpointStrategy::UniformStride => (0..k)
                .map(|m| ((m * (len - 1)) as f64 / (k - 1) as f64).round() as usize)
                .collect(),
            ViewpointStrategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                index::sample(&mut rng, len, k).into_vec()
            }
        }
    };
    idx.sort_unstable();
    idx.dedup();
    Ok(idx.into_iter().map(|i| (i, trajectory[i])).collect())
}

/// Geometry of one scene seen from one pose: visibility and per-instance boxes.
pub struct ViewContext<'a> {
    scene: &'a SceneBundle,
    pub relation: RelationConfig,
    /// Visible non-background instances.
    pub visible: BTreeSet<InstanceId>,
    /// Visible instances meeting the minimum point count, ascending.
    pub eligible: Vec<InstanceId>,
    boxes: BTreeMap<InstanceId, InstanceFrameBoxes>,
}

impl<'a> ViewContext<'a> {
    pub fn new(scene: &'a SceneBundle, pose: &CameraPose, cfg: &GenConfig) -> Self {
        let proj = ProjectedScene::new(scene, pose, &cfg.intrinsics);
        let buffer = proj.depth_buffer(&cfg.intrinsics, &cfg.visibility);
        let visible = proj.visible_instances(scene, &buffer, &cfg.visibility);
        let eligible: Vec<InstanceId> = visible
            .iter()
            .copied()
            .filter(|&id| {
                scene
                    .instance(id)
                    .is_ok_and(|m| m.point_count() >= cfg.min_instance_points)
            })
            .collect();
        let boxes = scene
            .instances()
            .iter()
            .filter(|m| !m.is_background)
            .map(|m| {
                let b = InstanceFrameBoxes::from_camera_points(scene, m.id, &proj.cam)
                    .expect("instance owns points");
                (m.id, b)
            })
            .collect();
        Self {
            scene,
            relation: cfg.relation_for(scene),
            visible,
            eligible,
            boxes,
        }
    }

    pub fn scene(&self) -> &SceneBundle {
        self.scene
    }

    pub fn boxes(&self, id: InstanceId) -> Result<&InstanceFrameBoxes> {
        self.boxes.get(&id).ok_or(Error::UnknownInstance(id))
    }

    /// Mask of relations that `target` satisfies relative to `anchor`.
    pub fn mask(&self, target: InstanceId, anchor: InstanceId) -> Result<u8> {
        Ok(relation_mask(
            self.boxes(target)?,
            self.boxes(anchor)?,
            &self.relation,
        ))
    }

    /// Eligible instances other than the anchor satisfying every relation in `set`.
    pub fn targets(&self, anchor: InstanceId, set: RelationSet) -> Result<Vec<InstanceId>> {
        self.targets_among(&self.eligible, anchor, set)
    }

    pub fn targets_among(
        &self,
        candidates: &[InstanceId],
        anchor: InstanceId,
        set: RelationSet,
    ) -> Result<Vec<InstanceId>> {
        let mut out = Vec::new();
        for &t in candidates {
            if t != anchor && set.satisfied_by(self.mask(t, anchor)?) {
                out.push(t);
            }
        }
        Ok(out)
    }
}

/// Ordered-pair relation counts at one viewpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub scene_id: String,
    pub viewpoint_id: usize,
    pub eligible: usize,
    pub left: u64,
    pub right: u64,
    pub front: u64,
    pub behind: u64,
    pub above: u64,
    pub under: u64,
}

impl PairCounts {
    pub fn get(&self, r: RelationLabel) -> u64 {
        match r {
            RelationLabel::Left => self.left,
            RelationLabel::Right => self.right,
            RelationLabel::Front => self.front,
            RelationLabel::Behind => self.behind,
            RelationLabel::Above => self.above,
            RelationLabel::Under => self.under,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.left == self.right && self.front == self.behind && self.above == self.under
    }
}

#[derive(Debug, Clone)]
pub struct ViewpointAnnotation {
    pub samples: Vec<Sample>,
    pub pairs: PairCounts,
}

/// Annotates one viewpoint, also returning the ordered-pair counts.
pub fn annotate_viewpoint_with_pairs(
    scene: &SceneBundle,
    viewpoint_id: usize,
    pose: &CameraPose,
    cfg: &GenConfig,
) -> ViewpointAnnotation {
    let ctx = ViewContext::new(scene, pose, cfg);
    let n = ctx.eligible.len();
    let mut pairs = PairCounts {
        scene_id: scene.scene_id().to_string(),
        viewpoint_id,
        eligible: n,
        left: 0,
        right: 0,
        front: 0,
        behind: 0,
        above: 0,
        under: 0,
    };
    // masks[t * n + a]: relations of eligible[t] relative to eligible[a]
    let mut masks = vec![0u8; n * n];
    for (ti, &t) in ctx.eligible.iter().enumerate() {
        for (ai, &a) in ctx.eligible.iter().enumerate() {
            if ti != ai {
                let m = ctx.mask(t, a).expect("eligible instances have boxes");
                masks[ti * n + ai] = m;
                for r in RelationLabel::ALL {
                    if m & (1 << r as u8) != 0 {
                        match r {
                            RelationLabel::Left => pairs.left += 1,
                            RelationLabel::Right => pairs.right += 1,
                            RelationLabel::Front => pairs.front += 1,
                            RelationLabel::Behind => pairs.behind += 1,
                            RelationLabel::Above => pairs.above += 1,
                            RelationLabel::Under => pairs.under += 1,
                        }
                    }
                }
            }
        }
    }

    let mut samples = Vec::new();
    for (ai, &a) in ctx.eligible.iter().enumerate() {
        let anchor_label = &scene.instance(a).expect("eligible instance exists").label;
        for &set in valid_relation_sets() {
            let targets: Vec<InstanceId> = (0..n)
                .filter(|&ti| ti != ai && set.satisfied_by(masks[ti * n + ai]))
                .map(|ti| ctx.eligible[ti])
                .collect();
            if !targets.is_empty() {
                samples.push(Sample {
                    sample_id: sample_id(scene.scene_id(), viewpoint_id, a, set),
                    scene_id: scene.scene_id().to_string(),
                    viewpoint_id,
                    pose: *pose,
                    anchor_id: a,
                    anchor_label: anchor_label.clone(),
                    relation_set: set,
                    target_ids: targets,
                });
            }
        }
    }
    ViewpointAnnotation { samples, pairs }
}

/// Samples for one viewpoint, sorted by anchor id then category order.
pub fn annotate_viewpoint(
    scene: &SceneBundle,
    viewpoint_id: usize,
    pose: &CameraPose,
    cfg: &GenConfig,
) -> Vec<Sample> {
    annotate_viewpoint_with_pairs(scene, viewpoint_id, pose, cfg).samples
}

/// Something that yields a scene on demand.
pub trait SceneSource: Sync {
    fn scene_id(&self) -> &str;
    fn load(&self) -> Result<Cow<'_, SceneBundle>>;
}

impl SceneSource for SceneBundle {
    fn scene_id(&self) -> &str {
        SceneBundle::scene_id(self)
    }

    fn load(&self) -> Result<Cow<'_, SceneBundle>> {
        Ok(Cow::Borrowed(self))
    }
}

/// A scene bundle directory, loaded lazily.
#[derive(Debug, Clone)]
pub struct BundleDir {
    pub scene_id: String,
    pub dir: PathBuf,
}

impl BundleDir {
    /// Reads only the manifest to learn the scene id.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(crate::scene::BUNDLE_MANIFEST_FILE);
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: crate::scene::BundleManifest =
            serde_json::from_slice(&raw).map_err(|e| Error::MalformedHeader {
                path: path.clone(),
                msg: e.to_string(),
            })?;
        Ok(Self {
            scene_id: m.scene_id,
            dir: dir.to_owned(),
        })
    }
}

/// Every bundle directly under `root`, sorted by scene id.
pub fn bundle_dirs(root: &Path) -> Result<Vec<BundleDir>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(crate::scene::BUNDLE_MANIFEST_FILE).is_file() {
            out.push(BundleDir::open(&path)?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no scene bundles under {}",
            root.display()
        )));
    }
    out.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(out)
}

impl SceneSource for BundleDir {
    fn scene_id(&self) -> &str {
        &self.scene_id
    }

    fn load(&self) -> Result<Cow<'_, SceneBundle>> {
        load_bundle(&self.dir).map(Cow::Owned)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct SkippedScene {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct GenerationReport {
    pub stats: StatsTable,
    pub skipped: Vec<SkippedScene>,
    pub excluded: Vec<String>,
    pub pair_counts: Vec<PairCounts>,
    pub scenes: Vec<SceneEntry>,
}

pub struct GenerateOptions<'w> {
    pub workers: usize,
    /// Receives one JSON line of [`PairCounts`] per viewpoint.
    pub pair_log: Option<&'w mut dyn Write>,
    /// Keep every viewpoint's pair counts in the report.
    pub collect_pairs: bool,
}

impl Default for GenerateOptions<'_> {
    fn default() -> Self {
        Self {
            workers: 1,
            pair_log: None,
            collect_pairs: false,
        }
    }
}

struct SceneResult {
    scene_id: String,
    checksum: String,
    annotations: Vec<ViewpointAnnotation>,
}

fn process_scene<S: SceneSource>(source: &S, cfg: &GenConfig) -> Result<SceneResult> {
    let scene = source.load()?;
    scene.validate()?;
    if scene.scene_id() != source.scene_id() {
        return Err(Error::InvalidScene {
            scene: source.scene_id().into(),
            msg: format!("bundle declares scene id {}", scene.scene_id()),
        });
    }
    let seed = derive_seed(cfg.seed, scene.scene_id());
    let views = if scene.trajectory().is_empty() {
        Vec::new()
    } else {
        select_viewpoints(
            scene.trajectory(),
            cfg.viewpoints_per_scene,
            cfg.viewpoint_strategy,
            seed,
        )?
    };
    let annotations = views
        .par_iter()
        .map(|(vid, pose)| annotate_viewpoint_with_pairs(&scene, *vid, pose, cfg))
        .collect();
    Ok(SceneResult {
        scene_id: scene.scene_id().to_string(),
        checksum: scene.checksum(),
        annotations,
    })
}

/// Annotates every scene and streams samples to `sink` in canonical order.
/// Output is independent of the worker count.
pub fn generate_dataset<S: SceneSource>(
    sources: &[S],
    cfg: &GenConfig,
    sink: &mut DatasetWriter,
    mut opts: GenerateOptions<'_>,
) -> Result<GenerationReport> {
    cfg.validate()?;
    let mut order: Vec<&S> = sources.iter().collect();
    order.sort_by(|a, b| a.scene_id().cmp(b.scene_id()));
    if let Some(w) = order
        .windows(2)
        .find(|w| w[0].scene_id() == w[1].scene_id())
    {
        return Err(Error::InvalidConfig(format!(
            "duplicate scene id {}",
            w[0].scene_id()
        )));
    }
    let excluded: BTreeSet<&str> = cfg.exclude_scenes.iter().map(String::as_str).collect();
    let mut report = GenerationReport::default();
    let (kept, dropped): (Vec<&S>, Vec<&S>) = order
        .into_iter()
        .partition(|s| !excluded.contains(s.scene_id()));
    report.excluded = dropped.iter().map(|s| s.scene_id().to_string()).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let chunk = opts.workers.max(1);
    for batch in kept.chunks(chunk) {
        let results: Vec<Result<SceneResult>> =
            pool.install(|| batch.par_iter().map(|s| process_scene(*s, cfg)).collect());
        for (source, result) in batch.iter().zip(results) {
            let result = match result {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("skipping scene {}: {e}", source.scene_id());
                    report.skipped.push(SkippedScene {
                        scene_id: source.scene_id().to_string(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let mut scene_samples = 0u64;
            for ann in result.annotations {
                for s in &ann.samples {
                    sink.push(s)?;
                    report.stats.add(s.relation_set);
                    scene_samples += 1;
                }
                if let Some(w) = opts.pair_log.as_mut() {
                    let line = serde_json::to_string(&ann.pairs)?;
                    writeln!(w, "{line}").map_err(|e| Error::io("pair log", e))?;
                }
                if opts.collect_pairs {
                    report.pair_counts.push(ann.pairs);
                }
            }
            log::info!("{}: {} samples", result.scene_id, scene_samples);
            report.scenes.push(SceneEntry {
                scene_id: result.scene_id,
                checksum: result.checksum,
                samples: scene_samples,
            });
        }
    }
    Ok(report)
}

/// Per-category sample counts of a written dataset.
pub fn compute_stats(dataset_dir: &Path) -> Result<StatsTable> {
    let (_, samples) = read_samples(dataset_dir)?;
    let mut stats = StatsTable::default();
    for s in &samples {
        stats.add(s.relation_set);
    }
    Ok(stats)
}

/// A broken sample invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub sample_id: String,
    pub message: String,
}

/// Re-derives a sample from geometry and reports every invariant it breaks.
pub fn validate_sample(sample: &Sample, scene: &SceneBundle, cfg: &GenConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut fail = |m: String| {
        out.push(Violation {
            sample_id: sample.sample_id.clone(),
            message: m,
        })
    };
    if sample.scene_id != scene.scene_id() {
        fail(format!(
            "scene {} does not match {}",
            scene.scene_id(),
            sample.scene_id
        ));
        return out;
    }
    if sample.sample_id
        != sample_id(
            &sample.scene_id,
            sample.viewpoint_id,
            sample.anchor_id,
            sample.relation_set,
        )
    {
        fail("sample_id is not the content hash".into());
    }
    match scene.trajectory().get(sample.viewpoint_id) {
        Some(p) if *p == sample.pose => {}
        _ => fail(format!(
            "pose does not match trajectory frame {}",
            sample.viewpoint_id
        )),
    }
    if sample.target_ids.is_empty() {
        fail("no targets".into());
    }
    if sample.target_ids.contains(&sample.anchor_id) {
        fail("anchor is among the targets".into());
    }
    match scene.instance(sample.anchor_id) {
        Ok(m) if m.label != sample.anchor_label => fail("anchor label mismatch".into()),
        Err(_) => {
            fail(format!("unknown anchor {}", sample.anchor_id));
            return out;
        }
        _ => {}
    }
    let ctx = ViewContext::new(scene, &sample.pose, cfg);
    for id in std::iter::once(&sample.anchor_id).chain(&sample.target_ids) {
        if !ctx.eligible.contains(id) {
            fail(format!(
                "instance {id} is not a visible eligible object at this viewpoint"
            ));
        }
    }
    for &t in &sample.target_ids {
        if t == sample.anchor_id {
            continue;
        }
        match ctx.mask(t, sample.anchor_id) {
            Ok(m) => {
                for r in sample.relation_set.labels() {
                    if m & (1 << r as u8) == 0 {
                        fail(format!(
                            "target {t} is not {r} of anchor {}",
                            sample.anchor_id
                        ));
                    }
                }
            }
            Err(e) => fail(e.to_string()),
        }
    }
    if let Ok(expected) = ctx.targets(sample.anchor_id, sample.relation_set) {
        if expected != sample.target_ids {
            fail(format!(
                "target set {:?} differs from geometry {:?}",
                sample.target_ids, expected
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::geometry::{Axis, Vec3};
    use crate::relations::relations_between;
    use crate::scene::SceneParts;

    fn poses(n: usize) -> Vec<CameraPose> {
        (0..n)
            .map(|i| CameraPose::translation_only(Vec3::new(i as f64, 0.0, 0.0)))
            .collect()
    }

    #[test]
    fn uniform_stride_examples() {
        let t = poses(100);
        let idx: Vec<usize> = select_viewpoints(&t, 10, ViewpointStrategy::UniformStride, 0)
            .unwrap()
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        assert_eq!(idx, vec![0, 11, 22, 33, 44, 55, 66, 77, 88, 99]);
        let one = select_viewpoints(&t, 1, ViewpointStrategy::UniformStride, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].0, 0);
        assert_eq!(
            select_viewpoints(&poses(3), 10, ViewpointStrategy::UniformStride, 0)
                .unwrap()
                .len(),
            3
        );
        assert!(select_viewpoints(&[], 3, ViewpointStrategy::UniformStride, 0).is_err());
    }

    #[test]
    fn random_strategy_is_seeded() {
        let t = poses(50);
        let a = select_viewpoints(&t, 7, ViewpointStrategy::Random, 9).unwrap();
        let b = select_viewpoints(&t, 7, ViewpointStrategy::Random, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0].0 < w[1].0));
    }

    /// Axis-aligned box corners plus face centers, as instance points.
    fn box_points(lo: [f32; 3], hi: [f32; 3]) -> Vec<[f32; 3]> {
        let mut v = Vec::new();
        for k in 0..8u32 {
            v.push([
                if k & 1 == 0 { lo[0] } else { hi[0] },
                if k & 2 == 0 { lo[1] } else { hi[1] },
                if k & 4 == 0 { lo[2] } else { hi[2] },
            ]);
        }
        // dense-ish front face so the frustum/occlusion fractions are comfortable
        for i in 0..=10 {
            for j in 0..=10 {
                let x = lo[0] + (hi[0] - lo[0]) * i as f32 / 10.0;
                let z = lo[2] + (hi[2] - lo[2]) * j as f32 / 10.0;
                v.push([x, lo[1], z]);
            }
        }
        v
    }

    /// Objects laid out in front of a camera at the origin looking along +Y.
    fn layout(objects: &[(u32, &str, [f32; 3], [f32; 3])]) -> (SceneBundle, CameraPose) {
        let mut positions = Vec::new();
        let mut point_instance = Vec::new();
        let mut labels = BTreeMap::new();
        for (id, label, lo, hi) in objects {
            let pts = box_points(*lo, *hi);
            point_instance.extend(std::iter::repeat_n(Some(*id), pts.len()));
            positions.extend(pts);
            labels.insert(*id, label.to_string());
        }
        let n = positions.len();
        let pose = CameraPose::look_at(
            Vec3::new(0.0, 0.0, 0.5),
            Vec3::new(0.0, 1.0, 0.5),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let scene = SceneBundle::from_parts(SceneParts {
            scene_id: "fixture".into(),
            positions,
            colors: vec![[0; 3]; n],
            point_instance,
            labels,
            up_axis: Axis::Z,
            trajectory: vec![pose],
            background_labels: vec![],
        })
        .unwrap();
        (scene, pose)
    }

    #[test]
    fn two_object_fixture_yields_two_samples() {
        // chair (id 1) to the left of the table (id 2), same depth and height
        let (scene, pose) = layout(&[
            (1, "chair", [-1.2, 4.0, 0.0], [-0.6, 4.5, 0.8]),
            (2, "table", [0.2, 4.0, 0.0], [1.2, 4.6, 0.8]),
        ]);
        let cfg = GenConfig::default();
        let samples = annotate_viewpoint(&scene, 0, &pose, &cfg);
        let got: Vec<(u32, String, Vec<u32>)> = samples
            .iter()
            .map(|s| {
                (
                    s.anchor_id,
                    s.relation_set.to_string(),
                    s.target_ids.clone(),
                )
            })
            .collect();
        assert_eq!(
            got,
            vec![
                (1, "right".to_string(), vec![2]),
                (2, "left".to_string(), vec![1])
            ]
        );
        assert_eq!(samples[1].anchor_label, "table");
    }

    #[test]
    fn inclusive_semantics_for_composite_relations() {
        // target is left of and in front of the anchor, residual gaps below tau
        let (scene, pose) = layout(&[
            (1, "lamp", [-1.0, 3.0, 0.0], [-0.5, 3.4, 0.8]),
            (2, "desk", [-0.2, 3.7, 0.0], [0.8, 4.2, 0.8]),
        ]);
        let cfg = GenConfig::default();
        let ctx = ViewContext::new(&scene, &pose, &cfg);
        assert_eq!(ctx.eligible, vec![1, 2]);
        let rel =
            relations_between(ctx.boxes(1).unwrap(), ctx.boxes(2).unwrap(), &ctx.relation).unwrap();
        assert_eq!(
            rel,
            BTreeSet::from([RelationLabel::Left, RelationLabel::Front])
        );

        let samples = annotate_viewpoint(&scene, 0, &pose, &cfg);
        let for_desk: Vec<String> = samples
            .iter()
            .filter(|s| s.anchor_id == 2)
            .map(|s| s.relation_set.to_string())
            .collect();
        assert_eq!(for_desk, vec!["left", "front", "left, front"]);
        assert!(samples
            .iter()
            .filter(|s| s.anchor_id == 2)
            .all(|s| s.target_ids == vec![1]));
    }

    #[test]
    fn empty_viewpoint() {
        let (scene, _) = layout(&[(1, "box", [0.0, 3.0, 0.0], [1.0, 4.0, 1.0])]);
        let away = CameraPose::look_at(
            Vec3::new(0.0, 0.0, 0.5),
            Vec3::new(0.0, -1.0, 0.5),
            Vec3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let cfg = GenConfig::default();
        assert!(annotate_viewpoint(&scene, 0, &away, &cfg).is_empty());
        // a single visible instance has nothing to relate to
        assert!(annotate_viewpoint(&scene, 0, &scene.trajectory()[0], &cfg).is_empty());
    }

    #[test]
    fn small_instances_excluded_from_anchors() {
        let (scene, pose) = layout(&[
            (1, "chair", [-1.2, 4.0, 0.0], [-0.6, 4.5, 0.8]),
            (2, "table", [0.2, 4.0, 0.0], [1.2, 4.6, 0.8]),
        ]);
        let cfg = GenConfig {
            min_instance_points: 10_000,
            ..Default::default()
        };
        let ctx = ViewContext::new(&scene, &pose, &cfg);
        assert_eq!(ctx.visible.len(), 2);
        assert!(ctx.eligible.is_empty());
        assert!(annotate_viewpoint(&scene, 0, &pose, &cfg).is_empty());
    }

    #[test]
    fn validation_catches_corruption() {
        let (scene, pose) = layout(&[
            (1, "chair", [-1.2, 4.0, 0.0], [-0.6, 4.5, 0.8]),
            (2, "table", [0.2, 4.0, 0.0], [1.2, 4.6, 0.8]),
        ]);
        let cfg = GenConfig::default();
        let samples = annotate_viewpoint(&scene, 0, &pose, &cfg);
        for s in &samples {
            assert!(validate_sample(s, &scene, &cfg).is_empty());
        }
        let mut bad = samples[0].clone();
        bad.target_ids = vec![1];
        assert!(!validate_sample(&bad, &scene, &cfg).is_empty());
    }

    #[test]
    fn stats_counting() {
        use RelationLabel::*;
        let mut st = StatsTable::default();
        st.add(RelationSet::single(Left));
        st.add(RelationSet::single(Left));
        st.add(RelationSet::from_labels(&[Right, Behind]).unwrap());
        assert_eq!(st.count(RelationSet::single(Left)), 2);
        assert_eq!(
            st.count(RelationSet::from_labels(&[Right, Behind]).unwrap()),
            1
        );
        assert_eq!(st.total(), 3);
        assert!(st.is_consistent());
        assert_eq!(st.rows().count(), 26);
    }
}
