//! Point-level mask scoring and the reference solvers.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rle_encode, PredictionMask, PredictionRecord, PredictionSet};
use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::relations::RelationSet;
use crate::sampler::{GenConfig, Sample, ViewContext};
use crate::scene::{InstanceId, SceneBundle};
use crate::util::derive_seed;

/// IoU of two sorted, de-duplicated index sets; 0 when both are empty.
pub fn iou(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn union_points(scene: &SceneBundle, ids: &[InstanceId]) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for &id in ids {
        out.extend_from_slice(&scene.instance(id)?.point_indices);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub iou: f64,
    pub relation_set: RelationSet,
    #[serde(default)]
    pub missing: bool,
}

impl SampleScore {
    pub fn missing(sample: &Sample) -> Self {
        Self {
            sample_id: sample.sample_id.clone(),
            iou: 0.0,
            relation_set: sample.relation_set,
            missing: true,
        }
    }
}

/// Maximum of the IoU against each target and against the union of targets.
pub fn sample_score(
    pred: &PredictionRecord,
    sample: &Sample,
    scene: &SceneBundle,
) -> Result<SampleScore> {
    if scene.scene_id() != sample.scene_id {
        return Err(Error::SceneMismatch {
            sample: sample.sample_id.clone(),
            scene: scene.scene_id().into(),
        });
    }
    if pred.sample_id != sample.sample_id {
        return Err(Error::InvalidConfig(format!(
            "prediction {} scored against sample {}",
            pred.sample_id, sample.sample_id
        )));
    }
    let p = pred.mask.to_points(scene)?;
    let mut best = iou(&p, &union_points(scene, &sample.target_ids)?);
    for &t in &sample.target_ids {
        best = best.max(iou(&p, &scene.instance(t)?.point_indices));
    }
    Ok(SampleScore {
        sample_id: sample.sample_id.clone(),
        iou: best,
        relation_set: sample.relation_set,
        missing: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryScore {
    pub count: u64,
    pub miou: f64,
    pub acc_25: f64,
    pub acc_50: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: u64,
    pub matched: u64,
    pub missing: u64,
    pub miou: f64,
    pub acc_25: f64,
    pub acc_50: f64,
    /// Keyed by relation category, in table order.
    pub per_category: BTreeMap<RelationSet, CategoryScore>,
    #[serde(default)]
    pub unknown_predictions: u64,
    #[serde(default)]
    pub duplicate_predictions: u64,
}

#[derive(Default)]
struct Acc {
    n: u64,
    sum: f64,
    over_25: u64,
    over_50: u64,
}

impl Acc {
    fn add(&mut self, s: f64) {
        self.n += 1;
        self.sum += s;
        self.over_25 += u64::from(s > 0.25);
        self.over_50 += u64::from(s > 0.5);
    }

    fn finish(&self) -> CategoryScore {
        if self.n == 0 {
            return CategoryScore::default();
        }
        let n = self.n as f64;
        CategoryScore {
            count: self.n,
            miou: self.sum / n,
            acc_25: self.over_25 as f64 / n,
            acc_50: self.over_50 as f64 / n,
        }
    }
}

/// Aggregates per-sample scores. Ids in `expected` without a score count
/// as missing with score 0. Result does not depend on the order of `scores`.
pub fn aggregate(
    scores: &[SampleScore],
    expected: &BTreeMap<String, RelationSet>,
) -> Result<EvalReport> {
    let mut by_id: BTreeMap<&str, &SampleScore> = BTreeMap::new();
    for s in scores {
        if by_id.insert(&s.sample_id, s).is_some() {
            return Err(Error::DuplicateSample(s.sample_id.clone()));
        }
    }
    let mut all = Acc::default();
    let mut cats: BTreeMap<RelationSet, Acc> = BTreeMap::new();
    let (mut matched, mut missing) = (0u64, 0u64);
    let mut visit = |set: RelationSet, score: Option<&SampleScore>| {
        let v = match score {
            Some(s) if !s.missing => {
                matched += 1;
                s.iou
            }
            _ => {
                missing += 1;
                0.0
            }
        };
        all.add(v);
        cats.entry(set).or_default().add(v);
    };
    // sum in id order so the floating-point result is order-independent
    for (id, &set) in expected {
        visit(set, by_id.get(id.as_str()).copied());
    }
    for (id, s) in &by_id {
        if !expected.contains_key(*id) {
            visit(s.relation_set, Some(s));
        }
    }
    let total = all.finish();
    Ok(EvalReport {
        total: all.n,
        matched,
        missing,
        miou: total.miou,
        acc_25: total.acc_25,
        acc_50: total.acc_50,
        per_category: cats.into_iter().map(|(k, v)| (k, v.finish())).collect(),
        unknown_predictions: 0,
        duplicate_predictions: 0,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>8} {:>8} {:>8} {:>8}",
            "Relation", "Count", "mIoU", "Acc@.25", "Acc@.50"
        )?;
        for (set, c) in &self.per_category {
            writeln!(
                f,
                "{:<24} {:>8} {:>8.4} {:>8.4} {:>8.4}",
                set.to_string(),
                c.count,
                c.miou,
                c.acc_25,
                c.acc_50
            )?;
        }
        writeln!(
            f,
            "{:<24} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            "Overall", self.total, self.miou, self.acc_25, self.acc_50
        )?;
        write!(
            f,
            "matched {}, missing {}, unknown {}, duplicate {}",
            self.matched, self.missing, self.unknown_predictions, self.duplicate_predictions
        )
    }
}

/// Scores every sample against `preds`. Scenes are looked up by id.
pub fn evaluate(
    samples: &[Sample],
    scenes: &HashMap<String, SceneBundle>,
    preds: &PredictionSet,
) -> Result<(EvalReport, Vec<SampleScore>)> {
    let scores: Vec<SampleScore> = samples
        .par_iter()
        .map(|s| match preds.records.get(&s.sample_id) {
            None => Ok(SampleScore::missing(s)),
            Some(p) => {
                let scene = scenes
                    .get(&s.scene_id)
                    .ok_or_else(|| Error::SceneMismatch {
                        sample: s.sample_id.clone(),
                        scene: s.scene_id.clone(),
                    })?;
                sample_score(p, s, scene)
            }
        })
        .collect::<Result<_>>()?;
    let expected = samples
        .iter()
        .map(|s| (s.sample_id.clone(), s.relation_set))
        .collect();
    let mut report = aggregate(&scores, &expected)?;
    report.unknown_predictions = preds.unknown.len() as u64;
    report.duplicate_predictions = preds.duplicates as u64;
    Ok((report, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Oracle,
    Blind,
    Random,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "blind" => Ok(Self::Blind),
            "random" => Ok(Self::Random),
            _ => Err(Error::InvalidConfig(format!("unknown solver {s:?}"))),
        }
    }
}

fn union_record(
    sample: &Sample,
    scene: &SceneBundle,
    ids: &[InstanceId],
) -> Result<PredictionRecord> {
    Ok(PredictionRecord {
        sample_id: sample.sample_id.clone(),
        mask: PredictionMask::Rle(rle_encode(&union_points(scene, ids)?)),
    })
}

fn canonical_pose(
    scene: &SceneBundle,
    pose: Option<&CameraPose>,
    frame: usize,
) -> Result<CameraPose> {
    match pose {
        Some(p) => Ok(*p),
        None => scene
            .trajectory()
            .get(frame)
            .copied()
            .ok_or_else(|| Error::InvalidScene {
                scene: scene.scene_id().into(),
                msg: format!("no trajectory frame {frame} for the canonical pose"),
            }),
    }
}

/// Recomputes the targets at the sample's pose and predicts their union.
pub fn oracle_solver(
    sample: &Sample,
    scene: &SceneBundle,
    cfg: &GenConfig,
) -> Result<PredictionRecord> {
    let ctx = ViewContext::new(scene, &sample.pose, cfg);
    oracle_with(&ctx, sample, scene)
}

fn oracle_with(
    ctx: &ViewContext<'_>,
    sample: &Sample,
    scene: &SceneBundle,
) -> Result<PredictionRecord> {
    union_record(
        sample,
        scene,
        &ctx.targets(sample.anchor_id, sample.relation_set)?,
    )
}

/// Like the oracle, but decides relations from `canonical` (default: the
/// scene's first trajectory pose) instead of the sample's pose. Candidates
/// are still the objects visible from the sample's pose.
pub fn blind_solver(
    sample: &Sample,
    scene: &SceneBundle,
    cfg: &GenConfig,
    canonical: Option<&CameraPose>,
) -> Result<PredictionRecord> {
    let truth = ViewContext::new(scene, &sample.pose, cfg);
    let canon = ViewContext::new(scene, &canonical_pose(scene, canonical, 0)?, cfg);
    blind_with(&truth, &canon, sample, scene)
}

fn blind_with(
    truth: &ViewContext<'_>,
    canon: &ViewContext<'_>,
    sample: &Sample,
    scene: &SceneBundle,
) -> Result<PredictionRecord> {
    let ids = canon.targets_among(&truth.eligible, sample.anchor_id, sample.relation_set)?;
    union_record(sample, scene, &ids)
}

/// Picks one visible object uniformly, seeded per sample.
pub fn random_solver(
    sample: &Sample,
    scene: &SceneBundle,
    cfg: &GenConfig,
    seed: u64,
) -> Result<PredictionRecord> {
    let ctx = ViewContext::new(scene, &sample.pose, cfg);
    random_with(&ctx, sample, scene, seed)
}

fn random_with(
    ctx: &ViewContext<'_>,
    sample: &Sample,
    scene: &SceneBundle,
    seed: u64,
) -> Result<PredictionRecord> {
    let pool: Vec<InstanceId> = if ctx.eligible.is_empty() {
        scene.foreground_ids().into_iter().collect()
    } else {
        ctx.eligible.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &sample.sample_id));
    let pick: Vec<InstanceId> = if pool.is_empty() {
        Vec::new()
    } else {
        vec![pool[rng.gen_range(0..pool.len())]]
    };
    Ok(PredictionRecord {
        sample_id: sample.sample_id.clone(),
        mask: PredictionMask::Instances(pick),
    })
}

#[derive(Debug, Clone, Default)]
pub struct SolverOptions {
    /// Blind solver only: one pose for every scene, overriding `canonical_frame`.
    pub canonical_pose: Option<CameraPose>,
    /// Blind solver only: trajectory frame of each scene used as its canonical pose.
    pub canonical_frame: usize,
    /// Random solver only.
    pub seed: u64,
}

/// Runs a solver over a whole dataset, sharing per-viewpoint geometry.
/// Records come back in sample order.
pub fn run_solver(
    solver: Solver,
    samples: &[Sample],
    scenes: &HashMap<String, SceneBundle>,
    cfg: &GenConfig,
    opts: &SolverOptions,
) -> Result<Vec<PredictionRecord>> {
    // contiguous runs of samples sharing (scene, viewpoint, pose)
    let mut groups: Vec<&[Sample]> = Vec::new();
    let mut start = 0;
    for i in 1..=samples.len() {
        let split = i == samples.len() || {
            let (a, b) = (&samples[i - 1], &samples[i]);
            a.scene_id != b.scene_id || a.viewpoint_id != b.viewpoint_id || a.pose != b.pose
        };
        if split {
            groups.push(&samples[start..i]);
            start = i;
        }
    }
    let out: Vec<Vec<PredictionRecord>> = groups
        .par_iter()
        .map(|group| {
            let first = &group[0];
            let scene = scenes
                .get(&first.scene_id)
                .ok_or_else(|| Error::SceneMismatch {
                    sample: first.sample_id.clone(),
                    scene: first.scene_id.clone(),
                })?;
            let truth = ViewContext::new(scene, &first.pose, cfg);
            let canon = match solver {
                Solver::Blind => Some(ViewContext::new(
                    scene,
                    &canonical_pose(scene, opts.canonical_pose.as_ref(), opts.canonical_frame)?,
                    cfg,
                )),
                _ => None,
            };
            group
                .iter()
                .map(|s| match solver {
                    Solver::Oracle => oracle_with(&truth, s, scene),
                    Solver::Blind => {
                        blind_with(&truth, canon.as_ref().expect("canonical context"), s, scene)
                    }
                    Solver::Random => random_with(&truth, s, scene, opts.seed),
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}
