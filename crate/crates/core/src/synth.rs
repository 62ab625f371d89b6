//! Procedural rooms: box-shaped furniture with surface-sampled points, floor
//! and wall sheets, and a camera trajectory around the room center.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Axis, CameraPose, Vec3};
use crate::relations::RelationLabel;
use crate::sampler::{GenConfig, ViewContext};
use crate::scene::{InstanceId, SceneBundle, SceneParts};
use crate::util::derive_seed;
use crate::visibility::{visible_instances, Intrinsics, VisibilityConfig};

pub const FURNITURE: [&str; 20] = [
    "chair",
    "table",
    "sofa",
    "bed",
    "desk",
    "cabinet",
    "bookshelf",
    "lamp",
    "dresser",
    "nightstand",
    "armchair",
    "stool",
    "bench",
    "tv stand",
    "wardrobe",
    "ottoman",
    "plant",
    "box",
    "shelf",
    "trash can",
];

const MAX_PLACEMENT_TRIES: usize = 2_000;
const MAX_ROOM_ATTEMPTS: usize = 16;
const CLEARANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PoseStrategy {
    #[default]
    Orbit,
    TrajectoryWalk,
}

impl std::str::FromStr for PoseStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "trajectory-walk" => Ok(Self::TrajectoryWalk),
            _ => Err(Error::InvalidConfig(format!("unknown pose strategy {s:?}"))),
        }
    }
}

/// A box at a fixed position, placed before any random ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedInstance {
    /// Footprint center `(x, y)`; the box stands on the floor unless `base` is set.
    pub center: [f64; 2],
    pub size: [f64; 3],
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub scene_id: Option<String>,
    /// Width (x), depth (y) and height (z), centered on the origin with the floor at z = 0.
    pub room: [f64; 3],
    pub n_instances: usize,
    pub points_per_instance: usize,
    pub size_min: f64,
    pub size_max: f64,
    /// Objects are placed with footprint centers inside `|x|, |y| <= placement_half_extent`.
    pub placement_half_extent: f64,
    /// Points per square meter on floor and walls.
    pub background_density: f64,
    pub pose_count: usize,
    pub pose_strategy: PoseStrategy,
    pub orbit_radius: f64,
    pub eye_height: f64,
    pub forced: Vec<ForcedInstance>,
    /// Regenerate until every object is visible from some trajectory pose.
    pub require_visible: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_id: None,
            room: [10.0, 10.0, 3.0],
            n_instances: 12,
            points_per_instance: 400,
            size_min: 0.3,
            size_max: 1.0,
            placement_half_extent: 2.5,
            background_density: 20.0,
            pose_count: 50,
            pose_strategy: PoseStrategy::Orbit,
            orbit_radius: 4.2,
            eye_height: 1.5,
            forced: Vec::new(),
            require_visible: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_instances == 0 || self.n_instances < self.forced.len() {
            return bad("n_instances must be at least 1 and cover the forced placements");
        }
        if self.room.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("room extents must be positive");
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max && self.size_max < self.room[2])
        {
            return bad("size range must satisfy 0 < size_min <= size_max < room height");
        }
        if self.points_per_instance < 8 {
            return bad("points_per_instance must be at least 8");
        }
        if !(self.background_density >= 0.0) {
            return bad("background_density must be non-negative");
        }
        let half = self.room[0].min(self.room[1]) / 2.0;
        if !(self.placement_half_extent > 0.0 && self.placement_half_extent < half) {
            return bad("placement_half_extent must lie inside the room");
        }
        if !(self.orbit_radius > 0.0 && self.orbit_radius < half) {
            return bad("orbit_radius must lie inside the room");
        }
        if !(self.eye_height > 0.0 && self.eye_height < self.room[2]) {
            return bad("eye_height must lie between floor and ceiling");
        }
        if self.pose_count == 0 {
            return bad("pose_count must be at least 1");
        }
        Ok(())
    }

    fn scene_name(&self) -> String {
        self.scene_id
            .clone()
            .unwrap_or_else(|| format!("synth_{}", self.seed))
    }
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Placed {
    fn clashes(&self, o: &Placed) -> bool {
        (0..3).all(|k| self.lo[k] < o.hi[k] + CLEARANCE && o.lo[k] < self.hi[k] + CLEARANCE)
    }
}

fn sample_box_surface(rng: &mut ChaCha8Rng, b: &Placed, n: usize, out: &mut Vec<[f32; 3]>) {
    let d = [b.hi[0] - b.lo[0], b.hi[1] - b.lo[1], b.hi[2] - b.lo[2]];
    let areas = [
        d[1] * d[2],
        d[1] * d[2],
        d[0] * d[2],
        d[0] * d[2],
        d[0] * d[1],
        d[0] * d[1],
    ];
    let total: f64 = areas.iter().sum();
    // the eight corners pin the extents exactly
    for k in 0..8 {
        out.push([
            (if k & 1 == 0 { b.lo[0] } else { b.hi[0] }) as f32,
            (if k & 2 == 0 { b.lo[1] } else { b.hi[1] }) as f32,
            (if k & 4 == 0 { b.lo[2] } else { b.hi[2] }) as f32,
        ]);
    }
    for _ in 8..n {
        let mut pick = rng.gen::<f64>() * total;
        let mut face = 5;
        for (f, a) in areas.iter().enumerate() {
            if pick < *a {
                face = f;
                break;
            }
            pick -= a;
        }
        let axis = face / 2;
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = if k == axis {
                if face % 2 == 0 {
                    b.lo[k]
                } else {
                    b.hi[k]
                }
            } else {
                rng.gen_range(b.lo[k]..=b.hi[k])
            };
        }
        out.push([p[0] as f32, p[1] as f32, p[2] as f32]);
    }
}

fn sample_rect(
    rng: &mut ChaCha8Rng,
    n: usize,
    f: impl Fn(f64, f64) -> [f64; 3],
    out: &mut Vec<[f32; 3]>,
) {
    for _ in 0..n {
        let p = f(rng.gen(), rng.gen());
        out.push([p[0] as f32, p[1] as f32, p[2] as f32]);
    }
}

fn level_look_at(eye: Vec3, target: Vec3) -> CameraPose {
    CameraPose::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0))
        .expect("level camera has a horizontal view direction")
}

/// Camera on the orbit ring at `angle`, looking at the room center at eye height.
pub fn orbit_pose(cfg: &SynthConfig, angle: f64) -> CameraPose {
    let eye = Vec3::new(
        cfg.orbit_radius * angle.cos(),
        cfg.orbit_radius * angle.sin(),
        cfg.eye_height,
    );
    level_look_at(eye, Vec3::new(0.0, 0.0, cfg.eye_height))
}

fn make_trajectory(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<CameraPose> {
    let n = cfg.pose_count;
    let phase = rng.gen::<f64>() * TAU;
    (0..n)
        .map(|i| {
            let base = phase + TAU * i as f64 / n as f64;
            match cfg.pose_strategy {
                PoseStrategy::Orbit => orbit_pose(cfg, base),
                PoseStrategy::TrajectoryWalk => {
                    let a = base + rng.gen_range(-0.5..0.5) * TAU / n as f64;
                    let r = cfg.orbit_radius * rng.gen_range(0.85..1.0);
                    let h =
                        (cfg.eye_height + rng.gen_range(-0.2..0.2)).clamp(0.1, cfg.room[2] - 0.1);
                    let eye = Vec3::new(r * a.cos(), r * a.sin(), h);
                    let yaw: f64 = rng.gen_range(-0.25..0.25);
                    let to_center = Vec3::new(-a.cos(), -a.sin(), 0.0);
                    let dir = Vec3::new(
                        to_center.x * yaw.cos() - to_center.y * yaw.sin(),
                        to_center.x * yaw.sin() + to_center.y * yaw.cos(),
                        rng.gen_range(-0.15..0.05),
                    );
                    level_look_at(eye, eye + dir)
                }
            }
        })
        .collect()
}

fn try_make_room(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SceneBundle> {
    let [w, d, h] = cfg.room;
    let mut placed: Vec<Placed> = Vec::new();
    let mut labels: BTreeMap<InstanceId, String> = BTreeMap::new();

    for f in &cfg.forced {
        let b = Placed {
            lo: [
                f.center[0] - f.size[0] / 2.0,
                f.center[1] - f.size[1] / 2.0,
                f.base,
            ],
            hi: [
                f.center[0] + f.size[0] / 2.0,
                f.center[1] + f.size[1] / 2.0,
                f.base + f.size[2],
            ],
        };
        if placed.iter().any(|p| p.clashes(&b)) {
            return Err(Error::InvalidConfig("forced placements overlap".into()));
        }
        let label = f
            .label
            .clone()
            .unwrap_or_else(|| FURNITURE.choose(rng).expect("non-empty").to_string());
        placed.push(b);
        labels.insert(placed.len() as InstanceId, label);
    }

    let ext = cfg.placement_half_extent;
    while placed.len() < cfg.n_instances {
        let mut ok = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let s: [f64; 3] = std::array::from_fn(|_| rng.gen_range(cfg.size_min..=cfg.size_max));
            let cx = rng.gen_range(-ext..=ext);
            let cy = rng.gen_range(-ext..=ext);
            let base = rng.gen_range(0.0..=(h - s[2]));
            let b = Placed {
                lo: [cx - s[0] / 2.0, cy - s[1] / 2.0, base],
                hi: [cx + s[0] / 2.0, cy + s[1] / 2.0, base + s[2]],
            };
            if !placed.iter().any(|p| p.clashes(&b)) {
                ok = Some(b);
                break;
            }
        }
        let Some(b) = ok else {
            return Err(Error::Capacity {
                placed: placed.len(),
                requested: cfg.n_instances,
            });
        };
        placed.push(b);
        let label = FURNITURE.choose(rng).expect("non-empty").to_string();
        labels.insert(placed.len() as InstanceId, label);
    }

    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut point_instance = Vec::new();
    for (k, b) in placed.iter().enumerate() {
        let before = positions.len();
        sample_box_surface(rng, b, cfg.points_per_instance, &mut positions);
        let color: [u8; 3] = rng.gen();
        let added = positions.len() - before;
        colors.extend(std::iter::repeat_n(color, added));
        point_instance.extend(std::iter::repeat_n(Some(k as InstanceId + 1), added));
    }

    let mut next_id = cfg.n_instances as InstanceId + 1;
    let dens = cfg.background_density;
    let (hw, hd) = (w / 2.0, d / 2.0);
    let mut sheet =
        |label: &str, area: f64, f: &dyn Fn(f64, f64) -> [f64; 3], rng: &mut ChaCha8Rng| {
            let n = (dens * area).round() as usize;
            if n == 0 {
                return;
            }
            sample_rect(rng, n, f, &mut positions);
            colors.extend(std::iter::repeat_n([128, 128, 128], n));
            point_instance.extend(std::iter::repeat_n(Some(next_id), n));
            labels.insert(next_id, label.to_string());
            next_id += 1;
        };
    sheet("floor", w * d, &|u, v| [-hw + u * w, -hd + v * d, 0.0], rng);
    sheet("wall", d * h, &|u, v| [-hw, -hd + u * d, v * h], rng);
    sheet("wall", d * h, &|u, v| [hw, -hd + u * d, v * h], rng);
    sheet("wall", w * h, &|u, v| [-hw + u * w, -hd, v * h], rng);
    sheet("wall", w * h, &|u, v| [-hw + u * w, hd, v * h], rng);

    let trajectory = make_trajectory(cfg, rng);
    SceneBundle::from_parts(SceneParts {
        scene_id: cfg.scene_name(),
        positions,
        colors,
        point_instance,
        labels,
        up_axis: Axis::Z,
        trajectory,
        background_labels: vec!["floor".into(), "wall".into(), "ceiling".into()],
    })
}

/// Foreground instances not visible from any trajectory pose.
pub fn unseen_instances(
    scene: &SceneBundle,
    intr: &Intrinsics,
    vis: &VisibilityConfig,
) -> BTreeSet<InstanceId> {
    let mut unseen = scene.foreground_ids();
    for pose in scene.trajectory() {
        if unseen.is_empty() {
            break;
        }
        for id in visible_instances(scene, pose, intr, vis) {
            unseen.remove(&id);
        }
    }
    unseen
}

/// Generates one room. The result depends only on `cfg`.
pub fn make_room(cfg: &SynthConfig) -> Result<SceneBundle> {
    cfg.validate()?;
    let mut last = None;
    for attempt in 0..MAX_ROOM_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("room/{attempt}")));
        let scene = try_make_room(cfg, &mut rng)?;
        if !cfg.require_visible {
            return Ok(scene);
        }
        let unseen = unseen_instances(&scene, &Intrinsics::default(), &VisibilityConfig::default());
        if unseen.is_empty() {
            return Ok(scene);
        }
        log::debug!(
            "{}: attempt {attempt} leaves {unseen:?} unseen",
            scene.scene_id()
        );
        last = Some(unseen.len());
    }
    Err(Error::InvalidConfig(format!(
        "no layout with every object visible after {MAX_ROOM_ATTEMPTS} attempts ({} unseen); \
         increase pose_count or reduce n_instances",
        last.unwrap_or(0)
    )))
}

/// Config of the `i`-th corpus scene: id `synth_{i:04}`, seed derived from `cfg.seed`.
pub fn corpus_member(cfg: &SynthConfig, i: usize) -> SynthConfig {
    SynthConfig {
        seed: derive_seed(cfg.seed, &format!("scene/{i}")),
        scene_id: Some(format!("synth_{i:04}")),
        ..cfg.clone()
    }
}

pub fn make_corpus(cfg: &SynthConfig, count: usize) -> Result<Vec<SceneBundle>> {
    (0..count)
        .into_par_iter()
        .map(|i| make_room(&corpus_member(cfg, i)))
        .collect()
}

/// Opposed-pair scenes for a corpus; each trajectory is `[pose_a, pose_b]`.
pub fn make_opposed_corpus(cfg: &SynthConfig, count: usize) -> Result<Vec<SceneBundle>> {
    (0..count)
        .into_par_iter()
        .map(|i| make_opposed_pair(&corpus_member(cfg, i)).map(|(s, _, _)| s))
        .collect()
}

/// A room plus two level poses facing each other across the room center.
/// The scene's trajectory is `[pose_a, pose_b]`; from `pose_a` at least one
/// pair of visible objects stands in a Left relation.
pub fn make_opposed_pair(cfg: &SynthConfig) -> Result<(SceneBundle, CameraPose, CameraPose)> {
    cfg.validate()?;
    let gen = GenConfig::default();
    const YAW_STEPS: usize = 24;
    for attempt in 0..MAX_ROOM_ATTEMPTS {
        let room_cfg = SynthConfig {
            seed: derive_seed(cfg.seed, &format!("pair/{attempt}")),
            scene_id: Some(cfg.scene_name()),
            ..cfg.clone()
        };
        let scene = match make_room(&room_cfg) {
            Ok(s) => s,
            Err(Error::Capacity { .. }) if attempt + 1 < MAX_ROOM_ATTEMPTS => continue,
            Err(e) => return Err(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(room_cfg.seed);
        let phase = rng.gen::<f64>() * TAU;
        for step in 0..YAW_STEPS {
            let yaw = phase + TAU * step as f64 / YAW_STEPS as f64;
            let a = orbit_pose(cfg, yaw);
            let ctx = ViewContext::new(&scene, &a, &gen);
            let left_bit = RelationLabel::Left.bit();
            let found = ctx.eligible.iter().any(|&t| {
                ctx.eligible
                    .iter()
                    .any(|&o| o != t && ctx.mask(t, o).is_ok_and(|m| m & left_bit != 0))
            });
            if found {
                let b = orbit_pose(cfg, yaw + PI);
                return Ok((scene.with_trajectory(vec![a, b]), a, b));
            }
        }
    }
    Err(Error::InvalidConfig(
        "no opposed pose pair separates any two objects; increase n_instances".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::relations_between;

    fn small() -> SynthConfig {
        SynthConfig {
            n_instances: 6,
            points_per_instance: 200,
            background_density: 5.0,
            pose_count: 12,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            seed: 42,
            ..small()
        };
        assert_eq!(make_room(&cfg).unwrap(), make_room(&cfg).unwrap());
        let other = make_room(&SynthConfig {
            seed: 43,
            ..small()
        })
        .unwrap();
        assert_ne!(make_room(&cfg).unwrap().positions(), other.positions());
    }

    #[test]
    fn structure_and_invariants() {
        let s = make_room(&SynthConfig { seed: 3, ..small() }).unwrap();
        s.validate().unwrap();
        assert_eq!(s.up_axis(), Axis::Z);
        assert_eq!(s.trajectory().len(), 12);
        assert_eq!(s.foreground_ids().len(), 6);
        assert_eq!(s.instances().iter().filter(|m| m.is_background).count(), 5);
        let fg: Vec<_> = s.instances().iter().filter(|m| !m.is_background).collect();
        for m in &fg {
            assert_eq!(m.point_count(), 200);
            assert!(FURNITURE.contains(&m.label.as_str()));
        }
        for (i, a) in fg.iter().enumerate() {
            for b in &fg[i + 1..] {
                assert_eq!(a.world_aabb.overlap_volume(&b.world_aabb), 0.0);
            }
        }
        assert!(
            unseen_instances(&s, &Intrinsics::default(), &VisibilityConfig::default()).is_empty()
        );
        // floor and walls occlude but are never reported
        let bg: BTreeSet<_> = s
            .instances()
            .iter()
            .filter(|m| m.is_background)
            .map(|m| m.id)
            .collect();
        for p in s.trajectory() {
            let v = visible_instances(&s, p, &Intrinsics::default(), &VisibilityConfig::default());
            assert!(v.is_disjoint(&bg));
        }
    }

    #[test]
    fn walk_trajectory_stays_in_room() {
        let s = make_room(&SynthConfig {
            seed: 8,
            pose_strategy: PoseStrategy::TrajectoryWalk,
            ..small()
        })
        .unwrap();
        for p in s.trajectory() {
            let c = p.center();
            assert!(c.x.abs() < 5.0 && c.y.abs() < 5.0 && c.z > 0.0 && c.z < 3.0);
        }
    }

    #[test]
    fn capacity_error() {
        let cfg = SynthConfig {
            n_instances: 400,
            size_min: 0.9,
            placement_half_extent: 1.0,
            ..small()
        };
        assert!(matches!(
            make_room(&cfg),
            Err(Error::Capacity { requested: 400, .. })
        ));
    }

    #[test]
    fn forced_pair_from_plus_y() {
        let cfg = SynthConfig {
            n_instances: 2,
            forced: vec![
                ForcedInstance {
                    center: [1.0, 0.0],
                    size: [0.6, 0.6, 0.8],
                    base: 0.0,
                    label: Some("table".into()),
                },
                ForcedInstance {
                    center: [-1.0, 0.0],
                    size: [0.6, 0.6, 0.8],
                    base: 0.0,
                    label: Some("chair".into()),
                },
            ],
            require_visible: false,
            ..small()
        };
        let s = make_room(&cfg).unwrap();
        // camera on +Y looking at the origin: +X world is camera left
        let pose = orbit_pose(&cfg, PI / 2.0);
        let rc = crate::relations::RelationConfig::default();
        let b1 = crate::relations::InstanceFrameBoxes::compute(&s, 1, &pose).unwrap();
        let b2 = crate::relations::InstanceFrameBoxes::compute(&s, 2, &pose).unwrap();
        assert_eq!(
            relations_between(&b1, &b2, &rc).unwrap(),
            BTreeSet::from([RelationLabel::Left])
        );
        assert_eq!(
            relations_between(&b2, &b1, &rc).unwrap(),
            BTreeSet::from([RelationLabel::Right])
        );
    }

    #[test]
    fn opposed_pair_flips_left_right() {
        let cfg = SynthConfig {
            seed: 11,
            ..small()
        };
        let (s, a, b) = make_opposed_pair(&cfg).unwrap();
        assert_eq!((s, a, b), make_opposed_pair(&cfg).unwrap());
        let (s, a, b) = make_opposed_pair(&cfg).unwrap();
        assert_eq!(s.trajectory(), &[a, b]);
        assert!((a.center().norm() - b.center().norm()).abs() < 1e-9);
        let rc = crate::relations::RelationConfig::default();
        let ids: Vec<_> = s.foreground_ids().into_iter().collect();
        let mut flipped = 0;
        for &t in &ids {
            for &o in &ids {
                if t == o {
                    continue;
                }
                let ra = relations_between(
                    &crate::relations::InstanceFrameBoxes::compute(&s, t, &a).unwrap(),
                    &crate::relations::InstanceFrameBoxes::compute(&s, o, &a).unwrap(),
                    &rc,
                )
                .unwrap();
                let rb = relations_between(
                    &crate::relations::InstanceFrameBoxes::compute(&s, t, &b).unwrap(),
                    &crate::relations::InstanceFrameBoxes::compute(&s, o, &b).unwrap(),
                    &rc,
                )
                .unwrap();
                assert_eq!(
                    ra.contains(&RelationLabel::Above),
                    rb.contains(&RelationLabel::Above)
                );
                assert_eq!(
                    ra.contains(&RelationLabel::Under),
                    rb.contains(&RelationLabel::Under)
                );
                if ra.contains(&RelationLabel::Left) {
                    assert!(rb.contains(&RelationLabel::Right));
                    flipped += 1;
                }
            }
        }
        assert!(flipped > 0);
    }
}
