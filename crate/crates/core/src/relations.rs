//! The six spatial relation predicates and the 26 relation-set categories.
//!
//! Left/Right and Front/Behind compare camera-frame boxes (strict separation
//! along `X_cam` or `Z_cam`, residual gaps below `tau` on the other two camera
//! axes). Above/Under compare world-frame boxes along the up axis, with the
//! two remaining world axes as residuals. All comparisons are strict.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{aabb_from_points, axis_gap, Aabb3, Axis, CameraPose, Vec3};
use crate::scene::{InstanceId, SceneBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationLabel {
    Left,
    Right,
    Front,
    Behind,
    Above,
    Under,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 6] = [
        RelationLabel::Left,
        RelationLabel::Right,
        RelationLabel::Front,
        RelationLabel::Behind,
        RelationLabel::Above,
        RelationLabel::Under,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationLabel::Left => "left",
            RelationLabel::Right => "right",
            RelationLabel::Front => "front",
            RelationLabel::Behind => "behind",
            RelationLabel::Above => "above",
            RelationLabel::Under => "under",
        }
    }

    /// The relation obtained by swapping target and anchor.
    pub fn converse(self) -> RelationLabel {
        match self {
            RelationLabel::Left => RelationLabel::Right,
            RelationLabel::Right => RelationLabel::Left,
            RelationLabel::Front => RelationLabel::Behind,
            RelationLabel::Behind => RelationLabel::Front,
            RelationLabel::Above => RelationLabel::Under,
            RelationLabel::Under => RelationLabel::Above,
        }
    }

    pub fn is_viewpoint_dependent(self) -> bool {
        !matches!(self, RelationLabel::Above | RelationLabel::Under)
    }

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationLabel::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown relation {s:?}")))
    }
}

const LR: u8 = 0b000011;
const FB: u8 = 0b001100;
const AU: u8 = 0b110000;

/// A non-empty combination of relations with at most one member from each
/// complementary pair. Exactly 26 such sets exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelationSet(u8);

impl RelationSet {
    pub fn from_mask(mask: u8) -> Result<Self> {
        let valid = mask != 0
            && mask & !0b111111 == 0
            && [LR, FB, AU].iter().all(|pair| mask & pair != *pair);
        if valid {
            Ok(RelationSet(mask))
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid relation set mask {mask:#08b}"
            )))
        }
    }

    pub fn from_labels(labels: &[RelationLabel]) -> Result<Self> {
        Self::from_mask(labels.iter().fold(0, |m, l| m | l.bit()))
    }

    pub fn single(label: RelationLabel) -> Self {
        RelationSet(label.bit())
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains(self, label: RelationLabel) -> bool {
        self.0 & label.bit() != 0
    }

    /// Members in canonical order.
    pub fn labels(self) -> impl Iterator<Item = RelationLabel> {
        RelationLabel::ALL
            .into_iter()
            .filter(move |l| self.contains(*l))
    }

    pub fn is_subset_of(self, other: RelationSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// True when every member is in the raw label mask.
    pub fn satisfied_by(self, mask: u8) -> bool {
        self.0 & !mask == 0
    }

    pub fn is_viewpoint_independent(self) -> bool {
        self.0 & !AU == 0
    }

    /// Position in [`valid_relation_sets`].
    pub fn category_index(self) -> usize {
        category_lookup()[self.0 as usize] as usize
    }
}

fn canonical_sets() -> &'static [RelationSet; 26] {
    static SETS: OnceLock<[RelationSet; 26]> = OnceLock::new();
    SETS.get_or_init(|| {
        let mut sets: Vec<RelationSet> = (1u8..64)
            .filter_map(|m| RelationSet::from_mask(m).ok())
            .collect();
        // size first, then lexicographic over the member positions
        sets.sort_by_key(|s| {
            let idx: Vec<u8> = s.labels().map(|l| l as u8).collect();
            (idx.len(), idx)
        });
        sets.try_into().expect("26 valid relation sets")
    })
}

fn category_lookup() -> &'static [u8; 64] {
    static LOOKUP: OnceLock<[u8; 64]> = OnceLock::new();
    LOOKUP.get_or_init(|| {
        let mut t = [u8::MAX; 64];
        for (i, s) in canonical_sets().iter().enumerate() {
            t[s.0 as usize] = i as u8;
        }
        t
    })
}

/// All 26 relation-set categories in canonical (table) order.
pub fn valid_relation_sets() -> &'static [RelationSet] {
    canonical_sets()
}

impl fmt::Display for RelationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.labels().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(l.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for RelationSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<Result<Vec<RelationLabel>>>()?;
        let set = RelationSet::from_labels(&labels)?;
        if set.len() != labels.len() || set.to_string() != s {
            return Err(Error::InvalidConfig(format!(
                "non-canonical relation set {s:?}"
            )));
        }
        Ok(set)
    }
}

impl PartialOrd for RelationSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RelationSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.category_index().cmp(&other.category_index())
    }
}

impl Serialize for RelationSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RelationSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationConfig {
    /// Maximum residual-axis gap, meters.
    pub tau: f64,
    pub up_axis: Axis,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            up_axis: Axis::Z,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Camera-frame and world-frame boxes of one instance at one viewpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceFrameBoxes {
    pub id: InstanceId,
    pub cam_box: Aabb3,
    pub world_box: Aabb3,
}

impl InstanceFrameBoxes {
    /// Recomputes the camera box from the instance's raw points.
    pub fn compute(scene: &SceneBundle, id: InstanceId, pose: &CameraPose) -> Result<Self> {
        let meta = scene.instance(id)?;
        let cam_box = aabb_from_points(
            meta.point_indices
                .iter()
                .map(|&i| pose.world_to_camera(scene.position(i as usize))),
        )?;
        Ok(Self {
            id,
            cam_box,
            world_box: meta.world_aabb,
        })
    }

    /// Same as [`compute`](Self::compute) using precomputed camera coordinates.
    pub fn from_camera_points(scene: &SceneBundle, id: InstanceId, cam: &[Vec3]) -> Result<Self> {
        let meta = scene.instance(id)?;
        let cam_box = aabb_from_points(meta.point_indices.iter().map(|&i| cam[i as usize]))?;
        Ok(Self {
            id,
            cam_box,
            world_box: meta.world_aabb,
        })
    }
}

#[inline]
fn separated_below(a: &Aabb3, b: &Aabb3, axis: Axis) -> bool {
    a.axis(axis).hi < b.axis(axis).lo
}

#[inline]
fn residuals_pass(a: &Aabb3, b: &Aabb3, axis: Axis, tau: f64) -> bool {
    axis.others().iter().all(|&o| axis_gap(a, b, o) < tau)
}

#[inline]
fn holds_unchecked(
    relation: RelationLabel,
    target: &InstanceFrameBoxes,
    anchor: &InstanceFrameBoxes,
    cfg: &RelationConfig,
) -> bool {
    let (t, a, axis, t_first) = match relation {
        RelationLabel::Left => (&target.cam_box, &anchor.cam_box, Axis::X, true),
        RelationLabel::Right => (&target.cam_box, &anchor.cam_box, Axis::X, false),
        RelationLabel::Front => (&target.cam_box, &anchor.cam_box, Axis::Z, true),
        RelationLabel::Behind => (&target.cam_box, &anchor.cam_box, Axis::Z, false),
        RelationLabel::Under => (&target.world_box, &anchor.world_box, cfg.up_axis, true),
        RelationLabel::Above => (&target.world_box, &anchor.world_box, cfg.up_axis, false),
    };
    let separated = if t_first {
        separated_below(t, a, axis)
    } else {
        separated_below(a, t, axis)
    };
    separated && residuals_pass(t, a, axis, cfg.tau)
}

/// Whether `relation` holds for `target` (as `o_i`) relative to `anchor` (as `o_j`).
pub fn holds(
    relation: RelationLabel,
    target: &InstanceFrameBoxes,
    anchor: &InstanceFrameBoxes,
    cfg: &RelationConfig,
) -> Result<bool> {
    if target.id == anchor.id {
        return Err(Error::SelfRelation(target.id));
    }
    Ok(holds_unchecked(relation, target, anchor, cfg))
}

/// Bitmask of every relation that holds, indexed by `RelationLabel as u8`.
pub(crate) fn relation_mask(
    target: &InstanceFrameBoxes,
    anchor: &InstanceFrameBoxes,
    cfg: &RelationConfig,
) -> u8 {
    RelationLabel::ALL
        .into_iter()
        .filter(|&r| holds_unchecked(r, target, anchor, cfg))
        .fold(0, |m, r| m | r.bit())
}

pub fn relations_between(
    target: &InstanceFrameBoxes,
    anchor: &InstanceFrameBoxes,
    cfg: &RelationConfig,
) -> Result<BTreeSet<RelationLabel>> {
    if target.id == anchor.id {
        return Err(Error::SelfRelation(target.id));
    }
    let mask = relation_mask(target, anchor, cfg);
    Ok(RelationLabel::ALL
        .into_iter()
        .filter(|l| mask & l.bit() != 0)
        .collect())
}

/// Independent re-derivation of [`holds`] from raw world points, for
/// differential testing. Streams the points once per instance and keeps
/// running extrema without building boxes.
pub fn pointwise_oracle(
    relation: RelationLabel,
    target_points_world: &[Vec3],
    anchor_points_world: &[Vec3],
    pose: &CameraPose,
    cfg: &RelationConfig,
) -> Result<bool> {
    if target_points_world.is_empty() || anchor_points_world.is_empty() {
        return Err(Error::EmptyGeometry("oracle needs non-empty point sets"));
    }
    let m = pose.matrix();
    let to_cam = |p: &Vec3| -> [f64; 3] {
        let d = [p.x - m[3], p.y - m[7], p.z - m[11]];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = m[c] * d[0] + m[4 + c] * d[1] + m[8 + c] * d[2];
        }
        out
    };
    let extrema = |pts: &[Vec3], camera: bool| -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in pts {
            let c = if camera { to_cam(p) } else { [p.x, p.y, p.z] };
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (lo, hi)
    };
    let camera = relation.is_viewpoint_dependent();
    let (t_lo, t_hi) = extrema(target_points_world, camera);
    let (a_lo, a_hi) = extrema(anchor_points_world, camera);

    let main = match relation {
        RelationLabel::Left | RelationLabel::Right => 0,
        RelationLabel::Front | RelationLabel::Behind => 2,
        RelationLabel::Above | RelationLabel::Under => match cfg.up_axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        },
    };
    let separated = match relation {
        RelationLabel::Left | RelationLabel::Front | RelationLabel::Under => {
            t_hi[main] < a_lo[main]
        }
        RelationLabel::Right | RelationLabel::Behind | RelationLabel::Above => {
            t_lo[main] > a_hi[main]
        }
    };
    let aligned = (0..3).filter(|&k| k != main).all(|k| {
        let gap = if t_hi[k] < a_lo[k] {
            a_lo[k] - t_hi[k]
        } else if a_hi[k] < t_lo[k] {
            t_lo[k] - a_hi[k]
        } else {
            0.0
        };
        gap < cfg.tau
    });
    Ok(separated && aligned)
}
