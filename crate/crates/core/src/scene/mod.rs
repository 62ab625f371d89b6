//! Instance-labelled scene point clouds with their camera trajectories.

mod bundle;
mod scannet;

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{aabb_from_points, Aabb3, Axis, CameraPose, Vec3};

pub use bundle::{
    load_bundle, save_bundle, BundleManifest, BUNDLE_FORMAT_VERSION,
    MANIFEST_FILE as BUNDLE_MANIFEST_FILE,
};
pub use scannet::{convert_scannet, DEFAULT_BACKGROUND_LABELS};

pub type InstanceId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMeta {
    pub id: InstanceId,
    pub label: String,
    pub is_background: bool,
    pub point_indices: Vec<u32>,
    pub world_aabb: Aabb3,
}

impl InstanceMeta {
    pub fn point_count(&self) -> usize {
        self.point_indices.len()
    }
}

/// A validated, immutable scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    scene_id: String,
    positions: Vec<[f32; 3]>,
    colors: Vec<[u8; 3]>,
    point_instance: Vec<Option<InstanceId>>,
    instances: Vec<InstanceMeta>,
    up_axis: Axis,
    trajectory: Vec<CameraPose>,
    background_labels: Vec<String>,
}

/// Raw parts of a scene before validation.
#[derive(Debug, Clone)]
pub struct SceneParts {
    pub scene_id: String,
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub point_instance: Vec<Option<InstanceId>>,
    /// Semantic label per instance id.
    pub labels: BTreeMap<InstanceId, String>,
    pub up_axis: Axis,
    pub trajectory: Vec<CameraPose>,
    pub background_labels: Vec<String>,
}

pub fn is_background_label(label: &str, background: &[String]) -> bool {
    background.iter().any(|b| b.eq_ignore_ascii_case(label))
}

impl SceneBundle {
    pub fn from_parts(parts: SceneParts) -> Result<Self> {
        let SceneParts {
            scene_id,
            positions,
            colors,
            point_instance,
            labels,
            up_axis,
            trajectory,
            background_labels,
        } = parts;
        let n = positions.len();
        if colors.len() != n {
            return Err(Error::LengthMismatch {
                field: "colors",
                expected: n,
                found: colors.len(),
            });
        }
        if point_instance.len() != n {
            return Err(Error::LengthMismatch {
                field: "point_instance",
                expected: n,
                found: point_instance.len(),
            });
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidScene {
                scene: scene_id,
                msg: "more than 2^32 points".into(),
            });
        }
        if let Some(i) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidScene {
                scene: scene_id,
                msg: format!("point {i} has a non-finite coordinate"),
            });
        }

        let mut owned: BTreeMap<InstanceId, Vec<u32>> =
            labels.keys().map(|&id| (id, Vec::new())).collect();
        for (i, inst) in point_instance.iter().enumerate() {
            if let Some(id) = inst {
                owned
                    .get_mut(id)
                    .ok_or(Error::DanglingInstance {
                        point: i,
                        id: *id as i64,
                    })?
                    .push(i as u32);
            }
        }

        let mut instances = Vec::with_capacity(labels.len());
        for (id, label) in labels {
            let point_indices = owned.remove(&id).unwrap_or_default();
            if point_indices.is_empty() {
                return Err(Error::InvalidScene {
                    scene: scene_id,
                    msg: format!("instance {id} ({label}) owns no points"),
                });
            }
            let world_aabb = aabb_from_points(
                point_indices
                    .iter()
                    .map(|&i| Vec3::from_f32(positions[i as usize])),
            )?;
            instances.push(InstanceMeta {
                id,
                is_background: is_background_label(&label, &background_labels),
                label,
                point_indices,
                world_aabb,
            });
        }

        Ok(SceneBundle {
            scene_id,
            positions,
            colors,
            point_instance,
            instances,
            up_axis,
            trajectory,
            background_labels,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn point_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f32; 3]] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::from_f32(self.positions[i])
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn point_instance(&self) -> &[Option<InstanceId>] {
        &self.point_instance
    }

    /// Instances sorted by id.
    pub fn instances(&self) -> &[InstanceMeta] {
        &self.instances
    }

    pub fn instance(&self, id: InstanceId) -> Result<&InstanceMeta> {
        self.instances
            .binary_search_by_key(&id, |m| m.id)
            .map(|i| &self.instances[i])
            .map_err(|_| Error::UnknownInstance(id))
    }

    pub fn up_axis(&self) -> Axis {
        self.up_axis
    }

    pub fn trajectory(&self) -> &[CameraPose] {
        &self.trajectory
    }

    pub fn background_labels(&self) -> &[String] {
        &self.background_labels
    }

    /// Re-checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let labels = self
            .instances
            .iter()
            .map(|m| (m.id, m.label.clone()))
            .collect();
        let rebuilt = SceneBundle::from_parts(SceneParts {
            scene_id: self.scene_id.clone(),
            positions: self.positions.clone(),
            colors: self.colors.clone(),
            point_instance: self.point_instance.clone(),
            labels,
            up_axis: self.up_axis,
            trajectory: self.trajectory.clone(),
            background_labels: self.background_labels.clone(),
        })?;
        if rebuilt != *self {
            return Err(Error::InvalidScene {
                scene: self.scene_id.clone(),
                msg: "derived instance metadata is stale".into(),
            });
        }
        Ok(())
    }

    /// Ids of all non-background instances.
    pub fn foreground_ids(&self) -> BTreeSet<InstanceId> {
        self.instances
            .iter()
            .filter(|m| !m.is_background)
            .map(|m| m.id)
            .collect()
    }

    /// Copy of this scene keeping only the points for which `keep` returns true.
    /// Instances left without points are dropped.
    pub fn retain_points(&self, mut keep: impl FnMut(usize) -> bool) -> Result<SceneBundle> {
        let mut parts = SceneParts {
            scene_id: self.scene_id.clone(),
            positions: Vec::new(),
            colors: Vec::new(),
            point_instance: Vec::new(),
            labels: BTreeMap::new(),
            up_axis: self.up_axis,
            trajectory: self.trajectory.clone(),
            background_labels: self.background_labels.clone(),
        };
        for i in 0..self.point_count() {
            if keep(i) {
                parts.positions.push(self.positions[i]);
                parts.colors.push(self.colors[i]);
                parts.point_instance.push(self.point_instance[i]);
            }
        }
        let present: BTreeSet<InstanceId> =
            parts.point_instance.iter().flatten().copied().collect();
        parts.labels = self
            .instances
            .iter()
            .filter(|m| present.contains(&m.id))
            .map(|m| (m.id, m.label.clone()))
            .collect();
        SceneBundle::from_parts(parts)
    }

    /// Copy of this scene with a different trajectory.
    pub fn with_trajectory(&self, trajectory: Vec<CameraPose>) -> SceneBundle {
        SceneBundle {
            trajectory,
            ..self.clone()
        }
    }
}

/// Positions of the points owned by instance `id`, in point-index order.
pub fn instance_points(scene: &SceneBundle, id: InstanceId) -> Result<Vec<Vec3>> {
    let meta = scene.instance(id)?;
    Ok(meta
        .point_indices
        .iter()
        .map(|&i| scene.position(i as usize))
        .collect())
}
