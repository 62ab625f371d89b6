//! Frustum containment and point-splat occlusion tests for one camera pose.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Vec3};
use crate::scene::{InstanceId, SceneBundle};

/// Pinhole camera intrinsics plus depth clip range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 577.87,
            fy: 577.87,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            near: 0.1,
            far: 10.0,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig(
                "focal lengths must be positive".into(),
            ));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(Error::InvalidConfig("need 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(
                "image size must be at least 1×1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityConfig {
    /// Minimum fraction of an instance's points inside the frustum.
    pub theta_frustum: f64,
    /// Minimum fraction of in-frustum points that pass the depth test.
    pub theta_unoccluded: f64,
    /// Depth tolerance of the occlusion test, meters.
    pub delta_occ: f64,
    pub buffer_w: u32,
    pub buffer_h: u32,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            theta_frustum: 0.2,
            theta_unoccluded: 0.1,
            delta_occ: 0.1,
            buffer_w: 160,
            buffer_h: 120,
        }
    }
}

impl VisibilityConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.theta_frustum) || !unit.contains(&self.theta_unoccluded) {
            return Err(Error::InvalidConfig(
                "visibility fractions must lie in [0, 1]".into(),
            ));
        }
        if !(self.delta_occ > 0.0) {
            return Err(Error::InvalidConfig("delta_occ must be positive".into()));
        }
        if self.buffer_w == 0 || self.buffer_h == 0 {
            return Err(Error::InvalidConfig(
                "depth buffer must be at least 1×1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a camera-frame point; `None` when it falls outside the frustum.
#[inline]
pub fn project_point(intr: &Intrinsics, p_cam: Vec3) -> Option<Pixel> {
    let z = p_cam.z;
    if !(z > intr.near && z < intr.far) {
        return None;
    }
    let u = intr.fx * p_cam.x / z + intr.cx;
    let v = intr.fy * p_cam.y / z + intr.cy;
    if !(u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64) {
        return None;
    }
    Some(Pixel { u, v, depth: z })
}

/// Per-cell minimum camera depth; `+∞` marks empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    width: u32,
    height: u32,
    scale_u: f64,
    scale_v: f64,
    cells: Vec<f64>,
}

impl DepthBuffer {
    fn new(intr: &Intrinsics, cfg: &VisibilityConfig) -> Self {
        Self {
            width: cfg.buffer_w,
            height: cfg.buffer_h,
            scale_u: cfg.buffer_w as f64 / intr.width as f64,
            scale_v: cfg.buffer_h as f64 / intr.height as f64,
            cells: vec![f64::INFINITY; cfg.buffer_w as usize * cfg.buffer_h as usize],
        }
    }

    #[inline]
    pub fn cell_of(&self, px: &Pixel) -> usize {
        let cu = ((px.u * self.scale_u) as u32).min(self.width - 1);
        let cv = ((px.v * self.scale_v) as u32).min(self.height - 1);
        (cv * self.width + cu) as usize
    }

    #[inline]
    fn splat(&mut self, px: &Pixel) {
        let c = self.cell_of(px);
        if px.depth < self.cells[c] {
            self.cells[c] = px.depth;
        }
    }

    pub fn get(&self, cu: u32, cv: u32) -> f64 {
        self.cells[(cv * self.width + cu) as usize]
    }

    pub fn depth_at(&self, px: &Pixel) -> f64 {
        self.cells[self.cell_of(px)]
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// Camera-frame coordinates and projections of every scene point for one pose.
#[derive(Debug, Clone)]
pub struct ProjectedScene {
    pub cam: Vec<Vec3>,
    pub pixels: Vec<Option<Pixel>>,
}

impl ProjectedScene {
    pub fn new(scene: &SceneBundle, pose: &CameraPose, intr: &Intrinsics) -> Self {
        let cam: Vec<Vec3> = (0..scene.point_count())
            .map(|i| pose.world_to_camera(scene.position(i)))
            .collect();
        let pixels = cam.iter().map(|&p| project_point(intr, p)).collect();
        Self { cam, pixels }
    }

    pub fn depth_buffer(&self, intr: &Intrinsics, cfg: &VisibilityConfig) -> DepthBuffer {
        let mut buf = DepthBuffer::new(intr, cfg);
        for px in self.pixels.iter().flatten() {
            buf.splat(px);
        }
        buf
    }

    pub fn visible_instances(
        &self,
        scene: &SceneBundle,
        buffer: &DepthBuffer,
        cfg: &VisibilityConfig,
    ) -> BTreeSet<InstanceId> {
        scene
            .instances()
            .iter()
            .filter(|m| !m.is_background)
            .filter(|m| {
                let total = m.point_indices.len();
                let mut in_frustum = 0usize;
                let mut unoccluded = 0usize;
                for &i in &m.point_indices {
                    if let Some(px) = &self.pixels[i as usize] {
                        in_frustum += 1;
                        if px.depth <= buffer.depth_at(px) + cfg.delta_occ {
                            unoccluded += 1;
                        }
                    }
                }
                in_frustum > 0
                    && in_frustum as f64 >= cfg.theta_frustum * total as f64
                    && unoccluded as f64 >= cfg.theta_unoccluded * in_frustum as f64
            })
            .map(|m| m.id)
            .collect()
    }
}

pub fn build_depth_buffer(
    scene: &SceneBundle,
    pose: &CameraPose,
    intr: &Intrinsics,
    cfg: &VisibilityConfig,
) -> DepthBuffer {
    ProjectedScene::new(scene, pose, intr).depth_buffer(intr, cfg)
}

/// Non-background instances that are inside the frustum and not occluded.
pub fn visible_instances(
    scene: &SceneBundle,
    pose: &CameraPose,
    intr: &Intrinsics,
    cfg: &VisibilityConfig,
) -> BTreeSet<InstanceId> {
    let proj = ProjectedScene::new(scene, pose, intr);
    let buf = proj.depth_buffer(intr, cfg);
    proj.visible_instances(scene, &buf, cfg)
}
