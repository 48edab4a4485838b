use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::datagen::ToolRecord;
use crate::geometry::{vec3, PointCloud, Vec3};
use crate::{Error, Result};

/// Single pinhole view of a deformed tool with the handle and tip hidden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    /// Camera centre in normalized units; it looks at the origin.
    pub camera: Vec3,
    /// Image cell size as a multiple of the mean point spacing at unit depth.
    pub pixel_spacings: f64,
    /// Depth slack behind the nearest point of a cell, in mean spacings.
    pub depth_spacings: f64,
    pub hide_handle: bool,
    /// Fraction of the blade length hidden at the tip.
    pub tip_fraction: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            camera: [0.4, 0.5, 2.5],
            pixel_spacings: 1.5,
            depth_spacings: 2.0,
            hide_handle: true,
            tip_fraction: 0.2,
        }
    }
}

fn basis(camera: Vec3) -> Result<[Vec3; 3]> {
    let fwd = vec3::normalize(vec3::scale(camera, -1.0))
        .ok_or_else(|| Error::InvalidInput("camera sits at the origin".into()))?;
    let helper = if fwd[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
    let right = vec3::normalize(vec3::cross(fwd, helper)).expect("helper not parallel");
    let up = vec3::cross(right, fwd);
    Ok([fwd, right, up])
}

/// Indices of `deformed` (index-aligned with the tool's nominal cloud) seen
/// from the camera, and the visible cloud itself.
pub fn partial_view(tool: &ToolRecord, deformed: &PointCloud, cfg: &ViewConfig) -> Result<(PointCloud, Vec<usize>)> {
    if deformed.len() != tool.nominal.len() {
        return Err(Error::InvalidInput("deformed cloud is not aligned with the nominal cloud".into()));
    }
    if !(0.0..1.0).contains(&cfg.tip_fraction) || !(cfg.pixel_spacings > 0.0) || !(cfg.depth_spacings > 0.0) {
        return Err(Error::InvalidInput("invalid view parameters".into()));
    }
    let normals = deformed
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("visibility needs surface normals".into()))?;
    let [fwd, right, up] = basis(cfg.camera)?;
    let spacing = deformed.mean_spacing();
    let cell = cfg.pixel_spacings * spacing / vec3::norm(cfg.camera);
    let slack = cfg.depth_spacings * spacing;

    let spec = &tool.spec;
    let handle_end = spec.handle.length + spec.neck_length();
    let tip_start = spec.length() - cfg.tip_fraction * spec.blade.length;
    let kept = |i: usize| {
        let x = tool.transform.invert(tool.nominal.points[i])[0];
        !(cfg.hide_handle && x < handle_end) && x <= tip_start
    };

    let mut pixels: HashMap<(i64, i64), f64> = HashMap::new();
    let mut proj = Vec::with_capacity(deformed.len());
    for (i, &p) in deformed.points.iter().enumerate() {
        let v = vec3::sub(p, cfg.camera);
        let depth = vec3::dot(v, fwd);
        let facing = vec3::dot(normals[i], v) < 0.0;
        if depth <= 0.0 || !facing {
            proj.push(None);
            continue;
        }
        let key = (
            (vec3::dot(v, right) / depth / cell).floor() as i64,
            (vec3::dot(v, up) / depth / cell).floor() as i64,
        );
        let e = pixels.entry(key).or_insert(f64::INFINITY);
        *e = e.min(depth);
        proj.push(Some((key, depth)));
    }
    let idx: Vec<usize> = (0..deformed.len())
        .filter(|&i| match proj[i] {
            Some((key, depth)) => depth <= pixels[&key] + slack && kept(i),
            None => false,
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput("no point is visible from the camera".into()));
    }
    Ok((deformed.select(&idx), idx))
}
