use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::raster::grid::SemanticGrid;
use crate::raster::roi::{roi_crop, RoiWindow};

/// Default saturation of the distance map, in pixels.
pub const DEFAULT_SATURATION: u32 = 20;

/// Manhattan pixel distance to the drivable area, saturated at `saturation`,
/// with the world transform of the grid it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub saturation: u32,
    pub origin: (f64, f64),
    pub pixel_size: f64,
    pub values: Vec<u32>,
}

/// Runs `saturation` synchronous min-update sweeps
/// `x[i,j] = min(x[i,j], x[i±1,j] + 1, x[i,j±1] + 1)` starting from 0 on
/// drivable pixels and `saturation` elsewhere. Neighbors outside the grid
/// count as `saturation`.
pub fn distance_map(mask: &[bool], height: usize, width: usize, saturation: u32) -> Result<Vec<u32>> {
    if saturation == 0 {
        return Err(SimError::InvalidArgument("distance saturation must be >= 1".into()));
    }
    if mask.len() != height * width {
        return Err(SimError::InvalidArgument(format!(
            "mask has {} pixels, expected {height}x{width}",
            mask.len()
        )));
    }
    let d = saturation;
    if !mask.iter().any(|&m| m) {
        log::warn!("distance map over a mask with no drivable pixels");
        return Ok(vec![d; mask.len()]);
    }
    let mut cur: Vec<u32> = mask.iter().map(|&m| if m { 0 } else { d }).collect();
    let mut next = cur.clone();
    for _ in 0..d {
        let mut changed = false;
        for i in 0..height {
            for j in 0..width {
                let k = i * width + j;
                let mut v = cur[k];
                let up = if i > 0 { cur[k - width] } else { d };
                let down = if i + 1 < height { cur[k + width] } else { d };
                let left = if j > 0 { cur[k - 1] } else { d };
                let right = if j + 1 < width { cur[k + 1] } else { d };
                v = v.min(up + 1).min(down + 1).min(left + 1).min(right + 1);
                changed |= v != cur[k];
                next[k] = v;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        if !changed {
            break;
        }
    }
    Ok(cur)
}

impl DistanceMap {
    pub fn from_grid(grid: &SemanticGrid, saturation: u32) -> Result<Self> {
        let values = distance_map(&grid.drivable_mask(), grid.height(), grid.width(), saturation)?;
        Ok(Self {
            width: grid.width(),
            height: grid.height(),
            saturation,
            origin: grid.origin(),
            pixel_size: grid.pixel_size(),
            values,
        })
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Mean of a 7x7 bilinear crop over an oriented world-frame box.
    pub fn footprint_mean(&self, plane: &[f64], x: f64, y: f64, heading: f64, length: f64, width: f64) -> f64 {
        let u = (x - self.origin.0) / self.pixel_size - 0.5;
        let v = (y - self.origin.1) / self.pixel_size - 0.5;
        let window = RoiWindow {
            center: (u, v),
            heading,
            extent: (length / self.pixel_size, width / self.pixel_size),
            samples: 7,
        };
        let patch = roi_crop(plane, self.height, self.width, &window);
        patch.iter().sum::<f64>() / patch.len() as f64
    }
}
