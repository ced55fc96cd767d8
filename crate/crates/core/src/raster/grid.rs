use serde::{Deserialize, Serialize};

pub const LAYER_DRIVABLE: usize = 0;
pub const LAYER_CENTERLINE: usize = 1;
pub const LAYER_DIR_COS: usize = 2;
pub const LAYER_DIR_SIN: usize = 3;
pub const SEMANTIC_LAYERS: usize = 4;

/// Encodes an angle component from `[-1, 1]` into `[0, 1]`.
pub fn encode_unit(v: f64) -> f64 {
    0.5 * (1.0 + v)
}

/// World-frame multi-layer raster of a map.
///
/// Pixel `(row, col)` covers `[ox + col*ps, ox + (col+1)*ps) x [oy + row*ps, oy + (row+1)*ps)`;
/// rows grow with world `y`. Continuous pixel coordinates put integers at pixel centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticGrid {
    origin: (f64, f64),
    width: usize,
    height: usize,
    pixel_size: f64,
    /// `[layer][row][col]`, flattened.
    data: Vec<f64>,
}

impl SemanticGrid {
    pub fn new(origin: (f64, f64), width: usize, height: usize, pixel_size: f64) -> Self {
        assert!(pixel_size > 0.0 && width > 0 && height > 0);
        Self {
            origin,
            width,
            height,
            pixel_size,
            data: vec![0.0; SEMANTIC_LAYERS * width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[layer * n..(layer + 1) * n]
    }

    pub fn get(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.data[(layer * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, layer: usize, row: usize, col: usize, value: f64) {
        self.data[(layer * self.height + row) * self.width + col] = value;
    }

    /// Marks a centerline pixel with the lane's world heading.
    pub fn mark_lane(&mut self, row: usize, col: usize, heading: f64) {
        self.set(LAYER_CENTERLINE, row, col, 1.0);
        self.set(LAYER_DIR_COS, row, col, encode_unit(heading.cos()));
        self.set(LAYER_DIR_SIN, row, col, encode_unit(heading.sin()));
    }

    /// World heading of the lane through a centerline pixel.
    pub fn lane_heading(&self, row: usize, col: usize) -> Option<f64> {
        if self.get(LAYER_CENTERLINE, row, col) == 0.0 {
            return None;
        }
        let c = 2.0 * self.get(LAYER_DIR_COS, row, col) - 1.0;
        let s = 2.0 * self.get(LAYER_DIR_SIN, row, col) - 1.0;
        Some(s.atan2(c))
    }

    pub fn world_from_pixel(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin.0 + (col + 0.5) * self.pixel_size,
            self.origin.1 + (row + 0.5) * self.pixel_size,
        )
    }

    /// Continuous `(col, row)` of a world point.
    pub fn pixel_from_world(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin.0) / self.pixel_size - 0.5,
            (y - self.origin.1) / self.pixel_size - 0.5,
        )
    }

    /// `(row, col)` of the pixel containing a world point.
    pub fn pixel_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin.0) / self.pixel_size).floor();
        let r = ((y - self.origin.1) / self.pixel_size).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// Points outside the grid are not drivable.
    pub fn is_drivable(&self, x: f64, y: f64) -> bool {
        self.pixel_index(x, y)
            .is_some_and(|(r, c)| self.get(LAYER_DRIVABLE, r, c) > 0.5)
    }

    pub fn drivable_mask(&self) -> Vec<bool> {
        self.layer(LAYER_DRIVABLE).iter().map(|&v| v > 0.5).collect()
    }
}
