use nncore::bilinear_taps;

/// Oriented sampling window in continuous pixel coordinates `(col, row)`,
/// integers at pixel centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiWindow {
    pub center: (f64, f64),
    /// Rotation of the window's first axis from the column axis, radians.
    pub heading: f64,
    /// Window size along its own axes, in pixels.
    pub extent: (f64, f64),
    /// Lattice points per axis.
    pub samples: usize,
}

impl RoiWindow {
    /// Sample positions, row-major over the window's second axis.
    pub fn lattice(&self) -> Vec<(f64, f64)> {
        let n = self.samples;
        let (s, c) = self.heading.sin_cos();
        let mut pts = Vec::with_capacity(n * n);
        for j in 0..n {
            let b = ((j as f64 + 0.5) / n as f64 - 0.5) * self.extent.1;
            for i in 0..n {
                let a = ((i as f64 + 0.5) / n as f64 - 0.5) * self.extent.0;
                pts.push((self.center.0 + c * a - s * b, self.center.1 + s * a + c * b));
            }
        }
        pts
    }
}

/// Bilinear crop of one `[height, width]` plane; samples outside the plane
/// are clipped to its border.
pub fn roi_crop(plane: &[f64], height: usize, width: usize, window: &RoiWindow) -> Vec<f64> {
    window
        .lattice()
        .into_iter()
        .map(|(u, v)| {
            bilinear_taps(height, width, u, v)
                .iter()
                .map(|&(i, w)| w * plane[i])
                .sum()
        })
        .collect()
}
