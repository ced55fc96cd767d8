use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::metrics::emd::{emd, Distribution};
use crate::raster::SemanticGrid;

/// Kernel mass farther than this many bandwidths from a sample is dropped.
const KERNEL_RADIUS: f64 = 3.0;

/// Cell layout shared by all profiles of one map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub origin: (f64, f64),
    pub cell: f64,
    pub width: usize,
    pub height: usize,
}

impl DensityGrid {
    /// Covers the extent of a semantic grid.
    pub fn covering(grid: &SemanticGrid, cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(SimError::InvalidArgument(format!("density cell {cell} must be positive")));
        }
        let ps = grid.pixel_size();
        Ok(Self {
            origin: grid.origin(),
            cell,
            width: ((grid.width() as f64 * ps) / cell).ceil() as usize,
            height: ((grid.height() as f64 * ps) / cell).ceil() as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, index: usize) -> (f64, f64) {
        let (r, c) = (index / self.width, index % self.width);
        (
            self.origin.0 + (c as f64 + 0.5) * self.cell,
            self.origin.1 + (r as f64 + 0.5) * self.cell,
        )
    }
}

/// Mass per cell; normalized profiles sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub grid: DensityGrid,
    pub mass: Vec<f64>,
    pub normalized: bool,
}

impl DensityProfile {
    pub fn empty(grid: &DensityGrid) -> Self {
        Self {
            grid: grid.clone(),
            mass: vec![0.0; grid.len()],
            normalized: false,
        }
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Cells with positive mass as a weighted point set.
    pub fn distribution(&self) -> Distribution {
        let (points, mass) = self
            .mass
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(i, m)| (self.grid.center(i), *m))
            .unzip();
        Distribution { points, mass }
    }
}

/// Gaussian kernel density of `positions` evaluated at cell centers
/// (truncated at three bandwidths), normalized to unit mass.
pub fn kde_density(positions: &[(f64, f64)], grid: &DensityGrid, bandwidth: f64) -> Result<DensityProfile> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(SimError::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
    }
    let mut p = DensityProfile::empty(grid);
    if positions.is_empty() {
        return Ok(p);
    }
    let reach = KERNEL_RADIUS * bandwidth;
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let span = (reach / grid.cell).ceil() as isize;
    for &(x, y) in positions {
        let cx = ((x - grid.origin.0) / grid.cell).floor() as isize;
        let cy = ((y - grid.origin.1) / grid.cell).floor() as isize;
        for r in (cy - span).max(0)..=(cy + span).min(grid.height as isize - 1) {
            for c in (cx - span).max(0)..=(cx + span).min(grid.width as isize - 1) {
                let i = r as usize * grid.width + c as usize;
                let (px, py) = grid.center(i);
                let d2 = (px - x).powi(2) + (py - y).powi(2);
                if d2 <= reach * reach {
                    p.mass[i] += (-d2 * inv).exp();
                }
            }
        }
    }
    let total = p.total();
    if total > 0.0 {
        p.mass.iter_mut().for_each(|m| *m /= total);
        p.normalized = true;
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub drivable: usize,
    pub non_drivable: usize,
}

impl Coverage {
    pub fn total(&self) -> usize {
        self.drivable + self.non_drivable
    }
}

/// Cells whose mass exceeds `threshold` in any profile, split by whether the
/// cell center is drivable.
pub fn coverage(profiles: &[DensityProfile], threshold: f64, map: &SemanticGrid) -> Coverage {
    let Some(first) = profiles.first() else {
        return Coverage::default();
    };
    let mut out = Coverage::default();
    for i in 0..first.grid.len() {
        if profiles.iter().any(|p| p.mass[i] > threshold) {
            let (x, y) = first.grid.center(i);
            if map.is_drivable(x, y) {
                out.drivable += 1;
            } else {
                out.non_drivable += 1;
            }
        }
    }
    out
}

/// Mean pairwise earth mover's distance; zero for fewer than two profiles.
/// Empty profiles are skipped.
pub fn diversity(profiles: &[DensityProfile]) -> Result<f64> {
    let dists: Vec<Distribution> = profiles
        .iter()
        .filter(|p| p.normalized)
        .map(|p| p.distribution())
        .collect();
    let n = dists.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += emd(&dists[i], &dists[j])?;
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> DensityGrid {
        DensityGrid {
            origin: (0.0, 0.0),
            cell: 2.0,
            width: 20,
            height: 20,
        }
    }

    #[test]
    fn stationary_sample_is_symmetric_and_normalized() {
        let p = kde_density(&[(21.0, 21.0)], &grid(), 2.0).unwrap();
        assert!((p.total() - 1.0).abs() < 1e-9);
        let at = |r: usize, c: usize| p.mass[r * 20 + c];
        assert_eq!(at(10, 10), p.mass.iter().cloned().fold(0.0, f64::max));
        assert!((at(9, 10) - at(11, 10)).abs() < 1e-15);
        assert!((at(10, 9) - at(10, 11)).abs() < 1e-15);
        assert!((at(9, 10) - at(10, 9)).abs() < 1e-15);
    }

    #[test]
    fn empty_input_gives_empty_profile() {
        let p = kde_density(&[], &grid(), 2.0).unwrap();
        assert!(!p.normalized);
        assert_eq!(p.total(), 0.0);
        assert_eq!(diversity(&[p.clone(), p]).unwrap(), 0.0);
    }
}
