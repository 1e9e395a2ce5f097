use serde::{Deserialize, Serialize};

use crate::graph::RoadNetwork;

use super::DataError;

/// Uniform `rows × cols` partition of a lat/lon bounding box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    /// Grid over the bounding box of the network's nodes.
    pub fn covering(net: &RoadNetwork, rows: usize, cols: usize) -> Self {
        let mut g = Self {
            min_lat: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
            min_lon: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
            rows,
            cols,
        };
        for n in net.nodes() {
            g.min_lat = g.min_lat.min(n.lat());
            g.max_lat = g.max_lat.max(n.lat());
            g.min_lon = g.min_lon.min(n.lon());
            g.max_lon = g.max_lon.max(n.lon());
        }
        g
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Index along one axis; a point on a cell boundary goes to the lower cell.
fn axis_index(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let raw = ((x - lo) / (hi - lo) * n as f64).ceil() as i64 - 1;
    raw.clamp(0, n as i64 - 1) as usize
}

/// Row-major cell id; rows follow latitude, columns longitude.
pub fn assign_grid_cell(grid: &GridSpec, lat: f64, lon: f64) -> Result<usize, DataError> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(DataError::Spec("grid needs rows, cols >= 1".into()));
    }
    let inside = (grid.min_lat..=grid.max_lat).contains(&lat) && (grid.min_lon..=grid.max_lon).contains(&lon);
    if !inside {
        return Err(DataError::OutOfBox { lat, lon });
    }
    let r = axis_index(lat, grid.min_lat, grid.max_lat, grid.rows);
    let c = axis_index(lon, grid.min_lon, grid.max_lon, grid.cols);
    Ok(r * grid.cols + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SeedStream;
    use rand::Rng;

    fn unit(rows: usize, cols: usize) -> GridSpec {
        GridSpec {
            min_lat: 0.0,
            max_lat: 1.0,
            min_lon: 0.0,
            max_lon: 1.0,
            rows,
            cols,
        }
    }

    #[test]
    fn one_cell() {
        for (lat, lon) in [(0.0, 0.0), (1.0, 1.0), (0.3, 0.9)] {
            assert_eq!(assign_grid_cell(&unit(1, 1), lat, lon).unwrap(), 0);
        }
    }

    #[test]
    fn boundaries_go_to_lower_index() {
        let g = unit(2, 2);
        assert_eq!(assign_grid_cell(&g, 0.5, 0.5).unwrap(), 0);
        assert_eq!(assign_grid_cell(&g, 0.5 + 1e-12, 0.5).unwrap(), 2);
        assert_eq!(assign_grid_cell(&g, 0.25, 0.75).unwrap(), 1);
        assert_eq!(assign_grid_cell(&g, 1.0, 1.0).unwrap(), 3);
        assert_eq!(assign_grid_cell(&g, 0.0, 0.0).unwrap(), 0);
    }

    #[test]
    fn outside_is_rejected() {
        assert!(matches!(assign_grid_cell(&unit(2, 2), 1.5, 0.5), Err(DataError::OutOfBox { .. })));
        assert!(assign_grid_cell(&unit(2, 2), 0.5, -0.1).is_err());
    }

    #[test]
    fn uniform_points_fill_cells_evenly() {
        let g = unit(3, 4);
        let n = 60_000usize;
        let mut counts = vec![0usize; g.num_cells()];
        let mut rng = SeedStream::new(3).rng(&[]);
        for _ in 0..n {
            counts[assign_grid_cell(&g, rng.random(), rng.random()).unwrap()] += 1;
        }
        // per-cell 3-sigma multinomial band, Bonferroni-widened over 12 cells
        // (two-sided 0.27% / 12 -> z = 3.73), plus a chi-square check at p = 0.001
        let p = 1.0 / 12.0;
        let (mean, sd) = (n as f64 * p, (n as f64 * p * (1.0 - p)).sqrt());
        for &c in &counts {
            assert!((c as f64 - mean).abs() < 3.73 * sd, "{c} vs {mean}: {counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        assert!(chi2 < 31.26, "chi2 {chi2}");
    }
}
