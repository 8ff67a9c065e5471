use serde::{Deserialize, Serialize};

use super::HjbError;

pub const MIN_NODES_PER_AXIS: usize = 16;
pub const MIN_TIME_STEPS: usize = 16;

/// Uniform space-time grid on `[t0, T] × Π_k [c_k − R_k, c_k + R_k]`.
///
/// Spatial nodes are numbered with axis 0 fastest: `i0 + N·i1`. Nodes on
/// the faces of the box are lateral boundary nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    center: Vec<f64>,
    half_width: Vec<f64>,
    nodes_per_axis: usize,
    t0: f64,
    horizon: f64,
    time_steps: usize,
}

impl Grid {
    pub fn new(
        center: Vec<f64>,
        half_width: Vec<f64>,
        nodes_per_axis: usize,
        t0: f64,
        horizon: f64,
        time_steps: usize,
    ) -> Result<Self, HjbError> {
        let dim = center.len();
        if !(1..=2).contains(&dim) {
            return Err(HjbError::UnsupportedDimension(dim));
        }
        if half_width.len() != dim {
            return Err(HjbError::InvalidGrid(format!(
                "half_width has {} entries for a {dim}-dimensional grid",
                half_width.len()
            )));
        }
        if half_width.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(HjbError::InvalidGrid("half widths must be positive".into()));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(HjbError::InvalidGrid("center must be finite".into()));
        }
        if nodes_per_axis < MIN_NODES_PER_AXIS {
            return Err(HjbError::InvalidGrid(format!(
                "nodes_per_axis = {nodes_per_axis} < {MIN_NODES_PER_AXIS}"
            )));
        }
        if time_steps < MIN_TIME_STEPS {
            return Err(HjbError::InvalidGrid(format!(
                "time_steps = {time_steps} < {MIN_TIME_STEPS}"
            )));
        }
        if !(t0.is_finite() && horizon.is_finite() && horizon > t0) {
            return Err(HjbError::InvalidGrid(format!("need t0 < T, got [{t0}, {horizon}]")));
        }
        Ok(Self {
            center,
            half_width,
            nodes_per_axis,
            t0,
            horizon,
            time_steps,
        })
    }

    /// A cube with the same half width on every axis.
    pub fn cube(
        center: Vec<f64>,
        half_width: f64,
        nodes_per_axis: usize,
        horizon: f64,
        time_steps: usize,
    ) -> Result<Self, HjbError> {
        let dim = center.len();
        Self::new(center, vec![half_width; dim], nodes_per_axis, 0.0, horizon, time_steps)
    }

    /// Halves every mesh width: `2N − 1` nodes per axis, `2K` steps.
    pub fn refine(&self) -> Self {
        Self {
            nodes_per_axis: 2 * self.nodes_per_axis - 1,
            time_steps: 2 * self.time_steps,
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.pow(self.dim() as u32)
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.time_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.time_steps {
            self.horizon
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_width[axis] / (self.nodes_per_axis - 1) as f64
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.center[axis] - self.half_width[axis] + i as f64 * self.spacing(axis)
    }

    /// Per-axis indices of a flat node index.
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        let n = self.nodes_per_axis;
        [node % n, node / n]
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.nodes_per_axis * idx[1]
    }

    pub fn node_coordinates(&self, node: usize, out: &mut [f64]) {
        let idx = self.multi_index(node);
        for (axis, o) in out.iter_mut().enumerate() {
            *o = self.coordinate(axis, idx[axis]);
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        let last = self.nodes_per_axis - 1;
        (0..self.dim()).any(|a| idx[a] == 0 || idx[a] == last)
    }

    /// Whether `x` lies within `fraction` of the half width of the center on every axis.
    pub fn is_inner(&self, x: &[f64], fraction: f64) -> bool {
        x.iter()
            .enumerate()
            .all(|(a, xa)| (xa - self.center[a]).abs() <= fraction * self.half_width[a] + 1e-12)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.is_inner(x, 1.0)
    }

    /// Cell lookup for multilinear interpolation, clamped to the box:
    /// lower index and weight of the upper neighbor along `axis`.
    pub(crate) fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let h = self.spacing(axis);
        let lo = self.center[axis] - self.half_width[axis];
        let s = ((x - lo) / h).clamp(0.0, (self.nodes_per_axis - 1) as f64);
        let i = (s.floor() as usize).min(self.nodes_per_axis - 2);
        (i, s - i as f64)
    }

    /// Time lookup, clamped to `[t0, T]`.
    pub(crate) fn locate_time(&self, t: f64) -> (usize, f64) {
        let s = ((t - self.t0) / self.dt()).clamp(0.0, self.time_steps as f64);
        let k = (s.floor() as usize).min(self.time_steps - 1);
        (k, s - k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_high_dimensional_grids() {
        assert!(Grid::cube(vec![0.0], 1.0, 15, 1.0, 16).is_err());
        assert!(Grid::cube(vec![0.0], 1.0, 16, 1.0, 15).is_err());
        assert!(matches!(
            Grid::cube(vec![0.0; 3], 1.0, 16, 1.0, 16),
            Err(HjbError::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn coordinates_and_indices() {
        let g = Grid::new(vec![0.2, -1.0], vec![1.0, 2.0], 17, 0.0, 1.0, 16).unwrap();
        assert_eq!(g.node_count(), 289);
        assert!((g.coordinate(0, 0) + 0.8).abs() < 1e-15);
        assert!((g.coordinate(0, 16) - 1.2).abs() < 1e-15);
        assert!((g.coordinate(1, 8) + 1.0).abs() < 1e-15);
        let node = g.flat_index([3, 5]);
        assert_eq!(g.multi_index(node), [3, 5]);
        assert!(g.is_boundary(g.flat_index([0, 5])));
        assert!(g.is_boundary(g.flat_index([3, 16])));
        assert!(!g.is_boundary(node));
        assert_eq!(g.time(16), 1.0);
    }

    #[test]
    fn refinement_halves_spacing() {
        let g = Grid::cube(vec![0.0], 1.5, 33, 2.0, 20).unwrap();
        let r = g.refine();
        assert!((r.spacing(0) - 0.5 * g.spacing(0)).abs() < 1e-15);
        assert!((r.dt() - 0.5 * g.dt()).abs() < 1e-15);
        for i in 0..33 {
            assert!((r.coordinate(0, 2 * i) - g.coordinate(0, i)).abs() < 1e-14);
        }
    }

    #[test]
    fn locate_clamps() {
        let g = Grid::cube(vec![0.0], 1.0, 21, 1.0, 16).unwrap();
        assert_eq!(g.locate(0, -5.0), (0, 0.0));
        let (i, w) = g.locate(0, 5.0);
        assert_eq!(i, 19);
        assert!((w - 1.0).abs() < 1e-15);
        let (i, w) = g.locate(0, 0.05);
        assert_eq!(i, 10);
        assert!((w - 0.5).abs() < 1e-12);
    }
}
