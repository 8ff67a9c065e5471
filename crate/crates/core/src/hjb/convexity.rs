use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ValueField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvexityConfig {
    /// Only nodes within this fraction of the half width of the center are
    /// examined. The pinned lateral boundary bends `Φ` down near the faces.
    pub inner_fraction: f64,
    pub tolerance: f64,
    pub midpoint_pairs: usize,
    pub seed: u64,
}

impl Default for ConvexityConfig {
    fn default() -> Self {
        Self {
            inner_fraction: 0.5,
            tolerance: 1e-8,
            midpoint_pairs: 100,
            seed: 0,
        }
    }
}

/// A located failure: time and coordinates of the offending node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLocation {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub min_second_difference: f64,
    pub second_difference_location: Option<NodeLocation>,
    /// `tolerance·(1 + max|Φ|)`.
    pub threshold: f64,
    /// Smallest `Φ̃(mid) − √(Φ̃(x₁)Φ̃(x₂))` over the sampled pairs.
    pub min_midpoint_slack: f64,
    pub midpoint_location: Option<NodeLocation>,
    pub midpoint_pairs_checked: usize,
    pub second_differences_pass: bool,
    pub midpoint_pass: bool,
    pub passed: bool,
}

/// Checks convexity of `Φ(t, ·)` through undivided second differences
/// along each axis, and its multiplicative form
/// `Φ̃(t, (x₁+x₂)/2) ≥ Φ̃(t, x₁)^{1/2}Φ̃(t, x₂)^{1/2}` at random node pairs.
pub fn convexity_report(field: &ValueField, config: &ConvexityConfig) -> ConvexityReport {
    let grid = field.grid();
    let n = grid.dim();
    let np = grid.nodes_per_axis();
    let nodes = grid.node_count();
    let stride = [1, np];
    let scale = field.phi.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let threshold = config.tolerance * (1.0 + scale);
    let mut x = vec![0.0; n];

    let inner: Vec<usize> = (0..nodes)
        .filter(|&node| {
            grid.node_coordinates(node, &mut x);
            !grid.is_boundary(node) && grid.is_inner(&x, config.inner_fraction)
        })
        .collect();

    let mut min_second = f64::INFINITY;
    let mut second_at = None;
    for k in 0..=grid.time_steps() {
        let phi = field.phi.slice(k);
        for &node in &inner {
            for s in &stride[..n] {
                let d2 = phi[node + s] - 2.0 * phi[node] + phi[node - s];
                if d2 < min_second {
                    min_second = d2;
                    second_at = Some((k, node));
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut min_slack = f64::INFINITY;
    let mut midpoint_at = None;
    let mut checked = 0;
    let tilde_threshold = threshold * field.phi_tilde.values.iter().fold(0.0_f64, |a, v| a.max(*v));
    if inner.len() >= 2 {
        let mut attempts = 0;
        while checked < config.midpoint_pairs && attempts < 100 * config.midpoint_pairs {
            attempts += 1;
            let a = grid.multi_index(inner[rng.random_range(0..inner.len())]);
            let b = grid.multi_index(inner[rng.random_range(0..inner.len())]);
            if a == b || (0..n).any(|ax| (a[ax] + b[ax]) % 2 != 0) {
                continue;
            }
            let mid = grid.flat_index([(a[0] + b[0]) / 2, (a[1] + b[1]) / 2]);
            let k = rng.random_range(0..=grid.time_steps());
            let tilde = field.phi_tilde.slice(k);
            let slack = tilde[mid] - (tilde[grid.flat_index(a)] * tilde[grid.flat_index(b)]).sqrt();
            checked += 1;
            if slack < min_slack {
                min_slack = slack;
                midpoint_at = Some((k, mid));
            }
        }
    }

    let locate = |at: Option<(usize, usize)>| {
        at.map(|(k, node)| {
            let mut x = vec![0.0; n];
            grid.node_coordinates(node, &mut x);
            NodeLocation { t: grid.time(k), x }
        })
    };
    let second_pass = min_second >= -threshold;
    let midpoint_pass = min_slack >= -tilde_threshold;
    ConvexityReport {
        min_second_difference: if min_second.is_finite() { min_second } else { 0.0 },
        second_difference_location: locate(second_at),
        threshold,
        min_midpoint_slack: if min_slack.is_finite() { min_slack } else { 0.0 },
        midpoint_location: locate(midpoint_at),
        midpoint_pairs_checked: checked,
        second_differences_pass: second_pass,
        midpoint_pass,
        passed: second_pass && midpoint_pass,
    }
}
