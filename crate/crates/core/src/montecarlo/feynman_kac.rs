use rayon::prelude::*;

use super::paths::mat_vec_add;
use super::rng::{fill_normal, path_rng};
use super::{McError, PathConfig, PathStats};

type VectorRule<'a> = Box<dyn Fn(f64, &[f64], &mut [f64]) + Sync + 'a>;
type ScalarRule<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + Sync + 'a>;

/// Coefficients of
/// `u_t + ½tr(ΛΛᵀD²u) + fᵀDu + θg·u + ℓ = 0` on a box, `u = Ψ` on the
/// parabolic boundary. The horizon is `PathConfig::horizon`.
pub struct FeynmanKacProblem<'a> {
    pub theta: f64,
    /// Brownian dimension; the diffusion rule writes an `n × noise_dim`
    /// column-major matrix.
    pub noise_dim: usize,
    pub drift: VectorRule<'a>,
    pub diffusion: Box<dyn Fn(f64, &mut [f64]) + Sync + 'a>,
    pub zero_order: ScalarRule<'a>,
    pub source: ScalarRule<'a>,
    pub boundary: ScalarRule<'a>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeynmanKacProblem<'_> {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self, t: f64, x: &[f64], cfg: &PathConfig) -> Result<(), McError> {
        cfg.validate()?;
        if self.upper.len() != self.dim() || x.len() != self.dim() {
            return Err(McError::DimensionMismatch(format!(
                "box has {} lower and {} upper bounds, start point has {} components",
                self.lower.len(),
                self.upper.len(),
                x.len()
            )));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(McError::InvalidConfig("box bounds must satisfy lower < upper".into()));
        }
        if !(t < cfg.horizon) {
            return Err(McError::InvalidConfig(format!(
                "start time {t} must precede the horizon {}",
                cfg.horizon
            )));
        }
        if x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(x, (l, u))| !(x > l && x < u))
        {
            return Err(McError::InvalidConfig(format!(
                "start point {x:?} is not inside the box"
            )));
        }
        Ok(())
    }

    /// Fraction of the step from `x` to `y` at which the path first leaves
    /// the box, if it does.
    fn exit_fraction(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let mut alpha: Option<f64> = None;
        for i in 0..self.dim() {
            let bound = if y[i] >= self.upper[i] {
                self.upper[i]
            } else if y[i] <= self.lower[i] {
                self.lower[i]
            } else {
                continue;
            };
            let a = ((bound - x[i]) / (y[i] - x[i])).clamp(0.0, 1.0);
            alpha = Some(alpha.map_or(a, |b| b.min(a)));
        }
        alpha
    }

    fn sample(&self, index: usize, t0: f64, x0: &[f64], cfg: &PathConfig) -> f64 {
        let n = self.dim();
        let mut rng = path_rng(cfg.seed, index);
        let steps = ((cfg.horizon - t0) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let dt = (cfg.horizon - t0) / steps as f64;
        let sqrt_dt = dt.sqrt();
        let mut x = x0.to_vec();
        let mut y = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut lambda = vec![0.0; n * self.noise_dim];
        let mut dw = vec![0.0; self.noise_dim];
        let theta = self.theta;

        let mut t = t0;
        let mut integral = 0.0;
        let mut accumulated = 0.0;
        let mut g0 = (self.zero_order)(t, &x);
        let mut l0 = (self.source)(t, &x);
        for k in 0..steps {
            (self.drift)(t, &x, &mut f);
            (self.diffusion)(t, &mut lambda);
            fill_normal(&mut rng, &mut dw);
            for w in dw.iter_mut() {
                *w *= sqrt_dt;
            }
            for i in 0..n {
                y[i] = x[i] + f[i] * dt;
            }
            mat_vec_add(&lambda, &dw, &mut y);
            let exit = self.exit_fraction(&x, &y);
            let h = exit.map_or(dt, |a| a * dt);
            if let Some(a) = exit {
                for i in 0..n {
                    y[i] = x[i] + a * (y[i] - x[i]);
                }
            }
            let t1 = if exit.is_none() && k + 1 == steps {
                cfg.horizon
            } else {
                t + h
            };
            let g1 = (self.zero_order)(t1, &y);
            let l1 = (self.source)(t1, &y);
            let next = integral + 0.5 * (g0 + g1) * h;
            accumulated += 0.5 * (l0 * (theta * integral).exp() + l1 * (theta * next).exp()) * h;
            integral = next;
            t = t1;
            std::mem::swap(&mut x, &mut y);
            (g0, l0) = (g1, l1);
            if exit.is_some() {
                break;
            }
        }
        (self.boundary)(t, &x) * (theta * integral).exp() + accumulated
    }
}

/// Monte Carlo estimate of `u(t, x)` through the stopped representation
/// `E[Ψ(τ, X_τ)e^{θ∫g} + ∫ℓ·e^{θ∫g}]`, `τ` the first exit from the box
/// or the horizon.
pub fn feynman_kac_oracle(
    problem: &FeynmanKacProblem<'_>,
    t: f64,
    x: &[f64],
    cfg: &PathConfig,
) -> Result<PathStats, McError> {
    problem.validate(t, x, cfg)?;
    let samples: Vec<f64> = (0..cfg.num_paths)
        .into_par_iter()
        .map(|i| problem.sample(i, t, x, cfg))
        .collect();
    Ok(PathStats::from_samples("feynman_kac", &samples))
}
