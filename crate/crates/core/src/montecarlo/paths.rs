use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criterion::{
    density_compensator, density_jump_compensator, drift_with_cross, g_unchecked, log_one_minus_big_g,
    wealth_compensator, wealth_jump_compensator, Criterion,
};
use crate::model::{JumpAtom, ValidatedModel};
use crate::policy::FeedbackPolicy;

use super::rng::{exponential, fill_normal, path_rng};
use super::{FactorScheme, McError, PathConfig};

/// Distribution of `X(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(Vec<f64>),
    Gaussian { mean: Vec<f64>, covariance: DMatrix<f64> },
}

impl InitialState {
    fn dim(&self) -> usize {
        match self {
            Self::Fixed(x) => x.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpArrival {
    pub time: f64,
    pub atom: usize,
    /// Index of the time step `(t_k, t_{k+1}]` containing the arrival.
    pub step: usize,
}

/// One path under the physical measure, sampled on the time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathRecord {
    pub times: Vec<f64>,
    /// `X(t_k)`, n values per time.
    pub factor: Vec<f64>,
    pub log_wealth: Vec<f64>,
    /// Logarithms of the discounted prices `S_i/S_0`, with `S_i(0) = S_0(0) = 1`;
    /// m values per time.
    pub log_prices: Vec<f64>,
    pub arrivals: Vec<JumpArrival>,
    /// `ln χ_T`.
    pub log_density: f64,
}

impl PathRecord {
    pub fn factor_at(&self, k: usize) -> &[f64] {
        let n = self.factor.len() / self.times.len();
        &self.factor[k * n..(k + 1) * n]
    }

    pub fn log_prices_at(&self, k: usize) -> &[f64] {
        let m = self.log_prices.len() / self.times.len();
        &self.log_prices[k * m..(k + 1) * m]
    }
}

/// `√C` for a symmetric PSD matrix, negative eigenvalues clamped to zero.
pub(crate) fn psd_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Exact transition of `dX = (b + BX)dt + ΛdW` over one step, jointly with
/// the Brownian increment:
/// `X' = E·X + c + (K/dt)·ΔW + R·ζ` with `ζ ~ N(0, I_n)` independent of `ΔW`.
struct OuStep {
    transition: Vec<f64>,
    offset: Vec<f64>,
    gain: Vec<f64>,
    root: Vec<f64>,
}

impl OuStep {
    fn new(model: &ValidatedModel, dt: f64) -> Self {
        let raw = model.raw();
        let big_b = &raw.mean_reversion;
        let lambda = model.factor_loading_at(0.0);
        let n = model.n();
        let intervals = 64;
        let h = dt / intervals as f64;
        let mut k_int = DMatrix::zeros(n, lambda.ncols());
        let mut s_int = DMatrix::zeros(n, n);
        let mut c_int = DVector::zeros(n);
        for i in 0..=intervals {
            let w = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 3.0;
            let e = (big_b * (i as f64 * h)).exp();
            let el = &e * &lambda;
            k_int += &el * w;
            s_int += &el * el.transpose() * w;
            c_int += &e * &raw.factor_intercept * w;
        }
        let conditional = &s_int - &k_int * k_int.transpose() / dt;
        Self {
            transition: (big_b * dt).exp().as_slice().to_vec(),
            offset: c_int.as_slice().to_vec(),
            gain: (k_int / dt).as_slice().to_vec(),
            root: psd_sqrt(&conditional).as_slice().to_vec(),
        }
    }
}

/// Column-major `y += A·x` for an `rows × x.len()` matrix.
#[inline]
pub(crate) fn mat_vec_add(a: &[f64], x: &[f64], y: &mut [f64]) {
    let rows = y.len();
    for (j, xj) in x.iter().enumerate() {
        let col = &a[j * rows..(j + 1) * rows];
        for (yi, aij) in y.iter_mut().zip(col) {
            *yi += aij * xj;
        }
    }
}

/// Column-major `y = Aᵀ·x` for an `x.len() × y.len()` matrix.
#[inline]
pub(crate) fn mat_tr_vec(a: &[f64], x: &[f64], y: &mut [f64]) {
    let rows = x.len();
    for (j, yj) in y.iter_mut().enumerate() {
        let col = &a[j * rows..(j + 1) * rows];
        *yj = col.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Per-run constants shared by all paths.
pub(crate) struct Simulator<'a> {
    pub model: &'a ValidatedModel,
    pub theta: f64,
    pub log_v: f64,
    pub policy: &'a dyn FeedbackPolicy,
    pub cfg: PathConfig,
    pub steps: usize,
    pub dt: f64,
    sqrt_dt: f64,
    n: usize,
    m: usize,
    noise: usize,
    /// `Λ(t_k)` column-major, per step; a single entry when constant.
    loadings: Vec<Vec<f64>>,
    /// `ΛΣᵀ(t_k)`, same layout.
    crosses: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    cov: Vec<f64>,
    /// `â_i − ½(ΣΣᵀ)_ii − Σ_comp λ_jψ_ji`.
    price_drift: Vec<f64>,
    ou: Option<OuStep>,
    initial_root: Option<Vec<f64>>,
    initial: InitialState,
}

pub(crate) struct Scratch {
    x: Vec<f64>,
    x_new: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    zeta: Vec<f64>,
    dw: Vec<f64>,
    sig_h: Vec<f64>,
    next_arrival: Vec<f64>,
    counts: Vec<u32>,
}

pub(crate) struct Terminal {
    pub log_wealth: f64,
    pub log_density: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a ValidatedModel,
        criterion: &Criterion,
        policy: &'a dyn FeedbackPolicy,
        initial: &InitialState,
        cfg: &PathConfig,
    ) -> Result<Self, McError> {
        cfg.validate()?;
        let (n, m) = (model.n(), model.m());
        if policy.control_dim() != m {
            return Err(McError::DimensionMismatch(format!(
                "policy has {} components, model has {m} assets",
                policy.control_dim()
            )));
        }
        if initial.dim() != n {
            return Err(McError::DimensionMismatch(format!(
                "initial state has {} components, model has {n} factors",
                initial.dim()
            )));
        }
        let steps = cfg.steps();
        let dt = cfg.step_size();
        let times: Vec<f64> = if model.has_time_varying_loading() {
            (0..steps).map(|k| k as f64 * dt).collect()
        } else {
            vec![0.0]
        };
        let loadings = times
            .iter()
            .map(|&t| model.factor_loading_at(t).as_slice().to_vec())
            .collect();
        let crosses = times
            .iter()
            .map(|&t| model.loading_cross_at(t).as_slice().to_vec())
            .collect();
        let ou = match cfg.scheme {
            FactorScheme::Euler => None,
            FactorScheme::ExactOu if model.has_time_varying_loading() => {
                return Err(McError::ExactOuNeedsConstantLoading)
            }
            FactorScheme::ExactOu => Some(OuStep::new(model, dt)),
        };
        let raw = model.raw();
        let cov = model.asset_covariance();
        let price_drift = (0..m)
            .map(|i| {
                let comp: f64 = raw
                    .jumps
                    .atoms
                    .iter()
                    .filter(|a| a.compensated)
                    .map(|a| a.intensity * a.mark[i])
                    .sum();
                model.excess_drift()[i] - 0.5 * cov[(i, i)] - comp
            })
            .collect();
        let initial_root = match initial {
            InitialState::Fixed(_) => None,
            InitialState::Gaussian { covariance, .. } => Some(psd_sqrt(covariance).as_slice().to_vec()),
        };
        Ok(Self {
            model,
            theta: criterion.theta(),
            log_v: criterion.initial_wealth().ln(),
            policy,
            cfg: *cfg,
            steps,
            dt,
            sqrt_dt: dt.sqrt(),
            n,
            m,
            noise: model.noise_dim(),
            loadings,
            crosses,
            sigma: raw.asset_volatility.as_slice().to_vec(),
            cov: cov.as_slice().to_vec(),
            price_drift,
            ou,
            initial_root,
            initial: initial.clone(),
        })
    }

    pub fn scratch(&self) -> Scratch {
        let atoms = self.model.jumps().atoms.len();
        Scratch {
            x: vec![0.0; self.n],
            x_new: vec![0.0; self.n],
            h: vec![0.0; self.m],
            z: vec![0.0; self.noise],
            zeta: vec![0.0; self.n],
            dw: vec![0.0; self.noise],
            sig_h: vec![0.0; self.noise],
            next_arrival: vec![0.0; atoms],
            counts: vec![0; atoms],
        }
    }

    fn loading(&self, k: usize) -> &[f64] {
        &self.loadings[k.min(self.loadings.len() - 1)]
    }

    fn cross(&self, k: usize) -> &[f64] {
        &self.crosses[k.min(self.crosses.len() - 1)]
    }

    fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.cfg.horizon
        } else {
            k as f64 * self.dt
        }
    }

    fn start(&self, rng: &mut ChaCha8Rng, s: &mut Scratch) {
        match &self.initial {
            InitialState::Fixed(x0) => s.x.copy_from_slice(x0),
            InitialState::Gaussian { mean, .. } => {
                fill_normal(rng, &mut s.zeta);
                s.x.copy_from_slice(mean);
                mat_vec_add(self.initial_root.as_deref().unwrap_or_default(), &s.zeta, &mut s.x);
            }
        }
    }

    fn policy_at(&self, k: usize, s: &mut Scratch) -> Result<f64, McError> {
        let t = self.time(k);
        self.policy.evaluate(t, &s.x, &mut s.h);
        let margin = self.model.margin(&s.h);
        if margin > 0.0 {
            Ok(margin)
        } else {
            Err(McError::InfeasiblePolicyOnPath {
                t,
                x: s.x.clone(),
                margin,
            })
        }
    }

    /// Draws `ΔW` (and `ζ` for exact steps) and advances the factor under
    /// the physical drift.
    fn advance_factor(&self, k: usize, rng: &mut ChaCha8Rng, s: &mut Scratch) {
        fill_normal(rng, &mut s.z);
        for (dw, z) in s.dw.iter_mut().zip(&s.z) {
            *dw = self.sqrt_dt * z;
        }
        let raw = self.model.raw();
        match &self.ou {
            None => {
                for i in 0..self.n {
                    let mut drift = raw.factor_intercept[i];
                    for j in 0..self.n {
                        drift += raw.mean_reversion[(i, j)] * s.x[j];
                    }
                    s.x_new[i] = s.x[i] + drift * self.dt;
                }
                mat_vec_add(self.loading(k), &s.dw, &mut s.x_new);
            }
            Some(ou) => {
                fill_normal(rng, &mut s.zeta);
                s.x_new.copy_from_slice(&ou.offset);
                mat_vec_add(&ou.transition, &s.x, &mut s.x_new);
                mat_vec_add(&ou.gain, &s.dw, &mut s.x_new);
                mat_vec_add(&ou.root, &s.zeta, &mut s.x_new);
            }
        }
        std::mem::swap(&mut s.x, &mut s.x_new);
    }

    /// Simulates path `index` under the physical measure.
    pub fn physical(
        &self,
        index: usize,
        s: &mut Scratch,
        mut record: Option<&mut PathRecord>,
    ) -> Result<Terminal, McError> {
        let mut rng = path_rng(self.cfg.seed, index);
        self.start(&mut rng, s);
        let atoms: &[JumpAtom] = &self.model.jumps().atoms;
        for (next, atom) in s.next_arrival.iter_mut().zip(atoms) {
            *next = exponential(&mut rng, atom.intensity);
        }
        let raw = self.model.raw();
        let theta = self.theta;
        let (n, m) = (self.n, self.m);
        let mut log_wealth = self.log_v;
        let mut log_density = 0.0;
        if let Some(r) = record.as_deref_mut() {
            *r = PathRecord {
                times: (0..=self.steps).map(|k| self.time(k)).collect(),
                factor: Vec::with_capacity((self.steps + 1) * n),
                log_wealth: Vec::with_capacity(self.steps + 1),
                log_prices: vec![0.0; (self.steps + 1) * m],
                arrivals: Vec::new(),
                log_density: 0.0,
            };
            r.factor.extend_from_slice(&s.x);
            r.log_wealth.push(log_wealth);
        }

        for k in 0..self.steps {
            self.policy_at(k, s)?;
            let h = &s.h;
            let x = &s.x;
            let mut quad = 0.0;
            let mut lin = 0.0;
            for i in 0..m {
                let mut row = 0.0;
                for j in 0..m {
                    row += self.cov[i + j * m] * h[j];
                }
                quad += h[i] * row;
                let mut excess = self.model.excess_drift()[i];
                for (l, xl) in x.iter().enumerate() {
                    excess += self.model.excess_loading()[(i, l)] * xl;
                }
                lin += h[i] * excess;
            }
            let rate = raw.rate_intercept + raw.rate_loading.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            log_wealth +=
                (rate + lin - 0.5 * quad + wealth_compensator(atoms, h) - wealth_jump_compensator(atoms, h)) * self.dt;
            log_density += (-0.5 * theta * theta * quad + density_compensator(atoms, theta, h)
                - density_jump_compensator(atoms, theta, h))
                * self.dt;

            if let Some(r) = record.as_deref_mut() {
                let (done, rest) = r.log_prices.split_at_mut((k + 1) * m);
                let prev = &done[k * m..];
                let next = &mut rest[..m];
                for i in 0..m {
                    let mut drift = self.price_drift[i];
                    for (l, xl) in x.iter().enumerate() {
                        drift += self.model.excess_loading()[(i, l)] * xl;
                    }
                    next[i] = prev[i] + drift * self.dt;
                }
            }

            self.advance_factor(k, &mut rng, s);
            mat_tr_vec(&self.sigma, &s.h, &mut s.sig_h);
            let noise: f64 = s.sig_h.iter().zip(&s.dw).map(|(a, b)| a * b).sum();
            log_wealth += noise;
            log_density -= theta * noise;

            let t_next = self.time(k + 1);
            for (j, atom) in atoms.iter().enumerate() {
                let mut count = 0;
                while s.next_arrival[j] <= t_next {
                    if let Some(r) = record.as_deref_mut() {
                        r.arrivals.push(JumpArrival {
                            time: s.next_arrival[j],
                            atom: j,
                            step: k,
                        });
                    }
                    count += 1;
                    s.next_arrival[j] += exponential(&mut rng, atom.intensity);
                }
                s.counts[j] = count;
                if count > 0 {
                    let u = atom.dot(&s.h);
                    log_wealth += count as f64 * u.ln_1p();
                    log_density += count as f64 * log_one_minus_big_g(theta, u);
                }
            }

            if let Some(r) = record.as_deref_mut() {
                let next = &mut r.log_prices[(k + 1) * m..(k + 2) * m];
                mat_vec_add(&self.sigma, &s.dw, next);
                for (j, atom) in atoms.iter().enumerate() {
                    if s.counts[j] > 0 {
                        for (p, psi) in next.iter_mut().zip(&atom.mark) {
                            *p += s.counts[j] as f64 * psi.ln_1p();
                        }
                    }
                }
                r.factor.extend_from_slice(&s.x);
                r.log_wealth.push(log_wealth);
            }
        }
        if let Some(r) = record {
            r.log_density = log_density;
        }
        Ok(Terminal {
            log_wealth,
            log_density,
        })
    }

    /// Simulates path `index` under the changed measure and returns
    /// `θ∫g(X_s, h_s)ds`.
    pub fn changed(&self, index: usize, s: &mut Scratch) -> Result<f64, McError> {
        let mut rng = path_rng(self.cfg.seed, index);
        self.start(&mut rng, s);
        let n = self.n;
        let mut cost = 0.0;
        for k in 0..self.steps {
            self.policy_at(k, s)?;
            cost += g_unchecked(self.model, self.theta, &s.x, &s.h) * self.dt;
            drift_with_cross(self.model, self.theta, self.cross(k), &s.x, &s.h, &mut s.x_new[..n]);
            fill_normal(&mut rng, &mut s.z);
            for (dw, z) in s.dw.iter_mut().zip(&s.z) {
                *dw = self.sqrt_dt * z;
            }
            for i in 0..n {
                s.x_new[i] = s.x[i] + s.x_new[i] * self.dt;
            }
            mat_vec_add(self.loading(k), &s.dw, &mut s.x_new);
            std::mem::swap(&mut s.x, &mut s.x_new);
        }
        Ok(self.theta * cost)
    }

    /// Runs `f` for every path in parallel; results are in path order.
    pub fn collect<T, F>(&self, f: F) -> Result<Vec<T>, McError>
    where
        T: Send,
        F: Fn(&Self, usize, &mut Scratch) -> Result<T, McError> + Sync,
    {
        (0..self.cfg.num_paths)
            .into_par_iter()
            .map_init(|| self.scratch(), |s, i| f(self, i, s))
            .collect()
    }
}

/// Simulates `cfg.num_paths` paths under the physical measure and records
/// the factor, log-wealth and discounted log-price trajectories together
/// with every jump arrival and the terminal log-density `ln χ_T`.
pub fn simulate_physical(
    model: &ValidatedModel,
    criterion: &Criterion,
    policy: &dyn FeedbackPolicy,
    initial: &InitialState,
    cfg: &PathConfig,
) -> Result<Vec<PathRecord>, McError> {
    let sim = Simulator::new(model, criterion, policy, initial, cfg)?;
    sim.collect(|sim, i, s| {
        let mut record = PathRecord::default();
        sim.physical(i, s, Some(&mut record))?;
        Ok(record)
    })
}
