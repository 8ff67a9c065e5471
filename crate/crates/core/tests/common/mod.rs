//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

/// Coefficients of a one-factor, one-asset model without jumps.
#[derive(Debug, Clone, Copy)]
pub struct ScalarModel {
    pub b: f64,
    pub big_b: f64,
    /// `ΛΛᵀ`
    pub ell2: f64,
    /// `ΣΛᵀ`
    pub s: f64,
    /// `ΣΣᵀ`
    pub ss: f64,
    pub a0: f64,
    pub big_a0: f64,
    pub a_hat: f64,
    pub big_a_hat: f64,
    pub theta: f64,
    pub v: f64,
}

impl ScalarModel {
    pub fn f1_jump_free() -> Self {
        Self {
            b: 0.1,
            big_b: -0.5,
            ell2: 0.2 * 0.2 + 0.05 * 0.05,
            s: 0.25 * 0.2,
            ss: 0.0625,
            a0: 0.02,
            big_a0: 0.0,
            a_hat: 0.03,
            big_a_hat: 0.4,
            theta: 1.0,
            v: 1.0,
        }
    }

    /// Time derivative of `(q₂, q₁, q₀)` for `Φ = ½q₂x² + q₁x + q₀`.
    fn rhs(&self, q: [f64; 3]) -> [f64; 3] {
        let [q2, q1, _] = q;
        let th = self.theta;
        let k0 = self.a_hat - th * self.s * q1;
        let k1 = self.big_a_hat - th * self.s * q2;
        let den = (th + 1.0) * self.ss;
        let d2 = -2.0 * (self.big_b * q2 - 0.5 * th * self.ell2 * q2 * q2 + k1 * k1 / (2.0 * den));
        let d1 = -(self.b * q2 + self.big_b * q1 - th * self.ell2 * q2 * q1 + self.big_a0 + k0 * k1 / den);
        let d0 =
            -(self.b * q1 + 0.5 * self.ell2 * q2 - 0.5 * th * self.ell2 * q1 * q1 + self.a0 + k0 * k0 / (2.0 * den));
        [d2, d1, d0]
    }

    /// `(q₂, q₁, q₀)(t)` integrated backward from `T` with classical RK4.
    pub fn quadratic_ansatz(&self, horizon: f64, t: f64, steps: usize) -> [f64; 3] {
        let mut q = [0.0, 0.0, self.v.ln()];
        let h = -(horizon - t) / steps as f64;
        let add = |q: [f64; 3], d: [f64; 3], s: f64| [q[0] + s * d[0], q[1] + s * d[1], q[2] + s * d[2]];
        for _ in 0..steps {
            let k1 = self.rhs(q);
            let k2 = self.rhs(add(q, k1, 0.5 * h));
            let k3 = self.rhs(add(q, k2, 0.5 * h));
            let k4 = self.rhs(add(q, k3, h));
            for i in 0..3 {
                q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        q
    }

    /// `Φ(t, x)` from the quadratic ansatz.
    pub fn phi(&self, horizon: f64, t: f64, x: f64) -> f64 {
        let [q2, q1, q0] = self.quadratic_ansatz(horizon, t, 20_000);
        0.5 * q2 * x * x + q1 * x + q0
    }
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// F1 inner functional at `x`, `p`, written out term by term.
pub fn f1_inner(x: f64, p: f64, h: f64) -> f64 {
    let theta = 1.0;
    let quad = -0.5 * (theta + 1.0) * 0.0625 * h * h;
    let cross = -theta * h * 0.05 * p;
    let lin = h * (0.03 + 0.4 * x);
    let jumps: f64 = [(-0.15, 1.0), (0.10, 1.5)]
        .iter()
        .map(|(psi, lam)| {
            // (1+u)^{-1} - 1 + u without cancellation
            let u: f64 = h * psi;
            lam * u * u / (1.0 + u)
        })
        .sum();
    quad + cross + lin - jumps / theta
}

/// `f1_inner(x, p, h) − f1_inner(x, p, h0)` with every term factored through
/// `h − h0`, so rounding scales with the increment rather than the value.
pub fn f1_inner_increment(x: f64, p: f64, h0: f64, h: f64) -> f64 {
    let d = h - h0;
    let jumps: f64 = [(-0.15, 1.0), (0.10, 1.5)]
        .iter()
        .map(|(psi, lam)| {
            let (u, u0) = (h * psi, h0 * psi);
            lam * psi * d * (u + u0 + u * u0) / ((1.0 + u) * (1.0 + u0))
        })
        .sum();
    -0.0625 * d * (h + h0) - 0.05 * p * d + (0.03 + 0.4 * x) * d - jumps
}

/// Maximizer of the F1 inner functional by golden-section search: a coarse
/// pass on the values, then a pass on increments around the first estimate.
pub fn f1_inner_argmax(x: f64, p: f64) -> f64 {
    let rough = golden_max(|h| f1_inner(x, p, h), -9.999, 6.666, 1e-10);
    golden_max(
        |h| f1_inner_increment(x, p, rough, h),
        rough - 1e-4,
        rough + 1e-4,
        1e-15,
    )
}

/// Running cost of F1 written out term by term.
pub fn f1_g(x: f64, h: f64, big_a: f64, big_a0: f64) -> f64 {
    let theta = 1.0;
    let a_hat = 0.05 - 0.02;
    let big_a_hat = big_a - big_a0;
    let jumps: f64 = [(-0.15, 1.0), (0.10, 1.5)]
        .iter()
        .map(|(psi, lam)| {
            let u: f64 = h * psi;
            lam * (((1.0 + u).powf(-theta) - 1.0) / theta + u)
        })
        .sum();
    0.5 * (theta + 1.0) * 0.0625 * h * h - 0.02 - big_a0 * x - h * (a_hat + big_a_hat * x) + jumps
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Random valid models: one or two factors and assets, `M = n + m`, every
/// asset with an up and a down atom plus one mixed atom.
pub fn arb_model() -> impl proptest::strategy::Strategy<Value = riskjump::MarketModel> {
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use riskjump::{FactorLoading, JumpAtom, JumpMeasure, MarketModel};

    (1usize..=2, 1usize..=2).prop_flat_map(|(n, m)| {
        let big_m = n + m;
        let unit = -1.0f64..1.0;
        (
            prop::collection::vec(unit.clone(), n),
            prop::collection::vec(0.2f64..1.5, n),
            prop::collection::vec(-0.2f64..0.2, n * big_m),
            (0.0f64..0.05, prop::collection::vec(-0.05f64..0.05, n)),
            prop::collection::vec(-0.1f64..0.2, m),
            prop::collection::vec(-0.5f64..0.5, m * n),
            prop::collection::vec(0.1f64..0.4, m),
            prop::collection::vec(-0.05f64..0.05, m * big_m),
            prop::collection::vec((0.02f64..0.5, 0.02f64..0.5, 0.2f64..2.0, 0.2f64..2.0, any::<bool>()), m),
            (prop::collection::vec(-0.3f64..0.3, m), 0.1f64..1.0, any::<bool>()),
        )
            .prop_map(move |(b, kappa, lam, (a0, big_a0), a, big_a, vol, mix, atoms, extra)| {
                let mut sigma = DMatrix::from_row_slice(m, big_m, &mix);
                for i in 0..m {
                    sigma[(i, n + i)] += vol[i];
                }
                let mut jumps = Vec::new();
                for (i, (up, down, lu, ld, comp)) in atoms.into_iter().enumerate() {
                    let mut e = vec![0.0; m];
                    e[i] = up;
                    jumps.push(JumpAtom::new(e.clone(), lu, comp));
                    e[i] = -down;
                    jumps.push(JumpAtom::new(e, ld, true));
                }
                jumps.push(JumpAtom::new(extra.0, extra.1, extra.2));
                MarketModel {
                    factor_intercept: DVector::from_vec(b.iter().map(|v| 0.1 * v).collect()),
                    mean_reversion: DMatrix::from_diagonal(&DVector::from_vec(kappa.iter().map(|k| -k).collect())),
                    factor_loading: FactorLoading::Constant(DMatrix::from_row_slice(n, big_m, &lam)),
                    rate_intercept: a0,
                    rate_loading: DVector::from_vec(big_a0),
                    asset_intercept: DVector::from_vec(a),
                    asset_loading: DMatrix::from_row_slice(m, n, &big_a),
                    asset_volatility: sigma,
                    jumps: JumpMeasure::new(jumps),
                    pure_diffusion: false,
                }
            })
    })
}
