//! Feedback allocation rules `h(t, x)`.

/// A measurable feedback rule. Implementations must be cheap to evaluate and
/// must not allocate: simulations call them once per path and time step.
pub trait FeedbackPolicy: Sync {
    /// Number of assets, the length of the control written by [`evaluate`](Self::evaluate).
    fn control_dim(&self) -> usize;

    fn evaluate(&self, t: f64, x: &[f64], h: &mut [f64]);
}

/// The same allocation at every time and state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl ConstantPolicy {
    pub fn new(h: Vec<f64>) -> Self {
        Self(h)
    }

    pub fn zero(m: usize) -> Self {
        Self(vec![0.0; m])
    }
}

impl FeedbackPolicy for ConstantPolicy {
    fn control_dim(&self) -> usize {
        self.0.len()
    }

    fn evaluate(&self, _t: f64, _x: &[f64], h: &mut [f64]) {
        h.copy_from_slice(&self.0);
    }
}

/// Wraps a closure `(t, x, h_out)`.
pub struct FnPolicy<F> {
    dim: usize,
    rule: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, rule: F) -> Self {
        Self { dim, rule }
    }
}

impl<F> FeedbackPolicy for FnPolicy<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn control_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, t: f64, x: &[f64], h: &mut [f64]) {
        (self.rule)(t, x, h)
    }
}
