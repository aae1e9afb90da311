//! Control-affine dynamics, closed-loop flows and trajectory sensitivities.
//!
//! Flows are integrated with fixed-step classic RK4. Both sensitivity routes
//! differentiate the *discrete* RK4 map, so gradients are exact derivatives of
//! the sampled flow that the barrier functions consume:
//!
//! - forward: the state Jacobian `Q_i = ∂φ(x0, iT_s)/∂x0` is carried through every
//!   RK4 stage alongside the state (`n + n²` unknowns);
//! - adjoint: a cotangent is pulled back through each RK4 step in reverse, with
//!   injections at sample times. Stage states are re-integrated from the sample
//!   checkpoints, one sample interval at a time.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type Vector<const D: usize> = SVector<f64, D>;
pub type Matrix<const R: usize, const C: usize> = SMatrix<f64, R, C>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// The integrated state became non-finite. `last_valid` is the index of the
    /// last finite sample.
    #[error("integration diverged after sample {last_valid}")]
    Diverged { last_valid: usize },
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

/// Validates that every component is finite.
pub fn ensure_finite<const D: usize>(what: &str, v: &Vector<D>) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::InvalidInput(format!("{what} has non-finite entries: {v:?}")))
    }
}

/// Compact, convex box `lower ≤ u ≤ upper` of admissible controls.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleBox<const M: usize> {
    lower: Vector<M>,
    upper: Vector<M>,
}

impl<const M: usize> AdmissibleBox<M> {
    pub fn new(lower: Vector<M>, upper: Vector<M>) -> Result<Self> {
        ensure_finite("box lower bound", &lower)?;
        ensure_finite("box upper bound", &upper)?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(DynamicsError::InvalidInput(format!(
                "box lower bound {lower:?} exceeds upper bound {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-bound, bound]^M`.
    pub fn symmetric(bound: f64) -> Result<Self> {
        Self::new(Vector::repeat(-bound), Vector::repeat(bound))
    }

    pub fn lower(&self) -> &Vector<M> {
        &self.lower
    }

    pub fn upper(&self) -> &Vector<M> {
        &self.upper
    }

    pub fn midpoint(&self) -> Vector<M> {
        (self.lower + self.upper) * 0.5
    }

    pub fn half_width(&self) -> Vector<M> {
        (self.upper - self.lower) * 0.5
    }

    pub fn contains(&self, u: &Vector<M>) -> bool {
        (0..M).all(|i| u[i] >= self.lower[i] && u[i] <= self.upper[i])
    }

    pub fn clamp(&self, u: &Vector<M>) -> Vector<M> {
        Vector::from_fn(|i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }

    /// `max_{û ∈ box} c·û`, attained at the vertex selected by the signs of `c`.
    pub fn max_linear(&self, c: &Vector<M>) -> f64 {
        (0..M)
            .map(|i| if c[i] > 0.0 { c[i] * self.upper[i] } else { c[i] * self.lower[i] })
            .sum()
    }

    /// All `2^M` vertices.
    pub fn vertices(&self) -> Vec<Vector<M>> {
        (0..1usize << M)
            .map(|mask| {
                Vector::from_fn(|i, _| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
            })
            .collect()
    }
}

/// Control-affine system `ẋ = f(x) + g(x) u` with analytic Jacobians.
pub trait SystemModel<const N: usize, const M: usize>: Send + Sync {
    fn drift(&self, x: &Vector<N>) -> Vector<N>;
    fn actuation(&self, x: &Vector<N>) -> Matrix<N, M>;
    fn drift_jacobian(&self, x: &Vector<N>) -> Matrix<N, N>;
    /// State Jacobian of each column of `g`.
    fn actuation_jacobians(&self, x: &Vector<N>) -> [Matrix<N, N>; M];
    fn control_box(&self) -> &AdmissibleBox<M>;

    /// Closed-loop vector field `f̃_u(x)` for a given control value.
    fn closed_loop(&self, x: &Vector<N>, u: &Vector<M>) -> Vector<N> {
        self.drift(x) + self.actuation(x) * u
    }

    /// `∂f̃/∂x` for a feedback law with value `u` and input Jacobian `du_dx`.
    fn closed_loop_jacobian(
        &self,
        x: &Vector<N>,
        u: &Vector<M>,
        du_dx: &Matrix<M, N>,
    ) -> Matrix<N, N> {
        let mut a = self.drift_jacobian(x) + self.actuation(x) * du_dx;
        for (k, jg) in self.actuation_jacobians(x).iter().enumerate() {
            a += jg * u[k];
        }
        a
    }
}

/// State feedback `x ↦ u(x)` with an analytic input Jacobian.
pub trait Policy<const N: usize, const M: usize>: Send + Sync {
    fn control(&self, x: &Vector<N>) -> Vector<M>;
    fn jacobian(&self, x: &Vector<N>) -> Matrix<M, N>;

    fn control_and_jacobian(&self, x: &Vector<N>) -> (Vector<M>, Matrix<M, N>) {
        (self.control(x), self.jacobian(x))
    }
}

impl<P: Policy<N, M> + ?Sized, const N: usize, const M: usize> Policy<N, M> for &P {
    fn control(&self, x: &Vector<N>) -> Vector<M> {
        (**self).control(x)
    }
    fn jacobian(&self, x: &Vector<N>) -> Matrix<M, N> {
        (**self).jacobian(x)
    }
    fn control_and_jacobian(&self, x: &Vector<N>) -> (Vector<M>, Matrix<M, N>) {
        (**self).control_and_jacobian(x)
    }
}

/// Continuously differentiable scalar function of the state (safe-set and
/// backup-set functions).
pub trait ScalarField<const N: usize>: Send + Sync {
    fn value(&self, x: &Vector<N>) -> f64;
    fn gradient(&self, x: &Vector<N>) -> Vector<N>;
}

impl<F: ScalarField<N> + ?Sized, const N: usize> ScalarField<N> for &F {
    fn value(&self, x: &Vector<N>) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        (**self).gradient(x)
    }
}

/// Open-loop constant control; also the zero-order hold used by environments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy<const M: usize>(pub Vector<M>);

impl<const N: usize, const M: usize> Policy<N, M> for ConstantPolicy<M> {
    fn control(&self, _x: &Vector<N>) -> Vector<M> {
        self.0
    }
    fn jacobian(&self, _x: &Vector<N>) -> Matrix<M, N> {
        Matrix::zeros()
    }
}

/// Sampling grid of a finite-horizon flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    /// Horizon `T` in seconds.
    pub horizon: f64,
    /// Number of sample intervals `N`; samples are taken at `iT_s`, `i = 0..=N`.
    pub samples: usize,
    /// RK4 steps per sample interval.
    pub substeps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { horizon: 2.0, samples: 100, substeps: 10 }
    }
}

impl FlowConfig {
    pub fn new(horizon: f64, samples: usize, substeps: usize) -> Result<Self> {
        let cfg = Self { horizon, samples, substeps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(DynamicsError::InvalidInput(format!(
                "flow horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.samples == 0 || self.substeps == 0 {
            return Err(DynamicsError::InvalidInput(
                "flow samples and substeps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Sample spacing `T_s = T / N`.
    pub fn sample_spacing(&self) -> f64 {
        self.horizon / self.samples as f64
    }

    /// RK4 step size.
    pub fn step(&self) -> f64 {
        self.sample_spacing() / self.substeps as f64
    }

    /// Same horizon sampled `factor` times more densely.
    pub fn refined(&self, factor: usize) -> Self {
        Self { samples: self.samples * factor, ..*self }
    }
}

#[inline]
fn closed_loop_field<S, P, const N: usize, const M: usize>(sys: &S, policy: &P, x: &Vector<N>) -> Vector<N>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    sys.closed_loop(x, &policy.control(x))
}

#[inline]
fn closed_loop_field_jacobian<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    x: &Vector<N>,
) -> (Vector<N>, Matrix<N, N>)
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    let (u, du) = policy.control_and_jacobian(x);
    (sys.closed_loop(x, &u), sys.closed_loop_jacobian(x, &u, &du))
}

/// One classic RK4 step of the closed loop.
pub fn rk4_step<S, P, const N: usize, const M: usize>(sys: &S, policy: &P, x: &Vector<N>, h: f64) -> Vector<N>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    let k1 = closed_loop_field(sys, policy, x);
    let k2 = closed_loop_field(sys, policy, &(x + k1 * (0.5 * h)));
    let k3 = closed_loop_field(sys, policy, &(x + k2 * (0.5 * h)));
    let k4 = closed_loop_field(sys, policy, &(x + k3 * h));
    x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

fn is_finite<const N: usize>(x: &Vector<N>) -> bool {
    x.iter().all(|c| c.is_finite())
}

/// Samples `φ_u(x0, iT_s)` for `i = 0..=N`.
pub fn flow<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    x0: &Vector<N>,
    cfg: &FlowConfig,
) -> Result<Vec<Vector<N>>>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    ensure_finite("initial state", x0)?;
    cfg.validate()?;
    let h = cfg.step();
    let mut out = Vec::with_capacity(cfg.samples + 1);
    out.push(*x0);
    let mut x = *x0;
    for i in 0..cfg.samples {
        for _ in 0..cfg.substeps {
            x = rk4_step(sys, policy, &x, h);
        }
        if !is_finite(&x) {
            return Err(DynamicsError::Diverged { last_valid: i });
        }
        out.push(x);
    }
    Ok(out)
}

/// Advances `x` by `duration` under a closed loop with `substeps` RK4 steps.
pub fn advance<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    x: &Vector<N>,
    duration: f64,
    substeps: usize,
) -> Result<Vector<N>>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    ensure_finite("state", x)?;
    let steps = substeps.max(1);
    let h = duration / steps as f64;
    let mut y = *x;
    for _ in 0..steps {
        y = rk4_step(sys, policy, &y, h);
    }
    if !is_finite(&y) {
        return Err(DynamicsError::Diverged { last_valid: 0 });
    }
    Ok(y)
}

/// Forward sensitivities `Q_i = ∂φ(x0, iT_s)/∂x0` together with the samples.
pub fn flow_sensitivity_forward<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    x0: &Vector<N>,
    cfg: &FlowConfig,
) -> Result<(Vec<Vector<N>>, Vec<Matrix<N, N>>)>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    ensure_finite("initial state", x0)?;
    cfg.validate()?;
    let h = cfg.step();
    let mut xs = Vec::with_capacity(cfg.samples + 1);
    let mut qs = Vec::with_capacity(cfg.samples + 1);
    let mut x = *x0;
    let mut q = Matrix::<N, N>::identity();
    xs.push(x);
    qs.push(q);
    for i in 0..cfg.samples {
        for _ in 0..cfg.substeps {
            let (k1, a1) = closed_loop_field_jacobian(sys, policy, &x);
            let l1 = a1 * q;
            let (k2, a2) = closed_loop_field_jacobian(sys, policy, &(x + k1 * (0.5 * h)));
            let l2 = a2 * (q + l1 * (0.5 * h));
            let (k3, a3) = closed_loop_field_jacobian(sys, policy, &(x + k2 * (0.5 * h)));
            let l3 = a3 * (q + l2 * (0.5 * h));
            let (k4, a4) = closed_loop_field_jacobian(sys, policy, &(x + k3 * h));
            let l4 = a4 * (q + l3 * h);
            x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            q += (l1 + (l2 + l3) * 2.0 + l4) * (h / 6.0);
        }
        if !is_finite(&x) || q.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::Diverged { last_valid: i });
        }
        xs.push(x);
        qs.push(q);
    }
    Ok((xs, qs))
}

/// Pulls the cotangent `lambda` (w.r.t. the step output) back through one RK4
/// step taken from `x`. Returns the cotangent w.r.t. `x`.
fn rk4_step_vjp<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    x: &Vector<N>,
    h: f64,
    lambda: &Vector<N>,
) -> Vector<N>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    let (k1, a1) = closed_loop_field_jacobian(sys, policy, x);
    let y2 = x + k1 * (0.5 * h);
    let (k2, a2) = closed_loop_field_jacobian(sys, policy, &y2);
    let y3 = x + k2 * (0.5 * h);
    let (k3, a3) = closed_loop_field_jacobian(sys, policy, &y3);
    let y4 = x + k3 * h;
    let a4 = closed_loop_field_jacobian(sys, policy, &y4).1;

    let mut bar_x = *lambda;
    let bar_k4 = lambda * (h / 6.0);
    let mut bar_k3 = lambda * (h / 3.0);
    let mut bar_k2 = lambda * (h / 3.0);
    let mut bar_k1 = lambda * (h / 6.0);

    let bar_y4 = a4.tr_mul(&bar_k4);
    bar_x += bar_y4;
    bar_k3 += bar_y4 * h;
    let bar_y3 = a3.tr_mul(&bar_k3);
    bar_x += bar_y3;
    bar_k2 += bar_y3 * (0.5 * h);
    let bar_y2 = a2.tr_mul(&bar_k2);
    bar_x += bar_y2;
    bar_k1 += bar_y2 * (0.5 * h);
    bar_x += a1.tr_mul(&bar_k1);
    bar_x
}

/// Adjoint pass over stored sample checkpoints.
///
/// Returns `Σ_i v_iᵀ ∂φ(x0, iT_s)/∂x0`. Only the sample states are kept; the
/// RK4 substeps of each interval are re-integrated from its left checkpoint
/// during the backward sweep.
pub fn adjoint_with_checkpoints<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    checkpoints: &[Vector<N>],
    cfg: &FlowConfig,
    cotangents: &[(usize, Vector<N>)],
) -> Result<Vector<N>>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    if cotangents.is_empty() {
        return Err(DynamicsError::InvalidInput("cotangent list is empty".into()));
    }
    if checkpoints.len() != cfg.samples + 1 {
        return Err(DynamicsError::InvalidInput(format!(
            "expected {} checkpoints, got {}",
            cfg.samples + 1,
            checkpoints.len()
        )));
    }
    let mut seeds = vec![Vector::<N>::zeros(); cfg.samples + 1];
    let mut last = 0;
    for (i, v) in cotangents {
        if *i > cfg.samples {
            return Err(DynamicsError::InvalidInput(format!(
                "cotangent index {i} outside 0..={}",
                cfg.samples
            )));
        }
        seeds[*i] += v;
        last = last.max(*i);
    }
    let h = cfg.step();
    let mut lambda = seeds[last];
    let mut stages: Vec<Vector<N>> = Vec::with_capacity(cfg.substeps);
    for i in (0..last).rev() {
        stages.clear();
        stages.push(checkpoints[i]);
        for k in 1..cfg.substeps {
            stages.push(rk4_step(sys, policy, &stages[k - 1], h));
        }
        for xs in stages.iter().rev() {
            lambda = rk4_step_vjp(sys, policy, xs, h, &lambda);
        }
        lambda += seeds[i];
        if lambda.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::Diverged { last_valid: i });
        }
    }
    Ok(lambda)
}

/// Gradient `Σ_i v_iᵀ ∂φ(x0, iT_s)/∂x0` by backward adjoint integration.
pub fn flow_sensitivity_adjoint<S, P, const N: usize, const M: usize>(
    sys: &S,
    policy: &P,
    x0: &Vector<N>,
    cfg: &FlowConfig,
    cotangents: &[(usize, Vector<N>)],
) -> Result<Vector<N>>
where
    S: SystemModel<N, M> + ?Sized,
    P: Policy<N, M> + ?Sized,
{
    let checkpoints = flow(sys, policy, x0, cfg)?;
    adjoint_with_checkpoints(sys, policy, &checkpoints, cfg, cotangents)
}

/// Inverted pendulum about the upright equilibrium: `φ̈ = sin φ + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    control_box: AdmissibleBox<1>,
}

impl Pendulum {
    pub const MAX_TORQUE: f64 = 1.5;

    pub fn new(max_torque: f64) -> Result<Self> {
        Ok(Self { control_box: AdmissibleBox::symmetric(max_torque)? })
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        make_pendulum()
    }
}

/// The benchmark pendulum with torque box `[-1.5, 1.5]`.
pub fn make_pendulum() -> Pendulum {
    Pendulum::new(Pendulum::MAX_TORQUE).expect("constant box is valid")
}

impl SystemModel<2, 1> for Pendulum {
    fn drift(&self, x: &Vector<2>) -> Vector<2> {
        Vector::<2>::new(x[1], x[0].sin())
    }

    fn actuation(&self, _x: &Vector<2>) -> Matrix<2, 1> {
        Matrix::<2, 1>::new(0.0, 1.0)
    }

    fn drift_jacobian(&self, x: &Vector<2>) -> Matrix<2, 2> {
        Matrix::<2, 2>::new(0.0, 1.0, x[0].cos(), 0.0)
    }

    fn actuation_jacobians(&self, _x: &Vector<2>) -> [Matrix<2, 2>; 1] {
        [Matrix::zeros()]
    }

    fn control_box(&self) -> &AdmissibleBox<1> {
        &self.control_box
    }

    fn closed_loop(&self, x: &Vector<2>, u: &Vector<1>) -> Vector<2> {
        Vector::<2>::new(x[1], x[0].sin() + u[0])
    }

    fn closed_loop_jacobian(&self, x: &Vector<2>, _u: &Vector<1>, du_dx: &Matrix<1, 2>) -> Matrix<2, 2> {
        Matrix::<2, 2>::new(0.0, 1.0, x[0].cos() + du_dx[(0, 0)], du_dx[(0, 1)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `ẋ = A x`, used with the matrix-exponential oracle.
    struct Linear {
        a: Matrix<2, 2>,
        bx: AdmissibleBox<1>,
    }

    impl SystemModel<2, 1> for Linear {
        fn drift(&self, x: &Vector<2>) -> Vector<2> {
            self.a * x
        }
        fn actuation(&self, _x: &Vector<2>) -> Matrix<2, 1> {
            Matrix::zeros()
        }
        fn drift_jacobian(&self, _x: &Vector<2>) -> Matrix<2, 2> {
            self.a
        }
        fn actuation_jacobians(&self, _x: &Vector<2>) -> [Matrix<2, 2>; 1] {
            [Matrix::zeros()]
        }
        fn control_box(&self) -> &AdmissibleBox<1> {
            &self.bx
        }
    }

    /// Saturated linear feedback used only in these tests.
    struct Feedback;

    impl Policy<2, 1> for Feedback {
        fn control(&self, x: &Vector<2>) -> Vector<1> {
            Vector::<1>::new(1.5 * ((-15.0 * x[0] - 15.0 * x[1]) / 1.5).tanh())
        }
        fn jacobian(&self, x: &Vector<2>) -> Matrix<1, 2> {
            let t = ((-15.0 * x[0] - 15.0 * x[1]) / 1.5).tanh();
            let d = 1.0 - t * t;
            Matrix::<1, 2>::new(-15.0 * d, -15.0 * d)
        }
    }

    /// Scaling-and-squaring Taylor exponential; independent of the RK4 path.
    fn expm(a: &Matrix<2, 2>) -> Matrix<2, 2> {
        let norm = a.abs().row_sum().max();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let b = a / 2f64.powi(s);
        let mut term = Matrix::<2, 2>::identity();
        let mut sum = term;
        for k in 1..30 {
            term = term * b / k as f64;
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    fn zero() -> ConstantPolicy<1> {
        ConstantPolicy(Vector::<1>::zeros())
    }

    #[test]
    fn pendulum_vector_field() {
        let p = make_pendulum();
        assert_eq!(p.drift(&Vector::<2>::zeros()), Vector::<2>::zeros());
        let f = p.drift(&Vector::<2>::new(std::f64::consts::FRAC_PI_2, 1.0));
        assert_relative_eq!(f, Vector::<2>::new(1.0, 1.0), epsilon = 1e-15);
        assert_eq!(p.drift_jacobian(&Vector::<2>::zeros()), Matrix::<2, 2>::new(0.0, 1.0, 1.0, 0.0));
        assert_eq!(p.control_box().upper()[0], 1.5);
    }

    #[test]
    fn pendulum_jacobians_match_finite_differences() {
        let p = make_pendulum();
        for &(a, b) in &[(0.3, -0.7), (2.0, 1.1), (-1.2, 0.4)] {
            let x = Vector::<2>::new(a, b);
            let j = p.drift_jacobian(&x);
            let eps = 1e-6;
            for c in 0..2 {
                let mut e = Vector::<2>::zeros();
                e[c] = eps;
                let fd = (p.drift(&(x + e)) - p.drift(&(x - e))) / (2.0 * eps);
                for r in 0..2 {
                    assert!((fd[r] - j[(r, c)]).abs() <= 1e-5 * (1.0 + j[(r, c)].abs()));
                }
            }
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let cfg = FlowConfig::new(3.0, 30, 4).unwrap();
        let xs = flow(&make_pendulum(), &zero(), &Vector::<2>::zeros(), &cfg).unwrap();
        assert_eq!(xs.len(), 31);
        assert!(xs.iter().all(|x| *x == Vector::<2>::zeros()));
    }

    #[test]
    fn flow_matches_fine_step_reference() {
        let p = make_pendulum();
        let x0 = Vector::<2>::new(0.1, 0.0);
        let cfg = FlowConfig::new(1.0, 10, 10).unwrap();
        let coarse = flow(&p, &zero(), &x0, &cfg).unwrap();
        let fine = flow(&p, &zero(), &x0, &FlowConfig::new(1.0, 10, 1000).unwrap()).unwrap();
        assert!((coarse[10] - fine[10]).norm() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_initial_state() {
        let cfg = FlowConfig::default();
        let err = flow(&make_pendulum(), &zero(), &Vector::<2>::new(f64::NAN, 0.0), &cfg).unwrap_err();
        assert!(matches!(err, DynamicsError::InvalidInput(_)));
    }

    #[test]
    fn divergence_reports_last_valid_sample() {
        let lin = Linear { a: Matrix::<2, 2>::new(1e30, 0.0, 0.0, 0.0), bx: AdmissibleBox::symmetric(1.0).unwrap() };
        let cfg = FlowConfig::new(10.0, 10, 1).unwrap();
        let err = flow(&lin, &zero(), &Vector::<2>::new(1.0, 0.0), &cfg).unwrap_err();
        assert!(matches!(err, DynamicsError::Diverged { .. }));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = make_pendulum();
        let x0 = Vector::<2>::new(0.4, -0.2);
        let reference = flow(&p, &Feedback, &x0, &FlowConfig::new(1.0, 1, 4096).unwrap()).unwrap()[1];
        let err = |k: usize| {
            let y = flow(&p, &Feedback, &x0, &FlowConfig::new(1.0, 1, k).unwrap()).unwrap()[1];
            (y - reference).norm()
        };
        let ratio = err(16) / err(32);
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn forward_sensitivity_starts_at_identity() {
        let cfg = FlowConfig::new(0.5, 5, 2).unwrap();
        let (_, qs) = flow_sensitivity_forward(&make_pendulum(), &Feedback, &Vector::<2>::new(0.05, 0.0), &cfg).unwrap();
        assert_eq!(qs[0], Matrix::<2, 2>::identity());
    }

    #[test]
    fn forward_sensitivity_matches_finite_differences() {
        let p = make_pendulum();
        let cfg = FlowConfig::new(0.5, 25, 4).unwrap();
        let x0 = Vector::<2>::new(0.05, 0.0);
        let (_, qs) = flow_sensitivity_forward(&p, &Feedback, &x0, &cfg).unwrap();
        let q = qs[cfg.samples];
        let eps = 1e-5;
        for c in 0..2 {
            let mut e = Vector::<2>::zeros();
            e[c] = eps;
            let plus = flow(&p, &Feedback, &(x0 + e), &cfg).unwrap()[cfg.samples];
            let minus = flow(&p, &Feedback, &(x0 - e), &cfg).unwrap()[cfg.samples];
            let fd = (plus - minus) / (2.0 * eps);
            let col = q.column(c);
            assert!((fd - col).norm() <= 1e-4 * fd.norm().max(1e-3), "{fd} vs {col}");
        }
    }

    #[test]
    fn linear_sensitivities_match_matrix_exponential() {
        let a = Matrix::<2, 2>::new(-0.3, 1.0, -2.0, -0.5);
        let lin = Linear { a, bx: AdmissibleBox::symmetric(1.0).unwrap() };
        let cfg = FlowConfig::new(2.0, 20, 10).unwrap();
        let (_, qs) = flow_sensitivity_forward(&lin, &zero(), &Vector::<2>::new(1.0, 0.5), &cfg).unwrap();
        for (i, q) in qs.iter().enumerate() {
            let exact = expm(&(a * (i as f64 * cfg.sample_spacing())));
            assert!((q - exact).abs().max() < 1e-6, "i={i}");
        }
        let v = Vector::<2>::new(0.7, -1.3);
        let g = flow_sensitivity_adjoint(&lin, &zero(), &Vector::<2>::new(1.0, 0.5), &cfg, &[(cfg.samples, v)]).unwrap();
        let exact = expm(&(a * cfg.horizon)).tr_mul(&v);
        assert!((g - exact).abs().max() < 1e-6);
    }

    #[test]
    fn adjoint_at_time_zero_is_identity() {
        let cfg = FlowConfig::new(1.0, 10, 2).unwrap();
        let e1 = Vector::<2>::new(1.0, 0.0);
        let g = flow_sensitivity_adjoint(&make_pendulum(), &Feedback, &Vector::<2>::new(0.2, 0.1), &cfg, &[(0, e1)]).unwrap();
        assert_eq!(g, e1);
    }

    #[test]
    fn adjoint_matches_forward_contraction() {
        let p = make_pendulum();
        let cfg = FlowConfig::new(1.0, 20, 3).unwrap();
        let x0 = Vector::<2>::new(0.3, -0.4);
        let (_, qs) = flow_sensitivity_forward(&p, &Feedback, &x0, &cfg).unwrap();
        let cot: Vec<(usize, Vector<2>)> =
            (0..=cfg.samples).step_by(3).map(|i| (i, Vector::<2>::new(0.1 * i as f64, 1.0 - 0.05 * i as f64))).collect();
        let forward: Vector<2> = cot.iter().map(|(i, v)| qs[*i].tr_mul(v)).sum();
        let adjoint = flow_sensitivity_adjoint(&p, &Feedback, &x0, &cfg, &cot).unwrap();
        assert!((forward - adjoint).norm() <= 1e-10 * forward.norm());
    }

    #[test]
    fn adjoint_rejects_bad_cotangents() {
        let cfg = FlowConfig::new(1.0, 10, 1).unwrap();
        let x0 = Vector::<2>::zeros();
        assert!(flow_sensitivity_adjoint(&make_pendulum(), &Feedback, &x0, &cfg, &[]).is_err());
        assert!(flow_sensitivity_adjoint(&make_pendulum(), &Feedback, &x0, &cfg, &[(11, x0)]).is_err());
    }

    #[test]
    fn box_helpers() {
        let b = AdmissibleBox::<1>::symmetric(1.5).unwrap();
        assert_eq!(b.max_linear(&Vector::<1>::new(2.0)), 3.0);
        assert_eq!(b.max_linear(&Vector::<1>::new(-2.0)), 3.0);
        assert_eq!(b.clamp(&Vector::<1>::new(7.0))[0], 1.5);
        assert_eq!(b.vertices().len(), 2);
        assert!(AdmissibleBox::<1>::new(Vector::<1>::new(1.0), Vector::<1>::new(0.0)).is_err());
    }
}
