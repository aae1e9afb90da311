//! Backup sets, backup policies and the neural backup policy.
//!
//! Indices are zero-based: designed backups occupy `0..ℓ` and the neural backup,
//! when present, is index `ℓ`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dynamics::{
    advance, AdmissibleBox, DynamicsError, Matrix, Policy, ScalarField, SystemModel, Vector,
};
use crate::nn::{Activation, Mlp, NnError};
use crate::soft::{softmax, softmax_weights, SoftError};

#[derive(Debug, Error)]
pub enum BackupError {
    /// Two or more designed backup sets are active at `x` (their
    /// `(-ν)`-superlevel sets overlap).
    #[error("backup sets {indices:?} overlap at {x:?}")]
    Overlap { x: Vec<f64>, indices: Vec<usize> },
    #[error("backup {index} left its set during screening (min value {min_value:.3e})")]
    NotInvariant { index: usize, min_value: f64 },
    #[error("invalid backup configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Soft(#[from] SoftError),
}

pub type Result<T> = std::result::Result<T, BackupError>;

/// `level - (x - center)ᵀ P (x - center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBackupSet<const N: usize> {
    center: Vector<N>,
    shape: Matrix<N, N>,
    level: f64,
}

impl<const N: usize> QuadraticBackupSet<N> {
    pub fn new(center: Vector<N>, shape: Matrix<N, N>, level: f64) -> Result<Self> {
        if (shape - shape.transpose()).abs().max() > 1e-12 {
            return Err(BackupError::Config("shape matrix must be symmetric".into()));
        }
        if shape.cholesky().is_none() {
            return Err(BackupError::Config("shape matrix must be positive definite".into()));
        }
        if !(level.is_finite() && level > 0.0) {
            return Err(BackupError::Config(format!("level must be positive, got {level}")));
        }
        Ok(Self { center, shape, level })
    }

    pub fn center(&self) -> &Vector<N> {
        &self.center
    }

    pub fn shape(&self) -> &Matrix<N, N> {
        &self.shape
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Axis-aligned box enclosing `{value ≥ -margin}`.
    pub fn bounding_box(&self, margin: f64) -> (Vector<N>, Vector<N>) {
        let inv = self.shape.try_inverse().expect("positive definite");
        let half = Vector::<N>::from_fn(|i, _| ((self.level + margin) * inv[(i, i)]).sqrt());
        (self.center - half, self.center + half)
    }
}

impl<const N: usize> ScalarField<N> for QuadraticBackupSet<N> {
    fn value(&self, x: &Vector<N>) -> f64 {
        let d = x - self.center;
        self.level - d.dot(&(self.shape * d))
    }

    fn gradient(&self, x: &Vector<N>) -> Vector<N> {
        (self.shape * (x - self.center)) * -2.0
    }
}

/// `u = ū ⊙ tanh(K (x - center) ⊘ ū)` for a box symmetric about the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedLinearPolicy<const N: usize, const M: usize> {
    gain: Matrix<M, N>,
    center: Vector<N>,
    limit: Vector<M>,
}

impl<const N: usize, const M: usize> SaturatedLinearPolicy<N, M> {
    pub fn new(gain: Matrix<M, N>, center: Vector<N>, control_box: &AdmissibleBox<M>) -> Result<Self> {
        if control_box.midpoint().iter().any(|c| c.abs() > 1e-12) {
            return Err(BackupError::Config("saturated linear policy needs a symmetric box".into()));
        }
        let limit = control_box.half_width();
        if limit.iter().any(|l| *l <= 0.0) {
            return Err(BackupError::Config("control box has zero width".into()));
        }
        Ok(Self { gain, center, limit })
    }

    pub fn gain(&self) -> &Matrix<M, N> {
        &self.gain
    }
}

impl<const N: usize, const M: usize> Policy<N, M> for SaturatedLinearPolicy<N, M> {
    fn control(&self, x: &Vector<N>) -> Vector<M> {
        let v = self.gain * (x - self.center);
        Vector::<M>::from_fn(|k, _| self.limit[k] * (v[k] / self.limit[k]).tanh())
    }

    fn jacobian(&self, x: &Vector<N>) -> Matrix<M, N> {
        self.control_and_jacobian(x).1
    }

    fn control_and_jacobian(&self, x: &Vector<N>) -> (Vector<M>, Matrix<M, N>) {
        let v = self.gain * (x - self.center);
        let mut u = Vector::<M>::zeros();
        let mut jac = self.gain;
        for k in 0..M {
            let t = (v[k] / self.limit[k]).tanh();
            u[k] = self.limit[k] * t;
            jac.row_mut(k).scale_mut(1.0 - t * t);
        }
        (u, jac)
    }
}

/// C¹ smoothstep: 0 for `t ≤ 0`, 1 for `t ≥ 1`, `3t² - 2t³` in between.
#[inline]
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[inline]
pub fn smoothstep_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        6.0 * t * (1.0 - t)
    }
}

/// Blending weight `ξ`: 0 at or below `-ν`, 1 at or above 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomotopyXi {
    nu: f64,
}

impl HomotopyXi {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(BackupError::Config(format!("blend width must be positive, got {nu}")));
        }
        Ok(Self { nu })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn value(&self, a: f64) -> f64 {
        smoothstep((a + self.nu) / self.nu)
    }

    pub fn derivative(&self, a: f64) -> f64 {
        smoothstep_derivative((a + self.nu) / self.nu) / self.nu
    }
}

/// MLP whose first `M` outputs are squashed into the control box:
/// `u = mid + half ⊙ tanh(out[..M])`. Further outputs (e.g. a log-std head)
/// are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy<const N: usize, const M: usize> {
    net: Mlp,
    offset: Vector<M>,
    scale: Vector<M>,
}

impl<const N: usize, const M: usize> MlpPolicy<N, M> {
    pub fn new(net: Mlp, control_box: &AdmissibleBox<M>) -> Result<Self> {
        if net.input_dim() != N || net.output_dim() < M {
            return Err(BackupError::Config(format!(
                "network maps {} -> {}, need {N} -> at least {M}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(Self { net, offset: control_box.midpoint(), scale: control_box.half_width() })
    }

    /// Randomly initialised policy with the given hidden widths.
    pub fn random<R: Rng + ?Sized>(
        hidden: &[usize],
        outputs: usize,
        activation: Activation,
        control_box: &AdmissibleBox<M>,
        rng: &mut R,
    ) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(N).chain(hidden.iter().copied()).chain([outputs]).collect();
        Self::new(Mlp::new(&widths, activation, rng)?, control_box)
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn offset(&self) -> &Vector<M> {
        &self.offset
    }

    pub fn scale(&self) -> &Vector<M> {
        &self.scale
    }

    /// Replaces all weights at once.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)?;
        Ok(())
    }

    pub fn replace_net(&mut self, net: Mlp) -> Result<()> {
        if net.input_dim() != N || net.output_dim() < M {
            return Err(BackupError::Config("replacement network has the wrong shape".into()));
        }
        self.net = net;
        Ok(())
    }

    /// Deterministic action for a batch of states (`N × batch`), `M × batch`.
    pub fn control_batch(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let out = self.net.forward_batch(xs).output;
        DMatrix::from_fn(M, xs.ncols(), |k, c| self.offset[k] + self.scale[k] * out[(k, c)].tanh())
    }
}

impl<const N: usize, const M: usize> Policy<N, M> for MlpPolicy<N, M> {
    fn control(&self, x: &Vector<N>) -> Vector<M> {
        let mut out = Vector::<M>::zeros();
        self.net.forward_head(x.as_slice(), out.as_mut_slice());
        Vector::<M>::from_fn(|k, _| self.offset[k] + self.scale[k] * out[k].tanh())
    }

    fn jacobian(&self, x: &Vector<N>) -> Matrix<M, N> {
        self.control_and_jacobian(x).1
    }

    fn control_and_jacobian(&self, x: &Vector<N>) -> (Vector<M>, Matrix<M, N>) {
        let mut out = Vector::<M>::zeros();
        // Row-major `M × N`, i.e. the column-major layout of `N × M`.
        let mut rows = Matrix::<N, M>::zeros();
        self.net.jacobian_head(x.as_slice(), out.as_mut_slice(), rows.as_mut_slice());
        let mut u = Vector::<M>::zeros();
        let mut jac = rows.transpose();
        for k in 0..M {
            let t = out[k].tanh();
            u[k] = self.offset[k] + self.scale[k] * t;
            jac.row_mut(k).scale_mut(self.scale[k] * (1.0 - t * t));
        }
        (u, jac)
    }
}

/// A designed backup: its set function and the policy that keeps it invariant.
pub struct DesignedBackup<const N: usize, const M: usize> {
    pub set: Box<dyn ScalarField<N>>,
    pub policy: Box<dyn Policy<N, M>>,
}

/// The learned backup policy with its blending and set sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralBackup<const N: usize, const M: usize> {
    pub policy: MlpPolicy<N, M>,
    pub xi: HomotopyXi,
    /// Sharpness of the soft maximum defining the neural backup set.
    pub rho: f64,
}

pub struct BackupSuite<const N: usize, const M: usize> {
    designed: Vec<DesignedBackup<N, M>>,
    neural: Option<NeuralBackup<N, M>>,
}

impl<const N: usize, const M: usize> std::fmt::Debug for BackupSuite<N, M> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackupSuite")
            .field("designed", &self.designed.len())
            .field("neural", &self.neural.is_some())
            .finish()
    }
}

impl<const N: usize, const M: usize> BackupSuite<N, M> {
    pub fn new(designed: Vec<DesignedBackup<N, M>>, neural: Option<NeuralBackup<N, M>>) -> Result<Self> {
        if designed.is_empty() {
            return Err(BackupError::Config("at least one designed backup is required".into()));
        }
        if let Some(n) = &neural {
            if !(n.rho.is_finite() && n.rho > 0.0) {
                return Err(BackupError::Config(format!("neural backup sharpness must be positive, got {}", n.rho)));
            }
        }
        Ok(Self { designed, neural })
    }

    /// Number of designed backups `ℓ`.
    pub fn designed_len(&self) -> usize {
        self.designed.len()
    }

    /// Total number of backups (`ℓ` or `ℓ + 1`).
    pub fn len(&self) -> usize {
        self.designed.len() + usize::from(self.neural.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn designed(&self) -> &[DesignedBackup<N, M>] {
        &self.designed
    }

    pub fn neural(&self) -> Option<&NeuralBackup<N, M>> {
        self.neural.as_ref()
    }

    pub fn neural_mut(&mut self) -> Option<&mut NeuralBackup<N, M>> {
        self.neural.as_mut()
    }

    pub fn set_neural(&mut self, neural: Option<NeuralBackup<N, M>>) {
        self.neural = neural;
    }

    pub fn is_neural(&self, j: usize) -> bool {
        self.neural.is_some() && j == self.designed.len()
    }

    fn neural_ref(&self) -> &NeuralBackup<N, M> {
        self.neural.as_ref().expect("suite has no neural backup")
    }

    /// Backup-set function of index `j`; the neural index uses the soft maximum
    /// of the designed set functions.
    pub fn set_value(&self, j: usize, x: &Vector<N>) -> f64 {
        if j < self.designed.len() {
            self.designed[j].set.value(x)
        } else {
            self.neural_set_value(x)
        }
    }

    pub fn set_gradient(&self, j: usize, x: &Vector<N>) -> Vector<N> {
        if j < self.designed.len() {
            return self.designed[j].set.gradient(x);
        }
        let values = self.designed_values(x);
        let w = softmax_weights(self.neural_ref().rho, &values).expect("nonempty, validated sharpness");
        self.designed.iter().zip(w).filter(|(_, w)| *w != 0.0).map(|(d, w)| d.set.gradient(x) * w).sum()
    }

    fn designed_values(&self, x: &Vector<N>) -> Vec<f64> {
        self.designed.iter().map(|d| d.set.value(x)).collect()
    }

    /// Soft maximum of the designed set functions. Panics if the suite has no
    /// neural backup.
    pub fn neural_set_value(&self, x: &Vector<N>) -> f64 {
        softmax(self.neural_ref().rho, &self.designed_values(x)).expect("nonempty, validated sharpness")
    }

    /// `max_j h_bj(x)` over the designed sets.
    pub fn max_designed_value(&self, x: &Vector<N>) -> f64 {
        self.designed.iter().map(|d| d.set.value(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn blend_width(&self) -> f64 {
        self.neural.as_ref().map_or(0.0, |n| n.xi.nu())
    }

    /// The unique designed index with `h_bj(x) ≥ -ν`, if any.
    pub fn active_backup_index(&self, x: &Vector<N>) -> Result<Option<usize>> {
        let nu = self.blend_width();
        let active: Vec<usize> = (0..self.designed.len()).filter(|&j| self.designed[j].set.value(x) >= -nu).collect();
        match active.len() {
            0 => Ok(None),
            1 => Ok(Some(active[0])),
            _ => Err(BackupError::Overlap { x: x.iter().copied().collect(), indices: active }),
        }
    }

    /// Active index for use inside flows: overlaps resolve to the largest set value.
    fn active_lenient(&self, x: &Vector<N>) -> Option<(usize, f64)> {
        let nu = self.blend_width();
        self.designed
            .iter()
            .enumerate()
            .map(|(j, d)| (j, d.set.value(x)))
            .filter(|(_, v)| *v >= -nu)
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
    }

    fn blended(&self, x: &Vector<N>, active: Option<(usize, f64)>) -> Vector<M> {
        let n = self.neural_ref();
        match active {
            Some((j, hb)) if hb >= 0.0 => self.designed[j].policy.control(x),
            Some((j, hb)) => {
                let w = n.xi.value(hb);
                self.designed[j].policy.control(x) * w + n.policy.control(x) * (1.0 - w)
            }
            None => n.policy.control(x),
        }
    }

    fn blended_with_jacobian(&self, x: &Vector<N>, active: Option<(usize, f64)>) -> (Vector<M>, Matrix<M, N>) {
        let n = self.neural_ref();
        match active {
            Some((j, hb)) if hb >= 0.0 => self.designed[j].policy.control_and_jacobian(x),
            Some((j, hb)) => {
                let w = n.xi.value(hb);
                let dw = n.xi.derivative(hb);
                let (ub, jb) = self.designed[j].policy.control_and_jacobian(x);
                let (up, jp) = n.policy.control_and_jacobian(x);
                let grad = self.designed[j].set.gradient(x);
                let u = ub * w + up * (1.0 - w);
                let jac = jb * w + jp * (1.0 - w) + (ub - up) * (grad.transpose() * dw);
                (u, jac)
            }
            None => n.policy.control_and_jacobian(x),
        }
    }

    /// Neural backup control with homotopy blending toward the active designed
    /// backup. Panics if the suite has no neural backup.
    pub fn neural_backup_control(&self, x: &Vector<N>) -> Result<Vector<M>> {
        let active = self.active_backup_index(x)?.map(|j| (j, self.designed[j].set.value(x)));
        Ok(self.blended(x, active))
    }

    /// Exact input Jacobian of [`Self::neural_backup_control`].
    pub fn neural_backup_jacobian(&self, x: &Vector<N>) -> Result<Matrix<M, N>> {
        let active = self.active_backup_index(x)?.map(|j| (j, self.designed[j].set.value(x)));
        Ok(self.blended_with_jacobian(x, active).1)
    }

    /// Policy of backup `j` usable inside flows.
    pub fn policy(&self, j: usize) -> SuitePolicy<'_, N, M> {
        assert!(j < self.len(), "backup index {j} out of range");
        SuitePolicy { suite: self, index: j }
    }

    /// Checks on a grid over `[lower, upper]` that at most one designed set is
    /// active at every node.
    pub fn check_disjoint(&self, lower: &Vector<N>, upper: &Vector<N>, per_dim: usize) -> Result<()> {
        let per_dim = per_dim.max(2);
        let total = per_dim.pow(N as u32);
        for flat in 0..total {
            let mut rem = flat;
            let x = Vector::<N>::from_fn(|i, _| {
                let k = rem % per_dim;
                rem /= per_dim;
                lower[i] + (upper[i] - lower[i]) * k as f64 / (per_dim - 1) as f64
            });
            self.active_backup_index(&x)?;
        }
        Ok(())
    }
}

/// One member of a [`BackupSuite`] viewed as a feedback law.
#[derive(Clone, Copy)]
pub struct SuitePolicy<'a, const N: usize, const M: usize> {
    suite: &'a BackupSuite<N, M>,
    index: usize,
}

impl<const N: usize, const M: usize> SuitePolicy<'_, N, M> {
    pub fn index(&self) -> usize {
        self.index
    }
}

impl<const N: usize, const M: usize> Policy<N, M> for SuitePolicy<'_, N, M> {
    fn control(&self, x: &Vector<N>) -> Vector<M> {
        if self.index < self.suite.designed.len() {
            self.suite.designed[self.index].policy.control(x)
        } else {
            self.suite.blended(x, self.suite.active_lenient(x))
        }
    }

    fn jacobian(&self, x: &Vector<N>) -> Matrix<M, N> {
        self.control_and_jacobian(x).1
    }

    fn control_and_jacobian(&self, x: &Vector<N>) -> (Vector<M>, Matrix<M, N>) {
        if self.index < self.suite.designed.len() {
            self.suite.designed[self.index].policy.control_and_jacobian(x)
        } else {
            self.suite.blended_with_jacobian(x, self.suite.active_lenient(x))
        }
    }
}

/// Outcome of simulating a backup policy from random states inside its set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningReport {
    pub index: usize,
    pub rollouts: usize,
    /// Smallest set value seen over all samples of all rollouts.
    pub min_value: f64,
}

/// Simulation settings for invariance screening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningConfig {
    pub rollouts: usize,
    pub duration: f64,
    pub dt: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self { rollouts: 1000, duration: 10.0, dt: 0.01, tolerance: 1e-3, seed: 0 }
    }
}

/// Draws uniform samples from `{set ≥ 0}` by rejection inside `[lower, upper]`.
pub fn sample_superlevel<F: ScalarField<N> + ?Sized, R: Rng + ?Sized, const N: usize>(
    set: &F,
    lower: &Vector<N>,
    upper: &Vector<N>,
    rng: &mut R,
) -> Vector<N> {
    loop {
        let x = Vector::<N>::from_fn(|i, _| rng.random_range(lower[i]..=upper[i]));
        if set.value(&x) >= 0.0 {
            return x;
        }
    }
}

/// Simulates backup `j` of the suite from random states in its quadratic set
/// and records the smallest set value along the way.
pub fn screen_invariance<S: SystemModel<N, M>, const N: usize, const M: usize>(
    sys: &S,
    set: &QuadraticBackupSet<N>,
    policy: &dyn Policy<N, M>,
    index: usize,
    cfg: &ScreeningConfig,
) -> Result<ScreeningReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
    let (lo, hi) = set.bounding_box(0.0);
    let steps = (cfg.duration / cfg.dt).round() as usize;
    let mut min_value = f64::INFINITY;
    for _ in 0..cfg.rollouts {
        let mut x = sample_superlevel(set, &lo, &hi, &mut rng);
        min_value = min_value.min(set.value(&x));
        for _ in 0..steps {
            x = advance(sys, &policy, &x, cfg.dt, 1)?;
            min_value = min_value.min(set.value(&x));
        }
    }
    Ok(ScreeningReport { index, rollouts: cfg.rollouts, min_value })
}

/// Default feedback gain of the pendulum backup policies.
pub const PENDULUM_GAIN: [f64; 2] = [-15.0, -15.0];
/// Default blend width `ν` of the pendulum suite.
pub const PENDULUM_BLEND_WIDTH: f64 = 0.005;
/// Level of the pendulum backup sets.
pub const PENDULUM_SET_LEVEL: f64 = 0.02;

/// The two quadratic backup sets of the pendulum benchmark.
pub fn pendulum_backup_sets() -> [QuadraticBackupSet<2>; 2] {
    let p1 = Matrix::<2, 2>::new(0.625, 0.125, 0.125, 0.125);
    let p2 = Matrix::<2, 2>::new(0.650, 0.150, 0.150, 0.240);
    [
        QuadraticBackupSet::new(Vector::<2>::new(0.0, 0.0), p1, PENDULUM_SET_LEVEL).expect("constant set is valid"),
        QuadraticBackupSet::new(Vector::<2>::new(std::f64::consts::FRAC_PI_2, 0.0), p2, PENDULUM_SET_LEVEL)
            .expect("constant set is valid"),
    ]
}

/// Builds the pendulum suite and screens every designed backup for invariance.
pub fn make_pendulum_suite<S: SystemModel<2, 1>>(
    sys: &S,
    gain: [f64; 2],
    neural: Option<NeuralBackup<2, 1>>,
    screening: &ScreeningConfig,
) -> Result<BackupSuite<2, 1>> {
    let k = Matrix::<1, 2>::new(gain[0], gain[1]);
    let mut designed = Vec::with_capacity(2);
    for (j, set) in pendulum_backup_sets().into_iter().enumerate() {
        let policy = SaturatedLinearPolicy::new(k, *set.center(), sys.control_box())?;
        if screening.rollouts > 0 {
            let report = screen_invariance(sys, &set, &policy, j, screening)?;
            if report.min_value < -screening.tolerance {
                return Err(BackupError::NotInvariant { index: j, min_value: report.min_value });
            }
        }
        designed.push(DesignedBackup { set: Box::new(set), policy: Box::new(policy) });
    }
    BackupSuite::new(designed, neural)
}
