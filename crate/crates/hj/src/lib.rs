//! Semi-Lagrangian value iteration for the reach-avoid value on a 2-D box:
//! stay in the safe set for the whole horizon and end inside some backup set.
//!
//! Controls are held constant over each step of length `dt` and chosen from a
//! finite sample of the admissible box, so the computed set is an inner
//! approximation of the true one up to interpolation error.

use rlbus_core::dynamics::{rk4_step, ConstantPolicy, DynamicsError, ScalarField, SystemModel, Vector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HjError {
    #[error("invalid grid: {0}")]
    Config(String),
    #[error("query point ({0}, {1}) lies outside the grid box")]
    OutOfBox(f64, f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub type Result<T> = std::result::Result<T, HjError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Nodes per axis, at least 3.
    pub points: [usize; 2],
    /// Hold interval of one backward step.
    pub dt: f64,
    pub horizon: f64,
    /// Values assigned to steps that leave the box are at most `-boundary_margin`.
    pub boundary_margin: f64,
}

impl GridSpec {
    /// Square grid with `points` nodes per axis and default time settings.
    pub fn new(lower: [f64; 2], upper: [f64; 2], points: usize) -> Self {
        Self { lower, upper, points: [points; 2], dt: 0.1, horizon: 2.0, boundary_margin: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..2 {
            if self.points[d] < 3 {
                return Err(HjError::Config(format!("axis {d} needs at least 3 nodes, got {}", self.points[d])));
            }
            if !(self.lower[d].is_finite() && self.upper[d].is_finite() && self.lower[d] < self.upper[d]) {
                return Err(HjError::Config(format!("axis {d} bounds {} .. {} are invalid", self.lower[d], self.upper[d])));
            }
        }
        if !(self.dt > 0.0 && self.horizon >= 0.0 && self.dt.is_finite() && self.horizon.is_finite()) {
            return Err(HjError::Config(format!("dt {} / horizon {} are invalid", self.dt, self.horizon)));
        }
        if !(self.boundary_margin >= 0.0) {
            return Err(HjError::Config("boundary_margin must be non-negative".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> [f64; 2] {
        [0, 1].map(|d| (self.upper[d] - self.lower[d]) / (self.points[d] - 1) as f64)
    }

    pub fn len(&self) -> usize {
        self.points[0] * self.points[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Backward steps; the horizon is rounded to a whole number of steps.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Node `(i, k)` with `i` along the first axis; storage index `i + k·n₀`.
    pub fn node(&self, i: usize, k: usize) -> Vector<2> {
        let h = self.spacing();
        Vector::<2>::new(self.lower[0] + h[0] * i as f64, self.lower[1] + h[1] * k as f64)
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vector<2>> + '_ {
        (0..self.points[1]).flat_map(move |k| (0..self.points[0]).map(move |i| self.node(i, k)))
    }

    pub fn contains(&self, x: &Vector<2>) -> bool {
        (0..2).all(|d| x[d] >= self.lower[d] && x[d] <= self.upper[d])
    }

    /// Lower-left node index and fractional offsets of the cell holding `x`.
    fn locate(&self, x: &Vector<2>) -> (usize, f64, f64) {
        let h = self.spacing();
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for d in 0..2 {
            let t = ((x[d] - self.lower[d]) / h[d]).max(0.0);
            let cell = (t.floor() as usize).min(self.points[d] - 2);
            base[d] = cell;
            frac[d] = (t - cell as f64).clamp(0.0, 1.0);
        }
        (base[0] + base[1] * self.points[0], frac[0], frac[1])
    }
}

/// Value function sampled on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub spec: GridSpec,
    /// Node values, index `i + k·n₀`.
    pub values: Vec<f64>,
}

/// Counters from one solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveReport {
    pub steps: usize,
    /// Node-control pairs whose one-step successor left the box.
    pub clamped_targets: usize,
}

fn bilinear(values: &[f64], n0: usize, base: usize, fx: f64, fy: f64) -> f64 {
    let v00 = values[base];
    let v10 = values[base + 1];
    let v01 = values[base + n0];
    let v11 = values[base + n0 + 1];
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11)
}

impl ValueGrid {
    /// Bilinear interpolation; errors outside the box.
    pub fn query_value(&self, x: &Vector<2>) -> Result<f64> {
        if !self.spec.contains(x) {
            return Err(HjError::OutOfBox(x[0], x[1]));
        }
        let (base, fx, fy) = self.spec.locate(x);
        Ok(bilinear(&self.values, self.spec.points[0], base, fx, fy))
    }

    /// Largest gap between node values and the bilinear interpolant of the
    /// every-other-node subgrid, over the nodes that subgrid skips. Measures how
    /// far interpolation across one cell can be off for this value field.
    pub fn interpolation_error_bound(&self) -> f64 {
        let [n0, n1] = self.spec.points;
        let v = |i: usize, k: usize| self.values[i + k * n0];
        let mut worst: f64 = 0.0;
        for k in 0..n1 {
            for i in 0..n0 {
                let (odd_i, odd_k) = (i % 2 == 1, k % 2 == 1);
                if !(odd_i || odd_k) || (odd_i && i + 1 >= n0) || (odd_k && k + 1 >= n1) {
                    continue;
                }
                let approx = match (odd_i, odd_k) {
                    (true, false) => 0.5 * (v(i - 1, k) + v(i + 1, k)),
                    (false, true) => 0.5 * (v(i, k - 1) + v(i, k + 1)),
                    _ => 0.25 * (v(i - 1, k - 1) + v(i + 1, k - 1) + v(i - 1, k + 1) + v(i + 1, k + 1)),
                };
                worst = worst.max((v(i, k) - approx).abs());
            }
        }
        worst
    }

    /// Cell area times the number of nodes with `V ≥ level`.
    pub fn superlevel_area(&self, level: f64) -> f64 {
        let h = self.spec.spacing();
        self.values.iter().filter(|v| **v >= level).count() as f64 * h[0] * h[1]
    }
}

enum Target {
    Inside { base: usize, fx: f64, fy: f64 },
    Outside(f64),
}

/// Backward recursion `W_T = max_j h_bj`,
/// `W_{t−dt}(x) = min{h_s(x), max_u W_t(φ_u(x, dt))}`, `V = min{h_s, W_0}`,
/// where `φ_u(x, dt)` is one RK4 step with the control held at `u`.
pub fn solve_value_grid<S: SystemModel<2, M>, const M: usize>(
    sys: &S,
    safe: &dyn ScalarField<2>,
    backup_sets: &[&dyn ScalarField<2>],
    spec: &GridSpec,
    controls: &[Vector<M>],
) -> Result<(ValueGrid, SolveReport)> {
    spec.validate()?;
    if backup_sets.is_empty() || controls.is_empty() {
        return Err(HjError::Config("need at least one backup set and one control sample".into()));
    }
    if let Some(u) = controls.iter().find(|u| !sys.control_box().contains(u)) {
        return Err(HjError::Config(format!("control sample {:?} lies outside the admissible box", u.as_slice())));
    }
    let nodes: Vec<Vector<2>> = spec.nodes().collect();
    let safe_values: Vec<f64> = nodes.iter().map(|x| safe.value(x)).collect();
    let mut clamped_targets = 0;
    let mut targets = Vec::with_capacity(nodes.len() * controls.len());
    for x in &nodes {
        for u in controls {
            let y = rk4_step(sys, &ConstantPolicy(*u), x, spec.dt);
            if y.iter().all(|v| v.is_finite()) && spec.contains(&y) {
                let (base, fx, fy) = spec.locate(&y);
                targets.push(Target::Inside { base, fx, fy });
            } else {
                clamped_targets += 1;
                let clamped = Vector::<2>::from_fn(|d, _| {
                    let v = if y[d].is_nan() { x[d] } else { y[d] };
                    v.clamp(spec.lower[d], spec.upper[d])
                });
                targets.push(Target::Outside(safe.value(&clamped).min(-spec.boundary_margin)));
            }
        }
    }
    let mut w: Vec<f64> =
        nodes.iter().map(|x| backup_sets.iter().map(|s| s.value(x)).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut next = vec![0.0; w.len()];
    let m = controls.len();
    let n0 = spec.points[0];
    let steps = spec.steps();
    for _ in 0..steps {
        for (node, out) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for t in &targets[node * m..(node + 1) * m] {
                let v = match *t {
                    Target::Inside { base, fx, fy } => bilinear(&w, n0, base, fx, fy),
                    Target::Outside(v) => v,
                };
                best = best.max(v);
            }
            *out = safe_values[node].min(best);
        }
        std::mem::swap(&mut w, &mut next);
    }
    for (v, s) in w.iter_mut().zip(&safe_values) {
        *v = v.min(*s);
    }
    Ok((ValueGrid { spec: *spec, values: w }, SolveReport { steps, clamped_targets }))
}

/// `count` evenly spaced scalar controls across a one-dimensional box.
pub fn scalar_control_samples(lower: f64, upper: f64, count: usize) -> Vec<Vector<1>> {
    if count == 1 {
        return vec![Vector::<1>::new(0.5 * (lower + upper))];
    }
    (0..count).map(|i| Vector::<1>::new(lower + (upper - lower) * i as f64 / (count - 1) as f64)).collect()
}
