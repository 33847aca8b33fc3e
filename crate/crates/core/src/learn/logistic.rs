//! L1-penalised logistic regression by cyclic coordinate descent.
//!
//! Minimises `F(w, b) = C · Σ log(1 + exp(-ỹ_i (x_i·w + b))) + ‖w‖₁` with
//! `ỹ ∈ {-1, +1}` and an unpenalised intercept. Every coordinate step is an
//! exact one-dimensional minimisation: the soft-threshold test decides
//! whether the coordinate sits at zero, otherwise the stationarity equation
//! on the active side is solved by bracketed Newton iteration. `F` therefore
//! never increases from one coordinate update to the next.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PolylogueError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once a full sweep moves no coordinate by more than this...
    pub tolerance: f64,
    /// ...and the subgradient optimality residual is at most this.
    pub kkt_tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            kkt_tolerance: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseLogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub c: f64,
    pub converged: bool,
    pub sweeps: usize,
}

impl SparseLogisticModel {
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(PolylogueError::Dimension(format!(
                "matrix has {} features, model {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                self.intercept
                    + self
                        .weights
                        .iter()
                        .enumerate()
                        .filter(|(_, w)| **w != 0.0)
                        .map(|(j, w)| w * x[(i, j)])
                        .sum::<f64>()
            })
            .collect())
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.decision_function(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn signed_labels(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect()
}

/// `F(w, b)` for the given parameters.
pub fn objective(x: &DMatrix<f64>, y: &[bool], weights: &[f64], intercept: f64, c: f64) -> f64 {
    let ys = signed_labels(y);
    let mut loss = 0.0;
    for i in 0..x.nrows() {
        let m: f64 = intercept + weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>();
        loss += softplus(-ys[i] * m);
    }
    c * loss + weights.iter().map(|w| w.abs()).sum::<f64>()
}

/// Gradient of the smooth part `C · loss` with respect to each weight.
pub fn smooth_gradient(x: &DMatrix<f64>, y: &[bool], weights: &[f64], intercept: f64, c: f64) -> Vec<f64> {
    let ys = signed_labels(y);
    let margins: Vec<f64> = (0..x.nrows())
        .map(|i| intercept + weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>())
        .collect();
    (0..x.ncols())
        .map(|j| {
            -c * (0..x.nrows())
                .map(|i| ys[i] * x[(i, j)] * sigmoid(-ys[i] * margins[i]))
                .sum::<f64>()
        })
        .collect()
}

/// The smooth part `C · loss` as a function of one coordinate, all other
/// parameters held fixed. `column == None` stands for the intercept.
struct Line<'a> {
    column: Option<&'a [f64]>,
    margins: &'a [f64],
    probs: &'a [f64],
    ys: &'a [f64],
    current: f64,
    c: f64,
}

const MAX_LINE_ITERATIONS: usize = 200;

impl Line<'_> {
    /// First and second derivative at value `z`.
    fn eval(&self, z: f64) -> (f64, f64) {
        let mut g = 0.0;
        let mut h = 0.0;
        let dz = z - self.current;
        for i in 0..self.margins.len() {
            let x = self.column.map_or(1.0, |col| col[i]);
            if x == 0.0 {
                continue;
            }
            let y = self.ys[i];
            let p = if dz == 0.0 { self.probs[i] } else { sigmoid(-y * (self.margins[i] + x * dz)) };
            g -= y * x * p;
            h += x * x * p * (1.0 - p);
        }
        (self.c * g, self.c * h)
    }

    /// Root of the increasing function `g(z) - target` by Newton steps kept
    /// inside the current bracket; a missing bracket side is found by
    /// expanding steps.
    fn solve(&self, target: f64, start: f64, at_start: (f64, f64), mut lo: Option<f64>, mut hi: Option<f64>) -> f64 {
        let mut z = start;
        let (mut g, mut h) = at_start;
        for _ in 0..MAX_LINE_ITERATIONS {
            let f = g - target;
            if f == 0.0 {
                return z;
            }
            if f < 0.0 {
                lo = Some(z);
            } else {
                hi = Some(z);
            }
            let newton = if h > 0.0 { z - f / h } else { f64::NAN };
            let next = match (lo, hi) {
                (Some(a), Some(b)) => {
                    if newton > a && newton < b {
                        newton
                    } else {
                        0.5 * (a + b)
                    }
                }
                (Some(a), None) => {
                    if newton > a && newton.is_finite() {
                        newton
                    } else {
                        a + 2.0 * (1.0 + a.abs())
                    }
                }
                (None, Some(b)) => {
                    if newton < b && newton.is_finite() {
                        newton
                    } else {
                        b - 2.0 * (1.0 + b.abs())
                    }
                }
                (None, None) => unreachable!("the start point always bounds one side"),
            };
            if (next - z).abs() <= 1e-10 * (1.0 + z.abs()) {
                return next;
            }
            z = next;
            (g, h) = self.eval(z);
        }
        z
    }

    /// Exact minimiser of `C·loss(z) + |z|`.
    fn minimise_penalised(&self) -> f64 {
        let c = self.current;
        let at_c = self.eval(c);
        let g = at_c.0;
        if c > 0.0 {
            if g + 1.0 == 0.0 {
                return c;
            }
            if g + 1.0 < 0.0 {
                return self.solve(-1.0, c, at_c, Some(c), None);
            }
            // a Newton step that stays positive usually brackets the root
            let newton = c - (g + 1.0) / at_c.1;
            if newton > 0.0 && newton < c {
                let at_n = self.eval(newton);
                if at_n.0 + 1.0 <= 0.0 {
                    return self.solve(-1.0, newton, at_n, Some(newton), Some(c));
                }
            }
            let at_0 = self.eval(0.0);
            if at_0.0 + 1.0 < 0.0 {
                self.solve(-1.0, c, at_c, Some(0.0), Some(c))
            } else if at_0.0 - 1.0 <= 0.0 {
                0.0
            } else {
                self.solve(1.0, 0.0, at_0, None, Some(0.0))
            }
        } else if c < 0.0 {
            if g - 1.0 == 0.0 {
                return c;
            }
            if g - 1.0 > 0.0 {
                return self.solve(1.0, c, at_c, None, Some(c));
            }
            let newton = c - (g - 1.0) / at_c.1;
            if newton < 0.0 && newton > c {
                let at_n = self.eval(newton);
                if at_n.0 - 1.0 >= 0.0 {
                    return self.solve(1.0, newton, at_n, Some(c), Some(newton));
                }
            }
            let at_0 = self.eval(0.0);
            if at_0.0 - 1.0 > 0.0 {
                self.solve(1.0, c, at_c, Some(c), Some(0.0))
            } else if at_0.0 + 1.0 >= 0.0 {
                0.0
            } else {
                self.solve(-1.0, 0.0, at_0, Some(0.0), None)
            }
        } else if g.abs() <= 1.0 {
            0.0
        } else if g < -1.0 {
            self.solve(-1.0, 0.0, at_c, Some(0.0), None)
        } else {
            self.solve(1.0, 0.0, at_c, None, Some(0.0))
        }
    }

    /// Exact minimiser of `C·loss(z)`, for the intercept.
    fn minimise_free(&self) -> f64 {
        let at_c = self.eval(self.current);
        if at_c.0 == 0.0 {
            return self.current;
        }
        self.solve(0.0, self.current, at_c, None, None)
    }
}

struct State<'a> {
    x: &'a DMatrix<f64>,
    ys: Vec<f64>,
    c: f64,
    weights: Vec<f64>,
    intercept: f64,
    margins: Vec<f64>,
    /// `σ(-ỹ_i m_i)` at the current margins.
    probs: Vec<f64>,
}

impl<'a> State<'a> {
    fn line(&self, column: Option<&'a [f64]>, current: f64) -> Line<'_> {
        Line {
            column,
            margins: &self.margins,
            probs: &self.probs,
            ys: &self.ys,
            current,
            c: self.c,
        }
    }

    fn shift(&mut self, column: Option<&[f64]>, delta: f64) {
        for i in 0..self.margins.len() {
            let x = column.map_or(1.0, |col| col[i]);
            if x != 0.0 {
                self.margins[i] += x * delta;
                self.probs[i] = sigmoid(-self.ys[i] * self.margins[i]);
            }
        }
    }

    fn update_intercept(&mut self) -> f64 {
        let new = self.line(None, self.intercept).minimise_free();
        let delta = new - self.intercept;
        if delta != 0.0 {
            self.shift(None, delta);
            self.intercept = new;
        }
        delta.abs()
    }

    fn update_weight(&mut self, j: usize) -> f64 {
        let x = self.x;
        let col = x.column(j);
        let col = col.as_slice();
        let old = self.weights[j];
        let new = self.line(Some(col), old).minimise_penalised();
        let delta = new - old;
        if delta != 0.0 {
            self.shift(Some(col), delta);
            self.weights[j] = new;
        }
        delta.abs()
    }

    /// Largest violation of the optimality conditions, intercept included.
    fn kkt_violation(&self) -> f64 {
        let c = self.c;
        let mut worst = (c * self.ys.iter().zip(&self.probs).map(|(y, p)| y * p).sum::<f64>()).abs();
        for (j, &w) in self.weights.iter().enumerate() {
            let col = self.x.column(j);
            let g = -c * col.iter().zip(&self.ys).zip(&self.probs).map(|((x, y), p)| x * y * p).sum::<f64>();
            let v = if w == 0.0 { (g.abs() - 1.0).max(0.0) } else { (g + w.signum()).abs() };
            worst = worst.max(v);
        }
        worst
    }

    fn objective(&self) -> f64 {
        let loss: f64 = self.margins.iter().zip(&self.ys).map(|(m, y)| softplus(-y * m)).sum();
        self.c * loss + self.weights.iter().map(|w| w.abs()).sum::<f64>()
    }
}

pub fn l1_logistic_fit(x: &DMatrix<f64>, y: &[bool], c: f64) -> Result<SparseLogisticModel> {
    l1_logistic_fit_with(x, y, c, &SolverOptions::default(), None, None)
}

/// Full-control fit: optional warm start and an optional sink that receives
/// the objective after every sweep.
pub fn l1_logistic_fit_with(
    x: &DMatrix<f64>,
    y: &[bool],
    c: f64,
    options: &SolverOptions,
    warm_start: Option<&SparseLogisticModel>,
    mut history: Option<&mut Vec<f64>>,
) -> Result<SparseLogisticModel> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(PolylogueError::Dimension(format!("{n} rows but {} labels", y.len())));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(PolylogueError::Config(format!("C must be positive and finite, got {c}")));
    }
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == n {
        return Err(PolylogueError::DegenerateLabel("cannot fit a classifier".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PolylogueError::Numeric("non-finite feature value".into()));
    }

    let (weights, intercept) = match warm_start {
        Some(m) if m.weights.len() == d => (m.weights.clone(), m.intercept),
        _ => {
            let p = n_pos as f64 / n as f64;
            (vec![0.0; d], (p / (1.0 - p)).ln())
        }
    };
    let ys = signed_labels(y);
    let margins: Vec<f64> = (0..n)
        .map(|i| intercept + weights.iter().enumerate().map(|(j, w)| w * x[(i, j)]).sum::<f64>())
        .collect();
    let probs = margins.iter().zip(&ys).map(|(m, y)| sigmoid(-y * m)).collect();
    let mut state = State { x, ys, c, weights, intercept, margins, probs };
    if let Some(h) = history.as_deref_mut() {
        h.push(state.objective());
    }

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < options.max_sweeps {
        // full sweep over every coordinate
        let mut max_delta = state.update_intercept();
        for j in 0..d {
            max_delta = max_delta.max(state.update_weight(j));
        }
        sweeps += 1;
        if let Some(h) = history.as_deref_mut() {
            h.push(state.objective());
        }
        if max_delta < options.tolerance && state.kkt_violation() <= options.kkt_tolerance {
            converged = true;
            break;
        }
        // then settle the active set before the next full sweep
        let active: Vec<usize> = (0..d).filter(|&j| state.weights[j] != 0.0).collect();
        while sweeps < options.max_sweeps {
            let mut inner = state.update_intercept();
            for &j in &active {
                inner = inner.max(state.update_weight(j));
            }
            sweeps += 1;
            if let Some(h) = history.as_deref_mut() {
                h.push(state.objective());
            }
            if inner < options.tolerance {
                break;
            }
        }
    }
    if !converged {
        log::warn!("L1 logistic fit at C={c} stopped after {sweeps} sweeps without converging");
    }
    Ok(SparseLogisticModel {
        weights: state.weights,
        intercept: state.intercept,
        c,
        converged,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kkt_violation(x: &DMatrix<f64>, y: &[bool], m: &SparseLogisticModel) -> f64 {
        let g = smooth_gradient(x, y, &m.weights, m.intercept, m.c);
        g.iter()
            .zip(&m.weights)
            .map(|(&gj, &wj)| {
                if wj == 0.0 {
                    (gj.abs() - 1.0).max(0.0)
                } else {
                    (gj + wj.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn tiny_c_gives_base_rate_intercept() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, 0.5, 2.0, -1.0, 0.0, 1.0]);
        let y = [true, true, false, true, false];
        let m = l1_logistic_fit(&x, &y, 1e-8).unwrap();
        assert_eq!(m.weights, vec![0.0, 0.0]);
        assert!((m.intercept - (0.6f64 / 0.4).ln()).abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_closed_form() {
        // x = {-1, +1}, y = {0, 1}: b = 0 by symmetry and the stationarity
        // condition 2C·σ(-w) = 1 gives w = ln(2C - 1) when C > 1
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let y = [false, true];
        let m = l1_logistic_fit(&x, &y, 3.0).unwrap();
        assert!((m.weights[0] - 5f64.ln()).abs() < 1e-6);
        assert!(m.intercept.abs() < 1e-9);
        let m = l1_logistic_fit(&x, &y, 1.0).unwrap();
        assert_eq!(m.weights[0], 0.0);
    }

    #[test]
    fn single_class_is_error() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        assert!(matches!(
            l1_logistic_fit(&x, &[true, true], 1.0),
            Err(PolylogueError::DegenerateLabel(_))
        ));
    }

    #[test]
    fn kkt_and_monotone_objective() {
        let x = DMatrix::from_fn(40, 6, |i, j| (((i * 31 + j * 17) % 23) as f64 - 11.0) / 6.0);
        let y: Vec<bool> = (0..40).map(|i| (x[(i, 0)] - 0.5 * x[(i, 2)] + ((i % 5) as f64 - 2.0) * 0.4) > 0.0).collect();
        for c in [0.01, 0.1, 1.0, 10.0] {
            let mut hist = Vec::new();
            let m = l1_logistic_fit_with(&x, &y, c, &SolverOptions::default(), None, Some(&mut hist)).unwrap();
            assert!(m.converged);
            assert!(kkt_violation(&x, &y, &m) <= 1e-6, "C={c}: {}", kkt_violation(&x, &y, &m));
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
        }
    }
}
