//! L2-regularized logistic regression.
//!
//! Minimizes
//!
//! ```text
//! J(w, b) = 0.5 * |w|^2 + P * sum_i CE(y_i, sigmoid(w . x_i + b))
//! ```
//!
//! with an unregularized bias. Larger `P` means weaker regularization.
//! The solver is damped Newton with Armijo backtracking, started from zero.
//! When there are more features than samples the Newton system is solved
//! through the `N x N` Woodbury form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegOptions {
    /// Stop once the gradient infinity-norm is at or below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogRegOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective value at every accepted iterate, starting at zero.
    pub objective_trace: Vec<f64>,
}

impl LogRegFit {
    pub fn logit(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn logits(x: &FeatureMatrix, w: &[f64], b: f64) -> Vec<f64> {
    (0..x.n_rows()).map(|i| dot(x.row(i), w) + b).collect()
}

fn validate(x: &FeatureMatrix, y: &[u8], p: f64) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows for {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization P must be positive, got {p}")));
    }
    if let Some(&l) = y.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidLabel(l as i64));
    }
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Objective value `J(w, b)`.
pub fn objective(x: &FeatureMatrix, y: &[u8], w: &[f64], b: f64, p: f64) -> f64 {
    let z = logits(x, w, b);
    data_term(&z, y) * p + 0.5 * dot(w, w)
}

fn data_term(z: &[f64], y: &[u8]) -> f64 {
    z.iter()
        .zip(y)
        .map(|(&zi, &yi)| if yi == 1 { softplus(-zi) } else { softplus(zi) })
        .sum()
}

/// Analytic gradient `(dJ/dw, dJ/db)`.
pub fn gradient(x: &FeatureMatrix, y: &[u8], w: &[f64], b: f64, p: f64) -> (Vec<f64>, f64) {
    let z = logits(x, w, b);
    gradient_from_logits(x, y, w, &z, p)
}

fn gradient_from_logits(x: &FeatureMatrix, y: &[u8], w: &[f64], z: &[f64], p: f64) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (i, (&zi, &yi)) in z.iter().zip(y).enumerate() {
        let r = p * (sigmoid(zi) - yi as f64);
        gb += r;
        for (g, &xv) in gw.iter_mut().zip(x.row(i)) {
            *g += r * xv;
        }
    }
    (gw, gb)
}

fn inf_norm(gw: &[f64], gb: f64) -> f64 {
    gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()))
}

/// Newton direction, or `None` when the system cannot be factored.
fn newton_direction(
    x: &FeatureMatrix,
    kernel: Option<&DMatrix<f64>>,
    z: &[f64],
    gw: &[f64],
    gb: f64,
    p: f64,
) -> Option<(Vec<f64>, f64)> {
    let n = x.n_rows();
    let d = x.n_cols();
    let s: Vec<f64> = z.iter().map(|&zi| sigmoid(zi) * sigmoid(-zi)).collect();

    match kernel {
        None => {
            // (d+1) x (d+1) Hessian, bias in the last slot
            let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
            for i in 0..n {
                let row = x.row(i);
                let si = p * s[i];
                for a in 0..d {
                    let va = si * row[a];
                    for c in a..d {
                        h[(a, c)] += va * row[c];
                    }
                    h[(a, d)] += va;
                }
                h[(d, d)] += si;
            }
            for a in 0..d {
                h[(a, a)] += 1.0;
                for c in 0..a {
                    h[(a, c)] = h[(c, a)];
                }
                h[(d, a)] = h[(a, d)];
            }
            let chol = h.cholesky()?;
            let mut rhs = DVector::from_iterator(d + 1, gw.iter().copied().chain([gb]));
            rhs.neg_mut();
            let step = chol.solve(&rhs);
            Some((step.as_slice()[..d].to_vec(), step[d]))
        }
        Some(k) => {
            // A = I + G^T G with G = sqrt(P S) X; A^-1 v = v - G^T M^-1 G v,
            // M = I + sqrt(PS) K sqrt(PS). The bias is eliminated by Schur complement.
            let root: Vec<f64> = s.iter().map(|&si| (p * si).sqrt()).collect();
            let mut m = DMatrix::<f64>::identity(n, n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += root[i] * k[(i, j)] * root[j];
                }
            }
            let chol = m.cholesky()?;
            let apply_inv = |v: &[f64]| -> Vec<f64> {
                let gv = DVector::from_iterator(n, (0..n).map(|i| root[i] * dot(x.row(i), v)));
                let t = chol.solve(&gv);
                let mut out = v.to_vec();
                for i in 0..n {
                    let c = root[i] * t[i];
                    for (o, &xv) in out.iter_mut().zip(x.row(i)) {
                        *o -= c * xv;
                    }
                }
                out
            };
            let mut u = vec![0.0; d];
            for i in 0..n {
                let c = p * s[i];
                for (ui, &xv) in u.iter_mut().zip(x.row(i)) {
                    *ui += c * xv;
                }
            }
            let c = p * s.iter().sum::<f64>();
            let a_inv_g = apply_inv(gw);
            let a_inv_u = apply_inv(&u);
            let schur = c - dot(&u, &a_inv_u);
            if !(schur > 0.0) {
                return None;
            }
            let db = (-gb + dot(&u, &a_inv_g)) / schur;
            let dw = a_inv_g
                .iter()
                .zip(&a_inv_u)
                .map(|(g, v)| -(g + v * db))
                .collect();
            Some((dw, db))
        }
    }
}

const STALL_LIMIT: usize = 5;

fn gram(x: &FeatureMatrix) -> DMatrix<f64> {
    let n = x.n_rows();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(x.row(i), x.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Fits the regularized logistic regression with strength `p`.
///
/// Non-convergence within the iteration cap is not an error: the returned
/// fit carries `converged = false` and the best iterate.
pub fn train_logreg(x: &FeatureMatrix, y: &[u8], p: f64, options: &LogRegOptions) -> Result<LogRegFit> {
    validate(x, y, p)?;
    if x.n_rows() < 2 || !y.contains(&0) || !y.contains(&1) {
        return Err(Error::SingleClass);
    }
    let d = x.n_cols();
    let kernel = (d + 1 > x.n_rows()).then(|| gram(x));

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut z = logits(x, &w, b);
    let mut j = p * data_term(&z, y);
    let mut trace = vec![j];
    let (mut gw, mut gb) = gradient_from_logits(x, y, &w, &z, p);
    let mut gnorm = inf_norm(&gw, gb);
    let mut iterations = 0;
    let mut stalled = 0;

    while gnorm > options.tolerance && iterations < options.max_iterations {
        iterations += 1;
        let (dw, db) = newton_direction(x, kernel.as_ref(), &z, &gw, gb, p)
            .filter(|(dw, db)| dot(dw, &gw) + db * gb < 0.0)
            .unwrap_or_else(|| (gw.iter().map(|g| -g).collect(), -gb));
        let slope = dot(&dw, &gw) + db * gb;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let w_new: Vec<f64> = w.iter().zip(&dw).map(|(a, s)| a + t * s).collect();
            let b_new = b + t * db;
            let z_new = logits(x, &w_new, b_new);
            let j_new = p * data_term(&z_new, y) + 0.5 * dot(&w_new, &w_new);
            if j_new.is_finite() && j_new <= j + 1e-4 * t * slope {
                accepted = Some((w_new, b_new, z_new, j_new));
                break;
            }
            if j_new.is_finite() && j_new <= j {
                // round-off regime near the optimum: keep it if the gradient shrinks
                let (gw_new, gb_new) = gradient_from_logits(x, y, &w_new, &z_new, p);
                if inf_norm(&gw_new, gb_new) < gnorm {
                    accepted = Some((w_new, b_new, z_new, j_new));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((w_new, b_new, z_new, j_new)) = accepted else {
            break;
        };
        // no measurable decrease: the gradient is at its round-off floor
        if j - j_new <= 1e-15 * j.abs().max(1.0) {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                break;
            }
        } else {
            stalled = 0;
        }
        w = w_new;
        b = b_new;
        z = z_new;
        j = j_new;
        trace.push(j);
        (gw, gb) = gradient_from_logits(x, y, &w, &z, p);
        gnorm = inf_norm(&gw, gb);
    }

    Ok(LogRegFit {
        weights: w,
        bias: b,
        iterations,
        converged: gnorm <= options.tolerance,
        gradient_norm: gnorm,
        objective_trace: trace,
    })
}
