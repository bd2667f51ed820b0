//! ELBO-optimal reparametrization of the factor space.
//!
//! Write `f~ = (f, 1)` when the model has intercepts (`f~ = f` otherwise)
//! and `lambda~` for the matching loading vector. The likelihood depends on
//! loadings and factors only through `E[lambda~' f~]` and
//! `E[(lambda~' f~)^2]`, both unchanged by `f~ -> A f~`,
//! `lambda~ -> A^{-T} lambda~` for any invertible `A` whose last row is
//! `(0, ..., 0, 1)` in the intercept case (so the constant stays constant).
//! Only the factor prior, the two Gaussian entropies and (after
//! re-optimizing the precisions) the shrinkage terms move. With
//! `C = sum_t E[f~_t f~_t']`, `B_i = E[lambda~_i lambda~_i']` and `W = A^{-1}`
//! the bound changes by
//!
//! ```text
//! J(A) = -tr(A C A') / 2 + (T - n) log|det A| - (a0 + 1/2) sum_ij log(b0 + (W' B_i W)_jj / 2)
//!        - (p0 / 2) sum_i (W' B_i W)_kk
//! ```
//!
//! up to a constant, where `j` runs over the factor loadings, `k` is the
//! intercept coordinate and `p0` its fixed prior precision. Maximizing `J` from `A = I` can only raise the bound,
//! and it collapses the slow scale, rotation and translation modes of the
//! coordinate sweep.

use nalgebra::{DMatrix, DVector};

use super::state::{VariationalState, INTERCEPT_PRECISION};

const MAX_STEPS: usize = 50;
const GRAD_TOL: f64 = 1e-9;
const GAIN_TOL: f64 = 1e-9;

struct Objective {
    c: DMatrix<f64>,
    b: Vec<DMatrix<f64>>,
    /// Rows of `A` that are free (all but the constant row).
    free_rows: usize,
    periods: f64,
    shape: f64,
    b0: f64,
}

impl Objective {
    fn new(state: &VariationalState, a0: f64, b0: f64) -> Self {
        let r = state.n_factors();
        let p = state.n_loadings();
        let f_aug = state.augmented_factors();
        let mut c = f_aug.transpose() * &f_aug;
        for sf in &state.sigma_f {
            let mut top = c.view_mut((0, 0), (r, r));
            top += sf;
        }
        let b = state
            .sigma_lambda
            .iter()
            .enumerate()
            .map(|(i, sl)| {
                let m = state.mu_lambda.row(i).transpose();
                &m * m.transpose() + sl
            })
            .collect();
        Self {
            c,
            b,
            free_rows: r.min(p),
            periods: state.n_periods() as f64,
            shape: a0 + 0.5,
            b0,
        }
    }

    /// Value and gradient (constant row masked out); `None` outside the
    /// positive-determinant region.
    fn eval(&self, a: &DMatrix<f64>) -> Option<(f64, DMatrix<f64>)> {
        let p = a.nrows();
        let lu = a.clone().lu();
        let det = lu.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        let w = lu.try_inverse()?;
        let n = self.b.len() as f64;

        let ac = a * &self.c;
        let mut value = -0.5 * ac.component_mul(a).sum() + (self.periods - n) * det.ln();
        let mut grad = -ac + w.transpose() * (self.periods - n);

        let mut gw = DMatrix::zeros(p, p);
        let mut bw = DMatrix::zeros(p, p);
        for bi in &self.b {
            bi.mul_to(&w, &mut bw);
            for j in 0..p {
                let q = w.column(j).dot(&bw.column(j));
                let scale = if j < self.free_rows {
                    let c = self.b0 + 0.5 * q;
                    if !(c > 0.0) {
                        return None;
                    }
                    value -= self.shape * c.ln();
                    -self.shape / c
                } else {
                    value -= 0.5 * INTERCEPT_PRECISION * q;
                    -INTERCEPT_PRECISION
                };
                for k in 0..p {
                    gw[(k, j)] += scale * bw[(k, j)];
                }
            }
        }
        grad -= w.transpose() * gw * w.transpose();
        for row in self.free_rows..p {
            grad.row_mut(row).fill(0.0);
        }
        value.is_finite().then_some((value, grad))
    }
}

/// Find the transformation and apply it to the loading and factor blocks.
/// Returns the gain in the bound (zero when the identity is kept).
/// The caller must refresh the loading precisions afterwards.
pub(crate) fn rotate(state: &mut VariationalState, a0: f64, b0: f64) -> f64 {
    let r = state.n_factors();
    let p = state.n_loadings();
    let obj = Objective::new(state, a0, b0);
    let Some((start, mut grad)) = obj.eval(&DMatrix::identity(p, p)) else {
        return 0.0;
    };
    let mut rot = DMatrix::<f64>::identity(p, p);
    let mut value = start;
    let dim = p * p;
    // the factor-prior term has curvature C, so start from its inverse scale
    let h0 = p as f64 / obj.c.trace().max(1.0);
    let mut h_inv = DMatrix::<f64>::identity(dim, dim) * h0;

    for _ in 0..MAX_STEPS {
        let g = DVector::from_column_slice(grad.as_slice());
        if g.amax() < GRAD_TOL {
            break;
        }
        let mut dir = &h_inv * &g;
        if dir.dot(&g) <= 0.0 {
            h_inv = DMatrix::identity(dim, dim) * h0;
            dir = g.clone() * h0;
        }
        let slope = dir.dot(&g);
        let mut dir_m = DMatrix::from_column_slice(p, p, dir.as_slice());
        for row in r..p {
            dir_m.row_mut(row).fill(0.0);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &rot + &dir_m * step;
            if let Some((v, gr)) = obj.eval(&cand) {
                if v >= value + 1e-4 * step * slope {
                    accepted = Some((cand, v, gr));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, v, gr)) = accepted else { break };
        let s = DVector::from_column_slice((&cand - &rot).as_slice());
        // BFGS on the negated objective: y = grad(-J)_new - grad(-J)_old
        let y = DVector::from_column_slice((&grad - &gr).as_slice());
        let sy = s.dot(&y);
        if sy > 1e-14 {
            // H <- (I - rho s y') H (I - rho y s') + rho s s', expanded
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let coef = rho * rho * y.dot(&hy) + rho;
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(coef, &s, &s, 1.0);
        }
        let gain = v - value;
        rot = cand;
        value = v;
        grad = gr;
        if gain < GAIN_TOL {
            break;
        }
    }

    if !(value > start) {
        return 0.0;
    }
    let Some(w) = rot.clone().try_inverse() else {
        return 0.0;
    };
    // f~ -> A f~: f -> R f + c
    let lin = rot.view((0, 0), (r, r)).into_owned();
    let mut mu_f = &state.mu_f * lin.transpose();
    if p > r {
        let shift = rot.view((0, r), (r, 1)).into_owned();
        for mut row in mu_f.row_iter_mut() {
            row += shift.transpose();
        }
    }
    state.mu_f = mu_f;
    for sf in state.sigma_f.iter_mut() {
        let mut m = &lin * &*sf * lin.transpose();
        crate::linalg::symmetrize(&mut m);
        *sf = m;
    }
    let wt = w.transpose();
    state.mu_lambda = &state.mu_lambda * &w;
    for sl in state.sigma_lambda.iter_mut() {
        let mut m = &wt * &*sl * &w;
        crate::linalg::symmetrize(&mut m);
        *sl = m;
    }
    value - start
}
