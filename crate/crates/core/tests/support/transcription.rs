//! Scalar-loop transcription of the five coordinate updates (no intercept),
//! written independently of the library's matrix formulation, and a driver
//! that compares the two on random states.

#![allow(dead_code)]

use qfa_core::mixture::{GammaParams, GigHalf, InvGammaParams};
use qfa_core::nalgebra::DMatrix;
use qfa_core::vb::{update_alpha, update_factors, update_loadings, update_sigma, update_z, Priors};
use qfa_core::{QuantileSpec, UpdateScheme, VariationalState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn zeros(a: usize, b: usize) -> Mat {
    vec![vec![0.0; b]; a]
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(m: &Mat) -> Mat {
    let k = m.len();
    let mut a = m.clone();
    let mut inv = zeros(k, k);
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..k {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..k {
            if row != col {
                let f = a[row][col];
                for j in 0..k {
                    a[row][j] -= f * a[col][j];
                    inv[row][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

fn mat_vec(m: &Mat, v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// The state in plain nested vectors.
#[derive(Clone)]
pub struct Plain {
    pub x: Mat,  // T x n
    pub ml: Mat, // n x r
    pub sl: Vec<Mat>,
    pub mf: Mat, // T x r
    pub sf: Vec<Mat>,
    pub alpha: Vec<Vec<(f64, f64)>>, // (shape, rate) n x r
    pub sigma: Vec<(f64, f64)>,      // (shape, scale)
    pub z: Vec<Vec<(f64, f64)>>,     // (a, b) n x T
}

pub struct Consts {
    pub k1: f64,
    pub k2sq: f64,
    pub a0: f64,
    pub b0: f64,
    pub r0: f64,
    pub s0: f64,
    pub exact: bool,
}

fn e_inv_sigma(s: (f64, f64)) -> f64 {
    s.0 / s.1
}

fn e_inv_z(z: (f64, f64)) -> f64 {
    (z.0 / z.1).sqrt()
}

fn e_z(z: (f64, f64)) -> f64 {
    (z.1 / z.0).sqrt() + 1.0 / z.0
}

impl Plain {
    fn dims(&self) -> (usize, usize, usize) {
        (self.x.len(), self.x[0].len(), self.ml[0].len())
    }

    fn resid(&self, i: usize, t: usize) -> f64 {
        let (_, _, r) = self.dims();
        let mut fit = 0.0;
        for j in 0..r {
            fit += self.ml[i][j] * self.mf[t][j];
        }
        self.x[t][i] - fit
    }

    fn e_sq_resid(&self, i: usize, t: usize, exact: bool) -> f64 {
        let (_, _, r) = self.dims();
        let e = self.resid(i, t);
        let mut v = e * e;
        for j in 0..r {
            for k in 0..r {
                v += self.mf[t][j] * self.sl[i][j][k] * self.mf[t][k];
                if exact {
                    v += self.ml[i][j] * self.sf[t][j][k] * self.ml[i][k];
                    v += self.sl[i][j][k] * self.sf[t][k][j];
                }
            }
        }
        v
    }

    pub fn loadings(&mut self, c: &Consts) {
        let (t_len, n, r) = self.dims();
        for i in 0..n {
            let ci = e_inv_sigma(self.sigma[i]) / c.k2sq;
            let mut prec = zeros(r, r);
            let mut lin = vec![0.0; r];
            for t in 0..t_len {
                let w = e_inv_z(self.z[i][t]);
                for j in 0..r {
                    for k in 0..r {
                        let mut ff = self.mf[t][j] * self.mf[t][k];
                        if c.exact {
                            ff += self.sf[t][j][k];
                        }
                        prec[j][k] += ci * w * ff;
                    }
                    lin[j] += ci * (w * self.x[t][i] * self.mf[t][j] - c.k1 * self.mf[t][j]);
                }
            }
            for j in 0..r {
                prec[j][j] += self.alpha[i][j].0 / self.alpha[i][j].1;
            }
            let cov = invert(&prec);
            self.ml[i] = mat_vec(&cov, &lin);
            self.sl[i] = cov;
        }
    }

    pub fn alpha(&mut self, c: &Consts) {
        let (_, n, r) = self.dims();
        for i in 0..n {
            for j in 0..r {
                let second = self.ml[i][j] * self.ml[i][j] + self.sl[i][j][j];
                self.alpha[i][j] = (c.a0 + 0.5, c.b0 + 0.5 * second);
            }
        }
    }

    pub fn z(&mut self, c: &Consts) {
        let (t_len, n, _) = self.dims();
        for i in 0..n {
            let es = e_inv_sigma(self.sigma[i]);
            for t in 0..t_len {
                let a = es * (2.0 + c.k1 * c.k1 / c.k2sq);
                let b = es * self.e_sq_resid(i, t, c.exact) / c.k2sq;
                self.z[i][t] = (a, b);
            }
        }
    }

    pub fn sigma(&mut self, c: &Consts) {
        let (t_len, n, _) = self.dims();
        let shape = if c.exact {
            c.r0 + 1.5 * t_len as f64
        } else {
            c.r0 + 3.0 * t_len as f64
        };
        for i in 0..n {
            let mut s = c.s0;
            for t in 0..t_len {
                let z = self.z[i][t];
                s += e_inv_z(z) * self.e_sq_resid(i, t, c.exact) / (2.0 * c.k2sq)
                    - c.k1 * self.resid(i, t) / c.k2sq
                    + (1.0 + c.k1 * c.k1 / (2.0 * c.k2sq)) * e_z(z);
            }
            self.sigma[i] = (shape, s);
        }
    }

    pub fn factors(&mut self, c: &Consts) {
        let (t_len, n, r) = self.dims();
        for t in 0..t_len {
            let mut prec = zeros(r, r);
            let mut lin = vec![0.0; r];
            for i in 0..n {
                let ci = e_inv_sigma(self.sigma[i]) / c.k2sq;
                let w = e_inv_z(self.z[i][t]);
                for j in 0..r {
                    for k in 0..r {
                        let mut ll = self.ml[i][j] * self.ml[i][k];
                        if c.exact {
                            ll += self.sl[i][j][k];
                        }
                        prec[j][k] += ci * w * ll;
                    }
                    lin[j] += ci * (w * self.x[t][i] * self.ml[i][j] - c.k1 * self.ml[i][j]);
                }
            }
            for j in 0..r {
                prec[j][j] += 1.0;
            }
            let cov = invert(&prec);
            self.mf[t] = mat_vec(&cov, &lin);
            self.sf[t] = cov;
        }
    }
}

fn spd<R: Rng>(k: usize, rng: &mut R) -> Mat {
    let a: Mat = (0..k)
        .map(|_| (0..k).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let mut m = zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m[i][j] = (0..k).map(|l| a[i][l] * a[j][l]).sum::<f64>();
        }
        m[i][i] += 0.2;
    }
    m
}

/// A random state of random size.
pub fn random_plain<R: Rng>(rng: &mut R) -> Plain {
    let t_len = rng.random_range(3..9);
    let n = rng.random_range(2..7);
    let r = rng.random_range(1..4);
    let mut m = |a: usize, b: usize, lo: f64, hi: f64| -> Mat {
        (0..a)
            .map(|_| (0..b).map(|_| rng.random_range(lo..hi)).collect())
            .collect()
    };
    let x = m(t_len, n, -2.0, 2.0);
    let ml = m(n, r, -1.5, 1.5);
    let mf = m(t_len, r, -1.5, 1.5);
    let alpha = (0..n)
        .map(|_| {
            (0..r)
                .map(|_| (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)))
                .collect()
        })
        .collect();
    let sigma = (0..n)
        .map(|_| (rng.random_range(2.0..20.0), rng.random_range(1.0..20.0)))
        .collect();
    let z = (0..n)
        .map(|_| {
            (0..t_len)
                .map(|_| (rng.random_range(0.5..5.0), rng.random_range(0.05..5.0)))
                .collect()
        })
        .collect();
    let sl = (0..n).map(|_| spd(r, rng)).collect();
    let sf = (0..t_len).map(|_| spd(r, rng)).collect();
    Plain {
        x,
        ml,
        sl,
        mf,
        sf,
        alpha,
        sigma,
        z,
    }
}

fn to_dm(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |i, j| m[i][j])
}

fn to_state(p: &Plain) -> (VariationalState, DMatrix<f64>) {
    let (t_len, n, r) = p.dims();
    let state = VariationalState {
        mu_lambda: to_dm(&p.ml),
        sigma_lambda: p.sl.iter().map(to_dm).collect(),
        mu_f: to_dm(&p.mf),
        sigma_f: p.sf.iter().map(to_dm).collect(),
        alpha: (0..n * r)
            .map(|k| {
                let (shape, rate) = p.alpha[k / r][k % r];
                GammaParams { shape, rate }
            })
            .collect(),
        sigma: p
            .sigma
            .iter()
            .map(|&(shape, scale)| InvGammaParams { shape, scale })
            .collect(),
        z: (0..n * t_len)
            .map(|k| {
                let (a, b) = p.z[k / t_len][k % t_len];
                GigHalf { a, b }
            })
            .collect(),
        elbo: 0.0,
    };
    (state, to_dm(&p.x))
}

fn diff_mat(a: &DMatrix<f64>, b: &Mat) -> f64 {
    (a - to_dm(b)).amax()
}

/// Largest absolute difference over every parameter of the two states.
fn state_diff(s: &VariationalState, p: &Plain) -> f64 {
    let (t_len, _, r) = p.dims();
    let mut d = diff_mat(&s.mu_lambda, &p.ml).max(diff_mat(&s.mu_f, &p.mf));
    for (a, b) in s.sigma_lambda.iter().zip(&p.sl) {
        d = d.max(diff_mat(a, b));
    }
    for (a, b) in s.sigma_f.iter().zip(&p.sf) {
        d = d.max(diff_mat(a, b));
    }
    for (k, g) in s.alpha.iter().enumerate() {
        let (shape, rate) = p.alpha[k / r][k % r];
        d = d.max((g.shape - shape).abs()).max((g.rate - rate).abs());
    }
    for (g, &(shape, scale)) in s.sigma.iter().zip(&p.sigma) {
        d = d.max((g.shape - shape).abs()).max((g.scale - scale).abs());
    }
    for (k, g) in s.z.iter().enumerate() {
        let (a, b) = p.z[k / t_len][k % t_len];
        d = d.max((g.a - a).abs()).max((g.b - b).abs());
    }
    d
}

/// Apply each update, separately and as a full sweep, to `count` random
/// states under both schemes; return the largest discrepancy seen.
pub fn max_discrepancy(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priors = Priors {
        a0: 1e-4,
        b0: 1e-4,
        r0: 0.01,
        s0: 0.01,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let plain = random_plain(&mut rng);
        let tau = rng.random_range(0.05..0.95);
        let q = QuantileSpec::new(tau).unwrap();
        for scheme in [UpdateScheme::Exact, UpdateScheme::Plugin] {
            let c = Consts {
                k1: q.kappa1(),
                k2sq: q.kappa2_sq(),
                a0: priors.a0,
                b0: priors.b0,
                r0: priors.r0,
                s0: priors.s0,
                exact: scheme == UpdateScheme::Exact,
            };
            for step in 0..6 {
                let (mut s, x) = to_state(&plain);
                let mut p = plain.clone();
                let steps: &[usize] = if step < 5 {
                    &[step][..]
                } else {
                    &[0, 1, 2, 3, 4][..]
                };
                for &k in steps {
                    match k {
                        0 => {
                            update_loadings(&mut s, &x, &q, scheme).unwrap();
                            p.loadings(&c);
                        }
                        1 => {
                            update_alpha(&mut s, &priors);
                            p.alpha(&c);
                        }
                        2 => {
                            update_z(&mut s, &x, &q, scheme);
                            p.z(&c);
                        }
                        3 => {
                            update_sigma(&mut s, &x, &q, &priors, scheme).unwrap();
                            p.sigma(&c);
                        }
                        _ => {
                            update_factors(&mut s, &x, &q, scheme).unwrap();
                            p.factors(&c);
                        }
                    }
                }
                worst = worst.max(state_diff(&s, &p));
            }
        }
    }
    worst
}
