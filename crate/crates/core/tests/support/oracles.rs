//! Independent references: an exact linear-programming solution of the
//! quantile regression problem and Monte Carlo moments of the mixture weights.

use qfa_core::cdg::{qreg_fit, total_check_loss};
use qfa_core::gibbs::sample_gig_half;
use qfa_core::mixture::{gig_moments, GigHalf};
use qfa_core::nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

/// Best basic solution of the check-loss LP: (loss, coefficients).
///
/// The LP attains its optimum at a coefficient vector interpolating `k`
/// observations, so enumerating every `k`-subset finds it exactly on small
/// instances.
pub fn lp_oracle(y: &DVector<f64>, x: &DMatrix<f64>, tau: f64) -> (f64, DVector<f64>) {
    let (t, k) = x.shape();
    let mut best = (f64::INFINITY, DVector::zeros(k));
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let xb = DMatrix::from_fn(k, k, |a, b| x[(idx[a], b)]);
        let yb = DVector::from_fn(k, |a, _| y[idx[a]]);
        if let Some(beta) = xb.lu().solve(&yb) {
            let loss = total_check_loss(y, x, &beta, tau);
            if loss < best.0 {
                best = (loss, beta);
            }
        }
        // next combination in lexicographic order
        let mut pos = k;
        loop {
            if pos == 0 {
                return best;
            }
            pos -= 1;
            if idx[pos] < t - k + pos {
                idx[pos] += 1;
                for q in pos + 1..k {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Regression with an intercept, standard normal regressors and t(3) noise.
pub fn qreg_instance(rng: &mut ChaCha8Rng, t: usize, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let x = DMatrix::from_fn(t, k, |_, j| {
        if j == 0 {
            1.0
        } else {
            StandardNormal.sample(rng)
        }
    });
    let beta = DVector::from_fn(k, |_, _| rng.random_range(-2.0..2.0));
    let t3 = StudentT::new(3.0).unwrap();
    let y = &x * beta + DVector::from_fn(t, |_, _| t3.sample(rng));
    (y, x)
}

/// One solver-versus-oracle comparison.
#[derive(Debug, Clone, Copy)]
pub struct OracleCase {
    pub periods: usize,
    pub regressors: usize,
    pub tau: f64,
    pub oracle: f64,
    pub solver: f64,
}

impl OracleCase {
    pub fn relative_gap(&self) -> f64 {
        (self.solver - self.oracle) / self.oracle
    }
}

/// Solve `count` random instances (T in 20..=50, 1 to 3 regressors) both ways.
pub fn qreg_cases(count: usize, seed: u64) -> Vec<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taus = [0.1, 0.25, 0.5, 0.75, 0.9];
    (0..count)
        .map(|case| {
            let t = 20 + (case % 4) * 10;
            let k = 1 + case % 3;
            let tau = taus[case % taus.len()];
            let (y, x) = qreg_instance(&mut rng, t, k);
            let (oracle, _) = lp_oracle(&y, &x, tau);
            let solver = total_check_loss(&y, &x, &qreg_fit(&y, &x, tau).unwrap(), tau);
            OracleCase {
                periods: t,
                regressors: k,
                tau,
                oracle,
                solver,
            }
        })
        .collect()
}

/// Closed-form against sampled moments of one mixture-weight posterior.
#[derive(Debug, Clone, Copy)]
pub struct MomentCheck {
    pub a: f64,
    pub b: f64,
    /// |sample - closed form| in standard errors, for `E[z]` and `E[1/z]`.
    pub z_score_mean: f64,
    pub z_score_mean_inv: f64,
}

/// Compare `gig_moments` with `draws` sampler draws at `pairs` random (a, b).
pub fn gig_moment_checks(pairs: usize, draws: usize, seed: u64) -> Vec<MomentCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let a: f64 = rng.random_range(0.2..8.0);
            let b: f64 = rng.random_range(0.05..8.0);
            let (ez, einv) = gig_moments(GigHalf { a, b });
            let (mut s1, mut s2, mut i1, mut i2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..draws {
                let z = sample_gig_half(a, b, &mut rng);
                s1 += z;
                s2 += z * z;
                i1 += 1.0 / z;
                i2 += 1.0 / (z * z);
            }
            let n = draws as f64;
            let (m, mi) = (s1 / n, i1 / n);
            let se = ((s2 / n - m * m) / n).sqrt();
            let sei = ((i2 / n - mi * mi) / n).sqrt();
            MomentCheck {
                a,
                b,
                z_score_mean: (m - ez).abs() / se,
                z_score_mean_inv: (mi - einv).abs() / sei,
            }
        })
        .collect()
}
