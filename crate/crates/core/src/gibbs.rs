//! Gibbs sampler for the same model the variational engine approximates.
//!
//! Every block has a conjugate full conditional: the variational updates
//! with expectations replaced by the current draws. Factors are identified
//! only up to rotation, so each kept draw is aligned to a reference (the
//! principal components) by orthogonal Procrustes before averaging.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, StandardNormal};

use crate::error::{QfaError, Result};
use crate::mixture::GIG_FLOOR;
use crate::panel::{EstimatorConfig, Panel, QuantileSpec};
use crate::pca::pca_factors;
use crate::vb::INTERCEPT_PRECISION;

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsConfig {
    /// Total sweeps, burn-in included.
    pub n_draws: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_draws: 5000,
            burn_in: 1000,
            thin: 2,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws <= self.burn_in {
            return Err(QfaError::Config(format!(
                "no draws left after burn-in ({} draws, {} burn-in)",
                self.n_draws, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(QfaError::Config(
                "thinning interval must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of draws kept after burn-in and thinning.
    pub fn kept(&self) -> usize {
        (self.n_draws - self.burn_in) / self.thin
    }
}

/// Kept draws, aligned to the reference rotation. With intercepts the
/// loading draws carry them as a trailing column.
#[derive(Debug, Clone)]
pub struct GibbsDraws {
    pub factor_draws: Vec<DMatrix<f64>>,
    pub loading_draws: Vec<DMatrix<f64>>,
    pub sigma_draws: Vec<DVector<f64>>,
    /// n×r precision draws.
    pub alpha_draws: Vec<DMatrix<f64>>,
    /// Posterior mean of the mixture weights, n×T (full draws would be
    /// n·T per kept sweep).
    pub z_mean: DMatrix<f64>,
}

impl GibbsDraws {
    pub fn len(&self) -> usize {
        self.factor_draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factor_draws.is_empty()
    }

    pub fn factor_mean(&self) -> DMatrix<f64> {
        mean_of(&self.factor_draws)
    }

    pub fn loading_mean(&self) -> DMatrix<f64> {
        mean_of(&self.loading_draws)
    }
}

fn mean_of(draws: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut acc = draws[0].clone() * 0.0;
    for d in draws {
        acc += d;
    }
    acc / draws.len() as f64
}

/// A draw from GIG(1/2, a, b): the reciprocal of an inverse Gaussian with
/// mean `sqrt(a/b)` and shape `a`.
pub fn sample_gig_half<R: rand::Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let a = a.max(GIG_FLOOR);
    let b = b.max(GIG_FLOOR);
    let ig = InverseGaussian::new((a / b).sqrt(), a).expect("positive parameters");
    1.0 / ig.sample(rng)
}

/// Current values of every block.
#[derive(Debug, Clone)]
pub struct GibbsState {
    /// n×p, trailing intercept column when present.
    pub loadings: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    /// n×r.
    pub alpha: DMatrix<f64>,
    pub sigma: DVector<f64>,
    /// n×T.
    pub z: DMatrix<f64>,
}

impl GibbsState {
    fn r(&self) -> usize {
        self.factors.ncols()
    }

    fn p(&self) -> usize {
        self.loadings.ncols()
    }

    fn aug_factor(&self, t: usize) -> DVector<f64> {
        let r = self.r();
        DVector::from_fn(
            self.p(),
            |k, _| if k < r { self.factors[(t, k)] } else { 1.0 },
        )
    }

    /// n×T residuals `x_it - lambda_i' f_t` (intercept included).
    fn residuals(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.r();
        let f_aug = DMatrix::from_fn(self.factors.nrows(), self.p(), |t, k| {
            if k < r {
                self.factors[(t, k)]
            } else {
                1.0
            }
        });
        x.transpose() - &self.loadings * f_aug.transpose()
    }
}

/// Draw from `N(P^-1 h, P^-1)` given precision `P` and linear term `h`.
fn gaussian_from_precision<R: rand::Rng + ?Sized>(
    prec: DMatrix<f64>,
    h: &DVector<f64>,
    rng: &mut R,
) -> Option<DVector<f64>> {
    let chol = prec.cholesky()?;
    let mean = chol.solve(h);
    let xi = DVector::from_fn(h.len(), |_, _| StandardNormal.sample(rng));
    // L' u = xi gives u ~ N(0, P^-1)
    let u = chol.l().transpose().solve_upper_triangular(&xi)?;
    Some(mean + u)
}

/// Full-conditional draws for one quantile level.
pub struct GibbsSampler<'a> {
    x: &'a DMatrix<f64>,
    q: QuantileSpec,
    config: &'a EstimatorConfig,
    pub state: GibbsState,
}

impl<'a> GibbsSampler<'a> {
    /// Start at the principal components with unit weights, scales and
    /// precisions and zero loadings.
    pub fn new(panel: &'a Panel, config: &'a EstimatorConfig, q: &QuantileSpec) -> Result<Self> {
        config.validate(panel.periods(), panel.series())?;
        let (t, n) = (panel.periods(), panel.series());
        let r = config.n_factors;
        let p = r + usize::from(config.intercept);
        let factors = pca_factors(panel, r)?.factors;
        Ok(Self {
            x: panel.values(),
            q: *q,
            config,
            state: GibbsState {
                loadings: DMatrix::zeros(n, p),
                factors,
                alpha: DMatrix::from_element(n, r, 1.0),
                sigma: DVector::from_element(n, 1.0),
                z: DMatrix::from_element(n, t, 1.0),
            },
        })
    }

    pub fn draw_loadings<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (t_len, n) = self.x.shape();
        let (r, p) = (self.state.r(), self.state.p());
        let k1 = self.q.kappa1();
        let k2 = self.q.kappa2_sq();
        let f_aug: Vec<DVector<f64>> = (0..t_len).map(|t| self.state.aug_factor(t)).collect();
        for i in 0..n {
            let c = 1.0 / (k2 * self.state.sigma[i]);
            let mut prec = DMatrix::zeros(p, p);
            let mut h = DVector::zeros(p);
            for (t, f) in f_aug.iter().enumerate() {
                let w = c / self.state.z[(i, t)];
                prec.ger(w, f, f, 1.0);
                h.axpy(w * self.x[(t, i)] - c * k1, f, 1.0);
            }
            for j in 0..p {
                prec[(j, j)] += if j < r {
                    self.state.alpha[(i, j)]
                } else {
                    INTERCEPT_PRECISION
                };
            }
            let draw = gaussian_from_precision(prec, &h, rng).ok_or_else(|| {
                QfaError::numerical(
                    "loadings",
                    0,
                    format!("precision of series {i} not positive definite"),
                )
            })?;
            self.state.loadings.set_row(i, &draw.transpose());
        }
        Ok(())
    }

    pub fn draw_alpha<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        let r = self.state.r();
        for i in 0..self.state.alpha.nrows() {
            for j in 0..r {
                let l = self.state.loadings[(i, j)];
                let rate = self.config.b0 + 0.5 * l * l;
                let g = Gamma::new(self.config.a0 + 0.5, 1.0 / rate).expect("positive parameters");
                self.state.alpha[(i, j)] = g.sample(rng).max(f64::MIN_POSITIVE);
            }
        }
    }

    pub fn draw_z<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        let (t_len, n) = self.x.shape();
        let k1 = self.q.kappa1();
        let k2 = self.q.kappa2_sq();
        let resid = self.state.residuals(self.x);
        for i in 0..n {
            let inv_s = 1.0 / self.state.sigma[i];
            let a = inv_s * (2.0 + k1 * k1 / k2);
            for t in 0..t_len {
                let e = resid[(i, t)];
                self.state.z[(i, t)] = sample_gig_half(a, inv_s * e * e / k2, rng);
            }
        }
    }

    pub fn draw_sigma<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (t_len, n) = self.x.shape();
        let k1 = self.q.kappa1();
        let k2 = self.q.kappa2_sq();
        let shape = self.config.r0 + 1.5 * t_len as f64;
        let resid = self.state.residuals(self.x);
        for i in 0..n {
            let mut scale = self.config.s0;
            for t in 0..t_len {
                let z = self.state.z[(i, t)];
                let d = resid[(i, t)] - k1 * z;
                scale += d * d / (2.0 * k2 * z) + z;
            }
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(QfaError::numerical(
                    "sigma",
                    0,
                    format!("scale of series {i} is {scale}"),
                ));
            }
            let g = Gamma::new(shape, 1.0).expect("positive shape");
            self.state.sigma[i] = scale / g.sample(rng);
        }
        Ok(())
    }

    pub fn draw_factors<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (t_len, n) = self.x.shape();
        let r = self.state.r();
        let has_int = self.state.p() > r;
        let k1 = self.q.kappa1();
        let k2 = self.q.kappa2_sq();
        for t in 0..t_len {
            let mut prec = DMatrix::identity(r, r);
            let mut h = DVector::zeros(r);
            for i in 0..n {
                let z = self.state.z[(i, t)];
                let w = 1.0 / (k2 * self.state.sigma[i] * z);
                let l = DVector::from_fn(r, |k, _| self.state.loadings[(i, k)]);
                prec.ger(w, &l, &l, 1.0);
                let level = if has_int {
                    self.state.loadings[(i, r)]
                } else {
                    0.0
                };
                h.axpy(w * (self.x[(t, i)] - level - k1 * z), &l, 1.0);
            }
            let draw = gaussian_from_precision(prec, &h, rng).ok_or_else(|| {
                QfaError::numerical(
                    "factors",
                    0,
                    format!("precision of period {t} not positive definite"),
                )
            })?;
            self.state.factors.set_row(t, &draw.transpose());
        }
        Ok(())
    }

    /// One full cycle in the variational sweep order.
    pub fn sweep<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.draw_loadings(rng)?;
        self.draw_alpha(rng);
        self.draw_z(rng);
        self.draw_sigma(rng)?;
        self.draw_factors(rng)
    }
}

/// Orthogonal `Q` minimizing `||F Q - reference||`.
pub fn procrustes(factors: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let m = factors.transpose() * reference;
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V'");
    u * v_t
}

/// Run the chain and return the kept, aligned draws.
pub fn gibbs_fit(
    panel: &Panel,
    config: &EstimatorConfig,
    q: &QuantileSpec,
    gibbs: &GibbsConfig,
) -> Result<GibbsDraws> {
    gibbs.validate()?;
    let mut sampler = GibbsSampler::new(panel, config, q)?;
    let reference = sampler.state.factors.clone();
    let r = config.n_factors;
    let mut rng = ChaCha8Rng::seed_from_u64(gibbs.seed);
    let kept = gibbs.kept();
    let mut out = GibbsDraws {
        factor_draws: Vec::with_capacity(kept),
        loading_draws: Vec::with_capacity(kept),
        sigma_draws: Vec::with_capacity(kept),
        alpha_draws: Vec::with_capacity(kept),
        z_mean: DMatrix::zeros(panel.series(), panel.periods()),
    };
    for it in 0..gibbs.n_draws {
        sampler
            .sweep(&mut rng)
            .map_err(|e| e.at_iteration(it + 1))?;
        if it < gibbs.burn_in || (it - gibbs.burn_in + 1) % gibbs.thin != 0 {
            continue;
        }
        if out.len() == kept {
            break;
        }
        let s = &sampler.state;
        let rot = procrustes(&s.factors, &reference);
        let mut loadings = s.loadings.clone();
        let aligned = s.loadings.columns(0, r) * &rot;
        loadings.columns_mut(0, r).copy_from(&aligned);
        out.factor_draws.push(&s.factors * &rot);
        out.loading_draws.push(loadings);
        out.sigma_draws.push(s.sigma.clone());
        out.alpha_draws.push(s.alpha.clone());
        out.z_mean += &s.z;
    }
    out.z_mean /= out.len() as f64;
    Ok(out)
}
