//! Closed-form expectations for the asymmetric Laplace mixture.
//!
//! Every variational factor used by the engine is one of: Gaussian,
//! gamma (loading precisions), inverse gamma (scales) or a generalized
//! inverse Gaussian with index 1/2 (mixture weights). The half-integer
//! index means the modified Bessel functions reduce to elementary
//! functions:
//!
//! ```text
//! K_{1/2}(x) = sqrt(pi / 2x) e^{-x}
//! K_{3/2}(x) = sqrt(pi / 2x) e^{-x} (1 + 1/x)
//! ```
//!
//! so the ratios below involve no Bessel evaluation at all and cannot
//! overflow for large `sqrt(ab)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{QfaError, Result};
use crate::panel::check_loss_unchecked;

/// Floor applied to GIG parameters before moments are taken.
pub const GIG_FLOOR: f64 = 1e-12;

/// GIG(1/2, a, b) with density proportional to `z^{-1/2} exp(-(a z + b / z) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GigHalf {
    pub a: f64,
    pub b: f64,
}

impl GigHalf {
    /// Construct with both parameters clamped below at [`GIG_FLOOR`].
    pub fn clamped(a: f64, b: f64) -> Self {
        Self {
            a: a.max(GIG_FLOOR),
            b: b.max(GIG_FLOOR),
        }
    }

    pub fn mean(&self) -> f64 {
        gig_moments(*self).0
    }

    pub fn mean_inv(&self) -> f64 {
        gig_moments(*self).1
    }

    /// `-E[log q(z)] - (1/2) E[log z]`: the entropy with the `log z`
    /// expectation removed. That term cancels against the likelihood's
    /// `-(1/2) log z`, so the ELBO never needs `E[log z]`.
    pub(crate) fn entropy_without_log_z(&self) -> f64 {
        let (ez, einv) = gig_moments(*self);
        let x = (self.a * self.b).sqrt();
        // log(2 K_{1/2}(x)) = 0.5 log(2 pi) - 0.5 log x - x
        let log_two_k = 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * x.ln() - x;
        -0.25 * (self.a / self.b).ln() + log_two_k + 0.5 * (self.a * ez + self.b * einv)
    }
}

/// Inverse gamma with density proportional to `s^r x^{-r-1} exp(-s / x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaParams {
    pub fn mean_inverse(&self) -> f64 {
        self.shape / self.scale
    }

    pub fn mean_log(&self) -> f64 {
        self.scale.ln() - digamma(self.shape)
    }

    pub fn entropy(&self) -> f64 {
        let r = self.shape;
        r + self.scale.ln() + ln_gamma(r) - (1.0 + r) * digamma(r)
    }

    /// `E_q[log p(x)]` for `x ~ q` under an inverse-gamma prior `(shape0, scale0)`.
    pub(crate) fn cross_log_prior(&self, shape0: f64, scale0: f64) -> f64 {
        shape0 * scale0.ln()
            - ln_gamma(shape0)
            - (shape0 + 1.0) * self.mean_log()
            - scale0 * self.mean_inverse()
    }
}

/// Gamma in shape/rate form; the variational factor of a loading precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        let a = self.shape;
        a - self.rate.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
    }

    pub(crate) fn cross_log_prior(&self, shape0: f64, rate0: f64) -> f64 {
        shape0 * rate0.ln() - ln_gamma(shape0) + (shape0 - 1.0) * self.mean_log()
            - rate0 * self.mean()
    }
}

/// `(E[z], E[1/z])` under GIG(1/2, a, b).
///
/// `E[z] = sqrt(b/a) (1 + 1/sqrt(ab))`, `E[1/z] = sqrt(a/b)`.
pub fn gig_moments(p: GigHalf) -> (f64, f64) {
    let a = p.a.max(GIG_FLOOR);
    let b = p.b.max(GIG_FLOOR);
    let x = (a * b).sqrt();
    let ratio = (b / a).sqrt();
    (ratio * (1.0 + 1.0 / x), 1.0 / ratio)
}

/// `E[1/sigma]` for an inverse-gamma factor.
pub fn inv_gamma_mean_inverse(p: InvGammaParams) -> f64 {
    p.mean_inverse()
}

/// Log density of the asymmetric Laplace distribution with location 0.
pub fn al_log_density(u: f64, tau: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(QfaError::Domain(format!(
            "scale must be positive, got {sigma}"
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QfaError::Domain(format!(
            "quantile level must lie in (0, 1), got {tau}"
        )));
    }
    Ok((tau * (1.0 - tau) / sigma).ln() - check_loss_unchecked(u, tau) / sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, InverseGaussian};

    #[test]
    fn unit_parameters() {
        let (ez, einv) = gig_moments(GigHalf { a: 1.0, b: 1.0 });
        assert_abs_diff_eq!(einv, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ez, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn a4_b1() {
        let (ez, einv) = gig_moments(GigHalf { a: 4.0, b: 1.0 });
        assert_abs_diff_eq!(einv, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ez, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn huge_argument_is_finite() {
        let (ez, einv) = gig_moments(GigHalf { a: 1e6, b: 1e6 });
        assert!(ez.is_finite() && einv.is_finite());
        assert_abs_diff_eq!(einv, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clamp_floor() {
        let p = GigHalf::clamped(2.0, 0.0);
        assert_eq!(p.b, GIG_FLOOR);
        assert!(p.mean_inv() > 1e5);
    }

    /// Direct Bessel-ratio form using the half-integer closed forms,
    /// including the `- 1/b` correction on `E[1/z]`.
    fn bessel_route(a: f64, b: f64) -> (f64, f64) {
        let x = (a * b).sqrt();
        let k_half = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
        let k_three_half = k_half * (1.0 + 1.0 / x);
        let ez = b.sqrt() * k_three_half / (a.sqrt() * k_half);
        let einv = a.sqrt() * k_three_half / (b.sqrt() * k_half) - 1.0 / b;
        (ez, einv)
    }

    #[test]
    fn monte_carlo_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 1_000_000;
        for _ in 0..20 {
            let a: f64 = rng.random_range(0.2..8.0);
            let b: f64 = rng.random_range(0.2..8.0);
            // 1/z ~ IG(mean sqrt(a/b), shape a)
            let ig = InverseGaussian::new((a / b).sqrt(), a).unwrap();
            let (mut s1, mut s2, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..draws {
                let y: f64 = ig.sample(&mut rng);
                let z = 1.0 / y;
                s1 += z;
                s2 += z * z;
                t1 += y;
                t2 += y * y;
            }
            let nd = draws as f64;
            let (mz, my) = (s1 / nd, t1 / nd);
            let se_z = ((s2 / nd - mz * mz) / nd).sqrt();
            let se_y = ((t2 / nd - my * my) / nd).sqrt();
            let (ez, einv) = gig_moments(GigHalf { a, b });
            assert!(
                (mz - ez).abs() < 3.0 * se_z,
                "E[z] a={a} b={b}: {mz} vs {ez}"
            );
            assert!(
                (my - einv).abs() < 3.0 * se_y,
                "E[1/z] a={a} b={b}: {my} vs {einv}"
            );
        }
    }

    #[test]
    fn inverse_gamma_examples() {
        let p = InvGammaParams {
            shape: 2.0,
            scale: 4.0,
        };
        assert_eq!(inv_gamma_mean_inverse(p), 0.5);
        let p = InvGammaParams {
            shape: 0.01 + 300.0,
            scale: 300.01,
        };
        assert_abs_diff_eq!(inv_gamma_mean_inverse(p), 1.0, epsilon = 1e-15);
        let p = InvGammaParams {
            shape: 1e-4,
            scale: 1e-4,
        };
        assert_eq!(inv_gamma_mean_inverse(p), 1.0);
    }

    #[test]
    fn al_density_examples() {
        assert_abs_diff_eq!(al_log_density(0.0, 0.5, 1.0).unwrap(), 0.25f64.ln());
        assert_abs_diff_eq!(al_log_density(1.0, 0.5, 1.0).unwrap(), 0.25f64.ln() - 0.5);
        assert!(al_log_density(1.0, 0.5, 0.0).is_err());
        assert!(al_log_density(1.0, 0.5, -1.0).is_err());
    }

    /// Composite Simpson on each side of the kink at zero.
    fn integrate_al(tau: f64, sigma: f64) -> f64 {
        let simpson = |lo: f64, hi: f64, m: usize| {
            let h = (hi - lo) / m as f64;
            let f = |u: f64| al_log_density(u, tau, sigma).unwrap().exp();
            let mut acc = f(lo) + f(hi);
            for k in 1..m {
                let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(lo + k as f64 * h);
            }
            acc * h / 3.0
        };
        let left = 40.0 * sigma / (1.0 - tau);
        let right = 40.0 * sigma / tau;
        simpson(-left, 0.0, 200_000) + simpson(0.0, right, 200_000)
    }

    #[test]
    fn al_density_integrates_to_one() {
        assert_abs_diff_eq!(integrate_al(0.3, 2.0), 1.0, epsilon = 1e-6);
        for tau in [0.1, 0.5, 0.9] {
            for sigma in [0.5, 1.0, 2.0] {
                assert_abs_diff_eq!(integrate_al(tau, sigma), 1.0, epsilon = 1e-6);
            }
        }
    }

    /// Numerical entropy of GIG(1/2, a, b) by quadrature over log z.
    fn quadrature_entropy_and_log_mean(a: f64, b: f64) -> (f64, f64) {
        let x = (a * b).sqrt();
        let log_norm =
            0.25 * (a / b).ln() - (0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * x.ln() - x);
        let log_q = |z: f64| log_norm - 0.5 * z.ln() - 0.5 * (a * z + b / z);
        let (lo, hi, m) = (-40.0f64, 12.0f64, 400_000usize);
        let h = (hi - lo) / m as f64;
        let (mut ent, mut elog) = (0.0, 0.0);
        for k in 0..=m {
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            let s = lo + k as f64 * h;
            let z = s.exp();
            let lq = log_q(z);
            let dens = lq.exp() * z;
            ent -= w * dens * lq;
            elog += w * dens * s;
        }
        (ent * h, elog * h)
    }

    #[test]
    fn entropy_matches_quadrature() {
        for (a, b) in [(1.0, 1.0), (4.0, 1.0), (0.3, 5.0), (10.0, 0.02)] {
            let (ent, elog) = quadrature_entropy_and_log_mean(a, b);
            let p = GigHalf { a, b };
            assert_abs_diff_eq!(p.entropy_without_log_z() + 0.5 * elog, ent, epsilon = 1e-6);
        }
    }

    #[test]
    fn agrees_with_bessel_ratio() {
        for (a, b) in [(1.0, 1.0), (4.0, 1.0), (0.5, 3.0), (20.0, 0.1)] {
            let (ez, einv) = gig_moments(GigHalf { a, b });
            let (bz, binv) = bessel_route(a, b);
            assert_abs_diff_eq!(ez, bz, epsilon = 1e-12 * ez.max(1.0));
            assert_abs_diff_eq!(einv, binv, epsilon = 1e-10 * einv.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn jensen(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
            let (ez, einv) = gig_moments(GigHalf { a, b });
            prop_assert!(ez * einv > 1.0);
        }

        #[test]
        fn symmetric_parameters(a in 1e-6f64..1e6) {
            let (_, einv) = gig_moments(GigHalf { a, b: a });
            prop_assert!((einv - 1.0).abs() < 1e-12);
        }
    }
}
