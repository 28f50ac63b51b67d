//! Low-dimensional similarity `phi(d) = 1 / (1 + a d^(2b))` and the per-pair
//! gradients of the attractive loss `-log phi` and repulsive loss
//! `-log(1 - phi)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_DIST: f64 = 0.1;
pub const DEFAULT_SPREAD: f64 = 1.0;
pub const DEFAULT_EPS_REP: f64 = 1e-3;
pub const DEFAULT_GRAD_CLIP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub a: f64,
    pub b: f64,
    /// Added to the squared distance in the repulsive denominator.
    pub eps_rep: f64,
    /// Per-coordinate gradient clip; `f64::INFINITY` disables clipping.
    pub grad_clip: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        let fit = fit_ab(DEFAULT_MIN_DIST, DEFAULT_SPREAD);
        Kernel {
            a: fit.a,
            b: fit.b,
            eps_rep: DEFAULT_EPS_REP,
            grad_clip: DEFAULT_GRAD_CLIP,
        }
    }
}

impl Kernel {
    pub fn new(a: f64, b: f64, eps_rep: f64, grad_clip: f64) -> Result<Self> {
        let k = Kernel {
            a,
            b,
            eps_rep,
            grad_clip,
        };
        k.validate()?;
        Ok(k)
    }

    /// Shape `(a, b)` with the default guards.
    pub fn with_shape(a: f64, b: f64) -> Result<Self> {
        Kernel::new(a, b, DEFAULT_EPS_REP, DEFAULT_GRAD_CLIP)
    }

    /// Same shape with clipping and the repulsion guard switched off, as
    /// assumed by the expectation analysis.
    pub fn unguarded(self) -> Self {
        Kernel {
            eps_rep: 0.0,
            grad_clip: f64::INFINITY,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.b > 0.0
            && self.eps_rep >= 0.0
            && self.grad_clip > 0.0
            && self.a.is_finite()
            && self.b.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid kernel {self:?}")))
        }
    }

    pub fn phi(&self, d: f64) -> f64 {
        self.phi_sq(d * d)
    }

    /// `phi` from a squared distance.
    #[inline]
    pub fn phi_sq(&self, d2: f64) -> f64 {
        1.0 / (1.0 + self.a * pow_b(d2, self.b))
    }

    /// Scalar `c` with `grad_attr = c * (e_i - e_j)`; zero at coincidence.
    #[inline]
    pub fn attr_coefficient(&self, d2: f64) -> f64 {
        if d2 <= 0.0 {
            return 0.0;
        }
        let (a, b) = (self.a, self.b);
        if b == 1.0 {
            return 2.0 * a / (1.0 + a * d2);
        }
        let pb = pow_b(d2, b);
        2.0 * a * b * pb / d2 / (1.0 + a * pb)
    }

    /// Scalar `c` with `grad_rep = c * (e_i - e_s)`; zero at coincidence.
    #[inline]
    pub fn rep_coefficient(&self, d2: f64) -> f64 {
        if d2 <= 0.0 {
            return 0.0;
        }
        -2.0 * self.b / ((self.eps_rep + d2) * (1.0 + self.a * pow_b(d2, self.b)))
    }

    #[inline]
    pub fn clip(&self, g: f64) -> f64 {
        g.clamp(-self.grad_clip, self.grad_clip)
    }

    /// Gradient of `-log phi(|e_i - e_j|)` with respect to `e_i`, clipped.
    pub fn grad_attr(&self, ei: &[f64], ej: &[f64]) -> Vec<f64> {
        let c = self.attr_coefficient(sq_dist(ei, ej));
        ei.iter().zip(ej).map(|(x, y)| self.clip(c * (x - y))).collect()
    }

    /// Gradient of `-log(1 - phi(|e_i - e_s|))` with respect to `e_i`, clipped.
    pub fn grad_rep(&self, ei: &[f64], es: &[f64]) -> Vec<f64> {
        let c = self.rep_coefficient(sq_dist(ei, es));
        ei.iter().zip(es).map(|(x, y)| self.clip(c * (x - y))).collect()
    }
}

#[inline]
fn pow_b(d2: f64, b: f64) -> f64 {
    if b == 1.0 {
        d2
    } else {
        d2.powf(b)
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Result of fitting `(a, b)` to the `(min_dist, spread)` target curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbFit {
    pub a: f64,
    pub b: f64,
    pub rmse: f64,
    /// False when the least-squares search failed and `(1, 1)` was returned.
    pub converged: bool,
}

const FIT_GRID: usize = 300;

fn fit_target(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

fn fit_grid(spread: f64) -> impl Iterator<Item = f64> {
    let hi = 3.0 * spread;
    (0..FIT_GRID).map(move |i| hi * i as f64 / (FIT_GRID - 1) as f64)
}

fn fit_rmse(a: f64, b: f64, min_dist: f64, spread: f64) -> f64 {
    let sse: f64 = fit_grid(spread)
        .map(|d| {
            let r = 1.0 / (1.0 + a * d.powf(2.0 * b)) - fit_target(d, min_dist, spread);
            r * r
        })
        .sum();
    (sse / FIT_GRID as f64).sqrt()
}

/// Least-squares fit of `phi(d; a, b)` to the curve that is 1 up to
/// `min_dist` and decays as `exp(-(d - min_dist) / spread)` afterwards, on
/// 300 evenly spaced distances in `[0, 3 spread]`. Levenberg-Marquardt from
/// `(1, 1)`.
pub fn fit_ab(min_dist: f64, spread: f64) -> AbFit {
    let fallback = |rmse| AbFit {
        a: 1.0,
        b: 1.0,
        rmse,
        converged: false,
    };
    if !(min_dist >= 0.0 && spread > 0.0 && min_dist < 3.0 * spread) {
        return fallback(f64::NAN);
    }
    let grid: Vec<f64> = fit_grid(spread).collect();
    let targets: Vec<f64> = grid.iter().map(|&d| fit_target(d, min_dist, spread)).collect();

    let sse_at = |a: f64, b: f64| -> f64 {
        grid.iter()
            .zip(&targets)
            .map(|(&d, &t)| {
                let r = 1.0 / (1.0 + a * d.powf(2.0 * b)) - t;
                r * r
            })
            .sum()
    };

    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    let mut sse = sse_at(a, b);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        // normal equations J^T J and J^T r for the two parameters
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&d, &t) in grid.iter().zip(&targets) {
            let p = d.powf(2.0 * b);
            let phi = 1.0 / (1.0 + a * p);
            let r = phi - t;
            let da = -p * phi * phi;
            let db = if d > 0.0 {
                -a * p * 2.0 * d.ln() * phi * phi
            } else {
                0.0
            };
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            if na > 0.0 && nb > 0.0 {
                let nsse = sse_at(na, nb);
                if nsse <= sse {
                    let rel = (sse - nsse) / sse.max(f64::MIN_POSITIVE);
                    a = na;
                    b = nb;
                    sse = nsse;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < 1e-12 && step_a.abs() < 1e-10 && step_b.abs() < 1e-10 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: at a (local) minimum
            converged = true;
        }
        if converged {
            break;
        }
    }
    let rmse = (sse / FIT_GRID as f64).sqrt();
    if converged && a.is_finite() && b.is_finite() {
        AbFit {
            a,
            b,
            rmse,
            converged,
        }
    } else {
        fallback(fit_rmse(1.0, 1.0, min_dist, spread))
    }
}
