//! Synthetic loss-sequence generators with known curvature class and exact
//! problem-dependent quantities, plus the two-player zero-sum game engine.
//!
//! Every environment precomputes its full sequence from one seeded generator
//! at construction, so runs replay exactly and the gradient-variation totals
//! are computed from the realized sequence rather than estimated. Families
//! whose gradient differences are point-independent (quadratics, linears,
//! the quadratic SEA sampler) report an exact `V_T`; the log-loss family
//! reports a sampled lower bound flagged as approximate.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::geometry::{project, BoundsBundle, Domain};
use crate::linalg;
use crate::Result;

/// Declared curvature class of a loss sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureClass {
    StronglyConvex(f64),
    ExpConcave(f64),
    Convex,
}

/// Center drift schedules for the drifting-quadratic family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSchedule {
    /// Constant step length per round.
    Constant { step: f64 },
    /// Step length `scale / t`; the cumulative variation stays bounded.
    Harmonic { scale: f64 },
}

/// Stochastic/adversarial interpolation knobs: total stochastic variance and
/// total adversarial (expected-function) variation budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeaParams {
    pub sigma2: f64,
    pub adv2: f64,
}

#[derive(Debug, Clone)]
enum EnvKind {
    FixedQuadratic { center: Array1<f64>, curvature: f64 },
    DriftingQuadratic { centers: Vec<Array1<f64>>, curvature: f64 },
    DriftingLinear { grads: Vec<Array1<f64>> },
    AdversarialLinear { grads: Vec<Array1<f64>> },
    LogLoss { dirs: Vec<Array1<f64>>, offset: f64 },
    Sea { centers: Vec<Array1<f64>>, noise: Vec<Array1<f64>>, curvature: f64, params: SeaParams },
}

/// One fully materialized loss sequence.
#[derive(Debug, Clone)]
pub struct Environment {
    kind: EnvKind,
    class: CurvatureClass,
    bounds: BoundsBundle,
    domain: Domain,
    horizon: usize,
    /// Per-step sup-norm gradient variation, `vt_steps[t-2]` for round t.
    vt_steps: Vec<f64>,
    vt_exact: bool,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(1e-12..1.0f64);
    let u2: f64 = rng.random_range(0.0..1.0f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_iter((0..dim).map(|_| gaussian(rng)));
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Truncated-Gaussian noise vector with `E||xi||^2` equal to `sigma2` up to
/// the (negligible) 5-sigma truncation mass. Shared by the SEA constructor
/// and its Monte-Carlo verification.
pub fn sea_noise_draw(rng: &mut ChaCha8Rng, dim: usize, sigma2: f64) -> Array1<f64> {
    let coord_sd = (sigma2 / dim as f64).sqrt();
    Array1::from_iter((0..dim).map(|_| gaussian(rng).clamp(-5.0, 5.0) * coord_sd))
}

/// Largest distance from `point` to any feasible point.
fn max_dist_from(domain: &Domain, point: &Array1<f64>) -> f64 {
    match domain {
        Domain::Ball { center, radius } => {
            let d = point - center;
            radius + d.dot(&d).sqrt()
        }
        Domain::Box { lower, upper } => {
            let mut s = 0.0;
            for i in 0..lower.len() {
                let a = (point[i] - lower[i]).abs();
                let b = (upper[i] - point[i]).abs();
                let m = a.max(b);
                s += m * m;
            }
            s.sqrt()
        }
    }
}

/// Random point within `frac` of the inradius around the domain center;
/// drift targets stay well inside the feasible set.
fn inner_point(rng: &mut ChaCha8Rng, domain: &Domain, frac: f64) -> Array1<f64> {
    let r = 0.5 * domain.diameter() * frac;
    let dir = random_unit(rng, domain.dim());
    let len: f64 = rng.random_range(0.0..r);
    domain.center() + &(dir * len)
}

impl Environment {
    pub fn class(&self) -> CurvatureClass {
        self.class
    }

    pub fn bounds(&self) -> &BoundsBundle {
        &self.bounds
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check_round(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.horizon {
            return Err(Error::Contract(format!(
                "round {t} outside horizon 1..={}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Loss value at round `t` (1-based).
    pub fn value(&self, t: usize, x: &Array1<f64>) -> Result<f64> {
        self.check_round(t)?;
        Ok(match &self.kind {
            EnvKind::FixedQuadratic { center, curvature } => {
                let d = x - center;
                0.5 * curvature * d.dot(&d)
            }
            EnvKind::DriftingQuadratic { centers, curvature } => {
                let d = x - &centers[t - 1];
                0.5 * curvature * d.dot(&d)
            }
            EnvKind::DriftingLinear { grads } | EnvKind::AdversarialLinear { grads } => {
                grads[t - 1].dot(x)
            }
            EnvKind::LogLoss { dirs, offset } => -(dirs[t - 1].dot(x) + offset).ln(),
            EnvKind::Sea { centers, noise, curvature, .. } => {
                let d = x - &centers[t - 1];
                0.5 * curvature * d.dot(&d) + noise[t - 1].dot(x)
            }
        })
    }

    /// Exact gradient at round `t`.
    pub fn gradient(&self, t: usize, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_round(t)?;
        Ok(match &self.kind {
            EnvKind::FixedQuadratic { center, curvature } => (x - center) * *curvature,
            EnvKind::DriftingQuadratic { centers, curvature } => {
                (x - &centers[t - 1]) * *curvature
            }
            EnvKind::DriftingLinear { grads } | EnvKind::AdversarialLinear { grads } => {
                grads[t - 1].clone()
            }
            EnvKind::LogLoss { dirs, offset } => {
                let a = &dirs[t - 1];
                let denom = a.dot(x) + offset;
                a * (-1.0 / denom)
            }
            EnvKind::Sea { centers, noise, curvature, .. } => {
                (x - &centers[t - 1]) * *curvature + &noise[t - 1]
            }
        })
    }

    /// Expected-loss value for the SEA family (`None` elsewhere).
    pub fn expected_value(&self, t: usize, x: &Array1<f64>) -> Option<f64> {
        match &self.kind {
            EnvKind::Sea { centers, curvature, .. } if t >= 1 && t <= self.horizon => {
                let d = x - &centers[t - 1];
                Some(0.5 * curvature * d.dot(&d))
            }
            _ => None,
        }
    }

    /// The stochastic/adversarial knobs of a SEA environment.
    pub fn sea_params(&self) -> Option<SeaParams> {
        match &self.kind {
            EnvKind::Sea { params, .. } => Some(*params),
            _ => None,
        }
    }

    /// Expected-loss gradient for the SEA family (`None` elsewhere).
    pub fn expected_gradient(&self, t: usize, x: &Array1<f64>) -> Option<Array1<f64>> {
        match &self.kind {
            EnvKind::Sea { centers, curvature, .. } if t >= 1 && t <= self.horizon => {
                Some((x - &centers[t - 1]) * *curvature)
            }
            _ => None,
        }
    }

    /// Total sup-norm gradient variation of the sequence; the flag is false
    /// when the value is a sampled lower bound rather than a closed form.
    pub fn vt_total(&self) -> (f64, bool) {
        (self.vt_steps.iter().sum(), self.vt_exact)
    }

    /// Per-step sup-norm variation contribution of round `t` (zero at t = 1).
    pub fn vt_step(&self, t: usize) -> f64 {
        if t < 2 || t > self.horizon {
            0.0
        } else {
            self.vt_steps[t - 2]
        }
    }

    pub fn vt_is_exact(&self) -> bool {
        self.vt_exact
    }

    /// `sum_t f_t(x)`, evaluated from precomputed moments where the family
    /// allows (quadratics and linears) or by direct summation (log loss).
    pub fn offline_objective(&self, x: &Array1<f64>) -> f64 {
        let t = self.horizon as f64;
        match &self.kind {
            EnvKind::FixedQuadratic { center, curvature } => {
                let d = x - center;
                t * 0.5 * curvature * d.dot(&d)
            }
            EnvKind::DriftingQuadratic { centers, curvature } => {
                let mut sum_c = Array1::<f64>::zeros(x.len());
                let mut sum_c2 = 0.0;
                for c in centers {
                    sum_c += c;
                    sum_c2 += c.dot(c);
                }
                0.5 * curvature * (t * x.dot(x) - 2.0 * x.dot(&sum_c) + sum_c2)
            }
            EnvKind::DriftingLinear { grads } | EnvKind::AdversarialLinear { grads } => {
                let mut sum_g = Array1::<f64>::zeros(x.len());
                for g in grads {
                    sum_g += g;
                }
                sum_g.dot(x)
            }
            EnvKind::LogLoss { dirs, offset } => {
                dirs.iter().map(|a| -(a.dot(x) + offset).ln()).sum()
            }
            EnvKind::Sea { centers, noise, curvature, .. } => {
                let mut sum_c = Array1::<f64>::zeros(x.len());
                let mut sum_c2 = 0.0;
                let mut sum_n = Array1::<f64>::zeros(x.len());
                for (c, xi) in centers.iter().zip(noise.iter()) {
                    sum_c += c;
                    sum_c2 += c.dot(c);
                    sum_n += xi;
                }
                0.5 * curvature * (t * x.dot(x) - 2.0 * x.dot(&sum_c) + sum_c2) + sum_n.dot(x)
            }
        }
    }

    /// Gradient of `offline_objective`.
    pub fn offline_gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        let t = self.horizon as f64;
        match &self.kind {
            EnvKind::FixedQuadratic { center, curvature } => (x - center) * (t * curvature),
            EnvKind::DriftingQuadratic { centers, curvature } => {
                let mut sum_c = Array1::<f64>::zeros(x.len());
                for c in centers {
                    sum_c += c;
                }
                (&(x * t) - &sum_c) * *curvature
            }
            EnvKind::DriftingLinear { grads } | EnvKind::AdversarialLinear { grads } => {
                let mut sum_g = Array1::<f64>::zeros(x.len());
                for g in grads {
                    sum_g += g;
                }
                sum_g
            }
            EnvKind::LogLoss { dirs, offset } => {
                let mut g = Array1::<f64>::zeros(x.len());
                for a in dirs {
                    let denom = a.dot(x) + offset;
                    g += &(a * (-1.0 / denom));
                }
                g
            }
            EnvKind::Sea { centers, noise, curvature, .. } => {
                let mut sum_c = Array1::<f64>::zeros(x.len());
                let mut sum_n = Array1::<f64>::zeros(x.len());
                for (c, xi) in centers.iter().zip(noise.iter()) {
                    sum_c += c;
                    sum_n += xi;
                }
                (&(x * t) - &sum_c) * *curvature + &sum_n
            }
        }
    }

    /// Closed-form minimizer of the offline objective over the domain, when
    /// the family admits one. Isotropic quadratics project their
    /// unconstrained minimizer exactly (for both balls and boxes); linear
    /// sums take a support point of the domain.
    pub fn closed_form_minimizer(&self) -> Option<Array1<f64>> {
        match &self.kind {
            EnvKind::FixedQuadratic { center, .. } => project(&self.domain, center).ok(),
            EnvKind::DriftingQuadratic { centers, .. } => {
                let mut mean = Array1::<f64>::zeros(self.domain.dim());
                for c in centers {
                    mean += c;
                }
                mean /= self.horizon as f64;
                project(&self.domain, &mean).ok()
            }
            EnvKind::DriftingLinear { grads } | EnvKind::AdversarialLinear { grads } => {
                let mut sum_g = Array1::<f64>::zeros(self.domain.dim());
                for g in grads {
                    sum_g += g;
                }
                Some(linear_support_minimizer(&self.domain, &sum_g))
            }
            EnvKind::LogLoss { .. } => None,
            EnvKind::Sea { centers, noise, curvature, .. } => {
                let t = self.horizon as f64;
                let mut mean = Array1::<f64>::zeros(self.domain.dim());
                let mut sum_n = Array1::<f64>::zeros(self.domain.dim());
                for (c, xi) in centers.iter().zip(noise.iter()) {
                    mean += c;
                    sum_n += xi;
                }
                mean /= t;
                let target = &mean - &(&sum_n / (t * curvature));
                project(&self.domain, &target).ok()
            }
        }
    }

    // ----- constructors -----

    /// `f_t(x) = (curvature/2) ||x - c||^2` with a fixed center placed at
    /// `offset_frac` of the inradius in a seeded direction.
    pub fn fixed_quadratic(
        domain: Domain,
        curvature: f64,
        offset_frac: f64,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        check_curvature(curvature)?;
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = random_unit(&mut rng, domain.dim());
        let center = domain.center() + &(dir * (offset_frac * 0.5 * domain.diameter()));
        let g = curvature * max_dist_from(&domain, &center);
        let bounds = BoundsBundle::new(domain.diameter(), g, curvature)?;
        Ok(Environment {
            kind: EnvKind::FixedQuadratic { center, curvature },
            class: CurvatureClass::StronglyConvex(curvature),
            bounds,
            vt_steps: vec![0.0; horizon.saturating_sub(1)],
            vt_exact: true,
            domain,
            horizon,
        })
    }

    /// Quadratics whose center random-walks under the given schedule, kept
    /// inside the inner part of the feasible set.
    pub fn drifting_quadratic(
        domain: Domain,
        curvature: f64,
        drift: DriftSchedule,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        check_curvature(curvature)?;
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inradius = 0.3 * domain.diameter();
        let mut centers = Vec::with_capacity(horizon);
        centers.push(inner_point(&mut rng, &domain, 0.4));
        for t in 2..=horizon {
            let step = match drift {
                DriftSchedule::Constant { step } => step,
                DriftSchedule::Harmonic { scale } => scale / t as f64,
            };
            let prev = centers.last().unwrap().clone();
            let next = walk_step(&mut rng, &prev, &domain.center(), step, inradius);
            centers.push(next);
        }
        let mut g_max: f64 = 0.0;
        for c in &centers {
            g_max = g_max.max(curvature * max_dist_from(&domain, c));
        }
        let bounds = BoundsBundle::new(domain.diameter(), g_max, curvature)?;
        let vt_steps: Vec<f64> = centers
            .windows(2)
            .map(|w| {
                let d = &w[1] - &w[0];
                curvature * curvature * d.dot(&d)
            })
            .collect();
        Ok(Environment {
            kind: EnvKind::DriftingQuadratic { centers, curvature },
            class: CurvatureClass::StronglyConvex(curvature),
            bounds,
            vt_steps,
            vt_exact: true,
            domain,
            horizon,
        })
    }

    /// Linear losses `<g_t, x>` with `g_t = base + amplitude * u_t` for fresh
    /// seeded unit vectors `u_t`. The amplitude controls the gradient
    /// variation exactly; a zero base keeps the gradients zero-mean so the
    /// comparator gap tracks the random-walk magnitude of their sum.
    pub fn drifting_linear(
        domain: Domain,
        base_norm: f64,
        amplitude: f64,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if amplitude < 0.0 || base_norm < 0.0 || amplitude + base_norm <= 0.0 {
            return Err(Error::Config(
                "gradient magnitudes must be non-negative and not all zero".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = if base_norm > 0.0 {
            random_unit(&mut rng, domain.dim()) * base_norm
        } else {
            Array1::zeros(domain.dim())
        };
        let grads: Vec<Array1<f64>> = (0..horizon)
            .map(|_| &base + &(random_unit(&mut rng, domain.dim()) * amplitude))
            .collect();
        let g = base_norm + amplitude;
        // Linear losses are 0-smooth; declare a nominal constant.
        let bounds = BoundsBundle::new(domain.diameter(), g, 1e-3)?;
        let vt_steps: Vec<f64> = grads
            .windows(2)
            .map(|w| {
                let d = &w[1] - &w[0];
                d.dot(&d)
            })
            .collect();
        Ok(Environment {
            kind: EnvKind::DriftingLinear { grads },
            class: CurvatureClass::Convex,
            bounds,
            vt_steps,
            vt_exact: true,
            domain,
            horizon,
        })
    }

    /// Sign-flipping linear losses along a fixed seeded direction; the sign
    /// flips each round with probability `flip_prob`.
    pub fn adversarial_linear(
        domain: Domain,
        magnitude: f64,
        flip_prob: f64,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        if magnitude <= 0.0 || !(0.0..=1.0).contains(&flip_prob) {
            return Err(Error::Config("need magnitude > 0 and flip_prob in [0, 1]".into()));
        }
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = random_unit(&mut rng, domain.dim());
        let mut sign = 1.0;
        let grads: Vec<Array1<f64>> = (0..horizon)
            .map(|_| {
                if rng.random_range(0.0..1.0f64) < flip_prob {
                    sign = -sign;
                }
                &dir * (sign * magnitude)
            })
            .collect();
        let bounds = BoundsBundle::new(domain.diameter(), magnitude, 1e-3)?;
        let vt_steps: Vec<f64> = grads
            .windows(2)
            .map(|w| {
                let d = &w[1] - &w[0];
                d.dot(&d)
            })
            .collect();
        Ok(Environment {
            kind: EnvKind::AdversarialLinear { grads },
            class: CurvatureClass::Convex,
            bounds,
            vt_steps,
            vt_exact: true,
            domain,
            horizon,
        })
    }

    /// Log losses `-ln(<a_t, x> + b)` over slowly rotating unit directions.
    /// The offset keeps the argument at least `margin` over the feasible
    /// set, which caps the gradients at `1/margin` and the smoothness at
    /// `1/margin^2`.
    pub fn log_loss(
        domain: Domain,
        margin: f64,
        drift_amplitude: f64,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if margin <= 0.0 || !margin.is_finite() {
            return Err(Error::Config("log-loss margin must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs = Vec::with_capacity(horizon);
        let mut cur = random_unit(&mut rng, domain.dim());
        for _ in 0..horizon {
            dirs.push(cur.clone());
            let perturbed = &cur + &(random_unit(&mut rng, domain.dim()) * drift_amplitude);
            let n = perturbed.dot(&perturbed).sqrt();
            cur = perturbed / n;
        }
        let max_norm = domain.max_point_norm();
        let offset = max_norm + margin;
        // |<a, x>| <= max_norm, so the argument lies in
        // [margin, 2 max_norm + margin].
        let g = 1.0 / margin;
        let l = 1.0 / (margin * margin);
        let bounds = BoundsBundle::new(domain.diameter(), g, l)?;
        // -ln is 1-exp-concave in its argument; convert to the inner-product
        // form under the bounded gradients.
        let alpha = 0.5 * (1.0f64).min(1.0 / (4.0 * g * domain.diameter()));
        // Sampled (approximate) per-step variation over feasible probes.
        let probes: Vec<Array1<f64>> = (0..32)
            .map(|_| {
                let raw = Array1::from_iter(
                    (0..domain.dim()).map(|_| rng.random_range(-1.0..1.0) * max_norm),
                );
                project(&domain, &raw).unwrap()
            })
            .collect();
        let mut vt_steps = Vec::with_capacity(horizon.saturating_sub(1));
        for w in dirs.windows(2) {
            let mut worst = 0.0f64;
            for x in &probes {
                let g_new = &w[1] * (-1.0 / (w[1].dot(x) + offset));
                let g_old = &w[0] * (-1.0 / (w[0].dot(x) + offset));
                let d = &g_new - &g_old;
                worst = worst.max(d.dot(&d));
            }
            vt_steps.push(worst);
        }
        Ok(Environment {
            kind: EnvKind::LogLoss { dirs, offset },
            class: CurvatureClass::ExpConcave(alpha),
            bounds,
            vt_steps,
            vt_exact: false,
            domain,
            horizon,
        })
    }

    /// Quadratic losses sampled around a drifting expected function:
    /// `f_t = F_t + <xi_t, .>` with `F_t(x) = (curvature/2) ||x - c_t||^2`.
    /// `sigma2` is the per-round stochastic variance, `adv2` the total drift
    /// budget of the expected centers; either may be zero.
    pub fn sea_quadratic(
        domain: Domain,
        curvature: f64,
        params: SeaParams,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        check_curvature(curvature)?;
        if params.sigma2 < 0.0 || params.adv2 < 0.0 {
            return Err(Error::Config("variance knobs must be non-negative".into()));
        }
        if horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inradius = 0.3 * domain.diameter();
        let mut centers = Vec::with_capacity(horizon);
        centers.push(inner_point(&mut rng, &domain, 0.4));
        let step = if horizon > 1 {
            (params.adv2 / (horizon - 1) as f64).sqrt() / curvature
        } else {
            0.0
        };
        for _ in 2..=horizon {
            let prev = centers.last().unwrap().clone();
            let next = if step > 0.0 {
                walk_step(&mut rng, &prev, &domain.center(), step, inradius)
            } else {
                prev
            };
            centers.push(next);
        }
        let noise: Vec<Array1<f64>> = (0..horizon)
            .map(|_| {
                if params.sigma2 > 0.0 {
                    sea_noise_draw(&mut rng, domain.dim(), params.sigma2)
                } else {
                    Array1::zeros(domain.dim())
                }
            })
            .collect();
        let mut g_max: f64 = 0.0;
        for (c, xi) in centers.iter().zip(noise.iter()) {
            g_max = g_max.max(curvature * max_dist_from(&domain, c) + xi.dot(xi).sqrt());
        }
        let bounds = BoundsBundle::new(domain.diameter(), g_max, curvature)?;
        let mut vt_steps = Vec::with_capacity(horizon.saturating_sub(1));
        for t in 1..horizon {
            let dc = (&centers[t - 1] - &centers[t]) * curvature;
            let dn = &noise[t] - &noise[t - 1];
            let d = &dc + &dn;
            vt_steps.push(d.dot(&d));
        }
        Ok(Environment {
            kind: EnvKind::Sea { centers, noise, curvature, params },
            class: CurvatureClass::StronglyConvex(curvature),
            bounds,
            vt_steps,
            vt_exact: true,
            domain,
            horizon,
        })
    }
}

fn check_curvature(curvature: f64) -> Result<()> {
    if curvature <= 0.0 || !curvature.is_finite() {
        return Err(Error::Config("curvature must be positive and finite".into()));
    }
    Ok(())
}

/// One random-walk step of exact length `step`, kept inside the ball of
/// radius `limit` around `origin`: try the seeded direction, then its
/// negation, then fall straight back toward the origin.
fn walk_step(
    rng: &mut ChaCha8Rng,
    from: &Array1<f64>,
    origin: &Array1<f64>,
    step: f64,
    limit: f64,
) -> Array1<f64> {
    if step == 0.0 {
        return from.clone();
    }
    let dir = random_unit(rng, from.len());
    for cand_dir in [dir.clone(), -dir] {
        let cand = from + &(&cand_dir * step);
        let d = &cand - origin;
        if d.dot(&d).sqrt() <= limit {
            return cand;
        }
    }
    let back = origin - from;
    let n = back.dot(&back).sqrt().max(1e-12);
    from + &(back * (step / n))
}

/// Minimizer of `<s, x>` over the domain: the support point in direction `-s`.
pub fn linear_support_minimizer(domain: &Domain, s: &Array1<f64>) -> Array1<f64> {
    match domain {
        Domain::Ball { center, radius } => {
            let n = s.dot(s).sqrt();
            if n < 1e-300 {
                center.clone()
            } else {
                center - &(s * (*radius / n))
            }
        }
        Domain::Box { lower, upper } => Array1::from_iter(
            s.iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(si, (l, u))| if *si > 0.0 { *l } else { *u }),
        ),
    }
}

// ----- two-player zero-sum games -----

/// How a dishonest opponent plays.
#[derive(Debug, Clone)]
pub enum OpponentStrategy {
    /// Maximizes the learner's instantaneous loss given the learner's move.
    BestResponse,
    /// Plays a fixed point every round.
    FixedPlay(Array1<f64>),
    /// Seeded random extreme points of its own domain.
    RandomExtreme,
}

/// A bilinear (optionally linearly offset) zero-sum game
/// `f(x, y) = x^T A y + <cx, x> + <cy, y>`, with the x-player minimizing and
/// the y-player maximizing.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub payoff: Array2<f64>,
    pub x_domain: Domain,
    pub y_domain: Domain,
    pub x_offset: Array1<f64>,
    pub y_offset: Array1<f64>,
}

impl GameSpec {
    pub fn new(
        payoff: Array2<f64>,
        x_domain: Domain,
        y_domain: Domain,
        x_offset: Array1<f64>,
        y_offset: Array1<f64>,
    ) -> Result<Self> {
        x_domain.validate()?;
        y_domain.validate()?;
        if payoff.nrows() != x_domain.dim() || payoff.ncols() != y_domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: x_domain.dim(),
                got: payoff.nrows(),
            });
        }
        if x_offset.len() != x_domain.dim() || y_offset.len() != y_domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: x_domain.dim(),
                got: x_offset.len(),
            });
        }
        // Spectral norm check: ||A||_2 = sqrt(lambda_max(A^T A)) <= 1.
        let ata = payoff.t().dot(&payoff).as_standard_layout().to_owned();
        let spectral = linalg::lambda_max(&ata, 300).max(0.0).sqrt();
        if spectral > 1.0 + 1e-9 {
            return Err(Error::Contract(format!(
                "payoff spectral norm {spectral} exceeds 1"
            )));
        }
        Ok(GameSpec { payoff, x_domain, y_domain, x_offset, y_offset })
    }

    pub fn value(&self, x: &Array1<f64>, y: &Array1<f64>) -> f64 {
        x.dot(&self.payoff.dot(y)) + self.x_offset.dot(x) + self.y_offset.dot(y)
    }

    /// Per-round gradients handed to the two regret minimizers; the
    /// maximizer receives the negated gradient so both players descend.
    pub fn step(&self, x: &Array1<f64>, y: &Array1<f64>) -> (Array1<f64>, Array1<f64>, f64) {
        let g_x = self.payoff.dot(y) + &self.x_offset;
        let g_y = -(self.payoff.t().dot(x) + &self.y_offset);
        let value = self.value(x, y);
        (g_x, g_y, value)
    }

    /// The dishonest y-player's move for this round.
    pub fn opponent_play(
        &self,
        strategy: &OpponentStrategy,
        x: &Array1<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Array1<f64> {
        match strategy {
            OpponentStrategy::BestResponse => {
                // Maximize <A^T x + cy, y> over the y-domain.
                let w = self.payoff.t().dot(x) + &self.y_offset;
                match &self.y_domain {
                    Domain::Ball { center, radius } => {
                        let n = w.dot(&w).sqrt();
                        if n < 1e-300 {
                            center.clone()
                        } else {
                            center + &(&w * (*radius / n))
                        }
                    }
                    Domain::Box { lower, upper } => Array1::from_iter(
                        w.iter()
                            .zip(lower.iter().zip(upper.iter()))
                            .map(|(wi, (l, u))| if *wi >= 0.0 { *u } else { *l }),
                    ),
                }
            }
            OpponentStrategy::FixedPlay(y) => y.clone(),
            OpponentStrategy::RandomExtreme => match &self.y_domain {
                Domain::Ball { center, radius } => {
                    center + &(random_unit(rng, center.len()) * *radius)
                }
                Domain::Box { lower, upper } => Array1::from_iter(
                    lower
                        .iter()
                        .zip(upper.iter())
                        .map(|(l, u)| if rng.random_range(0.0..1.0f64) < 0.5 { *l } else { *u }),
                ),
            },
        }
    }

    /// Brute-force minimax value over a grid, as a verification oracle for
    /// low-dimensional games.
    pub fn minimax_grid_value(&self, resolution: usize) -> f64 {
        let xs = grid_points(&self.x_domain, resolution);
        let ys = grid_points(&self.y_domain, resolution);
        let mut best = f64::INFINITY;
        for x in &xs {
            let mut worst = f64::NEG_INFINITY;
            for y in &ys {
                worst = worst.max(self.value(x, y));
            }
            best = best.min(worst);
        }
        best
    }
}

fn grid_points(domain: &Domain, resolution: usize) -> Vec<Array1<f64>> {
    match domain {
        Domain::Box { lower, upper } => {
            assert!(lower.len() <= 2, "grid oracle supports up to 2 dimensions");
            let axis = |i: usize| -> Vec<f64> {
                (0..=resolution)
                    .map(|j| lower[i] + (upper[i] - lower[i]) * j as f64 / resolution as f64)
                    .collect()
            };
            if lower.len() == 1 {
                axis(0).into_iter().map(|v| Array1::from(vec![v])).collect()
            } else {
                let mut pts = Vec::new();
                for a in axis(0) {
                    for b in axis(1) {
                        pts.push(Array1::from(vec![a, b]));
                    }
                }
                pts
            }
        }
        Domain::Ball { center, radius } => {
            assert!(center.len() <= 2, "grid oracle supports up to 2 dimensions");
            if center.len() == 1 {
                (0..=resolution)
                    .map(|j| {
                        Array1::from(vec![
                            center[0] - radius + 2.0 * radius * j as f64 / resolution as f64,
                        ])
                    })
                    .collect()
            } else {
                let mut pts = Vec::new();
                for i in 0..=resolution {
                    for j in 0..=resolution {
                        let a = center[0] - radius + 2.0 * radius * i as f64 / resolution as f64;
                        let b = center[1] - radius + 2.0 * radius * j as f64 / resolution as f64;
                        let p = Array1::from(vec![a, b]);
                        let d = &p - center;
                        if d.dot(&d).sqrt() <= *radius {
                            pts.push(p);
                        }
                    }
                }
                pts
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn ball(dim: usize) -> Domain {
        Domain::origin_ball(dim, 0.5)
    }

    #[test]
    fn fixed_quadratic_gradient_and_variation() {
        let env = Environment::fixed_quadratic(ball(2), 1.0, 0.4, 16, 3).unwrap();
        let x = arr1(&[0.1, -0.2]);
        let g = env.gradient(1, &x).unwrap();
        let g2 = env.gradient(16, &x).unwrap();
        for (a, b) in g.iter().zip(g2.iter()) {
            assert_eq!(a, b);
        }
        let (vt, exact) = env.vt_total();
        assert_eq!(vt, 0.0);
        assert!(exact);
    }

    #[test]
    fn round_out_of_range_rejected() {
        let env = Environment::fixed_quadratic(ball(2), 1.0, 0.0, 8, 1).unwrap();
        assert!(env.value(0, &arr1(&[0.0, 0.0])).is_err());
        assert!(env.value(9, &arr1(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn linear_value_at_origin_is_zero() {
        let env = Environment::drifting_linear(ball(3), 0.0, 0.3, 8, 5).unwrap();
        assert_eq!(env.value(1, &Array1::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn constant_drift_vt_closed_form() {
        // c_t - c_{t-1} has constant length delta: V_T = (T-1) lambda^2 delta^2.
        let delta = 0.003;
        let t = 64;
        let env = Environment::drifting_quadratic(
            ball(2),
            1.0,
            DriftSchedule::Constant { step: delta },
            t,
            7,
        )
        .unwrap();
        let (vt, exact) = env.vt_total();
        assert!(exact);
        assert!((vt - (t - 1) as f64 * delta * delta).abs() < 1e-12, "vt = {vt}");
    }

    #[test]
    fn linear_vt_matches_direct_summation() {
        let env = Environment::drifting_linear(ball(2), 0.2, 0.1, 32, 11).unwrap();
        let mut direct = 0.0;
        let x = Array1::zeros(2);
        for t in 2..=32 {
            let d = &env.gradient(t, &x).unwrap() - &env.gradient(t - 1, &x).unwrap();
            direct += d.dot(&d);
        }
        let (vt, exact) = env.vt_total();
        assert!(exact);
        assert!((vt - direct).abs() < 1e-12);
    }

    #[test]
    fn gradients_respect_declared_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let envs = [
            Environment::fixed_quadratic(ball(3), 0.8, 0.5, 32, 1).unwrap(),
            Environment::drifting_quadratic(
                ball(3),
                1.0,
                DriftSchedule::Harmonic { scale: 0.05 },
                32,
                2,
            )
            .unwrap(),
            Environment::drifting_linear(ball(3), 0.3, 0.2, 32, 3).unwrap(),
            Environment::adversarial_linear(ball(3), 0.4, 0.3, 32, 4).unwrap(),
            Environment::log_loss(ball(3), 0.5, 0.1, 32, 5).unwrap(),
            Environment::sea_quadratic(
                ball(3),
                1.0,
                SeaParams { sigma2: 0.01, adv2: 0.02 },
                32,
                6,
            )
            .unwrap(),
        ];
        for env in &envs {
            let g_bound = env.bounds().grad_bound;
            for t in 1..=32 {
                for _ in 0..8 {
                    let raw = Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0)));
                    let x = project(env.domain(), &raw).unwrap();
                    let g = env.gradient(t, &x).unwrap();
                    assert!(
                        g.dot(&g).sqrt() <= g_bound * (1.0 + 1e-9),
                        "bound violated at t = {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn log_loss_gradient_matches_finite_differences() {
        let env = Environment::log_loss(ball(3), 0.5, 0.05, 8, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-5;
        for t in 1..=8 {
            let raw = Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0)));
            let x = project(env.domain(), &raw).unwrap();
            let g = env.gradient(t, &x).unwrap();
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (env.value(t, &xp).unwrap() - env.value(t, &xm).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn per_round_gradients_match_finite_differences() {
        let envs = [
            Environment::fixed_quadratic(ball(2), 0.9, 0.4, 8, 31).unwrap(),
            Environment::drifting_quadratic(
                ball(2),
                0.7,
                DriftSchedule::Constant { step: 0.005 },
                8,
                32,
            )
            .unwrap(),
            Environment::sea_quadratic(
                ball(2),
                1.0,
                SeaParams { sigma2: 0.01, adv2: 0.01 },
                8,
                33,
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let h = 1e-6;
        for env in &envs {
            for t in 1..=8 {
                let x = project(
                    env.domain(),
                    &arr1(&[rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0)]),
                )
                .unwrap();
                let g = env.gradient(t, &x).unwrap();
                for i in 0..2 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd =
                        (env.value(t, &xp).unwrap() - env.value(t, &xm).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn curvature_class_inequalities_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let sc_env = Environment::drifting_quadratic(
            ball(3),
            0.7,
            DriftSchedule::Harmonic { scale: 0.05 },
            16,
            8,
        )
        .unwrap();
        let exp_env = Environment::log_loss(ball(3), 0.5, 0.05, 16, 9).unwrap();
        for _ in 0..1000 {
            let t = rng.random_range(1..=16usize);
            let x = project(
                sc_env.domain(),
                &Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0))),
            )
            .unwrap();
            let y = project(
                sc_env.domain(),
                &Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0))),
            )
            .unwrap();
            let d = &x - &y;

            match sc_env.class() {
                CurvatureClass::StronglyConvex(lam) => {
                    let lhs = sc_env.value(t, &x).unwrap() - sc_env.value(t, &y).unwrap();
                    let rhs = sc_env.gradient(t, &x).unwrap().dot(&d) - 0.5 * lam * d.dot(&d);
                    assert!(lhs <= rhs + 1e-10);
                }
                _ => panic!("expected strongly convex class"),
            }

            match exp_env.class() {
                CurvatureClass::ExpConcave(alpha) => {
                    let lhs = exp_env.value(t, &x).unwrap() - exp_env.value(t, &y).unwrap();
                    let inner = exp_env.gradient(t, &x).unwrap().dot(&d);
                    let rhs = inner - 0.5 * alpha * inner * inner;
                    assert!(lhs <= rhs + 1e-10);
                }
                _ => panic!("expected exp-concave class"),
            }
        }
    }

    #[test]
    fn sea_degenerate_knobs() {
        // sigma2 = 0: the sampled loss equals the expected one exactly.
        let x = arr1(&[0.1, 0.1]);
        let env = Environment::sea_quadratic(
            ball(2),
            1.0,
            SeaParams { sigma2: 0.0, adv2: 0.04 },
            16,
            3,
        )
        .unwrap();
        for t in 1..=16 {
            assert_eq!(env.value(t, &x).unwrap(), env.expected_value(t, &x).unwrap());
        }
        // adv2 = 0: the expected function never moves; with sigma2 = 0 too,
        // the full V_T vanishes.
        let env = Environment::sea_quadratic(
            ball(2),
            1.0,
            SeaParams { sigma2: 0.0, adv2: 0.0 },
            16,
            3,
        )
        .unwrap();
        let (vt, _) = env.vt_total();
        assert_eq!(vt, 0.0);
        for t in 2..=16 {
            let a = env.expected_gradient(t, &x).unwrap();
            let b = env.expected_gradient(t - 1, &x).unwrap();
            for (u, v) in a.iter().zip(b.iter()) {
                assert_eq!(u, v);
            }
        }
    }

    #[test]
    fn sea_noise_variance_monte_carlo() {
        // Mean ||xi||^2 over 10^4 draws matches sigma2 within 3 SE.
        let sigma2 = 0.04;
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 10_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = sea_noise_draw(&mut rng, dim, sigma2);
            samples.push(xi.dot(&xi));
        }
        let mean: f64 = samples.iter().sum::<f64>() / n as f64;
        let var: f64 =
            samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - sigma2).abs() <= 3.0 * se,
            "mean {mean} vs sigma2 {sigma2} (se {se})"
        );
    }

    #[test]
    fn game_zero_matrix_gives_zero_everything() {
        let spec = GameSpec::new(
            Array2::zeros((2, 2)),
            ball(2),
            ball(2),
            Array1::zeros(2),
            Array1::zeros(2),
        )
        .unwrap();
        let (gx, gy, v) = spec.step(&arr1(&[0.1, 0.2]), &arr1(&[-0.3, 0.1]));
        assert!(gx.iter().all(|g| *g == 0.0));
        assert!(gy.iter().all(|g| *g == 0.0));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn game_spectral_norm_enforced() {
        let a = arr2(&[[2.0, 0.0], [0.0, 0.5]]);
        assert!(
            GameSpec::new(a, ball(2), ball(2), Array1::zeros(2), Array1::zeros(2)).is_err()
        );
    }

    #[test]
    fn matching_pennies_grid_minimax_value_is_zero() {
        // Matching pennies reparameterized from the probability simplex onto
        // the box [-0.5, 0.5]: f(z, w) = z * w, with the Nash point at the
        // midpoint (the uniform strategy of the simplex form) and value 0.
        let spec = GameSpec::new(
            arr2(&[[1.0]]),
            Domain::symmetric_box(1, 0.5),
            Domain::symmetric_box(1, 0.5),
            Array1::zeros(1),
            Array1::zeros(1),
        )
        .unwrap();
        let v = spec.minimax_grid_value(200);
        assert!(v.abs() < 1e-9, "minimax value {v}");
    }

    #[test]
    fn best_response_maximizes_on_grid() {
        let spec = GameSpec::new(
            arr2(&[[0.8, -0.3], [0.2, 0.5]]),
            ball(2),
            Domain::symmetric_box(2, 0.5),
            Array1::zeros(2),
            Array1::zeros(2),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = arr1(&[0.2, -0.1]);
        let br = spec.opponent_play(&OpponentStrategy::BestResponse, &x, &mut rng);
        for y in grid_points(&spec.y_domain, 40) {
            assert!(spec.value(&x, &br) >= spec.value(&x, &y) - 1e-9);
        }
    }

    #[test]
    fn offline_objective_matches_round_sum() {
        let envs = [
            Environment::drifting_quadratic(
                ball(2),
                0.9,
                DriftSchedule::Harmonic { scale: 0.05 },
                24,
                4,
            )
            .unwrap(),
            Environment::drifting_linear(ball(2), 0.1, 0.2, 24, 5).unwrap(),
            Environment::log_loss(ball(2), 0.5, 0.05, 24, 6).unwrap(),
            Environment::sea_quadratic(
                ball(2),
                0.9,
                SeaParams { sigma2: 0.01, adv2: 0.01 },
                24,
                7,
            )
            .unwrap(),
        ];
        let x = arr1(&[0.12, -0.08]);
        for env in &envs {
            let direct: f64 = (1..=24).map(|t| env.value(t, &x).unwrap()).sum();
            assert!((env.offline_objective(&x) - direct).abs() < 1e-10);
            // Offline gradient agrees with finite differences of the sum.
            let h = 1e-6;
            let grad = env.offline_gradient(&x);
            for i in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (env.offline_objective(&xp) - env.offline_objective(&xm)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-5);
            }
        }
    }
}
