//! Feasible sets and the projection primitives every layer shares.
//!
//! Two domain shapes are supported, Euclidean balls and axis-aligned boxes.
//! Both admit exact Euclidean projection, which keeps the base learners free
//! of any general convex-programming machinery. Projection in a matrix norm
//! (needed by the Newton-style base learner) is solved by projected gradient
//! on the induced quadratic.

use ndarray::{Array1, Array2};

use crate::error::Error;
use crate::linalg;
use crate::Result;

/// Feasibility tolerance used by `contains` checks across the crate.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Default tolerance when comparing an implementation against a brute-force
/// oracle.
pub const ORACLE_TOL: f64 = 1e-6;
/// Stop criterion for the matrix-norm projection: objective decrease below
/// this (or the iteration cap) ends the solve.
const MATRIX_PROJ_DECREASE: f64 = 1e-12;
const MATRIX_PROJ_MAX_ITERS: usize = 10_000;

/// A bounded convex feasible set.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// `{ x : ||x - center|| <= radius }`
    Ball { center: Array1<f64>, radius: f64 },
    /// `{ x : lower <= x <= upper }` coordinate-wise.
    Box { lower: Array1<f64>, upper: Array1<f64> },
}

impl Domain {
    /// Ball centered at the origin.
    pub fn origin_ball(dim: usize, radius: f64) -> Self {
        Domain::Ball { center: Array1::zeros(dim), radius }
    }

    /// Symmetric box `[-half, half]^d`.
    pub fn symmetric_box(dim: usize, half: f64) -> Self {
        Domain::Box {
            lower: Array1::from_elem(dim, -half),
            upper: Array1::from_elem(dim, half),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::Box { lower, .. } => lower.len(),
        }
    }

    /// Validates shape parameters; call after deserializing a config.
    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Ball { center, radius } => {
                if !center.iter().all(|v| v.is_finite()) || !radius.is_finite() {
                    return Err(Error::Contract("ball parameters must be finite".into()));
                }
                if *radius <= 0.0 {
                    return Err(Error::Contract("ball radius must be positive".into()));
                }
            }
            Domain::Box { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::DimensionMismatch {
                        expected: lower.len(),
                        got: upper.len(),
                    });
                }
                for (l, u) in lower.iter().zip(upper.iter()) {
                    if !l.is_finite() || !u.is_finite() {
                        return Err(Error::Contract("box bounds must be finite".into()));
                    }
                    if l >= u {
                        return Err(Error::Contract(
                            "box lower bound must be strictly below upper".into(),
                        ));
                    }
                }
            }
        }
        if self.diameter() <= 0.0 {
            return Err(Error::Contract("domain diameter must be positive".into()));
        }
        Ok(())
    }

    /// `2 r` for balls, `||upper - lower||` for boxes.
    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::Box { lower, upper } => {
                let d = upper - lower;
                d.dot(&d).sqrt()
            }
        }
    }

    /// Ball center, or box midpoint. All learners start here.
    pub fn center(&self) -> Array1<f64> {
        match self {
            Domain::Ball { center, .. } => center.clone(),
            Domain::Box { lower, upper } => (lower + upper) * 0.5,
        }
    }

    /// Largest Euclidean norm of any feasible point. The loss/optimism
    /// rescaling assumes this does not exceed the diameter; configuration
    /// validation enforces that.
    pub fn max_point_norm(&self) -> f64 {
        match self {
            Domain::Ball { center, radius } => center.dot(center).sqrt() + radius,
            Domain::Box { lower, upper } => {
                let mut s = 0.0;
                for (l, u) in lower.iter().zip(upper.iter()) {
                    let m = l.abs().max(u.abs());
                    s += m * m;
                }
                s.sqrt()
            }
        }
    }

    pub fn contains(&self, x: &Array1<f64>) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Domain::Ball { center, radius } => {
                let d = x - center;
                d.dot(&d).sqrt() <= radius + FEASIBILITY_TOL
            }
            Domain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| *v >= l - FEASIBILITY_TOL && *v <= u + FEASIBILITY_TOL),
        }
    }
}

/// Problem constants every layer consumes: the diameter `D`, the gradient
/// bound `G`, the smoothness constant `L`, and the two surrogate gradient
/// bounds derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsBundle {
    pub diameter: f64,
    pub grad_bound: f64,
    pub smoothness: f64,
    /// Bound on gradients of the strongly-convex surrogates: `G + D`.
    pub grad_bound_sc: f64,
    /// Bound on gradients of the exp-concave surrogates: `G + G * D`.
    pub grad_bound_exp: f64,
}

impl BoundsBundle {
    pub fn new(diameter: f64, grad_bound: f64, smoothness: f64) -> Result<Self> {
        if !(diameter > 0.0 && grad_bound > 0.0 && smoothness > 0.0) {
            return Err(Error::Config(
                "bounds D, G, L must all be strictly positive".into(),
            ));
        }
        Ok(BoundsBundle {
            diameter,
            grad_bound,
            smoothness,
            grad_bound_sc: grad_bound + diameter,
            grad_bound_exp: grad_bound + grad_bound * diameter,
        })
    }
}

fn check_dim(domain: &Domain, x: &Array1<f64>) -> Result<()> {
    if x.len() != domain.dim() {
        return Err(Error::DimensionMismatch { expected: domain.dim(), got: x.len() });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Contract("point must be finite".into()));
    }
    Ok(())
}

/// Euclidean projection onto the domain. Exact for both shapes: radial
/// scaling for balls, coordinate clamping for boxes. Idempotent and
/// non-expansive.
pub fn project(domain: &Domain, x: &Array1<f64>) -> Result<Array1<f64>> {
    check_dim(domain, x)?;
    Ok(match domain {
        Domain::Ball { center, radius } => {
            let d = x - center;
            let norm = d.dot(&d).sqrt();
            if norm <= *radius {
                x.clone()
            } else {
                center + &(d * (*radius / norm))
            }
        }
        Domain::Box { lower, upper } => {
            let mut out = x.clone();
            for (v, (l, u)) in out.iter_mut().zip(lower.iter().zip(upper.iter())) {
                *v = v.max(*l).min(*u);
            }
            out
        }
    })
}

/// Projection in the norm induced by a symmetric positive-definite `U`:
/// `argmin_{y in X} (y - x)^T U (y - x)`.
///
/// Solved by projected gradient on the quadratic with step `1/lambda_max(U)`
/// until the objective decrease drops below `1e-12` (or an iteration cap).
pub fn project_matrix_norm(
    domain: &Domain,
    x: &Array1<f64>,
    u: &Array2<f64>,
) -> Result<Array1<f64>> {
    check_dim(domain, x)?;
    if u.nrows() != x.len() || u.ncols() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: u.nrows() });
    }
    // PSD contract check; the Cholesky factorization doubles as the test.
    linalg::cholesky(u).map_err(|_| {
        Error::Contract("matrix-norm projection requires symmetric positive-definite U".into())
    })?;

    if domain.contains(x) {
        return Ok(x.clone());
    }

    let step = 1.0 / linalg::lambda_max(u, 200).max(1e-300);
    let objective = |y: &Array1<f64>| {
        let d = y - x;
        d.dot(&u.dot(&d))
    };

    let mut y = project(domain, x)?;
    let mut obj = objective(&y);
    for _ in 0..MATRIX_PROJ_MAX_ITERS {
        let grad = u.dot(&(&y - x)) * 2.0;
        let cand = project(domain, &(&y - &(grad * step)))?;
        let cand_obj = objective(&cand);
        let decrease = obj - cand_obj;
        y = cand;
        obj = cand_obj;
        if decrease < MATRIX_PROJ_DECREASE {
            break;
        }
    }
    Ok(y)
}

/// Checks the combination-gap decomposition used to split the stability of a
/// weighted mixture into weight movement plus member movement:
/// `||sum p_i x_i - sum q_i y_i||^2 <= 2 sum p_i ||x_i - y_i||^2 + 2 D^2 ||p - q||_1^2`.
///
/// This is a test utility: the inequality holds unconditionally for points in
/// a domain of diameter `D` whose norms stay within `D`.
pub fn combination_gap_bound_check(
    p: &[f64],
    q: &[f64],
    xs: &[Array1<f64>],
    ys: &[Array1<f64>],
    diameter: f64,
) -> Result<bool> {
    if p.len() != q.len() || xs.len() != p.len() || ys.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: q.len().min(xs.len()) });
    }
    let dim = xs.first().map(|v| v.len()).unwrap_or(0);
    let mut combo_p = Array1::<f64>::zeros(dim);
    let mut combo_q = Array1::<f64>::zeros(dim);
    let mut member_term = 0.0;
    let mut l1 = 0.0;
    for i in 0..p.len() {
        combo_p += &(&xs[i] * p[i]);
        combo_q += &(&ys[i] * q[i]);
        let d = &xs[i] - &ys[i];
        member_term += p[i] * d.dot(&d);
        l1 += (p[i] - q[i]).abs();
    }
    let gap = &combo_p - &combo_q;
    let lhs = gap.dot(&gap);
    let rhs = 2.0 * member_term + 2.0 * diameter * diameter * l1 * l1;
    Ok(lhs <= rhs + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Array1<f64> {
        Array1::from_iter((0..dim).map(|_| rng.random_range(-scale..scale)))
    }

    #[test]
    fn ball_projection_radial_scaling() {
        let dom = Domain::origin_ball(2, 1.0);
        let p = project(&dom, &arr1(&[2.0, 0.0])).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn projection_idempotent_inside() {
        let dom = Domain::origin_ball(3, 2.0);
        let x = arr1(&[0.3, -0.2, 1.0]);
        let p = project(&dom, &x).unwrap();
        assert_eq!(p, x);
        let pp = project(&dom, &p).unwrap();
        assert_eq!(pp, p);
    }

    #[test]
    fn box_projection_clamps() {
        let dom = Domain::Box { lower: arr1(&[0.0, 0.0]), upper: arr1(&[1.0, 1.0]) };
        let p = project(&dom, &arr1(&[-0.3, 1.7])).unwrap();
        assert_eq!(p, arr1(&[0.0, 1.0]));
    }

    #[test]
    fn projection_nonexpansive_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let domains = [
            Domain::origin_ball(3, 0.8),
            Domain::Box { lower: arr1(&[-1.0, 0.0, -0.5]), upper: arr1(&[1.0, 2.0, 0.5]) },
        ];
        for dom in &domains {
            for _ in 0..1000 {
                let x = rand_point(&mut rng, 3, 3.0);
                let y = rand_point(&mut rng, 3, 3.0);
                let px = project(dom, &x).unwrap();
                let py = project(dom, &y).unwrap();
                assert!(dom.contains(&px));
                let dp = &px - &py;
                let dxy = &x - &y;
                assert!(dp.dot(&dp).sqrt() <= dxy.dot(&dxy).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn matrix_projection_identity_reduces_to_euclidean() {
        let dom = Domain::origin_ball(2, 1.0);
        let x = arr1(&[3.0, -1.0]);
        for c in [1.0, 0.5, 7.0] {
            let u = Array2::eye(2) * c;
            let p = project_matrix_norm(&dom, &x, &u).unwrap();
            let q = project(&dom, &x).unwrap();
            let d = &p - &q;
            assert!(d.dot(&d).sqrt() < 1e-7, "c = {c}");
        }
    }

    #[test]
    fn matrix_projection_inside_is_identity() {
        let dom = Domain::origin_ball(2, 1.0);
        let x = arr1(&[0.1, 0.2]);
        let u = ndarray::arr2(&[[4.0, 0.0], [0.0, 1.0]]);
        assert_eq!(project_matrix_norm(&dom, &x, &u).unwrap(), x);
    }

    #[test]
    fn matrix_projection_matches_grid_oracle() {
        // Dense grid over the disk as an independent minimizer of the
        // anisotropic quadratic: a 1e-3 sweep locates the basin, two local
        // refinements pin the grid optimum tightly enough for a 1e-4 compare.
        let dom = Domain::origin_ball(2, 1.0);
        let x = arr1(&[2.0, 2.0]);
        let u = ndarray::arr2(&[[4.0, 0.0], [0.0, 1.0]]);
        let p = project_matrix_norm(&dom, &x, &u).unwrap();

        let obj = |y0: f64, y1: f64| {
            let d0 = y0 - x[0];
            let d1 = y1 - x[1];
            4.0 * d0 * d0 + d1 * d1
        };
        let sweep = |lo0: f64, hi0: f64, lo1: f64, hi1: f64, n: usize| {
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for i in 0..=n {
                let y0 = lo0 + (hi0 - lo0) * i as f64 / n as f64;
                for j in 0..=n {
                    let y1 = lo1 + (hi1 - lo1) * j as f64 / n as f64;
                    if y0 * y0 + y1 * y1 > 1.0 {
                        continue;
                    }
                    let v = obj(y0, y1);
                    if v < best.0 {
                        best = (v, y0, y1);
                    }
                }
            }
            best
        };
        let mut best = sweep(-1.0, 1.0, -1.0, 1.0, 2000);
        let mut cell = 2.0 / 2000.0;
        for _ in 0..3 {
            let w = 4.0 * cell;
            best = sweep(
                (best.1 - w).max(-1.0),
                (best.1 + w).min(1.0),
                (best.2 - w).max(-1.0),
                (best.2 + w).min(1.0),
                2000,
            );
            cell = 2.0 * w / 2000.0;
        }
        let d = obj(p[0], p[1]);
        assert!(
            (d - best.0).abs() < 1e-4,
            "objective {d} vs grid {} at ({}, {})",
            best.0,
            best.1,
            best.2
        );
    }

    #[test]
    fn non_psd_matrix_rejected() {
        let dom = Domain::origin_ball(2, 1.0);
        let x = arr1(&[2.0, 0.0]);
        let u = ndarray::arr2(&[[1.0, 3.0], [3.0, 1.0]]);
        assert!(matches!(project_matrix_norm(&dom, &x, &u), Err(Error::Contract(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let dom = Domain::origin_ball(2, 1.0);
        assert!(matches!(
            project(&dom, &arr1(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn combination_gap_trivial_cases() {
        let a = arr1(&[0.3, 0.1]);
        let b = arr1(&[-0.2, 0.4]);
        // p = q, xs = ys: both sides zero.
        assert!(combination_gap_bound_check(
            &[0.5, 0.5],
            &[0.5, 0.5],
            &[a.clone(), b.clone()],
            &[a.clone(), b.clone()],
            1.0
        )
        .unwrap());
        // One-hot weights.
        assert!(combination_gap_bound_check(
            &[1.0, 0.0],
            &[0.0, 1.0],
            &[a.clone(), b.clone()],
            &[a, b],
            1.0
        )
        .unwrap());
    }

    #[test]
    fn combination_gap_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dom = Domain::origin_ball(3, 0.5);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..2).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let raw: Vec<f64> = (0..2).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let q: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let xs: Vec<_> = (0..2)
                .map(|_| project(&dom, &rand_point(&mut rng, 3, 1.0)).unwrap())
                .collect();
            let ys: Vec<_> = (0..2)
                .map(|_| project(&dom, &rand_point(&mut rng, 3, 1.0)).unwrap())
                .collect();
            assert!(
                combination_gap_bound_check(&p, &q, &xs, &ys, dom.diameter()).unwrap()
            );
        }
    }

    #[test]
    fn diameter_definitions() {
        let ball = Domain::origin_ball(4, 1.5);
        assert!((ball.diameter() - 3.0).abs() < 1e-15);
        let bx = Domain::Box { lower: arr1(&[0.0, 0.0]), upper: arr1(&[1.0, 1.0]) };
        assert!((bx.diameter() - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bounds_bundle_derived_fields() {
        let b = BoundsBundle::new(2.0, 1.5, 1.0).unwrap();
        assert_eq!(b.grad_bound_sc, 3.5);
        assert_eq!(b.grad_bound_exp, 1.5 + 3.0);
        assert!(BoundsBundle::new(0.0, 1.0, 1.0).is_err());
    }
}
