//! Legendre duality between the primal and dual charts.
//!
//! The gradient map sends primal coordinates to dual ones; its inverse is
//! computed by a damped Newton iteration on the gradient residual. The dual
//! potential is evaluated through that inversion, which makes its
//! finite-difference Hessian an oracle for the inverse metric that is
//! independent of the matrix-inverse fast path; `orthogonality_residual`
//! compares the oracle route against the primal metric, while the `_inverse`
//! variant checks the fast path.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fd;
use crate::potentials::{Chart, Point, PotentialModel};

/// Controls for the Newton inversion of the gradient map.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm gradient residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

fn check_chart(p: &Point, expected: Chart, dim: usize) -> Result<()> {
    if p.chart != expected {
        return Err(Error::ChartMismatch {
            expected,
            got: p.chart,
        });
    }
    if p.dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: p.dim(),
        });
    }
    Ok(())
}

/// Gradient map: primal point to its dual image.
pub fn to_dual(model: &PotentialModel, p: &Point) -> Result<Point> {
    check_chart(p, Chart::Theta, model.dim())?;
    Ok(Point::from_vector(Chart::Eta, model.grad_raw(&p.coords)?))
}

/// Inverse of the gradient map by damped Newton iteration. `guess` defaults
/// to the model's reference point; a Newton step that would leave the domain
/// is halved up to 30 times before the iteration fails.
pub fn from_dual(
    model: &PotentialModel,
    q: &Point,
    guess: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<Point> {
    check_chart(q, Chart::Eta, model.dim())?;
    let reference = model.reference_point();
    let start = guess.unwrap_or(&reference);
    let theta = from_dual_raw(model, &q.coords, start, opts.tol, opts.max_iter)?;
    Ok(Point::from_vector(Chart::Theta, theta))
}

pub(crate) fn from_dual_raw(
    model: &PotentialModel,
    q: &DVector<f64>,
    guess: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    if q.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: q.len(),
        });
    }
    if !model.dual_contains(q, 0.0) {
        return Err(Error::Domain(format!(
            "{}: target {:?} outside dual image",
            model.name(),
            q.as_slice()
        )));
    }
    if !model.contains(guess, 0.0) {
        return Err(Error::Domain(format!(
            "{}: inversion guess {:?} outside domain",
            model.name(),
            guess.as_slice()
        )));
    }
    let mut theta = guess.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let eta = model.grad_raw(&theta)?;
        let r = q - &eta;
        residual = r.amax();
        if residual <= tol {
            return Ok(theta);
        }
        let (_, factor) = model.metric_factor_raw(&theta)?;
        let delta = factor.solve(&r);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let trial = &theta + scale * &delta;
            if model.contains(&trial, 0.0) {
                theta = trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::Domain(format!(
                "{}: inversion step left the domain from {:?}",
                model.name(),
                theta.as_slice()
            )));
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Legendre dual potential at a dual point.
pub fn dual_potential(model: &PotentialModel, q: &Point) -> Result<f64> {
    check_chart(q, Chart::Eta, model.dim())?;
    let reference = model.reference_point();
    dual_potential_raw(model, &q.coords, &reference)
}

pub(crate) fn dual_potential_raw(
    model: &PotentialModel,
    q: &DVector<f64>,
    guess: &DVector<f64>,
) -> Result<f64> {
    let theta = from_dual_raw(model, q, guess, 1e-12, 100)?;
    Ok(theta.dot(q) - model.eval_raw(&theta)?)
}

/// Finite-difference Hessian of the dual potential: the oracle route to the
/// inverse metric in dual coordinates.
pub fn dual_hessian_fd(model: &PotentialModel, q: &Point) -> Result<DMatrix<f64>> {
    check_chart(q, Chart::Eta, model.dim())?;
    let reference = model.reference_point();
    let center = from_dual_raw(model, &q.coords, &reference, 1e-12, 100)?;
    dual_hessian_fd_raw(model, &q.coords, &center)
}

fn dual_hessian_fd_raw(
    model: &PotentialModel,
    q: &DVector<f64>,
    warm: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let steps: Vec<f64> = q.iter().map(|&c| fd::default_step(2, c)).collect();
    fd::hessian_of(
        |qq: &DVector<f64>| {
            if !model.dual_contains(qq, 0.0) {
                return Err(Error::Domain(format!(
                    "{}: dual stencil left the dual image at {:?}",
                    model.name(),
                    qq.as_slice()
                )));
            }
            dual_potential_raw(model, qq, warm)
        },
        q,
        &steps,
    )
}

/// Max-norm deviation of `H(dual potential) * metric` from the identity,
/// with the dual Hessian taken by finite differences (oracle route).
pub fn orthogonality_residual(model: &PotentialModel, p: &Point) -> Result<f64> {
    let g = model.metric(p)?;
    let q = model.gradient(p)?;
    let h_star = dual_hessian_fd_raw(model, &q, &p.coords)?;
    let d = model.dim();
    Ok((h_star * g - DMatrix::<f64>::identity(d, d)).amax())
}

/// Same residual with the inverse metric taken by direct matrix inversion
/// (fast path).
pub fn orthogonality_residual_inverse(model: &PotentialModel, p: &Point) -> Result<f64> {
    check_chart(p, Chart::Theta, model.dim())?;
    let (g, factor) = model.metric_factor_raw(&p.coords)?;
    let d = model.dim();
    Ok((factor.inverse() * g - DMatrix::<f64>::identity(d, d)).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{bernoulli, exp1d, gaussian2, quadratic};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn dual_images() {
        let q = to_dual(&quadratic(2), &Point::theta(vec![0.4, -1.1])).unwrap();
        assert_eq!(q.chart, Chart::Eta);
        assert_eq!(q.coords.as_slice(), [0.4, -1.1]);
        let e = to_dual(&exp1d(), &Point::theta(vec![1.0])).unwrap();
        close(e.coords[0], 1.0_f64.exp(), 1e-15);
        let g = to_dual(&gaussian2(), &Point::theta(vec![0.0, -0.5])).unwrap();
        assert_eq!(g.coords.as_slice(), [0.0, 1.0]);
    }

    #[test]
    fn inversion_round_trips() {
        let opts = NewtonOptions::default();
        for (model, theta) in [
            (quadratic(2), vec![0.7, -0.3]),
            (exp1d(), vec![1.0]),
            (bernoulli(), vec![-1.2]),
            (gaussian2(), vec![1.4, -0.45]),
        ] {
            let p = Point::theta(theta.clone());
            let q = to_dual(&model, &p).unwrap();
            let back = from_dual(&model, &q, None, &opts).unwrap();
            assert_eq!(back.chart, Chart::Theta);
            for (got, want) in back.coords.iter().zip(&theta) {
                close(*got, *want, 1e-9);
            }
        }
    }

    #[test]
    fn inversion_failure_modes() {
        let m = bernoulli();
        let err = from_dual(
            &m,
            &Point::eta(vec![0.9999999]),
            None,
            &NewtonOptions {
                tol: 1e-12,
                max_iter: 2,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
        let err = from_dual(
            &exp1d(),
            &Point::eta(vec![-1.0]),
            None,
            &NewtonOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn dual_potential_values() {
        close(
            dual_potential(&quadratic(2), &Point::eta(vec![1.0, 0.0])).unwrap(),
            0.5,
            1e-12,
        );
        close(
            dual_potential(&exp1d(), &Point::eta(vec![1.0])).unwrap(),
            -1.0,
            1e-12,
        );
        close(
            dual_potential(&bernoulli(), &Point::eta(vec![0.5])).unwrap(),
            -(2.0_f64.ln()),
            1e-12,
        );
        close(
            dual_potential(&gaussian2(), &Point::eta(vec![0.0, 1.0])).unwrap(),
            -0.5,
            1e-12,
        );
    }

    #[test]
    fn fenchel_identity_at_examples() {
        for (model, theta) in [
            (quadratic(2), vec![1.3, -0.2]),
            (exp1d(), vec![0.6]),
            (bernoulli(), vec![-2.1]),
            (gaussian2(), vec![0.8, -1.7]),
        ] {
            let p = Point::theta(theta);
            let q = to_dual(&model, &p).unwrap();
            let lhs = model.eval(&p).unwrap() + dual_potential(&model, &q).unwrap();
            let rhs = p.coords.dot(&q.coords);
            close(lhs, rhs, 1e-12);
        }
    }

    #[test]
    fn orthogonality_residuals() {
        // Quadratic dual potential is itself quadratic, so the oracle route
        // is exact to round-off.
        let r = orthogonality_residual(&quadratic(2), &Point::theta(vec![0.9, 0.4])).unwrap();
        assert!(r <= 1e-12, "quadratic oracle residual {r}");
        let r = orthogonality_residual(&exp1d(), &Point::theta(vec![0.3])).unwrap();
        assert!(r <= 1e-5, "exp1d oracle residual {r}");
        let r =
            orthogonality_residual_inverse(&gaussian2(), &Point::theta(vec![1.0, -2.0])).unwrap();
        assert!(r <= 1e-12, "gaussian2 fast-path residual {r}");
    }
}
