//! Central finite differences up to third order.
//!
//! Steps follow the usual truncation/round-off balance for central stencils:
//! eps^(1/3), eps^(1/4) and eps^(1/5) of machine epsilon for first, second
//! and third derivatives, each scaled by max(1, |coordinate|). Stencil
//! evaluations propagate domain failures, so a stencil that pokes outside an
//! open domain reports a domain error instead of a garbage derivative.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Rank3;

/// Result of [`fd_differentiate`], by derivative order.
#[derive(Debug, Clone)]
pub enum FdArray {
    Gradient(DVector<f64>),
    Hessian(DMatrix<f64>),
    Third(Rank3),
}

/// Default central-difference step for the given derivative order at the
/// given coordinate value.
pub fn default_step(order: usize, coord: f64) -> f64 {
    let exponent = match order {
        1 => 1.0 / 3.0,
        2 => 0.25,
        3 => 0.2,
        _ => panic!("derivative order {order} not supported"),
    };
    f64::EPSILON.powf(exponent) * coord.abs().max(1.0)
}

fn steps_for(order: usize, x: &DVector<f64>, step: Option<f64>) -> Vec<f64> {
    match step {
        Some(h) => vec![h; x.len()],
        None => x.iter().map(|&c| default_step(order, c)).collect(),
    }
}

/// Central gradient of a fallible scalar function.
pub(crate) fn gradient_of<F>(mut f: F, x: &DVector<f64>, steps: &[f64]) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let mut xs = x.clone();
    let mut g = DVector::<f64>::zeros(n);
    for i in 0..n {
        let h = steps[i];
        xs[i] = x[i] + h;
        let fp = f(&xs)?;
        xs[i] = x[i] - h;
        let fm = f(&xs)?;
        xs[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central Hessian of a fallible scalar function.
pub(crate) fn hessian_of<F>(mut f: F, x: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let f0 = f(x)?;
    let mut xs = x.clone();
    let mut h2 = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let hi = steps[i];
        xs[i] = x[i] + hi;
        let fp = f(&xs)?;
        xs[i] = x[i] - hi;
        let fm = f(&xs)?;
        xs[i] = x[i];
        h2[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                xs[i] = x[i] + si * hi;
                xs[j] = x[j] + sj * hj;
                let v = f(&xs);
                xs[i] = x[i];
                xs[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?)
                / (4.0 * hi * hj);
            h2[(i, j)] = v;
            h2[(j, i)] = v;
        }
    }
    Ok(h2)
}

/// Central third-derivative tensor of a fallible scalar function. Canonical
/// index patterns are computed once and copied to all permutations, so the
/// result is symmetric by construction.
#[allow(clippy::needless_range_loop)]
pub(crate) fn third_of<F>(mut f: F, x: &DVector<f64>, steps: &[f64]) -> Result<Rank3>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let mut xs = x.clone();
    let mut t = Rank3::zeros(n);
    let at = |xs: &mut DVector<f64>, idx: &[(usize, f64)], f: &mut F| -> Result<f64> {
        for &(i, d) in idx {
            xs[i] += d;
        }
        let v = f(xs);
        for &(i, d) in idx {
            xs[i] -= d;
        }
        v
    };

    for i in 0..n {
        let hi = steps[i];
        // T_iii
        let v = (at(&mut xs, &[(i, 2.0 * hi)], &mut f)? - 2.0 * at(&mut xs, &[(i, hi)], &mut f)?
            + 2.0 * at(&mut xs, &[(i, -hi)], &mut f)?
            - at(&mut xs, &[(i, -2.0 * hi)], &mut f)?)
            / (2.0 * hi * hi * hi);
        t.set(i, i, i, v);
        // T_iij for j != i
        for j in 0..n {
            if j == i {
                continue;
            }
            let hj = steps[j];
            let v = (at(&mut xs, &[(i, hi), (j, hj)], &mut f)?
                - 2.0 * at(&mut xs, &[(j, hj)], &mut f)?
                + at(&mut xs, &[(i, -hi), (j, hj)], &mut f)?
                - at(&mut xs, &[(i, hi), (j, -hj)], &mut f)?
                + 2.0 * at(&mut xs, &[(j, -hj)], &mut f)?
                - at(&mut xs, &[(i, -hi), (j, -hj)], &mut f)?)
                / (2.0 * hi * hi * hj);
            t.set(i, i, j, v);
            t.set(i, j, i, v);
            t.set(j, i, i, v);
        }
        // T_ijk for distinct triples
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let hj = steps[j];
                let hk = steps[k];
                let mut s = 0.0;
                for si in [-1.0, 1.0] {
                    for sj in [-1.0, 1.0] {
                        for sk in [-1.0, 1.0] {
                            let sign = si * sj * sk;
                            s += sign
                                * at(&mut xs, &[(i, si * hi), (j, sj * hj), (k, sk * hk)], &mut f)?;
                        }
                    }
                }
                let v = s / (8.0 * hi * hj * hk);
                for (a, b, c) in [
                    (i, j, k),
                    (i, k, j),
                    (j, i, k),
                    (j, k, i),
                    (k, i, j),
                    (k, j, i),
                ] {
                    t.set(a, b, c, v);
                }
            }
        }
    }
    Ok(t)
}

/// Central-difference derivative array of the requested order (1, 2 or 3)
/// for a plain scalar function. `step` of `None` selects the order-matched
/// default per coordinate; a non-finite sample is reported as a domain
/// violation of the stencil.
pub fn fd_differentiate<F>(
    mut f: F,
    p: &DVector<f64>,
    order: usize,
    step: Option<f64>,
) -> Result<FdArray>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    if !(1..=3).contains(&order) {
        return Err(Error::Integration(format!(
            "derivative order {order} not supported"
        )));
    }
    let steps = steps_for(order, p, step);
    let mut checked = |x: &DVector<f64>| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "stencil sample is not finite at {:?}",
                x.as_slice()
            )))
        }
    };
    Ok(match order {
        1 => FdArray::Gradient(gradient_of(&mut checked, p, &steps)?),
        2 => FdArray::Hessian(hessian_of(&mut checked, p, &steps)?),
        _ => FdArray::Third(third_of(&mut checked, p, &steps)?),
    })
}
