//! Convex potential models and the charts they carry.
//!
//! A model is an immutable value object: a potential on an open domain of
//! primal coordinates, optional closed-form derivatives up to third order,
//! a margin-aware domain predicate in each chart, a reference point used as
//! the default inversion guess, and a sampler over a compact core of the
//! domain for randomized property sweeps. Missing derivatives fall back to
//! central finite differences on the potential itself.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::fd;
use crate::linalg::{self, CholeskyFactor, PD_PIVOT_TOL};
use crate::tensor::Rank3;

/// Coordinate chart tags: primal (`Theta`) and dual (`Eta`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Theta,
    Eta,
}

/// A chart-tagged coordinate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub chart: Chart,
    pub coords: DVector<f64>,
}

impl Point {
    pub fn theta(coords: Vec<f64>) -> Self {
        Point {
            chart: Chart::Theta,
            coords: DVector::from_vec(coords),
        }
    }

    pub fn eta(coords: Vec<f64>) -> Self {
        Point {
            chart: Chart::Eta,
            coords: DVector::from_vec(coords),
        }
    }

    pub fn from_vector(chart: Chart, coords: DVector<f64>) -> Self {
        Point { chart, coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

type EvalFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type HessFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ThirdFn = Arc<dyn Fn(&DVector<f64>) -> Rank3 + Send + Sync>;
type DomainFn = Arc<dyn Fn(&DVector<f64>, f64) -> bool + Send + Sync>;
type SampleFn = Arc<dyn Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync>;

/// A strictly convex potential with its domain data.
#[derive(Clone)]
pub struct PotentialModel {
    name: String,
    dim: usize,
    eval: EvalFn,
    grad: Option<GradFn>,
    hess: Option<HessFn>,
    third: Option<ThirdFn>,
    domain: DomainFn,
    domain_desc: String,
    dual_domain: DomainFn,
    reference: DVector<f64>,
    sampler: SampleFn,
}

impl std::fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PotentialModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain_desc)
            .finish()
    }
}

pub struct PotentialModelBuilder {
    model: PotentialModel,
}

impl PotentialModelBuilder {
    pub fn gradient_fn(
        mut self,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.model.grad = Some(Arc::new(f));
        self
    }

    pub fn hessian_fn(
        mut self,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.model.hess = Some(Arc::new(f));
        self
    }

    pub fn third_fn(mut self, f: impl Fn(&DVector<f64>) -> Rank3 + Send + Sync + 'static) -> Self {
        self.model.third = Some(Arc::new(f));
        self
    }

    /// Margin-aware open-domain predicate in the primal chart, with the
    /// human-readable description shown by model listings.
    pub fn domain(
        mut self,
        f: impl Fn(&DVector<f64>, f64) -> bool + Send + Sync + 'static,
        desc: &str,
    ) -> Self {
        self.model.domain = Arc::new(f);
        self.model.domain_desc = desc.to_string();
        self
    }

    /// Margin-aware predicate for the image of the gradient map.
    pub fn dual_domain(
        mut self,
        f: impl Fn(&DVector<f64>, f64) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.model.dual_domain = Arc::new(f);
        self
    }

    pub fn reference(mut self, coords: Vec<f64>) -> Self {
        self.model.reference = DVector::from_vec(coords);
        self
    }

    pub fn sampler(
        mut self,
        f: impl Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.model.sampler = Arc::new(f);
        self
    }

    pub fn build(self) -> Result<PotentialModel> {
        let m = self.model;
        if m.dim == 0 {
            return Err(Error::Dimension {
                expected: 1,
                got: 0,
            });
        }
        if m.reference.len() != m.dim {
            return Err(Error::Dimension {
                expected: m.dim,
                got: m.reference.len(),
            });
        }
        if !m.contains(&m.reference, 0.0) {
            return Err(Error::Domain(format!(
                "{}: reference point outside domain",
                m.name
            )));
        }
        Ok(m)
    }
}

impl PotentialModel {
    /// Start a model from its potential alone. Derivatives default to
    /// central differences, the domain to all finite vectors, the reference
    /// point to the origin and the sampler to the unit cube.
    pub fn builder(
        name: &str,
        dim: usize,
        eval: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> PotentialModelBuilder {
        PotentialModelBuilder {
            model: PotentialModel {
                name: name.to_string(),
                dim,
                eval: Arc::new(eval),
                grad: None,
                hess: None,
                third: None,
                domain: Arc::new(|_, _| true),
                domain_desc: "all θ".to_string(),
                dual_domain: Arc::new(|_, _| true),
                reference: DVector::zeros(dim),
                sampler: Arc::new(move |rng: &mut dyn RngCore| {
                    DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))
                }),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_description(&self) -> &str {
        &self.domain_desc
    }

    pub fn reference_point(&self) -> DVector<f64> {
        self.reference.clone()
    }

    /// Open-domain membership in the primal chart. A positive margin asks
    /// for clearance from the boundary in the model's own gauge; non-finite
    /// coordinates never belong.
    pub fn contains(&self, theta: &DVector<f64>, margin: f64) -> bool {
        theta.len() == self.dim
            && theta.iter().all(|c| c.is_finite())
            && (self.domain)(theta, margin)
    }

    /// Membership in the image of the gradient map.
    pub fn dual_contains(&self, eta: &DVector<f64>, margin: f64) -> bool {
        eta.len() == self.dim
            && eta.iter().all(|c| c.is_finite())
            && (self.dual_domain)(eta, margin)
    }

    /// Draw a point from the compact sampling core of the domain.
    pub fn sample_domain<R: RngCore>(&self, rng: &mut R) -> DVector<f64> {
        (self.sampler)(rng)
    }

    fn check_theta(&self, p: &Point) -> Result<()> {
        if p.chart != Chart::Theta {
            return Err(Error::ChartMismatch {
                expected: Chart::Theta,
                got: p.chart,
            });
        }
        if p.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: p.dim(),
            });
        }
        if !self.contains(&p.coords, 0.0) {
            return Err(Error::Domain(format!(
                "{}: point {:?} outside domain ({})",
                self.name,
                p.coords.as_slice(),
                self.domain_desc
            )));
        }
        Ok(())
    }

    /// Potential value at a primal point.
    pub fn eval(&self, p: &Point) -> Result<f64> {
        self.check_theta(p)?;
        self.eval_raw(&p.coords)
    }

    /// Gradient map (the dual image) at a primal point.
    pub fn gradient(&self, p: &Point) -> Result<DVector<f64>> {
        self.check_theta(p)?;
        self.grad_raw(&p.coords)
    }

    /// Hessian metric at a primal point, gated on strict positive
    /// definiteness.
    pub fn metric(&self, p: &Point) -> Result<DMatrix<f64>> {
        self.check_theta(p)?;
        Ok(self.metric_factor_raw(&p.coords)?.0)
    }

    /// Fully symmetric third-derivative tensor at a primal point.
    pub fn cubic_tensor(&self, p: &Point) -> Result<Rank3> {
        self.check_theta(p)?;
        self.third_raw(&p.coords)
    }

    pub(crate) fn eval_raw(&self, theta: &DVector<f64>) -> Result<f64> {
        if !self.contains(theta, 0.0) {
            return Err(Error::Domain(format!(
                "{}: point {:?} outside domain ({})",
                self.name,
                theta.as_slice(),
                self.domain_desc
            )));
        }
        let v = (self.eval)(theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "{}: potential not finite at {:?}",
                self.name,
                theta.as_slice()
            )))
        }
    }

    pub(crate) fn grad_raw(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.grad {
            Some(g) => {
                self.eval_raw(theta)?;
                Ok(g(theta))
            }
            None => {
                let steps: Vec<f64> = theta.iter().map(|&c| fd::default_step(1, c)).collect();
                fd::gradient_of(|x| self.eval_raw(x), theta, &steps)
            }
        }
    }

    pub(crate) fn hess_raw(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.hess {
            Some(h) => {
                self.eval_raw(theta)?;
                Ok(h(theta))
            }
            None => {
                let steps: Vec<f64> = theta.iter().map(|&c| fd::default_step(2, c)).collect();
                fd::hessian_of(|x| self.eval_raw(x), theta, &steps)
            }
        }
    }

    /// Symmetrized Hessian together with its Cholesky factor.
    pub(crate) fn metric_factor_raw(
        &self,
        theta: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, CholeskyFactor)> {
        let h = self.hess_raw(theta)?;
        let sym = 0.5 * (&h + h.transpose());
        match linalg::cholesky(&sym, PD_PIVOT_TOL) {
            Ok(f) => Ok((sym, f)),
            Err(pivot) => Err(Error::Convexity {
                pivot,
                context: format!("{} at {:?}", self.name, theta.as_slice()),
            }),
        }
    }

    pub(crate) fn third_raw(&self, theta: &DVector<f64>) -> Result<Rank3> {
        match &self.third {
            Some(t) => {
                self.eval_raw(theta)?;
                Ok(t(theta))
            }
            None => {
                let steps: Vec<f64> = theta.iter().map(|&c| fd::default_step(3, c)).collect();
                fd::third_of(|x| self.eval_raw(x), theta, &steps)
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Separable quadratic potential in `dim` variables. Self-dual: the metric
/// is the identity and the cubic tensor vanishes.
pub fn quadratic(dim: usize) -> PotentialModel {
    PotentialModel::builder(&format!("quadratic{dim}"), dim, |t| {
        0.5 * t.iter().map(|c| c * c).sum::<f64>()
    })
    .gradient_fn(|t| t.clone())
    .hessian_fn(move |_| DMatrix::identity(dim, dim))
    .third_fn(move |_| Rank3::zeros(dim))
    .sampler(move |rng| DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0)))
    .build()
    .expect("builtin model")
}

/// One-dimensional exponential potential. Every derivative equals the
/// potential itself; the dual domain is the positive half-line.
pub fn exp1d() -> PotentialModel {
    PotentialModel::builder("exp1d", 1, |t| t[0].exp())
        .gradient_fn(|t| DVector::from_vec(vec![t[0].exp()]))
        .hessian_fn(|t| DMatrix::from_vec(1, 1, vec![t[0].exp()]))
        .third_fn(|t| Rank3::from_fn(1, |_, _, _| t[0].exp()))
        .dual_domain(|e, m| e[0] > m)
        .sampler(|rng| DVector::from_fn(1, |_, _| rng.gen_range(-2.0..2.0)))
        .build()
        .expect("builtin model")
}

/// Log-partition potential of a single binary variable. The dual chart is
/// the open unit interval; the primal domain predicate measures boundary
/// clearance through the dual image, so flows stop when the mean saturates.
pub fn bernoulli() -> PotentialModel {
    PotentialModel::builder("bernoulli", 1, |t| softplus(t[0]))
        .gradient_fn(|t| DVector::from_vec(vec![sigmoid(t[0])]))
        .hessian_fn(|t| {
            let s = sigmoid(t[0]);
            DMatrix::from_vec(1, 1, vec![s * (1.0 - s)])
        })
        .third_fn(|t| {
            let s = sigmoid(t[0]);
            Rank3::from_fn(1, |_, _, _| s * (1.0 - s) * (1.0 - 2.0 * s))
        })
        .domain(
            |t, m| {
                let s = sigmoid(t[0]);
                s > m && s < 1.0 - m
            },
            "all θ",
        )
        .dual_domain(|e, m| e[0] > m && e[0] < 1.0 - m)
        .sampler(|rng| DVector::from_fn(1, |_, _| rng.gen_range(-3.0..3.0)))
        .build()
        .expect("builtin model")
}

/// Two-parameter Gaussian natural-coordinate potential on the half-plane
/// θ₂ < 0. The dual image is the open region η₂ > η₁².
pub fn gaussian2() -> PotentialModel {
    PotentialModel::builder("gaussian2", 2, |t| {
        -t[0] * t[0] / (4.0 * t[1]) - 0.5 * (-2.0 * t[1]).ln()
    })
    .gradient_fn(|t| {
        DVector::from_vec(vec![
            -t[0] / (2.0 * t[1]),
            t[0] * t[0] / (4.0 * t[1] * t[1]) - 1.0 / (2.0 * t[1]),
        ])
    })
    .hessian_fn(|t| {
        let (a, b) = (t[0], t[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -1.0 / (2.0 * b),
                a / (2.0 * b * b),
                a / (2.0 * b * b),
                -a * a / (2.0 * b * b * b) + 1.0 / (2.0 * b * b),
            ],
        )
    })
    .third_fn(|t| {
        let (a, b) = (t[0], t[1]);
        let t112 = 1.0 / (2.0 * b * b);
        let t122 = -a / (b * b * b);
        let t222 = 1.5 * a * a / (b * b * b * b) - 1.0 / (b * b * b);
        Rank3::from_fn(2, |i, j, k| match i + j + k {
            0 => 0.0,
            1 => t112,
            2 => t122,
            _ => t222,
        })
    })
    .domain(|t, m| t[1] < -m, "θ₂<0")
    .dual_domain(|e, m| e[1] - e[0] * e[0] > m)
    .reference(vec![0.0, -0.5])
    .sampler(|rng| DVector::from_vec(vec![rng.gen_range(-1.5..1.5), rng.gen_range(-2.5..-0.8)]))
    .build()
    .expect("builtin model")
}

/// The built-in model registry, in listing order.
pub fn builtin_models() -> Vec<PotentialModel> {
    vec![quadratic(2), exp1d(), bernoulli(), gaussian2()]
}

/// Look a built-in model up by registry name.
pub fn model_by_name(name: &str) -> Option<PotentialModel> {
    builtin_models().into_iter().find(|m| m.name() == name)
}
