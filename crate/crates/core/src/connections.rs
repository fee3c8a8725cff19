//! Affine connections of the Hessian structure and the induced Weyl
//! integrable geometry.
//!
//! With the metric taken from the potential's second derivatives, the third
//! derivatives are simultaneously the cubic tensor and the metric partials,
//! which keeps every Christoffel-type formula here in closed form for models
//! with registered derivatives. The Weyl structure pairs the metric with the
//! covector ω = -d ln |η|², where |η|² is the squared metric norm of the
//! gradient field; working against that pair, trajectories of the primal
//! gradient flow are pre-geodesics both of the mixture connection and of the
//! Weyl connection.
//!
//! Field types ([`MetricField`], [`CovectorField`], [`ScalarField`]) wrap
//! closures over primal coordinates so gauge-transformed and conformal
//! objects can be differentiated by finite differences without claiming
//! closed forms they do not have.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fd;
use crate::flows::Trajectory;
use crate::linalg::{self, CholeskyFactor, PD_PIVOT_TOL};
use crate::potentials::{Chart, Point, PotentialModel};
use crate::tensor::Rank3;

/// Threshold under which the squared gradient-field norm counts as singular
/// for the Weyl covector.
pub const WEYL_EPS: f64 = 1e-8;

fn check_theta(model: &PotentialModel, p: &Point) -> Result<()> {
    if p.chart != Chart::Theta {
        return Err(Error::ChartMismatch {
            expected: Chart::Theta,
            got: p.chart,
        });
    }
    if p.dim() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: p.dim(),
        });
    }
    Ok(())
}

/// Raise the Levi-Civita formula against a factored metric, with
/// `partials.get(i, j, k)` holding the partial of g_ij along coordinate k.
fn levi_civita_from_partials(factor: &CholeskyFactor, partials: &Rank3) -> Rank3 {
    let d = partials.dim();
    let mut out = Rank3::zeros(d);
    for j in 0..d {
        for k in 0..d {
            let rhs = DVector::from_fn(d, |l, _| {
                0.5 * (partials.get(l, k, j) + partials.get(j, l, k) - partials.get(j, k, l))
            });
            let col = factor.solve(&rhs);
            for i in 0..d {
                out.set(i, j, k, col[i]);
            }
        }
    }
    out
}

/// Levi-Civita connection of the Hessian metric (raised first index).
pub fn levi_civita(model: &PotentialModel, p: &Point) -> Result<Rank3> {
    check_theta(model, p)?;
    let (_, factor) = model.metric_factor_raw(&p.coords)?;
    let partials = model.third_raw(&p.coords)?;
    Ok(levi_civita_from_partials(&factor, &partials))
}

/// One-parameter family of lowered connections: (1-α)/2 times the cubic
/// tensor. α = 1 gives the flat primal connection, α = -1 the mixture one.
pub fn alpha_connection(model: &PotentialModel, p: &Point, alpha: f64) -> Result<Rank3> {
    check_theta(model, p)?;
    let c = model.third_raw(&p.coords)?;
    let w = 0.5 * (1.0 - alpha);
    Ok(Rank3::from_fn(model.dim(), |i, j, k| w * c.get(i, j, k)))
}

fn mixture_connection_unsymmetrized(model: &PotentialModel, theta: &DVector<f64>) -> Result<Rank3> {
    let (_, factor) = model.metric_factor_raw(theta)?;
    let c = model.third_raw(theta)?;
    let d = theta.len();
    let mut out = Rank3::zeros(d);
    for j in 0..d {
        for k in 0..d {
            let rhs = DVector::from_fn(d, |l, _| c.get(l, j, k));
            let col = factor.solve(&rhs);
            for i in 0..d {
                out.set(i, j, k, col[i]);
            }
        }
    }
    Ok(out)
}

/// Mixture connection with the first index raised by the inverse metric,
/// symmetrized over the trailing pair.
pub fn mixture_connection(model: &PotentialModel, p: &Point) -> Result<Rank3> {
    check_theta(model, p)?;
    Ok(mixture_connection_unsymmetrized(model, &p.coords)?.symmetrize_last_two())
}

/// Trailing-pair asymmetry of the raised mixture connection before
/// symmetrization; non-zero values beyond differencing noise flag a model
/// whose registered derivatives are inconsistent.
pub fn mixture_asymmetry(model: &PotentialModel, p: &Point) -> Result<f64> {
    check_theta(model, p)?;
    Ok(mixture_connection_unsymmetrized(model, &p.coords)?.last_two_asymmetry())
}

pub(crate) fn eta_squared_raw(model: &PotentialModel, theta: &DVector<f64>) -> Result<f64> {
    let (_, factor) = model.metric_factor_raw(theta)?;
    let eta = model.grad_raw(theta)?;
    Ok(eta.dot(&factor.solve(&eta)))
}

/// Squared metric norm of the gradient field at a primal point.
pub fn eta_squared(model: &PotentialModel, p: &Point) -> Result<f64> {
    check_theta(model, p)?;
    eta_squared_raw(model, &p.coords)
}

pub(crate) fn weyl_covector_raw(
    model: &PotentialModel,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let (_, factor) = model.metric_factor_raw(theta)?;
    let eta = model.grad_raw(theta)?;
    let tdot = factor.solve(&eta);
    let eta_sq = eta.dot(&tdot);
    if eta_sq <= WEYL_EPS {
        return Err(Error::SingularWeyl {
            eta_squared: eta_sq,
            threshold: WEYL_EPS,
        });
    }
    let c = model.third_raw(theta)?;
    let d = theta.len();
    // d_k |η|² = 2 η_k - C_abk ẋ^a ẋ^b with ẋ = g^{-1} η.
    let omega = DVector::from_fn(d, |k, _| {
        let mut cvv = 0.0;
        for a in 0..d {
            for b in 0..d {
                cvv += c.get(a, b, k) * tdot[a] * tdot[b];
            }
        }
        -(2.0 * eta[k] - cvv) / eta_sq
    });
    Ok((omega, eta_sq))
}

/// The induced Weyl covector ω = -d ln |η|² at a primal point.
pub fn weyl_covector(model: &PotentialModel, p: &Point) -> Result<DVector<f64>> {
    check_theta(model, p)?;
    Ok(weyl_covector_raw(model, &p.coords)?.0)
}

type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync>;
type TensorFn = Arc<dyn Fn(&DVector<f64>) -> Result<Rank3> + Send + Sync>;
type VectorFn = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> Result<f64> + Send + Sync>;

/// A metric-valued field over primal coordinates together with a way to get
/// its coordinate partials, either closed-form or by central differences.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    value: MatrixFn,
    partials: TensorFn,
}

fn fd_matrix_partials(dim: usize, value: &MatrixFn, x: &DVector<f64>) -> Result<Rank3> {
    let mut out = Rank3::zeros(dim);
    let mut xs = x.clone();
    for k in 0..dim {
        let h = fd::default_step(1, x[k]);
        xs[k] = x[k] + h;
        let gp = value(&xs)?;
        xs[k] = x[k] - h;
        let gm = value(&xs)?;
        xs[k] = x[k];
        for i in 0..dim {
            for j in 0..dim {
                out.set(i, j, k, (gp[(i, j)] - gm[(i, j)]) / (2.0 * h));
            }
        }
    }
    Ok(out)
}

impl MetricField {
    /// The Hessian metric of a model; partials come from the cubic tensor.
    pub fn from_model(model: &PotentialModel) -> Self {
        let m1 = model.clone();
        let m2 = model.clone();
        MetricField {
            dim: model.dim(),
            value: Arc::new(move |x| Ok(m1.metric_factor_raw(x)?.0)),
            partials: Arc::new(move |x| m2.third_raw(x)),
        }
    }

    /// A black-box metric field; partials by central differences.
    pub fn from_fn(
        dim: usize,
        f: impl Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        let value: MatrixFn = Arc::new(f);
        let value2 = value.clone();
        MetricField {
            dim,
            value,
            partials: Arc::new(move |x| fd_matrix_partials(dim, &value2, x)),
        }
    }

    /// The conformally rescaled metric |η|² g of a model, differentiated by
    /// central differences so it stays an oracle independent of the closed
    /// forms used by the Weyl connection.
    pub fn conformal(model: &PotentialModel) -> Self {
        let m = model.clone();
        MetricField::from_fn(model.dim(), move |x| {
            let s = eta_squared_raw(&m, x)?;
            if s <= WEYL_EPS {
                return Err(Error::SingularWeyl {
                    eta_squared: s,
                    threshold: WEYL_EPS,
                });
            }
            Ok(s * m.metric_factor_raw(x)?.0)
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        (self.value)(x)
    }

    pub fn partials(&self, x: &DVector<f64>) -> Result<Rank3> {
        (self.partials)(x)
    }

    fn factor(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, CholeskyFactor)> {
        let g = self.value(x)?;
        match linalg::cholesky(&g, PD_PIVOT_TOL) {
            Ok(f) => Ok((g, f)),
            Err(pivot) => Err(Error::Convexity {
                pivot,
                context: format!("metric field at {:?}", x.as_slice()),
            }),
        }
    }

    /// Levi-Civita connection of this field at a point.
    pub fn levi_civita(&self, x: &DVector<f64>) -> Result<Rank3> {
        let (_, factor) = self.factor(x)?;
        Ok(levi_civita_from_partials(&factor, &self.partials(x)?))
    }
}

/// A covector-valued field over primal coordinates.
#[derive(Clone)]
pub struct CovectorField {
    dim: usize,
    value: VectorFn,
}

impl CovectorField {
    pub fn from_fn(
        dim: usize,
        f: impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        CovectorField {
            dim,
            value: Arc::new(f),
        }
    }

    pub fn zero(dim: usize) -> Self {
        CovectorField::from_fn(dim, move |_| Ok(DVector::zeros(dim)))
    }

    /// The induced Weyl covector of a model.
    pub fn induced(model: &PotentialModel) -> Self {
        let m = model.clone();
        CovectorField::from_fn(model.dim(), move |x| Ok(weyl_covector_raw(&m, x)?.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.value)(x)
    }
}

/// A scalar field over primal coordinates, differentiable by central
/// differences.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    value: ScalarFn,
}

impl ScalarField {
    pub fn from_fn(dim: usize, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            dim,
            value: Arc::new(move |x| {
                let v = f(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Domain(format!(
                        "scalar field not finite at {:?}",
                        x.as_slice()
                    )))
                }
            }),
        }
    }

    fn from_result_fn(
        dim: usize,
        f: impl Fn(&DVector<f64>) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            dim,
            value: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        (self.value)(x)
    }

    /// Central-difference gradient with the first-order default steps.
    pub fn gradient_fd(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let steps: Vec<f64> = x.iter().map(|&c| fd::default_step(1, c)).collect();
        fd::gradient_of(|y| self.eval(y), x, &steps)
    }
}

/// A metric paired with an integrable Weyl covector and the scalar potential
/// whose differential the covector is.
#[derive(Clone)]
pub struct WeylStructure {
    pub metric: MetricField,
    pub covector: CovectorField,
    oneform_potential: ScalarField,
}

impl WeylStructure {
    /// The structure induced by a model: Hessian metric, ω = -d ln |η|²,
    /// potential -ln |η|².
    pub fn induced(model: &PotentialModel) -> Self {
        let m = model.clone();
        WeylStructure {
            metric: MetricField::from_model(model),
            covector: CovectorField::induced(model),
            oneform_potential: ScalarField::from_result_fn(model.dim(), move |x| {
                let s = eta_squared_raw(&m, x)?;
                if s <= WEYL_EPS {
                    return Err(Error::SingularWeyl {
                        eta_squared: s,
                        threshold: WEYL_EPS,
                    });
                }
                Ok(-s.ln())
            }),
        }
    }

    pub fn oneform_potential(&self, x: &DVector<f64>) -> Result<f64> {
        self.oneform_potential.eval(x)
    }

    /// Max-norm gap between the covector and the differenced gradient of
    /// its potential; integrability demands this vanish.
    pub fn integrability_residual(&self, x: &DVector<f64>) -> Result<f64> {
        let omega = self.covector.value(x)?;
        let grad = self.oneform_potential.gradient_fd(x)?;
        Ok((omega - grad).amax())
    }

    /// The Weyl connection of the pair at a point.
    pub fn connection(&self, x: &DVector<f64>) -> Result<Rank3> {
        weyl_connection(&self.metric, &self.covector, x)
    }
}

/// Weyl connection of a metric/covector pair: the Levi-Civita terms of the
/// metric corrected by the covector so that the non-metricity is ω ⊗ g.
pub fn weyl_connection(g: &MetricField, w: &CovectorField, x: &DVector<f64>) -> Result<Rank3> {
    let (gm, factor) = g.factor(x)?;
    let lc = levi_civita_from_partials(&factor, &g.partials(x)?);
    let omega = w.value(x)?;
    let omega_sharp = factor.solve(&omega);
    let d = g.dim();
    Ok(Rank3::from_fn(d, |k, i, j| {
        let mut v = lc.get(k, i, j);
        if k == j {
            v -= 0.5 * omega[i];
        }
        if k == i {
            v -= 0.5 * omega[j];
        }
        v += 0.5 * omega_sharp[k] * gm[(i, j)];
        v
    }))
}

/// Max-norm residual of the compatibility law ∇g = ω ⊗ g for a candidate
/// connection at a point.
pub fn nonmetricity_residual(
    g: &MetricField,
    gamma: &Rank3,
    w: &CovectorField,
    x: &DVector<f64>,
) -> Result<f64> {
    let gm = g.value(x)?;
    let partials = g.partials(x)?;
    let omega = w.value(x)?;
    let d = g.dim();
    let mut worst: f64 = 0.0;
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let mut v = partials.get(i, j, k) - omega[k] * gm[(i, j)];
                for l in 0..d {
                    v -= gamma.get(l, k, i) * gm[(l, j)] + gamma.get(l, k, j) * gm[(i, l)];
                }
                worst = worst.max(v.abs());
            }
        }
    }
    Ok(worst)
}

/// Pointwise gauge transformation: (g, ω) -> (e^Λ g, ω + dΛ) with dΛ taken
/// by central differences.
pub fn gauge_transform(
    g: &MetricField,
    w: &CovectorField,
    lambda: &ScalarField,
    x: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let scale = lambda.eval(x)?.exp();
    let gbar = scale * g.value(x)?;
    let wbar = w.value(x)? + lambda.gradient_fd(x)?;
    Ok((gbar, wbar))
}

/// Field-level gauge transformation of a metric/covector pair.
pub fn gauge_transformed(
    g: &MetricField,
    w: &CovectorField,
    lambda: &ScalarField,
) -> (MetricField, CovectorField) {
    let g0 = g.clone();
    let l0 = lambda.clone();
    let gbar = MetricField::from_fn(g.dim(), move |x| Ok(l0.eval(x)?.exp() * g0.value(x)?));
    let w0 = w.clone();
    let l1 = lambda.clone();
    let wbar = CovectorField::from_fn(w.dim(), move |x| Ok(w0.value(x)? + l1.gradient_fd(x)?));
    (gbar, wbar)
}

/// Tags for the connection fields exposed to transport and the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConnectionKind {
    LeviCivita,
    Alpha(f64),
    Mixture,
    Weyl,
    ConformalLeviCivita,
}

/// A coefficient field over primal coordinates. `raised` records whether
/// the first index is contravariant; only raised fields can transport.
#[derive(Clone)]
pub struct ConnectionField {
    dim: usize,
    kind: ConnectionKind,
    raised: bool,
    coeffs: TensorFn,
}

impl ConnectionField {
    pub fn levi_civita(model: &PotentialModel) -> Self {
        let m = model.clone();
        ConnectionField {
            dim: model.dim(),
            kind: ConnectionKind::LeviCivita,
            raised: true,
            coeffs: Arc::new(move |x| {
                let (_, factor) = m.metric_factor_raw(x)?;
                Ok(levi_civita_from_partials(&factor, &m.third_raw(x)?))
            }),
        }
    }

    /// Lowered α-family coefficients.
    pub fn alpha(model: &PotentialModel, alpha: f64) -> Self {
        let m = model.clone();
        ConnectionField {
            dim: model.dim(),
            kind: ConnectionKind::Alpha(alpha),
            raised: false,
            coeffs: Arc::new(move |x| {
                let c = m.third_raw(x)?;
                let w = 0.5 * (1.0 - alpha);
                Ok(Rank3::from_fn(c.dim(), |i, j, k| w * c.get(i, j, k)))
            }),
        }
    }

    pub fn mixture(model: &PotentialModel) -> Self {
        let m = model.clone();
        ConnectionField {
            dim: model.dim(),
            kind: ConnectionKind::Mixture,
            raised: true,
            coeffs: Arc::new(move |x| {
                Ok(mixture_connection_unsymmetrized(&m, x)?.symmetrize_last_two())
            }),
        }
    }

    /// The induced Weyl connection of a model.
    pub fn weyl(model: &PotentialModel) -> Self {
        let ws = WeylStructure::induced(model);
        ConnectionField {
            dim: model.dim(),
            kind: ConnectionKind::Weyl,
            raised: true,
            coeffs: Arc::new(move |x| ws.connection(x)),
        }
    }

    /// Levi-Civita connection of the conformally rescaled metric |η|² g,
    /// differentiated numerically.
    pub fn conformal_levi_civita(model: &PotentialModel) -> Self {
        let field = MetricField::conformal(model);
        ConnectionField {
            dim: model.dim(),
            kind: ConnectionKind::ConformalLeviCivita,
            raised: true,
            coeffs: Arc::new(move |x| field.levi_civita(x)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> ConnectionKind {
        self.kind
    }

    pub fn is_raised(&self) -> bool {
        self.raised
    }

    pub fn coefficients(&self, x: &DVector<f64>) -> Result<Rank3> {
        (self.coeffs)(x)
    }
}

/// Parallel transport of a vector along a sampled curve, one classical RK4
/// step per sample interval. Midpoint states come from the cubic Hermite
/// interpolant of the stored positions and velocities, so the transported
/// field keeps the integrator's order.
pub fn parallel_transport(
    conn: &ConnectionField,
    curve: &Trajectory,
    v0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    if curve.chart != Chart::Theta {
        return Err(Error::ChartMismatch {
            expected: Chart::Theta,
            got: curve.chart,
        });
    }
    if !conn.is_raised() {
        return Err(Error::Integration(
            "parallel transport needs a raised connection".into(),
        ));
    }
    if curve.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if v0.len() != conn.dim() || curve.dim() != conn.dim() {
        return Err(Error::Dimension {
            expected: conn.dim(),
            got: v0.len().max(curve.dim()),
        });
    }
    let wrap = |t: f64| move |e: Error| Error::Integration(format!("transport at t = {t}: {e}"));
    let mut out = Vec::with_capacity(curve.len());
    let mut v = v0.clone();
    out.push(v.clone());
    let mut gamma_start = conn
        .coefficients(&curve.points[0])
        .map_err(wrap(curve.times[0]))?;
    for n in 0..curve.len() - 1 {
        let h = curve.times[n + 1] - curve.times[n];
        let (x0, x1) = (&curve.points[n], &curve.points[n + 1]);
        let (u0, u1) = (&curve.velocities[n], &curve.velocities[n + 1]);
        // Hermite midpoint of position and velocity.
        let xm = 0.5 * (x0 + x1) + (h / 8.0) * (u0 - u1);
        let um = (1.5 / h) * (x1 - x0) - 0.25 * (u0 + u1);
        let gamma_mid = conn.coefficients(&xm).map_err(wrap(curve.times[n]))?;
        let gamma_end = conn.coefficients(x1).map_err(wrap(curve.times[n + 1]))?;
        let k1 = -gamma_start.contract_last_two(u0, &v);
        let k2 = -gamma_mid.contract_last_two(&um, &(&v + (h / 2.0) * &k1));
        let k3 = -gamma_mid.contract_last_two(&um, &(&v + (h / 2.0) * &k2));
        let k4 = -gamma_end.contract_last_two(u1, &(&v + h * &k3));
        v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(v.clone());
        gamma_start = gamma_end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{integrate_theta_flow, FlowConfig};
    use crate::potentials::{bernoulli, exp1d, gaussian2, quadratic};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn levi_civita_values() {
        let lc = levi_civita(&exp1d(), &Point::theta(vec![0.7])).unwrap();
        close(lc.get(0, 0, 0), 0.5, 1e-14);
        let lc = levi_civita(&quadratic(2), &Point::theta(vec![0.3, -0.9])).unwrap();
        assert_eq!(lc.max_abs(), 0.0);
        let lc = levi_civita(&bernoulli(), &Point::theta(vec![0.0])).unwrap();
        close(lc.get(0, 0, 0), 0.0, 1e-15);
    }

    #[test]
    fn alpha_family_endpoints() {
        let p = Point::theta(vec![0.4]);
        let m = exp1d();
        assert_eq!(alpha_connection(&m, &p, 1.0).unwrap().max_abs(), 0.0);
        let c = m.cubic_tensor(&p).unwrap();
        let mix_lower = alpha_connection(&m, &p, -1.0).unwrap();
        close(mix_lower.get(0, 0, 0), c.get(0, 0, 0), 1e-15);
        // At α = 0 the raised coefficients are the Levi-Civita ones.
        let half = alpha_connection(&m, &p, 0.0).unwrap();
        close(half.get(0, 0, 0), 0.5 * c.get(0, 0, 0), 1e-15);
        let lc = levi_civita(&m, &p).unwrap();
        let mix = mixture_connection(&m, &p).unwrap();
        close(lc.get(0, 0, 0), 0.5 * mix.get(0, 0, 0), 1e-14);
    }

    #[test]
    fn mixture_values_and_symmetry() {
        for &x in &[-1.0, 0.0, 1.3] {
            let mix = mixture_connection(&exp1d(), &Point::theta(vec![x])).unwrap();
            close(mix.get(0, 0, 0), 1.0, 1e-13);
        }
        let p = Point::theta(vec![0.8, -1.6]);
        assert_eq!(
            mixture_connection(&quadratic(2), &p).unwrap().max_abs(),
            0.0
        );
        assert!(mixture_asymmetry(&gaussian2(), &p).unwrap() <= 1e-12);
    }

    #[test]
    fn eta_squared_and_weyl_covector() {
        close(
            eta_squared(&quadratic(2), &Point::theta(vec![1.0, 0.0])).unwrap(),
            1.0,
            1e-15,
        );
        close(
            eta_squared(&exp1d(), &Point::theta(vec![0.3])).unwrap(),
            0.3_f64.exp(),
            1e-13,
        );
        close(
            eta_squared(&gaussian2(), &Point::theta(vec![0.0, -0.5])).unwrap(),
            0.5,
            1e-14,
        );
        let w = weyl_covector(&quadratic(2), &Point::theta(vec![1.0, 0.0])).unwrap();
        close(w[0], -2.0, 1e-13);
        close(w[1], 0.0, 1e-13);
        for &x in &[-0.5, 0.2, 1.1] {
            let w = weyl_covector(&exp1d(), &Point::theta(vec![x])).unwrap();
            close(w[0], -1.0, 1e-12);
        }
        assert!(matches!(
            weyl_covector(&quadratic(2), &Point::theta(vec![0.0, 0.0])),
            Err(Error::SingularWeyl { .. })
        ));
    }

    #[test]
    fn weyl_connection_closed_forms() {
        let ws = WeylStructure::induced(&exp1d());
        for &x in &[-0.8, 0.0, 0.9] {
            let g = ws.connection(&DVector::from_vec(vec![x])).unwrap();
            close(g.get(0, 0, 0), 1.0, 1e-12);
        }
        // Quadratic at (1, 0): ω = (-2, 0), Γ̃^0_00 = 1.
        let ws = WeylStructure::induced(&quadratic(2));
        let g = ws.connection(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        close(g.get(0, 0, 0), 1.0, 1e-12);
        // Zero covector reduces to Levi-Civita.
        let m = gaussian2();
        let x = DVector::from_vec(vec![0.6, -1.1]);
        let plain =
            weyl_connection(&MetricField::from_model(&m), &CovectorField::zero(2), &x).unwrap();
        let lc = levi_civita(&m, &Point::from_vector(Chart::Theta, x)).unwrap();
        assert!(plain.sub(&lc).max_abs() <= 1e-14);
    }

    #[test]
    fn weyl_equals_conformal_levi_civita() {
        for (model, xs) in [
            (exp1d(), vec![vec![-0.5], vec![0.4]]),
            (quadratic(2), vec![vec![1.0, 0.2], vec![-0.7, 0.9]]),
            (gaussian2(), vec![vec![0.5, -0.8], vec![-1.1, -1.9]]),
        ] {
            let weyl = ConnectionField::weyl(&model);
            let conf = ConnectionField::conformal_levi_civita(&model);
            for x in xs {
                let x = DVector::from_vec(x);
                let a = weyl.coefficients(&x).unwrap();
                let b = conf.coefficients(&x).unwrap();
                assert!(
                    a.sub(&b).max_abs() <= 1e-6,
                    "{} at {:?}: {}",
                    model.name(),
                    x.as_slice(),
                    a.sub(&b).max_abs()
                );
            }
        }
    }

    #[test]
    fn nonmetricity_closed_and_differenced() {
        let m = exp1d();
        let ws = WeylStructure::induced(&m);
        let x = DVector::from_vec(vec![0.4]);
        let gamma = ws.connection(&x).unwrap();
        let r = nonmetricity_residual(&ws.metric, &gamma, &ws.covector, &x).unwrap();
        assert!(r <= 1e-10, "closed-form route: {r}");
        // Same check with the metric treated as a black box.
        let mm = m.clone();
        let black_box = MetricField::from_fn(1, move |y| Ok(mm.metric_factor_raw(y)?.0));
        let r = nonmetricity_residual(&black_box, &gamma, &ws.covector, &x).unwrap();
        assert!(r <= 1e-5, "differenced route: {r}");
    }

    #[test]
    fn integrability_of_induced_structure() {
        for (model, x) in [
            (exp1d(), vec![0.6]),
            (quadratic(2), vec![0.9, -0.4]),
            (gaussian2(), vec![0.3, -1.2]),
        ] {
            let ws = WeylStructure::induced(&model);
            let r = ws.integrability_residual(&DVector::from_vec(x)).unwrap();
            assert!(r <= 1e-6, "{}: {r}", model.name());
        }
    }

    #[test]
    fn gauge_transformations() {
        // Λ = θ on exp1d turns ω = -1 into zero and g into e^{2θ}.
        let m = exp1d();
        let g = MetricField::from_model(&m);
        let w = CovectorField::induced(&m);
        let lambda = ScalarField::from_fn(1, |x| x[0]);
        let x = DVector::from_vec(vec![0.5]);
        let (gbar, wbar) = gauge_transform(&g, &w, &lambda, &x).unwrap();
        close(gbar[(0, 0)], (2.0 * 0.5_f64).exp(), 1e-10);
        close(wbar[0], 0.0, 1e-8);
        // Λ = ln |η|² on quadratic sends the pair to (conformal metric, 0).
        let m = quadratic(2);
        let g = MetricField::from_model(&m);
        let w = CovectorField::induced(&m);
        let mm = m.clone();
        let lambda = ScalarField::from_fn(2, move |x| {
            eta_squared_raw(&mm, x).map(|s| s.ln()).unwrap_or(f64::NAN)
        });
        let x = DVector::from_vec(vec![1.0, 0.5]);
        let (gbar, wbar) = gauge_transform(&g, &w, &lambda, &x).unwrap();
        close(gbar[(0, 0)], 1.25, 1e-12);
        close(wbar.amax(), 0.0, 1e-8);
    }

    #[test]
    fn gauge_invariance_of_weyl_connection() {
        let m = gaussian2();
        let ws = WeylStructure::induced(&m);
        let lambda = ScalarField::from_fn(2, |x| 0.3 + 0.2 * x[0] - 0.4 * x[1] + 0.1 * x[0] * x[1]);
        let (gbar, wbar) = gauge_transformed(&ws.metric, &ws.covector, &lambda);
        for x in [vec![0.5, -0.7], vec![-1.0, -1.8]] {
            let x = DVector::from_vec(x);
            let before = ws.connection(&x).unwrap();
            let after = weyl_connection(&gbar, &wbar, &x).unwrap();
            assert!(
                before.sub(&after).max_abs() <= 1e-6,
                "gauge shift at {:?}: {}",
                x.as_slice(),
                before.sub(&after).max_abs()
            );
        }
    }

    #[test]
    fn transport_constancy_and_decay() {
        let cfg = FlowConfig::default();
        // Flat connection: transported vectors never change.
        let m = quadratic(2);
        let traj = integrate_theta_flow(&m, &Point::theta(vec![1.0, 0.5]), &cfg).unwrap();
        let lc = ConnectionField::levi_civita(&m);
        let v0 = DVector::from_vec(vec![1.0, -0.3]);
        let moved = parallel_transport(&lc, &traj, &v0).unwrap();
        assert_eq!(moved.len(), traj.len());
        for v in &moved {
            assert_eq!((v - &v0).amax(), 0.0);
        }
        // exp1d Weyl transport along θ(t) = t contracts like e^{-t}.
        let m = exp1d();
        let traj = integrate_theta_flow(&m, &Point::theta(vec![0.0]), &cfg).unwrap();
        let weyl = ConnectionField::weyl(&m);
        let moved = parallel_transport(&weyl, &traj, &DVector::from_vec(vec![1.0])).unwrap();
        for (n, v) in moved.iter().enumerate() {
            close(v[0], (-traj.times[n]).exp(), 1e-9);
        }
    }

    #[test]
    fn transport_rejects_lowered_connections() {
        let m = exp1d();
        let traj =
            integrate_theta_flow(&m, &Point::theta(vec![0.0]), &FlowConfig::default()).unwrap();
        let alpha = ConnectionField::alpha(&m, 0.0);
        assert!(matches!(
            parallel_transport(&alpha, &traj, &DVector::from_vec(vec![1.0])),
            Err(Error::Integration(_))
        ));
    }
}
