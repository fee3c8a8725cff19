//! Gradient-flow integration in both charts.
//!
//! The primal flow follows the metric-preconditioned gradient ascent
//! dθ/dt = g^{-1}(θ) η(θ); its dual image grows exponentially, q(t) = q0 e^t.
//! The dual flow dη/dt = -g(θ(η)) θ(η) is the mirror descent whose primal
//! image decays, θ(t) = θ0 e^{-t}. Both are integrated with a fixed-step
//! classical RK4 by default; trial steps that would leave the open domain
//! (with a safety margin) are bisected up to 40 times before the run stops
//! with a domain exit. An embedded adaptive pair is available for
//! cross-checking at the cost of non-uniform sample spacing.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::duality::from_dual_raw;
use crate::error::{Error, Result};
use crate::potentials::{Chart, Point, PotentialModel};

const MAX_BISECTIONS: usize = 40;

/// Newton tolerance used for inversions inside the dual flow and for
/// mapping stored samples between charts. Tighter than the public default
/// so chart round-trips stay far below integrator error.
pub(crate) const INTERNAL_NEWTON_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    DomainExit,
    SingularMetric,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Completed => "completed",
            Termination::DomainExit => "domain_exit",
            Termination::SingularMetric => "singular_metric",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Dp45,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    pub t_end: f64,
    /// Fixed step for RK4; initial step for the adaptive method.
    pub step: f64,
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Clearance from the domain boundary a trial state must keep.
    pub boundary_margin: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            t_end: 1.0,
            step: 1e-3,
            method: Method::Rk4,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            boundary_margin: 1e-6,
        }
    }
}

/// Sampled integral curve with chart tag, stored velocities and the reason
/// the integration stopped.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub chart: Chart,
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    pub terminated: Termination,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    /// Common sample spacing, if the spacing is uniform to a relative
    /// 1e-9; `None` otherwise or with fewer than two samples.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let n = self.len();
        let h = (self.times[n - 1] - self.times[0]) / (n - 1) as f64;
        for i in 0..n - 1 {
            if ((self.times[i + 1] - self.times[i]) - h).abs() > 1e-9 * h {
                return None;
            }
        }
        Some(h)
    }

    /// Longest uniformly spaced prefix (spacing taken from the first step).
    /// Bisected tail samples near a boundary exit are dropped; the
    /// termination tag of the parent run is kept.
    pub fn uniform_prefix(&self) -> Trajectory {
        if self.len() < 2 {
            return self.clone();
        }
        let h = self.times[1] - self.times[0];
        let mut n = 2;
        while n < self.len() && ((self.times[n] - self.times[n - 1]) - h).abs() <= 1e-9 * h {
            n += 1;
        }
        Trajectory {
            chart: self.chart,
            times: self.times[..n].to_vec(),
            points: self.points[..n].to_vec(),
            velocities: self.velocities[..n].to_vec(),
            terminated: self.terminated,
        }
    }

    /// CSV serialization: `t`, coordinates, velocities. Floats are written
    /// with the shortest round-trip decimal representation.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let (cn, vn) = match self.chart {
            Chart::Theta => ("theta", "dtheta"),
            Chart::Eta => ("eta", "deta"),
        };
        let d = self.dim();
        write!(w, "t")?;
        for i in 0..d {
            write!(w, ",{cn}{i}")?;
        }
        for i in 0..d {
            write!(w, ",{vn}{i}")?;
        }
        writeln!(w)?;
        for n in 0..self.len() {
            write!(w, "{}", self.times[n])?;
            for i in 0..d {
                write!(w, ",{}", self.points[n][i])?;
            }
            for i in 0..d {
                write!(w, ",{}", self.velocities[n][i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn validate_config(cfg: &FlowConfig) -> Result<()> {
    if !(cfg.t_end > 0.0 && cfg.step > 0.0 && cfg.boundary_margin >= 0.0) {
        return Err(Error::Integration(format!(
            "invalid flow config: t_end {}, step {}, boundary_margin {}",
            cfg.t_end, cfg.step, cfg.boundary_margin
        )));
    }
    Ok(())
}

fn rk4_step<R>(rhs: &mut R, x: &DVector<f64>, v: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k2 = rhs(&(x + (h / 2.0) * v))?;
    let k3 = rhs(&(x + (h / 2.0) * &k2))?;
    let k4 = rhs(&(x + h * &k3))?;
    Ok(x + (h / 6.0) * (v + 2.0 * &k2 + 2.0 * &k3 + &k4))
}

fn integrate_fixed<R, D>(
    mut rhs: R,
    domain: D,
    x0: DVector<f64>,
    v0: DVector<f64>,
    chart: Chart,
    cfg: &FlowConfig,
) -> Trajectory
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    D: Fn(&DVector<f64>) -> bool,
{
    let mut times = vec![0.0];
    let mut points = vec![x0.clone()];
    let mut velocities = vec![v0.clone()];
    let mut t = 0.0;
    let mut x = x0;
    let mut v = v0;
    let terminated = loop {
        let remaining = cfg.t_end - t;
        if remaining <= cfg.step * 1e-9 {
            break Termination::Completed;
        }
        let mut h = cfg.step.min(remaining);
        let mut accepted = None;
        let mut rhs_block = false;
        for _ in 0..=MAX_BISECTIONS {
            match rk4_step(&mut rhs, &x, &v, h) {
                Ok(x1) if domain(&x1) => match rhs(&x1) {
                    Ok(v1) => {
                        accepted = Some((h, x1, v1));
                        break;
                    }
                    Err(_) => rhs_block = true,
                },
                Ok(_) => rhs_block = false,
                Err(_) => rhs_block = true,
            }
            h *= 0.5;
        }
        match accepted {
            Some((h, x1, v1)) => {
                t += h;
                x = x1;
                v = v1;
                times.push(t);
                points.push(x.clone());
                velocities.push(v.clone());
            }
            None => {
                break if rhs_block {
                    Termination::SingularMetric
                } else {
                    Termination::DomainExit
                }
            }
        }
    };
    Trajectory {
        chart,
        times,
        points,
        velocities,
        terminated,
    }
}

// Dormand-Prince 5(4) tableau.
const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[allow(clippy::needless_range_loop)]
fn integrate_adaptive<R, D>(
    mut rhs: R,
    domain: D,
    x0: DVector<f64>,
    v0: DVector<f64>,
    chart: Chart,
    cfg: &FlowConfig,
) -> Result<Trajectory>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    D: Fn(&DVector<f64>) -> bool,
{
    let dim = x0.len();
    let mut times = vec![0.0];
    let mut points = vec![x0.clone()];
    let mut velocities = vec![v0.clone()];
    let mut t = 0.0;
    let mut x = x0;
    let mut v = v0;
    let mut h_next = cfg.step;
    let terminated = 'outer: loop {
        let remaining = cfg.t_end - t;
        if remaining <= cfg.t_end * 1e-12 {
            break Termination::Completed;
        }
        let mut h = h_next.min(remaining);
        let mut domain_blocks = 0;
        let mut rejections = 0;
        loop {
            if h < cfg.t_end * 1e-15 {
                return Err(Error::Integration("adaptive step underflow".into()));
            }
            let mut rhs_block = false;
            let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
            ks.push(v.clone());
            let mut blocked = false;
            for s in 0..6 {
                let mut xs = x.clone();
                for (j, k) in ks.iter().enumerate() {
                    let a = DP_A[s][j];
                    if a != 0.0 {
                        xs += (h * a) * k;
                    }
                }
                match rhs(&xs) {
                    Ok(k) => ks.push(k),
                    Err(_) => {
                        blocked = true;
                        break;
                    }
                }
            }
            if !blocked {
                let mut x5 = x.clone();
                let mut x4 = x.clone();
                for (j, k) in ks.iter().enumerate() {
                    if DP_B5[j] != 0.0 {
                        x5 += (h * DP_B5[j]) * k;
                    }
                    if DP_B4[j] != 0.0 {
                        x4 += (h * DP_B4[j]) * k;
                    }
                }
                if domain(&x5) {
                    match rhs(&x5) {
                        Ok(v5) => {
                            let mut err: f64 = 0.0;
                            for i in 0..dim {
                                let scale = cfg.abs_tol + cfg.rel_tol * x[i].abs().max(x5[i].abs());
                                err = err.max((x5[i] - x4[i]).abs() / scale);
                            }
                            if err.is_finite() && err <= 1.0 {
                                t += h;
                                x = x5;
                                v = v5;
                                times.push(t);
                                points.push(x.clone());
                                velocities.push(v.clone());
                                let grow = (0.9 * err.max(1e-12).powf(-0.2)).clamp(0.2, 5.0);
                                h_next = h * grow;
                                continue 'outer;
                            }
                            rejections += 1;
                            if rejections > 1000 {
                                return Err(Error::Integration(
                                    "adaptive step control failed to converge".into(),
                                ));
                            }
                            let shrink = if err.is_finite() {
                                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
                            } else {
                                0.5
                            };
                            h *= shrink;
                            continue;
                        }
                        Err(_) => rhs_block = true,
                    }
                }
            } else {
                rhs_block = true;
            }
            domain_blocks += 1;
            if domain_blocks > MAX_BISECTIONS {
                break 'outer if rhs_block {
                    Termination::SingularMetric
                } else {
                    Termination::DomainExit
                };
            }
            h *= 0.5;
        }
    };
    Ok(Trajectory {
        chart,
        times,
        points,
        velocities,
        terminated,
    })
}

/// Integrate the primal gradient flow from a primal point.
pub fn integrate_theta_flow(
    model: &PotentialModel,
    p0: &Point,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    validate_config(cfg)?;
    if p0.chart != Chart::Theta {
        return Err(Error::ChartMismatch {
            expected: Chart::Theta,
            got: p0.chart,
        });
    }
    if !model.contains(&p0.coords, 0.0) {
        return Err(Error::Domain(format!(
            "{}: initial point outside domain",
            model.name()
        )));
    }
    let rhs = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let (_, factor) = model.metric_factor_raw(x)?;
        let eta = model.grad_raw(x)?;
        Ok(factor.solve(&eta))
    };
    let v0 = rhs(&p0.coords).map_err(|e| match e {
        Error::Convexity { .. } => Error::SingularMetric { t: 0.0 },
        other => other,
    })?;
    let domain = |x: &DVector<f64>| model.contains(x, cfg.boundary_margin);
    match cfg.method {
        Method::Rk4 => Ok(integrate_fixed(
            rhs,
            domain,
            p0.coords.clone(),
            v0,
            Chart::Theta,
            cfg,
        )),
        Method::Dp45 => integrate_adaptive(rhs, domain, p0.coords.clone(), v0, Chart::Theta, cfg),
    }
}

/// Integrate the dual gradient flow from a dual point. Each right-hand-side
/// evaluation inverts the gradient map with a warm-started Newton solve.
pub fn integrate_eta_flow(
    model: &PotentialModel,
    q0: &Point,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    validate_config(cfg)?;
    if q0.chart != Chart::Eta {
        return Err(Error::ChartMismatch {
            expected: Chart::Eta,
            got: q0.chart,
        });
    }
    if !model.dual_contains(&q0.coords, 0.0) {
        return Err(Error::Domain(format!(
            "{}: initial point outside dual image",
            model.name()
        )));
    }
    let mut warm = model.reference_point();
    let mut rhs = |q: &DVector<f64>| -> Result<DVector<f64>> {
        let theta = from_dual_raw(model, q, &warm, INTERNAL_NEWTON_TOL, 100)?;
        warm = theta.clone();
        let (g, _) = model.metric_factor_raw(&theta)?;
        Ok(-(g * theta))
    };
    let v0 = rhs(&q0.coords).map_err(|e| match e {
        Error::Convexity { .. } => Error::SingularMetric { t: 0.0 },
        other => other,
    })?;
    let domain = |q: &DVector<f64>| model.dual_contains(q, cfg.boundary_margin);
    match cfg.method {
        Method::Rk4 => Ok(integrate_fixed(
            rhs,
            domain,
            q0.coords.clone(),
            v0,
            Chart::Eta,
            cfg,
        )),
        Method::Dp45 => integrate_adaptive(rhs, domain, q0.coords.clone(), v0, Chart::Eta, cfg),
    }
}

/// Flow direction of the closed-form dual image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    /// Exponential growth, the dual image of the primal flow.
    Plus,
    /// Exponential decay, the primal image of the dual flow.
    Minus,
}

/// Closed-form image of either flow in the opposite chart: q0 e^{±t}.
pub fn closed_form_dual_flow(q0: &DVector<f64>, t: f64, sign: Sign) -> DVector<f64> {
    let factor = match sign {
        Sign::Plus => t.exp(),
        Sign::Minus => (-t).exp(),
    };
    q0 * factor
}

/// Conserved ratio sum of a dual-chart sample with even dimension: the sum
/// of q[2k+1]/q[2k] over consecutive pairs.
pub fn hamiltonian(q: &DVector<f64>) -> Result<f64> {
    let d = q.len();
    if d % 2 != 0 {
        return Err(Error::OddDimension { dim: d });
    }
    let mut sum = 0.0;
    for k in 0..d / 2 {
        let den = q[2 * k];
        if den == 0.0 {
            return Err(Error::DivisionByZero { index: 2 * k });
        }
        sum += q[2 * k + 1] / den;
    }
    Ok(sum)
}

/// Map every sample of a trajectory to the opposite chart.
pub fn dual_image_series(model: &PotentialModel, traj: &Trajectory) -> Result<Vec<DVector<f64>>> {
    match traj.chart {
        Chart::Theta => traj.points.iter().map(|x| model.grad_raw(x)).collect(),
        Chart::Eta => {
            let mut warm = model.reference_point();
            let mut out = Vec::with_capacity(traj.len());
            for q in &traj.points {
                let theta = from_dual_raw(model, q, &warm, INTERNAL_NEWTON_TOL, 100)?;
                warm = theta.clone();
                out.push(theta);
            }
            Ok(out)
        }
    }
}

/// Pointwise defect of the potential-rate identity dΨ/dt = |η|² along a
/// primal-flow trajectory, using the stored velocities.
pub fn potential_rate_residual(model: &PotentialModel, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.chart != Chart::Theta {
        return Err(Error::ChartMismatch {
            expected: Chart::Theta,
            got: traj.chart,
        });
    }
    let mut out = Vec::with_capacity(traj.len());
    for n in 0..traj.len() {
        let x = &traj.points[n];
        let eta = model.grad_raw(x)?;
        let (_, factor) = model.metric_factor_raw(x)?;
        let lhs = eta.dot(&traj.velocities[n]);
        let rhs = eta.dot(&factor.solve(&eta));
        out.push((lhs - rhs).abs());
    }
    Ok(out)
}

/// Pointwise defect of the dual-rate identity -dΨ*/dt = |θ|² along a
/// dual-flow trajectory.
pub fn entropy_rate_residual(model: &PotentialModel, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.chart != Chart::Eta {
        return Err(Error::ChartMismatch {
            expected: Chart::Eta,
            got: traj.chart,
        });
    }
    let mut warm = model.reference_point();
    let mut out = Vec::with_capacity(traj.len());
    for n in 0..traj.len() {
        let q = &traj.points[n];
        let theta = from_dual_raw(model, q, &warm, INTERNAL_NEWTON_TOL, 100)?;
        warm = theta.clone();
        let (g, _) = model.metric_factor_raw(&theta)?;
        let lhs = -theta.dot(&traj.velocities[n]);
        let rhs = theta.dot(&(&g * &theta));
        out.push((lhs - rhs).abs());
    }
    Ok(out)
}

/// Structured-text run summary: initial point, termination, and the drift
/// of the conserved ratio sum on the dual image where it is defined.
pub fn flow_summary(model: &PotentialModel, traj: &Trajectory) -> String {
    let chart = match traj.chart {
        Chart::Theta => "theta",
        Chart::Eta => "eta",
    };
    let initial: Vec<String> = traj.points[0].iter().map(|v| format!("{v}")).collect();
    let drift = if traj.dim() % 2 != 0 {
        "n/a (odd dimension)".to_string()
    } else {
        match dual_image_series(model, traj).and_then(|qs| {
            let h0 = hamiltonian(&qs[0])?;
            let mut worst: f64 = 0.0;
            for q in &qs {
                worst = worst.max((hamiltonian(q)? - h0).abs());
            }
            Ok(worst)
        }) {
            Ok(v) => format!("{v:e}"),
            Err(e) => format!("n/a ({e})"),
        }
    };
    format!(
        "chart: {chart}\ninitial: [{}]\nsamples: {}\nt_final: {}\nterminated: {}\nhamiltonian_drift: {drift}\n",
        initial.join(", "),
        traj.len(),
        traj.times.last().copied().unwrap_or(0.0),
        traj.terminated,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{bernoulli, exp1d, gaussian2, quadratic};

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn quadratic_theta_flow_is_exponential() {
        let cfg = FlowConfig::default();
        let traj =
            integrate_theta_flow(&quadratic(2), &Point::theta(vec![1.0, 0.0]), &cfg).unwrap();
        assert_eq!(traj.terminated, Termination::Completed);
        assert_eq!(traj.len(), 1001);
        let last = traj.points.last().unwrap();
        close(last[0], 1.0_f64.exp(), 1e-10);
        close(last[1], 0.0, 1e-12);
        assert!(traj.uniform_step().is_some());
    }

    #[test]
    fn exp1d_theta_flow_is_linear_in_theta() {
        let cfg = FlowConfig::default();
        let traj = integrate_theta_flow(&exp1d(), &Point::theta(vec![0.0]), &cfg).unwrap();
        // The right-hand side is identically 1, so RK4 is exact.
        close(traj.points.last().unwrap()[0], 1.0, 1e-12);
        for (n, t) in traj.times.iter().enumerate() {
            close(traj.points[n][0], *t, 1e-12);
        }
    }

    #[test]
    fn bernoulli_theta_flow_exits_at_saturation() {
        let cfg = FlowConfig::default();
        let traj = integrate_theta_flow(&bernoulli(), &Point::theta(vec![0.0]), &cfg).unwrap();
        assert_eq!(traj.terminated, Termination::DomainExit);
        let t_exit = *traj.times.last().unwrap();
        close(t_exit, 2.0_f64.ln(), 1e-4);
        // Every stored sample respects the margin-shrunk domain.
        for p in &traj.points {
            assert!(bernoulli().contains(p, 0.0));
        }
        let prefix = traj.uniform_prefix();
        assert!(prefix.len() < traj.len());
        assert!(prefix.uniform_step().is_some());
    }

    #[test]
    fn quadratic_eta_flow_decays() {
        let cfg = FlowConfig::default();
        let traj = integrate_eta_flow(&quadratic(2), &Point::eta(vec![1.0, 0.5]), &cfg).unwrap();
        assert_eq!(traj.terminated, Termination::Completed);
        let last = traj.points.last().unwrap();
        close(last[0], (-1.0_f64).exp(), 1e-10);
        close(last[1], 0.5 * (-1.0_f64).exp(), 1e-10);
    }

    #[test]
    fn exp1d_eta_flow_primal_image_decays() {
        let cfg = FlowConfig::default();
        // Unit initial dual point is the fixed point of the dual flow.
        let traj = integrate_eta_flow(&exp1d(), &Point::eta(vec![1.0]), &cfg).unwrap();
        for (n, p) in traj.points.iter().enumerate() {
            close(p[0], 1.0, 1e-13);
            close(traj.velocities[n][0], 0.0, 1e-13);
        }
        let thetas = dual_image_series(&exp1d(), &traj).unwrap();
        for th in &thetas {
            close(th[0], 0.0, 1e-12);
        }
        // A non-fixed start decays exponentially in the primal image.
        let traj = integrate_eta_flow(&exp1d(), &Point::eta(vec![2.0]), &cfg).unwrap();
        let thetas = dual_image_series(&exp1d(), &traj).unwrap();
        let theta0 = 2.0_f64.ln();
        for (n, th) in thetas.iter().enumerate() {
            close(th[0], theta0 * (-traj.times[n]).exp(), 1e-8);
        }
    }

    #[test]
    fn theta_and_eta_flows_are_distinct_processes() {
        let cfg = FlowConfig {
            t_end: 0.5,
            ..FlowConfig::default()
        };
        let model = exp1d();
        let theta0 = 0.5;
        let fwd = integrate_theta_flow(&model, &Point::theta(vec![theta0]), &cfg).unwrap();
        let q0 = model.gradient(&Point::theta(vec![theta0])).unwrap();
        let bwd = integrate_eta_flow(&model, &Point::eta(vec![q0[0]]), &cfg).unwrap();
        let theta_fwd = fwd.points.last().unwrap()[0];
        let theta_bwd = dual_image_series(&model, &bwd).unwrap().last().unwrap()[0];
        assert!(
            (theta_fwd - theta_bwd).abs() > 1e-2,
            "flows coincide: {theta_fwd} vs {theta_bwd}"
        );
    }

    #[test]
    fn adaptive_method_matches_closed_form() {
        let cfg = FlowConfig {
            method: Method::Dp45,
            ..FlowConfig::default()
        };
        let traj = integrate_eta_flow(&exp1d(), &Point::eta(vec![2.0]), &cfg).unwrap();
        assert_eq!(traj.terminated, Termination::Completed);
        let t_last = *traj.times.last().unwrap();
        close(t_last, 1.0, 1e-9);
        let theta_last = dual_image_series(&exp1d(), &traj).unwrap().last().unwrap()[0];
        close(theta_last, 2.0_f64.ln() * (-1.0_f64).exp(), 1e-8);
    }

    #[test]
    fn closed_form_values() {
        let q = closed_form_dual_flow(&DVector::from_vec(vec![0.5]), 2.0_f64.ln(), Sign::Plus);
        close(q[0], 1.0, 1e-15);
        let q = closed_form_dual_flow(&DVector::from_vec(vec![2.0, 4.0]), 1.0, Sign::Plus);
        close(q[0], 2.0 * 1.0_f64.exp(), 1e-15);
        close(q[1], 4.0 * 1.0_f64.exp(), 1e-15);
        let q = closed_form_dual_flow(&DVector::from_vec(vec![1.0]), 1.0, Sign::Minus);
        close(q[0], (-1.0_f64).exp(), 1e-15);
    }

    #[test]
    fn hamiltonian_values_and_errors() {
        close(
            hamiltonian(&DVector::from_vec(vec![2.0, 4.0])).unwrap(),
            2.0,
            0.0,
        );
        close(
            hamiltonian(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap(),
            2.0 + 4.0 / 3.0,
            1e-15,
        );
        assert!(matches!(
            hamiltonian(&DVector::from_vec(vec![0.0, 1.0])),
            Err(Error::DivisionByZero { index: 0 })
        ));
        assert!(matches!(
            hamiltonian(&DVector::from_vec(vec![1.0, 2.0, 3.0])),
            Err(Error::OddDimension { dim: 3 })
        ));
        // Scale invariance: H(e^s q) = H(q) to round-off.
        let q = DVector::from_vec(vec![1.3, -0.4, 2.2, 0.9]);
        let h0 = hamiltonian(&q).unwrap();
        let h1 = hamiltonian(&(q * 1.7_f64.exp())).unwrap();
        close(h1, h0, 1e-14);
    }

    #[test]
    fn rate_residuals_vanish_along_flows() {
        let cfg = FlowConfig::default();
        let traj =
            integrate_theta_flow(&quadratic(2), &Point::theta(vec![1.0, 0.5]), &cfg).unwrap();
        let res = potential_rate_residual(&quadratic(2), &traj).unwrap();
        assert!(res.iter().all(|r| *r <= 1e-12));

        let g2 = gaussian2();
        let q0 = g2.gradient(&Point::theta(vec![1.0, -2.0])).unwrap();
        let traj = integrate_eta_flow(&g2, &Point::eta(q0.as_slice().to_vec()), &cfg).unwrap();
        let res = entropy_rate_residual(&g2, &traj).unwrap();
        assert!(res.iter().all(|r| *r <= 1e-6));
    }

    #[test]
    fn csv_and_summary_formats() {
        let cfg = FlowConfig {
            t_end: 0.002,
            ..FlowConfig::default()
        };
        let traj =
            integrate_theta_flow(&quadratic(2), &Point::theta(vec![1.0, 0.0]), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,theta0,theta1,dtheta0,dtheta1");
        assert_eq!(lines.next().unwrap(), "0,1,0,1,0");

        let summary = flow_summary(&quadratic(2), &traj);
        assert!(summary.contains("chart: theta"));
        assert!(summary.contains("terminated: completed"));
        assert!(summary.contains("hamiltonian_drift:"));

        let traj = integrate_theta_flow(
            &bernoulli(),
            &Point::theta(vec![0.0]),
            &FlowConfig::default(),
        )
        .unwrap();
        let summary = flow_summary(&bernoulli(), &traj);
        assert!(summary.contains("terminated: domain_exit"));
        assert!(summary.contains("n/a (odd dimension)"));
    }

    #[test]
    fn initial_state_validation() {
        assert!(matches!(
            integrate_theta_flow(
                &gaussian2(),
                &Point::theta(vec![0.0, 0.5]),
                &FlowConfig::default()
            ),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            integrate_theta_flow(&exp1d(), &Point::eta(vec![1.0]), &FlowConfig::default()),
            Err(Error::ChartMismatch { .. })
        ));
        assert!(matches!(
            integrate_eta_flow(&exp1d(), &Point::eta(vec![-0.5]), &FlowConfig::default()),
            Err(Error::Domain(_))
        ));
        let bad = FlowConfig {
            step: 0.0,
            ..FlowConfig::default()
        };
        assert!(matches!(
            integrate_theta_flow(&exp1d(), &Point::theta(vec![0.0]), &bad),
            Err(Error::Integration(_))
        ));
    }
}
