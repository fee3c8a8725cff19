//! Pre-geodesic diagnostics along sampled trajectories.
//!
//! The central claim under test: primal gradient-flow trajectories satisfy
//!
//! ```text
//! θ̈ + Γ_mix(θ̇, θ̇) = θ̇                      (mixture connection)
//! θ̈ + Γ̃(θ̇, θ̇)   = λ(t) θ̇                  (induced Weyl connection)
//! ```
//!
//! with λ = (du²/dt - u² ω·θ̇) / (2u²) and u² = g(θ̇, θ̇). Both residuals are
//! evaluated pointwise from stored samples: accelerations come from a
//! five-point stencil applied to the stored velocities, so two samples are
//! dropped at each end of the series. The same trimming is applied to du²/dt
//! so the series line up.
//!
//! Everything here demands uniformly spaced samples and reports
//! [`Error::IrregularSpacing`] otherwise; trajectories that bisected their
//! final steps against a domain wall should be cut with
//! [`Trajectory::uniform_prefix`] first.

use std::io::{self, Write};

use nalgebra::DVector;

use crate::connections::{self, WeylStructure};
use crate::error::{Error, Result};
use crate::flows::{integrate_theta_flow, FlowConfig, Method, Trajectory};
use crate::potentials::{Chart, Point, PotentialModel};

/// A scalar series sampled along a trajectory.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ResidualSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest magnitude in the series, 0 when empty.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Smallest value in the series, +inf when empty.
    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Two-column CSV: `t,residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,residual")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

fn check_uniform(times: &[f64]) -> Result<f64> {
    if times.len() < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            got: times.len(),
        });
    }
    let h = times[1] - times[0];
    if h.is_nan() || h <= 0.0 {
        return Err(Error::IrregularSpacing { index: 0 });
    }
    for i in 1..times.len() - 1 {
        if ((times[i + 1] - times[i]) - h).abs() > 1e-9 * h {
            return Err(Error::IrregularSpacing { index: i });
        }
    }
    Ok(h)
}

fn require_theta(traj: &Trajectory) -> Result<()> {
    if traj.chart != Chart::Theta {
        return Err(Error::ChartMismatch {
            expected: Chart::Theta,
            got: traj.chart,
        });
    }
    Ok(())
}

/// Five-point central derivative of a scalar series on a uniform grid; the
/// two samples at each end are dropped.
pub fn series_derivative_five_point(times: &[f64], values: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if times.len() != values.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: values.len(),
        });
    }
    let h = check_uniform(times)?;
    let n = times.len();
    let mut out_t = Vec::with_capacity(n - 4);
    let mut out_v = Vec::with_capacity(n - 4);
    for i in 2..n - 2 {
        out_t.push(times[i]);
        out_v.push(
            (-values[i + 2] + 8.0 * values[i + 1] - 8.0 * values[i - 1] + values[i - 2])
                / (12.0 * h),
        );
    }
    Ok((out_t, out_v))
}

/// Accelerations along a trajectory: the five-point derivative of the stored
/// velocities, trimmed by two samples at each end.
pub fn second_derivative_series(traj: &Trajectory) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let h = check_uniform(&traj.times)?;
    let n = traj.len();
    let v = &traj.velocities;
    let mut out_t = Vec::with_capacity(n - 4);
    let mut out_a = Vec::with_capacity(n - 4);
    for i in 2..n - 2 {
        out_t.push(traj.times[i]);
        out_a.push((-&v[i + 2] + 8.0 * &v[i + 1] - 8.0 * &v[i - 1] + &v[i - 2]) / (12.0 * h));
    }
    Ok((out_t, out_a))
}

/// Squared metric speed u² = g(θ̇, θ̇) at every stored sample.
pub fn u_squared_series(model: &PotentialModel, traj: &Trajectory) -> Result<ResidualSeries> {
    require_theta(traj)?;
    let mut values = Vec::with_capacity(traj.len());
    for (x, v) in traj.points.iter().zip(&traj.velocities) {
        let (g, _) = model.metric_factor_raw(x)?;
        values.push((&g * v).dot(v));
    }
    Ok(ResidualSeries {
        times: traj.times.clone(),
        values,
    })
}

/// Max-norm residual of the mixture pre-geodesic equation at each interior
/// sample.
pub fn pregeodesic_residual(model: &PotentialModel, traj: &Trajectory) -> Result<ResidualSeries> {
    require_theta(traj)?;
    let (times, accels) = second_derivative_series(traj)?;
    let mut values = Vec::with_capacity(times.len());
    for (m, acc) in accels.iter().enumerate() {
        let n = m + 2;
        let p = Point::from_vector(Chart::Theta, traj.points[n].clone());
        let gamma = connections::mixture_connection(model, &p)?;
        let v = &traj.velocities[n];
        let r = acc + gamma.contract_last_two(v, v) - v;
        values.push(r.amax());
    }
    Ok(ResidualSeries { times, values })
}

/// Max-norm residual of the Weyl pre-geodesic equation, with the tangential
/// factor λ reconstructed from the stored samples.
pub fn weyl_pregeodesic_residual(
    model: &PotentialModel,
    traj: &Trajectory,
) -> Result<ResidualSeries> {
    require_theta(traj)?;
    let (times, accels) = second_derivative_series(traj)?;
    let u2 = u_squared_series(model, traj)?;
    let (_, du2) = series_derivative_five_point(&u2.times, &u2.values)?;
    let ws = WeylStructure::induced(model);
    let mut values = Vec::with_capacity(times.len());
    for (m, acc) in accels.iter().enumerate() {
        let n = m + 2;
        let x = &traj.points[n];
        let v = &traj.velocities[n];
        let gamma = ws.connection(x)?;
        let omega = ws.covector.value(x)?;
        let usq = u2.values[n];
        let lambda = (du2[m] - usq * omega.dot(v)) / (2.0 * usq);
        let r = acc + gamma.contract_last_two(v, v) - lambda * v;
        values.push(r.amax());
    }
    Ok(ResidualSeries { times, values })
}

/// Signed proper-time defect du²/dt - u² ω·θ̇ at each interior sample. Along
/// primal gradient flows this equals 2 du²/dt, so it stays strictly positive
/// while the flow expands.
pub fn proper_time_defect(model: &PotentialModel, traj: &Trajectory) -> Result<ResidualSeries> {
    require_theta(traj)?;
    let u2 = u_squared_series(model, traj)?;
    let (times, du2) = series_derivative_five_point(&u2.times, &u2.values)?;
    let covector = connections::CovectorField::induced(model);
    let mut values = Vec::with_capacity(times.len());
    for (m, d) in du2.iter().enumerate() {
        let n = m + 2;
        let omega = covector.value(&traj.points[n])?;
        values.push(d - u2.values[n] * omega.dot(&traj.velocities[n]));
    }
    Ok(ResidualSeries { times, values })
}

/// Result of a step-refinement study of the mixture pre-geodesic residual.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub steps: Vec<f64>,
    pub max_residuals: Vec<f64>,
    /// Least-squares slope of ln(residual) against ln(step).
    pub slope: f64,
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - xbar) * (y - ybar);
        den += (x - xbar) * (x - xbar);
    }
    num / den
}

/// Re-run the primal flow at several fixed steps, measure the largest
/// mixture pre-geodesic residual inside a fractional time window, and fit
/// the convergence order. Runs are independent, so they execute on separate
/// threads.
pub fn pregeodesic_convergence_study(
    model: &PotentialModel,
    p0: &Point,
    base: &FlowConfig,
    steps: &[f64],
    window: (f64, f64),
) -> Result<ConvergenceStudy> {
    if steps.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: steps.len(),
        });
    }
    if !(0.0..1.0).contains(&window.0) || !(window.0..=1.0).contains(&window.1) {
        return Err(Error::Domain(format!(
            "study window ({}, {}) is not a sub-interval of (0, 1)",
            window.0, window.1
        )));
    }
    let lo = window.0 * base.t_end;
    let hi = window.1 * base.t_end;
    let results: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = steps
            .iter()
            .map(|&step| {
                scope.spawn(move || -> Result<f64> {
                    let cfg = FlowConfig {
                        step,
                        method: Method::Rk4,
                        ..*base
                    };
                    let traj = integrate_theta_flow(model, p0, &cfg)?;
                    let series = pregeodesic_residual(model, &traj.uniform_prefix())?;
                    let mut max = f64::NEG_INFINITY;
                    let mut seen = 0usize;
                    for (t, v) in series.times.iter().zip(&series.values) {
                        if (lo..=hi).contains(t) {
                            max = max.max(v.abs());
                            seen += 1;
                        }
                    }
                    if seen == 0 {
                        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
                    }
                    Ok(max)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Integration("study worker panicked".into())))
            })
            .collect()
    });
    let max_residuals = results.into_iter().collect::<Result<Vec<f64>>>()?;
    if let Some(&r) = max_residuals.iter().find(|r| **r <= 0.0) {
        return Err(Error::Domain(format!(
            "residual {r} too small for a log-log fit; the series sits at round-off"
        )));
    }
    let log_h: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let log_r: Vec<f64> = max_residuals.iter().map(|r| r.ln()).collect();
    let slope = regression_slope(&log_h, &log_r);
    Ok(ConvergenceStudy {
        steps: steps.to_vec(),
        max_residuals,
        slope,
    })
}
