//! Discrete functional-analytic constants, contraction bounds, rate fits and
//! the audit of the uniform a-priori bounds used in the double limit.

use std::sync::Arc;

use crate::control::{ControlProblem, FixedPointOptions};
use crate::error::{Error, Result};
use crate::fem::{FeFunction, NormKind, P1Space};
use crate::solvers::{ProblemSpec, Variant};
use crate::sparse::{dot, pcg, PcgOptions, SparseSymMatrix};

/// Which coercivity constant to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coercivity {
    /// `a(v, v) ≥ λ‖v‖²_V` on V₀h.
    Dirichlet,
    /// `a₁(v, v) ≥ λ₁‖v‖²_V` on V_h, with `a₁ = a + ∫_Γ1 γu γv`.
    RobinUnit,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Relative accuracy of the returned eigenvalue.
    pub tol: f64,
    pub max_iter: usize,
    pub linear_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 5000, linear_tol: 1e-13 }
    }
}

/// An extreme generalized eigenpair, with the vector given at every vertex
/// and normalized to unit V-norm.
#[derive(Debug, Clone)]
pub struct EigenEstimate {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
}

fn v_matrix(space: &P1Space) -> SparseSymMatrix {
    space.mass().add_scaled(space.stiffness(), 1.0)
}

/// Rayleigh-quotient iteration driver shared by the inverse and direct power
/// methods: `step` maps the normalized iterate to the next unnormalized one.
fn power_iteration(
    start: Vec<f64>,
    norm_matrix: &SparseSymMatrix,
    numerator: &SparseSymMatrix,
    opts: EigenOptions,
    mut step: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(f64, Vec<f64>, usize)> {
    let normalize = |v: Vec<f64>| -> Vec<f64> {
        let s = norm_matrix.quad_form(&v).sqrt();
        v.into_iter().map(|x| x / s).collect()
    };
    let mut v = normalize(start);
    let mut value = numerator.quad_form(&v);
    // Rayleigh quotients converge quadratically, so a small change certifies
    // the requested accuracy with a wide margin.
    let stop = opts.tol * 1e-4;
    let mut change = f64::INFINITY;
    for k in 1..=opts.max_iter {
        v = normalize(step(&v)?);
        let next = numerator.quad_form(&v);
        change = (next - value).abs() / next.abs().max(f64::MIN_POSITIVE);
        value = next;
        if change <= stop {
            return Ok((value, v, k));
        }
    }
    Err(Error::Eigen { iterations: opts.max_iter, last_change: change })
}

/// Smallest generalized eigenvalue of the energy form against `(M + A)`,
/// by inverse power iteration.
pub fn estimate_lambda(space: &P1Space, which: Coercivity, opts: EigenOptions) -> Result<EigenEstimate> {
    let n = space.dim();
    let pcg_opts = PcgOptions { tol: opts.linear_tol, ..Default::default() };
    let (energy, nodes): (SparseSymMatrix, Vec<usize>) = match which {
        Coercivity::Dirichlet => (space.stiffness().clone(), space.free_nodes().to_vec()),
        Coercivity::RobinUnit => (space.stiffness().add_scaled(space.gamma1_mass(), 1.0), (0..n).collect()),
    };
    let a = energy.restrict(&nodes);
    let b = v_matrix(space).restrict(&nodes);
    let start = vec![1.0; nodes.len()];
    let mut guess: Option<Vec<f64>> = None;
    let (value, v, iterations) = power_iteration(start, &b, &a, opts, |v| {
        let (x, _) = pcg(&a, &b.mul_vec(v), guess.as_deref(), pcg_opts)?;
        guess = Some(x.clone());
        Ok(x)
    })?;
    let mut vector = vec![0.0; n];
    for (&i, vi) in nodes.iter().zip(v) {
        vector[i] = vi;
    }
    Ok(EigenEstimate { value, vector, iterations })
}

/// Norm of the discrete trace `γ: (V_h, ‖·‖_V) → L²(Γ)`: the square root of
/// the largest generalized eigenvalue of the boundary mass against `(M + A)`.
pub fn estimate_trace_norm(space: &P1Space, opts: EigenOptions) -> Result<EigenEstimate> {
    let pcg_opts = PcgOptions { tol: opts.linear_tol, ..Default::default() };
    let b = v_matrix(space);
    let boundary = space.boundary_mass();
    let mut guess: Option<Vec<f64>> = None;
    let (value, vector, iterations) = power_iteration(vec![1.0; space.dim()], &b, boundary, opts, |v| {
        let (x, _) = pcg(&b, &boundary.mul_vec(v), guess.as_deref(), pcg_opts)?;
        guess = Some(x.clone());
        Ok(x)
    })?;
    Ok(EigenEstimate { value: value.sqrt(), vector, iterations })
}

/// The mesh-dependent constants that enter every bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteConstants {
    pub h: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub gamma_norm: f64,
}

impl DiscreteConstants {
    pub fn estimate(space: &P1Space, opts: EigenOptions) -> Result<Self> {
        Ok(Self {
            h: space.mesh().h(),
            lambda: estimate_lambda(space, Coercivity::Dirichlet, opts)?.value,
            lambda1: estimate_lambda(space, Coercivity::RobinUnit, opts)?.value,
            gamma_norm: estimate_trace_norm(space, opts)?.value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsReport {
    pub h: f64,
    pub alpha: f64,
    pub m1: f64,
    pub m2: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda_alpha: f64,
    pub gamma_norm: f64,
    pub c0: f64,
    pub c0_alpha: f64,
    /// `min{M1, M2}`.
    pub m: f64,
    /// `max{M1, M2}`.
    pub big_m: f64,
}

/// Lipschitz bound of the fixed-point map for coercivity constant `lambda`.
pub fn contraction_bound(lambda: f64, gamma_norm: f64, m1: f64, m2: f64) -> f64 {
    std::f64::consts::SQRT_2 / (lambda * lambda)
        * (1.0 / (m1 * m1) + gamma_norm * gamma_norm / (m2 * m2)).sqrt()
        * (1.0 + gamma_norm)
}

pub fn contraction_constants(c: &DiscreteConstants, m1: f64, m2: f64, alpha: f64) -> ConstantsReport {
    let lambda_alpha = c.lambda1 * alpha.min(1.0);
    ConstantsReport {
        h: c.h,
        alpha,
        m1,
        m2,
        lambda: c.lambda,
        lambda1: c.lambda1,
        lambda_alpha,
        gamma_norm: c.gamma_norm,
        c0: contraction_bound(c.lambda, c.gamma_norm, m1, m2),
        c0_alpha: contraction_bound(lambda_alpha, c.gamma_norm, m1, m2),
        m: m1.min(m2),
        big_m: m1.max(m2),
    }
}

/// Least-squares line through `(log h, log error)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(Error::Validation(format!("rate fit needs at least 2 points, got {}", points.len())));
    }
    if let Some(&(h, e)) = points.iter().find(|&&(h, e)| !(h > 0.0 && e > 0.0 && h.is_finite() && e.is_finite())) {
        return Err(Error::Validation(format!("rate fit needs positive values, got ({h}, {e})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("rate fit needs at least two distinct mesh sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RateFit { slope, intercept, r_squared, points: points.to_vec() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRecord {
    pub name: &'static str,
    /// `None` for bounds on the Dirichlet problem.
    pub alpha: Option<f64>,
    pub measured: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundAudit {
    pub h: f64,
    pub records: Vec<BoundRecord>,
}

impl BoundAudit {
    pub fn all_satisfied(&self) -> bool {
        self.records.iter().all(|r| r.satisfied)
    }

    pub fn get(&self, name: &str, alpha: Option<f64>) -> Option<&BoundRecord> {
        self.records.iter().find(|r| r.name == name && r.alpha == alpha)
    }
}

/// Relative tolerance for the one bound that holds with equality.
const EQUALITY_TOL: f64 = 1e-12;

/// Evaluates both sides of the twelve uniform bounds. Bounds on the Robin
/// problem are reported once per `alpha`; each `alpha` must be at least 1.
pub fn audit_uniform_bounds(
    space: &Arc<P1Space>,
    spec: &ProblemSpec,
    alphas: &[f64],
    constants: &DiscreteConstants,
    fixed_point: FixedPointOptions,
) -> Result<BoundAudit> {
    if let Some(a) = alphas.iter().find(|&&a| !(a >= 1.0 && a.is_finite())) {
        return Err(Error::Validation(format!("bound audit requires alpha >= 1, got {a}")));
    }
    let DiscreteConstants { lambda, lambda1, gamma_norm, .. } = *constants;
    let (b, m1, m2) = (spec.b, spec.m1, spec.m2);
    let zd = space.norm(&spec.z_d, NormKind::H)?;
    let omega = space.mesh().area();
    let trace_factor = std::f64::consts::SQRT_2 * (1.0 + gamma_norm);
    let inv_sqrt_m = 1.0 / m1.min(m2).sqrt();

    let c1 = b * omega.sqrt();
    let c2 = (1.0 + 1.0 / lambda1) * c1;
    let c3 = c1 * c1 / lambda1;
    let c4 = inv_sqrt_m * (c2 + zd);
    let c5 = c2 + 2.0 * zd;
    let c6 = inv_sqrt_m * (c1 + zd);
    let c7 = trace_factor * c6 + c1;
    let c8 = trace_factor * c4 + (1.0 + 1.0 / lambda1) * c7;
    let c9 = (trace_factor * c4 + c7).powi(2) / lambda1;
    let c10 = (c7 + zd) / lambda;
    let c11 = (c8 + zd) / lambda1 + (1.0 + 1.0 / lambda1) * c10;
    let c12 = (c5 + zd + c10).powi(2) / lambda1;

    let v_norm = |u: &FeFunction| space.norm(u, NormKind::V);
    // (α − 1) ∫_Γ1 (w − b)²
    let gamma1_excess = |w: &FeFunction, alpha: f64| -> Result<f64> {
        let shifted: Vec<f64> = w.values().iter().map(|x| x - b).collect();
        Ok((alpha - 1.0) * space.gamma1_mass().quad_form(&shifted))
    };
    let record = |name, alpha, measured: f64, bound: f64| BoundRecord {
        name,
        alpha,
        measured,
        bound,
        satisfied: measured <= bound,
    };

    let mut records = Vec::new();
    let zero = crate::control::zero_control(space);
    let dirichlet = ControlProblem::new(space.clone(), spec.with_variant(Variant::Dirichlet))?;
    let u00 = dirichlet.state(&zero)?;
    let u00_norm = v_norm(&u00)?;
    records.push(BoundRecord {
        name: "c1",
        alpha: None,
        measured: u00_norm,
        bound: c1,
        satisfied: (u00_norm - c1).abs() <= EQUALITY_TOL * c1,
    });
    let opt = dirichlet.solve_fixed_point(fixed_point)?;
    records.push(record("c6", None, space.control_norm(&opt.control)?, c6));
    records.push(record("c7", None, v_norm(&opt.state)?, c7));
    records.push(record("c10", None, v_norm(&opt.adjoint)?, c10));

    for &alpha in alphas {
        let robin = ControlProblem::new(space.clone(), spec.with_variant(Variant::Robin(alpha)))?;
        let ua00 = robin.state(&zero)?;
        let opt = robin.solve_fixed_point(fixed_point)?;
        let a = Some(alpha);
        records.push(record("c2", a, v_norm(&ua00)?, c2));
        records.push(record("c3", a, gamma1_excess(&ua00, alpha)?, c3));
        records.push(record("c4", a, space.control_norm(&opt.control)?, c4));
        records.push(record("c5", a, space.norm(&opt.state, NormKind::H)?, c5));
        records.push(record("c8", a, v_norm(&opt.state)?, c8));
        records.push(record("c9", a, gamma1_excess(&opt.state, alpha)?, c9));
        records.push(record("c11", a, v_norm(&opt.adjoint)?, c11));
        records.push(record("c12", a, gamma1_excess(&opt.adjoint, alpha)?, c12));
    }
    let order = |name: &str| name[1..].parse::<u32>().unwrap_or(u32::MAX);
    records.sort_by(|x, y| {
        order(x.name)
            .cmp(&order(y.name))
            .then(x.alpha.unwrap_or(f64::INFINITY).total_cmp(&y.alpha.unwrap_or(f64::INFINITY)))
    });
    Ok(BoundAudit { h: space.mesh().h(), records })
}

/// Rayleigh quotient `form(v, v) / ‖v‖²_V` of a nodal vector.
pub fn rayleigh_quotient(space: &P1Space, energy: &SparseSymMatrix, v: &[f64]) -> f64 {
    energy.quad_form(v) / dot(v, &v_matrix(space).mul_vec(v))
}
