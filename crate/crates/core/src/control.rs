//! Discrete optimal control: the cost functional, its gradient, the
//! fixed-point map `W(g, q) = (−p/M1, γ(p)/M2)` and two independent ways to
//! find the optimum (Banach iteration on `W`, and conjugate gradients on the
//! reduced optimality system).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{same_mesh, BoundaryTrace, ControlPair, FeFunction, NormKind, P1Space, Space};
use crate::solvers::{EllipticOperator, ProblemSpec, Variant};
use crate::sparse::{pcg_operator, LinearSolveReport};

/// Largest reduced system the KKT oracle accepts.
pub const KKT_UNKNOWN_LIMIT: usize = 20_000;

/// Control, state and adjoint at an optimum, with solver diagnostics.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub control: ControlPair,
    pub state: FeFunction,
    pub adjoint: FeFunction,
    pub cost: f64,
    pub iterations: usize,
    /// H×Q norm of the last fixed-point step (zero for the KKT oracle).
    pub final_increment: f64,
    /// H×Q norm of the gradient, recomputed from scratch at the returned control.
    pub gradient_residual: f64,
    /// Ratios of consecutive fixed-point increments.
    pub increment_ratios: Vec<f64>,
    /// Step length `ω` used by the iteration (1 for the plain map).
    pub relaxation: f64,
    pub warning: Option<String>,
}

impl Optimum {
    /// Largest observed ratio of consecutive increments.
    pub fn max_increment_ratio(&self) -> Option<f64> {
        self.increment_ratios.iter().copied().reduce(f64::max)
    }
}

/// Step rule of the fixed-point iteration `c ← c + ω (W(c) − c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Relaxation {
    /// Plain Banach iteration, `ω = 1`.
    None,
    Fixed(f64),
    /// `ω = 2 / (2 + ρ)` with `ρ` a power-iteration estimate of the spectral
    /// radius of the linear part of `W`. Converges whenever `W` has a fixed
    /// point, since that linear part is negative semidefinite.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Stop once `‖c_{k+1} − c_k‖_{H×Q} ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Acceptable gradient residual relative to `1 + ‖c‖_{H×Q}`.
    pub gradient_tol: f64,
    /// A Lipschitz bound for the map, when known. A bound `≥ 1` does not
    /// stop the iteration but is reported as a warning.
    pub contraction_bound: Option<f64>,
    pub relaxation: Relaxation,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 1000, gradient_tol: 1e-8, contraction_bound: None, relaxation: Relaxation::None }
    }
}

/// One discrete control problem: `(P_h)` for [`Variant::Dirichlet`] or
/// `(P_hα)` for [`Variant::Robin`].
#[derive(Debug)]
pub struct ControlProblem {
    space: Arc<P1Space>,
    spec: ProblemSpec,
    op: EllipticOperator,
}

impl ControlProblem {
    pub fn new(space: Arc<P1Space>, spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        same_mesh(spec.z_d.mesh(), space.mesh())?;
        let op = EllipticOperator::new(space.clone(), spec.variant())?;
        Ok(Self { space, spec, op })
    }

    pub fn with_linear_tol(mut self, tol: f64) -> Self {
        self.op = self.op.with_linear_tol(tol);
        self
    }

    pub fn space(&self) -> &Arc<P1Space> {
        &self.space
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant()
    }

    pub fn operator(&self) -> &EllipticOperator {
        &self.op
    }

    pub fn state(&self, ctrl: &ControlPair) -> Result<FeFunction> {
        self.op.state(self.spec.b, ctrl)
    }

    pub fn adjoint(&self, u: &FeFunction) -> Result<FeFunction> {
        self.op.adjoint(u, &self.spec.z_d)
    }

    fn adjoint_with_guess(&self, u: &FeFunction, guess: Option<&FeFunction>) -> Result<FeFunction> {
        let source = self.space.mass().mul_vec(&u.add_scaled(&self.spec.z_d, -1.0)?.into_values());
        self.op.adjoint_from_source(&source, guess)
    }

    /// `½‖u − z_d‖²_H + (M1/2)‖g‖²_H + (M2/2)‖q‖²_Q` with the state `u` already solved.
    pub fn cost_with_state(&self, ctrl: &ControlPair, u: &FeFunction) -> Result<f64> {
        let g = self.space.norm(&ctrl.g, NormKind::H)?;
        let q = self.space.norm(&ctrl.q, NormKind::Q)?;
        self.cost_from_parts(u, g * g, q * q)
    }

    /// Cost from a solved state and the squared control norms, which may come
    /// from a different (finer) representation of the control.
    pub fn cost_from_parts(&self, u: &FeFunction, g_norm_sq: f64, q_norm_sq: f64) -> Result<f64> {
        let misfit = self.space.norm(&u.add_scaled(&self.spec.z_d, -1.0)?, NormKind::H)?;
        Ok(0.5 * misfit * misfit + 0.5 * self.spec.m1 * g_norm_sq + 0.5 * self.spec.m2 * q_norm_sq)
    }

    pub fn cost(&self, ctrl: &ControlPair) -> Result<f64> {
        let u = self.state(ctrl)?;
        self.cost_with_state(ctrl, &u)
    }

    /// Cost of a control given only through its load vector and norms.
    pub fn cost_of_load(&self, load: &[f64], g_norm_sq: f64, q_norm_sq: f64) -> Result<f64> {
        let u = self.op.state_from_load(self.spec.b, load, None)?;
        self.cost_from_parts(&u, g_norm_sq, q_norm_sq)
    }

    fn gradient_from_adjoint(&self, ctrl: &ControlPair, p: &FeFunction) -> Result<ControlPair> {
        let g = p.add_scaled(&ctrl.g, self.spec.m1)?;
        let q = ctrl.q.scaled(self.spec.m2).add_scaled(&self.space.trace(p)?, -1.0)?;
        ControlPair::new(g, q)
    }

    /// Riesz representative of the Gâteaux derivative:
    /// `(p + M1 g, M2 q − γ(p))`.
    pub fn gradient(&self, ctrl: &ControlPair) -> Result<ControlPair> {
        let u = self.state(ctrl)?;
        let p = self.adjoint(&u)?;
        self.gradient_from_adjoint(ctrl, &p)
    }

    fn map_from_adjoint(&self, p: &FeFunction) -> Result<ControlPair> {
        ControlPair::new(p.scaled(-1.0 / self.spec.m1), self.space.trace(p)?.scaled(1.0 / self.spec.m2))
    }

    /// `W(g, q) = (−p/M1, γ(p)/M2)` with `p` the adjoint state at `(g, q)`.
    pub fn fixed_point_map(&self, ctrl: &ControlPair) -> Result<ControlPair> {
        let u = self.state(ctrl)?;
        let p = self.adjoint(&u)?;
        self.map_from_adjoint(&p)
    }

    /// Linear part of `W`: the map for `b = 0` and `z_d = 0`.
    fn linear_map(&self, c: &ControlPair) -> Result<ControlPair> {
        let du = self.op.state_from_load(0.0, &self.space.control_load(c)?, None)?;
        let dp = self.op.adjoint_from_source(&self.space.mass().mul_vec(du.values()), None)?;
        self.map_from_adjoint(&dp)
    }

    /// Power-iteration estimate of the spectral radius of the linear part of
    /// `W`, which is its Lipschitz constant when `M1 = M2`.
    pub fn map_spectral_radius(&self, max_iter: usize, rel_tol: f64) -> Result<f64> {
        let g = FeFunction::new(self.space.mesh().clone(), vec![1.0; self.space.dim()], Space::Vh)?;
        let mut c = ControlPair::new(g.clone(), self.space.trace(&g)?)?;
        let mut rho = 0.0;
        for _ in 0..max_iter.max(1) {
            let norm = self.space.control_norm(&c)?;
            let next = self.linear_map(&c.scaled(1.0 / norm))?;
            let estimate = self.space.control_norm(&next)?;
            let done = (estimate - rho).abs() <= rel_tol * estimate;
            rho = estimate;
            c = next;
            if done || rho == 0.0 {
                break;
            }
        }
        Ok(rho)
    }

    fn step_length(&self, relaxation: Relaxation) -> Result<f64> {
        match relaxation {
            Relaxation::None => Ok(1.0),
            Relaxation::Fixed(w) if w > 0.0 && w <= 1.0 => Ok(w),
            Relaxation::Fixed(w) => Err(Error::Validation(format!("relaxation must lie in (0, 1], got {w}"))),
            Relaxation::Auto => {
                // Power iteration approaches ρ from below; a small margin keeps ω safe.
                let rho = 1.05 * self.map_spectral_radius(50, 1e-3)?;
                Ok((2.0 / (2.0 + rho)).min(1.0))
            }
        }
    }

    /// Banach iteration `c_{k+1} = W(c_k)` from `c_0 = 0`, optionally relaxed.
    pub fn solve_fixed_point(&self, opts: FixedPointOptions) -> Result<Optimum> {
        let omega = self.step_length(opts.relaxation)?;
        let mut ctrl = ControlPair::zeros(&self.space);
        let mut state: Option<FeFunction> = None;
        let mut adjoint: Option<FeFunction> = None;
        let mut ratios = Vec::new();
        let mut last_increment = f64::NAN;
        for k in 1..=opts.max_iter {
            let load = self.space.control_load(&ctrl)?;
            let u = self.op.state_from_load(self.spec.b, &load, state.as_ref())?;
            let p = self.adjoint_with_guess(&u, adjoint.as_ref())?;
            let mapped = self.map_from_adjoint(&p)?;
            let next = if omega == 1.0 { mapped } else { ctrl.add_scaled(&mapped.add_scaled(&ctrl, -1.0)?.scaled(omega), 1.0)? };
            let increment = self.space.control_norm(&next.add_scaled(&ctrl, -1.0)?)?;
            if k > 1 && last_increment > 0.0 {
                ratios.push(increment / last_increment);
            }
            if !increment.is_finite() {
                return Err(Error::FixedPoint {
                    iterations: k,
                    last_increment: increment,
                    last_ratio: ratios.last().copied().unwrap_or(f64::NAN),
                    last_iterate: Box::new(ctrl),
                });
            }
            ctrl = next;
            state = Some(u);
            adjoint = Some(p);
            last_increment = increment;
            if increment <= opts.tol {
                return self.finish(ctrl, k, increment, ratios, omega, opts);
            }
        }
        Err(Error::FixedPoint {
            iterations: opts.max_iter,
            last_increment,
            last_ratio: ratios.last().copied().unwrap_or(f64::NAN),
            last_iterate: Box::new(ctrl),
        })
    }

    fn finish(
        &self,
        ctrl: ControlPair,
        iterations: usize,
        final_increment: f64,
        increment_ratios: Vec<f64>,
        relaxation: f64,
        opts: FixedPointOptions,
    ) -> Result<Optimum> {
        // Fresh solves, independent of the warm-started iterates.
        let state = self.state(&ctrl)?;
        let adjoint = self.adjoint(&state)?;
        let gradient_residual = self.space.control_norm(&self.gradient_from_adjoint(&ctrl, &adjoint)?)?;
        let scale = 1.0 + self.space.control_norm(&ctrl)?;
        if gradient_residual > opts.gradient_tol * scale {
            return Err(Error::Optimality { block: "gradient", residual: gradient_residual / scale, tolerance: opts.gradient_tol });
        }
        let cost = self.cost_with_state(&ctrl, &state)?;
        let warning = opts
            .contraction_bound
            .filter(|&c| c >= 1.0)
            .map(|c| format!("contraction bound {c:.6} is not below 1; convergence is not guaranteed by the bound"));
        Ok(Optimum {
            control: ctrl,
            state,
            adjoint,
            cost,
            iterations,
            final_increment,
            gradient_residual,
            increment_ratios,
            relaxation,
            warning,
        })
    }

    /// Direct solve of the reduced optimality system `∇J(c) = 0` by conjugate
    /// gradients on the linear part of the gradient map.
    ///
    /// In coordinates `c = [g; q]` the Riesz gradient is `G c + r₀`; the dual
    /// form `diag(M, Q)·(G c + r₀)` is symmetric positive definite, so CG
    /// applies directly.
    pub fn solve_kkt(&self) -> Result<Optimum> {
        let nv = self.space.dim();
        let nq = self.space.gamma2_nodes().len();
        let unknowns = nv + nq;
        if unknowns > KKT_UNKNOWN_LIMIT {
            return Err(Error::TooLarge { unknowns, limit: KKT_UNKNOWN_LIMIT });
        }
        let inner_tol = self.op.linear_tol().min(1e-13);
        let homogeneous = EllipticOperator::new(self.space.clone(), self.variant())?.with_linear_tol(inner_tol);
        let problem = EllipticOperator::new(self.space.clone(), self.variant())?.with_linear_tol(inner_tol);

        let dual = |grad: &ControlPair| -> Vec<f64> {
            let mut v = self.space.h_dual(&grad.g);
            v.extend(self.space.q_dual(&grad.q));
            v
        };
        let zero = ControlPair::zeros(&self.space);
        let u0 = problem.state(self.spec.b, &zero)?;
        let p0 = problem.adjoint(&u0, &self.spec.z_d)?;
        let rhs: Vec<f64> = dual(&self.gradient_from_adjoint(&zero, &p0)?).into_iter().map(|v| -v).collect();

        let (m1, m2) = (self.spec.m1, self.spec.m2);
        let apply = |x: &[f64]| -> Result<Vec<f64>> {
            let c = ControlPair::from_vec(&self.space, x)?;
            let du = homogeneous.state_from_load(0.0, &self.space.control_load(&c)?, None)?;
            let dp = homogeneous.adjoint_from_source(&self.space.mass().mul_vec(du.values()), None)?;
            Ok(dual(&self.gradient_from_adjoint(&c, &dp)?))
        };
        let mut inv_diag: Vec<f64> = self.space.mass().diagonal().into_iter().map(|d| 1.0 / (m1 * d)).collect();
        inv_diag.extend(self.space.q_gram().diagonal().into_iter().map(|d| 1.0 / (m2 * d)));
        let (x, LinearSolveReport { iterations, .. }) = pcg_operator(apply, &rhs, &inv_diag, 1e-13, 10 * unknowns)?;
        let ctrl = ControlPair::from_vec(&self.space, &x)?;

        // Block residuals of the optimality system.
        let load = self.space.control_load(&ctrl)?;
        let state = problem.state_from_load(self.spec.b, &load, None)?;
        let state_res = problem.residual(&state, &problem.state_rhs(self.spec.b, &load));
        let source = self.space.mass().mul_vec(&state.add_scaled(&self.spec.z_d, -1.0)?.into_values());
        let adjoint = problem.adjoint_from_source(&source, None)?;
        let adjoint_res = problem.residual(&adjoint, &source);
        let grad = self.gradient_from_adjoint(&ctrl, &adjoint)?;
        let g_scale = self.space.norm(&adjoint, NormKind::H)? + m1 * self.space.norm(&ctrl.g, NormKind::H)?;
        let q_scale = self.space.norm(&self.space.trace(&adjoint)?, NormKind::Q)? + m2 * self.space.norm(&ctrl.q, NormKind::Q)?;
        let rel = |r: f64, s: f64| r / s.max(1.0);
        let blocks = [
            ("state", state_res),
            ("adjoint", adjoint_res),
            ("distributed optimality", rel(self.space.norm(&grad.g, NormKind::H)?, g_scale)),
            ("boundary optimality", rel(self.space.norm(&grad.q, NormKind::Q)?, q_scale)),
        ];
        for (block, residual) in blocks {
            if residual > 1e-10 {
                return Err(Error::Optimality { block, residual, tolerance: 1e-10 });
            }
        }
        let gradient_residual = self.space.control_norm(&grad)?;
        let cost = self.cost_with_state(&ctrl, &state)?;
        Ok(Optimum {
            control: ctrl,
            state,
            adjoint,
            cost,
            iterations,
            final_increment: 0.0,
            gradient_residual,
            increment_ratios: Vec::new(),
            relaxation: 1.0,
            warning: None,
        })
    }
}

/// Zero control pair helper for callers holding only the space.
pub fn zero_control(space: &P1Space) -> ControlPair {
    ControlPair::new(FeFunction::zeros(space.mesh().clone()), BoundaryTrace::zeros(space)).expect("same mesh")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Mesh, Side};

    fn problem(n: usize, alpha: Option<f64>, target_zero_state: bool) -> ControlProblem {
        let space = Arc::new(P1Space::from_mesh(Mesh::unit_square(n, &[Side::Bottom]).unwrap()).unwrap());
        let z = if target_zero_state {
            FeFunction::constant(space.mesh().clone(), 1.0)
        } else {
            space.interpolate(|x, y| x * y).unwrap()
        };
        ControlProblem::new(space, ProblemSpec::new(1.0, z, 1.0, 1.0, alpha).unwrap()).unwrap()
    }

    #[test]
    fn reachable_target_has_zero_optimum() {
        for alpha in [None, Some(10.0)] {
            let p = problem(6, alpha, true);
            let zero = zero_control(p.space());
            assert!(p.cost(&zero).unwrap().abs() < 1e-20);
            let grad = p.gradient(&zero).unwrap();
            assert!(p.space().control_norm(&grad).unwrap() < 1e-12);
            let w = p.fixed_point_map(&zero).unwrap();
            assert!(p.space().control_norm(&w).unwrap() < 1e-12);
            let opt = p.solve_fixed_point(FixedPointOptions::default()).unwrap();
            assert_eq!(opt.iterations, 1);
            assert!(opt.cost.abs() < 1e-20);
            let kkt = p.solve_kkt().unwrap();
            assert!(p.space().control_norm(&kkt.control).unwrap() < 1e-12);
        }
    }

    #[test]
    fn fixed_point_residual_is_the_scaled_gradient() {
        let p = problem(5, None, false);
        let g = p.space().interpolate(|x, y| 0.3 * x - y).unwrap();
        let q = p.space().trace(&p.space().interpolate(|x, y| x + y).unwrap()).unwrap();
        let c = ControlPair::new(g, q).unwrap();
        let w = p.fixed_point_map(&c).unwrap();
        let grad = p.gradient(&c).unwrap();
        for (i, gi) in grad.g.values().iter().enumerate() {
            let lhs = p.spec().m1 * (c.g.values()[i] - w.g.values()[i]);
            assert!((lhs - gi).abs() < 1e-12);
        }
        for (i, gi) in grad.q.values().iter().enumerate() {
            let lhs = p.spec().m2 * (c.q.values()[i] - w.q.values()[i]);
            assert!((lhs - gi).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_dominates_control_penalty() {
        let p = problem(4, Some(2.0), false);
        let g = p.space().interpolate(|x, y| (x * 7.0).sin() + y).unwrap();
        let c = ControlPair::new(g, BoundaryTrace::zeros(p.space())).unwrap();
        let gh = p.space().norm(&c.g, NormKind::H).unwrap();
        assert!(p.cost(&c).unwrap() >= 0.5 * p.spec().m1 * gh * gh);
    }

    #[test]
    fn kkt_guard_rejects_large_problems() {
        let p = problem(150, None, false);
        assert!(matches!(p.solve_kkt(), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn non_convergence_carries_the_last_iterate() {
        let p = problem(4, None, false);
        let err = p.solve_fixed_point(FixedPointOptions { max_iter: 2, ..Default::default() }).unwrap_err();
        match err {
            Error::FixedPoint { iterations, last_iterate, .. } => {
                assert_eq!(iterations, 2);
                assert!(p.space().control_norm(&last_iterate).unwrap() > 0.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn warning_is_attached_for_large_bounds() {
        let p = problem(4, None, false);
        let opt = p.solve_fixed_point(FixedPointOptions { contraction_bound: Some(3.0), ..Default::default() }).unwrap();
        assert!(opt.warning.is_some());
    }
}
