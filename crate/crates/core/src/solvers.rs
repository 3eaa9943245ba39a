//! Discrete state and adjoint problems.
//!
//! Dirichlet formulation: find `u ∈ K_h = b + V₀h` with
//! `a(u, v) = (g, v)_H − (q, v)_Q` for all `v ∈ V₀h`, and the adjoint
//! `p ∈ V₀h` with `a(p, v) = (u − z_d, v)_H`.
//!
//! Robin formulation: find `u ∈ V_h` with
//! `a_α(u, v) = (g, v)_H − (q, v)_Q + α ∫_{Γ1} b v` for all `v ∈ V_h`, where
//! `a_α(u, v) = a(u, v) + α ∫_{Γ1} u v`, and the adjoint `p ∈ V_h` with
//! `a_α(p, v) = (u − z_d, v)_H`.
//!
//! Dirichlet conditions are imposed by elimination: only the V₀h unknowns
//! enter the linear system and `u = b + u₀`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{ControlPair, FeFunction, P1Space, Space};
use crate::sparse::{pcg, LinearSolveReport, PcgOptions, SparseSymMatrix};

/// Boundary condition on Γ1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// `u = b` on Γ1.
    Dirichlet,
    /// `−∂u/∂n = α (u − b)` on Γ1, with the heat transfer coefficient α.
    Robin(f64),
}

impl Variant {
    pub fn alpha(self) -> Option<f64> {
        match self {
            Variant::Dirichlet => None,
            Variant::Robin(a) => Some(a),
        }
    }

    /// α for tables, `+∞` standing for the Dirichlet limit.
    pub fn alpha_or_inf(self) -> f64 {
        self.alpha().unwrap_or(f64::INFINITY)
    }
}

/// Data of the control problems.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    /// Γ1 temperature (Dirichlet) or ambient temperature (Robin).
    pub b: f64,
    /// Desired state.
    pub z_d: FeFunction,
    /// Weight of the distributed control.
    pub m1: f64,
    /// Weight of the boundary control.
    pub m2: f64,
    /// Heat transfer coefficient; `None` selects the Dirichlet formulation.
    pub alpha: Option<f64>,
}

impl ProblemSpec {
    pub fn new(b: f64, z_d: FeFunction, m1: f64, m2: f64, alpha: Option<f64>) -> Result<Self> {
        let spec = Self { b, z_d, m1, m2, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("b", self.b)?;
        positive("M1", self.m1)?;
        positive("M2", self.m2)?;
        if let Some(a) = self.alpha {
            positive("alpha", a)?;
        }
        if self.z_d.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("desired state has non-finite values".into()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        match self.alpha {
            Some(a) => Variant::Robin(a),
            None => Variant::Dirichlet,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { alpha: variant.alpha(), ..self.clone() }
    }
}

/// The linear system shared by the state and adjoint problems of one variant.
#[derive(Debug)]
pub struct EllipticOperator {
    space: Arc<P1Space>,
    variant: Variant,
    /// `A` on the V₀h unknowns (Dirichlet) or `A + α B_{Γ1}` on all of V_h (Robin).
    matrix: SparseSymMatrix,
    /// `α B_{Γ1} 1`, the Robin load per unit ambient temperature.
    robin_load: Vec<f64>,
    opts: PcgOptions,
}

impl EllipticOperator {
    pub fn new(space: Arc<P1Space>, variant: Variant) -> Result<Self> {
        let (matrix, robin_load) = match variant {
            Variant::Dirichlet => (space.stiffness().restrict(space.free_nodes()), Vec::new()),
            Variant::Robin(alpha) => {
                if !(alpha > 0.0) {
                    return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
                }
                let ones = vec![1.0; space.dim()];
                let load = space.gamma1_mass().mul_vec(&ones).into_iter().map(|v| alpha * v).collect();
                (space.stiffness().add_scaled(space.gamma1_mass(), alpha), load)
            }
        };
        Ok(Self { space, variant, matrix, robin_load, opts: PcgOptions::default() })
    }

    /// Overrides the relative residual target of the linear solves.
    pub fn with_linear_tol(mut self, tol: f64) -> Self {
        self.opts.tol = tol;
        self
    }

    pub fn linear_tol(&self) -> f64 {
        self.opts.tol
    }

    pub fn space(&self) -> &Arc<P1Space> {
        &self.space
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// The bilinear form of this variant, `a` or `a_α`, on full nodal vectors.
    pub fn form(&self, u: &[f64], v: &[f64]) -> f64 {
        let a = self.space.stiffness().bilinear(u, v);
        match self.variant {
            Variant::Dirichlet => a,
            Variant::Robin(alpha) => a + alpha * self.space.gamma1_mass().bilinear(u, v),
        }
    }

    fn solve(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<(Vec<f64>, LinearSolveReport)> {
        pcg(&self.matrix, rhs, guess, self.opts)
    }

    fn reduce(&self, full: &[f64]) -> Vec<f64> {
        self.space.free_nodes().iter().map(|&i| full[i]).collect()
    }

    /// State for a given load vector `i ↦ (g, φ_i)_H − (q, φ_i)_Q`.
    pub fn state_from_load(&self, b: f64, load: &[f64], guess: Option<&FeFunction>) -> Result<FeFunction> {
        let n = self.space.dim();
        if load.len() != n {
            return Err(Error::Dimension { expected: n, found: load.len() });
        }
        let mesh = self.space.mesh().clone();
        match self.variant {
            Variant::Dirichlet => {
                let rhs = self.reduce(load);
                let g = guess.map(|u| self.space.free_nodes().iter().map(|&i| u.values()[i] - b).collect::<Vec<_>>());
                let (x, _) = self.solve(&rhs, g.as_deref())?;
                let mut values = vec![b; n];
                for (&i, xi) in self.space.free_nodes().iter().zip(x) {
                    values[i] = b + xi;
                }
                FeFunction::new(mesh, values, Space::Kh(b))
            }
            Variant::Robin(_) => {
                let rhs: Vec<f64> = load.iter().zip(&self.robin_load).map(|(l, r)| l + b * r).collect();
                let (x, _) = self.solve(&rhs, guess.map(|u| u.values()))?;
                FeFunction::new(mesh, x, Space::Vh)
            }
        }
    }

    pub fn state(&self, b: f64, ctrl: &ControlPair) -> Result<FeFunction> {
        self.state_from_load(b, &self.space.control_load(ctrl)?, None)
    }

    /// Adjoint for a given source vector `i ↦ (u − z_d, φ_i)_H`.
    pub fn adjoint_from_source(&self, source: &[f64], guess: Option<&FeFunction>) -> Result<FeFunction> {
        let n = self.space.dim();
        if source.len() != n {
            return Err(Error::Dimension { expected: n, found: source.len() });
        }
        let mesh = self.space.mesh().clone();
        match self.variant {
            Variant::Dirichlet => {
                let rhs = self.reduce(source);
                let g = guess.map(|p| self.reduce(p.values()));
                let (x, _) = self.solve(&rhs, g.as_deref())?;
                let mut values = vec![0.0; n];
                for (&i, xi) in self.space.free_nodes().iter().zip(x) {
                    values[i] = xi;
                }
                FeFunction::new(mesh, values, Space::V0h)
            }
            Variant::Robin(_) => {
                let (x, _) = self.solve(source, guess.map(|p| p.values()))?;
                FeFunction::new(mesh, x, Space::Vh)
            }
        }
    }

    pub fn adjoint(&self, u: &FeFunction, z_d: &FeFunction) -> Result<FeFunction> {
        self.adjoint_from_source(&self.space.mass().mul_vec(&u.add_scaled(z_d, -1.0)?.into_values()), None)
    }

    /// Relative residual of the discrete equation solved by `u` for `rhs`,
    /// tested against the V₀h (Dirichlet) or V_h (Robin) basis.
    pub fn residual(&self, u: &FeFunction, rhs: &[f64]) -> f64 {
        let mut au = self.space.stiffness().mul_vec(u.values());
        if let Variant::Robin(alpha) = self.variant {
            for (x, y) in au.iter_mut().zip(self.space.gamma1_mass().mul_vec(u.values())) {
                *x += alpha * y;
            }
        }
        let tested: Box<dyn Iterator<Item = usize>> = match self.variant {
            Variant::Dirichlet => Box::new(self.space.free_nodes().iter().copied()),
            Variant::Robin(_) => Box::new(0..self.space.dim()),
        };
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in tested {
            num += (au[i] - rhs[i]).powi(2);
            den += rhs[i].powi(2);
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Full right-hand side of the state equation for `b` and a control load.
    pub fn state_rhs(&self, b: f64, load: &[f64]) -> Vec<f64> {
        match self.variant {
            Variant::Dirichlet => load.to_vec(),
            Variant::Robin(_) => load.iter().zip(&self.robin_load).map(|(l, r)| l + b * r).collect(),
        }
    }
}

fn require_variant(spec: &ProblemSpec, robin: bool) -> Result<()> {
    spec.validate()?;
    match (spec.alpha.is_some(), robin) {
        (true, true) | (false, false) => Ok(()),
        (false, true) => Err(Error::Validation("Robin solve requires alpha".into())),
        (true, false) => Err(Error::Validation("Dirichlet solve must not carry alpha".into())),
    }
}

/// Solves the Dirichlet state equation; the result lies in `K_h`.
pub fn solve_state_dirichlet(space: &Arc<P1Space>, spec: &ProblemSpec, ctrl: &ControlPair) -> Result<FeFunction> {
    require_variant(spec, false)?;
    EllipticOperator::new(space.clone(), Variant::Dirichlet)?.state(spec.b, ctrl)
}

/// Solves the Robin state equation for `spec.alpha`.
pub fn solve_state_robin(space: &Arc<P1Space>, spec: &ProblemSpec, ctrl: &ControlPair) -> Result<FeFunction> {
    require_variant(spec, true)?;
    EllipticOperator::new(space.clone(), spec.variant())?.state(spec.b, ctrl)
}

/// Solves the Dirichlet adjoint equation; the result lies in `V₀h`.
pub fn solve_adjoint_dirichlet(space: &Arc<P1Space>, spec: &ProblemSpec, u: &FeFunction) -> Result<FeFunction> {
    require_variant(spec, false)?;
    EllipticOperator::new(space.clone(), Variant::Dirichlet)?.adjoint(u, &spec.z_d)
}

pub fn solve_adjoint_robin(space: &Arc<P1Space>, spec: &ProblemSpec, u: &FeFunction) -> Result<FeFunction> {
    require_variant(spec, true)?;
    EllipticOperator::new(space.clone(), spec.variant())?.adjoint(u, &spec.z_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundaryTrace, NormKind};
    use crate::mesh::{Mesh, Side};

    fn setup(n: usize) -> Arc<P1Space> {
        Arc::new(P1Space::from_mesh(Mesh::unit_square(n, &[Side::Bottom]).unwrap()).unwrap())
    }

    fn spec(space: &P1Space, b: f64, alpha: Option<f64>) -> ProblemSpec {
        let z = space.interpolate(|x, y| x * y).unwrap();
        ProblemSpec::new(b, z, 1.0, 1.0, alpha).unwrap()
    }

    #[test]
    fn zero_controls_give_constant_state() {
        let s = setup(6);
        let zero = ControlPair::zeros(&s);
        let u = solve_state_dirichlet(&s, &spec(&s, 2.0, None), &zero).unwrap();
        assert!(u.values().iter().all(|&v| v == 2.0));
        for alpha in [0.5, 1.0, 1e3] {
            let u = solve_state_robin(&s, &spec(&s, 2.0, Some(alpha)), &zero).unwrap();
            assert!(u.values().iter().all(|v| (v - 2.0).abs() < 1e-10), "alpha={alpha}");
        }
    }

    #[test]
    fn adjoint_vanishes_when_target_is_reached() {
        let s = setup(5);
        let g = s.interpolate(|x, y| x - y).unwrap();
        let ctrl = ControlPair::new(g, BoundaryTrace::zeros(&s)).unwrap();
        for alpha in [None, Some(3.0)] {
            let mut sp = spec(&s, 1.0, alpha);
            let u = match alpha {
                None => solve_state_dirichlet(&s, &sp, &ctrl).unwrap(),
                Some(_) => solve_state_robin(&s, &sp, &ctrl).unwrap(),
            };
            sp.z_d = u.clone();
            let p = match alpha {
                None => solve_adjoint_dirichlet(&s, &sp, &u).unwrap(),
                Some(_) => solve_adjoint_robin(&s, &sp, &u).unwrap(),
            };
            assert!(p.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dirichlet_adjoint_vanishes_on_gamma1() {
        let s = setup(6);
        let sp = spec(&s, 1.0, None);
        let g = s.interpolate(|x, y| (x + y).sin()).unwrap();
        let ctrl = ControlPair::new(g, BoundaryTrace::zeros(&s)).unwrap();
        let u = solve_state_dirichlet(&s, &sp, &ctrl).unwrap();
        let p = solve_adjoint_dirichlet(&s, &sp, &u).unwrap();
        assert_eq!(p.space(), Space::V0h);
        assert!(s.gamma1_nodes().iter().all(|&i| p.values()[i] == 0.0));
        assert!(s.norm(&p, NormKind::V).unwrap() > 0.0);
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let s = setup(3);
        let zero = ControlPair::zeros(&s);
        assert!(solve_state_robin(&s, &spec(&s, 1.0, None), &zero).is_err());
        assert!(solve_state_dirichlet(&s, &spec(&s, 1.0, Some(2.0)), &zero).is_err());
        let z = s.interpolate(|_, _| 0.0).unwrap();
        assert!(ProblemSpec::new(0.0, z.clone(), 1.0, 1.0, None).is_err());
        assert!(ProblemSpec::new(1.0, z.clone(), -1.0, 1.0, None).is_err());
        assert!(ProblemSpec::new(1.0, z, 1.0, 1.0, Some(0.0)).is_err());
    }

    #[test]
    fn residuals_vanish_to_solver_tolerance() {
        let s = setup(8);
        let g = s.interpolate(|x, y| 1.0 + x * y).unwrap();
        let q = s.trace(&s.interpolate(|x, y| x - 2.0 * y).unwrap()).unwrap();
        let ctrl = ControlPair::new(g, q).unwrap();
        for variant in [Variant::Dirichlet, Variant::Robin(7.0)] {
            let op = EllipticOperator::new(s.clone(), variant).unwrap();
            let load = s.control_load(&ctrl).unwrap();
            let u = op.state_from_load(1.5, &load, None).unwrap();
            assert!(op.residual(&u, &op.state_rhs(1.5, &load)) <= 1e-12);
        }
    }
}
