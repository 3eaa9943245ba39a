//! A fast self-check suite: element oracles, algebraic identities of the
//! discrete problems, and agreement of the two optimizers on a small mesh.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{audit_uniform_bounds, contraction_constants, fit_rate, DiscreteConstants, EigenOptions};
use crate::control::{ControlProblem, FixedPointOptions, Relaxation};
use crate::error::Result;
use crate::fem::{edge_mass_element, mass_element, stiffness_element, BoundaryTrace, ControlPair, FeFunction, NormKind, P1Space, Space};
use crate::mesh::{Mesh, Side};
use crate::solvers::ProblemSpec;

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Linear tolerance for checks that difference solved quantities.
pub const IDENTITY_LINEAR_TOL: f64 = 1e-14;

/// A control pair with nodal values uniform in `[-scale, scale]`.
pub fn random_control(space: &P1Space, rng: &mut impl Rng, scale: f64) -> ControlPair {
    let g: Vec<f64> = (0..space.dim()).map(|_| rng.gen_range(-scale..=scale)).collect();
    let q: Vec<f64> = (0..space.gamma2_nodes().len()).map(|_| rng.gen_range(-scale..=scale)).collect();
    let g = FeFunction::new(space.mesh().clone(), g, Space::Vh).expect("unconstrained space");
    ControlPair::new(g, BoundaryTrace::new(space, q).expect("gamma2 length")).expect("same mesh")
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// The default small problem: unit square, Γ1 = bottom, `b = 1`,
/// `M1 = M2 = 1`, target the interpolant of `x·y`.
pub fn small_problem(n: usize, alpha: Option<f64>) -> Result<ControlProblem> {
    let space = Arc::new(P1Space::from_mesh(Mesh::unit_square(n, &[Side::Bottom])?)?);
    let z_d = space.interpolate(|x, y| x * y)?;
    ControlProblem::new(space, ProblemSpec::new(1.0, z_d, 1.0, 1.0, alpha)?)
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 10] = [
    ("element matrices", element_matrices),
    ("mesh construction", mesh_construction),
    ("assembled forms", assembled_forms),
    ("zero controls give the constant state", zero_control_state),
    ("duality and monotonicity identities", identities),
    ("gradient against finite differences", gradient_fd),
    ("fixed point against the optimality system", optimizers_agree),
    ("uniform bounds", uniform_bounds),
    ("rate fits", rate_fits),
    ("contraction constant", contraction_formula),
];

/// Runs every check; errors count as failures.
pub fn run_all() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| match check() {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome { name, passed: false, detail: format!("error: {e}") },
        })
        .collect()
}

fn max_abs_diff<const N: usize>(a: &[[f64; N]; N], b: &[[f64; N]; N]) -> f64 {
    (0..N).flat_map(|i| (0..N).map(move |j| (a[i][j] - b[i][j]).abs())).fold(0.0, f64::max)
}

fn element_matrices() -> Result<(bool, String)> {
    let k = stiffness_element([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])?;
    let ek = max_abs_diff(&k, &[[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]]);
    let a = 0.37;
    let m = mass_element(a);
    let em = max_abs_diff(&m, &[[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]].map(|r| r.map(|v| v * a / 12.0)));
    let l = 0.3;
    let e = edge_mass_element(l);
    let ee = max_abs_diff(&e, &[[2.0, 1.0], [1.0, 2.0]].map(|r| r.map(|v| v * l / 6.0)));
    let worst = ek.max(em).max(ee);
    Ok((worst <= 1e-14, format!("max deviation {worst:.1e}")))
}

fn mesh_construction() -> Result<(bool, String)> {
    let m = Mesh::unit_square(2, &[Side::Bottom, Side::Left])?;
    let r = m.refine_uniform()?;
    let ok = m.vertex_count() == 9
        && m.triangles().len() == 8
        && m.boundary_edges().len() == 8
        && (m.boundary_measure(crate::mesh::BoundaryLabel::Gamma1) - 2.0).abs() < 1e-15
        && (r.h() - m.h() / 2.0).abs() <= 1e-15 * m.h()
        && (r.area() - 1.0).abs() < 1e-14;
    Ok((ok, format!("h {} -> {}", m.h(), r.h())))
}

fn assembled_forms() -> Result<(bool, String)> {
    let s = P1Space::from_mesh(Mesh::unit_square(8, &[Side::Bottom])?)?;
    let ones = vec![1.0; s.dim()];
    let kernel = s.stiffness().mul_vec(&ones).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let symmetric = s.stiffness().is_symmetric() && s.mass().is_symmetric() && s.boundary_mass().is_symmetric();
    let x = s.interpolate(|x, _| x)?;
    let energy = s.norm(&x, NormKind::V0)?;
    let ok = symmetric && kernel <= 1e-14 && (energy - 1.0).abs() < 1e-14 && (s.mass().quad_form(&ones) - 1.0).abs() < 1e-14;
    Ok((ok, format!("|A 1| = {kernel:.1e}, |x|_V0 = {energy}")))
}

fn zero_control_state() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for alpha in [None, Some(1.0), Some(1e3)] {
        let p = small_problem(8, alpha)?;
        let u = p.state(&ControlPair::zeros(p.space()))?;
        worst = u.values().iter().fold(worst, |m, v| m.max((v - 1.0).abs()));
    }
    Ok((worst <= 1e-12, format!("max |u - b| = {worst:.1e}")))
}

fn identities() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for alpha in [None, Some(10.0)] {
        let p = small_problem(8, alpha)?.with_linear_tol(IDENTITY_LINEAR_TOL);
        let s = p.space().clone();
        let c1 = random_control(&s, &mut rng, 1.0);
        let c2 = random_control(&s, &mut rng, 1.0);
        let (u1, u2) = (p.state(&c1)?, p.state(&c2)?);
        let (p1, p2) = (p.adjoint(&u1)?, p.adjoint(&u2)?);
        let u0 = p.state(&ControlPair::zeros(&s))?;
        // a(p, u_c − u_0) = (g, p)_H − (q, p)_Q
        let du = u2.add_scaled(&u0, -1.0)?;
        let lhs = p.operator().form(p1.values(), du.values());
        let rhs = s.h_inner(&c2.g, &p1)? - s.q_inner(&c2.q, &s.trace(&p1)?)?;
        worst = worst.max(rel_diff(lhs, rhs));
        // (Δp, Δg)_H − (Δp, Δq)_Q = ‖Δu‖²_H
        let dp = p2.add_scaled(&p1, -1.0)?;
        let dc = c2.add_scaled(&c1, -1.0)?;
        let lhs = s.h_inner(&dp, &dc.g)? - s.q_inner(&s.trace(&dp)?, &dc.q)?;
        let du = s.norm(&u2.add_scaled(&u1, -1.0)?, NormKind::H)?;
        worst = worst.max(rel_diff(lhs, du * du));
    }
    Ok((worst <= 1e-10, format!("max relative deviation {worst:.1e}")))
}

fn gradient_fd() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = small_problem(8, None)?.with_linear_tol(IDENTITY_LINEAR_TOL);
    let s = p.space().clone();
    let c = random_control(&s, &mut rng, 1.0);
    let grad = p.gradient(&c)?;
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let d = random_control(&s, &mut rng, 1.0);
        let eps = 1e-5;
        let fd = (p.cost(&c.add_scaled(&d, eps)?)? - p.cost(&c.add_scaled(&d, -eps)?)?) / (2.0 * eps);
        let pairing = s.control_inner(&grad, &d)?;
        let scale = pairing.abs().max(s.control_norm(&grad)? * s.control_norm(&d)?);
        worst = worst.max((fd - pairing).abs() / scale);
    }
    Ok((worst <= 1e-8, format!("max relative deviation {worst:.1e}")))
}

fn optimizers_agree() -> Result<(bool, String)> {
    let mut detail = String::new();
    let mut ok = true;
    for (alpha, relaxation) in [(None, Relaxation::None), (Some(10.0), Relaxation::Auto)] {
        let p = small_problem(8, alpha)?;
        let fp = p.solve_fixed_point(FixedPointOptions { relaxation, ..Default::default() })?;
        let kkt = p.solve_kkt()?;
        let s = p.space();
        let gap = s.control_norm(&fp.control.add_scaled(&kkt.control, -1.0)?)?;
        let scale = 1.0 + s.control_norm(&kkt.control)?;
        ok &= gap <= 1e-8 * scale;
        detail.push_str(&format!("{:?}: {gap:.1e} ", p.variant()));
    }
    Ok((ok, detail.trim_end().to_string()))
}

fn uniform_bounds() -> Result<(bool, String)> {
    let p = small_problem(8, None)?;
    let consts = DiscreteConstants::estimate(p.space(), EigenOptions::default())?;
    let opts = FixedPointOptions { relaxation: Relaxation::Auto, ..Default::default() };
    let audit = audit_uniform_bounds(p.space(), p.spec(), &[10.0], &consts, opts)?;
    let failed: Vec<&str> = audit.records.iter().filter(|r| !r.satisfied).map(|r| r.name).collect();
    Ok((failed.is_empty(), if failed.is_empty() { format!("{} bounds hold", audit.records.len()) } else { format!("violated: {}", failed.join(" ")) }))
}

fn rate_fits() -> Result<(bool, String)> {
    let one = fit_rate(&[(0.5, 0.5), (0.25, 0.25)])?;
    let two = fit_rate(&[(0.5, 0.25), (0.25, 0.0625)])?;
    let ok = (one.slope - 1.0).abs() < 1e-14 && (two.slope - 2.0).abs() < 1e-14 && fit_rate(&[(0.5, 0.5)]).is_err();
    Ok((ok, format!("slopes {} and {}", one.slope, two.slope)))
}

fn contraction_formula() -> Result<(bool, String)> {
    let c = DiscreteConstants { h: 1.0, lambda: 0.5, lambda1: 0.5, gamma_norm: 2.0 };
    let r = contraction_constants(&c, 100.0, 100.0, 10.0);
    Ok(((r.c0 - 0.379_473_319_220_205_6).abs() < 1e-12, format!("C0 = {}", r.c0)))
}
