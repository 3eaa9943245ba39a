//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::sync::Arc;
use std::time::Instant;

use common::{rel, Manufactured};
use mixed_ocp::analysis::{audit_uniform_bounds, contraction_constants, fit_rate, DiscreteConstants, EigenOptions};
use mixed_ocp::control::{ControlProblem, FixedPointOptions, Relaxation};
use mixed_ocp::fem::{
    assemble_boundary_mass, assemble_domain_mass, assemble_stiffness, ControlPair, NormKind, P1Space,
};
use mixed_ocp::mesh::{BoundaryEdge, BoundaryLabel, Mesh};
use mixed_ocp::solvers::{EllipticOperator, Variant};
use mixed_ocp::study::{self, StudyConfig, StudyContext};
use mixed_ocp::verify::{random_control, small_problem, IDENTITY_LINEAR_TOL};
use mixed_ocp::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { passed, detail: detail.into() })
}

fn within(x: f64, centre: f64, half_width: f64) -> bool {
    (x - centre).abs() <= half_width
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// Element blocks on a single reference triangle.
fn element_oracles() -> Result<Verdict> {
    let label = |vertices, label| BoundaryEdge { vertices, label };
    let mesh = Mesh::new(
        vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        vec![[0, 1, 2]],
        vec![label([0, 1], BoundaryLabel::Gamma1), label([1, 2], BoundaryLabel::Gamma2), label([2, 0], BoundaryLabel::Gamma2)],
    )?;
    let k = assemble_stiffness(&mesh)?;
    let m = assemble_domain_mass(&mesh)?;
    let b = assemble_boundary_mass(&mesh, Some(BoundaryLabel::Gamma1));
    let stiff = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
    let area = 0.5;
    let mass = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]].map(|r| r.map(|v| v * area / 12.0));
    let edge = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]].map(|r| r.map(|v| v / 6.0));
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((k.get(i, j) - stiff[i][j]).abs());
            worst = worst.max((m.get(i, j) - mass[i][j]).abs());
            worst = worst.max((b.get(i, j) - edge[i][j]).abs());
        }
    }
    verdict(worst <= 1e-14, format!("max deviation {worst:.1e}"))
}

/// True errors of the manufactured state by quadrature.
fn manufactured_rates() -> Result<Verdict> {
    let exact = Manufactured { b: 1.0 };
    let (mut h_pts, mut v_pts, mut interp_v) = (Vec::new(), Vec::new(), Vec::new());
    for n in [8, 16, 32, 64] {
        let space = Arc::new(common::unit_space(n));
        let op = EllipticOperator::new(space.clone(), Variant::Dirichlet)?;
        let uh = op.state_from_load(exact.b, &exact.load(space.mesh()), None)?;
        let (l2, h1) = exact.errors(&uh);
        let h = space.mesh().h();
        h_pts.push((h, l2));
        v_pts.push((h, (l2 * l2 + h1 * h1).sqrt()));
        let pi = space.interpolate(|x, y| exact.u(x, y))?;
        interp_v.push((h, space.norm(&uh.add_scaled(&pi, -1.0)?, NormKind::V)?));
    }
    let sv = fit_rate(&v_pts)?.slope;
    let sh = fit_rate(&h_pts)?.slope;
    let si = fit_rate(&interp_v)?.slope;
    verdict(
        within(sv, 1.0, 0.15) && within(sh, 2.0, 0.15),
        format!("V slope {sv:.3}, H slope {sh:.3} (distance to the interpolant in V: slope {si:.3})"),
    )
}

fn identities() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 4];
    for alpha in [None, Some(10.0)] {
        let p = small_problem(8, alpha)?.with_linear_tol(IDENTITY_LINEAR_TOL);
        let s = p.space().clone();
        let (m1, m2) = (p.spec().m1, p.spec().m2);
        let u0 = p.state(&ControlPair::zeros(&s))?;
        for _ in 0..5 {
            let c1 = random_control(&s, &mut rng, 1.0);
            let c2 = random_control(&s, &mut rng, 1.0);
            let (u1, u2) = (p.state(&c1)?, p.state(&c2)?);
            let (p1, p2) = (p.adjoint(&u1)?, p.adjoint(&u2)?);
            // duality: a(p1, u2 − u0) = (g2, p1)_H − (q2, p1)_Q
            let lhs = p.operator().form(p1.values(), u2.add_scaled(&u0, -1.0)?.values());
            let rhs = s.h_inner(&c2.g, &p1)? - s.q_inner(&c2.q, &s.trace(&p1)?)?;
            worst[0] = worst[0].max(rel(lhs, rhs));
            // monotonicity of the adjoint map
            let dp = p2.add_scaled(&p1, -1.0)?;
            let dc = c2.add_scaled(&c1, -1.0)?;
            let du = s.norm(&u2.add_scaled(&u1, -1.0)?, NormKind::H)?;
            let lhs = s.h_inner(&dp, &dc.g)? - s.q_inner(&s.trace(&dp)?, &dc.q)?;
            worst[1] = worst[1].max(rel(lhs, du * du));
            // convexity equality at t = 0.37
            let t = 0.37;
            let mix = c2.scaled(1.0 - t).add_scaled(&c1, t)?;
            let lhs = (1.0 - t) * p.cost(&c2)? + t * p.cost(&c1)? - p.cost(&mix)?;
            let dg = s.norm(&dc.g, NormKind::H)?;
            let dq = s.norm(&dc.q, NormKind::Q)?;
            let quad = du * du + m1 * dg * dg + m2 * dq * dq;
            worst[2] = worst[2].max(rel(lhs, t * (1.0 - t) / 2.0 * quad));
            // monotonicity of the gradient
            let dj = p.gradient(&c2)?.add_scaled(&p.gradient(&c1)?, -1.0)?;
            worst[3] = worst[3].max(rel(s.control_inner(&dj, &dc)?, quad));
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    verdict(
        max <= 1e-10,
        format!("duality {:.1e}, adjoint monotonicity {:.1e}, convexity {:.1e}, gradient monotonicity {:.1e}", worst[0], worst[1], worst[2], worst[3]),
    )
}

fn gradient_check() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for alpha in [None, Some(10.0)] {
        let p = small_problem(8, alpha)?.with_linear_tol(IDENTITY_LINEAR_TOL);
        let s = p.space().clone();
        let c = random_control(&s, &mut rng, 1.0);
        let grad = p.gradient(&c)?;
        for _ in 0..10 {
            let d = random_control(&s, &mut rng, 1.0);
            let eps = 1e-5;
            let fd = (p.cost(&c.add_scaled(&d, eps)?)? - p.cost(&c.add_scaled(&d, -eps)?)?) / (2.0 * eps);
            let pairing = s.control_inner(&grad, &d)?;
            // near-orthogonal directions would divide roundoff by a tiny pairing
            let scale = pairing.abs().max(s.control_norm(&grad)? * s.control_norm(&d)?);
            worst = worst.max((fd - pairing).abs() / scale);
        }
    }
    verdict(worst <= 1e-8, format!("max relative deviation {worst:.1e} over 10 directions per formulation"))
}

/// Plain Banach iteration against the optimality-system oracle.
fn fixed_point_vs_kkt() -> Result<Verdict> {
    let mut passed = true;
    let mut notes = Vec::new();
    for alpha in [None, Some(10.0)] {
        let p = small_problem(8, alpha)?;
        let s = p.space();
        let consts = DiscreteConstants::estimate(s, EigenOptions::default())?;
        let report = contraction_constants(&consts, 1.0, 1.0, alpha.unwrap_or(1.0));
        let bound = if alpha.is_some() { report.c0_alpha } else { report.c0 };
        let kkt = p.solve_kkt()?;
        let name = format!("{:?}", p.variant());
        match p.solve_fixed_point(FixedPointOptions { contraction_bound: Some(bound), ..Default::default() }) {
            Ok(fp) => {
                let gap = s.control_norm(&fp.control.add_scaled(&kkt.control, -1.0)?)?;
                let ratio = fp.max_increment_ratio().unwrap_or(0.0);
                let ok = gap <= 1e-8 && ratio < 1.0 && ratio <= bound + 1e-6;
                passed &= ok;
                notes.push(format!("{name}: gap {gap:.1e}, max ratio {ratio:.4}, C0 {bound:.3}, {} iterations", fp.iterations));
            }
            Err(e) => {
                passed = false;
                let rho = p.map_spectral_radius(200, 1e-10)?;
                let relaxed = p.solve_fixed_point(FixedPointOptions { relaxation: Relaxation::Auto, ..Default::default() })?;
                let gap = s.control_norm(&relaxed.control.add_scaled(&kkt.control, -1.0)?)?;
                notes.push(format!(
                    "{name}: plain iteration fails ({e}); spectral radius of the map's linear part {rho:.4}; relaxed iteration (step {:.3}) agrees with the oracle to {gap:.1e}",
                    relaxed.relaxation
                ));
            }
        }
    }
    verdict(passed, notes.join("; "))
}

fn slope_of(rates: &[study::RateSummary], v: Variant, q: &str) -> f64 {
    rates
        .iter()
        .find(|r| r.variant == v && r.quantity == q)
        .and_then(|r| r.fit.as_ref())
        .map_or(f64::NAN, |f| f.slope)
}

fn h_convergence(ctx: &StudyContext) -> Result<Verdict> {
    let (records, rates) = study::study_h(ctx)?;
    if let Some(f) = records.iter().find_map(|r| r.failure.as_ref()) {
        return verdict(false, format!("case failed: {f}"));
    }
    let mut passed = true;
    let mut notes = Vec::new();
    for v in ctx.config().variants() {
        let s = ["err_control", "err_state", "err_adjoint"].map(|q| slope_of(&rates, v, q));
        passed &= s.iter().all(|&x| within(x, 1.0, 0.2));
        notes.push(format!("{v:?}: control {:.3}, state {:.3}, adjoint {:.3}", s[0], s[1], s[2]));
    }
    verdict(passed, notes.join("; "))
}

fn alpha_convergence() -> Result<Verdict> {
    let config = StudyConfig { alphas: vec![1.0, 10.0, 100.0, 1000.0, 10000.0], alpha_n: 16, ..StudyConfig::default() };
    let records = study::study_alpha(&config)?;
    let d: Vec<f64> = records.iter().map(|r| r.errors.control).collect();
    let ratio = d[d.len() - 1] / d[0];
    verdict(
        strictly_decreasing(&d) && ratio <= 0.01,
        format!("distances {}; final/initial {ratio:.2e}", d.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")),
    )
}

fn double_limit(ctx: &StudyContext) -> Result<Verdict> {
    let records = study::study_diagonal(ctx)?;
    let d: Vec<f64> = records.iter().map(|r| r.errors.control).collect();
    let reduction = d[0] / d[d.len() - 1];
    verdict(
        strictly_decreasing(&d) && reduction >= 4.0,
        format!("distances {}; reduction {reduction:.1}x", d.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")),
    )
}

fn cost_gaps(ctx: &StudyContext) -> Result<Verdict> {
    let (records, rates) = study::study_cost_gaps(ctx)?;
    if let Some(f) = records.iter().find_map(|r| r.failure.as_ref()) {
        return verdict(false, format!("case failed: {f}"));
    }
    let min_gap = records.iter().flat_map(|r| [r.gap_fine(), r.gap_discrete()]).fold(f64::INFINITY, f64::min);
    let signs = min_gap >= -1e-12;
    let mut slopes_ok = true;
    let mut notes = vec![format!("smallest two-sided gap {min_gap:.2e}")];
    for v in ctx.config().variants() {
        let s = ["gap_fine", "gap_discrete"].map(|q| slope_of(&rates, v, q));
        slopes_ok &= s.iter().all(|&x| within(x, 2.0, 0.3));
        notes.push(format!("{v:?}: slopes {:.3}, {:.3}", s[0], s[1]));
    }
    verdict(signs && slopes_ok, notes.join("; "))
}

fn bound_audit() -> Result<Verdict> {
    let p: ControlProblem = small_problem(8, None)?;
    let space: &Arc<P1Space> = p.space();
    let consts = DiscreteConstants::estimate(space, EigenOptions::default())?;
    let opts = FixedPointOptions { relaxation: Relaxation::Auto, ..Default::default() };
    let audit = audit_uniform_bounds(space, p.spec(), &[10.0], &consts, opts)?;
    let c1 = audit.get("c1", None).expect("c1 audited");
    let c1_rel = rel(c1.measured, c1.bound);
    let violated: Vec<&str> = audit.records.iter().filter(|r| !r.satisfied).map(|r| r.name).collect();
    verdict(
        violated.is_empty() && c1_rel <= 1e-12 && audit.records.len() == 12,
        if violated.is_empty() {
            format!("all {} bounds hold; c1 relative deviation {c1_rel:.1e}", audit.records.len())
        } else {
            format!("violated: {}", violated.join(" "))
        },
    )
}

fn main() {
    let shared = StudyContext::new(StudyConfig::default()).expect("default configuration is valid");
    let criteria: [(&str, Box<dyn Fn() -> Result<Verdict>>); 10] = [
        ("element-matrix oracles", Box::new(element_oracles)),
        ("manufactured-solution state convergence", Box::new(manufactured_rates)),
        ("exact algebraic identities", Box::new(identities)),
        ("gradient against central differences", Box::new(gradient_check)),
        ("fixed point against the optimality-system oracle", Box::new(fixed_point_vs_kkt)),
        ("h-convergence of optima", Box::new(|| h_convergence(&shared))),
        ("alpha-convergence", Box::new(alpha_convergence)),
        ("double limit", Box::new(|| double_limit(&shared))),
        ("cost gaps", Box::new(|| cost_gaps(&shared))),
        ("uniform-bound audit", Box::new(bound_audit)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run().unwrap_or_else(|e| Verdict { passed: false, detail: format!("error: {e}") });
        failed += usize::from(!v.passed);
        println!(
            "criterion {:>2} {}: {} ({}; {:.1} s)",
            i + 1,
            if v.passed { "PASS" } else { "FAIL" },
            name,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
