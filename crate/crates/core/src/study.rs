//! Convergence studies against fine-mesh surrogates of the continuous
//! problems, and their CSV output.
//!
//! The "continuous" optimum of either formulation is replaced by the discrete
//! optimum on a reference mesh that is a uniform refinement of every study
//! mesh. Coarse functions are compared after exact prolongation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::analysis::{
    audit_uniform_bounds, contraction_constants, fit_rate, BoundAudit, ConstantsReport, DiscreteConstants,
    EigenOptions, RateFit,
};
use crate::control::{ControlProblem, FixedPointOptions, Optimum, Relaxation};
use crate::error::{Error, Result};
use crate::fem::{FeFunction, NormKind, P1Space, Transfer};
use crate::mesh::{Mesh, Side};
use crate::solvers::{EllipticOperator, ProblemSpec, Variant};
use crate::sparse::DEFAULT_LINEAR_TOL;

/// Smooth targets available by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinField {
    /// `x·y`
    Xy,
    /// `sin(πx)·sin(πy)`
    SinSin,
    /// `exp(−20((x − ½)² + (y − ½)²))`
    Gauss,
}

impl BuiltinField {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            BuiltinField::Xy => x * y,
            BuiltinField::SinSin => (PI * x).sin() * (PI * y).sin(),
            BuiltinField::Gauss => (-20.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinField::Xy => "xy",
            BuiltinField::SinSin => "sinsin",
            BuiltinField::Gauss => "gauss",
        }
    }
}

impl std::str::FromStr for BuiltinField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(BuiltinField::Xy),
            "sinsin" => Ok(BuiltinField::SinSin),
            "gauss" => Ok(BuiltinField::Gauss),
            other => Err(Error::Validation(format!("unknown field `{other}` (expected xy, sinsin or gauss)"))),
        }
    }
}

/// How the desired state is built on each mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Constant(f64),
    /// Nodal interpolant of a builtin field.
    Field(BuiltinField),
    /// The state produced by zero controls on the same mesh, which makes the
    /// zero control optimal.
    ZeroControlState,
}

impl Target {
    pub fn on(&self, space: &Arc<P1Space>, b: f64) -> Result<FeFunction> {
        match *self {
            Target::Constant(c) => Ok(FeFunction::constant(space.mesh().clone(), c)),
            Target::Field(f) => space.interpolate(|x, y| f.eval(x, y)),
            Target::ZeroControlState => {
                let op = EllipticOperator::new(space.clone(), Variant::Dirichlet)?;
                op.state_from_load(b, &vec![0.0; space.dim()], None)
            }
        }
    }
}

/// Experiment design for every study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Subdivisions per side of the study meshes, strictly increasing.
    pub levels: Vec<usize>,
    pub gamma1: Vec<Side>,
    pub b: f64,
    pub m1: f64,
    pub m2: f64,
    pub target: Target,
    /// Robin coefficients, each at least 1.
    pub alphas: Vec<f64>,
    /// Subdivisions of the reference mesh.
    pub reference_n: usize,
    pub output_dir: PathBuf,
    /// Mesh of the α-sweep.
    pub alpha_n: usize,
    /// Diagonal sequence `(n0·2^k, alpha0·10^k)` for `k < steps`.
    pub diagonal_n0: usize,
    pub diagonal_steps: usize,
    pub diagonal_alpha0: f64,
    pub fixed_point: FixedPointOptions,
    pub linear_tol: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            levels: vec![8, 16, 32],
            gamma1: vec![Side::Bottom],
            b: 1.0,
            m1: 1.0,
            m2: 1.0,
            target: Target::Field(BuiltinField::Xy),
            alphas: vec![10.0],
            reference_n: 256,
            output_dir: PathBuf::from("out"),
            alpha_n: 16,
            diagonal_n0: 8,
            diagonal_steps: 3,
            diagonal_alpha0: 10.0,
            fixed_point: FixedPointOptions { relaxation: Relaxation::Auto, ..FixedPointOptions::default() },
            linear_tol: DEFAULT_LINEAR_TOL,
        }
    }
}

const REQUIRED_KEYS: [&str; 9] = [
    "mesh.levels",
    "mesh.gamma1",
    "problem.b",
    "problem.M1",
    "problem.M2",
    "zd.kind",
    "alpha.list",
    "reference.n",
    "output.dir",
];

const OPTIONAL_KEYS: [&str; 10] = [
    "zd.value",
    "zd.field",
    "alpha.n",
    "diagonal.n0",
    "diagonal.steps",
    "diagonal.alpha0",
    "solver.tol",
    "solver.max_iter",
    "solver.relaxation",
    "linear.tol",
];

impl StudyConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Config { path: origin.to_string(), line, message };
        let mut entries: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !REQUIRED_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
                return Err(err(i + 1, format!("unknown key `{key}`")));
            }
            if entries.insert(key, (i + 1, value.trim())).is_some() {
                return Err(err(i + 1, format!("duplicate key `{key}`")));
            }
        }
        if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !entries.contains_key(*k)) {
            return Err(err(0, format!("missing required key `{missing}`")));
        }

        fn parse_one<T: std::str::FromStr>(line: usize, key: &str, v: &str, err: &dyn Fn(usize, String) -> Error) -> Result<T> {
            v.trim().parse().map_err(|_| err(line, format!("invalid value `{v}` for `{key}`")))
        }
        let get = |key: &str| entries.get(key).copied();
        let scalar = |key: &str| -> Result<Option<f64>> {
            get(key).map(|(l, v)| parse_one::<f64>(l, key, v, &err)).transpose()
        };
        let integer = |key: &str| -> Result<Option<usize>> {
            get(key).map(|(l, v)| parse_one::<usize>(l, key, v, &err)).transpose()
        };
        let list = |key: &str| -> Result<Vec<(usize, String)>> {
            let (l, v) = get(key).expect("required key present");
            Ok(v.split(',').map(|s| (l, s.trim().to_string())).filter(|(_, s)| !s.is_empty()).collect())
        };

        let mut c = StudyConfig::default();
        c.levels = list("mesh.levels")?
            .into_iter()
            .map(|(l, s)| parse_one::<usize>(l, "mesh.levels", &s, &err))
            .collect::<Result<_>>()?;
        c.gamma1 = list("mesh.gamma1")?
            .into_iter()
            .map(|(l, s)| s.parse::<Side>().map_err(|e| err(l, e.to_string())))
            .collect::<Result<_>>()?;
        c.b = scalar("problem.b")?.expect("required");
        c.m1 = scalar("problem.M1")?.expect("required");
        c.m2 = scalar("problem.M2")?.expect("required");
        let (kind_line, kind) = get("zd.kind").expect("required");
        c.target = match kind {
            "constant" => Target::Constant(scalar("zd.value")?.ok_or_else(|| err(kind_line, "zd.kind = constant needs zd.value".into()))?),
            "field" => {
                let (l, f) = get("zd.field").ok_or_else(|| err(kind_line, "zd.kind = field needs zd.field".into()))?;
                Target::Field(f.parse().map_err(|e: Error| err(l, e.to_string()))?)
            }
            "zero-control-state" => Target::ZeroControlState,
            other => return Err(err(kind_line, format!("unknown zd.kind `{other}` (expected constant, field or zero-control-state)"))),
        };
        c.alphas = list("alpha.list")?
            .into_iter()
            .map(|(l, s)| parse_one::<f64>(l, "alpha.list", &s, &err))
            .collect::<Result<_>>()?;
        c.reference_n = integer("reference.n")?.expect("required");
        c.output_dir = PathBuf::from(get("output.dir").expect("required").1);
        if let Some(v) = integer("alpha.n")? {
            c.alpha_n = v;
        }
        if let Some(v) = integer("diagonal.n0")? {
            c.diagonal_n0 = v;
        }
        if let Some(v) = integer("diagonal.steps")? {
            c.diagonal_steps = v;
        }
        if let Some(v) = scalar("diagonal.alpha0")? {
            c.diagonal_alpha0 = v;
        }
        if let Some(v) = scalar("solver.tol")? {
            c.fixed_point.tol = v;
        }
        if let Some(v) = integer("solver.max_iter")? {
            c.fixed_point.max_iter = v;
        }
        if let Some((l, v)) = get("solver.relaxation") {
            c.fixed_point.relaxation = match v {
                "auto" => Relaxation::Auto,
                "none" => Relaxation::None,
                w => Relaxation::Fixed(parse_one::<f64>(l, "solver.relaxation", w, &err)?),
            };
        }
        if let Some(v) = scalar("linear.tol")? {
            c.linear_tol = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.levels.is_empty() || self.levels.contains(&0) {
            return fail("mesh.levels must be a nonempty list of positive integers".into());
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return fail("mesh.levels must be strictly increasing".into());
        }
        let max = *self.levels.last().expect("nonempty");
        if self.reference_n < 4 * max {
            return fail(format!("reference.n = {} must be at least 4 x {max}", self.reference_n));
        }
        if let Some(n) = self.levels.iter().find(|&&n| self.reference_n % n != 0) {
            return fail(format!("reference.n = {} is not a multiple of level {n}", self.reference_n));
        }
        let mut sides = self.gamma1.clone();
        sides.sort();
        sides.dedup();
        if sides.is_empty() || sides.len() == Side::ALL.len() {
            return fail("mesh.gamma1 must be a nonempty proper subset of bottom, right, top, left".into());
        }
        for (name, v) in [("problem.b", self.b), ("problem.M1", self.m1), ("problem.M2", self.m2)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        match self.target {
            Target::Constant(v) if !v.is_finite() => return fail(format!("zd.value must be finite, got {v}")),
            _ => {}
        }
        if self.alphas.is_empty() {
            return fail("alpha.list must not be empty".into());
        }
        if let Some(a) = self.alphas.iter().find(|&&a| !(a >= 1.0 && a.is_finite())) {
            return fail(format!("every alpha must be finite and at least 1, got {a}"));
        }
        if self.alpha_n == 0 {
            return fail("alpha.n must be positive".into());
        }
        if self.diagonal_n0 == 0 || self.diagonal_steps == 0 {
            return fail("diagonal.n0 and diagonal.steps must be positive".into());
        }
        if !(self.diagonal_alpha0 >= 1.0 && self.diagonal_alpha0.is_finite()) {
            return fail(format!("diagonal.alpha0 must be at least 1, got {}", self.diagonal_alpha0));
        }
        let last = self.diagonal_sequence().last().expect("nonempty").0;
        if self.reference_n < 4 * last || self.reference_n % last != 0 {
            return fail(format!("reference.n = {} must be a multiple of, and at least 4 x, the last diagonal level {last}", self.reference_n));
        }
        if !(self.fixed_point.tol > 0.0) || self.fixed_point.max_iter == 0 {
            return fail("solver.tol and solver.max_iter must be positive".into());
        }
        if let Relaxation::Fixed(w) = self.fixed_point.relaxation {
            if !(w > 0.0 && w <= 1.0) {
                return fail(format!("solver.relaxation must be auto, none or a number in (0, 1], got {w}"));
            }
        }
        if !(self.linear_tol > 0.0 && self.linear_tol < 1.0) {
            return fail(format!("linear.tol must lie in (0, 1), got {}", self.linear_tol));
        }
        Ok(())
    }

    /// The pairs `(n_k, α_k)` of the diagonal study.
    pub fn diagonal_sequence(&self) -> Vec<(usize, f64)> {
        (0..self.diagonal_steps)
            .map(|k| (self.diagonal_n0 << k, self.diagonal_alpha0 * 10f64.powi(k as i32)))
            .collect()
    }

    /// Space on an `n × n` study mesh.
    pub fn space(&self, n: usize) -> Result<Arc<P1Space>> {
        Ok(Arc::new(P1Space::from_mesh(Mesh::unit_square(n, &self.gamma1)?)?))
    }

    /// The control problem of one variant on a given space.
    pub fn problem(&self, space: &Arc<P1Space>, variant: Variant) -> Result<ControlProblem> {
        let z_d = self.target.on(space, self.b)?;
        let spec = ProblemSpec::new(self.b, z_d, self.m1, self.m2, variant.alpha())?;
        Ok(ControlProblem::new(space.clone(), spec)?.with_linear_tol(self.linear_tol))
    }

    pub fn variants(&self) -> Vec<Variant> {
        std::iter::once(Variant::Dirichlet).chain(self.alphas.iter().map(|&a| Variant::Robin(a))).collect()
    }
}

/// A solved discrete problem.
#[derive(Debug)]
pub struct Solved {
    pub problem: ControlProblem,
    pub optimum: Optimum,
}

impl Solved {
    pub fn space(&self) -> &Arc<P1Space> {
        self.problem.space()
    }
}

fn variant_key(v: Variant) -> u64 {
    v.alpha_or_inf().to_bits()
}

type Slot = Arc<Mutex<Option<Arc<Solved>>>>;

/// Shares the expensive reference solves between studies.
#[derive(Debug)]
pub struct StudyContext {
    config: StudyConfig,
    reference_space: Mutex<Option<Arc<P1Space>>>,
    references: Mutex<HashMap<u64, Slot>>,
}

impl StudyContext {
    pub fn new(config: StudyConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, reference_space: Mutex::new(None), references: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn reference_space(&self) -> Result<Arc<P1Space>> {
        let mut slot = self.reference_space.lock().expect("poisoned");
        if let Some(s) = slot.as_ref() {
            return Ok(s.clone());
        }
        let s = self.config.space(self.config.reference_n)?;
        *slot = Some(s.clone());
        Ok(s)
    }

    /// Surrogate optimum of the continuous problem for `variant`.
    pub fn reference(&self, variant: Variant) -> Result<Arc<Solved>> {
        let slot = self.references.lock().expect("poisoned").entry(variant_key(variant)).or_default().clone();
        let mut guard = slot.lock().expect("poisoned");
        if let Some(r) = guard.as_ref() {
            return Ok(r.clone());
        }
        let solved = Arc::new(solve(&self.config, &self.reference_space()?, variant)?);
        *guard = Some(solved.clone());
        Ok(solved)
    }

    /// Solves the references of several variants concurrently.
    pub fn prepare(&self, variants: &[Variant]) -> Result<()> {
        variants.par_iter().try_for_each(|&v| self.reference(v).map(|_| ()))
    }
}

fn solve(config: &StudyConfig, space: &Arc<P1Space>, variant: Variant) -> Result<Solved> {
    let problem = config.problem(space, variant)?;
    let optimum = problem.solve_fixed_point(config.fixed_point)?;
    Ok(Solved { problem, optimum })
}

/// Distances between a coarse solution and a fine one, measured on the fine mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    /// H×Q distance of the controls.
    pub control: f64,
    /// V distance of the states.
    pub state: f64,
    /// V distance of the adjoint states.
    pub adjoint: f64,
}

impl Distances {
    const NAN: Distances = Distances { control: f64::NAN, state: f64::NAN, adjoint: f64::NAN };
}

pub fn distances(coarse: &Solved, fine: &Solved) -> Result<Distances> {
    let fs = fine.space();
    let t = Transfer::new(coarse.space().mesh(), fs.mesh())?;
    let c = t.control(&coarse.optimum.control, fs)?;
    let u = t.function(&coarse.optimum.state)?;
    let p = t.function(&coarse.optimum.adjoint)?;
    Ok(Distances {
        control: fs.control_norm(&c.add_scaled(&fine.optimum.control, -1.0)?)?,
        state: fs.norm(&u.add_scaled(&fine.optimum.state, -1.0)?, NormKind::V)?,
        adjoint: fs.norm(&p.add_scaled(&fine.optimum.adjoint, -1.0)?, NormKind::V)?,
    })
}

/// One row of the h-study.
#[derive(Debug, Clone, PartialEq)]
pub struct HRecord {
    pub n: usize,
    pub h: f64,
    pub variant: Variant,
    pub errors: Distances,
    pub cost: f64,
    pub iterations: usize,
    pub failure: Option<String>,
}

/// One row of the α-study.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRecord {
    pub h: f64,
    pub alpha: f64,
    /// Robin optimum against the Dirichlet optimum on the same mesh.
    pub errors: Distances,
    /// V distance of the states for the fixed control pair.
    pub fixed_state: f64,
    /// V distance of the adjoint states for the fixed control pair.
    pub fixed_adjoint: f64,
    pub cost: f64,
    pub iterations: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalRecord {
    pub k: usize,
    pub n: usize,
    pub h: f64,
    pub alpha: f64,
    /// Robin optimum against the Dirichlet reference optimum.
    pub errors: Distances,
    pub cost: f64,
    pub iterations: usize,
    pub failure: Option<String>,
}

/// Cost cross-evaluations of one level and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRecord {
    pub n: usize,
    pub h: f64,
    pub variant: Variant,
    /// Reference cost at the reference optimum.
    pub j_ref: f64,
    /// Discrete cost at the discrete optimum.
    pub j_h: f64,
    /// Reference cost at the discrete optimum.
    pub j_at_h: f64,
    /// Discrete cost at the reference optimum.
    pub j_h_at_ref: f64,
    pub failure: Option<String>,
}

impl GapRecord {
    /// `J(c_h) − J(c)`, nonnegative.
    pub fn gap_fine(&self) -> f64 {
        self.j_at_h - self.j_ref
    }

    /// `J_h(c) − J_h(c_h)`, nonnegative.
    pub fn gap_discrete(&self) -> f64 {
        self.j_h_at_ref - self.j_h
    }

    /// `J(c) − J_h(c_h)`, of either sign.
    pub fn gap_mixed(&self) -> f64 {
        self.j_ref - self.j_h
    }
}

/// A fitted rate for one quantity of one study variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub study: &'static str,
    pub variant: Variant,
    pub quantity: &'static str,
    pub fit: Option<RateFit>,
    pub warning: Option<String>,
}

/// Fits below this r² are flagged.
pub const R_SQUARED_WARNING: f64 = 0.98;

fn summarize(study: &'static str, variant: Variant, quantity: &'static str, points: Vec<(f64, f64)>) -> RateSummary {
    match fit_rate(&points) {
        Ok(fit) => {
            let warning = (fit.r_squared < R_SQUARED_WARNING).then(|| format!("r_squared {:.4} below {R_SQUARED_WARNING}", fit.r_squared));
            RateSummary { study, variant, quantity, fit: Some(fit), warning }
        }
        Err(e) => RateSummary { study, variant, quantity, fit: None, warning: Some(e.to_string()) },
    }
}

fn sort_key(h: f64, v: Variant) -> (f64, f64) {
    (h, v.alpha_or_inf())
}

fn cmp_key(a: (f64, f64), b: (f64, f64)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
}

/// Discrete optima on every level and variant against their references.
pub fn study_h(ctx: &StudyContext) -> Result<(Vec<HRecord>, Vec<RateSummary>)> {
    let config = ctx.config();
    let variants = config.variants();
    ctx.prepare(&variants)?;
    let cases: Vec<(usize, Variant)> = config.levels.iter().flat_map(|&n| variants.iter().map(move |&v| (n, v))).collect();
    let mut records: Vec<HRecord> = cases
        .par_iter()
        .map(|&(n, variant)| -> Result<HRecord> {
            let space = config.space(n)?;
            let h = space.mesh().h();
            let outcome = solve(config, &space, variant).and_then(|s| {
                let d = distances(&s, &*ctx.reference(variant)?)?;
                Ok((s, d))
            });
            Ok(match outcome {
                Ok((s, errors)) => HRecord { n, h, variant, errors, cost: s.optimum.cost, iterations: s.optimum.iterations, failure: None },
                Err(e) if e.is_validation() => return Err(e),
                Err(e) => HRecord { n, h, variant, errors: Distances::NAN, cost: f64::NAN, iterations: 0, failure: Some(e.to_string()) },
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| cmp_key(sort_key(a.h, a.variant), sort_key(b.h, b.variant)));

    let mut rates = Vec::new();
    for &v in &variants {
        let rows: Vec<&HRecord> = records.iter().filter(|r| r.variant == v).collect();
        let pts = |f: fn(&HRecord) -> f64| rows.iter().map(|r| (r.h, f(r))).collect::<Vec<_>>();
        rates.push(summarize("study_h", v, "err_control", pts(|r| r.errors.control)));
        rates.push(summarize("study_h", v, "err_state", pts(|r| r.errors.state)));
        rates.push(summarize("study_h", v, "err_adjoint", pts(|r| r.errors.adjoint)));
    }
    Ok((records, rates))
}

/// Robin optima against the Dirichlet optimum on one mesh, for every α.
///
/// The fixed-control distances use the Dirichlet optimal controls.
pub fn study_alpha(config: &StudyConfig) -> Result<Vec<AlphaRecord>> {
    config.validate()?;
    let space = config.space(config.alpha_n)?;
    let h = space.mesh().h();
    let dirichlet = solve(config, &space, Variant::Dirichlet)?;
    let fixed = &dirichlet.optimum.control;
    let mut records: Vec<AlphaRecord> = config
        .alphas
        .par_iter()
        .map(|&alpha| -> Result<AlphaRecord> {
            let outcome = (|| -> Result<(Solved, Distances, f64, f64)> {
                let robin = solve(config, &space, Variant::Robin(alpha))?;
                let d = distances(&robin, &dirichlet)?;
                let u = robin.problem.state(fixed)?;
                let p = robin.problem.adjoint(&u)?;
                let fixed_state = space.norm(&u.add_scaled(&dirichlet.optimum.state, -1.0)?, NormKind::V)?;
                let fixed_adjoint = space.norm(&p.add_scaled(&dirichlet.optimum.adjoint, -1.0)?, NormKind::V)?;
                Ok((robin, d, fixed_state, fixed_adjoint))
            })();
            Ok(match outcome {
                Ok((robin, errors, fixed_state, fixed_adjoint)) => AlphaRecord {
                    h,
                    alpha,
                    errors,
                    fixed_state,
                    fixed_adjoint,
                    cost: robin.optimum.cost,
                    iterations: robin.optimum.iterations,
                    failure: None,
                },
                Err(e) if e.is_validation() => return Err(e),
                Err(e) => AlphaRecord {
                    h,
                    alpha,
                    errors: Distances::NAN,
                    fixed_state: f64::NAN,
                    fixed_adjoint: f64::NAN,
                    cost: f64::NAN,
                    iterations: 0,
                    failure: Some(e.to_string()),
                },
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    Ok(records)
}

/// Robin optima along `(n_k, α_k)` against the Dirichlet reference.
pub fn study_diagonal(ctx: &StudyContext) -> Result<Vec<DiagonalRecord>> {
    let config = ctx.config();
    let reference = ctx.reference(Variant::Dirichlet)?;
    let seq = config.diagonal_sequence();
    seq.par_iter()
        .enumerate()
        .map(|(k, &(n, alpha))| -> Result<DiagonalRecord> {
            let space = config.space(n)?;
            let h = space.mesh().h();
            let outcome = solve(config, &space, Variant::Robin(alpha)).and_then(|s| {
                let d = distances(&s, &reference)?;
                Ok((s, d))
            });
            Ok(match outcome {
                Ok((s, errors)) => DiagonalRecord { k, n, h, alpha, errors, cost: s.optimum.cost, iterations: s.optimum.iterations, failure: None },
                Err(e) if e.is_validation() => return Err(e),
                Err(e) => DiagonalRecord {
                    k,
                    n,
                    h,
                    alpha,
                    errors: Distances::NAN,
                    cost: f64::NAN,
                    iterations: 0,
                    failure: Some(e.to_string()),
                },
            })
        })
        .collect()
}

fn gap_record(config: &StudyConfig, reference: &Solved, n: usize, variant: Variant) -> Result<GapRecord> {
    let space = config.space(n)?;
    let coarse = solve(config, &space, variant)?;
    let fs = reference.space();
    let t = Transfer::new(space.mesh(), fs.mesh())?;
    let j_at_h = reference.problem.cost(&t.control(&coarse.optimum.control, fs)?)?;
    let c = &reference.optimum.control;
    let g = fs.norm(&c.g, NormKind::H)?;
    let q = fs.norm(&c.q, NormKind::Q)?;
    let j_h_at_ref = coarse.problem.cost_of_load(&t.coarse_load(fs, c)?, g * g, q * q)?;
    Ok(GapRecord {
        n,
        h: space.mesh().h(),
        variant,
        j_ref: reference.optimum.cost,
        j_h: coarse.optimum.cost,
        j_at_h,
        j_h_at_ref,
        failure: None,
    })
}

/// Cost cross-evaluations between discrete and reference optima.
pub fn study_cost_gaps(ctx: &StudyContext) -> Result<(Vec<GapRecord>, Vec<RateSummary>)> {
    let config = ctx.config();
    let variants = config.variants();
    ctx.prepare(&variants)?;
    let cases: Vec<(usize, Variant)> = config.levels.iter().flat_map(|&n| variants.iter().map(move |&v| (n, v))).collect();
    let mut records: Vec<GapRecord> = cases
        .par_iter()
        .map(|&(n, variant)| -> Result<GapRecord> {
            let reference = ctx.reference(variant)?;
            match gap_record(config, &reference, n, variant) {
                Ok(r) => Ok(r),
                Err(e) if e.is_validation() => Err(e),
                Err(e) => Ok(GapRecord {
                    n,
                    h: 1.0 / n as f64 * std::f64::consts::SQRT_2,
                    variant,
                    j_ref: reference.optimum.cost,
                    j_h: f64::NAN,
                    j_at_h: f64::NAN,
                    j_h_at_ref: f64::NAN,
                    failure: Some(e.to_string()),
                }),
            }
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| cmp_key(sort_key(a.h, a.variant), sort_key(b.h, b.variant)));

    let mut rates = Vec::new();
    for &v in &variants {
        let rows: Vec<&GapRecord> = records.iter().filter(|r| r.variant == v).collect();
        let pts = |f: fn(&GapRecord) -> f64| rows.iter().map(|r| (r.h, f(r))).collect::<Vec<_>>();
        rates.push(summarize("cost_gaps", v, "gap_fine", pts(GapRecord::gap_fine)));
        rates.push(summarize("cost_gaps", v, "gap_discrete", pts(GapRecord::gap_discrete)));
        rates.push(summarize("cost_gaps", v, "gap_mixed", pts(|r| r.gap_mixed().abs())));
    }
    Ok((records, rates))
}

/// Discrete constants on every level, one row per α.
pub fn constants_table(config: &StudyConfig) -> Result<Vec<ConstantsReport>> {
    config.validate()?;
    let per_level: Vec<DiscreteConstants> = config
        .levels
        .par_iter()
        .map(|&n| DiscreteConstants::estimate(&*config.space(n)?, EigenOptions::default()))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ConstantsReport> = per_level
        .iter()
        .flat_map(|c| config.alphas.iter().map(move |&a| contraction_constants(c, config.m1, config.m2, a)))
        .collect();
    rows.sort_by(|a, b| cmp_key((a.h, a.alpha), (b.h, b.alpha)));
    Ok(rows)
}

/// Uniform-bound audit on every level.
pub fn bound_audits(config: &StudyConfig) -> Result<Vec<BoundAudit>> {
    config.validate()?;
    let mut audits: Vec<BoundAudit> = config
        .levels
        .par_iter()
        .map(|&n| {
            let space = config.space(n)?;
            let consts = DiscreteConstants::estimate(&space, EigenOptions::default())?;
            let problem = config.problem(&space, Variant::Dirichlet)?;
            audit_uniform_bounds(&space, problem.spec(), &config.alphas, &consts, config.fixed_point)
        })
        .collect::<Result<_>>()?;
    audits.sort_by(|a, b| a.h.total_cmp(&b.h));
    Ok(audits)
}

/// Full-precision decimal used in every CSV.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn alpha_cell(v: Variant) -> String {
    match v {
        Variant::Dirichlet => "inf".into(),
        Variant::Robin(a) => num(a),
    }
}

pub const STUDY_H_HEADER: &str = "h,alpha,err_control,err_state,err_adjoint,J,iters";
pub const STUDY_ALPHA_HEADER: &str = "h,alpha,err_control,err_state,err_adjoint,fixed_state,fixed_adjoint,J,iters";
pub const STUDY_DIAGONAL_HEADER: &str = "k,h,alpha,err_control,err_state,err_adjoint,J,iters";
pub const COST_GAPS_HEADER: &str = "h,alpha,J_ref,J_h,J_at_h,J_h_at_ref,gap_fine,gap_discrete,gap_mixed";
pub const CONSTANTS_HEADER: &str = "h,alpha,M1,M2,lambda,lambda1,lambda_alpha,gamma_norm,C0,C0_alpha,m,M";
pub const BOUND_AUDIT_HEADER: &str = "h,alpha,name,measured,bound,satisfied";
pub const RATES_HEADER: &str = "study,variant,quantity,slope,intercept,r_squared,warning";

fn table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn study_h_csv(records: &[HRecord]) -> String {
    table(
        STUDY_H_HEADER,
        records.iter().map(|r| {
            let e = r.errors;
            [num(r.h), alpha_cell(r.variant), num(e.control), num(e.state), num(e.adjoint), num(r.cost), r.iterations.to_string()].join(",")
        }),
    )
}

pub fn study_alpha_csv(records: &[AlphaRecord]) -> String {
    table(
        STUDY_ALPHA_HEADER,
        records.iter().map(|r| {
            let e = r.errors;
            [
                num(r.h),
                num(r.alpha),
                num(e.control),
                num(e.state),
                num(e.adjoint),
                num(r.fixed_state),
                num(r.fixed_adjoint),
                num(r.cost),
                r.iterations.to_string(),
            ]
            .join(",")
        }),
    )
}

pub fn study_diagonal_csv(records: &[DiagonalRecord]) -> String {
    table(
        STUDY_DIAGONAL_HEADER,
        records.iter().map(|r| {
            let e = r.errors;
            [r.k.to_string(), num(r.h), num(r.alpha), num(e.control), num(e.state), num(e.adjoint), num(r.cost), r.iterations.to_string()].join(",")
        }),
    )
}

pub fn cost_gaps_csv(records: &[GapRecord]) -> String {
    table(
        COST_GAPS_HEADER,
        records.iter().map(|r| {
            [
                num(r.h),
                alpha_cell(r.variant),
                num(r.j_ref),
                num(r.j_h),
                num(r.j_at_h),
                num(r.j_h_at_ref),
                num(r.gap_fine()),
                num(r.gap_discrete()),
                num(r.gap_mixed()),
            ]
            .join(",")
        }),
    )
}

pub fn constants_csv(rows: &[ConstantsReport]) -> String {
    table(
        CONSTANTS_HEADER,
        rows.iter().map(|c| {
            [c.h, c.alpha, c.m1, c.m2, c.lambda, c.lambda1, c.lambda_alpha, c.gamma_norm, c.c0, c.c0_alpha, c.m, c.big_m]
                .map(num)
                .join(",")
        }),
    )
}

pub fn bound_audit_csv(audits: &[BoundAudit]) -> String {
    table(
        BOUND_AUDIT_HEADER,
        audits.iter().flat_map(|a| {
            a.records.iter().map(move |r| {
                let alpha = r.alpha.map_or_else(|| "inf".to_string(), num);
                [num(a.h), alpha, r.name.to_string(), num(r.measured), num(r.bound), r.satisfied.to_string()].join(",")
            })
        }),
    )
}

pub fn rates_csv(rates: &[RateSummary]) -> String {
    table(
        RATES_HEADER,
        rates.iter().map(|r| {
            let mut line = format!("{},{},{},", r.study, alpha_cell(r.variant), r.quantity);
            match &r.fit {
                Some(f) => write!(line, "{},{},{},", num(f.slope), num(f.intercept), num(f.r_squared)),
                None => write!(line, "nan,nan,nan,"),
            }
            .expect("write to string");
            line.push_str(&r.warning.as_deref().unwrap_or("").replace(',', ";"));
            line
        }),
    )
}

/// Writes `contents` to `dir/name`, creating `dir` when needed.
pub fn write_output(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io(&path))?;
    Ok(path)
}
