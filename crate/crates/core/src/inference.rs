//! Gaussian marginal likelihood of linear observations and a Nelder–Mead
//! fit of the operator hyperparameters.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, DiffusionField, OperatorSpec, ScalarField, SparsePrecision, TensorCoefficient};
use crate::error::{FieldError, Result};
use crate::gaussian::{condition_precision, ObservationSet};
use crate::mesh::Mesh;

/// Largest observation count handled by the dense `Σ_θ` path.
pub const MAX_DENSE_OBSERVATIONS: usize = 2000;

/// Hyperparameters: reaction scale `m`, interface penalty `alpha` (shared by
/// every interface of the mesh) and the vertical/horizontal diffusion ratio
/// `anisotropy` (2D only, 1 means isotropic).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub m: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "one")]
    pub anisotropy: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamName {
    M,
    Alpha,
    Anisotropy,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::M => "m",
            ParamName::Alpha => "alpha",
            ParamName::Anisotropy => "anisotropy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "m" => Ok(ParamName::M),
            "alpha" => Ok(ParamName::Alpha),
            "anisotropy" => Ok(ParamName::Anisotropy),
            other => Err(FieldError::Config(format!("unknown parameter `{other}` (expected m, alpha, anisotropy)"))),
        }
    }

    // Unconstrained coordinate used by the optimizer.
    fn to_free(self, v: f64) -> f64 {
        match self {
            ParamName::Alpha => v.ln_1p(),
            _ => v.ln(),
        }
    }

    fn from_free(self, u: f64) -> f64 {
        match self {
            ParamName::Alpha => u.abs().exp_m1(),
            _ => u.exp(),
        }
    }
}

impl ParameterVector {
    pub fn new(m: f64) -> Self {
        ParameterVector { m, alpha: 0.0, anisotropy: 1.0 }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        ParameterVector { alpha, ..self }
    }

    pub fn with_anisotropy(self, anisotropy: f64) -> Self {
        ParameterVector { anisotropy, ..self }
    }

    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::M => self.m,
            ParamName::Alpha => self.alpha,
            ParamName::Anisotropy => self.anisotropy,
        }
    }

    pub fn set(&mut self, name: ParamName, value: f64) {
        match name {
            ParamName::M => self.m = value,
            ParamName::Alpha => self.alpha = value,
            ParamName::Anisotropy => self.anisotropy = value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(FieldError::Model(format!("m must be positive, got {}", self.m)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FieldError::Model(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.anisotropy > 0.0 && self.anisotropy.is_finite()) {
            return Err(FieldError::Model(format!("anisotropy must be positive, got {}", self.anisotropy)));
        }
        Ok(())
    }
}

impl std::fmt::Display for ParameterVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(m={}, alpha={}, anisotropy={})", self.m, self.alpha, self.anisotropy)
    }
}

/// Mesh plus an operator whose reaction, interface penalties and diffusion
/// anisotropy are overwritten by a [`ParameterVector`].
#[derive(Debug, Clone)]
pub struct ModelTemplate {
    pub mesh: Mesh,
    pub base: OperatorSpec,
}

impl ModelTemplate {
    pub fn new(mesh: Mesh, base: OperatorSpec) -> Self {
        ModelTemplate { mesh, base }
    }

    /// Operator at `theta`: reaction `m²`, every interface at `alpha`, and for
    /// anisotropy `ρ ≠ 1` a diagonal tensor `diag(a, ρ²a)` built from the
    /// constant isotropic diffusion `a`.
    pub fn spec_for(&self, theta: &ParameterVector) -> Result<OperatorSpec> {
        theta.validate()?;
        let mut spec = self.base.clone();
        spec.reaction = ScalarField::constant(theta.m * theta.m);
        for id in self.mesh.interface_ids() {
            spec.interface_penalties.insert(id, theta.alpha);
        }
        if theta.anisotropy != 1.0 {
            if self.mesh.dim() != 2 {
                return Err(FieldError::Config("anisotropy applies to 2D grids only".into()));
            }
            let a = match &spec.diffusion {
                DiffusionField::Isotropic(ScalarField::Constant { value }) => *value,
                _ => {
                    return Err(FieldError::Config(
                        "anisotropy needs a constant isotropic base diffusion".into(),
                    ))
                }
            };
            let r2 = theta.anisotropy * theta.anisotropy;
            spec.diffusion = DiffusionField::Tensor(TensorCoefficient { xx: a, xy: 0.0, yy: a * r2 });
        }
        Ok(spec)
    }

    pub fn assemble(&self, theta: &ParameterVector) -> Result<SparsePrecision> {
        let spec = self.spec_for(theta)?;
        assemble(&self.mesh, &spec).map_err(|e| match e {
            FieldError::Model(msg) | FieldError::Numeric(msg) => FieldError::Model(format!("at θ = {theta}: {msg}")),
            other => other,
        })
    }
}

fn check_rows(q: &SparsePrecision, obs: &ObservationSet) -> Result<()> {
    if obs.len() > MAX_DENSE_OBSERVATIONS {
        return Err(FieldError::Config(format!(
            "{} observations exceed the dense likelihood limit of {MAX_DENSE_OBSERVATIONS}",
            obs.len()
        )));
    }
    let n = q.dim();
    if obs.rows().iter().flatten().any(|(d, _)| *d >= n) {
        return Err(FieldError::Domain(format!("observations reference dofs outside 0..{n}")));
    }
    Ok(())
}

fn gauss_constant(k: usize) -> f64 {
    -0.5 * k as f64 * (2.0 * PI).ln()
}

/// `ℓ = −½ zᵀΣ⁻¹z − ½ log det Σ − (k/2) log 2π` with
/// `Σ = R Q⁻¹ Rᵀ + N`, built column by column from sparse solves.
pub fn loglik_dense(q: &SparsePrecision, obs: &ObservationSet) -> Result<f64> {
    check_rows(q, obs)?;
    let k = obs.len();
    if k == 0 {
        return Ok(0.0);
    }
    let n = q.dim();
    let factor = q.factor().map_err(|e| FieldError::Model(e.to_string()))?;
    let mut sigma = DMatrix::zeros(k, k);
    for (b, row_b) in obs.rows().iter().enumerate() {
        let mut rhs = vec![0.0; n];
        for &(d, w) in row_b {
            rhs[d] += w;
        }
        let x = factor.solve(&rhs);
        for (a, row_a) in obs.rows().iter().enumerate() {
            sigma[(a, b)] = row_a.iter().map(|&(d, w)| w * x[d]).sum();
        }
    }
    let t = sigma.transpose();
    sigma = (&sigma + t) * 0.5;
    for (a, v) in obs.noise_variances().iter().enumerate() {
        sigma[(a, a)] += v;
    }
    let chol = sigma
        .cholesky()
        .ok_or_else(|| FieldError::Numeric("observation covariance is not positive definite".into()))?;
    let z = DVector::from_column_slice(obs.values());
    let w = chol.solve(&z);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().take(k).map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * z.dot(&w) - 0.5 * log_det + gauss_constant(k))
}

/// Same likelihood through the precision identities
/// `log det Σ = log det Q_post − log det Q + log det N` and
/// `zᵀΣ⁻¹z = zᵀN⁻¹z − bᵀQ_post⁻¹b`, `b = RᵀN⁻¹z`. Needs positive noise.
pub fn loglik_precision(q: &SparsePrecision, obs: &ObservationSet) -> Result<f64> {
    check_rows(q, obs)?;
    let k = obs.len();
    if k == 0 {
        return Ok(0.0);
    }
    let prior = q.factor().map_err(|e| FieldError::Model(e.to_string()))?;
    let post = condition_precision(q, obs)?;
    let mut b = vec![0.0; q.dim()];
    let mut znz = 0.0;
    let mut log_det_n = 0.0;
    for ((row, &z), &v) in obs.rows().iter().zip(obs.values()).zip(obs.noise_variances()) {
        znz += z * z / v;
        log_det_n += v.ln();
        for &(d, w) in row {
            b[d] += w * z / v;
        }
    }
    // the posterior mean already is Q_post⁻¹ b
    let quad = znz - b.iter().zip(post.mean()).map(|(x, y)| x * y).sum::<f64>();
    let log_det = post.log_det() - prior.log_det() + log_det_n;
    Ok(-0.5 * quad - 0.5 * log_det + gauss_constant(k))
}

/// Marginal log-likelihood of `obs` under the template at `theta`.
pub fn marginal_loglik(theta: &ParameterVector, template: &ModelTemplate, obs: &ObservationSet) -> Result<f64> {
    let q = template.assemble(theta)?;
    loglik_dense(&q, obs).map_err(|e| match e {
        FieldError::Model(msg) | FieldError::Numeric(msg) => FieldError::Model(format!("at θ = {theta}: {msg}")),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Maximum number of likelihood evaluations.
    pub budget: usize,
    /// Stop when the simplex values span less than this.
    pub f_tol: f64,
    /// ... and its vertices lie within this distance (free coordinates).
    pub x_tol: f64,
    /// Initial simplex step in free coordinates.
    pub step: f64,
    /// Optional box constraints in natural units.
    pub bounds: BTreeMap<ParamName, (f64, f64)>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { budget: 400, f_tol: 1e-9, x_tol: 1e-7, step: 0.5, bounds: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub theta: ParameterVector,
    /// `None` where the operator was invalid at `theta`.
    pub loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: ParameterVector,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
}

/// Maximizes [`marginal_loglik`] over the `free` parameters with Nelder–Mead
/// on `log m`, `log ρ` and `log(1+α)` (α reflected at zero). Deterministic in
/// `init`. Running out of budget is not an error: the best point is
/// returned with `converged = false`.
pub fn fit(
    template: &ModelTemplate,
    obs: &ObservationSet,
    init: ParameterVector,
    free: &[ParamName],
    options: &FitOptions,
) -> Result<FitResult> {
    if free.is_empty() || free.len() > 3 {
        return Err(FieldError::Config(format!("fit needs 1 to 3 free parameters, got {}", free.len())));
    }
    for (i, p) in free.iter().enumerate() {
        if free[..i].contains(p) {
            return Err(FieldError::Config(format!("parameter {} listed twice", p.as_str())));
        }
    }
    init.validate()?;
    for (name, (lo, hi)) in &options.bounds {
        let v = init.get(*name);
        if !(lo <= hi) || v < *lo || v > *hi {
            return Err(FieldError::Config(format!(
                "initial {} = {v} outside bounds [{lo}, {hi}]",
                name.as_str()
            )));
        }
    }
    // Surface the first evaluation's input errors (bad mesh/obs) eagerly.
    let first = marginal_loglik(&init, template, obs)?;

    let to_theta = |u: &[f64]| {
        let mut theta = init;
        for (name, &x) in free.iter().zip(u) {
            theta.set(*name, name.from_free(x));
        }
        theta
    };
    let mut trace = vec![TraceEntry { theta: init, loglik: Some(first) }];
    let objective = |u: &[f64], trace: &mut Vec<TraceEntry>| -> f64 {
        let theta = to_theta(u);
        let in_bounds = options.bounds.iter().all(|(name, (lo, hi))| {
            let v = theta.get(*name);
            v >= *lo && v <= *hi
        });
        let value = if in_bounds { marginal_loglik(&theta, template, obs).ok() } else { None };
        let value = value.filter(|v| v.is_finite());
        trace.push(TraceEntry { theta, loglik: value });
        value.map_or(f64::INFINITY, |v| -v)
    };

    let x0: Vec<f64> = free.iter().map(|p| p.to_free(init.get(*p))).collect();
    let dim = x0.len();
    let mut simplex = vec![(x0.clone(), -first)];
    for i in 0..dim {
        let mut x = x0.clone();
        x[i] += options.step;
        let f = objective(&x, &mut trace);
        simplex.push((x, f));
    }
    let mut converged = false;
    while trace.len() < options.budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_span = simplex[dim].1 - simplex[0].1;
        let x_span = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_span.is_finite() && f_span <= options.f_tol && x_span <= options.x_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let toward = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + t * (w - c)).collect()
        };
        let worst = simplex[dim].clone();
        let xr = toward(-1.0, &worst.0);
        let fr = objective(&xr, &mut trace);
        if fr < simplex[0].1 {
            let xe = toward(-2.0, &worst.0);
            let fe = objective(&xe, &mut trace);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = toward(-0.5, &worst.0);
                let fc = objective(&xc, &mut trace);
                (xc, fc)
            } else {
                let xc = toward(0.5, &worst.0);
                let fc = objective(&xc, &mut trace);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let f = objective(&x, &mut trace);
                    *v = (x, f);
                }
            }
        }
    }
    // Best over everything evaluated, not just the final simplex.
    let best = trace
        .iter()
        .filter_map(|t| t.loglik.map(|l| (t.theta, l)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("initial point was evaluated");
    Ok(FitResult { theta: best.0, loglik: best.1, converged, evaluations: trace.len(), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::BoundaryCondition;
    use crate::gaussian::{point_row, sample_prior};
    use crate::mesh::Mesh1D;
    use crate::sparse::CsrMatrix;
    use approx::assert_abs_diff_eq;

    fn scalar(q: f64) -> SparsePrecision {
        SparsePrecision::from_matrix(CsrMatrix::from_triplets(1, 1, &[(0, 0, q)])).unwrap()
    }

    fn template(m_elems: usize, interfaces: &[f64]) -> ModelTemplate {
        let mesh = Mesh::Interval(Mesh1D::uniform_interval(2.0, m_elems, interfaces).unwrap());
        let base = OperatorSpec::whittle(1.0).with_all_bcs(&mesh, BoundaryCondition::Dirichlet);
        ModelTemplate::new(mesh, base)
    }

    fn observe(t: &ModelTemplate, theta: &ParameterVector, xs: &[f64], sd: f64, seed: u64) -> ObservationSet {
        let q = t.assemble(theta).unwrap();
        let z = sample_prior(&q, 1, seed).unwrap();
        let field: Vec<f64> = z.column(0).iter().copied().collect();
        let rows: Vec<_> = xs.iter().map(|&x| point_row(&q, &t.mesh, &[x, 0.0]).unwrap()).collect();
        let values = rows
            .iter()
            .enumerate()
            .map(|(k, r)| r.iter().map(|&(d, w)| w * field[d]).sum::<f64>() + sd * ((k as f64 * 1.7).sin()))
            .collect();
        ObservationSet::new(rows, values, vec![sd * sd; xs.len()], q.dim()).unwrap()
    }

    #[test]
    fn scalar_formula() {
        let (q, z, s2) = (2.0, 0.7, 0.3);
        let obs = ObservationSet::new(vec![vec![(0, 1.0)]], vec![z], vec![s2], 1).unwrap();
        let v = 1.0 / q + s2;
        let expected = -0.5 * z * z / v - 0.5 * v.ln() - 0.5 * (2.0 * PI).ln();
        assert_abs_diff_eq!(loglik_dense(&scalar(q), &obs).unwrap(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(loglik_precision(&scalar(q), &obs).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_data_is_log_det_only() {
        let t = template(40, &[]);
        let q = t.assemble(&ParameterVector::new(1.3)).unwrap();
        let rows: Vec<_> = [0.3, 0.9, 1.5].iter().map(|&x| point_row(&q, &t.mesh, &[x, 0.0]).unwrap()).collect();
        let obs = ObservationSet::new(rows, vec![0.0; 3], vec![0.01; 3], q.dim()).unwrap();
        let l = loglik_dense(&q, &obs).unwrap();
        let shifted = obs.with_values(vec![0.1, 0.0, 0.0]).unwrap();
        assert!(loglik_dense(&q, &shifted).unwrap() < l);
    }

    #[test]
    fn permutation_and_forms_agree() {
        let t = template(60, &[1.0]);
        let theta = ParameterVector::new(1.5).with_alpha(3.0);
        let xs = [0.1, 0.35, 0.8, 0.95, 1.05, 1.4, 1.77];
        let obs = observe(&t, &theta, &xs, 0.1, 3);
        let q = t.assemble(&theta).unwrap();
        let dense = loglik_dense(&q, &obs).unwrap();
        let prec = loglik_precision(&q, &obs).unwrap();
        assert!((dense - prec).abs() < 1e-8 * dense.abs().max(1.0), "{dense} vs {prec}");
        let perm = obs.permuted(&[6, 2, 0, 5, 3, 1, 4]);
        assert!((loglik_dense(&q, &perm).unwrap() - dense).abs() < 1e-12);
    }

    #[test]
    fn no_nan_on_a_grid_sweep() {
        let t = template(50, &[1.0]);
        let obs = observe(&t, &ParameterVector::new(2.0), &[0.2, 0.7, 1.2, 1.6], 0.05, 1);
        for i in 0..20 {
            let theta = ParameterVector::new(0.2 + 0.4 * i as f64).with_alpha(i as f64 * 2.5);
            assert!(marginal_loglik(&theta, &t, &obs).unwrap().is_finite());
        }
    }

    #[test]
    fn invalid_theta_is_a_model_error() {
        let t = template(10, &[]);
        let obs = ObservationSet::empty();
        assert!(matches!(marginal_loglik(&ParameterVector::new(-1.0), &t, &obs), Err(FieldError::Model(_))));
        let aniso = ParameterVector::new(1.0).with_anisotropy(2.0);
        assert!(matches!(marginal_loglik(&aniso, &t, &obs), Err(FieldError::Config(_))));
    }

    #[test]
    fn fit_improves_on_truth_and_start() {
        let t = template(80, &[]);
        let truth = ParameterVector::new(2.0);
        let xs: Vec<f64> = (1..30).map(|i| i as f64 * 2.0 / 30.0).collect();
        let obs = observe(&t, &truth, &xs, 0.05, 11);
        let res = fit(&t, &obs, ParameterVector::new(0.7), &[ParamName::M], &FitOptions::default()).unwrap();
        assert!(res.converged);
        let l_true = marginal_loglik(&truth, &t, &obs).unwrap();
        assert!(res.loglik >= l_true - 1e-9);
        assert_eq!(res.trace.len(), res.evaluations);
        let again = fit(&t, &obs, ParameterVector::new(0.7), &[ParamName::M], &FitOptions::default()).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let t = template(40, &[1.0]);
        let obs = observe(&t, &ParameterVector::new(1.0), &[0.3, 0.9, 1.3], 0.1, 2);
        let opts = FitOptions { budget: 5, ..FitOptions::default() };
        let res = fit(&t, &obs, ParameterVector::new(1.0), &[ParamName::M, ParamName::Alpha], &opts).unwrap();
        assert!(!res.converged);
        assert!(res.evaluations <= 8);
    }

    #[test]
    fn alpha_stays_nonnegative() {
        let mut p = ParameterVector::new(1.0);
        for u in [-3.0, -0.1, 0.0, 2.0] {
            p.set(ParamName::Alpha, ParamName::Alpha.from_free(u));
            assert!(p.alpha >= 0.0);
        }
        assert_abs_diff_eq!(ParamName::Alpha.from_free(ParamName::Alpha.to_free(5.0)), 5.0, epsilon = 1e-12);
    }
}
