//! Exact Gaussian linear algebra on top of assembled precisions:
//! conditioning in covariance and precision form, exact interpolation,
//! Schur-complement reduction, sampling, linear images and separable
//! multivariate models.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::assembly::SparsePrecision;
use crate::error::{FieldError, Result};
use crate::mesh::{Coord, Mesh};
use crate::sparse::{CsrMatrix, SparseCholesky};

/// One sparse linear functional over the free dofs.
pub type DesignRow = Vec<(usize, f64)>;

/// Linear observations `z = R Z + ε`, `ε ~ N(0, diag(noise))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    rows: Vec<DesignRow>,
    values: Vec<f64>,
    noise_var: Vec<f64>,
}

impl ObservationSet {
    /// Validates row/value/noise lengths and that rows reference `dim` dofs.
    pub fn new(rows: Vec<DesignRow>, values: Vec<f64>, noise_var: Vec<f64>, dim: usize) -> Result<Self> {
        if rows.len() != values.len() || rows.len() != noise_var.len() {
            return Err(FieldError::Config(format!(
                "observation set has {} rows, {} values and {} noise entries",
                rows.len(),
                values.len(),
                noise_var.len()
            )));
        }
        for (k, row) in rows.iter().enumerate() {
            if let Some(&(dof, _)) = row.iter().find(|(dof, _)| *dof >= dim) {
                return Err(FieldError::Domain(format!("observation {k} references dof {dof} of {dim}")));
            }
        }
        if let Some(v) = noise_var.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(FieldError::Config(format!("noise variance {v} is invalid")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::Config("observation values must be finite".into()));
        }
        Ok(ObservationSet { rows, values, noise_var })
    }

    pub fn empty() -> Self {
        ObservationSet { rows: vec![], values: vec![], noise_var: vec![] }
    }

    /// Point evaluations at `points`: each row holds the hat-function weights
    /// of its point, with weights on eliminated (Dirichlet) nodes dropped.
    pub fn point_observations(
        prec: &SparsePrecision,
        mesh: &Mesh,
        points: &[Coord],
        values: &[f64],
        noise_sd: &[f64],
    ) -> Result<Self> {
        if mesh.node_count() != prec.node_count() {
            return Err(FieldError::Config("observations: mesh does not match the precision".into()));
        }
        let rows = points
            .iter()
            .map(|p| point_row(prec, mesh, p))
            .collect::<Result<Vec<_>>>()?;
        let noise_var = noise_sd.iter().map(|s| s * s).collect();
        Self::new(rows, values.to_vec(), noise_var, prec.dim())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_var
    }

    /// `R` as a `len × dim` sparse matrix.
    pub fn design_matrix(&self, dim: usize) -> CsrMatrix {
        let triplets: Vec<_> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(k, row)| row.iter().map(move |&(d, w)| (k, d, w)))
            .collect();
        CsrMatrix::from_triplets(self.rows.len(), dim, &triplets)
    }

    /// Reorders observations: entry `k` of the result is entry `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        ObservationSet {
            rows: perm.iter().map(|&k| self.rows[k].clone()).collect(),
            values: perm.iter().map(|&k| self.values[k]).collect(),
            noise_var: perm.iter().map(|&k| self.noise_var[k]).collect(),
        }
    }

    /// Same design with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.rows.clone(), values, self.noise_var.clone(), usize::MAX)
    }
}

/// Interpolation weights of `p` over the free dofs of `prec`.
pub fn point_row(prec: &SparsePrecision, mesh: &Mesh, p: &Coord) -> Result<DesignRow> {
    Ok(mesh
        .interpolation_weights(p)?
        .into_iter()
        .filter_map(|(node, w)| prec.node_dof(node).map(|d| (d, w)))
        .collect())
}

fn row_dot(row: &DesignRow, x: &[f64]) -> f64 {
    row.iter().map(|&(d, w)| w * x[d]).sum()
}

fn row_dense(row: &DesignRow, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(d, w) in row {
        v[d] += w;
    }
    v
}

/// Gaussian posterior in precision form.
#[derive(Debug, Clone)]
pub struct Posterior {
    mean: Vec<f64>,
    precision: CsrMatrix,
    factor: SparseCholesky,
}

impl Posterior {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `Q_post`.
    pub fn precision(&self) -> &CsrMatrix {
        &self.precision
    }

    pub fn factor(&self) -> &SparseCholesky {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        self.factor.log_det()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Diagonal of `Q_post⁻¹`.
    pub fn variances(&self) -> Vec<f64> {
        self.factor.inverse_diagonal()
    }

    /// Dense `Q_post⁻¹`; small problems only.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    /// Draws `count` conditional simulations; see [`sample`].
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        sample_with_factor(&self.factor, &self.mean, count, seed)
    }
}

/// Mean and covariance of `Y | X = x` for a zero-mean joint Gaussian with
/// blocks `Σ_xx`, `Σ_xy`, `Σ_yy`.
pub fn condition_covariance(
    sxx: &DMatrix<f64>,
    sxy: &DMatrix<f64>,
    syy: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (nx, ny) = (sxx.nrows(), syy.nrows());
    if sxx.ncols() != nx || syy.ncols() != ny || sxy.shape() != (nx, ny) || x.len() != nx {
        return Err(FieldError::Domain("covariance blocks have inconsistent shapes".into()));
    }
    let chol = sxx
        .clone()
        .cholesky()
        .ok_or_else(|| FieldError::Numeric("Σ_xx is not positive definite".into()))?;
    let gain = chol.solve(sxy); // Σ_xx⁻¹ Σ_xy
    let mean = gain.transpose() * x;
    let mut cov = syy - sxy.transpose() * &gain;
    symmetrize(&mut cov);
    Ok((mean, cov))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

/// Linear-Gaussian update `Q_post = Q + RᵀN⁻¹R`, `z̄ = Q_post⁻¹RᵀN⁻¹z`.
/// Every noise variance must be positive; use [`hard_condition`] for exact
/// interpolation.
pub fn condition_precision(q: &SparsePrecision, obs: &ObservationSet) -> Result<Posterior> {
    let n = q.dim();
    if let Some(k) = obs.noise_variances().iter().position(|&v| v <= 0.0) {
        return Err(FieldError::Domain(format!(
            "observation {k} has zero noise; use hard conditioning for exact interpolation"
        )));
    }
    let mut triplets: Vec<_> = q.matrix().iter().collect();
    let mut rhs = vec![0.0; n];
    for ((row, &z), &var) in obs.rows().iter().zip(obs.values()).zip(obs.noise_variances()) {
        if let Some(&(d, _)) = row.iter().find(|(d, _)| *d >= n) {
            return Err(FieldError::Domain(format!("observation references dof {d} of {n}")));
        }
        for &(i, wi) in row {
            rhs[i] += wi * z / var;
            for &(j, wj) in row {
                triplets.push((i, j, wi * wj / var));
            }
        }
    }
    let precision = CsrMatrix::from_triplets(n, n, &triplets);
    let factor = SparseCholesky::factor(&precision)?;
    let mean = factor.solve(&rhs);
    Ok(Posterior { mean, precision, factor })
}

/// Result of exact interpolation `R Z = z` applied to a prior `N(0, Q⁻¹)`.
#[derive(Debug, Clone)]
pub struct HardPosterior {
    mean: Vec<f64>,
    prior: SparseCholesky,
    rows: Vec<DesignRow>,
    /// `C Rᵀ`, one column per constraint.
    cross: DMatrix<f64>,
    /// Cholesky factor of `R C Rᵀ`.
    gram: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl HardPosterior {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Diagonal of `C - C Rᵀ (R C Rᵀ)⁻¹ R C`, clamped at zero.
    pub fn variances(&self) -> Vec<f64> {
        let prior = self.prior.inverse_diagonal();
        let correction = self.gram.solve(&self.cross.transpose()); // k × n
        prior
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let c: f64 = (0..self.cross.ncols()).map(|k| self.cross[(i, k)] * correction[(k, i)]).sum();
                (p - c).max(0.0)
            })
            .collect()
    }

    /// Dense posterior covariance; small problems only.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = self.prior.inverse() - &self.cross * self.gram.solve(&self.cross.transpose());
        symmetrize(&mut cov);
        cov
    }

    /// Conditional simulations by correcting unconditional prior draws:
    /// `μ + η - C Rᵀ (R C Rᵀ)⁻¹ R η`.
    pub fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        let n = self.mean.len();
        let mut out = sample_with_factor(&self.prior, &vec![0.0; n], count, seed);
        for s in 0..count {
            let eta: Vec<f64> = out.column(s).iter().copied().collect();
            let residual = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| row_dot(r, &eta)));
            let weights = self.gram.solve(&residual);
            let correction = &self.cross * weights;
            for i in 0..n {
                out[(i, s)] = self.mean[i] + eta[i] - correction[i];
            }
        }
        out
    }
}

/// Exact interpolation: `μ = C Rᵀ (R C Rᵀ)⁻¹ z` with `C = Q⁻¹` applied by
/// sparse solves. Noise variances in `obs` are ignored.
pub fn hard_condition(q: &SparsePrecision, obs: &ObservationSet) -> Result<HardPosterior> {
    let n = q.dim();
    let prior = q.factor()?;
    let k = obs.len();
    let mut cross = DMatrix::zeros(n, k);
    for (c, row) in obs.rows().iter().enumerate() {
        if row.iter().any(|(d, _)| *d >= n) {
            return Err(FieldError::Domain(format!("constraint {c} references a dof outside 0..{n}")));
        }
        cross.column_mut(c).copy_from_slice(&prior.solve(&row_dense(row, n)));
    }
    let mut gram = DMatrix::zeros(k, k);
    for (a, row) in obs.rows().iter().enumerate() {
        for b in 0..k {
            gram[(a, b)] = row.iter().map(|&(d, w)| w * cross[(d, b)]).sum();
        }
    }
    symmetrize(&mut gram);
    if k > 0 {
        let eig = gram.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 1e-12 * hi) {
            return Err(FieldError::Degenerate(format!(
                "R C Rᵀ is rank deficient (eigenvalues in [{lo:e}, {hi:e}])"
            )));
        }
    }
    let gram = gram
        .cholesky()
        .ok_or_else(|| FieldError::Degenerate("R C Rᵀ is not positive definite".into()))?;
    let weights = gram.solve(&DVector::from_column_slice(obs.values()));
    let mean: Vec<f64> = (&cross * weights).iter().copied().collect();
    Ok(HardPosterior { mean, prior, rows: obs.rows().to_vec(), cross, gram })
}

fn validated_subset(dim: usize, subset: &[usize], what: &str) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(FieldError::Domain(format!("{what} set is empty")));
    }
    let mut seen = vec![false; dim];
    for &d in subset {
        if d >= dim {
            return Err(FieldError::Domain(format!("{what} dof {d} is not a dof (dim {dim})")));
        }
        if seen[d] {
            return Err(FieldError::Domain(format!("{what} dof {d} listed twice")));
        }
        seen[d] = true;
    }
    Ok((0..dim).filter(|&d| !seen[d]).collect())
}

/// Marginal precision of the `keep` dofs: `Q_KK - Q_KE Q_EE⁻¹ Q_EK`. The
/// result is indexed in the order of `keep`.
pub fn schur_marginal(q: &SparsePrecision, keep: &[usize]) -> Result<SparsePrecision> {
    let eliminate = validated_subset(q.dim(), keep, "keep")?;
    let qkk = q.matrix().submatrix(keep, keep);
    if eliminate.is_empty() {
        return q.restricted(qkk, keep);
    }
    let qee = q.matrix().submatrix(&eliminate, &eliminate);
    let qek = q.matrix().submatrix(&eliminate, keep).to_dense();
    let factor = SparseCholesky::factor(&qee)?;
    let x = factor.solve_dense(&qek);
    let mut eff = qkk.to_dense() - qek.transpose() * x;
    symmetrize(&mut eff);
    q.restricted(CsrMatrix::from_dense(&eff), keep)
}

/// Discrete Dirichlet-to-Neumann operator: the Schur complement of `q` onto
/// `boundary_dofs`. `q` should come from an assembly that keeps those dofs
/// (Neumann or Robin on the targeted boundary).
pub fn dtn_discrete(q: &SparsePrecision, boundary_dofs: &[usize]) -> Result<DMatrix<f64>> {
    Ok(schur_marginal(q, boundary_dofs)?.matrix().to_dense())
}

/// Discrete harmonic extension: `u_B = φ` on `boundary_dofs`, interior rows
/// of `Q u = 0` solved for the rest.
pub fn harmonic_extension(q: &SparsePrecision, boundary_dofs: &[usize], phi: &[f64]) -> Result<Vec<f64>> {
    let interior = validated_subset(q.dim(), boundary_dofs, "boundary")?;
    if phi.len() != boundary_dofs.len() {
        return Err(FieldError::Domain("boundary data length mismatch".into()));
    }
    let mut u = vec![0.0; q.dim()];
    for (&d, &v) in boundary_dofs.iter().zip(phi) {
        u[d] = v;
    }
    if interior.is_empty() {
        return Ok(u);
    }
    let qii = q.matrix().submatrix(&interior, &interior);
    let qib = q.matrix().submatrix(&interior, boundary_dofs);
    let rhs: Vec<f64> = qib.mul_vec(phi).into_iter().map(|v| -v).collect();
    let ui = SparseCholesky::factor(&qii)?.solve(&rhs);
    for (&d, v) in interior.iter().zip(ui) {
        u[d] = v;
    }
    Ok(u)
}

/// Random stream for sample `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `mean + Pᵀ L⁻ᵀ ξ` per column; column `s` uses stream `s` of `seed`.
pub fn sample_with_factor(factor: &SparseCholesky, mean: &[f64], count: usize, seed: u64) -> DMatrix<f64> {
    let n = factor.dim();
    let mut out = DMatrix::zeros(n, count);
    for s in 0..count {
        let xi = standard_normals(&mut stream_rng(seed, s as u64), n);
        let eta = factor.solve_upper(&xi);
        for i in 0..n {
            out[(i, s)] = mean[i] + eta[i];
        }
    }
    out
}

/// Conditional simulations from a posterior: `z̄ + η`, `η ~ N(0, Q_post⁻¹)`,
/// one column per sample. Deterministic in `seed`.
pub fn sample(post: &Posterior, count: usize, seed: u64) -> DMatrix<f64> {
    post.sample(count, seed)
}

/// Unconditional draws from `N(0, Q⁻¹)`.
pub fn sample_prior(q: &SparsePrecision, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    let factor = q.factor()?;
    Ok(sample_with_factor(&factor, &vec![0.0; q.dim()], count, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratingFunctionalCheck {
    pub empirical: f64,
    pub exact: f64,
    pub ratio: f64,
}

/// Largest `JᵀQ⁻¹J` accepted by [`generating_functional_check`].
pub const GENERATING_FUNCTIONAL_LIMIT: f64 = 40.0;

/// Monte-Carlo `E[exp(Jᵀz)]` against `exp(½ JᵀQ⁻¹J)`.
pub fn generating_functional_check(
    q: &SparsePrecision,
    j: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<GeneratingFunctionalCheck> {
    if j.len() != q.dim() {
        return Err(FieldError::Domain(format!("source has length {}, expected {}", j.len(), q.dim())));
    }
    if n_samples == 0 {
        return Err(FieldError::Domain("need at least one sample".into()));
    }
    let factor = q.factor()?;
    let quad: f64 = factor.solve(j).iter().zip(j).map(|(a, b)| a * b).sum();
    if quad > GENERATING_FUNCTIONAL_LIMIT {
        return Err(FieldError::Numeric(format!(
            "JᵀQ⁻¹J = {quad} exceeds {GENERATING_FUNCTIONAL_LIMIT}; the Monte-Carlo mean would overflow or be unstable"
        )));
    }
    let exact = (0.5 * quad).exp();
    let mut acc = 0.0;
    for s in 0..n_samples {
        let xi = standard_normals(&mut stream_rng(seed, s as u64), q.dim());
        let eta = factor.solve_upper(&xi);
        acc += eta.iter().zip(j).map(|(a, b)| a * b).sum::<f64>().exp();
    }
    let empirical = acc / n_samples as f64;
    Ok(GeneratingFunctionalCheck { empirical, exact, ratio: empirical / exact })
}

/// Covariance `A C Aᵀ` of the linear image `A Z`.
pub fn linear_image(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() != c.ncols() || a.ncols() != c.nrows() {
        return Err(FieldError::Domain(format!(
            "cannot map a {}x{} covariance through a {}x{} operator",
            c.nrows(),
            c.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    let mut out = a * c * a.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Block precision `G⁻¹ ⊗ Q0` of a separable multivariate field, so that
/// the covariance is `G ⊗ Q0⁻¹`. Dof `(v, i)` sits at index `v·n + i`.
pub fn separable_precision(g: &DMatrix<f64>, q0: &SparsePrecision) -> Result<CsrMatrix> {
    if g.nrows() != g.ncols() || g.nrows() == 0 {
        return Err(FieldError::Model("cross-variable covariance must be square".into()));
    }
    if (g - g.transpose()).amax() > 1e-12 * g.amax() {
        return Err(FieldError::Model("cross-variable covariance is not symmetric".into()));
    }
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| FieldError::Model("cross-variable covariance is not positive definite".into()))?;
    let mut ginv = chol.inverse();
    symmetrize(&mut ginv);
    Ok(CsrMatrix::from_dense(&ginv).kron(q0.matrix()))
}
