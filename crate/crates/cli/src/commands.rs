//! One function per subcommand. Each reads the loaded inputs and writes its
//! artifacts through [`Output`].

use std::path::PathBuf;

use bvfield::assembly::{CircleFactor, DiffusionField, ModeSystem};
use bvfield::gaussian::{
    condition_precision, hard_condition, point_row, sample_prior, sample_with_factor, schur_marginal, HardPosterior,
    ObservationSet, Posterior,
};
use bvfield::inference::{fit, FitOptions, ModelTemplate, ParamName, ParameterVector};
use bvfield::mesh::{Coord, Mesh};
use bvfield::variogram::{bc_compare, bc_pair, empirical_variogram, interface_sweep, sweep_csv, LagBins, PairClassConfig};
use bvfield::{assemble, OperatorSpec, ScalarField, SparseCholesky, SparsePrecision};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map};

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};
use crate::io::{load_mesh, load_model, load_obs, model_hash, ObsTable, Output};

/// Largest dof count for the dense inverse-consistency report of `reduce`.
const REDUCE_CHECK_LIMIT: usize = 200;

struct Ctx<'a> {
    cli: &'a Cli,
    mesh: Mesh,
    spec: OperatorSpec,
    obs: Option<ObsTable>,
    out: Output,
}

/// Runs `cli`; `command_line` goes into every file header. Returns the
/// paths written.
pub fn run(cli: &Cli, command_line: &str) -> CliResult<Vec<PathBuf>> {
    let mesh = load_mesh(cli.mesh.as_deref())?;
    let spec = load_model(cli.model.as_deref())?;
    let obs = load_obs(cli.obs.as_deref())?;
    let out = Output::new(&cli.out, command_line, cli.seed, &model_hash(&mesh, &spec))?;
    let ctx = Ctx { cli, mesh, spec, obs, out };
    match &cli.command {
        Command::Assemble => cmd_assemble(&ctx),
        Command::Krige => cmd_krige(&ctx),
        Command::Simulate { count } => cmd_simulate(&ctx, *count),
        Command::Reduce { keep } => cmd_reduce(&ctx, keep),
        Command::Variogram { samples, bins, max_lag, buffer } => cmd_variogram(&ctx, *samples, *bins, *max_lag, *buffer),
        Command::BcCompare => cmd_bc_compare(&ctx),
        Command::InterfaceSweep { alphas, source } => cmd_interface_sweep(&ctx, alphas, *source),
        Command::Fit { params, budget, init_m, init_alpha, init_anisotropy } => {
            cmd_fit(&ctx, params, *budget, (*init_m, *init_alpha, *init_anisotropy))
        }
        Command::Modes { radius, modes, angles } => cmd_modes(&ctx, *radius, *modes, *angles),
    }
}

fn coord_header(mesh: &Mesh) -> &'static str {
    if mesh.dim() == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn fmt_coord(mesh: &Mesh, c: &Coord) -> String {
    if mesh.dim() == 1 {
        format!("{}", c[0])
    } else {
        format!("{},{}", c[0], c[1])
    }
}

/// Builds the observation set for `q`, checking the column count against
/// the mesh dimension. `None` when no file was given.
fn observations(ctx: &Ctx, q: &SparsePrecision) -> CliResult<Option<ObservationSet>> {
    let Some(table) = &ctx.obs else { return Ok(None) };
    let want = ctx.mesh.dim() + 2;
    if table.columns != want && !table.is_empty() {
        return Err(CliError::Config(format!(
            "observations have {} columns but a {}D mesh needs {want}",
            table.columns,
            ctx.mesh.dim()
        )));
    }
    let sd = if ctx.cli.hard { vec![0.0; table.len()] } else { table.noise_sd.clone() };
    Ok(Some(ObservationSet::point_observations(q, &ctx.mesh, &table.coords, &table.values, &sd)?))
}

enum Conditioned {
    Prior(SparseCholesky),
    Soft(Posterior),
    Hard(HardPosterior),
}

impl Conditioned {
    fn new(ctx: &Ctx, q: &SparsePrecision) -> CliResult<Self> {
        Ok(match observations(ctx, q)? {
            None => Conditioned::Prior(q.factor()?),
            Some(obs) if ctx.cli.hard => Conditioned::Hard(hard_condition(q, &obs)?),
            Some(obs) => {
                if let Some(k) = obs.noise_variances().iter().position(|&v| v == 0.0) {
                    return Err(CliError::Config(format!(
                        "observation {} has noise_sd = 0; pass --hard for exact interpolation",
                        k + 1
                    )));
                }
                Conditioned::Soft(condition_precision(q, &obs)?)
            }
        })
    }

    fn mean(&self) -> Vec<f64> {
        match self {
            Conditioned::Prior(f) => vec![0.0; f.dim()],
            Conditioned::Soft(p) => p.mean().to_vec(),
            Conditioned::Hard(h) => h.mean().to_vec(),
        }
    }

    fn variances(&self) -> Vec<f64> {
        match self {
            Conditioned::Prior(f) => f.inverse_diagonal(),
            Conditioned::Soft(p) => p.variances(),
            Conditioned::Hard(h) => h.variances(),
        }
    }

    fn sample(&self, count: usize, seed: u64) -> DMatrix<f64> {
        match self {
            Conditioned::Prior(f) => sample_with_factor(f, &vec![0.0; f.dim()], count, seed),
            Conditioned::Soft(p) => p.sample(count, seed),
            Conditioned::Hard(h) => h.sample(count, seed),
        }
    }
}

fn cmd_assemble(ctx: &Ctx) -> CliResult<Vec<PathBuf>> {
    let q = assemble(&ctx.mesh, &ctx.spec)?;
    let extra = [format!("dofs: {}", q.dim())];
    let a = ctx.out.write_matrix("precision.mtx", &extra, q.matrix())?;
    let mut body = format!("dof,node,{}\n", coord_header(&ctx.mesh));
    for d in 0..q.dim() {
        body.push_str(&format!("{d},{},{}\n", q.dof_node(d), fmt_coord(&ctx.mesh, &q.dof_coord(d))));
    }
    let b = ctx.out.write_csv("dofs.csv", &[], &body)?;
    Ok(vec![a, b])
}

fn cmd_krige(ctx: &Ctx) -> CliResult<Vec<PathBuf>> {
    let q = assemble(&ctx.mesh, &ctx.spec)?;
    let post = Conditioned::new(ctx, &q)?;
    let (mean, var) = (post.mean(), post.variances());
    let mut body = format!("node,{},mean,sd\n", coord_header(&ctx.mesh));
    for node in 0..ctx.mesh.node_count() {
        let (m, v) = q.node_dof(node).map_or((0.0, 0.0), |d| (mean[d], var[d]));
        body.push_str(&format!("{node},{},{m},{}\n", fmt_coord(&ctx.mesh, &ctx.mesh.coord(node)), v.max(0.0).sqrt()));
    }
    Ok(vec![ctx.out.write_csv("krige.csv", &[], &body)?])
}

fn cmd_simulate(ctx: &Ctx, count: usize) -> CliResult<Vec<PathBuf>> {
    if count == 0 {
        return Err(CliError::Config("--count must be positive".into()));
    }
    let q = assemble(&ctx.mesh, &ctx.spec)?;
    let draws = Conditioned::new(ctx, &q)?.sample(count, ctx.cli.seed);
    let mut body = format!("node,{}", coord_header(&ctx.mesh));
    for s in 0..count {
        body.push_str(&format!(",s{s}"));
    }
    body.push('\n');
    for node in 0..ctx.mesh.node_count() {
        body.push_str(&format!("{node},{}", fmt_coord(&ctx.mesh, &ctx.mesh.coord(node))));
        for s in 0..count {
            let v = q.node_dof(node).map_or(0.0, |d| draws[(d, s)]);
            body.push_str(&format!(",{v}"));
        }
        body.push('\n');
    }
    Ok(vec![ctx.out.write_csv("samples.csv", &[], &body)?])
}

fn keep_dofs(ctx: &Ctx, q: &SparsePrecision, keep: &str) -> CliResult<Vec<usize>> {
    let nodes: Vec<usize> = match keep.trim() {
        "all" => return Ok((0..q.dim()).collect()),
        "boundary" => ctx.mesh.boundary_nodes().into_iter().filter(|&n| q.node_dof(n).is_some()).collect(),
        list => list
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad node index `{s}` in --keep"))))
            .collect::<CliResult<_>>()?,
    };
    if nodes.is_empty() {
        return Err(CliError::Config("keep set is empty (all boundary nodes are Dirichlet?)".into()));
    }
    nodes
        .iter()
        .map(|&n| {
            if n >= ctx.mesh.node_count() {
                return Err(CliError::Config(format!("node {n} does not exist")));
            }
            q.node_dof(n).ok_or_else(|| CliError::Config(format!("node {n} is eliminated by a Dirichlet condition")))
        })
        .collect()
}

fn cmd_reduce(ctx: &Ctx, keep: &str) -> CliResult<Vec<PathBuf>> {
    let q = assemble(&ctx.mesh, &ctx.spec)?;
    let dofs = keep_dofs(ctx, &q, keep)?;
    let reduced = schur_marginal(&q, &dofs)?;
    let extra = [format!("keep: {keep}"), format!("kept-dofs: {}", dofs.len())];
    let a = ctx.out.write_matrix("reduced.mtx", &extra, reduced.matrix())?;
    let mut body = format!("k,dof,node,{}\n", coord_header(&ctx.mesh));
    for (k, &d) in dofs.iter().enumerate() {
        body.push_str(&format!("{k},{d},{},{}\n", q.dof_node(d), fmt_coord(&ctx.mesh, &q.dof_coord(d))));
    }
    let b = ctx.out.write_csv("reduced_dofs.csv", &[], &body)?;
    let check = if q.dim() <= REDUCE_CHECK_LIMIT {
        let full = q.factor()?.inverse().select_rows(&dofs).select_columns(&dofs);
        let err = (reduced.factor()?.inverse() - full).amax();
        format!("dofs,kept,max_abs_error\n{},{},{err}\n", q.dim(), dofs.len())
    } else {
        format!("dofs,kept,max_abs_error\n{},{},\n", q.dim(), dofs.len())
    };
    let c = ctx.out.write_csv("reduce_check.csv", &[], &check)?;
    Ok(vec![a, b, c])
}

/// `m = √(c/a)` for constant isotropic coefficients.
fn intrinsic_m(spec: &OperatorSpec) -> Option<f64> {
    let a = match &spec.diffusion {
        DiffusionField::Isotropic(ScalarField::Constant { value }) => value * spec.diffusion_scale,
        _ => return None,
    };
    match spec.reaction {
        ScalarField::Constant { value } if value > 0.0 && a > 0.0 => Some((value / a).sqrt()),
        _ => None,
    }
}

fn nodal_samples(mesh: &Mesh, q: &SparsePrecision, draws: &DMatrix<f64>) -> DMatrix<f64> {
    let mut full = DMatrix::zeros(mesh.node_count(), draws.ncols());
    for d in 0..q.dim() {
        full.set_row(q.dof_node(d), &draws.row(d));
    }
    full
}

fn cmd_variogram(ctx: &Ctx, samples: usize, bins: usize, max_lag: Option<f64>, buffer: Option<f64>) -> CliResult<Vec<PathBuf>> {
    if samples < 2 {
        return Err(CliError::Config("--samples must be at least 2".into()));
    }
    let buffer = match buffer.or_else(|| intrinsic_m(&ctx.spec).map(|m| 1.0 / m)) {
        Some(b) => b,
        None => return Err(CliError::Config("variable coefficients: pass --buffer explicitly".into())),
    };
    let bins = LagBins::uniform(max_lag.unwrap_or(0.5 * ctx.mesh.diameter()), bins)?;
    let q = assemble(&ctx.mesh, &ctx.spec)?;
    let draws = nodal_samples(&ctx.mesh, &q, &sample_prior(&q, samples, ctx.cli.seed)?);
    let points: Vec<Coord> = (0..ctx.mesh.node_count()).map(|i| ctx.mesh.coord(i)).collect();
    let config = PairClassConfig::for_mesh(&ctx.mesh, 1.0).with_buffer(buffer);
    let table = empirical_variogram(&draws, &points, &bins, &config)?;
    let extra = [format!("samples: {samples}"), format!("buffer: {buffer}")];
    Ok(vec![ctx.out.write_csv("variogram.csv", &extra, &table.to_csv())?])
}

fn dense_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn cmd_bc_compare(ctx: &Ctx) -> CliResult<Vec<PathBuf>> {
    let (d, n) = bc_pair(&ctx.mesh, &ctx.spec);
    let cmp = bc_compare(&ctx.mesh, &d, &n)?;
    let (i, j) = cmp.argmax_difference();
    let extra = [
        format!("reference-node: {}", cmp.reference),
        format!("max-diff-pair: {i} {j}"),
    ];
    Ok(vec![
        ctx.out.write_csv("bc_summary.csv", &extra, &cmp.summary_csv(ctx.mesh.dim()))?,
        ctx.out.write_csv("gamma_d.csv", &[], &dense_csv(&cmp.gamma_d))?,
        ctx.out.write_csv("gamma_n.csv", &[], &dense_csv(&cmp.gamma_n))?,
        ctx.out.write_csv("gamma_diff.csv", &[], &dense_csv(&cmp.difference()))?,
    ])
}

fn cmd_interface_sweep(ctx: &Ctx, alphas: &[f64], source: Option<f64>) -> CliResult<Vec<PathBuf>> {
    let Mesh::Interval(m1) = &ctx.mesh else {
        return Err(CliError::Config("interface-sweep needs a 1D mesh".into()));
    };
    let Some(first) = m1.interfaces().first() else {
        return Err(CliError::Config("interface-sweep needs a mesh with an interface".into()));
    };
    let source = source.unwrap_or(0.5 * (m1.domain().0 + m1.nodes()[first.node]));
    let curves = interface_sweep(m1, &ctx.spec, alphas, source)?;
    Ok(vec![ctx.out.write_csv("interface_sweep.csv", &[format!("source: {source}")], &sweep_csv(&curves))?])
}

fn cmd_fit(ctx: &Ctx, params: &[String], budget: usize, init: (Option<f64>, Option<f64>, Option<f64>)) -> CliResult<Vec<PathBuf>> {
    let free = params.iter().map(|p| ParamName::parse(p.trim())).collect::<Result<Vec<_>, _>>()?;
    let template = ModelTemplate::new(ctx.mesh.clone(), ctx.spec.clone());
    let m0 = match (&ctx.spec.reaction, init.0) {
        (_, Some(m)) => m,
        (ScalarField::Constant { value }, None) if *value > 0.0 => value.sqrt(),
        _ => 1.0,
    };
    let a0 = init.1.unwrap_or_else(|| ctx.spec.interface_penalties.values().next().copied().unwrap_or(0.0));
    let theta0 = ParameterVector::new(m0).with_alpha(a0).with_anisotropy(init.2.unwrap_or(1.0));
    let q = template.assemble(&theta0)?;
    let obs = observations(ctx, &q)?.ok_or_else(|| CliError::Config("fit needs --obs".into()))?;
    let options = FitOptions { budget, ..FitOptions::default() };
    let res = fit(&template, &obs, theta0, &free, &options)?;
    let mut doc = Map::new();
    doc.insert("seed".into(), json!(ctx.cli.seed));
    doc.insert("params".into(), json!(free.iter().map(|p| p.as_str()).collect::<Vec<_>>()));
    doc.insert("theta".into(), serde_json::to_value(res.theta).expect("theta serializes"));
    doc.insert("loglik".into(), json!(res.loglik));
    doc.insert("converged".into(), json!(res.converged));
    doc.insert("evaluations".into(), json!(res.evaluations));
    doc.insert("trace".into(), serde_json::to_value(&res.trace).expect("trace serializes"));
    let path = ctx.out.write_json("fit.json", doc)?;
    if !res.converged {
        return Err(CliError::NotConverged(res.evaluations));
    }
    Ok(vec![path])
}

fn cmd_modes(ctx: &Ctx, radius: f64, modes: usize, angles: usize) -> CliResult<Vec<PathBuf>> {
    let Mesh::Interval(m1) = &ctx.mesh else {
        return Err(CliError::Config("modes needs a 1D mesh for the interval factor".into()));
    };
    if angles == 0 {
        return Err(CliError::Config("--angles must be positive".into()));
    }
    let system = ModeSystem::new(m1, &ctx.spec, CircleFactor::new(radius, modes)?)?;
    let base = system.base();
    let n = base.dim();
    let factors: Vec<&SparseCholesky> = (0..=modes).map(|k| system.mode_factor(k).expect("mode in range")).collect();

    let empty = ObsTable { columns: 3, coords: vec![], values: vec![], noise_sd: vec![] };
    let table = ctx.obs.as_ref().unwrap_or(&empty);
    let rows = table
        .coords
        .iter()
        .map(|c| point_row(base, &ctx.mesh, &[c[0], 0.0]))
        .collect::<Result<Vec<_>, _>>()?;
    let thetas: Vec<f64> = table.coords.iter().map(|c| if table.columns == 4 { c[1] } else { 0.0 }).collect();
    let k = rows.len();
    // cols[b][mode] = (Q_base + λ_mode M)⁻¹ r_b
    let cols: Vec<Vec<Vec<f64>>> = rows
        .iter()
        .map(|r| {
            let mut rhs = vec![0.0; n];
            for &(d, w) in r {
                rhs[d] += w;
            }
            factors.iter().map(|f| f.solve(&rhs)).collect()
        })
        .collect();
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            gram[(a, b)] = (0..=modes)
                .map(|md| {
                    let g: f64 = rows[a].iter().map(|&(d, w)| w * cols[b][md][d]).sum();
                    CircleFactor::mode_weight(md, thetas[a] - thetas[b]) * g
                })
                .sum();
        }
        if !ctx.cli.hard {
            if table.noise_sd[a] == 0.0 {
                return Err(CliError::Config(format!(
                    "observation {} has noise_sd = 0; pass --hard for exact interpolation",
                    a + 1
                )));
            }
            gram[(a, a)] += table.noise_sd[a].powi(2);
        }
    }
    let gram = (&gram + gram.transpose()) * 0.5;
    let chol = if k > 0 {
        Some(gram.cholesky().ok_or_else(|| CliError::Numeric("observation covariance is singular".into()))?)
    } else {
        None
    };
    let weights = chol.as_ref().map(|c| c.solve(&DVector::from_column_slice(&table.values)));
    let mut prior_var = vec![0.0; n];
    for (md, f) in factors.iter().enumerate() {
        let w0 = CircleFactor::mode_weight(md, 0.0);
        for (d, v) in f.inverse_diagonal().into_iter().enumerate() {
            prior_var[d] += w0 * v;
        }
    }

    let mut body = String::from("node,x,theta,mean,sd\n");
    for node in 0..ctx.mesh.node_count() {
        let x = ctx.mesh.coord(node)[0];
        for j in 0..angles {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / angles as f64;
            let (mean, sd) = match base.node_dof(node) {
                None => (0.0, 0.0),
                Some(d) => {
                    let cross = DVector::from_iterator(
                        k,
                        (0..k).map(|b| {
                            (0..=modes)
                                .map(|md| CircleFactor::mode_weight(md, theta - thetas[b]) * cols[b][md][d])
                                .sum::<f64>()
                        }),
                    );
                    let mean = weights.as_ref().map_or(0.0, |w| cross.dot(w));
                    let reduction = chol.as_ref().map_or(0.0, |c| cross.dot(&c.solve(&cross)));
                    (mean, (prior_var[d] - reduction).max(0.0).sqrt())
                }
            };
            body.push_str(&format!("{node},{x},{theta},{mean},{sd}\n"));
        }
    }
    let extra = [
        format!("radius: {radius}"),
        format!("modes: {modes}"),
        format!("tail-bound: {}", system.tail_bound()),
    ];
    Ok(vec![ctx.out.write_csv("modes.csv", &extra, &body)?])
}
