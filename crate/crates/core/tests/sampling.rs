use bvfield::assembly::{assemble, assemble_1d, BoundaryCondition, OperatorSpec};
use bvfield::gaussian::{
    condition_precision, generating_functional_check, linear_image, sample, sample_prior, separable_precision,
    ObservationSet,
};
use bvfield::kernels::{green_interface_1d, Kernel1DParams};
use bvfield::mesh::{Coord, Mesh, Mesh1D};
use bvfield::variogram::{
    empirical_variogram, nodal_covariance, variogram_matrix, LagBins, PairClass, PairClassConfig,
};
use bvfield::{CsrMatrix, SparsePrecision};
use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

fn precision(q: &DMatrix<f64>) -> SparsePrecision {
    SparsePrecision::from_matrix(CsrMatrix::from_dense(q)).unwrap()
}

fn small_spd() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        5,
        5,
        &[
            3.0, -1.0, 0.2, 0.0, 0.1, //
            -1.0, 2.5, -0.7, 0.3, 0.0, //
            0.2, -0.7, 2.0, -0.4, 0.2, //
            0.0, 0.3, -0.4, 1.8, -0.6, //
            0.1, 0.0, 0.2, -0.6, 1.5,
        ],
    )
}

fn empirical_cov(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.ncols() as f64;
    let mean = s.column_mean();
    let centred = s - &mean * DMatrix::from_element(1, s.ncols(), 1.0);
    &centred * centred.transpose() / (n - 1.0)
}

#[test]
fn identity_precision_gives_standard_normals() {
    let q = precision(&DMatrix::identity(1, 1));
    let post = condition_precision(&q, &ObservationSet::empty()).unwrap();
    let draws = sample(&post, 10_000, 2024);
    let mut xs: Vec<f64> = draws.iter().copied().collect();
    xs.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max((((i + 1) as f64) / n - f).abs())
        })
        .fold(0.0, f64::max);
    // two-sided critical value at p = 0.001
    assert!(d < 1.949 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn empirical_covariance_converges() {
    let q = small_spd();
    let post = condition_precision(&precision(&q), &ObservationSet::empty()).unwrap();
    let draws = sample(&post, 200_000, 7);
    let exact = q.try_inverse().unwrap();
    let err = (empirical_cov(&draws) - &exact).norm() / exact.norm();
    assert!(err < 0.03, "relative Frobenius error {err}");
}

#[test]
fn generating_functional_ratio() {
    let q = small_spd();
    let c = q.clone().try_inverse().unwrap();
    let mut j = nalgebra::DVector::from_column_slice(&[0.5, -0.3, 0.8, 0.1, -0.6]);
    let quad = (j.transpose() * &c * &j)[0];
    j /= quad.sqrt(); // JᵀQ⁻¹J = 1
    let r = generating_functional_check(&precision(&q), j.as_slice(), 100_000, 3).unwrap();
    assert!((0.95..=1.05).contains(&r.ratio), "ratio {}", r.ratio);
}

#[test]
fn linear_image_matches_sampling() {
    let q = small_spd();
    let c = q.clone().try_inverse().unwrap();
    let a = DMatrix::from_row_slice(2, 5, &[0.2; 5].iter().chain(&[1.0, -1.0, 0.0, 0.0, 0.5]).copied().collect::<Vec<_>>());
    let exact = linear_image(&c, &a).unwrap();
    let draws = sample_prior(&precision(&q), 50_000, 5).unwrap();
    let emp = empirical_cov(&(&a * draws));
    assert!((emp - &exact).norm() / exact.norm() < 0.03);
}

#[test]
fn separable_kronecker_oracle() {
    let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let q0 = DMatrix::from_row_slice(4, 4, &[4.0, 1.0, 0.0, 0.5, 1.0, 3.0, 0.2, 0.0, 0.0, 0.2, 2.0, 0.3, 0.5, 0.0, 0.3, 2.5]);
    let q = separable_precision(&g, &precision(&q0)).unwrap();
    let cov = q.to_dense().try_inverse().unwrap();
    let c0 = q0.try_inverse().unwrap();
    assert!((&cov - g.kronecker(&c0)).amax() < 1e-10);
    for i in 0..4 {
        assert!((cov[(i, 4 + i)] - 0.5 * c0[(i, i)]).abs() < 1e-10);
    }
}

fn nodes(mesh: &Mesh) -> Vec<Coord> {
    (0..mesh.node_count()).map(|i| mesh.coord(i)).collect()
}

#[test]
fn empirical_variogram_converges_to_exact() {
    let mesh = Mesh::Interval(Mesh1D::uniform_interval(2.0, 40, &[]).unwrap());
    let spec = OperatorSpec::whittle(1.5).with_all_bcs(&mesh, BoundaryCondition::Neumann);
    let q = assemble(&mesh, &spec).unwrap();
    let samples = sample_prior(&q, 5000, 99).unwrap();
    let exact = variogram_matrix(&q.factor().unwrap().inverse()).unwrap();
    let max = exact.amax();
    let pts = nodes(&mesh);
    // one pair per bin: pairs (0, j) at lag j·h
    let emp = empirical_variogram(&samples.rows(0, 41).into_owned(), &pts, &LagBins::uniform(2.0, 1).unwrap(), &PairClassConfig::for_mesh(&mesh, 1.5)).unwrap();
    assert!(emp.get(PairClass::All, 1.0).is_some());
    let mut checked = 0;
    for i in (0..41).step_by(4) {
        for j in (i + 1..41).step_by(3) {
            if exact[(i, j)] < 0.1 * max {
                continue;
            }
            let e: f64 = (0..5000).map(|s| 0.5 * (samples[(i, s)] - samples[(j, s)]).powi(2)).sum::<f64>() / 5000.0;
            assert!((e - exact[(i, j)]).abs() < 0.1 * exact[(i, j)], "pair ({i},{j})");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn boundary_classes_separate_dirichlet_from_neumann() {
    let mesh = Mesh::Interval(Mesh1D::uniform_interval(4.0, 80, &[]).unwrap());
    let base = OperatorSpec::whittle(1.0);
    let pts = nodes(&mesh);
    let cfg = PairClassConfig::for_mesh(&mesh, 1.0);
    let bins = LagBins::uniform(1.0, 5).unwrap();
    let mut tables = Vec::new();
    let mut exact = Vec::new();
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let spec = base.clone().with_all_bcs(&mesh, bc);
        let q = assemble(&mesh, &spec).unwrap();
        let z = sample_prior(&q, 2000, 11).unwrap();
        let mut full = DMatrix::zeros(pts.len(), 2000);
        for d in 0..q.dim() {
            full.set_row(q.dof_node(d), &z.row(d));
        }
        tables.push(empirical_variogram(&full, &pts, &bins, &cfg).unwrap());
        let samples_exact = variogram_matrix(&nodal_covariance(&mesh, &spec).unwrap()).unwrap();
        exact.push(samples_exact);
    }
    let lag = bins.center(1);
    let near_d = tables[0].get(PairClass::NearBoundary, lag).unwrap().semivariance;
    let near_n = tables[1].get(PairClass::NearBoundary, lag).unwrap().semivariance;
    let int_d = tables[0].get(PairClass::Interior, lag).unwrap().semivariance;
    let int_n = tables[1].get(PairClass::Interior, lag).unwrap().semivariance;
    // Monte-Carlo standard error of a class mean is a few percent here
    assert!((near_d - near_n).abs() > 0.1 * near_n, "{near_d} vs {near_n}");
    assert!((int_d - int_n).abs() < 0.05 * int_n, "{int_d} vs {int_n}");
    assert_ne!(exact[0], exact[1]);
}

#[test]
fn interface_penalty_attenuates_cross_interface_dependence() {
    let mesh1 = Mesh1D::symmetric_interval(1.0, 40, &[0.0]).unwrap();
    let mesh = Mesh::Interval(mesh1.clone());
    let pts = nodes(&mesh);
    let cfg = PairClassConfig::for_mesh(&mesh, 1.0).with_buffer(0.0);
    let bins = LagBins::uniform(0.5, 2).unwrap();
    let lag = bins.center(1);
    let (mut cross_g, mut same_g, mut cross_r, mut same_r) = (vec![], vec![], vec![], vec![]);
    for alpha in [0.0, 1.0, 10.0] {
        let p = Kernel1DParams::with_alpha(1.0, 1.0, alpha).unwrap();
        let c = DMatrix::from_fn(pts.len(), pts.len(), |i, j| green_interface_1d(&p, pts[i][0], pts[j][0]).unwrap());
        let g = variogram_matrix(&c).unwrap();
        let mut acc = [0.0; 4];
        let mut counts = [0.0; 2];
        for i in 1..pts.len() - 1 {
            for j in i + 1..pts.len() - 1 {
                if bins.bin_of((pts[i][0] - pts[j][0]).abs()) != Some(1) {
                    continue;
                }
                let rho = c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt();
                let k = usize::from(!cfg.crosses(&pts[i], &pts[j]));
                acc[k] += g[(i, j)];
                acc[2 + k] += rho;
                counts[k] += 1.0;
            }
        }
        cross_g.push(acc[0] / counts[0]);
        same_g.push(acc[1] / counts[1]);
        cross_r.push(acc[2] / counts[0]);
        same_r.push(acc[3] / counts[1]);

        // sampled FEM field reproduces the exact cross-interface class value
        let spec = OperatorSpec::whittle(1.0)
            .with_all_bcs(&mesh, BoundaryCondition::Dirichlet)
            .with_all_interfaces(&mesh, alpha);
        let q = assemble_1d(&mesh1, &spec).unwrap();
        let z = sample_prior(&q, 4000, 21).unwrap();
        let mut full = DMatrix::zeros(pts.len(), 4000);
        for d in 0..q.dim() {
            full.set_row(q.dof_node(d), &z.row(d));
        }
        let t = empirical_variogram(&full, &pts, &bins, &cfg).unwrap();
        let emp = t.get(PairClass::CrossInterface, lag).unwrap().semivariance;
        let exact = *cross_g.last().unwrap();
        assert!((emp - exact).abs() < 0.1 * exact, "{emp} vs {exact}");
    }
    // The rank-one update lowers every semivariance by ½k(q_i − q_j)² ≥ 0,
    // so the barrier shows up as lost correlation, not as larger γ.
    assert!(cross_g.windows(2).all(|w| w[1] <= w[0]));
    assert!(same_g.windows(2).all(|w| w[1] <= w[0]));
    assert!(cross_r.windows(2).all(|w| w[1] < w[0]));
    let cross_drop = cross_r[0] - cross_r[2];
    let same_drop = same_r[0] - same_r[2];
    assert!(same_drop < 0.5 * cross_drop, "same {same_drop} cross {cross_drop}");
}
