//! Linear solves for `u -> m u - div* A grad u` on the torus.
//!
//! The operator is applied matrix-free. Conjugate gradients use a Jacobi
//! preconditioner; all inner products go through [`crate::reduce`] so the
//! iterates are bitwise reproducible.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EdgeField, NodeField, TorusLattice};
use crate::reduce;

/// Largest torus handled by the dense path.
pub const DENSE_SITE_LIMIT: usize = 4096;

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// `u -> mass * u - div* (A grad u)` with periodic boundary.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    conductivity: EdgeField,
    mass: f64,
}

impl OperatorSpec {
    pub fn new(conductivity: EdgeField, mass: f64) -> Result<Self> {
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument(format!("mass {mass} must be finite and >= 0")));
        }
        if conductivity.min() <= 0.0 {
            return Err(Error::InvalidArgument("conductivities must be positive".into()));
        }
        Ok(Self { conductivity, mass })
    }

    /// Mass `1/T`; `T = inf` gives the massless operator.
    pub fn with_time(conductivity: EdgeField, time: f64) -> Result<Self> {
        if !(time > 0.0) {
            return Err(Error::InvalidArgument(format!("time {time} must be positive")));
        }
        Self::new(conductivity, 1.0 / time)
    }

    #[inline]
    pub fn conductivity(&self) -> &EdgeField {
        &self.conductivity
    }

    #[inline]
    pub fn mass(&self) -> f64 {
        self.mass
    }

    #[inline]
    pub fn lattice(&self) -> &TorusLattice {
        self.conductivity.lattice()
    }

    /// Diagonal of the operator: `mass + sum of incident conductivities`.
    pub fn diagonal(&self) -> Vec<f64> {
        let lat = self.lattice();
        let d = lat.dim();
        let a = self.conductivity.values();
        (0..lat.num_sites())
            .map(|x| {
                let mut s = self.mass;
                for i in 0..d {
                    s += a[x * d + i] + a[lat.backward(x, i) * d + i];
                }
                s
            })
            .collect()
    }

    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        stencil(self.lattice(), self.conductivity.values(), self.mass, u, out);
    }
}

/// `(1/T) u - div* (A grad u)`.
pub fn apply_operator(spec: &OperatorSpec, u: &NodeField) -> NodeField {
    spec.lattice().check_same(u.lattice());
    let mut out = vec![0.0; u.values().len()];
    spec.apply_into(u.values(), &mut out);
    NodeField::from_values(*spec.lattice(), out).expect("operator preserves finiteness")
}

/// Gather-form stencil. Rows along the last (contiguous) coordinate; the
/// other directions use precomputed row offsets.
fn stencil(lat: &TorusLattice, a: &[f64], mass: f64, u: &[f64], out: &mut [f64]) {
    let d = lat.dim();
    let n = lat.side();
    let rows = lat.num_sites() / n;
    let strides: Vec<usize> = (0..d).map(|i| lat.stride(i)).collect();
    let mut coord = vec![0usize; d - 1];
    let mut fwd = vec![0usize; d - 1];
    let mut bwd = vec![0usize; d - 1];
    let last = d - 1;
    for row in 0..rows {
        let base = row * n;
        for i in 0..last {
            let s = strides[i];
            fwd[i] = if coord[i] == n - 1 {
                base - (n - 1) * s
            } else {
                base + s
            };
            bwd[i] = if coord[i] == 0 { base + (n - 1) * s } else { base - s };
        }
        for j in 0..n {
            let x = base + j;
            let ux = u[x];
            let mut acc = mass * ux;
            for i in 0..last {
                let yf = fwd[i] + j;
                let yb = bwd[i] + j;
                acc += a[x * d + i] * (ux - u[yf]) + a[yb * d + i] * (ux - u[yb]);
            }
            let xf = if j + 1 == n { base } else { x + 1 };
            let xb = if j == 0 { base + n - 1 } else { x - 1 };
            acc += a[x * d + last] * (ux - u[xf]) + a[xb * d + last] * (ux - u[xb]);
            out[x] = acc;
        }
        for i in (0..last).rev() {
            coord[i] += 1;
            if coord[i] < n {
                break;
            }
            coord[i] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: 100_000,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Preconditioned CG with default iteration cap.
pub fn cg_solve(spec: &OperatorSpec, rhs: &NodeField, tol: f64) -> Result<(NodeField, SolveReport)> {
    cg_solve_with(spec, rhs, SolverOptions::with_tol(tol), None)
}

/// Preconditioned CG. When `mass = 0` the right-hand side must have zero
/// mean and the zero-mean solution is returned.
pub fn cg_solve_with(
    spec: &OperatorSpec,
    rhs: &NodeField,
    opts: SolverOptions,
    initial: Option<&NodeField>,
) -> Result<(NodeField, SolveReport)> {
    let lat = *spec.lattice();
    lat.check_same(rhs.lattice());
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} outside (0, 1)", opts.tol)));
    }
    let n = lat.num_sites();
    let singular = spec.mass() == 0.0;
    let mut b = rhs.values().to_vec();
    if singular {
        let mean = reduce::sum(&b) / n as f64;
        if mean.abs() > 1e-12 * rhs.norm_inf() {
            return Err(Error::IncompatibleRhs { mean });
        }
        b.iter_mut().for_each(|v| *v -= mean);
    }
    let b_norm = reduce::dot(&b, &b).sqrt();
    if b_norm == 0.0 {
        let report = SolveReport {
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
        };
        return Ok((NodeField::zeros(lat), report));
    }

    let inv_diag: Vec<f64> = spec.diagonal().iter().map(|v| 1.0 / v).collect();
    let project = |v: &mut [f64]| {
        if singular {
            let m = reduce::sum(v) / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    };

    let mut x = match initial {
        Some(x0) => {
            lat.check_same(x0.lattice());
            x0.values().to_vec()
        }
        None => vec![0.0; n],
    };
    project(&mut x);
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];

    let mut iterations = 0usize;
    let mut restarts = 0usize;
    let target = opts.tol * b_norm;
    loop {
        // (re)start from the true residual
        spec.apply_into(&x, &mut ap);
        for k in 0..n {
            r[k] = b[k] - ap[k];
        }
        let true_res = reduce::dot(&r, &r).sqrt();
        if true_res <= target {
            project(&mut x);
            let report = SolveReport {
                iterations,
                final_relative_residual: true_res / b_norm,
                converged: true,
            };
            return Ok((NodeField::from_values(lat, x)?, report));
        }
        if iterations >= opts.max_iterations || restarts > 4 {
            let report = SolveReport {
                iterations,
                final_relative_residual: true_res / b_norm,
                converged: false,
            };
            return Err(Error::NonConvergence(report));
        }
        restarts += 1;

        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        project(&mut z);
        p.copy_from_slice(&z);
        let mut rz = reduce::dot(&r, &z);
        while iterations < opts.max_iterations {
            spec.apply_into(&p, &mut ap);
            let pap = reduce::dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            iterations += 1;
            if reduce::dot(&r, &r).sqrt() <= target {
                break;
            }
            for k in 0..n {
                z[k] = r[k] * inv_diag[k];
            }
            project(&mut z);
            let rz_new = reduce::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
    }
}

/// Dense matrix of the operator (row-major site order).
pub fn dense_matrix(spec: &OperatorSpec) -> Result<DMatrix<f64>> {
    let lat = spec.lattice();
    let n = lat.num_sites();
    if n > DENSE_SITE_LIMIT {
        return Err(Error::SizeExceeded {
            sites: n,
            limit: DENSE_SITE_LIMIT,
        });
    }
    let d = lat.dim();
    let a = spec.conductivity().values();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        m[(x, x)] += spec.mass();
        for i in 0..d {
            let y = lat.forward(x, i);
            let w = a[x * d + i];
            m[(x, x)] += w;
            m[(y, y)] += w;
            m[(x, y)] -= w;
            m[(y, x)] -= w;
        }
    }
    Ok(m)
}

/// Eigen-decomposition of `-div* A grad` under the spatial-average inner
/// product, with spectral weights of a source `b`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Ascending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal for `(u, v) -> n^{-d} sum u v`.
    pub eigenvectors: Vec<NodeField>,
    /// `w_k = |(b, v_k)|^2`.
    pub weights: Vec<f64>,
}

impl SpectralData {
    /// Eigenvalues below this are treated as the constant mode.
    pub fn zero_threshold(&self) -> f64 {
        1e-10 * self.eigenvalues.last().copied().unwrap_or(0.0).max(1.0)
    }

    /// `sum_k w_k f(lambda_k)` over the strictly positive spectrum.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let cut = self.zero_threshold();
        self.eigenvalues
            .iter()
            .zip(&self.weights)
            .filter(|(l, _)| **l > cut)
            .map(|(&l, &w)| w * f(l))
            .sum()
    }
}

pub fn dense_spectrum(spec: &OperatorSpec, source: &NodeField) -> Result<SpectralData> {
    if spec.mass() != 0.0 {
        return Err(Error::InvalidArgument(
            "dense spectrum expects the massless operator".into(),
        ));
    }
    spec.lattice().check_same(source.lattice());
    let m = dense_matrix(spec)?;
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let scale = (n as f64).sqrt();
    let lat = *spec.lattice();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in order {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let col = eig.eigenvectors.column(k);
        let v = NodeField::from_values(lat, col.iter().map(|c| c * scale).collect())?;
        let proj = source.avg_dot(&v);
        weights.push(proj * proj);
        eigenvectors.push(v);
    }
    Ok(SpectralData {
        eigenvalues,
        eigenvectors,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, ConductivityLaw, StreamKey};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(d: usize, n: usize, mass: f64, seed: u64) -> OperatorSpec {
        let lat = TorusLattice::new(d, n).unwrap();
        let law = ConductivityLaw::uniform(0.5, 3.0).unwrap();
        OperatorSpec::new(sample_environment(&law, &lat, StreamKey::environment(seed, 0)), mass).unwrap()
    }

    /// Independent assembly: loop over sites and both neighbours per direction.
    fn oracle_matrix(spec: &OperatorSpec) -> DMatrix<f64> {
        let lat = spec.lattice();
        let n = lat.num_sites();
        let mut m = DMatrix::zeros(n, n);
        for x in 0..n {
            m[(x, x)] = spec.mass();
            for i in 0..lat.dim() {
                let up = lat.forward(x, i);
                let dn = lat.backward(x, i);
                let a_up = spec.conductivity().get(x, i);
                let a_dn = spec.conductivity().get(dn, i);
                m[(x, x)] += a_up + a_dn;
                m[(x, up)] -= a_up;
                m[(x, dn)] -= a_dn;
            }
        }
        m
    }

    #[test]
    fn five_point_stencil() {
        let lat = TorusLattice::new(2, 5).unwrap();
        let spec = OperatorSpec::new(EdgeField::constant(lat, 1.0), 0.0).unwrap();
        let out = apply_operator(&spec, &NodeField::delta(lat, 0));
        assert_eq!(out.values()[0], 4.0);
        for y in lat.neighbors(0) {
            assert_eq!(out.values()[y], -1.0);
        }
        assert_eq!(out.values().iter().filter(|v| **v != 0.0).count(), 5);
    }

    #[test]
    fn constant_maps_to_mass() {
        let spec = random_spec(3, 4, 0.125, 1);
        let out = apply_operator(&spec, &NodeField::constant(*spec.lattice(), 1.0));
        assert!(out.values().iter().all(|v| (v - 0.125).abs() < 1e-14));
    }

    #[test]
    fn stencil_matches_independent_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (d, n) in [(1, 5), (2, 3), (2, 4), (3, 3)] {
            let spec = random_spec(d, n, 0.3, d as u64);
            let u = NodeField::from_fn(*spec.lattice(), |_| rng.random_range(-1.0..1.0));
            let m = oracle_matrix(&spec);
            let dense = &m * DVector::from_column_slice(u.values());
            let fast = apply_operator(&spec, &u);
            for k in 0..u.values().len() {
                assert!((dense[k] - fast.values()[k]).abs() < 1e-12);
            }
            assert!((dense_matrix(&spec).unwrap() - &m).abs().max() < 1e-14);
            // symmetric
            assert!((&m - m.transpose()).abs().max() == 0.0);
        }
    }

    #[test]
    fn symmetry_and_positivity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = random_spec(3, 3, 0.25, 4);
        let lat = *spec.lattice();
        for _ in 0..10 {
            let u = NodeField::from_fn(lat, |_| rng.random_range(-1.0..1.0));
            let v = NodeField::from_fn(lat, |_| rng.random_range(-1.0..1.0));
            let a = v.dot(&apply_operator(&spec, &u));
            let b = u.dot(&apply_operator(&spec, &v));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            assert!(u.dot(&apply_operator(&spec, &u)) >= 0.25 * u.dot(&u) - 1e-12);
        }
    }

    #[test]
    fn cg_roundtrip_with_and_without_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mass in [0.0, 1.0 / 16.0] {
            let spec = random_spec(2, 16, mass, 9);
            let lat = *spec.lattice();
            let mut u0 = NodeField::from_fn(lat, |_| rng.random_range(-1.0..1.0));
            if mass == 0.0 {
                u0.remove_mean();
            }
            let rhs = apply_operator(&spec, &u0);
            let (u, rep) = cg_solve(&spec, &rhs, 1e-12).unwrap();
            assert!(rep.converged && rep.final_relative_residual <= 1e-12);
            let err = u.axpy(-1.0, &u0).norm_inf();
            assert!(err < 1e-8, "mass {mass}: err {err}");
            let res = apply_operator(&spec, &u).axpy(-1.0, &rhs).norm2();
            assert!(res <= 1e-12 * rhs.norm2());
        }
    }

    #[test]
    fn cg_matches_dense_solve_for_delta_source() {
        for d in [1, 2, 3] {
            let lat = TorusLattice::new(d, 4).unwrap();
            let spec = OperatorSpec::with_time(EdgeField::constant(lat, 1.0), 8.0).unwrap();
            let rhs = NodeField::delta(lat, 0);
            let (u, _) = cg_solve(&spec, &rhs, 1e-13).unwrap();
            let lu = oracle_matrix(&spec).lu();
            let exact = lu.solve(&DVector::from_column_slice(rhs.values())).unwrap();
            for k in 0..lat.num_sites() {
                assert!((u.values()[k] - exact[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forced_nonconvergence() {
        let spec = random_spec(2, 8, 0.01, 3);
        let rhs = NodeField::delta(*spec.lattice(), 5);
        let opts = SolverOptions {
            tol: 1e-16,
            max_iterations: 1,
        };
        match cg_solve_with(&spec, &rhs, opts, None) {
            Err(Error::NonConvergence(rep)) => {
                assert!(!rep.converged);
                assert!(rep.final_relative_residual > 1e-16);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn incompatible_rhs_rejected() {
        let spec = random_spec(2, 6, 0.0, 3);
        let rhs = NodeField::delta(*spec.lattice(), 0);
        assert!(matches!(
            cg_solve(&spec, &rhs, 1e-10),
            Err(Error::IncompatibleRhs { .. })
        ));
    }

    #[test]
    fn zero_rhs_is_trivial() {
        let spec = random_spec(2, 6, 0.0, 3);
        let (u, rep) = cg_solve(&spec, &NodeField::zeros(*spec.lattice()), 1e-10).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(u.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn iterates_are_bitwise_reproducible() {
        let spec = random_spec(3, 8, 0.1, 12);
        let rhs = NodeField::delta(*spec.lattice(), 17);
        let (a, _) = cg_solve(&spec, &rhs, 1e-10).unwrap();
        let (b, _) = cg_solve(&spec, &rhs, 1e-10).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn spectrum_constant_coefficients() {
        // eigenvalues of c * (-Laplacian) on the 6x6 torus: c * sum_i 4 sin^2(pi k_i / n)
        let lat = TorusLattice::new(2, 6).unwrap();
        let c = 1.7;
        let spec = OperatorSpec::new(EdgeField::constant(lat, c), 0.0).unwrap();
        let b = NodeField::zeros(lat);
        let s = dense_spectrum(&spec, &b).unwrap();
        let mut symbol: Vec<f64> = Vec::new();
        for k1 in 0..6 {
            for k2 in 0..6 {
                let f = |k: usize| 4.0 * (std::f64::consts::PI * k as f64 / 6.0).sin().powi(2);
                symbol.push(c * (f(k1) + f(k2)));
            }
        }
        symbol.sort_by(f64::total_cmp);
        for (l, e) in s.eigenvalues.iter().zip(&symbol) {
            assert!((l - e).abs() < 1e-10);
        }
        assert!(s.eigenvalues[0].abs() < 1e-12);
        assert!(s.weights.iter().all(|w| *w == 0.0));
        let v0 = &s.eigenvectors[0];
        assert!(v0.values().iter().all(|v| (v.abs() - 1.0).abs() < 1e-10));
    }

    #[test]
    fn spectrum_parseval_and_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = random_spec(2, 6, 0.0, 31);
        let lat = *spec.lattice();
        let b = NodeField::from_fn(lat, |_| rng.random_range(-2.0..2.0));
        let s = dense_spectrum(&spec, &b).unwrap();
        let total: f64 = s.weights.iter().sum();
        let direct = b.values().iter().map(|v| v * v).sum::<f64>() / lat.num_sites() as f64;
        assert!((total - direct).abs() < 1e-10);
        for (l, v) in s.eigenvalues.iter().zip(&s.eigenvectors) {
            let r = apply_operator(&spec, v).axpy(-l, v);
            assert!(r.norm2() <= 1e-8);
            assert!((v.avg_dot(v) - 1.0).abs() < 1e-10);
        }
        assert!(matches!(
            dense_spectrum(
                &random_spec(2, 65, 0.0, 1),
                &NodeField::zeros(TorusLattice::new(2, 65).unwrap())
            ),
            Err(Error::SizeExceeded { .. })
        ));
    }

    #[test]
    fn dense_and_iterative_agree() {
        let spec = random_spec(2, 6, 0.0, 40);
        let lat = *spec.lattice();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut b = NodeField::from_fn(lat, |_| rng.random_range(-1.0..1.0));
        b.remove_mean();
        let s = dense_spectrum(&spec, &b).unwrap();
        // u = sum_k (b, v_k) / lambda_k v_k over the nonzero spectrum
        let cut = s.zero_threshold();
        let mut u = NodeField::zeros(lat);
        for (l, v) in s.eigenvalues.iter().zip(&s.eigenvectors) {
            if *l > cut {
                u = u.axpy(b.avg_dot(v) / l, v);
            }
        }
        let (cg, _) = cg_solve(&spec, &b, 1e-13).unwrap();
        assert!(u.axpy(-1.0, &cg).norm_inf() < 1e-9);
    }
}
