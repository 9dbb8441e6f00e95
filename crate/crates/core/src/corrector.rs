//! Regularized and periodic correctors, the dyadic increment `psi_T`, and
//! finite-difference checks of their sensitivity to single conductivities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{gradient, EdgeField, NodeField};
use crate::solver::{apply_operator, cg_solve_with, OperatorSpec, SolveReport, SolverOptions};

/// A direction `xi` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Requires `|xi| = 1` up to rounding.
    pub fn unit(components: Vec<f64>) -> Result<Self> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if components.is_empty() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "direction {components:?} is not a unit vector"
            )));
        }
        Ok(Self(components))
    }

    /// Rescales a nonzero vector to unit length.
    pub fn normalized(components: Vec<f64>) -> Result<Self> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidArgument("direction must be nonzero".into()));
        }
        Ok(Self(components.into_iter().map(|c| c / norm).collect()))
    }

    /// `e_i` in dimension `d`.
    pub fn axis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Self(v)
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A corrector together with its regularization time (`inf` for the
/// periodic corrector) and solver report.
#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    pub phi: NodeField,
    pub time: f64,
    pub xi: Direction,
    pub report: SolveReport,
}

/// `psi_T = T (phi_{2T} - phi_T)`.
#[derive(Debug, Clone)]
pub struct PsiField {
    pub psi: NodeField,
    pub time: f64,
}

/// `div* (A xi)`: the right-hand side of every corrector equation.
pub fn corrector_rhs(a: &EdgeField, xi: &[f64]) -> NodeField {
    let lat = *a.lattice();
    assert_eq!(xi.len(), lat.dim(), "direction dimension");
    NodeField::from_fn(lat, |x| {
        (0..lat.dim())
            .map(|i| xi[i] * (a.get(x, i) - a.get(lat.backward(x, i), i)))
            .sum()
    })
}

fn solve_corrector(
    a: &EdgeField,
    mass: f64,
    xi: &[f64],
    opts: SolverOptions,
    initial: Option<&NodeField>,
) -> Result<(NodeField, SolveReport)> {
    let spec = OperatorSpec::new(a.clone(), mass)?;
    let rhs = corrector_rhs(a, xi);
    let (mut phi, report) = cg_solve_with(&spec, &rhs, opts, initial)?;
    // mean zero is forced by the equation when mass > 0; pin it exactly
    phi.remove_mean();
    Ok((phi, report))
}

fn check_dim(a: &EdgeField, xi: &Direction) -> Result<()> {
    if xi.dim() != a.lattice().dim() {
        return Err(Error::InvalidArgument(format!(
            "direction has {} components on a {}-dimensional lattice",
            xi.dim(),
            a.lattice().dim()
        )));
    }
    Ok(())
}

/// Solves `T^{-1} phi_T - div* A (xi + grad phi_T) = 0`.
pub fn solve_modified_corrector(a: &EdgeField, time: f64, xi: &Direction) -> Result<CorrectorSolution> {
    solve_modified_corrector_with(a, time, xi, SolverOptions::default(), None)
}

pub fn solve_modified_corrector_with(
    a: &EdgeField,
    time: f64,
    xi: &Direction,
    opts: SolverOptions,
    initial: Option<&NodeField>,
) -> Result<CorrectorSolution> {
    check_dim(a, xi)?;
    if !(time > 0.0) {
        return Err(Error::InvalidArgument(format!("time {time} must be positive")));
    }
    let (phi, report) = solve_corrector(a, 1.0 / time, xi.components(), opts, initial)?;
    Ok(CorrectorSolution {
        phi,
        time,
        xi: xi.clone(),
        report,
    })
}

/// Solves `-div* A (xi + grad phi) = 0` on the torus, zero-mean gauge.
pub fn solve_periodic_corrector(a: &EdgeField, xi: &Direction) -> Result<CorrectorSolution> {
    solve_periodic_corrector_with(a, xi, SolverOptions::default())
}

pub fn solve_periodic_corrector_with(a: &EdgeField, xi: &Direction, opts: SolverOptions) -> Result<CorrectorSolution> {
    check_dim(a, xi)?;
    let (phi, report) = solve_corrector(a, 0.0, xi.components(), opts, None)?;
    Ok(CorrectorSolution {
        phi,
        time: f64::INFINITY,
        xi: xi.clone(),
        report,
    })
}

/// Returns `(psi_T, phi_T, phi_{2T})`.
pub fn build_psi(a: &EdgeField, time: f64, xi: &Direction) -> Result<(PsiField, CorrectorSolution, CorrectorSolution)> {
    build_psi_with(a, time, xi, SolverOptions::default())
}

pub fn build_psi_with(
    a: &EdgeField,
    time: f64,
    xi: &Direction,
    opts: SolverOptions,
) -> Result<(PsiField, CorrectorSolution, CorrectorSolution)> {
    let phi_t = solve_modified_corrector_with(a, time, xi, opts, None)?;
    let phi_2t = solve_modified_corrector_with(a, 2.0 * time, xi, opts, Some(&phi_t.phi))?;
    let psi = psi_from(&phi_t, &phi_2t);
    Ok((psi, phi_t, phi_2t))
}

/// `T (phi_{2T} - phi_T)` from two solutions at `T` and `2T`.
pub fn psi_from(phi_t: &CorrectorSolution, phi_2t: &CorrectorSolution) -> PsiField {
    debug_assert_eq!(phi_2t.time, 2.0 * phi_t.time);
    let time = phi_t.time;
    let values = phi_2t
        .phi
        .values()
        .iter()
        .zip(phi_t.phi.values())
        .map(|(b, a)| time * (b - a))
        .collect();
    PsiField {
        psi: NodeField::from_values(*phi_t.phi.lattice(), values).expect("finite"),
        time,
    }
}

/// Relative residuals of `T^{-1} psi - div* A grad psi = phi_{2T} / 2` and
/// `(2T)^{-1} psi - div* A grad psi = phi_T / 2`.
pub fn psi_residuals(
    a: &EdgeField,
    psi: &PsiField,
    phi_t: &CorrectorSolution,
    phi_2t: &CorrectorSolution,
) -> Result<(f64, f64)> {
    let t = psi.time;
    let rel = |mass: f64, target: &NodeField| -> Result<f64> {
        let spec = OperatorSpec::new(a.clone(), mass)?;
        let lhs = apply_operator(&spec, &psi.psi);
        let half = target.scaled(0.5);
        let scale = half.norm2().max(f64::MIN_POSITIVE);
        Ok(lhs.axpy(-1.0, &half).norm2() / scale)
    };
    let first = if phi_2t.phi.norm2() == 0.0 && psi.psi.norm2() == 0.0 {
        0.0
    } else {
        rel(1.0 / t, &phi_2t.phi)?
    };
    let second = if phi_t.phi.norm2() == 0.0 && psi.psi.norm2() == 0.0 {
        0.0
    } else {
        rel(0.5 / t, &phi_t.phi)?
    };
    Ok((first, second))
}

/// Discrete Green function `G_T(., pole)`: solves `(T^{-1} - div* A grad) G = delta_pole`.
pub(crate) fn green_values(a: &EdgeField, time: f64, pole: usize, opts: SolverOptions) -> Result<NodeField> {
    let spec = OperatorSpec::with_time(a.clone(), time)?;
    let (g, _) = cg_solve_with(&spec, &NodeField::delta(*a.lattice(), pole), opts, None)?;
    Ok(g)
}

/// Finite-difference versus closed-form sensitivity of `phi_T(x)` and
/// `psi_T(x)` to the conductivity of one edge.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub phi_finite_difference: f64,
    pub phi_formula: f64,
    pub phi_relative_error: f64,
    pub psi_finite_difference: f64,
    pub psi_formula: f64,
    pub psi_relative_error: f64,
}

/// Tolerance used for the solves inside the sensitivity check; the central
/// difference divides solver error by `2h`.
const SENSITIVITY_TOL: f64 = 1e-13;

/// Compares central differences in `a(e)`, `e = [z, z + e_i]`, against
///
/// * `d phi_T(x) / d a(e) = -(xi_i + grad_i phi_T(z)) grad_{z_i} G_T(z, x)`
/// * `d psi_T(x) / d a(e) = -grad_i psi_T(z) grad_{z_i} G_T(z, x)
///    - 1/2 sum_w G_T(x, w) (xi_i + grad_i phi_{2T}(z)) grad_{z_i} G_{2T}(z, w)`.
pub fn verify_sensitivity_formulas(
    a: &EdgeField,
    time: f64,
    xi: &Direction,
    edge: (usize, usize),
    probe: usize,
    h: f64,
) -> Result<SensitivityReport> {
    check_dim(a, xi)?;
    let lat = *a.lattice();
    let (z, i) = edge;
    if i >= lat.dim() || z >= lat.num_sites() || probe >= lat.num_sites() {
        return Err(Error::InvalidArgument("edge or probe outside the lattice".into()));
    }
    let a_e = a.get(z, i);
    if !(h > 0.0 && a_e - h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step {h} leaves (0, inf) at a(e) = {a_e}"
        )));
    }
    let opts = SolverOptions::with_tol(SENSITIVITY_TOL);
    let xi_i = xi.components()[i];

    let phi_t = solve_modified_corrector_with(a, time, xi, opts, None)?;
    let phi_2t = solve_modified_corrector_with(a, 2.0 * time, xi, opts, Some(&phi_t.phi))?;
    let psi = psi_from(&phi_t, &phi_2t);

    let g_t = green_values(a, time, probe, opts)?;
    let grad_g = g_t.values()[lat.forward(z, i)] - g_t.values()[z];
    let grad_phi_t = gradient(&phi_t.phi);
    let grad_phi_2t = gradient(&phi_2t.phi);
    let grad_psi = gradient(&psi.psi);

    let phi_formula = -(xi_i + grad_phi_t.get(z, i)) * grad_g;

    // H = (2T)-resolvent applied to G_T(., x): H(z) = sum_w G_{2T}(z, w) G_T(w, x)
    let spec_2t = OperatorSpec::with_time(a.clone(), 2.0 * time)?;
    let (h_field, _) = cg_solve_with(&spec_2t, &g_t, opts, None)?;
    let grad_h = h_field.values()[lat.forward(z, i)] - h_field.values()[z];
    let psi_formula = -grad_psi.get(z, i) * grad_g - 0.5 * (xi_i + grad_phi_2t.get(z, i)) * grad_h;

    let perturbed = |delta: f64| -> Result<(f64, f64)> {
        let mut b = a.clone();
        b.set(z, i, a_e + delta);
        let p_t = solve_modified_corrector_with(&b, time, xi, opts, Some(&phi_t.phi))?;
        let p_2t = solve_modified_corrector_with(&b, 2.0 * time, xi, opts, Some(&phi_2t.phi))?;
        let psi_x = time * (p_2t.phi.values()[probe] - p_t.phi.values()[probe]);
        Ok((p_t.phi.values()[probe], psi_x))
    };
    let (phi_plus, psi_plus) = perturbed(h)?;
    let (phi_minus, psi_minus) = perturbed(-h)?;
    let phi_fd = (phi_plus - phi_minus) / (2.0 * h);
    let psi_fd = (psi_plus - psi_minus) / (2.0 * h);

    Ok(SensitivityReport {
        phi_finite_difference: phi_fd,
        phi_formula,
        phi_relative_error: relative_gap(phi_fd, phi_formula),
        psi_finite_difference: psi_fd,
        psi_formula,
        psi_relative_error: relative_gap(psi_fd, psi_formula),
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `d phi_T(x) / d a(e)` for every edge at once via the closed form.
pub fn phi_sensitivity_map(a: &EdgeField, phi_t: &CorrectorSolution, probe: usize) -> Result<EdgeField> {
    let lat = *a.lattice();
    let g = green_values(a, phi_t.time, probe, SolverOptions::default())?;
    let grad_g = gradient(&g);
    let grad_phi = gradient(&phi_t.phi);
    let xi = phi_t.xi.components();
    let values = (0..lat.num_sites())
        .flat_map(|z| (0..lat.dim()).map(move |i| (z, i)))
        .map(|(z, i)| -(xi[i] + grad_phi.get(z, i)) * grad_g.get(z, i))
        .collect();
    EdgeField::from_values(lat, values)
}
