//! Exact expectations over every configuration of a small two-point
//! environment, and a brute-force check of the covariance estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{law_moments, purpose, sample_environment_from, ConductivityLaw, StreamKey};
use crate::error::{Error, Result};
use crate::estimators::IdentityReport;
use crate::lattice::{EdgeField, TorusLattice};

/// Largest number of edges that will be enumerated.
pub const MAX_ENUMERABLE_EDGES: usize = 20;

/// Relative slack allowed on the right-hand side of the covariance bound.
pub const COVARIANCE_SLACK: f64 = 1e-6;

/// A scalar functional of the environment.
pub trait Statistic: Fn(&EdgeField) -> Result<f64> + Sync {}
impl<F: Fn(&EdgeField) -> Result<f64> + Sync> Statistic for F {}

/// All `2^E` configurations of a two-point law. Bit `e` of a configuration
/// index set means edge `e` takes the value `alpha`.
#[derive(Debug, Clone)]
pub struct EnumerableEnvironment {
    lattice: TorusLattice,
    alpha: f64,
    beta: f64,
    p: f64,
}

impl EnumerableEnvironment {
    pub fn new(lattice: TorusLattice, law: ConductivityLaw) -> Result<Self> {
        let ConductivityLaw::TwoPoint { alpha, beta, p } = law.validated()? else {
            return Err(Error::InvalidLaw(format!(
                "enumeration needs a two-point law, got {law}"
            )));
        };
        if lattice.num_edges() > MAX_ENUMERABLE_EDGES {
            return Err(Error::SizeExceeded {
                sites: lattice.num_edges(),
                limit: MAX_ENUMERABLE_EDGES,
            });
        }
        Ok(Self {
            lattice,
            alpha,
            beta,
            p,
        })
    }

    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }

    pub fn law(&self) -> ConductivityLaw {
        ConductivityLaw::TwoPoint {
            alpha: self.alpha,
            beta: self.beta,
            p: self.p,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.lattice.num_edges()
    }

    pub fn len(&self) -> usize {
        1 << self.num_edges()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn configuration(&self, index: usize) -> EdgeField {
        let values = (0..self.num_edges())
            .map(|e| if index >> e & 1 == 1 { self.alpha } else { self.beta })
            .collect();
        EdgeField::from_values(self.lattice, values).expect("two-point values are finite")
    }

    pub fn probability(&self, index: usize) -> f64 {
        let k = (index as u64).count_ones() as i32;
        self.p.powi(k) * (1.0 - self.p).powi(self.num_edges() as i32 - k)
    }

    /// Compensated sum of all configuration weights.
    pub fn total_probability(&self) -> f64 {
        neumaier((0..self.len()).map(|i| self.probability(i)))
    }
}

fn neumaier(it: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in it {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `sum_config p(config) X(config)`, evaluated in parallel and reduced in
/// configuration order.
pub fn exact_expectation(env: &EnumerableEnvironment, statistic: impl Statistic) -> Result<f64> {
    let values = evaluate_all(env, &statistic)?;
    Ok(neumaier(values.iter().enumerate().map(|(i, v)| env.probability(i) * v)))
}

fn evaluate_all(env: &EnumerableEnvironment, statistic: &impl Statistic) -> Result<Vec<f64>> {
    (0..env.len())
        .into_par_iter()
        .map(|i| statistic(&env.configuration(i)))
        .collect()
}

/// `cov(X, Y)` by enumeration.
pub fn exact_covariance(env: &EnumerableEnvironment, x: impl Statistic, y: impl Statistic) -> Result<f64> {
    let xs = evaluate_all(env, &x)?;
    let ys = evaluate_all(env, &y)?;
    let weight = |i: usize| env.probability(i);
    let mx = neumaier(xs.iter().enumerate().map(|(i, v)| weight(i) * v));
    let my = neumaier(ys.iter().enumerate().map(|(i, v)| weight(i) * v));
    Ok(neumaier(
        (0..env.len()).map(|i| weight(i) * (xs[i] - mx) * (ys[i] - my)),
    ))
}

/// Both sides of the covariance estimate and the per-edge factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBound {
    pub report: IdentityReport,
    pub grid_size: usize,
    /// `<sup_{a_i} |dX/da_i|^2>^{1/2}` per edge.
    pub x_factors: Vec<f64>,
    pub y_factors: Vec<f64>,
    pub variance: f64,
}

/// `cov(X, Y) <= sum_i <sup_{a_i} |dX/da_i|^2>^{1/2} <sup_{a_i} |dY/da_i|^2>^{1/2} var[a_1]`.
///
/// The supremum over `a_i in [alpha, beta]` is taken over `grid_size`
/// equally spaced points, each derivative a central difference, while the
/// other edges range over the enumeration.
pub fn verify_covariance_bound(
    env: &EnumerableEnvironment,
    x: impl Statistic,
    y: impl Statistic,
    grid_size: usize,
) -> Result<CovarianceBound> {
    if grid_size < 5 {
        return Err(Error::InvalidArgument(format!("grid size {grid_size} below 5")));
    }
    let lhs = exact_covariance(env, &x, &y)?;
    let (alpha, beta) = (env.alpha, env.beta);
    let width = beta - alpha;
    let step = if width > 0.0 { 1e-4 * width } else { 1e-4 * alpha };
    let grid: Vec<f64> = (0..grid_size)
        .map(|k| alpha + width * k as f64 / (grid_size - 1) as f64)
        .collect();
    let e = env.num_edges();

    let mut x_factors = Vec::with_capacity(e);
    let mut y_factors = Vec::with_capacity(e);
    for edge in 0..e {
        // configurations of the other edges: insert a zero bit at `edge`
        let rows: Vec<(f64, f64, f64)> = (0..env.len() / 2)
            .into_par_iter()
            .map(|rest| {
                let low = rest & ((1 << edge) - 1);
                let index = low | ((rest >> edge) << (edge + 1));
                let base = env.configuration(index);
                // probability of the other edges alone
                let k = (rest as u64).count_ones() as i32;
                let weight = env.p.powi(k) * (1.0 - env.p).powi(e as i32 - 1 - k);
                let (mut sx, mut sy) = (0.0f64, 0.0f64);
                let (site, dir) = (edge / env.lattice.dim(), edge % env.lattice.dim());
                for &g in &grid {
                    let mut plus = base.clone();
                    plus.set(site, dir, g + step);
                    let mut minus = base.clone();
                    minus.set(site, dir, g - step);
                    let dx = (x(&plus)? - x(&minus)?) / (2.0 * step);
                    let dy = (y(&plus)? - y(&minus)?) / (2.0 * step);
                    sx = sx.max(dx * dx);
                    sy = sy.max(dy * dy);
                }
                Ok((weight, sx, sy))
            })
            .collect::<Result<_>>()?;
        x_factors.push(neumaier(rows.iter().map(|r| r.0 * r.1)).sqrt());
        y_factors.push(neumaier(rows.iter().map(|r| r.0 * r.2)).sqrt());
    }
    let (_, variance) = law_moments(&env.law());
    let rhs = neumaier(x_factors.iter().zip(&y_factors).map(|(a, b)| a * b)) * variance;
    let report = IdentityReport::inequality(format!("covariance bound grid={grid_size}"), lhs, rhs, COVARIANCE_SLACK);
    Ok(CovarianceBound {
        report,
        grid_size,
        x_factors,
        y_factors,
        variance,
    })
}

/// Runs the bound at grid sizes 5 and 9; the verdicts must agree.
pub fn covariance_bound_stable(
    env: &EnumerableEnvironment,
    x: impl Statistic,
    y: impl Statistic,
) -> Result<(CovarianceBound, CovarianceBound)> {
    let coarse = verify_covariance_bound(env, &x, &y, 5)?;
    let fine = verify_covariance_bound(env, &x, &y, 9)?;
    if coarse.report.pass != fine.report.pass {
        return Err(Error::IdentityFailure(format!(
            "covariance verdict flips between grid 5 ({}) and grid 9 ({})",
            coarse.report.pass, fine.report.pass
        )));
    }
    Ok((coarse, fine))
}

/// Monte Carlo mean and standard error from the ordinary sampler, one
/// random stream per block of `BLOCK` samples.
pub fn monte_carlo_expectation(
    lattice: &TorusLattice,
    law: &ConductivityLaw,
    statistic: impl Statistic,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    const BLOCK: usize = 10_000;
    if samples < 2 {
        return Err(Error::InsufficientReplicas("Monte Carlo needs two samples".into()));
    }
    let blocks = samples.div_ceil(BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(samples - b * BLOCK);
            let mut rng = StreamKey::new(seed, b as u64, purpose::PROBE).rng();
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = statistic(&sample_environment_from(law, lattice, &mut rng))?;
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    let n = samples as f64;
    let mean = sums.iter().map(|p| p.0).sum::<f64>() / n;
    let second = sums.iter().map(|p| p.1).sum::<f64>() / n;
    let var = (second - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::{solve_modified_corrector_with, Direction};
    use crate::solver::SolverOptions;

    fn tiny() -> EnumerableEnvironment {
        let lat = TorusLattice::new(2, 2).unwrap();
        EnumerableEnvironment::new(lat, ConductivityLaw::two_point(1.0, 2.0, 0.5).unwrap()).unwrap()
    }

    fn phi0(a: &EdgeField) -> Result<f64> {
        let xi = Direction::axis(2, 0);
        let s = solve_modified_corrector_with(a, 1.0, &xi, SolverOptions::with_tol(1e-13), None)?;
        Ok(s.phi.values()[0])
    }

    #[test]
    fn probabilities_sum_to_one() {
        let env = tiny();
        assert_eq!(env.len(), 256);
        assert!((env.total_probability() - 1.0).abs() < 1e-14);
        let skew =
            EnumerableEnvironment::new(*env.lattice(), ConductivityLaw::two_point(1.0, 3.0, 0.3).unwrap()).unwrap();
        assert!((skew.total_probability() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn guards() {
        let big = TorusLattice::new(2, 4).unwrap();
        let law = ConductivityLaw::two_point(1.0, 2.0, 0.5).unwrap();
        assert!(matches!(
            EnumerableEnvironment::new(big, law),
            Err(Error::SizeExceeded { .. })
        ));
        let lat = TorusLattice::new(2, 2).unwrap();
        assert!(EnumerableEnvironment::new(lat, ConductivityLaw::uniform(1.0, 2.0).unwrap()).is_err());
        assert!(verify_covariance_bound(&tiny(), |_: &EdgeField| Ok(1.0), |_: &EdgeField| Ok(1.0), 4).is_err());
    }

    #[test]
    fn trivial_expectations() {
        let env = tiny();
        assert!((exact_expectation(&env, |_: &EdgeField| Ok(1.0)).unwrap() - 1.0).abs() < 1e-14);
        let m = exact_expectation(&env, |a: &EdgeField| Ok(a.values()[0])).unwrap();
        assert!((m - law_moments(&env.law()).0).abs() < 1e-14);
        let skew =
            EnumerableEnvironment::new(*env.lattice(), ConductivityLaw::two_point(1.0, 3.0, 0.3).unwrap()).unwrap();
        let m = exact_expectation(&skew, |a: &EdgeField| Ok(a.values()[5])).unwrap();
        assert!((m - (0.3 + 0.7 * 3.0)).abs() < 1e-14);
    }

    #[test]
    fn variance_nonnegative_and_independent_edges_uncorrelated() {
        let env = tiny();
        let v = exact_covariance(&env, phi0, phi0).unwrap();
        assert!(v > 0.0);
        let r = verify_covariance_bound(
            &env,
            |a: &EdgeField| Ok(a.values()[1]),
            |a: &EdgeField| Ok(a.values()[2].powi(2)),
            5,
        )
        .unwrap();
        assert!(r.report.lhs.abs() < 1e-15);
        assert!(r.report.pass);
    }

    #[test]
    fn single_edge_bound_is_sharp() {
        // X = Y = a_3: cov = var, each factor 1 on edge 3
        let env = tiny();
        let r = verify_covariance_bound(
            &env,
            |a: &EdgeField| Ok(a.values()[3]),
            |a: &EdgeField| Ok(a.values()[3]),
            7,
        )
        .unwrap();
        assert!((r.report.lhs - 0.25).abs() < 1e-14);
        assert!((r.report.rhs - 0.25).abs() < 1e-9);
        assert!(r.report.pass);
        assert!(r
            .x_factors
            .iter()
            .enumerate()
            .all(|(e, f)| if e == 3 { (f - 1.0).abs() < 1e-9 } else { *f == 0.0 }));
    }

    #[test]
    fn corrector_variance_bound() {
        let env = tiny();
        let r = verify_covariance_bound(&env, phi0, phi0, 7).unwrap();
        assert!(r.report.pass, "{:?}", r.report);
        assert!(r.report.lhs > 0.0 && r.report.lhs <= r.report.rhs);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let env = tiny();
        let exact = exact_expectation(&env, |a: &EdgeField| Ok(a.values()[0] * a.values()[7])).unwrap();
        let (mean, se) = monte_carlo_expectation(
            env.lattice(),
            &env.law(),
            |a: &EdgeField| Ok(a.values()[0] * a.values()[7]),
            40_000,
            3,
        )
        .unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} {exact} {se}");
    }
}
