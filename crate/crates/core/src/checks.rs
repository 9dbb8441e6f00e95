//! Verification runs shared by the `verify` subcommand and the acceptance
//! suite. Each run returns [`CheckLine`]s; a line passes when its measured
//! quantity lies within the stated tolerance or window.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{build_psi, solve_modified_corrector, verify_sensitivity_formulas, Direction};
use crate::environment::{purpose, sample_environment, ConductivityLaw, StreamKey};
use crate::error::{Error, Result};
use crate::estimators::{identity_suite, spectral_cross_check, IdentityReport, IDENTITY_TOL};
use crate::experiments::{masked_estimate_samples, report_csv, run_study, StudyKind, StudyManifest, StudyResult};
use crate::fit::ScalingFit;
use crate::green::{convolution_scaling, decay_profile, green_function, harnack_ratio, DEFAULT_DECAY_EXPONENT};
use crate::lattice::{divergence, gradient, EdgeField, NodeField, TorusLattice, VectorFieldAtSites};
use crate::probability::{covariance_bound_stable, EnumerableEnvironment};

/// Relative tolerance of the sensitivity comparison.
pub const SENSITIVITY_TOL: f64 = 1e-3;
/// Finite-difference step of the sensitivity comparison.
pub const SENSITIVITY_STEP: f64 = 1e-4;
/// Allowed `|slope|` of the Green-function ratio profiles.
pub const RATIO_SLOPE_WINDOW: f64 = 0.2;
/// Half width of the convolution slope windows.
pub const CONVOLUTION_SLOPE_WINDOW: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }

    /// A line for a value that must fall in `[lo, hi]`.
    pub fn window(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value >= lo && value <= hi, format!("{value:.4} in [{lo}, {hi}]"))
    }

    pub fn from_report(prefix: &str, report: &IdentityReport) -> Self {
        Self::new(
            format!("{prefix}{}", report.name),
            report.pass,
            format!(
                "lhs {:.9e} rhs {:.9e} relative {:.2e} (tol {:.0e})",
                report.lhs, report.rhs, report.relative, report.tolerance
            ),
        )
    }
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

pub fn all_pass(lines: &[CheckLine]) -> bool {
    lines.iter().all(|l| l.pass)
}

fn sample(law: &ConductivityLaw, dim: usize, side: usize, seed: u64, replica: u64) -> Result<EdgeField> {
    let lat = TorusLattice::new(dim, side)?;
    Ok(sample_environment(law, &lat, StreamKey::environment(seed, replica)))
}

/// `sum grad u . F = -sum u div* F` for random `u` and `F`.
pub fn adjointness_report(lattice: &TorusLattice, seed: u64) -> Result<IdentityReport> {
    let mut rng = StreamKey::new(seed, 1, purpose::TEST_FIELD).rng();
    let u = NodeField::from_fn(*lattice, |_| rng.random_range(-1.0..1.0));
    let f = VectorFieldAtSites::from_values(
        *lattice,
        (0..lattice.num_edges()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let lhs = gradient(&u).dot(&f);
    let rhs = -u.dot(&divergence(&f));
    Ok(IdentityReport::symmetric("adjointness", lhs, rhs, IDENTITY_TOL))
}

/// Mass identity at two poles and the symmetry of `G_T` between them.
pub fn green_identity_reports(a: &EdgeField, time: f64) -> Result<Vec<IdentityReport>> {
    let lat = a.lattice();
    let far = lat.num_sites() / 2 + lat.side() / 3;
    let g0 = green_function(a, time, 0)?;
    let g1 = green_function(a, time, far)?;
    let scale = g0.values.norm_inf().max(g1.values.norm_inf());
    Ok(vec![
        IdentityReport::new("mass identity (pole 0)", g0.values.sum() / time, 1.0, 1.0, IDENTITY_TOL),
        IdentityReport::new(
            format!("mass identity (pole {far})"),
            g1.values.sum() / time,
            1.0,
            1.0,
            IDENTITY_TOL,
        ),
        IdentityReport::new(
            "Green symmetry",
            g0.values.values()[far],
            g1.values.values()[0],
            scale,
            IDENTITY_TOL,
        ),
    ])
}

/// Exact identities on ten environments cycling through `d in {2, 3}`,
/// `n in {8, 16}` and `T in {4, 16}`.
pub fn identity_checks(law: &ConductivityLaw, seed: u64) -> Result<Vec<CheckLine>> {
    let cases: Vec<(usize, usize, f64)> = (0..10)
        .map(|k| ([2, 3][k % 2], [8, 16][(k / 2) % 2], [4.0, 16.0][(k / 4) % 2]))
        .collect();
    let per_case = cases
        .par_iter()
        .enumerate()
        .map(|(k, &(d, n, t))| {
            let a = sample(law, d, n, seed, k as u64)?;
            let xi = Direction::axis(d, k % d);
            let prefix = format!("d={d} n={n} T={t} env={k}: ");
            let mut reports = vec![adjointness_report(a.lattice(), seed + k as u64)?];
            reports.extend(green_identity_reports(&a, t)?);
            reports.extend(identity_suite(&a, t, &xi, seed + k as u64)?);
            Ok(reports
                .iter()
                .map(|r| CheckLine::from_report(&prefix, r))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Finite-volume spectral formulas against the iterative solvers on `d = 2`,
/// `n = 6` samples.
pub fn spectral_checks(law: &ConductivityLaw, samples: usize, seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    for k in 0..samples {
        let a = sample(law, 2, 6, seed, k as u64)?;
        let prefix = format!("sample {k}: ");
        for r in spectral_cross_check(&a, &[1.0, 4.0, 16.0, 64.0], &Direction::axis(2, k % 2))? {
            out.push(CheckLine::from_report(&prefix, &r));
        }
    }
    Ok(out)
}

/// Closed-form sensitivities of `phi_T(x)` and `psi_T(x)` against central
/// differences on `d = 2`, `n = 16` samples.
pub fn sensitivity_checks(law: &ConductivityLaw, samples: usize, seed: u64) -> Result<Vec<CheckLine>> {
    const PROBES: [((usize, usize), usize); 3] = [((0, 0), 0), ((40, 1), 17), ((130, 0), 99)];
    let mut out = Vec::new();
    for k in 0..samples {
        let a = sample(law, 2, 16, seed, k as u64)?;
        for &(edge, probe) in &PROBES {
            for time in [4.0, 16.0] {
                let r = verify_sensitivity_formulas(&a, time, &Direction::axis(2, 0), edge, probe, SENSITIVITY_STEP)?;
                let name = format!("sample {k} T={time} edge {edge:?} probe {probe}");
                out.push(CheckLine::new(
                    format!("{name} phi"),
                    r.phi_relative_error <= SENSITIVITY_TOL,
                    format!(
                        "fd {:.6e} formula {:.6e} relative {:.2e}",
                        r.phi_finite_difference, r.phi_formula, r.phi_relative_error
                    ),
                ));
                out.push(CheckLine::new(
                    format!("{name} psi"),
                    r.psi_relative_error <= SENSITIVITY_TOL,
                    format!(
                        "fd {:.6e} formula {:.6e} relative {:.2e}",
                        r.psi_finite_difference, r.psi_formula, r.psi_relative_error
                    ),
                ));
            }
        }
    }
    Ok(out)
}

/// Covariance inequality by enumeration on the `2 x 2` torus with the
/// two-point law `{1, 2}`, for `(phi_T(0), phi_T(0))` and
/// `(phi_T(0), psi_T(0))`, at grid sizes 5 and 9.
pub fn covariance_checks(times: &[f64]) -> Result<Vec<CheckLine>> {
    let env = EnumerableEnvironment::new(TorusLattice::new(2, 2)?, ConductivityLaw::two_point(1.0, 2.0, 0.5)?)?;
    let xi = Direction::axis(2, 0);
    let mut out = Vec::new();
    for &time in times {
        let phi0 = |a: &EdgeField| -> Result<f64> { Ok(solve_modified_corrector(a, time, &xi)?.phi.values()[0]) };
        let psi0 = |a: &EdgeField| -> Result<f64> { Ok(build_psi(a, time, &xi)?.0.psi.values()[0]) };
        let pairs: [(&str, bool); 2] = [("(phi, phi)", false), ("(phi, psi)", true)];
        for (label, use_psi) in pairs {
            let outcome = if use_psi {
                covariance_bound_stable(&env, phi0, psi0)
            } else {
                covariance_bound_stable(&env, phi0, phi0)
            };
            let name = format!("T={time} {label}");
            match outcome {
                Ok((coarse, fine)) => {
                    for b in [coarse, fine] {
                        out.push(CheckLine::new(
                            format!("{name} grid {}", b.grid_size),
                            b.report.pass,
                            format!("cov {:.6e} <= bound {:.6e}", b.report.lhs, b.report.rhs),
                        ));
                    }
                }
                Err(Error::IdentityFailure(msg)) => out.push(CheckLine::new(name, false, msg)),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Mean and standard error of `A_{T,L}` with `T = L^2` in `d = 2` over
/// `replicas` samples of `law`.
pub fn masked_mean(law: &ConductivityLaw, half_width: usize, replicas: usize, seed: u64) -> Result<(f64, f64)> {
    let mut manifest = StudyManifest::new(StudyKind::Full, 2, *law, replicas, seed).with_half_widths(vec![half_width]);
    manifest.reference = law.self_dual_value(2);
    let (_, _, values) = masked_estimate_samples(&manifest, half_width)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// `A_{T,L}` with the self-dual law against `sqrt(alpha beta)`, within three
/// standard errors.
pub fn duality_check(law: &ConductivityLaw, half_width: usize, replicas: usize, seed: u64) -> Result<CheckLine> {
    let target = law
        .self_dual_value(2)
        .ok_or_else(|| Error::InvalidArgument("law is not self-dual".into()))?;
    let (mean, se) = masked_mean(law, half_width, replicas, seed)?;
    let z = (mean - target) / se;
    Ok(CheckLine::new(
        format!(
            "duality L={half_width} T={} replicas={replicas}",
            half_width * half_width
        ),
        z.abs() <= 3.0,
        format!("mean {mean:.6} se {se:.2e} target {target} ({z:+.2} se)"),
    ))
}

/// Averaged Green-function ratio profiles over independent samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenRatioStudy {
    pub dim: usize,
    pub time: f64,
    pub side: usize,
    pub samples: usize,
    /// Outer radii of the annuli `1 <= R_lo < R_hi <= sqrt T`.
    pub decay_radii: Vec<f64>,
    /// Sample mean of `sup G / g_T` per annulus.
    pub decay_ratios: Vec<f64>,
    pub decay_fit: ScalingFit,
    pub harnack_radii: Vec<f64>,
    /// Sample mean of the Harnack ratio per radius.
    pub harnack_ratios: Vec<f64>,
    pub harnack_fit: ScalingFit,
}

/// Radii `2^k >= 2` with `R <= sqrt(T) / 2` and `4R < n/2`.
pub fn harnack_radii(time: f64, side: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 2.0;
    while r <= 0.5 * time.sqrt() && 4.0 * r < side as f64 / 2.0 {
        out.push(r);
        r *= 2.0;
    }
    out
}

/// Decay ratios of `G_T(., 0)` against its envelope and Harnack ratios of
/// the same function, which is a nonnegative subsolution away from the pole.
pub fn green_ratio_study(
    law: &ConductivityLaw,
    dim: usize,
    time: f64,
    side: usize,
    samples: usize,
    seed: u64,
) -> Result<GreenRatioStudy> {
    if samples == 0 {
        return Err(Error::InsufficientReplicas("no samples".into()));
    }
    let radii = harnack_radii(time, side);
    let per_sample = (0..samples as u64)
        .into_par_iter()
        .map(|r| {
            let a = sample(law, dim, side, seed, r)?;
            let g = green_function(&a, time, 0)?;
            let profile = decay_profile(&g, DEFAULT_DECAY_EXPONENT)?;
            let decay: Vec<(f64, f64)> = profile
                .rows_within(1.0, time.sqrt())
                .filter_map(|row| row.ratio.map(|q| (row.r_hi, q)))
                .collect();
            let harnack = radii
                .iter()
                .map(|&rad| harnack_ratio(&a, &g.values, 0, rad))
                .collect::<Result<Vec<_>>>()?;
            Ok((decay, harnack))
        })
        .collect::<Result<Vec<_>>>()?;
    let decay_radii: Vec<f64> = per_sample[0].0.iter().map(|p| p.0).collect();
    let n = samples as f64;
    let decay_ratios: Vec<f64> = (0..decay_radii.len())
        .map(|j| per_sample.iter().map(|s| s.0[j].1).sum::<f64>() / n)
        .collect();
    let harnack_ratios: Vec<f64> = (0..radii.len())
        .map(|j| per_sample.iter().map(|s| s.1[j]).sum::<f64>() / n)
        .collect();
    Ok(GreenRatioStudy {
        dim,
        time,
        side,
        samples,
        decay_fit: ScalingFit::power_law(&decay_radii, &decay_ratios)?,
        decay_radii,
        decay_ratios,
        harnack_fit: ScalingFit::power_law(&radii, &harnack_ratios)?,
        harnack_radii: radii,
        harnack_ratios,
    })
}

/// Default Green-function configurations `(d, T, n)`.
pub const GREEN_CASES: [(usize, f64, usize); 2] = [(2, 1024.0, 256), (3, 64.0, 64)];

pub fn decay_check(study: &GreenRatioStudy) -> CheckLine {
    CheckLine::window(
        format!("decay ratio slope d={} T={} n={}", study.dim, study.time, study.side),
        study.decay_fit.slope,
        -RATIO_SLOPE_WINDOW,
        RATIO_SLOPE_WINDOW,
    )
}

pub fn harnack_check(study: &GreenRatioStudy) -> CheckLine {
    CheckLine::window(
        format!("Harnack ratio slope d={} T={} n={}", study.dim, study.time, study.side),
        study.harnack_fit.slope,
        -RATIO_SLOPE_WINDOW,
        RATIO_SLOPE_WINDOW,
    )
}

/// Expected convolution slope per dimension.
pub fn convolution_target(dim: usize) -> Option<f64> {
    match dim {
        2 => Some(1.0),
        3 => Some(0.5),
        _ => None,
    }
}

pub fn convolution_check(dim: usize, times: &[f64], truncation_factor: f64) -> Result<CheckLine> {
    let target = convolution_target(dim)
        .ok_or_else(|| Error::InvalidArgument(format!("no convolution target in dimension {dim}")))?;
    let s = convolution_scaling(dim, times, truncation_factor)?;
    Ok(CheckLine::window(
        format!(
            "convolution slope d={dim} T in [{}, {}]",
            times[0],
            times[times.len() - 1]
        ),
        s.fit.slope,
        target - CONVOLUTION_SLOPE_WINDOW,
        target + CONVOLUTION_SLOPE_WINDOW,
    ))
}

/// Runs a study and checks its fitted slope against `[lo, hi]`.
pub fn study_check(manifest: &StudyManifest, lo: f64, hi: f64) -> Result<(StudyResult, CheckLine)> {
    let result = run_study(manifest)?;
    let line = CheckLine::window(
        format!("{:?} d={} slope", manifest.kind, manifest.dim),
        result.fit.slope,
        lo,
        hi,
    );
    Ok((result, line))
}

/// Runs `manifest` in dedicated pools of each size and compares the CSV bytes.
pub fn determinism_check(manifest: &StudyManifest, thread_counts: &[usize]) -> Result<CheckLine> {
    let mut outputs = Vec::with_capacity(thread_counts.len());
    for &threads in thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        let result = pool.install(|| run_study(manifest))?;
        outputs.push(report_csv(&result.points));
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    Ok(CheckLine::new(
        format!("determinism {:?} d={}", manifest.kind, manifest.dim),
        identical,
        format!("threads {thread_counts:?}, {} CSV bytes", outputs[0].len()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_and_display() {
        let l = CheckLine::window("slope", -1.0, -1.2, -0.8);
        assert!(l.pass);
        assert!(l.to_string().starts_with("PASS slope"));
        assert!(!CheckLine::window("slope", 0.0, -1.2, -0.8).pass);
        assert!(!all_pass(&[l, CheckLine::new("x", false, "")]));
    }

    #[test]
    fn identities_hold_on_small_cases() {
        let law = ConductivityLaw::default_study();
        let lat = TorusLattice::new(3, 4).unwrap();
        assert!(adjointness_report(&lat, 3).unwrap().pass);
        let a = sample(&law, 2, 8, 1, 0).unwrap();
        for r in green_identity_reports(&a, 4.0).unwrap() {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn harnack_radius_ladder() {
        assert_eq!(harnack_radii(1024.0, 256), vec![2.0, 4.0, 8.0, 16.0]);
        assert_eq!(harnack_radii(64.0, 64), vec![2.0, 4.0]);
        assert!(harnack_radii(4.0, 64).is_empty());
    }

    #[test]
    fn convolution_target_only_for_two_and_three() {
        assert!(convolution_check(4, &[4.0, 8.0], 8.0).is_err());
        assert_eq!(convolution_target(3), Some(0.5));
    }

    #[test]
    fn determinism_across_pools() {
        let m = StudyManifest::new(StudyKind::Random, 2, ConductivityLaw::default_study(), 100, 5)
            .with_half_widths(vec![2, 4]);
        let line = determinism_check(&m, &[1, 3]).unwrap();
        assert!(line.pass, "{line}");
    }
}
