//! Monte Carlo studies of the scaling laws, their manifests and reports.
//!
//! Every study is a pure function of its [`StudyManifest`]: replicas draw
//! from independent streams keyed by `(base_seed, replica)`, run in any
//! order on the worker pool, and are reduced in replica order.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrector::{solve_modified_corrector_with, CorrectorSolution, Direction};
use crate::environment::{law_moments, sample_environment, ConductivityLaw, StreamKey};
use crate::error::{Error, Result};
use crate::estimators::{energy_density, estimate_atl_from, identity_suite, IdentityReport};
use crate::fit::ScalingFit;
use crate::lattice::{gradient, MaskProfile, TorusLattice};
use crate::solver::SolverOptions;

/// Largest standard error accepted, relative to the point value.
pub const MAX_RELATIVE_STD_ERROR: f64 = 0.2;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Environment variable capping the worker pool.
pub const THREADS_VAR: &str = "LATTHOM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Systematic,
    Random,
    Corrector,
    Full,
}

impl StudyKind {
    fn minimum_replicas(self) -> usize {
        match self {
            Self::Systematic | Self::Corrector => 30,
            Self::Random => 100,
            Self::Full => 2,
        }
    }
}

/// `n = max(factor * ceil(sqrt T), 4 L)`, rounded up to a multiple of `multiple`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizingPolicy {
    pub factor: f64,
    pub multiple: usize,
    pub window_factor: usize,
}

impl Default for SizingPolicy {
    fn default() -> Self {
        Self {
            factor: 8.0,
            multiple: 8,
            window_factor: 4,
        }
    }
}

impl SizingPolicy {
    pub fn side(&self, time: f64, half_width: usize) -> usize {
        let by_time = (self.factor * time.sqrt().ceil()).ceil() as usize;
        let n = by_time.max(self.window_factor * half_width).max(2);
        n.div_ceil(self.multiple) * self.multiple
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub fit: Option<PathBuf>,
}

/// Everything needed to replay a study bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub kind: StudyKind,
    pub dim: usize,
    pub law: ConductivityLaw,
    /// Ladder of `T` (systematic, corrector).
    #[serde(default)]
    pub times: Vec<f64>,
    /// Ladder of `L` (random, full); `T = L^2`.
    #[serde(default)]
    pub half_widths: Vec<usize>,
    pub replicas: usize,
    #[serde(default)]
    pub sizing: SizingPolicy,
    pub base_seed: u64,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    /// Defaults to `e_1`.
    #[serde(default)]
    pub xi: Option<Vec<f64>>,
    /// Reference `xi . A_hom xi` for the full-error study.
    #[serde(default)]
    pub reference: Option<f64>,
    /// Corrector study proxy time as a multiple of the largest ladder time.
    #[serde(default = "default_reference_factor")]
    pub reference_time_factor: f64,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default = "default_version")]
    pub code_version: String,
}

fn default_tol() -> f64 {
    crate::solver::DEFAULT_TOL
}

fn default_reference_factor() -> f64 {
    4.0
}

fn default_version() -> String {
    CODE_VERSION.to_string()
}

impl StudyManifest {
    pub fn new(kind: StudyKind, dim: usize, law: ConductivityLaw, replicas: usize, base_seed: u64) -> Self {
        Self {
            kind,
            dim,
            law,
            times: Vec::new(),
            half_widths: Vec::new(),
            replicas,
            sizing: SizingPolicy::default(),
            base_seed,
            solver_tol: default_tol(),
            xi: None,
            reference: None,
            reference_time_factor: default_reference_factor(),
            output: OutputPaths::default(),
            code_version: default_version(),
        }
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Self {
        self.times = times;
        self
    }

    pub fn with_half_widths(mut self, half_widths: Vec<usize>) -> Self {
        self.half_widths = half_widths;
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn direction(&self) -> Result<Direction> {
        match &self.xi {
            Some(v) if v.len() != self.dim => Err(Error::InvalidArgument(format!(
                "direction has {} components in dimension {}",
                v.len(),
                self.dim
            ))),
            Some(v) => Direction::normalized(v.clone()),
            None => Ok(Direction::axis(self.dim, 0)),
        }
    }

    fn options(&self) -> SolverOptions {
        SolverOptions::with_tol(self.solver_tol)
    }

    fn validate(&self) -> Result<()> {
        self.law.validated()?;
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let ladder = match self.kind {
            StudyKind::Systematic | StudyKind::Corrector => self.times.len(),
            StudyKind::Random | StudyKind::Full => self.half_widths.len(),
        };
        if ladder < 2 {
            return Err(Error::DegenerateData(format!(
                "ladder has {ladder} point(s); a slope needs two"
            )));
        }
        if self.replicas < self.kind.minimum_replicas() {
            return Err(Error::InsufficientReplicas(format!(
                "{} replicas requested, {:?} studies need at least {}",
                self.replicas,
                self.kind,
                self.kind.minimum_replicas()
            )));
        }
        if self.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument("ladder times must be positive".into()));
        }
        if self.half_widths.contains(&0) {
            return Err(Error::InvalidArgument("half widths must be positive".into()));
        }
        if self.kind == StudyKind::Systematic {
            for w in self.times.windows(2) {
                if w[1] != 2.0 * w[0] {
                    return Err(Error::InvalidArgument("systematic ladder must be T0 2^i".into()));
                }
            }
        }
        self.direction()?;
        Ok(())
    }
}

/// Aggregate at one ladder point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    /// Abscissa of the fit: `T` or `L`.
    pub x: f64,
    pub time: f64,
    pub half_width: Option<usize>,
    pub side: usize,
    pub value: f64,
    pub std_error: f64,
    pub replicas: usize,
}

impl LadderPoint {
    pub fn relative_std_error(&self) -> f64 {
        if self.value == 0.0 {
            f64::INFINITY
        } else {
            self.std_error / self.value.abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub manifest: StudyManifest,
    pub points: Vec<LadderPoint>,
    pub fit: ScalingFit,
    /// Fit with an added `ln ln x` regressor, for `d = 2`.
    pub log_corrected_fit: Option<ScalingFit>,
    pub preflight: Vec<IdentityReport>,
}

/// Caps the global pool at `LATTHOM_THREADS` when set. Returns the number of
/// worker threads in effect.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_VAR}={v:?} is not a positive integer")))?;
        if n == 0 {
            return Err(Error::InvalidArgument(format!("{THREADS_VAR} must be positive")));
        }
        // a pool may already exist; its size then stands
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `per_replica` for every replica in parallel and returns the results
/// in replica order.
fn replicate<T: Send>(replicas: usize, per_replica: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..replicas as u64).into_par_iter().map(&per_replica).collect()
}

fn preflight(manifest: &StudyManifest, lattice: &TorusLattice, time: f64) -> Result<Vec<IdentityReport>> {
    let a = sample_environment(&manifest.law, lattice, StreamKey::environment(manifest.base_seed, 0));
    let reports = identity_suite(&a, time, &manifest.direction()?, manifest.base_seed)?;
    if let Some(bad) = reports.iter().find(|r| !r.pass) {
        return Err(Error::IdentityFailure(format!(
            "pre-flight {}: relative discrepancy {:.3e} > {:.1e}",
            bad.name, bad.relative, bad.tolerance
        )));
    }
    Ok(reports)
}

fn check_points(points: &[LadderPoint]) -> Result<()> {
    if points.iter().all(|p| p.value == 0.0) {
        return Err(Error::DegenerateData("every ladder value is zero".into()));
    }
    if let Some(p) = points.iter().find(|p| p.value <= 0.0) {
        return Err(Error::DegenerateData(format!("nonpositive value at x = {}", p.x)));
    }
    if let Some(p) = points.iter().find(|p| p.relative_std_error() > MAX_RELATIVE_STD_ERROR) {
        return Err(Error::InsufficientReplicas(format!(
            "standard error {:.3e} is {:.0}% of the value {:.3e} at x = {}",
            p.std_error,
            100.0 * p.relative_std_error(),
            p.value,
            p.x
        )));
    }
    Ok(())
}

fn finish(manifest: &StudyManifest, points: Vec<LadderPoint>, preflight: Vec<IdentityReport>) -> Result<StudyResult> {
    check_points(&points)?;
    let x: Vec<f64> = points.iter().map(|p| p.x).collect();
    let y: Vec<f64> = points.iter().map(|p| p.value).collect();
    let fit = ScalingFit::power_law(&x, &y)?;
    let log_corrected_fit = if manifest.dim == 2 {
        ScalingFit::power_law_with_log(&x, &y).ok()
    } else {
        None
    };
    Ok(StudyResult {
        manifest: manifest.clone(),
        points,
        fit,
        log_corrected_fit,
        preflight,
    })
}

/// Mean over replicas of `|xi . (A_{2T} - A_T) xi|` along `T_i = T_0 2^i`,
/// on one torus sized for the largest time `2 T_max`, so that
/// `A_{2 T_i} = A_{T_{i+1}}` is reused within a sample.
pub fn run_systematic_error_study(manifest: &StudyManifest) -> Result<StudyResult> {
    if manifest.kind != StudyKind::Systematic {
        return Err(Error::InvalidArgument("manifest is not a systematic study".into()));
    }
    manifest.validate()?;
    let t_max = 2.0 * manifest.times[manifest.times.len() - 1];
    let side = manifest.sizing.side(t_max, 0);
    let lat = TorusLattice::new(manifest.dim, side)?;
    let xi = manifest.direction()?;
    let opts = manifest.options();
    let pre = preflight(manifest, &lat, manifest.times[0])?;

    let mut solve_times = manifest.times.clone();
    solve_times.push(t_max);
    let per_replica: Vec<Vec<f64>> = replicate(manifest.replicas, |r| {
        let a = sample_environment(&manifest.law, &lat, StreamKey::environment(manifest.base_seed, r));
        let mut values = Vec::with_capacity(solve_times.len());
        let mut prev: Option<CorrectorSolution> = None;
        for &t in &solve_times {
            let sol = solve_modified_corrector_with(&a, t, &xi, opts, prev.as_ref().map(|s| &s.phi))?;
            values.push(energy_density(&a, xi.components(), &sol.phi).mean());
            prev = Some(sol);
        }
        Ok(values.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
    })?;

    let points = manifest
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let column: Vec<f64> = per_replica.iter().map(|v| v[i]).collect();
            let (value, std_error) = mean_and_se(&column);
            LadderPoint {
                x: t,
                time: t,
                half_width: None,
                side,
                value,
                std_error,
                replicas: manifest.replicas,
            }
        })
        .collect();
    finish(manifest, points, pre)
}

/// Per ladder point `L`: `T = L^2`, torus side per the sizing policy, and the
/// replica values of the masked estimator.
pub fn masked_estimate_samples(manifest: &StudyManifest, half_width: usize) -> Result<(usize, f64, Vec<f64>)> {
    let time = (half_width * half_width) as f64;
    let side = manifest.sizing.side(time, half_width);
    let lat = TorusLattice::new(manifest.dim, side)?;
    let xi = manifest.direction()?;
    let opts = manifest.options();
    let values = replicate(manifest.replicas, |r| {
        let a = sample_environment(&manifest.law, &lat, StreamKey::environment(manifest.base_seed, r));
        let sol = solve_modified_corrector_with(&a, time, &xi, opts, None)?;
        Ok(estimate_atl_from(&a, &sol, half_width, MaskProfile::Cosine)?.value)
    })?;
    Ok((side, time, values))
}

fn first_lattice(manifest: &StudyManifest) -> Result<(TorusLattice, f64)> {
    let l = manifest.half_widths[0];
    let time = (l * l) as f64;
    Ok((TorusLattice::new(manifest.dim, manifest.sizing.side(time, l))?, time))
}

/// Sample standard deviation of `xi . A_{T,L} xi` across replicas per `L`,
/// with `T = L^2`. The standard error of a standard deviation is taken as
/// `s / sqrt(2 (N - 1))`.
pub fn run_random_error_study(manifest: &StudyManifest) -> Result<StudyResult> {
    if manifest.kind != StudyKind::Random {
        return Err(Error::InvalidArgument("manifest is not a random-error study".into()));
    }
    manifest.validate()?;
    if law_moments(&manifest.law).1 == 0.0 {
        return Err(Error::DegenerateData("deterministic law has no fluctuations".into()));
    }
    let (lat, t0) = first_lattice(manifest)?;
    let pre = preflight(manifest, &lat, t0)?;
    let n = manifest.replicas as f64;
    let points = manifest
        .half_widths
        .iter()
        .map(|&l| {
            let (side, time, values) = masked_estimate_samples(manifest, l)?;
            let (mean, _) = mean_and_se(&values);
            let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            Ok(LadderPoint {
                x: l as f64,
                time,
                half_width: Some(l),
                side,
                value: sd,
                std_error: sd / (2.0 * (n - 1.0)).sqrt(),
                replicas: manifest.replicas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish(manifest, points, pre)
}

/// Mean over replicas of `T^{-1} <(phi_T - phi_ref)^2> + <|grad phi_T - grad phi_ref|^2>`
/// with `phi_ref = phi_{T_ref}`, `T_ref = reference_time_factor * max T`.
/// In two dimensions only the gradient term is measured.
pub fn run_corrector_convergence_study(manifest: &StudyManifest) -> Result<StudyResult> {
    if manifest.kind != StudyKind::Corrector {
        return Err(Error::InvalidArgument("manifest is not a corrector study".into()));
    }
    manifest.validate()?;
    let t_max = manifest.times.iter().cloned().fold(0.0, f64::max);
    let t_ref = manifest.reference_time_factor * t_max;
    if !(t_ref > t_max) {
        return Err(Error::InvalidArgument(
            "reference time must exceed every ladder time".into(),
        ));
    }
    let side = manifest.sizing.side(t_ref, 0);
    let lat = TorusLattice::new(manifest.dim, side)?;
    let xi = manifest.direction()?;
    let opts = manifest.options();
    let pre = preflight(manifest, &lat, manifest.times[0])?;
    let with_zero_order = manifest.dim > 2;

    let per_replica: Vec<Vec<f64>> = replicate(manifest.replicas, |r| {
        let a = sample_environment(&manifest.law, &lat, StreamKey::environment(manifest.base_seed, r));
        let reference = solve_modified_corrector_with(&a, t_ref, &xi, opts, None)?;
        manifest
            .times
            .iter()
            .map(|&t| {
                let sol = solve_modified_corrector_with(&a, t, &xi, opts, Some(&reference.phi))?;
                let diff = sol.phi.axpy(-1.0, &reference.phi);
                let g = gradient(&diff);
                let grad = g.dot(&g) / lat.num_sites() as f64;
                let zero = if with_zero_order { diff.avg_dot(&diff) / t } else { 0.0 };
                Ok(zero + grad)
            })
            .collect()
    })?;

    let points = manifest
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let column: Vec<f64> = per_replica.iter().map(|v| v[i]).collect();
            let (value, std_error) = mean_and_se(&column);
            LadderPoint {
                x: t,
                time: t,
                half_width: None,
                side,
                value,
                std_error,
                replicas: manifest.replicas,
            }
        })
        .collect();
    finish(manifest, points, pre)
}

/// The reference used by the full-error study: the manifest value, else the
/// duality value of a self-dual two-dimensional law.
pub fn full_error_reference(manifest: &StudyManifest) -> Result<f64> {
    manifest
        .reference
        .or_else(|| manifest.law.self_dual_value(manifest.dim))
        .ok_or(Error::MissingReference)
}

/// Root-mean-square of `xi . A_{T,L} xi - reference` across replicas per
/// `L`, with `T = L^2`.
pub fn run_full_error_study(manifest: &StudyManifest) -> Result<StudyResult> {
    if manifest.kind != StudyKind::Full {
        return Err(Error::InvalidArgument("manifest is not a full-error study".into()));
    }
    let reference = full_error_reference(manifest)?;
    manifest.validate()?;
    let (lat, t0) = first_lattice(manifest)?;
    let pre = preflight(manifest, &lat, t0)?;
    let points = manifest
        .half_widths
        .iter()
        .map(|&l| {
            let (side, time, values) = masked_estimate_samples(manifest, l)?;
            let sq: Vec<f64> = values.iter().map(|v| (v - reference).powi(2)).collect();
            let (ms, ms_se) = mean_and_se(&sq);
            let rms = ms.sqrt();
            Ok(LadderPoint {
                x: l as f64,
                time,
                half_width: Some(l),
                side,
                value: rms,
                std_error: if rms > 0.0 { ms_se / (2.0 * rms) } else { 0.0 },
                replicas: manifest.replicas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish(manifest, points, pre)
}

pub fn run_study(manifest: &StudyManifest) -> Result<StudyResult> {
    match manifest.kind {
        StudyKind::Systematic => run_systematic_error_study(manifest),
        StudyKind::Random => run_random_error_study(manifest),
        StudyKind::Corrector => run_corrector_convergence_study(manifest),
        StudyKind::Full => run_full_error_study(manifest),
    }
}

pub const CSV_HEADER: &str = "x,time,half_width,side,value,std_error,replicas,ln_x,ln_value";

/// One row per ladder point. Floats use the shortest representation that
/// parses back to the same bits.
pub fn report_csv(points: &[LadderPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.x,
            p.time,
            p.half_width.map(|l| l.to_string()).unwrap_or_default(),
            p.side,
            p.value,
            p.std_error,
            p.replicas,
            p.x.ln(),
            p.value.ln()
        ));
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<Vec<LadderPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("unexpected report header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 9 {
                return Err(Error::Format(format!("expected 9 cells, got {}", cells.len())));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
            let u = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
            Ok(LadderPoint {
                x: f(cells[0])?,
                time: f(cells[1])?,
                half_width: if cells[2].is_empty() { None } else { Some(u(cells[2])?) },
                side: u(cells[3])?,
                value: f(cells[4])?,
                std_error: f(cells[5])?,
                replicas: u(cells[6])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub kind: StudyKind,
    pub dim: usize,
    pub fit: ScalingFit,
    pub log_corrected_fit: Option<ScalingFit>,
    pub std_errors: Vec<f64>,
    /// Points whose standard error exceeds the accepted fraction of the value.
    pub flagged: Vec<f64>,
    pub preflight: Vec<IdentityReport>,
}

impl StudyResult {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            kind: self.manifest.kind,
            dim: self.manifest.dim,
            fit: self.fit.clone(),
            log_corrected_fit: self.log_corrected_fit.clone(),
            std_errors: self.points.iter().map(|p| p.std_error).collect(),
            flagged: self
                .points
                .iter()
                .filter(|p| p.relative_std_error() > MAX_RELATIVE_STD_ERROR)
                .map(|p| p.x)
                .collect(),
            preflight: self.preflight.clone(),
        }
    }
}

/// Writes the CSV, the manifest and the fit summary to the given paths.
pub fn emit_report(result: &StudyResult, paths: &OutputPaths) -> Result<()> {
    if let Some(p) = &paths.csv {
        fs::write(p, report_csv(&result.points))?;
    }
    if let Some(p) = &paths.manifest {
        fs::write(p, serde_json::to_string_pretty(&result.manifest)? + "\n")?;
    }
    if let Some(p) = &paths.fit {
        fs::write(p, serde_json::to_string_pretty(&result.summary())? + "\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law() -> ConductivityLaw {
        ConductivityLaw::default_study()
    }

    #[test]
    fn sizing_policy() {
        let s = SizingPolicy::default();
        assert_eq!(s.side(64.0, 0), 64);
        assert_eq!(s.side(100.0, 0), 80);
        assert_eq!(s.side(1024.0, 32), 256);
        assert_eq!(s.side(2.0, 0), 16);
        assert_eq!(s.side(16.0, 20), 80);
    }

    #[test]
    fn manifest_json_roundtrip_and_defaults() {
        let m = StudyManifest::new(StudyKind::Random, 2, law(), 100, 7).with_half_widths(vec![4, 8]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<StudyManifest>(&s).unwrap(), m);
        let minimal = r#"{"kind":"systematic","dim":3,"law":{"kind":"two_point","alpha":0.25,"beta":4.0,"p":0.5},
            "times":[4,8],"replicas":30,"base_seed":1}"#;
        let m: StudyManifest = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.solver_tol, 1e-10);
        assert_eq!(m.sizing, SizingPolicy::default());
        assert_eq!(m.code_version, CODE_VERSION);
    }

    #[test]
    fn validation() {
        let m = StudyManifest::new(StudyKind::Systematic, 2, law(), 30, 1).with_times(vec![4.0]);
        assert!(matches!(run_study(&m), Err(Error::DegenerateData(_))));
        let m = StudyManifest::new(StudyKind::Systematic, 2, law(), 10, 1).with_times(vec![4.0, 8.0]);
        assert!(matches!(run_study(&m), Err(Error::InsufficientReplicas(_))));
        let m = StudyManifest::new(StudyKind::Systematic, 2, law(), 30, 1).with_times(vec![4.0, 12.0]);
        assert!(matches!(run_study(&m), Err(Error::InvalidArgument(_))));
        let mut m = StudyManifest::new(StudyKind::Full, 3, law(), 4, 1).with_half_widths(vec![2, 4]);
        assert!(matches!(run_study(&m), Err(Error::MissingReference)));
        m.reference = Some(1.0);
        m.half_widths = vec![2];
        assert!(matches!(run_study(&m), Err(Error::DegenerateData(_))));
        let mut m = StudyManifest::new(StudyKind::Random, 2, law(), 100, 1).with_half_widths(vec![2, 4]);
        m.xi = Some(vec![1.0, 0.0, 0.0]);
        assert!(matches!(run_study(&m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constant_coefficients_are_degenerate() {
        let c = ConductivityLaw::two_point(2.0, 2.0, 0.5).unwrap();
        let m = StudyManifest::new(StudyKind::Systematic, 2, c, 30, 1).with_times(vec![2.0, 4.0]);
        assert!(matches!(run_study(&m), Err(Error::DegenerateData(_))));
        let m = StudyManifest::new(StudyKind::Corrector, 2, c, 30, 1).with_times(vec![2.0, 4.0]);
        assert!(matches!(run_study(&m), Err(Error::DegenerateData(_))));
        let m = StudyManifest::new(StudyKind::Random, 2, c, 100, 1).with_half_widths(vec![2, 4]);
        assert!(matches!(run_study(&m), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn small_systematic_study_runs() {
        let m = StudyManifest::new(StudyKind::Systematic, 2, law(), 30, 3).with_times(vec![2.0, 4.0, 8.0]);
        let r = run_study(&m).unwrap();
        assert_eq!(r.points.len(), 3);
        assert!(r.fit.slope < 0.0);
        assert!(r.preflight.iter().all(|p| p.pass));
        assert!(r.points.iter().all(|p| p.side == 32));
    }

    #[test]
    fn csv_roundtrip_is_bitwise() {
        let points = vec![
            LadderPoint {
                x: 4.0,
                time: 16.0,
                half_width: Some(4),
                side: 32,
                value: 0.1 + 0.2,
                std_error: 1.0 / 3.0,
                replicas: 100,
            },
            LadderPoint {
                x: 8.0,
                time: 8.0,
                half_width: None,
                side: 32,
                value: 2.5e-7,
                std_error: 3.3e-9,
                replicas: 100,
            },
        ];
        let text = report_csv(&points);
        assert_eq!(parse_report_csv(&text).unwrap(), points);
        assert_eq!(report_csv(&[]), format!("{CSV_HEADER}\n"));
        assert!(parse_report_csv("a,b\n").is_err());
    }

    #[test]
    fn threads_variable_validation() {
        assert!(configure_threads().unwrap() >= 1);
    }
}
