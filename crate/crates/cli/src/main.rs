use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use latthom::checks::{self, all_pass, decay_check, green_ratio_study, harnack_check, CheckLine, GREEN_CASES};
use latthom::corrector::{solve_modified_corrector, Direction};
use latthom::environment::{sample_environment, ConductivityLaw, StreamKey};
use latthom::estimators::{estimate_al_periodic, estimate_at_from, estimate_atl_from, EstimateRecord};
use latthom::experiments::{configure_threads, emit_report, run_study, StudyKind, StudyManifest};
use latthom::field_io::write_node_field;
use latthom::green::{decay_profile, green_function, DEFAULT_DECAY_EXPONENT};
use latthom::lattice::{EdgeField, MaskProfile, TorusLattice};
use latthom::Error;

const EXIT_ASSERTION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(
    name = "latthom",
    version,
    about = "Homogenized coefficients of the random conductance model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the modified corrector and write it as a node field.
    Corrector(CorrectorArgs),
    /// Print one JSON estimate per replica.
    Estimate(EstimateArgs),
    /// Solve for the Green function and write its dyadic decay profile.
    Green(GreenArgs),
    /// Run a scaling study from a JSON manifest.
    Study(StudyArgs),
    /// Run a verification suite; exits 1 on any failed line.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    side: usize,
    /// `twopoint:a,b,p`, `uniform:a,b` or `loguniform:a,b`.
    #[arg(long, default_value = "twopoint:0.25,4,0.5")]
    law: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SampleArgs {
    fn environment(&self, replica: u64) -> latthom::Result<EdgeField> {
        let law: ConductivityLaw = self.law.parse()?;
        let lat = TorusLattice::new(self.dim, self.side)?;
        Ok(sample_environment(
            &law,
            &lat,
            StreamKey::environment(self.seed, replica),
        ))
    }

    fn direction(&self, xi: &Option<String>) -> latthom::Result<Direction> {
        match xi {
            None => Ok(Direction::axis(self.dim, 0)),
            Some(s) => {
                let v = s
                    .split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad direction component {c:?}")))
                    })
                    .collect::<latthom::Result<Vec<_>>>()?;
                if v.len() != self.dim {
                    return Err(Error::InvalidArgument(format!(
                        "direction has {} components, expected {}",
                        v.len(),
                        self.dim
                    )));
                }
                Direction::normalized(v)
            }
        }
    }
}

#[derive(Args)]
struct CorrectorArgs {
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long = "T")]
    time: f64,
    /// Comma-separated components, normalized; defaults to `e_1`.
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    At,
    Atl,
    Alhash,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long = "T")]
    time: Option<f64>,
    /// Mask half width for `atl`.
    #[arg(long = "L")]
    half_width: Option<usize>,
    #[arg(long)]
    xi: Option<String>,
    #[arg(long, default_value_t = 1)]
    replicas: u64,
}

#[derive(Args)]
struct GreenArgs {
    #[command(flatten)]
    sample: SampleArgs,
    #[arg(long = "T")]
    time: f64,
    #[arg(long, default_value_t = 0)]
    pole: usize,
    /// Far-field exponent of the envelope.
    #[arg(long, default_value_t = DEFAULT_DECAY_EXPONENT)]
    exponent: f64,
    #[arg(long)]
    profile_out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(value_enum)]
    kind: StudyKindArg,
    #[arg(long)]
    config: PathBuf,
    /// Fails with exit code 1 unless the fitted slope lies in `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    expect_slope: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyKindArg {
    Systematic,
    Random,
    Corrector,
    Full,
}

impl From<StudyKindArg> for StudyKind {
    fn from(k: StudyKindArg) -> Self {
        match k {
            StudyKindArg::Systematic => StudyKind::Systematic,
            StudyKindArg::Random => StudyKind::Random,
            StudyKindArg::Corrector => StudyKind::Corrector,
            StudyKindArg::Full => StudyKind::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Identities,
    Covariance,
    Green,
    Harnack,
    Convolution,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: Suite,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Samples for the Green-function suites.
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

enum Failure {
    Assertion(String),
    Library(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Library(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence(_) | Error::IncompatibleRhs { .. } => EXIT_SOLVER,
        Error::IdentityFailure(_)
        | Error::SubsolutionViolation { .. }
        | Error::DegenerateData(_)
        | Error::InsufficientReplicas(_) => EXIT_ASSERTION,
        _ => EXIT_USAGE,
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    println!("{}", serde_json::to_string(value).map_err(Error::from)?);
    Ok(())
}

fn corrector(args: &CorrectorArgs) -> Result<(), Failure> {
    let a = args.sample.environment(0)?;
    let xi = args.sample.direction(&args.xi)?;
    let sol = solve_modified_corrector(&a, args.time, &xi)?;
    write_node_field(&args.out, &sol.phi)?;
    print_json(&estimate_at_from(&a, &sol).with_seed(args.sample.seed))?;
    eprintln!(
        "{} iterations, relative residual {:.3e}",
        sol.report.iterations, sol.report.final_relative_residual
    );
    Ok(())
}

fn estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let xi = args.sample.direction(&args.xi)?;
    let need_time = || {
        args.time
            .ok_or_else(|| Error::InvalidArgument("--T is required for this estimator".into()))
    };
    for r in 0..args.replicas {
        let a = args.sample.environment(r)?;
        let record: EstimateRecord = match args.kind {
            Kind::At => estimate_at_from(&a, &solve_modified_corrector(&a, need_time()?, &xi)?),
            Kind::Atl => {
                let l = args
                    .half_width
                    .ok_or_else(|| Error::InvalidArgument("--L is required for atl".into()))?;
                let sol = solve_modified_corrector(&a, need_time()?, &xi)?;
                estimate_atl_from(&a, &sol, l, MaskProfile::Cosine)?
            }
            Kind::Alhash => estimate_al_periodic(&a, &xi)?,
        };
        print_json(&record.with_seed(args.sample.seed).with_replica(r))?;
    }
    Ok(())
}

fn green(args: &GreenArgs) -> Result<(), Failure> {
    let a = args.sample.environment(0)?;
    let g = green_function(&a, args.time, args.pole)?;
    let profile = decay_profile(&g, args.exponent)?;
    std::fs::write(&args.profile_out, profile.to_csv())?;
    print_json(&serde_json::json!({
        "pole": g.pole,
        "time": g.time,
        "mass_defect": g.mass_defect(),
        "positive": g.is_positive(),
        "rows": profile.rows.len(),
    }))
}

fn parse_window(s: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Library(Error::InvalidArgument(format!("--expect-slope wants lo,hi, got {s:?}")));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn study(args: &StudyArgs) -> Result<(), Failure> {
    let window = args.expect_slope.as_deref().map(parse_window).transpose()?;
    let manifest = StudyManifest::from_json_file(&args.config)?;
    if manifest.kind != StudyKind::from(args.kind) {
        return Err(Error::InvalidArgument(format!("manifest describes a {:?} study", manifest.kind)).into());
    }
    let result = run_study(&manifest)?;
    emit_report(&result, &manifest.output)?;
    print_json(&result.summary())?;
    if let Some((lo, hi)) = window {
        let line = CheckLine::window("slope", result.fit.slope, lo, hi);
        eprintln!("{line}");
        if !line.pass {
            return Err(Failure::Assertion(line.to_string()));
        }
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let law = ConductivityLaw::default_study();
    let lines: Vec<CheckLine> = match args.suite {
        Suite::Identities => {
            let mut lines = checks::identity_checks(&law, args.seed)?;
            lines.extend(checks::spectral_checks(&law, 3, args.seed)?);
            lines.extend(checks::sensitivity_checks(&law, 1, args.seed)?);
            lines
        }
        Suite::Covariance => checks::covariance_checks(&[1.0, 4.0])?,
        Suite::Green | Suite::Harnack => GREEN_CASES
            .iter()
            .map(|&(d, t, n)| {
                let s = green_ratio_study(&law, d, t, n, args.samples, args.seed)?;
                Ok(match args.suite {
                    Suite::Green => decay_check(&s),
                    _ => harnack_check(&s),
                })
            })
            .collect::<latthom::Result<_>>()?,
        Suite::Convolution => {
            let times: Vec<f64> = (6..=11).map(|k| f64::from(1u32 << k)).collect();
            vec![
                checks::convolution_check(2, &times, 8.0)?,
                checks::convolution_check(3, &times, 8.0)?,
            ]
        }
    };
    for line in &lines {
        println!("{line}");
    }
    if all_pass(&lines) {
        Ok(())
    } else {
        let failed = lines.iter().filter(|l| !l.pass).count();
        Err(Failure::Assertion(format!("{failed} of {} checks failed", lines.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let outcome = match &cli.command {
        Command::Corrector(a) => corrector(a),
        Command::Estimate(a) => estimate(a),
        Command::Green(a) => green(a),
        Command::Study(a) => study(a),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(EXIT_ASSERTION)
        }
        Err(Failure::Library(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
