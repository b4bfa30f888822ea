//! `dta-bias`: funnel-plot asymmetry tests for diagnostic accuracy
//! meta-analyses, and the simulation study that compares them.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 the data do not meet a
//! test's statistical preconditions.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};

use dta_bias::asymmetry::PrecisionAxis;
use dta_bias::harness::{
    run_grid_with, standard_tests, summarize, write_results_csv, GroupField, TestVariantId,
    DEFAULT_ALPHA,
};
use dta_bias::io::{
    analyze, funnel_rows, load_grid, read_dataset_file, render_summary, write_funnel_csv,
    write_results_file,
};
use dta_bias::{CorrectionPolicy, MeasureId, Sidedness};

const EXIT_USAGE: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;

#[derive(Parser)]
#[command(name = "dta-bias", version, about = "Publication-bias tests for diagnostic accuracy meta-analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one asymmetry test on a dataset and print a JSON report.
    Analyze(AnalyzeArgs),
    /// Print funnel-plot coordinates of a dataset.
    Funnel(FunnelArgs),
    /// Run the simulation study and write the results CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct TestArgs {
    /// Asymmetry test family.
    #[arg(long, value_parser = PossibleValuesParser::new(["egger", "macaskill", "begg", "trimfill"]))]
    test: Option<String>,
    /// Precision axis, predictor or dispersion of the test.
    #[arg(long, value_parser = PossibleValuesParser::new(["se", "n", "ess", "inv-n"]))]
    axis: Option<String>,
    /// Regression weights (Egger, Macaskill) or Begg standardization.
    #[arg(long, value_parser = PossibleValuesParser::new(["none", "ivfixed", "ivrandom", "ess", "peters", "plain-se"]))]
    weighting: Option<String>,
    /// Trim-and-fill estimator of the number of missing studies.
    #[arg(long, value_parser = PossibleValuesParser::new(["r", "l"]))]
    estimator: Option<String>,
    #[arg(long, default_value = "one", value_parser = PossibleValuesParser::new(["one", "two"]))]
    sided: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA, value_parser = parse_alpha)]
    alpha: f64,
    /// Continuity correction: `half` adds 0.5 to tables with a zero cell.
    #[arg(long, default_value = "half", value_parser = PossibleValuesParser::new(["half", "never", "always"]))]
    correction: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset CSV with header study_id,tp,fn,fp,tn.
    input: PathBuf,
    #[arg(long, default_value = "lndor", value_parser = measure_values())]
    measure: String,
    #[command(flatten)]
    test: TestArgs,
}

#[derive(Args)]
struct FunnelArgs {
    input: PathBuf,
    #[arg(long, default_value = "lndor", value_parser = measure_values())]
    measure: String,
    #[arg(long, default_value = "se", value_parser = PossibleValuesParser::new(["se", "n", "ess", "inv-n"]))]
    axis: String,
    #[arg(long, default_value = "csv", value_parser = PossibleValuesParser::new(["csv", "json"]))]
    format: String,
    #[arg(long, default_value = "half", value_parser = PossibleValuesParser::new(["half", "never", "always"]))]
    correction: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// `default` for the full grid, or a JSON grid file.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Results CSV path; without it the CSV goes to stdout and the summary to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict the battery to one measure.
    #[arg(long, value_parser = measure_values())]
    measure: Option<String>,
    /// Comma-separated summary grouping.
    #[arg(long, default_value = "variant", value_delimiter = ',',
          value_parser = PossibleValuesParser::new(["condition", "mu", "sigma", "k", "pi", "bias", "family", "measure", "variant", "sided"]))]
    group_by: Vec<String>,
    #[command(flatten)]
    test: TestArgs,
}

fn measure_values() -> PossibleValuesParser {
    PossibleValuesParser::new(["lndor", "lntheta", "youden", "kappa"])
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

fn sidedness(token: &str) -> Sidedness {
    if token == "two" {
        Sidedness::TwoSided
    } else {
        Sidedness::OneSided
    }
}

fn measure(token: &str) -> MeasureId {
    MeasureId::from_token(token).expect("clap restricts the measure tokens")
}

fn correction(token: &str) -> CorrectionPolicy {
    CorrectionPolicy::from_token(token).expect("clap restricts the correction tokens")
}

fn precision_axis(token: &str) -> PrecisionAxis {
    match token {
        "se" => PrecisionAxis::Se,
        "n" => PrecisionAxis::N,
        "ess" => PrecisionAxis::Ess,
        _ => PrecisionAxis::InvN,
    }
}

fn variant(measure: MeasureId, t: &TestArgs, family: &str) -> Result<TestVariantId, Failure> {
    TestVariantId::from_tokens(
        measure,
        family,
        t.axis.as_deref(),
        t.weighting.as_deref(),
        t.estimator.as_deref(),
        sidedness(&t.sided),
    )
    .map_err(Failure::usage)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let dataset = read_dataset_file(&args.input).map_err(|e| Failure::usage(format!("{}: {e}", args.input.display())))?;
    let family = args.test.test.as_deref().unwrap_or("trimfill");
    let v = variant(measure(&args.measure), &args.test, family)?;
    let report = analyze(&dataset, &v, args.test.alpha, correction(&args.test.correction)).map_err(|e| Failure {
        code: if e.is_statistical() { EXIT_PRECONDITION } else { EXIT_USAGE },
        message: e.to_string(),
    })?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{json}");
    Ok(())
}

fn cmd_funnel(args: FunnelArgs) -> Result<(), Failure> {
    let dataset = read_dataset_file(&args.input).map_err(|e| Failure::usage(format!("{}: {e}", args.input.display())))?;
    let rows = funnel_rows(&dataset, measure(&args.measure), precision_axis(&args.axis), correction(&args.correction))
        .map_err(|e| Failure {
            code: if e.is_statistical() { EXIT_PRECONDITION } else { EXIT_USAGE },
            message: e.to_string(),
        })?;
    let stdout = io::stdout().lock();
    if args.format == "json" {
        serde_json::to_writer_pretty(stdout, &rows).map_err(Failure::usage)?;
        println!();
    } else {
        write_funnel_csv(stdout, &rows).map_err(Failure::usage)?;
    }
    Ok(())
}

fn group_field(token: &str) -> GroupField {
    match token {
        "condition" => GroupField::Condition,
        "mu" => GroupField::Mu,
        "sigma" => GroupField::Sigma,
        "k" => GroupField::K,
        "pi" => GroupField::Pi,
        "bias" => GroupField::Bias,
        "family" => GroupField::Family,
        "measure" => GroupField::Measure,
        "sided" => GroupField::Sided,
        _ => GroupField::Variant,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let grid = load_grid(&args.grid).map_err(Failure::usage)?;
    let measures: Vec<MeasureId> = match &args.measure {
        Some(m) => vec![measure(m)],
        None => MeasureId::ALL.to_vec(),
    };
    let sided = sidedness(&args.test.sided);
    let mut variants = Vec::new();
    for &m in &measures {
        match args.test.test.as_deref() {
            Some(family) => variants.push(variant(m, &args.test, family)?),
            None => {
                if args.test.axis.is_some() || args.test.weighting.is_some() || args.test.estimator.is_some() {
                    return Err(Failure::usage("--axis, --weighting and --estimator need --test"));
                }
                variants.extend(
                    standard_tests()
                        .into_iter()
                        .filter(|t| t.supports(sided))
                        .map(|t| TestVariantId::new(m, t, sided).expect("filtered to supported")),
                );
            }
        }
    }
    let results = run_grid_with(
        &grid,
        &variants,
        args.reps,
        args.test.alpha,
        args.seed,
        args.parallelism,
        correction(&args.test.correction),
    )
    .map_err(Failure::usage)?;

    let fields: Vec<GroupField> = args.group_by.iter().map(|g| group_field(g)).collect();
    let summary = render_summary(&summarize(&results, &fields).map_err(Failure::usage)?);
    match &args.out {
        Some(path) => {
            write_results_file(path, &results).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            print!("{summary}");
        }
        None => {
            let mut out = io::stdout().lock();
            write_results_csv(&mut out, &results).map_err(Failure::usage)?;
            out.flush().map_err(Failure::usage)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Funnel(a) => cmd_funnel(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
