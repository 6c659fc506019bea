use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use peakshave_core::evaluate::{compare, total_cost, validate};
use peakshave_core::forecast::{
    fit_baseload, fit_solar, predict_baseload, predict_solar, BaseloadMode, SolarForecastModel,
};
use peakshave_core::instance::{parse_instance, Instance};
use peakshave_core::motif::{extract_rm, Distance};
use peakshave_core::scheduler::{
    default_beta, two_stage_solve, ModelOptions, ScheduleSolution, SolveConfig, Stage1Mode,
};
use peakshave_core::series::{clean, nrmse, read_csv, write_csv, Role, SeriesFrame};
use peakshave_solver::MilpConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "peakshave",
    version,
    about = "Peak-aware activity and battery scheduling"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Branch-and-bound worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Wall-clock limit per MILP solve, in seconds.
    #[arg(long, global = true, default_value_t = 600.0)]
    time_limit: f64,
    /// Relative optimality gap at which a MILP solve stops.
    #[arg(long, global = true, default_value_t = 1e-4)]
    mip_gap: f64,
    #[arg(long, global = true, value_enum, default_value_t = Stage1Arg::Lp)]
    stage1_mode: Stage1Arg,
    /// Seed for forecast noise.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage1Arg {
    Lp,
    Milp,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Euclidean,
    Znorm,
}

impl From<DistanceArg> for Distance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Euclidean => Distance::Euclidean,
            DistanceArg::Znorm => Distance::ZnormEuclidean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolarMode {
    /// Tile the refined motif.
    Motif,
    /// Reshape the motif by weather deltas.
    Weather,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoadMode {
    SeasonalNaive,
    Median,
}

#[derive(Subcommand)]
enum Command {
    /// Schedule activities and batteries; writes the solution JSON.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        baseload: PathBuf,
        #[arg(long)]
        solar: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        /// Peak cap multiplier; defaults by instance size.
        #[arg(long)]
        beta: Option<f64>,
        /// Slots where batteries may act, as `a..b`; all slots if absent.
        #[arg(long, value_parser = parse_range)]
        battery_slots: Option<Range<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a solution against the scheduling rules; prints one JSON line per violation.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// With --solar, also checks net demand against the inputs.
        #[arg(long, requires = "solar")]
        baseload: Option<PathBuf>,
        #[arg(long, requires = "baseload")]
        solar: Option<PathBuf>,
    },
    /// Energy cost and peak charge of one or more solutions.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        solution: Vec<PathBuf>,
        #[arg(long)]
        prices: PathBuf,
    },
    /// Forecast solar output from its history.
    ForecastSolar {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, value_enum, default_value_t = SolarMode::Motif)]
        mode: SolarMode,
        /// Forecast length in slots; a whole number of days.
        #[arg(long)]
        horizon: usize,
        /// Weather history as `name=path`; earlier names take priority.
        #[arg(long, value_parser = parse_named)]
        weather: Vec<(String, PathBuf)>,
        /// Weather forecast as `name=path`.
        #[arg(long, value_parser = parse_named)]
        weather_forecast: Vec<(String, PathBuf)>,
        #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
        distance: DistanceArg,
        /// Standard deviation of Gaussian noise added to the forecast, in kW.
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast baseload from its history.
    ForecastLoad {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, value_enum, default_value_t = LoadMode::SeasonalNaive)]
        mode: LoadMode,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_sd: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Most repetitive day of a series, as JSON.
    ExtractMotif {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
        distance: DistanceArg,
    },
    /// NRMSE of a forecast against actuals.
    Metrics {
        #[arg(long)]
        actual: PathBuf,
        #[arg(long)]
        predicted: PathBuf,
    },
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..b)
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected name=path")?;
    if name.is_empty() {
        return Err("empty name".into());
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn read_series(path: &Path, role: Role) -> Result<SeriesFrame> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let raw = read_csv(file, role).with_context(|| format!("reading {}", path.display()))?;
    clean(&raw).with_context(|| format!("cleaning {}", path.display()))
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_instance(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_solution(path: &Path) -> Result<ScheduleSolution> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ScheduleSolution::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn emit_series(out: Option<&Path>, series: &SeriesFrame) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(series, &mut buf)?;
    emit(out, std::str::from_utf8(&buf)?)
}

fn with_noise(series: SeriesFrame, sd: f64, seed: u64) -> Result<SeriesFrame> {
    if sd == 0.0 {
        return Ok(series);
    }
    let normal = Normal::new(0.0, sd).context("noise standard deviation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = series
        .dense()?
        .into_iter()
        .map(|v| {
            let v = v + normal.sample(&mut rng);
            if series.role == Role::Solar {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect();
    Ok(SeriesFrame::from_values(
        series.start_timestamp,
        series.role,
        &values,
    ))
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Ok(false) means the command ran but found a domain failure to report.
fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    match cli.command {
        Command::Solve {
            instance,
            baseload,
            solar,
            prices,
            beta,
            battery_slots,
            out,
        } => {
            let instance = read_instance(&instance)?;
            let baseload = read_series(&baseload, Role::Baseload)?;
            let solar = read_series(&solar, Role::Solar)?;
            let prices = read_series(&prices, Role::Price)?;
            let config = SolveConfig {
                stage1_mode: match g.stage1_mode {
                    Stage1Arg::Lp => Stage1Mode::LpRelaxation,
                    Stage1Arg::Milp => Stage1Mode::FullMilp,
                },
                milp: MilpConfig {
                    time_limit_s: g.time_limit,
                    gap_tol: g.mip_gap,
                    workers: g.workers,
                    ..MilpConfig::default()
                },
                model: ModelOptions {
                    battery_slots: battery_slots.map(Iterator::collect),
                },
            };
            let beta = beta.unwrap_or_else(|| default_beta(&instance));
            let sol = two_stage_solve(&instance, &baseload, &solar, &prices, beta, &config)?;
            emit(out.as_deref(), &(sol.to_json() + "\n"))?;
            Ok(true)
        }
        Command::Validate {
            instance,
            solution,
            baseload,
            solar,
        } => {
            let instance = read_instance(&instance)?;
            let solution = read_solution(&solution)?;
            let inputs = match (baseload, solar) {
                (Some(b), Some(s)) => Some((
                    read_series(&b, Role::Baseload)?.dense()?,
                    read_series(&s, Role::Solar)?.dense()?,
                )),
                _ => None,
            };
            let violations = validate(
                &instance,
                &solution,
                inputs.as_ref().map(|(b, s)| (&b[..], &s[..])),
            );
            let mut text = String::new();
            for v in &violations {
                text.push_str(&v.to_json_line());
                text.push('\n');
            }
            emit(None, &text)?;
            Ok(violations.is_empty())
        }
        Command::Evaluate { solution, prices } => {
            let prices = read_series(&prices, Role::Price)?.dense()?;
            let solutions = solution
                .iter()
                .map(|p| Ok((p.display().to_string(), read_solution(p)?.net_demand)))
                .collect::<Result<Vec<_>>>()?;
            let text = if let [(_, net)] = &solutions[..] {
                json(&total_cost(net, &prices)?)
            } else {
                let labelled: Vec<(String, &[f64])> =
                    solutions.iter().map(|(l, n)| (l.clone(), &n[..])).collect();
                json(&compare(&labelled, &prices)?)
            };
            emit(None, &text)?;
            Ok(true)
        }
        Command::ForecastSolar {
            history,
            mode,
            horizon,
            weather,
            weather_forecast,
            distance,
            noise_sd,
            out,
        } => {
            let history = read_series(&history, Role::Solar)?;
            let start = history.end_timestamp();
            let mut forecasts = BTreeMap::new();
            let model = match mode {
                SolarMode::Motif => {
                    if !weather.is_empty() || !weather_forecast.is_empty() {
                        bail!("weather series are only used with --mode weather");
                    }
                    SolarForecastModel::motif_only(extract_rm(
                        &history.tail(peakshave_core::forecast::TRAINING_WINDOW),
                        distance.into(),
                    )?)
                }
                SolarMode::Weather => {
                    if weather.is_empty() {
                        bail!("--mode weather needs at least one --weather series");
                    }
                    let past = weather
                        .iter()
                        .map(|(n, p)| Ok((n.clone(), read_series(p, Role::Baseload)?)))
                        .collect::<Result<Vec<_>>>()?;
                    for (n, p) in &weather_forecast {
                        forecasts.insert(n.clone(), read_series(p, Role::Baseload)?);
                    }
                    let model = fit_solar(&history, &past, distance.into())?;
                    if !model.dropped.is_empty() {
                        eprintln!(
                            "dropped collinear weather features: {}",
                            model.dropped.join(", ")
                        );
                    }
                    model
                }
            };
            let forecast = predict_solar(&model, &forecasts, horizon, start)?;
            emit_series(out.as_deref(), &with_noise(forecast, noise_sd, g.seed)?)?;
            Ok(true)
        }
        Command::ForecastLoad {
            history,
            mode,
            horizon,
            noise_sd,
            out,
        } => {
            let history = read_series(&history, Role::Baseload)?;
            let mode = match mode {
                LoadMode::SeasonalNaive => BaseloadMode::SeasonalNaive,
                LoadMode::Median => BaseloadMode::Median,
            };
            let forecast = predict_baseload(&fit_baseload(&history, mode)?, horizon)?;
            emit_series(out.as_deref(), &with_noise(forecast, noise_sd, g.seed)?)?;
            Ok(true)
        }
        Command::ExtractMotif { series, distance } => {
            let series = read_series(&series, Role::Baseload)?;
            emit(None, &json(&extract_rm(&series, distance.into())?))?;
            Ok(true)
        }
        Command::Metrics { actual, predicted } => {
            let actual = read_series(&actual, Role::Baseload)?;
            let predicted = read_series(&predicted, Role::Baseload)?;
            emit(None, &format!("{}\n", nrmse(&actual, &predicted)?))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
