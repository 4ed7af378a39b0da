use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accsim_core::metrics::{analyze, hinf_check, log_grid, transfer_gain, PlannerKind, WindowConfig};
use accsim_core::planner::linear::LinearPlannerParams;
use accsim_core::svg::{line_chart, Series};
use accsim_core::{load_scenario, run_platoon, run_sweep, Gain, PlannerConfig, PlatoonTrace};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Two-rate ACC platoon simulator and string-stability analysis.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Linear,
    Mpc,
}

impl From<Planner> for PlannerKind {
    fn from(p: Planner) -> Self {
        match p {
            Planner::Linear => PlannerKind::Linear,
            Planner::Mpc => PlannerKind::Mpc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; writes trace.csv, report.json and, for MPC, solver.csv.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write speed.svg and spacing.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Compute response windows, indices and amplification ratios of a trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        planner: Planner,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        plan_dt: f64,
        #[arg(long, default_value_t = 0.2)]
        horizon_dt: f64,
        /// Spacing gain of the linear planner, for its bound and frequency check.
        #[arg(long)]
        kv: Option<f64>,
        /// Time headway of the linear planner.
        #[arg(long)]
        ht: Option<f64>,
    },
    /// Run a scenario once per value of one numeric parameter.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted path, `*` for every array element, e.g. vehicles.*.controller.kp
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Write the summary CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Speed-to-speed gain of the linear planner over frequency.
    Bode {
        #[arg(long)]
        kv: f64,
        #[arg(long)]
        ht: f64,
        #[arg(long, default_value_t = 1e-3)]
        omega_min: f64,
        #[arg(long, default_value_t = 1e2)]
        omega_max: f64,
        #[arg(long, default_value_t = 2000)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_solver_csv(trace: &PlatoonTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "vehicle,tick,iterations,converged,initial_cost,cost,cost_nonincreasing")?;
    for r in &trace.solver {
        writeln!(
            w,
            "{},{},{},{},{:.12e},{:.12e},{}",
            r.vehicle, r.tick, r.iterations, r.converged, r.initial_cost, r.cost, r.cost_nonincreasing
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_charts(trace: &PlatoonTrace, dir: &Path) -> Result<()> {
    let speeds: Vec<_> = (0..trace.vehicles.len()).map(|i| trace.series(i, |r| r.state.v)).collect();
    let series: Vec<Series> = speeds
        .iter()
        .enumerate()
        .map(|(i, p)| Series {
            label: if i == 0 { "lead".into() } else { format!("follower {i}") },
            points: p,
        })
        .collect();
    fs::write(dir.join("speed.svg"), line_chart("Speed", "v (m/s)", &series))?;
    let gaps: Vec<_> = (1..trace.vehicles.len()).map(|i| trace.gaps(i)).collect();
    let series: Vec<Series> = gaps
        .iter()
        .enumerate()
        .map(|(i, p)| Series {
            label: format!("gap {}", i + 1),
            points: p,
        })
        .collect();
    fs::write(dir.join("spacing.svg"), line_chart("Spacing", "gap (m)", &series))?;
    Ok(())
}

fn simulate(scenario: &Path, out: &Path, seed: Option<u64>, svg: bool) -> Result<bool> {
    let mut s = load_scenario(scenario).with_context(|| format!("loading {}", scenario.display()))?;
    if let Some(seed) = seed {
        s.noise.seed = seed;
    }
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let trace = run_platoon(&s)?;
    let mut w = BufWriter::new(File::create(out.join("trace.csv"))?);
    trace.write_csv(&mut w)?;
    w.flush()?;
    if !trace.solver.is_empty() {
        write_solver_csv(&trace, &out.join("solver.csv"))?;
    }
    let (kind, linear) = match &s.vehicles[0].planner {
        PlannerConfig::Linear(p) => (PlannerKind::Linear, Some(p)),
        PlannerConfig::Mpc(_) => (PlannerKind::Mpc, None),
    };
    let report = analyze(&trace, kind, linear, &WindowConfig::default());
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if svg {
        write_charts(&trace, out)?;
    }
    match trace.collision {
        Some(c) => {
            log::error!("collision: vehicle {} at t = {:.2} s (gap {:.3} m)", c.vehicle, c.t, c.gap);
            Ok(false)
        }
        None => {
            let ratios: Vec<String> = report
                .amplification
                .iter()
                .map(|p| p.ratio.map_or("-".into(), |r| format!("{r:.3}")))
                .collect();
            println!("ok: {} ticks, amplification {}", trace.ticks(), ratios.join(" "));
            Ok(true)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            seed,
            svg,
        } => simulate(&scenario, &out, seed, svg),
        Command::Analyze {
            trace,
            planner,
            report,
            plan_dt,
            horizon_dt,
            kv,
            ht,
        } => {
            let file = File::open(&trace).with_context(|| format!("cannot open {}", trace.display()))?;
            let tr = PlatoonTrace::read_csv(file, plan_dt, horizon_dt)?;
            let defaults = LinearPlannerParams::default();
            let params = LinearPlannerParams {
                k_v: kv.map_or(defaults.k_v.clone(), Gain::Constant),
                headway: ht.unwrap_or(defaults.headway),
                ..defaults
            };
            let rep = analyze(&tr, planner.into(), Some(&params), &WindowConfig::default());
            let mut w = output(report.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &rep)?;
            writeln!(w)?;
            w.flush()?;
            Ok(tr.collision.is_none())
        }
        Command::Sweep {
            scenario,
            param,
            values,
            jobs,
            out,
        } => {
            let s = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let summary = run_sweep(&s, &param, &values, jobs)?;
            let mut w = output(out.as_deref())?;
            summary.write_csv(&mut w)?;
            w.flush()?;
            for r in summary.rows.iter().filter(|r| !r.ok()) {
                log::error!(
                    "value {}: {}",
                    r.value,
                    r.error.as_deref().unwrap_or("collision")
                );
            }
            Ok(summary.rows.iter().all(|r| r.ok()))
        }
        Command::Bode {
            kv,
            ht,
            omega_min,
            omega_max,
            points,
            out,
        } => {
            if !(omega_min > 0.0 && omega_max > omega_min && points > 0) {
                bail!("need 0 < omega-min < omega-max and at least one point");
            }
            let grid = log_grid(omega_min, omega_max, points);
            let mut w = output(out.as_deref())?;
            writeln!(w, "omega,gain")?;
            for &om in &grid {
                writeln!(w, "{om:.12e},{:.12e}", transfer_gain(kv, ht, om))?;
            }
            w.flush()?;
            let check = hinf_check(kv, ht, &grid);
            eprintln!(
                "sup gain {:.9} at omega {:.4}: {}",
                check.sup_gain,
                check.argmax_omega,
                if check.satisfied { "string stable" } else { "not string stable" }
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
