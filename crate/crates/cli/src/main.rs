//! Command-line front end: run full experiments from config files, plus
//! thin wrappers around single library operations (Laplace sampling,
//! grid evaluation of a point file, tiny-instance optima, demos).
//!
//! Exit codes: 0 success, 1 internal failure, 2 game did not converge,
//! 3 configuration problem, 4 data problem.

mod config;
mod experiment;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use locpriv::evaluation::{bayes_error_grid, Grid, HitTable};
use locpriv::mechanisms::PlanarLaplace;
use locpriv::model::{DiscreteDist, Location, Region};
use locpriv::oracle::{optimal_bayes_mechanism, payoff_tables_demo, TinyInstance};
use locpriv::seeds::RngFactory;

use config::{load_config, ConfigError};
use experiment::{run_experiment, RunError};

#[derive(Parser)]
#[command(
    name = "locpriv",
    version,
    about = "Location-privacy mechanisms: adversarial training, Laplace baseline, evaluation"
)]
struct Cli {
    /// Run a named demo (payoff-tables) and exit.
    #[arg(long, value_name = "NAME")]
    demo: Option<String>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a TOML config file.
    ///
    /// Any config field can be overridden on the command line with its
    /// dotted path, e.g. `run --config exp.toml --game.budget_m 300
    /// --seed 7 --evaluation.grids 13,65`.
    Run {
        /// `--config <FILE>` followed by `--section.field value` overrides.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, required = true)]
        args: Vec<String>,
    },
    /// Print a named demo (payoff-tables).
    Demo { name: String },
    /// Sample the planar Laplace mechanism and report its mean displacement.
    LaplaceSample {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the samples as CSV (x_m,y_m around the origin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate grid Bayes errors for a `class_id,x_m,y_m` point file.
    Evaluate {
        #[arg(long)]
        points: PathBuf,
        /// Region side in meters; the grid is centered on (0, 0).
        #[arg(long)]
        side: f64,
        /// Comma-separated grid resolutions (cells per side).
        #[arg(long, default_value = "13,65,130,260")]
        grids: String,
    },
    /// Exact-search the best mechanism for a small instance.
    Oracle {
        /// Locations as `x,y;x,y;...` (meters).
        #[arg(long)]
        locations: String,
        #[arg(long)]
        budget: f64,
        /// Class prior as `p0,p1,...`; defaults to uniform over locations.
        #[arg(long)]
        prior: Option<String>,
        /// Location index per class as `i0,i1,...`; defaults to identity.
        #[arg(long)]
        classes: Option<String>,
        /// Probability step of the search lattice.
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Run fast built-in checks (Laplace law, two-point optimum, payoff tables).
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let code = if matches!(e.kind(), DisplayHelp | DisplayVersion) { 0 } else { 3 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(dispatch(cli))
}

fn dispatch(cli: Cli) -> u8 {
    if let Some(name) = &cli.demo {
        return run_demo(name);
    }
    match cli.command {
        None => {
            eprintln!("no command given; try `locpriv --help`");
            3
        }
        Some(Command::Run { args }) => cmd_run(&args),
        Some(Command::Demo { name }) => run_demo(&name),
        Some(Command::LaplaceSample { epsilon, count, seed, out }) => {
            cmd_laplace_sample(epsilon, count, seed, out.as_deref())
        }
        Some(Command::Evaluate { points, side, grids }) => cmd_evaluate(&points, side, &grids),
        Some(Command::Oracle { locations, budget, prior, classes, resolution }) => {
            cmd_oracle(&locations, budget, prior.as_deref(), classes.as_deref(), resolution)
        }
        Some(Command::Selftest) => cmd_selftest(),
    }
}

fn cmd_run(args: &[String]) -> u8 {
    let (path, overrides) = match parse_run_args(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return 3;
        }
    };
    let cfg = match load_config(&path, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 3;
        }
    };
    if let Err(e) = fs::create_dir_all(&cfg.output_dir) {
        eprintln!("config error: cannot create output dir {}: {e}", cfg.output_dir.display());
        return 3;
    }
    match run_experiment(&cfg) {
        Ok(report) => {
            println!(
                "experiment finished: {} iterations, outputs in {}",
                report.iterations,
                cfg.output_dir.display()
            );
            if report.converged {
                0
            } else {
                eprintln!("generator did not converge");
                2
            }
        }
        Err(e @ RunError::Data(_)) => {
            eprintln!("{e}");
            4
        }
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

/// `--config FILE` (or a leading bare path) plus `--dotted.key value` pairs.
fn parse_run_args(args: &[String]) -> Result<(PathBuf, Vec<(String, String)>), ConfigError> {
    let mut config: Option<PathBuf> = None;
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        if let Some(key) = args[i].strip_prefix("--") {
            let value = args
                .get(i + 1)
                .ok_or_else(|| ConfigError(format!("--{key} expects a value")))?;
            if key == "config" {
                config = Some(PathBuf::from(value));
            } else {
                overrides.push((key.to_string(), value.clone()));
            }
            i += 2;
        } else if config.is_none() {
            config = Some(PathBuf::from(&args[i]));
            i += 1;
        } else {
            return Err(ConfigError(format!("unexpected argument {:?}", args[i])));
        }
    }
    let path = config.ok_or_else(|| ConfigError("run needs --config <file>".into()))?;
    Ok((path, overrides))
}

fn run_demo(name: &str) -> u8 {
    match name {
        "payoff-tables" => {
            print_payoff_tables();
            0
        }
        other => {
            eprintln!("config error: unknown demo {other:?} (available: payoff-tables)");
            3
        }
    }
}

/// The two-location, two-strategy game: both players pick deterministic
/// maps, and the tables show why classifier success is a bad target (it
/// rewards swapping) while mutual information and Bayes error are not.
fn print_payoff_tables() {
    let t = payoff_tables_demo();
    let print_table = |title: &str, m: &[[f64; 4]; 4]| {
        println!("{title}");
        print!("{:>16}", "");
        for c in t.clf_strategies {
            print!("{c:>16}");
        }
        println!();
        for (g, row) in t.gen_strategies.iter().zip(m) {
            print!("{g:>16}");
            for v in row {
                print!("{v:>16.2}");
            }
            println!();
        }
        println!();
    };
    print_table("classifier success probability", &t.success);
    print_table("mutual information I(X;Y), bits", &t.mi_bits);
    print_table("1 - Bayes error B(X|Y)", &t.one_minus_bayes);
}

fn cmd_laplace_sample(epsilon: f64, count: usize, seed: u64, out: Option<&Path>) -> u8 {
    let lap = match PlanarLaplace::new(epsilon) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return 3;
        }
    };
    if count == 0 {
        eprintln!("config error: count must be >= 1");
        return 3;
    }
    let mut rng = RngFactory::new(seed).stream0("laplace-sample");
    let origin = Location::new(0.0, 0.0);
    let mut sum = 0.0;
    let mut samples = Vec::new();
    for _ in 0..count {
        let z = lap.sample(&origin, &mut rng);
        sum += origin.distance(&z);
        if out.is_some() {
            samples.push(z);
        }
    }
    let mean = sum / count as f64;
    let closed = lap.expected_distortion();
    println!("closed-form mean displacement 2/epsilon = {closed:.3} m");
    println!(
        "empirical mean over {count} samples      = {mean:.3} m (relative error {:.4})",
        (mean - closed).abs() / closed
    );
    if let Some(path) = out {
        if let Err(e) = write_samples(path, epsilon, seed, &samples) {
            eprintln!("error writing {}: {e}", path.display());
            return 1;
        }
        println!("samples written to {}", path.display());
    }
    0
}

fn write_samples(
    path: &Path,
    epsilon: f64,
    seed: u64,
    samples: &[Location],
) -> std::io::Result<()> {
    use std::io::Write;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# locpriv {} epsilon={epsilon} seed={seed}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "x_m,y_m")?;
    for z in samples {
        writeln!(w, "{},{}", z.x_m, z.y_m)?;
    }
    w.flush()
}

fn cmd_evaluate(points: &Path, side: f64, grids: &str) -> u8 {
    let grids: Vec<usize> = match grids.split(',').map(|g| g.trim().parse()).collect() {
        Ok(v) => v,
        Err(_) => {
            eprintln!("config error: --grids wants comma-separated cell counts, got {grids:?}");
            return 3;
        }
    };
    let region = match Region::new(0.0, 0.0, side) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return 3;
        }
    };
    let rows = match read_points(points) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("data error: {e}");
            return 4;
        }
    };
    if rows.is_empty() {
        eprintln!("data error: {} has no point rows", points.display());
        return 4;
    }
    let num_classes = rows.iter().map(|(c, _)| c + 1).max().unwrap();

    println!("grid_cells,bayes_error,clamped_fraction");
    for g in grids {
        let grid = match Grid::new(region, g) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("config error: {e}");
                return 3;
            }
        };
        let mut table = HitTable::new(grid.cells(), num_classes).expect("non-empty dims");
        let mut clamped = 0usize;
        for (class, loc) in &rows {
            let (cell, out) = grid.assign_cell(loc);
            table.record(cell, *class);
            clamped += out as usize;
        }
        let b = bayes_error_grid(&table).expect("table has records");
        println!("{g},{b},{}", clamped as f64 / rows.len() as f64);
    }
    0
}

fn read_points(path: &Path) -> Result<Vec<(usize, Location)>, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("class_id") {
            continue;
        }
        let mut parts = line.split(',');
        let err = |what: &str| format!("{}:{}: {what}", path.display(), i + 1);
        let class: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err("bad class id"))?;
        let x: f64 =
            parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(|| err("bad x"))?;
        let y: f64 =
            parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(|| err("bad y"))?;
        rows.push((class, Location::new(x, y)));
    }
    Ok(rows)
}

fn cmd_oracle(
    locations: &str,
    budget: f64,
    prior: Option<&str>,
    classes: Option<&str>,
    resolution: Option<f64>,
) -> u8 {
    let parse = || -> Result<TinyInstance, String> {
        let locs: Vec<Location> = locations
            .split(';')
            .map(|pair| {
                let mut p = pair.split(',');
                let x: f64 = p
                    .next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| format!("bad location {pair:?}"))?;
                let y: f64 = p
                    .next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| format!("bad location {pair:?}"))?;
                Ok(Location::new(x, y))
            })
            .collect::<Result<_, String>>()?;
        let n = locs.len();
        let prior = match prior {
            Some(s) => {
                let ps: Vec<f64> = s
                    .split(',')
                    .map(|p| p.trim().parse().map_err(|_| format!("bad prior entry {p:?}")))
                    .collect::<Result<_, _>>()?;
                DiscreteDist::new(ps).map_err(|e| e.to_string())?
            }
            None => DiscreteDist::uniform(n),
        };
        let class_loc: Vec<usize> = match classes {
            Some(s) => s
                .split(',')
                .map(|c| c.trim().parse().map_err(|_| format!("bad class index {c:?}")))
                .collect::<Result<_, _>>()?,
            None => (0..n).collect(),
        };
        TinyInstance::new(locs, prior, class_loc, budget).map_err(|e| e.to_string())
    };

    let inst = match parse() {
        Ok(i) => i,
        Err(e) => {
            eprintln!("config error: {e}");
            return 3;
        }
    };
    let res = resolution.unwrap_or(if inst.num_classes() <= 2 { 1e-3 } else { 5e-3 });
    let (mech, bayes) = match optimal_bayes_mechanism(&inst, res) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return 3;
        }
    };
    let distortion = inst.mechanism_distortion(&mech).expect("search output is well-formed");

    println!("best mechanism found (rows = classes, columns = output locations):");
    for c in 0..mech.rows() {
        let probs: Vec<String> = (0..mech.cols()).map(|z| format!("{:.4}", mech.get(c, z))).collect();
        println!("  class {c} @ ({}, {}): {}",
            inst.locations[inst.class_loc[c]].x_m,
            inst.locations[inst.class_loc[c]].y_m,
            probs.join("  "));
    }
    println!("bayes error  = {bayes:.4}");
    println!("distortion   = {distortion:.4} m (budget {budget} m)");
    0
}

fn cmd_selftest() -> u8 {
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // Mean displacement of the planar Laplace is 2/epsilon.
    let factory = RngFactory::new(0);
    for (i, eps) in [100.0, 60.0, 400.0, 180.0].iter().enumerate() {
        let epsilon = std::f64::consts::LN_2 / eps;
        let lap = PlanarLaplace::new(epsilon).expect("epsilon > 0");
        let mut rng = factory.stream("selftest-laplace", i as u64);
        let origin = Location::new(0.0, 0.0);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| origin.distance(&lap.sample(&origin, &mut rng))).sum::<f64>()
                / n as f64;
        let closed = lap.expected_distortion();
        let rel = (mean - closed).abs() / closed;
        check(
            "laplace displacement",
            rel <= 0.02,
            format!("epsilon=ln2/{eps}: {mean:.2} m vs {closed:.2} m (rel {rel:.4})"),
        );
    }

    // Two locations 100 m apart, budget 40 m: swap with probability 2/5.
    let inst = TinyInstance::new(
        vec![Location::new(0.0, 0.0), Location::new(100.0, 0.0)],
        DiscreteDist::uniform(2),
        vec![0, 1],
        40.0,
    )
    .expect("valid instance");
    match optimal_bayes_mechanism(&inst, 1e-3) {
        Ok((mech, bayes)) => {
            let swap = mech.get(0, 1);
            check(
                "two-point optimum",
                (swap - 0.4).abs() <= 1e-3 && (bayes - 0.4).abs() <= 1e-3,
                format!("swap={swap:.4}, bayes={bayes:.4} (want 0.4 both)"),
            );
        }
        Err(e) => check("two-point optimum", false, e.to_string()),
    }

    // Payoff tables take only the advertised values.
    let t = payoff_tables_demo();
    let succ_ok = t.success.iter().flatten().all(|v| [0.0, 0.5, 1.0].contains(v));
    let mi_ok = t.mi_bits.iter().flatten().all(|v| *v == 0.0 || *v == 1.0);
    let bayes_ok = t.one_minus_bayes.iter().flatten().all(|v| *v == 0.5 || *v == 1.0);
    let diag_ok = t.success[0][0] == 1.0 && t.success[1][0] == 0.0 && t.mi_bits[1][0] == 1.0;
    check(
        "payoff tables",
        succ_ok && mi_ok && bayes_ok && diag_ok,
        "success in {0, 1/2, 1}, MI in {0, 1} bit, 1-B in {1/2, 1}".into(),
    );

    if all_ok {
        0
    } else {
        1
    }
}
