//! Runs one full experiment from a config: build the data, train the
//! mechanism, compare against planar Laplace, and write every table as CSV.
//!
//! All randomness fans out from the master seed through named streams, one
//! per stage, so rerunning with the same config reproduces every file byte
//! for byte (wall-clock columns aside) and changing one stage's settings
//! never shifts another stage's draws.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use locpriv::adversarial::{run_game, GameConfig, GameOutcome};
use locpriv::data::{gen_synthetic, ingest_gowalla, ColumnConfig, GowallaSpec, Splits, SyntheticSpec};
use locpriv::evaluation::{
    empirical_distortion, evaluate_mechanism, BayesReport, Grid, IdentityMechanism, Obfuscator,
};
use locpriv::mechanisms::PlanarLaplace;
use locpriv::model::{Dataset, Location, Region};
use locpriv::neural::TrainConfig;
use locpriv::seeds::RngFactory;

use crate::config::{DatasetKind, ExperimentConfig};

/// Failures after config validation. `Data` is anything wrong with the
/// input data (exit 4); `Internal` is everything else (exit 1).
#[derive(Debug)]
pub enum RunError {
    Data(String),
    Internal(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Data(m) => write!(f, "data error: {m}"),
            RunError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

fn internal(e: impl fmt::Display) -> RunError {
    RunError::Internal(e.to_string())
}

pub struct RunReport {
    pub converged: bool,
    pub iterations: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, RunError> {
    let hash = cfg.hash();
    let provenance =
        format!("locpriv {} config={hash} seed={}", env!("CARGO_PKG_VERSION"), cfg.seed);
    let out = &cfg.output_dir;
    let factory = RngFactory::new(cfg.seed);

    let gap = cfg.epsilon_budget_gap();
    if gap > 0.1 {
        eprintln!(
            "warning: laplace displacement 2/epsilon = {:.2} m differs from budget {} m by {:.0}%",
            2.0 / cfg.laplace.epsilon,
            cfg.game.budget_m,
            gap * 100.0
        );
    }

    eprintln!("building dataset ({:?})", cfg.dataset.kind);
    let splits = build_dataset(cfg, &factory)?;
    let k = splits.train.num_classes;

    for (name, d) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        d.write_csv(&out.join(format!("points_original_{name}.csv")), &provenance, cfg.seed)
            .map_err(internal)?;
    }

    let laplace = PlanarLaplace::new(cfg.laplace.epsilon).map_err(internal)?;

    eprintln!(
        "training: {} classes, {} train samples, <= {} iterations",
        k,
        splits.train.len(),
        cfg.game.max_iterations
    );
    let gcfg = game_config(cfg, k);
    let outcome = run_game(&splits.train, &splits.val, &splits.test, &gcfg, &factory)
        .map_err(internal)?;
    write_iterations(&out.join("iterations.csv"), &provenance, &outcome).map_err(internal)?;
    outcome.generator.save(&out.join("generator.net")).map_err(internal)?;
    if !outcome.converged {
        eprintln!(
            "game did not converge within {} iterations; keeping best generator",
            cfg.game.max_iterations
        );
    }

    let region = splits.train.region;
    let grids: Vec<Grid> = cfg
        .evaluation
        .grids
        .iter()
        .map(|&g| Grid::new(region, g))
        .collect::<locpriv::Result<_>>()
        .map_err(internal)?;

    // Single-replica clouds of both mechanisms for plotting, on the test
    // split (the shape the paper's scatter figures use).
    let test_locs: Vec<Location> = splits.test.samples.iter().map(|s| s.loc).collect();
    let z_lap = laplace
        .obfuscate_batch(&test_locs, &mut factory.stream0("cloud-laplace"))
        .map_err(internal)?;
    let z_ours = outcome
        .generator
        .apply(&test_locs, &mut factory.stream0("cloud-ours"))
        .map_err(internal)?;
    write_points(&out.join("points_laplace_test.csv"), &provenance, &splits.test, &z_lap)
        .map_err(internal)?;
    write_points(&out.join("points_ours_test.csv"), &provenance, &splits.test, &z_ours)
        .map_err(internal)?;

    let d_lap = empirical_distortion(&paired(&test_locs, &z_lap)).map_err(internal)?;
    let d_ours = empirical_distortion(&paired(&test_locs, &z_ours)).map_err(internal)?;

    // Bayes-error matrices per mechanism and split. The identity rows show
    // how much error the discretization alone contributes.
    let mut headline = Vec::new();
    let head_grid =
        cfg.expected.bayes_grid.unwrap_or_else(|| *cfg.evaluation.grids.iter().max().unwrap());
    let head_count = cfg
        .expected
        .bayes_count
        .unwrap_or_else(|| *cfg.evaluation.obf_counts.iter().max().unwrap());
    for (si, split_name) in cfg.evaluation.splits.iter().enumerate() {
        let data = match split_name.as_str() {
            "train" => &splits.train,
            "val" => &splits.val,
            _ => &splits.test,
        };
        let mechs: [(&str, &dyn Obfuscator, &[usize]); 3] = [
            ("original", &IdentityMechanism, &[1]),
            ("laplace", &laplace, &cfg.evaluation.obf_counts),
            ("ours", &outcome.generator, &cfg.evaluation.obf_counts),
        ];
        for (mech_name, mech, counts) in mechs {
            eprintln!("evaluating {mech_name} on {split_name}");
            let mut rng = factory.stream(&format!("eval-{mech_name}"), si as u64);
            let report =
                evaluate_mechanism(mech, data, &grids, counts, &mut rng).map_err(internal)?;
            let path = out.join(format!("bayes_{mech_name}_{split_name}.csv"));
            write_bayes(&path, &provenance, &report).map_err(internal)?;
            if split_name == "test" && mech_name != "original" {
                let v = report.value(head_count, head_grid);
                headline.push((mech_name.to_string(), v, report.clamped, report.samples));
            }
        }
    }

    write_summary(
        &out.join("summary.csv"),
        &provenance,
        cfg,
        &outcome,
        d_lap,
        d_ours,
        head_grid,
        head_count,
        &headline,
    )
    .map_err(internal)?;

    Ok(RunReport { converged: outcome.converged, iterations: outcome.logs.len() })
}

fn build_dataset(cfg: &ExperimentConfig, factory: &RngFactory) -> Result<Splits, RunError> {
    let d = &cfg.dataset;
    let stage_seed: u64 = factory.stream0("data").random();
    match d.kind {
        DatasetKind::Synthetic => {
            let spec = SyntheticSpec {
                center_lat: d.center_lat,
                center_lon: d.center_lon,
                region_side_m: d.region_side_m,
                cluster_square_side_m: d.cluster_square_side_m,
                max_radius_m: d.max_radius_m,
                per_class: d.per_class,
                per_class_trainval: d.per_class_trainval,
                seed: stage_seed,
            };
            gen_synthetic(&spec).map_err(|e| RunError::Data(e.to_string()))
        }
        DatasetKind::Gowalla => {
            let region = Region::new(d.center_lat, d.center_lon, d.region_side_m)
                .map_err(|e| RunError::Data(e.to_string()))?;
            let mut spec = GowallaSpec::new(region, d.num_users);
            spec.per_user_trainval = d.per_user_trainval;
            spec.per_user_test = d.per_user_test;
            spec.seed = stage_seed;
            spec.columns = ColumnConfig { user: d.user_col, lat: d.lat_col, lon: d.lon_col };
            spec.overlap_filter_m = d.overlap_filter_m;
            let path = d.path.as_ref().expect("validated");
            ingest_gowalla(path, &spec)
                .map(|g| g.splits)
                .map_err(|e| RunError::Data(e.to_string()))
        }
    }
}

fn game_config(cfg: &ExperimentConfig, num_classes: usize) -> GameConfig {
    let g = &cfg.game;
    let mut sizes = vec![3];
    sizes.extend(&g.gen_hidden);
    sizes.push(2);
    let mut clf = vec![2];
    clf.extend(&g.clf_hidden);
    clf.push(num_classes);

    let mut out = GameConfig::new(g.budget_m, num_classes);
    out.alpha = g.alpha;
    out.beta = g.beta;
    out.gen_sizes = sizes;
    out.clf_sizes = clf;
    out.gen_cfg = TrainConfig::new(g.gen_batch, g.gen_epochs, g.gen_lr);
    out.clf_cfg = TrainConfig::new(g.clf_batch, g.clf_epochs, g.clf_lr);
    out.max_iterations = g.max_iterations;
    out.stop_delta = g.stop_delta;
    out.seeds_per_location = g.seeds_per_location;
    out.mode = g.generator_loss.into();
    out.warm_start_epochs = g.warm_start_epochs;
    out
}

fn paired(w: &[Location], z: &[Location]) -> Vec<(Location, Location)> {
    w.iter().copied().zip(z.iter().copied()).collect()
}

fn create(path: &Path) -> std::io::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_iterations(
    path: &Path,
    provenance: &str,
    outcome: &GameOutcome,
) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "iteration,train_accuracy,val_accuracy,test_accuracy,mi_nats,distortion_m,seconds")?;
    for l in &outcome.logs {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.3}",
            l.iteration, l.acc_train, l.acc_val, l.acc_test, l.mi_nats, l.distortion_m, l.seconds
        )?;
    }
    w.flush()
}

fn write_points(
    path: &Path,
    provenance: &str,
    originals: &Dataset,
    obfuscated: &[Location],
) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "class_id,x_m,y_m")?;
    for (s, z) in originals.samples.iter().zip(obfuscated) {
        writeln!(w, "{},{},{}", s.class_id, z.x_m, z.y_m)?;
    }
    w.flush()
}

fn write_bayes(path: &Path, provenance: &str, report: &BayesReport) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "grid_cells,obf_count,bayes_error")?;
    for (i, &count) in report.obf_counts.iter().enumerate() {
        for (j, &g) in report.cells_per_side.iter().enumerate() {
            writeln!(w, "{g},{count},{}", report.values[[i, j]])?;
        }
    }
    w.flush()
}

#[allow(clippy::too_many_arguments)]
fn write_summary(
    path: &Path,
    provenance: &str,
    cfg: &ExperimentConfig,
    outcome: &GameOutcome,
    d_lap: f64,
    d_ours: f64,
    head_grid: usize,
    head_count: usize,
    headline: &[(String, Option<f64>, u64, u64)],
) -> std::io::Result<()> {
    // Accuracy and MI rows describe the returned generator, which on a
    // non-converged run is the best in-budget iteration, not the last one.
    let sel = outcome
        .logs
        .iter()
        .find(|l| l.iteration == outcome.selected)
        .expect("selected iteration is logged");
    let e = &cfg.expected;

    let mut w = create(path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "# headline bayes cell: {head_grid}x{head_grid} grid, {head_count} obfuscations")?;
    writeln!(w, "metric,value,expected_low,expected_high,ok")?;

    let mut row = |name: &str, value: f64, lo: Option<f64>, hi: Option<f64>| {
        let ok = match (lo, hi) {
            (None, None) => String::new(),
            (lo, hi) => {
                let pass = lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h);
                if pass { "yes".into() } else { "no".into() }
            }
        };
        let fmt_opt = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{name},{value},{},{},{ok}", fmt_opt(lo), fmt_opt(hi))
    };

    row("converged", if outcome.converged { 1.0 } else { 0.0 }, None, None)?;
    row("iterations_run", outcome.logs.len() as f64, None, None)?;
    row("selected_iteration", outcome.selected as f64, None, None)?;
    row("val_accuracy", sel.acc_val, None, e.max_val_accuracy)?;
    row("test_accuracy", sel.acc_test, e.min_test_accuracy, e.max_test_accuracy)?;
    row("mi_nats", sel.mi_nats, None, None)?;
    row("distortion_ours_m", d_ours, None, e.max_distortion_ours_m)?;
    row("distortion_laplace_m", d_lap, None, None)?;
    for (name, value, clamped, samples) in headline {
        let (lo, hi) = match name.as_str() {
            "ours" => (e.min_bayes_ours, e.max_bayes_ours),
            _ => (e.min_bayes_laplace, e.max_bayes_laplace),
        };
        if let Some(v) = value {
            row(&format!("bayes_{name}_test"), *v, lo, hi)?;
        }
        row(
            &format!("clamped_fraction_{name}_test"),
            *clamped as f64 / *samples as f64,
            None,
            None,
        )?;
    }
    w.flush()
}
