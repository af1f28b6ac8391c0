//! The `gpn` command-line tool.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gpn_core::gpn::{train_gpn, Generator};
use gpn_core::metrics::GridEvalResult;
use gpn_core::repertoire::{qd_search, Repertoire};
use gpn_core::world::{ObstacleWorld, SimConfig};
use gpn_core::Error as CoreError;

use crate::config::{ExperimentConfig, Stage};
use crate::error::{Error, Result};
use crate::experiments::{
    compare_baselines, eval_grid, eval_obstacles, BaselineSettings, GridSettings, Method, MethodStats, ObstacleSettings,
    Setup, SuccessTensor, WallScenario,
};
use crate::formats::{self, write_file, Provenance};

#[derive(Debug, Parser)]
#[command(name = "gpn", version, about = "Generative policy networks for ball throwing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the sizes of the original study instead of desk-scale defaults.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Artifacts {
    /// Repertoire file [default: <out>/repertoire.txt].
    #[arg(long)]
    pub repertoire: Option<PathBuf>,
    /// Model file [default: <out>/model.txt].
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect a throwing repertoire with quality-diversity search.
    GenData(Common),
    /// Train the generative policy network on a repertoire.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
    },
    /// Accuracy and diversity on the empty-world target grid.
    EvalGrid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
    },
    /// Success proportions under random occlusion maps.
    EvalObstacles {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
    },
    /// GPN, lookup, KDE and Bayesian optimization in the wall scenarios.
    CompareBaselines {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        artifacts: Artifacts,
    },
}

/// Parses arguments and runs one subcommand. Returns the process exit
/// status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code as u8;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
    prov: Provenance,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if common.paper_scale {
            cfg.paper_scale();
        }
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        let prov = Provenance {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        Ok(Context {
            cfg,
            out: common.out.clone(),
            prov,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        write_file(&self.path(name), contents)
    }

    fn repertoire(&self, a: &Artifacts) -> Result<Repertoire> {
        formats::load_repertoire(&a.repertoire.clone().unwrap_or_else(|| self.path("repertoire.txt")))
    }

    fn generator(&self, a: &Artifacts) -> Result<Generator> {
        Ok(formats::load_model(&a.model.clone().unwrap_or_else(|| self.path("model.txt")))?.0)
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenData(common) => gen_data(&Context::new(common)?),
        Command::Train { common, artifacts } => train(&Context::new(common)?, artifacts),
        Command::EvalGrid { common, artifacts } => grid(&Context::new(common)?, artifacts),
        Command::EvalObstacles { common, artifacts } => obstacles(&Context::new(common)?, artifacts),
        Command::CompareBaselines { common, artifacts } => baselines(&Context::new(common)?, artifacts),
    }
}

const HISTOGRAM_BINS: usize = 50;

fn gen_data(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let arm = cfg.arm_model()?;
    let sim = SimConfig::for_arm(&arm);
    let bounds = cfg.floor_bounds()?;
    let world = ObstacleWorld::empty(bounds);
    let rep = qd_search(&cfg.qd_config(cfg.stage_seed(Stage::Search)), &arm, &world, &sim)?;
    formats::save_repertoire(&ctx.path("repertoire.txt"), &rep, &ctx.prov)?;
    let hist = formats::landing_histogram(&rep, &bounds, HISTOGRAM_BINS);
    let axes = format!(
        "landing counts, rows y from {} to {}, columns x from {} to {}",
        bounds.min[1], bounds.max[1], bounds.min[0], bounds.max[0]
    );
    ctx.write("landing_histogram.txt", &formats::matrix_to_string("histogram", &axes, &hist, &ctx.prov))?;
    ctx.write("config.toml", &cfg.canonical())?;
    println!("repertoire: {} entries from {} evaluations", rep.len(), rep.meta.evaluations);
    Ok(())
}

fn train(ctx: &Context, a: &Artifacts) -> Result<()> {
    let rep = ctx.repertoire(a)?;
    let gcfg = ctx.cfg.gpn_config(ctx.cfg.stage_seed(Stage::Train));
    let model_path = a.model.clone().unwrap_or_else(|| ctx.path("model.txt"));
    match train_gpn(&rep, &gcfg) {
        Ok((gen, disc, log)) => {
            formats::save_model(&model_path, &gen, Some(&disc), &ctx.prov)?;
            ctx.write("training_log.tsv", &formats::training_log_to_string(&log, &ctx.prov))?;
            let last = log.records.last();
            println!(
                "trained {} epochs; final reconstruction error {:.4} m",
                gcfg.epochs,
                last.map_or(f64::NAN, |r| r.recon_error_m)
            );
            Ok(())
        }
        Err(CoreError::TrainingDiverged {
            epoch,
            iteration,
            checkpoint,
        }) => {
            if let Some(cp) = &checkpoint {
                formats::save_model(&ctx.path("model_checkpoint.txt"), &cp.generator, Some(&cp.discriminator), &ctx.prov)?;
            }
            Err(CoreError::TrainingDiverged {
                epoch,
                iteration,
                checkpoint,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| v.to_string())
}

fn write_grid(ctx: &Context, name: &str, r: &GridEvalResult) -> Result<()> {
    let rows: Vec<Vec<String>> = r
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                (i % r.grid.nx).to_string(),
                (i / r.grid.nx).to_string(),
                r.targets[i][0].to_string(),
                r.targets[i][1].to_string(),
                c.rmse.to_string(),
                fmt_opt(c.diversity),
                fmt_opt(c.arm_diversity),
                c.harmonic.score.to_string(),
                u8::from(c.harmonic.accuracy_floor).to_string(),
                c.collisions.to_string(),
            ]
        })
        .collect();
    let cols = [
        "ix", "iy", "target_x", "target_y", "rmse", "diversity", "arm_diversity", "harmonic", "accuracy_floor", "collisions",
    ];
    ctx.write(&format!("grid_{name}.tsv"), &formats::table_to_string("grid-cells", &cols, &rows, &ctx.prov))?;
    let panels: [(&str, fn(&gpn_core::metrics::CellStats) -> f64); 3] = [
        ("error", |c| c.rmse),
        ("diversity", |c| c.diversity.unwrap_or(f64::NAN)),
        ("harmonic", |c| c.harmonic.score),
    ];
    for (panel, f) in panels {
        let m: Vec<Vec<f64>> = (0..r.grid.ny)
            .map(|iy| (0..r.grid.nx).map(|ix| f(&r.cells[iy * r.grid.nx + ix])).collect())
            .collect();
        let axes = format!("{panel} per target, rows iy (y ascending), columns ix (x ascending)");
        ctx.write(&format!("grid_{name}_{panel}.txt"), &formats::matrix_to_string("heatmap", &axes, &m, &ctx.prov))?;
    }
    Ok(())
}

fn grid(ctx: &Context, a: &Artifacts) -> Result<()> {
    let cfg = &ctx.cfg;
    let arm = cfg.arm_model()?;
    let sim = SimConfig::for_arm(&arm);
    let rep = ctx.repertoire(a)?;
    let gen = ctx.generator(a)?;
    let setup = Setup {
        arm: &arm,
        sim: &sim,
        rep: &rep,
        gen: &gen,
    };
    let settings = GridSettings {
        grid: cfg.target_grid()?,
        trials: cfg.trials,
        sigmas: cfg.noisy_sigmas.clone(),
        waypoints: cfg.waypoints,
    };
    let world = ObstacleWorld::empty(cfg.floor_bounds()?);
    let report = eval_grid(&setup, &world, &settings, cfg.stage_seed(Stage::Grid))?;

    write_grid(ctx, "gpn", &report.gpn)?;
    write_grid(ctx, "lookup", &report.lookup)?;
    let mut summary = Vec::new();
    let mut row = |method: &str, sigma: String, r: &GridEvalResult| {
        summary.push(vec![
            method.to_string(),
            sigma,
            r.mean_rmse.to_string(),
            r.mean_diversity.to_string(),
            r.mean_harmonic.to_string(),
            r.cells.iter().map(|c| c.collisions).sum::<usize>().to_string(),
        ]);
    };
    row("gpn", "0".into(), &report.gpn);
    row("lookup", "0".into(), &report.lookup);
    for (sigma, r) in &report.noisy {
        row("noisy_lookup", sigma.to_string(), r);
    }
    for (sigma, r) in &report.noisy {
        write_grid(ctx, &format!("noisy_{sigma}"), r)?;
    }
    let cols = ["method", "sigma", "mean_rmse", "mean_diversity", "mean_harmonic", "collisions"];
    ctx.write("grid_summary.tsv", &formats::table_to_string("grid-summary", &cols, &summary, &ctx.prov))?;

    let welch_row = match &report.welch {
        Ok(w) => vec![w.t.to_string(), w.df.to_string(), w.p.to_string(), String::new()],
        Err(e) => vec!["nan".into(), "nan".into(), "nan".into(), e.clone()],
    };
    ctx.write(
        "grid_welch.tsv",
        &formats::table_to_string("welch", &["t", "df", "p", "note"], &[welch_row], &ctx.prov),
    )?;
    let episodes = [("gpn", &report.gpn), ("lookup", &report.lookup)].into_iter().flat_map(|(m, r)| {
        r.trials
            .iter()
            .zip(&r.targets)
            .flat_map(move |(eps, &c)| eps.iter().map(move |e| (Some(m), Some(c), e)))
    });
    ctx.write("grid_episodes.jsonl", &formats::episodes_to_jsonl(episodes, &ctx.prov))?;
    println!(
        "gpn: rmse {:.3} diversity {:.3} harmonic {:.3}; lookup: rmse {:.3} harmonic {:.3}",
        report.gpn.mean_rmse, report.gpn.mean_diversity, report.gpn.mean_harmonic, report.lookup.mean_rmse, report.lookup.mean_harmonic
    );
    Ok(())
}

fn tensor_rows(method: &str, t: &SuccessTensor, rows: &mut Vec<Vec<String>>) {
    for (ri, rate) in t.rates.iter().enumerate() {
        for (ki, k) in t.ks.iter().enumerate() {
            for (ti, tau) in t.taus.iter().enumerate() {
                rows.push(vec![
                    method.to_string(),
                    rate.to_string(),
                    k.to_string(),
                    tau.to_string(),
                    t.at(ri, ki, ti).to_string(),
                ]);
            }
        }
    }
}

fn obstacles(ctx: &Context, a: &Artifacts) -> Result<()> {
    let cfg = &ctx.cfg;
    let arm = cfg.arm_model()?;
    let sim = SimConfig::for_arm(&arm);
    let rep = ctx.repertoire(a)?;
    let gen = ctx.generator(a)?;
    let setup = Setup {
        arm: &arm,
        sim: &sim,
        rep: &rep,
        gen: &gen,
    };
    let settings = ObstacleSettings {
        grid: cfg.target_grid()?,
        trials: cfg.trials,
        rates: cfg.occlusion_rates.clone(),
        maps: cfg.obstacle_maps,
        ks: cfg.ks.clone(),
        taus: cfg.taus.clone(),
        spec: cfg.occlusion_spec()?,
        lookup_candidates: cfg.lookup_candidates,
    };
    let report = eval_obstacles(&setup, &settings, cfg.stage_seed(Stage::Obstacles))?;

    let tau_i = cfg
        .taus
        .iter()
        .position(|&t| (t - cfg.success_tau).abs() < 1e-12)
        .ok_or_else(|| Error::Config(format!("success_tau {} is not in the tau list", cfg.success_tau)))?;
    let k_axes = format!("rows k = {:?}, columns occlusion rate = {:?}, tau = {}", cfg.ks, cfg.occlusion_rates, cfg.success_tau);
    let gpn_m = report.gpn.k_by_rate(tau_i);
    let lookup_m = report.lookup.k_by_rate(tau_i);
    let diff: Vec<Vec<f64>> = gpn_m
        .iter()
        .zip(&lookup_m)
        .map(|(g, l)| g.iter().zip(l).map(|(a, b)| a - b).collect())
        .collect();
    ctx.write("obstacles_gpn.txt", &formats::matrix_to_string("success", &k_axes, &gpn_m, &ctx.prov))?;
    ctx.write("obstacles_lookup.txt", &formats::matrix_to_string("success", &k_axes, &lookup_m, &ctx.prov))?;
    ctx.write("obstacles_diff.txt", &formats::matrix_to_string("success", &k_axes, &diff, &ctx.prov))?;
    let tau_axes = format!("rows tau = {:?}, columns occlusion rate = {:?}, k = {}", cfg.taus, cfg.occlusion_rates, cfg.ks[0]);
    ctx.write(
        "obstacles_tau_gpn.txt",
        &formats::matrix_to_string("success", &tau_axes, &report.gpn.tau_by_rate(0), &ctx.prov),
    )?;
    ctx.write(
        "obstacles_tau_lookup.txt",
        &formats::matrix_to_string("success", &tau_axes, &report.lookup.tau_by_rate(0), &ctx.prov),
    )?;
    let mut rows = Vec::new();
    tensor_rows("gpn", &report.gpn, &mut rows);
    tensor_rows("lookup", &report.lookup, &mut rows);
    ctx.write(
        "obstacles_tensor.tsv",
        &formats::table_to_string("success-tensor", &["method", "rate", "k", "tau", "success"], &rows, &ctx.prov),
    )?;
    println!(
        "k={} tau={}: gpn {:?} lookup {:?}",
        cfg.ks[0], cfg.success_tau, gpn_m[0], lookup_m[0]
    );
    Ok(())
}

fn stats_row(label: Vec<String>, s: &MethodStats) -> Vec<String> {
    let mut r = label;
    r.extend([
        s.rmse.to_string(),
        s.diversity.to_string(),
        s.collision_rate.to_string(),
        s.success.to_string(),
    ]);
    r
}

fn baselines(ctx: &Context, a: &Artifacts) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("no wall scenarios configured".into()));
    }
    let arm = cfg.arm_model()?;
    let sim = SimConfig::for_arm(&arm);
    let rep = ctx.repertoire(a)?;
    let gen = ctx.generator(a)?;
    let setup = Setup {
        arm: &arm,
        sim: &sim,
        rep: &rep,
        gen: &gen,
    };
    let scenarios: Vec<WallScenario> = cfg
        .scenario_walls()?
        .into_iter()
        .map(|(goal, wall)| WallScenario { goal, wall })
        .collect();
    let settings = BaselineSettings {
        trials: cfg.trials,
        k: cfg.baseline_k,
        tau: cfg.success_tau,
        waypoints: cfg.waypoints,
        kde_bandwidths: (cfg.kde.bandwidth_c, cfg.kde.bandwidth_pi),
        bayes_opt: cfg.bayes_opt_config(),
    };
    let bounds = cfg.floor_bounds()?;
    let report = compare_baselines(&setup, &scenarios, bounds, &settings, cfg.stage_seed(Stage::Baselines))?;

    let cols = ["method", "rmse", "diversity", "collision_rate", "success"];
    let rows: Vec<Vec<String>> = Method::ALL
        .iter()
        .zip(&report.mean)
        .map(|(m, s)| stats_row(vec![m.name().into()], s))
        .collect();
    ctx.write("baselines_table.tsv", &formats::table_to_string("baselines", &cols, &rows, &ctx.prov))?;
    let mut per = Vec::new();
    for (i, sc) in report.scenarios.iter().enumerate() {
        for (m, s) in Method::ALL.iter().zip(&sc.stats) {
            per.push(stats_row(vec![i.to_string(), m.name().into()], s));
        }
        ctx.write(
            &format!("bayes_opt_history_{i}.tsv"),
            &formats::bayes_opt_history_to_string(&sc.bayes_opt, &ctx.prov),
        )?;
        ctx.write(&format!("scenario_{i}_world.txt"), &formats::world_to_string(&sc.scenario.world(bounds)?, &ctx.prov))?;
    }
    let cols = ["scenario", "method", "rmse", "diversity", "collision_rate", "success"];
    ctx.write("baselines_scenarios.tsv", &formats::table_to_string("baselines", &cols, &per, &ctx.prov))?;
    for (m, s) in Method::ALL.iter().zip(&report.mean) {
        println!(
            "{:10} rmse {:.3} diversity {:.3} collisions {:.2} success {:.2}",
            m.name(),
            s.rmse,
            s.diversity,
            s.collision_rate,
            s.success
        );
    }
    Ok(())
}
