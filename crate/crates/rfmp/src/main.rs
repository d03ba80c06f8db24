//! Command-line front end: grid/dictionary construction, data synthesis,
//! RFMP/LRFMP runs, growing-dictionary replay, field evaluation, and the
//! gradient self-check.
//!
//! Errors exit nonzero after printing a single machine-readable JSON line
//! `{"error": "..."}` on stderr. Log verbosity follows `RUST_LOG`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rfmp::dictionary::{manual_dictionary, starting_dictionary as build_starting, Dictionary};
use rfmp::error::{Error, Result};
use rfmp::grid::reuter_grid;
use rfmp::io::{
    error_metrics, evaluate_field, read_model, read_terms, read_values, write_field_csv,
    write_grid_csv, write_learn_diagnostics, write_pursuit_diagnostics, write_terms, write_values,
    ExperimentConfig,
};
use rfmp::kernel::{
    apk_upward, apk_upward_grad, h2_inner, h2_inner_grad_apk, h2_norm_grad_apk, h2_norm_sq_apk,
    SeriesControl,
};
use rfmp::learner::{learn, rfmp_objective_and_grad, ObjectiveContext};
use rfmp::operator::{add_noise, synthesize_data, ProblemSetup};
use rfmp::pursuit::{run as pursuit_run, PursuitConfig};
use rfmp::dictionary::DictionaryElement;
use rfmp::types::{norm3, scale3, BallPoint, SHIndex, Vec3};

#[derive(Parser)]
#[command(name = "rfmp", about = "Regularized Functional Matching Pursuit workbench")]
struct Cli {
    /// Size of the rayon thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a Reuter grid as a lon/lat CSV.
    Grid {
        #[arg(long)]
        gamma: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dictionary construction.
    #[command(subcommand)]
    Dict(DictCmd),
    /// Synthesize satellite data from a ground-truth model.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gamma: u32,
        #[arg(long)]
        sigma: f64,
        /// Gaussian noise level relative to the data RMS.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// RFMP on a stored dictionary.
    Run {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        dict: PathBuf,
        /// Basename for the expansion/diagnostics outputs.
        #[arg(long, default_value = "run")]
        prefix: String,
    },
    /// LRFMP dictionary learning from a JSON experiment config.
    Learn {
        #[arg(long)]
        config: PathBuf,
        /// Discrete kernel starting set (see `dict build-starting`).
        #[arg(long)]
        start_dict: PathBuf,
        /// Optional precomputed data vector; synthesized from the model
        /// otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// RFMP on a learnt dictionary in growing-dictionary mode.
    Replay {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, default_value = "replay")]
        prefix: String,
    },
    /// Evaluate an expansion on the held-out grid and compare to the model.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        expansion: PathBuf,
        /// Evaluate at this radius instead of the surface.
        #[arg(long)]
        at_height: Option<f64>,
        #[arg(long, default_value = "eval")]
        prefix: String,
    },
    /// Finite-difference verification of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DictCmd {
    /// Spherical harmonics up to a degree plus kernels on a grid x radii.
    BuildManual {
        #[arg(long)]
        max_degree: u32,
        #[arg(long)]
        gamma: u32,
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// LRFMP starting set: spherical harmonics plus a single-radius shell.
    BuildStarting {
        #[arg(long)]
        max_degree: u32,
        #[arg(long)]
        gamma: u32,
        #[arg(long)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Inverse-problem inputs shared by `run` and `replay`.
#[derive(Args)]
struct ProblemArgs {
    #[arg(long)]
    config: PathBuf,
    /// Optional precomputed data vector; synthesized from the model
    /// otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    env_logger::init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{{\"error\": \"{e}\"}}");
            std::process::exit(2);
        }
    }
    if let Err(e) = dispatch(cli.cmd) {
        let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
        eprintln!("{{\"error\": \"{msg}\"}}");
        std::process::exit(1);
    }
}

fn load_problem(cfg: &ExperimentConfig, data: &Option<PathBuf>) -> Result<ProblemSetup> {
    let grid = reuter_grid(cfg.data_gamma)?;
    let y = match data {
        Some(path) => read_values(path)?,
        None => {
            let model = read_model(Path::new(&cfg.model_path))?;
            let mut y = synthesize_data(&model.terms, &grid, cfg.sigma);
            add_noise(&mut y, cfg.noise_level, cfg.noise_seed);
            y
        }
    };
    ProblemSetup::new(grid, cfg.sigma, y)
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(Path::new(&cfg.output_dir).join(name))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Grid { gamma, out } => {
            let grid = reuter_grid(gamma)?;
            write_grid_csv(&out, &grid)?;
            println!("wrote {} points to {}", grid.len(), out.display());
            Ok(())
        }
        Cmd::Dict(DictCmd::BuildManual {
            max_degree,
            gamma,
            radii,
            out,
        }) => {
            let grid = reuter_grid(gamma)?;
            let dict = manual_dictionary(max_degree, &grid, &radii)?;
            dict.write_to(&out)?;
            println!("wrote {} elements to {}", dict.len(), out.display());
            Ok(())
        }
        Cmd::Dict(DictCmd::BuildStarting {
            max_degree,
            gamma,
            radius,
            out,
        }) => {
            let grid = reuter_grid(gamma)?;
            let dict = build_starting(max_degree, &grid, radius)?;
            dict.write_to(&out)?;
            println!("wrote {} elements to {}", dict.len(), out.display());
            Ok(())
        }
        Cmd::Synth {
            model,
            gamma,
            sigma,
            noise,
            seed,
            out,
        } => {
            let model = read_model(&model)?;
            let grid = reuter_grid(gamma)?;
            if !(sigma > 1.0) {
                return Err(Error::Config(format!("sigma must be > 1, got {sigma}")));
            }
            let mut y = synthesize_data(&model.terms, &grid, sigma);
            add_noise(&mut y, noise, seed);
            write_values(&out, &y)?;
            println!("wrote {} values to {}", y.len(), out.display());
            Ok(())
        }
        Cmd::Run { problem, dict, prefix } => {
            let cfg = ExperimentConfig::from_file(&problem.config)?;
            let setup = load_problem(&cfg, &problem.data)?;
            let dictionary = Dictionary::read_from(&dict)?;
            let outcome = pursuit_run(&dictionary, &setup, &cfg.pursuit)?;
            report_run(&cfg, &prefix, &outcome)?;
            Ok(())
        }
        Cmd::Replay { problem, dict, prefix } => {
            let cfg = ExperimentConfig::from_file(&problem.config)?;
            let setup = load_problem(&cfg, &problem.data)?;
            let dictionary = Dictionary::read_from(&dict)?;
            let replay_cfg = PursuitConfig {
                growing_dictionary: true,
                ..cfg.pursuit.clone()
            };
            let outcome = pursuit_run(&dictionary, &setup, &replay_cfg)?;
            report_run(&cfg, &prefix, &outcome)?;
            Ok(())
        }
        Cmd::Learn {
            config,
            start_dict,
            data,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let setup = load_problem(&cfg, &data)?;
            let start = Dictionary::read_from(&start_dict)?;
            log::info!("starting set has {} elements", start.len());
            let outcome = learn(&setup, &start, &cfg.learn, &cfg.pursuit)?;
            outcome.dictionary.write_to(&out_path(&cfg, "learnt.dict")?)?;
            write_terms(
                &out_path(&cfg, "learn_expansion.txt")?,
                &outcome.expansion,
                "learnt expansion: element coefficient",
            )?;
            write_learn_diagnostics(&out_path(&cfg, "learn_diagnostics.csv")?, &outcome.records)?;
            println!(
                "learnt {} elements in {} iterations (stop: {:?})",
                outcome.dictionary.len(),
                outcome.records.len(),
                outcome.stop
            );
            Ok(())
        }
        Cmd::Eval {
            config,
            expansion,
            at_height,
            prefix,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let terms = read_terms(&expansion)?;
            let grid = reuter_grid(cfg.eval_gamma)?;
            let approx = evaluate_field(&terms, &grid, at_height)?;
            write_field_csv(&out_path(&cfg, &format!("{prefix}_field.csv"))?, &grid, &approx)?;
            let model = read_model(Path::new(&cfg.model_path))?;
            let truth = evaluate_field(&model.terms, &grid, at_height)?;
            let (rel, max_abs, rms) = error_metrics(&approx, &truth)?;
            let metrics = out_path(&cfg, &format!("{prefix}_metrics.csv"))?;
            std::fs::write(
                &metrics,
                format!("rel_approx_error,max_abs_error,rms\n{rel:.17e},{max_abs:.17e},{rms:.17e}\n"),
            )?;
            println!("rel_approx_error {rel:.6e} max_abs {max_abs:.6e} rms {rms:.6e}");
            Ok(())
        }
        Cmd::Gradcheck { seed } => gradcheck(seed),
    }
}

fn report_run(
    cfg: &ExperimentConfig,
    prefix: &str,
    outcome: &rfmp::pursuit::PursuitOutcome,
) -> Result<()> {
    write_terms(
        &out_path(cfg, &format!("{prefix}_expansion.txt"))?,
        &outcome.expansion,
        "expansion: element coefficient",
    )?;
    write_pursuit_diagnostics(
        &out_path(cfg, &format!("{prefix}_diagnostics.csv"))?,
        &outcome.records,
    )?;
    let final_rel = outcome
        .records
        .last()
        .map(|r| r.rel_data_error)
        .unwrap_or(1.0);
    println!(
        "{} iterations, final relative data error {final_rel:.6e} (stop: {:?})",
        outcome.records.len(),
        outcome.stop
    );
    Ok(())
}

/// Seeded finite-difference sweep over every analytic gradient in the crate;
/// prints one pass/fail line per check.
fn gradcheck(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctl = SeriesControl::default();
    let grid = reuter_grid(6)?;
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{name}: {}", if ok { "pass" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };
    let random_ball = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> BallPoint {
        let v: Vec3 = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let dir = scale3(v, 1.0 / norm3(v).max(1e-9));
        BallPoint::new(scale3(dir, rng.gen_range(lo..hi))).unwrap()
    };
    let fd_ok = |g: Vec3, fd: Vec3, tol: f64| -> bool {
        let gn = norm3(g).max(norm3(fd)).max(1e-9);
        (0..3).all(|c| (g[c] - fd[c]).abs() / gn < tol)
    };
    let h = 1e-5;

    // upward-continued kernel gradient
    let mut ok = true;
    for _ in 0..50 {
        let x = random_ball(&mut rng, 0.1, 0.9);
        let eta = random_ball(&mut rng, 0.5, 0.9).xi();
        let g = apk_upward_grad(&x, eta, 1.06)?;
        let mut fd = [0.0; 3];
        for c in 0..3 {
            let mut xp = x.coords();
            let mut xm = x.coords();
            xp[c] += h;
            xm[c] -= h;
            fd[c] = (apk_upward(&BallPoint::new(xp)?, eta, 1.06)?
                - apk_upward(&BallPoint::new(xm)?, eta, 1.06)?)
                / (2.0 * h);
        }
        ok &= fd_ok(g, fd, 1e-6);
    }
    check("apk_upward_grad vs finite differences", ok);

    // H_2 norm gradient
    let mut ok = true;
    for _ in 0..50 {
        let x = random_ball(&mut rng, 0.1, 0.9);
        let g = h2_norm_grad_apk(&x, &ctl)?;
        let mut fd = [0.0; 3];
        for c in 0..3 {
            let mut xp = x.coords();
            let mut xm = x.coords();
            xp[c] += h;
            xm[c] -= h;
            fd[c] = (h2_norm_sq_apk(&BallPoint::new(xp)?, &ctl)?
                - h2_norm_sq_apk(&BallPoint::new(xm)?, &ctl)?)
                / (2.0 * h);
        }
        ok &= fd_ok(g, fd, 1e-6);
    }
    check("h2_norm_grad_apk vs finite differences", ok);

    // H_2 inner-product gradient, SH and kernel partners
    let mut ok = true;
    for trial in 0..50 {
        let other = if trial % 2 == 0 {
            let deg = rng.gen_range(0..8u32);
            let ord = rng.gen_range(-(deg as i32)..=deg as i32);
            DictionaryElement::SphericalHarmonic(SHIndex::new(deg, ord)?)
        } else {
            DictionaryElement::AbelPoisson(random_ball(&mut rng, 0.3, 0.9))
        };
        let x = random_ball(&mut rng, 0.1, 0.9);
        let g = h2_inner_grad_apk(&other, &x, &ctl)?;
        let mut fd = [0.0; 3];
        for c in 0..3 {
            let mut xp = x.coords();
            let mut xm = x.coords();
            xp[c] += h;
            xm[c] -= h;
            fd[c] = (h2_inner(&other, &DictionaryElement::AbelPoisson(BallPoint::new(xp)?), &ctl)?
                - h2_inner(&other, &DictionaryElement::AbelPoisson(BallPoint::new(xm)?), &ctl)?)
                / (2.0 * h);
        }
        ok &= fd_ok(g, fd, 1e-5);
    }
    check("h2_inner_grad_apk vs finite differences", ok);

    // full RFMP objective gradient with random residuals and expansions
    let mut ok = true;
    for trial in 0..50 {
        let residual: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut expansion = Vec::new();
        for _ in 0..rng.gen_range(0..3) {
            expansion.push((
                DictionaryElement::AbelPoisson(random_ball(&mut rng, 0.2, 0.7)),
                rng.gen_range(-1.0..1.0),
            ));
        }
        let ctx = ObjectiveContext {
            residual: &residual,
            expansion: &expansion,
            grid: &grid,
            sigma: 1.06,
            lambda: if trial % 2 == 0 { 0.0 } else { 1e-2 },
            series: ctl,
        };
        let x = random_ball(&mut rng, 0.1, 0.9);
        let (_, g) = rfmp_objective_and_grad(&x, &ctx)?;
        let mut fd = [0.0; 3];
        for c in 0..3 {
            let mut xp = x.coords();
            let mut xm = x.coords();
            xp[c] += h;
            xm[c] -= h;
            fd[c] = (rfmp_objective_and_grad(&BallPoint::new(xp)?, &ctx)?.0
                - rfmp_objective_and_grad(&BallPoint::new(xm)?, &ctx)?.0)
                / (2.0 * h);
        }
        ok &= fd_ok(g, fd, 1e-5);
    }
    check("rfmp_objective_and_grad vs finite differences", ok);

    if failures > 0 {
        return Err(Error::Config(format!("{failures} gradient checks failed")));
    }
    Ok(())
}
