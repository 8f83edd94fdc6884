//! Command-line front end for the extrapolation pipeline.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use fieldext::extrapolator::{
    assemble_block, build_aux, residual_rj, solve_block, BlockForm, LambdaOrder,
};
use fieldext::forward::{add_noise, forward_eq1};
use fieldext::grid::build_grid;
use fieldext::harness::{
    emit_heatmap, read_csv_field, run, scenario_fig1_default, sweep, Scenario,
};
use fieldext::kernels::KernelParams;
use fieldext::spectral::eig_k12;
use fieldext::Result;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BlockFormArg {
    Selfadjoint,
    Literal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LambdaOrderArg {
    Modulus,
    Algebraic,
}

#[derive(Parser, Debug)]
#[command(
    name = "fieldext",
    about = "Extrapolate a measured planar magnetic-field component beyond the measurement patch"
)]
struct Cli {
    /// Scenario config (JSON, strict schema); the built-in default scenario
    /// is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for run artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the scenario noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the scenario block form.
    #[arg(long, global = true)]
    block_form: Option<BlockFormArg>,

    /// Overrides the scenario eigenvalue ordering.
    #[arg(long, global = true)]
    lambda_order: Option<LambdaOrderArg>,

    /// Suppresses progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic measurement data (meas.csv, true.csv, heatmaps).
    Simulate,
    /// Compute the K12 eigenbasis (spectrum_mu.csv plus one CSV per
    /// eigenfunction).
    Basis,
    /// Build the block model (model.json, spectrum_lambda.csv).
    Build,
    /// Run the pipeline and write the extrapolant (ext.csv, b_coeffs.csv).
    Extrapolate,
    /// Full end-to-end run with metrics and manifest.
    Run,
    /// Grid of runs over J and N lists; emits sweep.csv.
    Sweep {
        /// Comma-separated J values.
        #[arg(long, value_delimiter = ',', required = true)]
        j_list: Vec<usize>,
        /// Comma-separated N values.
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
    },
    /// Render a field CSV as an 8-bit grayscale PGM.
    Heatmap {
        /// Input field CSV (x1,x2,value).
        input: PathBuf,
    },
}

fn load_scenario(cli: &Cli) -> Result<Scenario> {
    let mut s = match &cli.config {
        Some(path) => Scenario::from_json_file(path)?,
        None => scenario_fig1_default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(bf) = cli.block_form {
        s.block_form = match bf {
            BlockFormArg::Selfadjoint => BlockForm::Selfadjoint,
            BlockFormArg::Literal => BlockForm::Literal,
        };
    }
    if let Some(lo) = cli.lambda_order {
        s.lambda_order = match lo {
            LambdaOrderArg::Modulus => LambdaOrder::Modulus,
            LambdaOrderArg::Algebraic => LambdaOrder::Algebraic,
        };
    }
    s.validate()?;
    Ok(s)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => {
            let s = load_scenario(cli)?;
            let dir = out_dir(cli);
            std::fs::create_dir_all(&dir)?;
            let params = KernelParams::new(s.h)?;
            let mag = s.sample_magnetisation()?;
            let meas_grid = build_grid(s.q, s.meas_grid[0], s.meas_grid[1])?;
            let eval_grid = build_grid(s.eval_rect, s.eval_grid[0], s.eval_grid[1])?;
            let meas = add_noise(&forward_eq1(&mag, &meas_grid, &params), s.sigma_rel, s.seed)?;
            let truth = forward_eq1(&mag, &eval_grid, &params);
            meas.write_csv_file(&dir.join("meas.csv"))?;
            truth.write_csv_file(&dir.join("true.csv"))?;
            emit_heatmap(&meas, &dir.join("meas.pgm"))?;
            emit_heatmap(&truth, &dir.join("true_eval.pgm"))?;
            serde_json::to_writer_pretty(
                std::fs::File::create(dir.join("manifest.json"))?,
                &s,
            )?;
            if !cli.quiet {
                println!("simulated measurement written to {}", dir.display());
            }
        }
        Command::Basis => {
            let s = load_scenario(cli)?;
            let dir = out_dir(cli);
            std::fs::create_dir_all(&dir)?;
            let params = KernelParams::new(s.h)?;
            let grid = build_grid(s.q, s.meas_grid[0], s.meas_grid[1])?;
            let basis = eig_k12(&grid, &params, s.j)?;
            let mut f = std::fs::File::create(dir.join("spectrum_mu.csv"))?;
            basis.write_spectrum_csv(&mut f)?;
            for (k, phi) in basis.phi().iter().enumerate() {
                phi.write_csv_file(&dir.join(format!("phi_{:04}.csv", k + 1)))?;
            }
            if !cli.quiet {
                println!("basis (J = {}) written to {}", s.j, dir.display());
            }
        }
        Command::Build => {
            let s = load_scenario(cli)?;
            let dir = out_dir(cli);
            std::fs::create_dir_all(&dir)?;
            let params = KernelParams::new(s.h)?;
            let grid = build_grid(s.q, s.meas_grid[0], s.meas_grid[1])?;
            let basis = eig_k12(&grid, &params, s.j)?;
            let probes = [[0.0, 0.0]];
            let r_j = residual_rj(&basis, &params, &probes)?;
            let aux = Arc::new(build_aux(basis, &params)?);
            let block = assemble_block(&aux, s.block_form)?;
            let model = solve_block(&block, &aux, s.n, s.lambda_order)?;
            let mut f = std::fs::File::create(dir.join("spectrum_lambda.csv"))?;
            use std::io::Write;
            writeln!(f, "index,lambda")?;
            for (i, l) in model.lambda().iter().enumerate() {
                writeln!(f, "{},{:.16e}", i + 1, l)?;
            }
            serde_json::to_writer_pretty(
                std::fs::File::create(dir.join("model.json"))?,
                &serde_json::json!({
                    "j": s.j,
                    "n": s.n,
                    "h": s.h,
                    "meas_grid": s.meas_grid,
                    "block_form": s.block_form,
                    "lambda_order": s.lambda_order,
                    "lambda": model.lambda(),
                    "diagnostics": {
                        "r_j_norms": r_j,
                        "block_symmetry_residual": block.symmetry_residual,
                        "s_construction_residual": aux.construction_residual(),
                        "mixed_symmetry_residual": aux.mixed_symmetry_residual(),
                        "block_eigen_residual_max": model.max_eigen_residual,
                    },
                }),
            )?;
            if !cli.quiet {
                println!("block model (N = {}) written to {}", s.n, dir.display());
            }
        }
        Command::Extrapolate | Command::Run => {
            let s = load_scenario(cli)?;
            let dir = out_dir(cli);
            let report = run(&s, Some(&dir))?;
            if !cli.quiet {
                match report.metrics.rel_l2_eval {
                    Some(e) => println!(
                        "relative L2 error on evaluation region: {:.4} ({:.2}%)",
                        e,
                        100.0 * e
                    ),
                    None => println!(
                        "true field below denominator guard; absolute L2 error {:.3e}",
                        report.metrics.abs_l2_eval
                    ),
                }
                println!("artifacts written to {}", dir.display());
            }
        }
        Command::Sweep { j_list, n_list } => {
            let s = load_scenario(cli)?;
            let dir = out_dir(cli);
            let cells = sweep(&s, j_list, n_list, Some(&dir))?;
            if !cli.quiet {
                for c in &cells {
                    match (&c.error, c.rel_l2_eval) {
                        (Some(e), _) => println!("J={} N={}: failed: {}", c.j, c.n, e),
                        (None, Some(err)) => println!("J={} N={}: eval error {:.4}", c.j, c.n, err),
                        (None, None) => println!("J={} N={}: below denominator guard", c.j, c.n),
                    }
                }
                println!("sweep.csv written to {}", dir.display());
            }
        }
        Command::Heatmap { input } => {
            let field = read_csv_field(input)?;
            let target: &Path = &cli
                .out
                .clone()
                .unwrap_or_else(|| input.with_extension("pgm"));
            let target = if target.is_dir() {
                target.join(
                    input
                        .with_extension("pgm")
                        .file_name()
                        .map(PathBuf::from)
                        .unwrap_or_else(|| PathBuf::from("field.pgm")),
                )
            } else {
                target.to_path_buf()
            };
            emit_heatmap(&field, &target)?;
            if !cli.quiet {
                println!("heatmap written to {}", target.display());
            }
        }
    }
    Ok(())
}
