//! Command-line surface for MDP importance analysis: model generation,
//! single and batch importance queries, encoding export, textual
//! explanations, heatmaps, and cross-checking of external solver results.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 undefined importance,
//! 3 search budget exceeded.

mod commands;
mod model_file;
mod report;

use clap::{Args, Parser, Subcommand};
use mdpattr::StrategyClass;

use commands::{
    cmd_batch, cmd_crosscheck, cmd_explain, cmd_export, cmd_gen, cmd_heatmap, cmd_importance,
    BatchParams, CliError, ExportParams, GenParams, HeatmapParams, QueryParams,
};

#[derive(Parser)]
#[command(
    name = "mdpattr",
    version,
    about = "Importance analysis for MDP target reachability"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ClassArg {
    All,
    Opt,
}

impl From<ClassArg> for StrategyClass {
    fn from(value: ClassArg) -> Self {
        match value {
            ClassArg::All => StrategyClass::All,
            ClassArg::Opt => StrategyClass::ReachOptimal,
        }
    }
}

#[derive(Args)]
struct CommonQueryArgs {
    /// Target state; defaults to the model file's `target` field.
    #[arg(long)]
    target: Option<String>,
    /// Strategy class: every target-reaching strategy, or only
    /// reachability-optimal ones.
    #[arg(long, value_enum, default_value = "all")]
    class: ClassArg,
    /// Minimum probability of reaching the target for the `all` class.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in example model or a seeded random model.
    Gen {
        /// loan, nonmono, gridworld, or random.
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long, default_value_t = 7)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        height: usize,
        #[arg(long, default_value_t = 2)]
        lava_row: usize,
        #[arg(long, default_value_t = 3)]
        door_x: usize,
        #[arg(long)]
        out: Option<String>,
    },
    /// Importance bounds for one state or path.
    Importance {
        model: String,
        #[command(flatten)]
        common: CommonQueryArgs,
        /// State subject.
        #[arg(long)]
        state: Option<String>,
        /// Path subject as `s0,a0,s1,...,sn`.
        #[arg(long)]
        path: Option<String>,
        /// Optimize the unnormalized event probability instead.
        #[arg(long)]
        absolute: bool,
        #[arg(long, default_value_t = 10_000_000)]
        node_cap: u64,
        #[arg(long, default_value_t = 600)]
        wall_cap_secs: u64,
        #[arg(long)]
        out: Option<String>,
    },
    /// Importance bounds for every state of the model.
    Batch {
        model: String,
        #[command(flatten)]
        common: CommonQueryArgs,
        /// Query every state (the default and only mode).
        #[arg(long, default_value_t = true)]
        all_states: bool,
        #[arg(long)]
        absolute: bool,
        /// Worker threads; 0 keeps the default pool.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Add per-row wall times (makes output timing-dependent).
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        out: Option<String>,
    },
    /// Export an optimization encoding as `<prefix>.lp` + `<prefix>.meta.json`.
    Export {
        model: String,
        /// qp, qpstar, or lpstar.
        #[arg(long)]
        encoding: String,
        /// Pivot state whose importance is encoded.
        #[arg(long)]
        state: String,
        #[arg(long)]
        target: Option<String>,
        /// min or max.
        #[arg(long, default_value = "min")]
        sense: String,
        /// Optimal reachability probability: `auto` or a number. Required to
        /// export `qp`, whose raw objective is fractional.
        #[arg(long)]
        pstar: Option<String>,
        /// Emit the two-level objective form of qpstar.
        #[arg(long)]
        hierarchical: bool,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e16)]
        big_m: f64,
        #[arg(long)]
        out: String,
    },
    /// Summarize the most important and most detrimental states.
    Explain {
        model: String,
        #[arg(long)]
        target: Option<String>,
        /// Lower-bound threshold for indispensable states.
        #[arg(long, default_value_t = 0.95)]
        high: f64,
        /// Upper-bound threshold for detrimental states.
        #[arg(long, default_value_t = 0.05)]
        low: f64,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
    },
    /// Emit per-state bounds as CSV, optionally with a PPM cell image for
    /// grid-labeled models.
    Heatmap {
        model: String,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        /// Grid size `WxH`; defaults to the labeled extent.
        #[arg(long)]
        grid: Option<String>,
        /// Write a plain PPM image coloring cells by lower bound.
        #[arg(long)]
        image: Option<String>,
        #[arg(long)]
        out: String,
    },
    /// Check an external solver's solution against exact recomputation.
    Crosscheck {
        model: String,
        #[arg(long)]
        meta: String,
        /// Flat `name value` solution file; defaults to
        /// `$MDPATTR_SOLVER_SOLUTION_DIR/<prefix>.sol`.
        #[arg(long)]
        solution: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
    },
}

fn parse_grid(text: &str) -> Result<(usize, usize), CliError> {
    let (w, h) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::Input(format!("--grid expects WxH, got `{text}`")))?;
    let w = w
        .parse()
        .map_err(|_| CliError::Input(format!("bad grid width `{w}`")))?;
    let h = h
        .parse()
        .map_err(|_| CliError::Input(format!("bad grid height `{h}`")))?;
    Ok((w, h))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            kind,
            seed,
            states,
            actions,
            density,
            width,
            height,
            lava_row,
            door_x,
            out,
        } => {
            let params = GenParams {
                seed,
                states,
                actions,
                density,
                width,
                height,
                lava_row,
                door_x,
            };
            cmd_gen(&kind, &params, out.as_deref())
        }
        Command::Importance {
            model,
            common,
            state,
            path,
            absolute,
            node_cap,
            wall_cap_secs,
            out,
        } => {
            let params = QueryParams {
                state,
                path,
                target: common.target,
                class: common.class.into(),
                absolute,
                epsilon: common.epsilon,
                node_cap,
                wall_cap_secs,
            };
            cmd_importance(&model, &params, out.as_deref())
        }
        Command::Batch {
            model,
            common,
            all_states: _,
            absolute,
            jobs,
            format,
            timings,
            out,
        } => {
            let params = BatchParams {
                target: common.target,
                class: common.class.into(),
                absolute,
                epsilon: common.epsilon,
                jobs,
                format,
                timings,
            };
            cmd_batch(&model, &params, out.as_deref())
        }
        Command::Export {
            model,
            encoding,
            state,
            target,
            sense,
            pstar,
            hierarchical,
            epsilon,
            big_m,
            out,
        } => {
            let params = ExportParams {
                encoding,
                state,
                target,
                sense,
                p_star: pstar,
                hierarchical,
                epsilon,
                big_m,
            };
            cmd_export(&model, &params, &out)
        }
        Command::Explain {
            model,
            target,
            high,
            low,
            epsilon,
        } => {
            let text = cmd_explain(&model, target.as_deref(), high, low, epsilon)?;
            print!("{text}");
            Ok(())
        }
        Command::Heatmap {
            model,
            target,
            epsilon,
            grid,
            image,
            out,
        } => {
            let grid = grid.as_deref().map(parse_grid).transpose()?;
            let params = HeatmapParams {
                target,
                epsilon,
                grid,
                image,
            };
            cmd_heatmap(&model, &params, &out)
        }
        Command::Crosscheck {
            model,
            meta,
            solution,
            epsilon,
        } => cmd_crosscheck(&model, &meta, solution.as_deref(), epsilon),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; everything else is a
            // usage error under the exit-code contract.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.exit_code());
    }
}
