use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use neardgd::harness::{
    bounds_report, compare_experiment, emit_plot_data, load_config, parse_config, preset,
    run_experiment, summary_text, sweep_experiment, ExperimentConfig, PRESET_NAMES,
};
use neardgd::Error;

#[derive(Parser)]
#[command(name = "neardgd", about = "Distributed-optimization simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a `key = value` config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a built-in preset (see `neardgd presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods under the configured consensus variant.
    Run(ConfigArgs),
    /// Run every method under all three consensus variants and summarize.
    Compare(ConfigArgs),
    /// Run the scaling sweep grid and write `scaling_summary.csv`.
    Sweep(ConfigArgs),
    /// Print theory constants and closed-form neighborhood bounds.
    Bounds(ConfigArgs),
    /// List built-in presets, or print one by name.
    Presets { name: Option<String> },
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => load_config(path)?,
            (None, Some(name)) => parse_config(preset(name)?)?,
            _ => return Err(Error::Config("give exactly one of --config or --preset".into())),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn real_main(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let report = run_experiment(&cfg, cfg.variant, true)?;
            let reports = vec![report];
            emit_plot_data(&reports, &cfg.out_dir)?;
            print!("{}", summary_text(&reports));
        }
        Command::Compare(args) => {
            let cfg = args.load()?;
            let reports = compare_experiment(&cfg)?;
            emit_plot_data(&reports, &cfg.out_dir)?;
            let text = summary_text(&reports);
            let file = cfg.out_dir.join("compare_summary.txt");
            std::fs::write(&file, &text).map_err(|e| Error::io(&file, e))?;
            print!("{text}");
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            let cells = sweep_experiment(&cfg)?;
            println!(
                "wrote {} sweep cells to {}",
                cells.len(),
                cfg.out_dir.join("scaling_summary.csv").display()
            );
        }
        Command::Bounds(args) => {
            let cfg = args.load()?;
            print!("{}", bounds_report(&cfg)?);
        }
        Command::Presets { name } => match name {
            Some(name) => print!("{}", preset(&name)?),
            None => {
                for name in PRESET_NAMES {
                    println!("{name}");
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } | Error::Parameter(_) | Error::Io { .. } => {
                    ExitCode::from(1)
                }
                _ => ExitCode::from(2),
            }
        }
    }
}
