use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use drawl_cli::{
    generate_victim, gen::GenVictimConfig, reporting, run_campaign, summary_line,
    AttackOverrides, CampaignConfig, CliError, ConfigFile, DEFAULT_SEED,
};
use drawl_core::attack::Norm;
use drawl_core::report::emit;
use drawl_core::victims::VictimKind;

#[derive(Parser)]
#[command(
    name = "drawl",
    version,
    about = "Slowdown attacks against surrogate TTS length predictors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded surrogate victim (AR victims are calibrated on
    /// the probe corpus).
    GenVictim(GenVictimArgs),
    /// Run an attack campaign over a corpus and emit outcome files.
    Attack(AttackArgs),
    /// Recompute and print the per-method metric table from run
    /// directories.
    Report(ReportArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenVictimArgs {
    /// Victim kind: ar or nar.
    #[arg(long)]
    kind: String,
    /// Probe corpus (defines the vocabulary; calibrates AR victims).
    #[arg(long)]
    corpus: PathBuf,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    d_text: usize,
    #[arg(long, default_value_t = 32)]
    d_spk: usize,
    #[arg(long, default_value_t = 32)]
    d_h: usize,
    #[arg(long, default_value_t = 256)]
    frames_per_step: u32,
    #[arg(long, default_value_t = 256)]
    frames_per_unit: u32,
    #[arg(long, default_value_t = 2000)]
    max_steps: u32,
    /// Use only the first N probe utterances.
    #[arg(long)]
    limit: Option<usize>,
    /// Homoglyph table file (JSON map); defaults to the builtin table.
    #[arg(long)]
    homoglyphs: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// JSON config file mirroring these flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    victim: Option<PathBuf>,
    /// Output directory for outcome files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of clean, spk-l2, spk-linf, text,
    /// text-baseline, spk-baseline. Defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    iters: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Perturbation budget override (per-norm defaults otherwise).
    #[arg(long)]
    eps: Option<f64>,
    /// Norm used by the speaker baseline: l2 or linf.
    #[arg(long)]
    norm: Option<Norm>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    /// Attack only the first N utterances.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads; never changes emitted numeric values.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    homoglyphs: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories produced by `drawl attack`.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenVictim(args) => {
            let kind = match args.kind.as_str() {
                "ar" => VictimKind::Ar,
                "nar" => VictimKind::Nar,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown victim kind {other:?}; expected ar or nar"
                    )))
                }
            };
            let config = GenVictimConfig {
                d_text: args.d_text,
                d_spk: args.d_spk,
                d_h: args.d_h,
                frames_per_step: args.frames_per_step,
                frames_per_unit: args.frames_per_unit,
                max_steps: args.max_steps,
                limit: args.limit,
                homoglyphs: args.homoglyphs,
                ..GenVictimConfig::new(kind, args.corpus, args.out, args.seed)
            };
            let summary = generate_victim(&config)?;
            println!("{}", summary_line(&summary));
            Ok(())
        }
        Command::Attack(args) => {
            let file = match &args.config {
                Some(path) => Some(ConfigFile::load(path)?),
                None => None,
            };
            let overrides = AttackOverrides {
                corpus: args.corpus,
                victim: args.victim,
                out: args.out,
                methods: args.methods,
                iters: args.iters,
                alpha: args.alpha,
                eps: args.eps,
                norm: args.norm,
                ratio: args.ratio,
                beam: args.beam,
                candidates: args.candidates,
                limit: args.limit,
                jobs: args.jobs,
                seed: args.seed,
                homoglyphs: args.homoglyphs,
            };
            let config = CampaignConfig::resolve(overrides, file)?;
            let result = run_campaign(&config)?;
            emit(
                &config.out,
                &result.outcomes,
                &result.aggregates,
                &result.kdes,
                &result.manifest,
            )
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("writing outputs: {e}")))?;
            println!(
                "attacked {} utterances over {} methods ({} skipped); outputs in {}",
                result.manifest.utterances_attacked,
                config.methods.len(),
                result.manifest.skipped.len(),
                config.out.display()
            );
            print!("{}", reporting::render_table(&result.aggregates));
            Ok(())
        }
        Command::Report(args) => {
            let table = reporting::report(&args.dirs)?;
            print!("{table}");
            Ok(())
        }
        Command::Gradcheck(args) => {
            let rendered = drawl_cli::gradcheck(args.seed)?;
            print!("{rendered}");
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
