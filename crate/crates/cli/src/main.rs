use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use varspace::eval::{evaluate, parse_size_range, run_sweep, SweepOptions};
use varspace::subspace::SPEC_GRAMMAR;
use varspace::synth::{build_trials, generate, split_enrollment};
use varspace::{
    detect_turning, modify_batch, Category, EmbeddingFormat, EmbeddingSet, Error, Family, ModifyOptions,
    PopulationConfig, SubspaceSpec, TrialList, TurningConfig, VariabilitySpace,
};

#[derive(Parser)]
#[command(name = "varspace", version, about = "Variability-space analysis and anonymization of speaker embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Csv,
    Binary,
}

impl FormatArg {
    fn input(self) -> Option<EmbeddingFormat> {
        match self {
            FormatArg::Auto => None,
            FormatArg::Csv => Some(EmbeddingFormat::Csv),
            FormatArg::Binary => Some(EmbeddingFormat::Binary),
        }
    }

    /// Explicit choice, or CSV for a `.csv` path and binary otherwise.
    fn output(self, path: &Path) -> EmbeddingFormat {
        self.input().unwrap_or_else(|| {
            let csv = path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if csv {
                EmbeddingFormat::Csv
            } else {
                EmbeddingFormat::Binary
            }
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Primary,
    Secondary,
    Residual,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Primary => Family::Primary,
            FamilyArg::Secondary => Family::Secondary,
            FamilyArg::Residual => Family::Residual,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a variability space to an embedding set.
    Fit {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input encoding; auto detects binary by its magic.
        #[arg(long, value_enum, default_value = "auto")]
        format: FormatArg,
    },
    /// Write the log-eigenvalue spectrum and its differences as CSV.
    Spectrum {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Suggest the turning dimension of a fitted space.
    DetectKnee {
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Remove a subspace from every embedding of a set.
    Modify {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Subspace as [family:]start:size:+|-
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Output encoding; auto picks CSV for a .csv path, binary otherwise.
        #[arg(long, value_enum, default_value = "auto")]
        format: FormatArg,
        /// Project around the space mean instead of the origin.
        #[arg(long)]
        centered: bool,
        /// Rescale each modified vector to its original norm.
        #[arg(long)]
        renormalize: bool,
    },
    /// Score a trial list with cosine similarity and report the pooled EER.
    Eer {
        /// Test embeddings.
        #[arg(long)]
        embeddings: PathBuf,
        /// Enrollment embeddings; defaults to the test set.
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long)]
        trials: PathBuf,
    },
    /// EER as a function of subspace size for one subspace family.
    Sweep {
        #[arg(long)]
        space: PathBuf,
        /// Test embeddings.
        #[arg(long)]
        embeddings: PathBuf,
        /// Enrollment embeddings; defaults to the test set.
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        /// Turning dimension, required by the secondary family.
        #[arg(long = "is")]
        turning: Option<usize>,
        /// Sizes as first:last:step, inclusive.
        #[arg(long)]
        k: String,
        #[arg(long)]
        out: PathBuf,
        /// Leave enrollment embeddings unmodified.
        #[arg(long)]
        clean_enroll: bool,
    },
    /// Generate a synthetic speaker population.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Embeddings file; the test side when --enroll-out is given.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        format: FormatArg,
        /// Also write a trial list over the test side.
        #[arg(long)]
        trials: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        nontarget: usize,
        /// Write each speaker's first utterances here as the enrollment side.
        #[arg(long, requires = "enroll_utts")]
        enroll_out: Option<PathBuf>,
        #[arg(long, requires = "enroll_out")]
        enroll_utts: Option<usize>,
    },
}

fn exit_code(category: Category) -> u8 {
    match category {
        Category::Validation | Category::Data | Category::Format => 1,
        Category::Numerical => 2,
        Category::Io => 3,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet, Error> {
    EmbeddingSet::load(path, None)
}

fn list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn run(command: Command, out: &mut impl Write) -> Result<(), Error> {
    let mut say = |line: String| {
        let _ = writeln!(out, "{line}");
    };
    match command {
        Command::Fit {
            embeddings,
            out,
            format,
        } => {
            let set = EmbeddingSet::load(&embeddings, format.input())?;
            let space = VariabilitySpace::fit(&set)?;
            space.save(&out)?;
            let l = space.eigenvalues();
            let d = l.len();
            say(format!("D={d} N={}", set.len()));
            say(format!("top={}", list(&l[..d.min(5)])));
            say(format!("bottom={}", list(&l[d.saturating_sub(5)..])));
        }
        Command::Spectrum { space, out } => {
            let space = VariabilitySpace::load(&space)?;
            write_file(&out, &space.spectrum_csv()?)?;
            say(format!("rows={}", space.dim()));
        }
        Command::DetectKnee {
            space,
            window,
            tolerance,
        } => {
            let space = VariabilitySpace::load(&space)?;
            let knee = detect_turning(
                &space.delta_spectrum()?,
                TurningConfig {
                    window,
                    oscillation_tol: tolerance,
                },
            )?;
            say(format!(
                "turning={} strength={} monotone_start={}",
                knee.dimension, knee.strength, knee.monotone_start
            ));
        }
        Command::Modify {
            space,
            embeddings,
            spec,
            out,
            format,
            centered,
            renormalize,
        } => {
            let spec: SubspaceSpec = spec
                .parse()
                .map_err(|e| Error::Invalid(format!("{e} (expected {SPEC_GRAMMAR})")))?;
            let space = VariabilitySpace::load(&space)?;
            let set = load_embeddings(&embeddings)?;
            let options = ModifyOptions {
                centered,
                renormalize,
            };
            let (modified, reports) = modify_batch(&space, &set, &spec, options)?;
            modified.save(&out, format.output(&out))?;
            let mean = if reports.is_empty() {
                0.0
            } else {
                reports.iter().map(|r| r.removed_energy).sum::<f64>() / reports.len() as f64
            };
            say(format!("records={} spec={spec} mean_removed_energy={mean}", modified.len()));
        }
        Command::Eer {
            embeddings,
            enroll,
            trials,
        } => {
            let test = load_embeddings(&embeddings)?;
            let enroll = match enroll {
                Some(p) => load_embeddings(&p)?,
                None => test.clone(),
            };
            let trials = TrialList::load(&trials)?;
            let r = evaluate(&enroll, &test, &trials)?;
            say(format!(
                "eer_percent={} threshold={} n_target={} n_nontarget={}",
                r.eer_percent, r.threshold, r.n_target, r.n_nontarget
            ));
        }
        Command::Sweep {
            space,
            embeddings,
            enroll,
            trials,
            family,
            turning,
            k,
            out,
            clean_enroll,
        } => {
            let sizes = parse_size_range(&k)?;
            if matches!(family, FamilyArg::Secondary) && turning.is_none() {
                return Err(Error::Invalid("--family secondary needs --is <turning dimension>".into()));
            }
            let space = VariabilitySpace::load(&space)?;
            let test = load_embeddings(&embeddings)?;
            let enroll = match enroll {
                Some(p) => load_embeddings(&p)?,
                None => test.clone(),
            };
            let trials = TrialList::load(&trials)?;
            let options = SweepOptions {
                clean_enroll,
                modify: ModifyOptions::default(),
            };
            let result = run_sweep(&space, &enroll, &test, &trials, family.into(), turning, &sizes, options)?;
            write_file(&out, &result.to_csv())?;
            say(format!("rows={}", result.rows.len()));
        }
        Command::Synth {
            config,
            out,
            format,
            trials,
            nontarget,
            enroll_out,
            enroll_utts,
        } => {
            let config = PopulationConfig::load(&config)?;
            let set = generate(&config)?;
            let test = match (enroll_out, enroll_utts) {
                (Some(path), Some(per_speaker)) => {
                    let (enroll, test) = split_enrollment(&set, per_speaker)?;
                    enroll.save(&path, format.output(&path))?;
                    say(format!("enroll_records={}", enroll.len()));
                    test
                }
                _ => set,
            };
            if let Some(path) = trials {
                build_trials(&test, nontarget, config.seed)?.save(&path)?;
            }
            test.save(&out, format.output(&out))?;
            say(format!(
                "speakers={} utterances_per_speaker={} records={}",
                config.n_speakers,
                config.utts_per_speaker,
                test.len()
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error:usage: {}", first.trim_start_matches("error: "));
            eprint!("{text}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("error:{category}: {e}");
            ExitCode::from(exit_code(category))
        }
    }
}
