//! `sparsedict`: train dictionaries, classify audio, evaluate corpora and
//! generate a synthetic corpus.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 more than 1 % of solver runs hit the iteration limit.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sparsedict::classify::{Classifier, Measure, StreamState};
use sparsedict::config::RunConfig;
use sparsedict::corpus::{
    evaluate, split_corpus, sweep, synth, train, write_report, write_sweep, CorpusSource, SweepRow,
    SWEEP_GRID,
};
use sparsedict::features::{frame_signal, FftSize, FramingConfig};
use sparsedict::store::{load_dictionary, save_dictionary};
use sparsedict::wav::{read_wav, write_wav};
use sparsedict::Error;

/// Share of unconverged solves above which a run counts as a numerical failure.
const MAX_UNCONVERGED: f64 = 0.01;

#[derive(Parser)]
#[command(
    name = "sparsedict",
    version,
    about = "Sparse-dictionary audio source classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn one dictionary per source listed in the config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Where to write the dictionary file.
        #[arg(long)]
        dict: PathBuf,
        /// Overrides learn.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify every frame of a WAV file and print a stream verdict.
    Classify {
        #[arg(long)]
        dict: PathBuf,
        /// Supplies the window type and solver settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Measures to print, repeatable. Default: sdr, nnz and sw.
        #[arg(long, value_enum)]
        measure: Vec<MeasureArg>,
        /// MASDR window P. Overrides classify.window.
        #[arg(long)]
        window: Option<usize>,
        wav: PathBuf,
    },
    /// Train on the config's corpus, classify the held-out test segments
    /// and write report files.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Add the cascade measure to the report.
        #[arg(long, value_enum)]
        measure: Vec<MeasureArg>,
        /// Repeat for each threshold pair of the standard grid.
        #[arg(long)]
        sweep: bool,
    },
    /// Write the six-source synthetic corpus and a config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Length of each source in seconds.
        #[arg(long, default_value_t = 65.0)]
        seconds: f64,
        #[arg(long, default_value_t = 16_000)]
        sample_rate: u32,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    Sdr,
    Nnz,
    Sw,
    Cascade,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Sdr => Measure::Sdr,
            MeasureArg::Nnz => Measure::Nnz,
            MeasureArg::Sw => Measure::Sw,
            MeasureArg::Cascade => Measure::Cascade,
        }
    }
}

enum Failure {
    Sparsedict(Error),
    Unconverged { unconverged: usize, solves: usize },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Sparsedict(e)
    }
}

type Outcome = Result<(), Failure>;

fn io(e: std::io::Error) -> Failure {
    Failure::Sparsedict(Error::Io(e))
}

fn check_convergence(unconverged: usize, solves: usize) -> Outcome {
    if solves > 0 && unconverged as f64 > MAX_UNCONVERGED * solves as f64 {
        return Err(Failure::Unconverged {
            unconverged,
            solves,
        });
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(seed) = seed {
        cfg.learning.rng_seed = seed;
    }
    if cfg.sources.is_empty() {
        return Err(Error::Config(format!(
            "{}: no source.<label> entries",
            path.display()
        )));
    }
    Ok(cfg)
}

fn cmd_train(config: &Path, dict_path: &Path, seed: Option<u64>) -> Outcome {
    let cfg = load_config(config, seed)?;
    let split = split_corpus(&cfg.corpus(), &cfg.framing)?;
    let (dict, learned) = train(&split, &cfg.learning)?;
    let mut out = std::io::stdout().lock();
    for l in &learned {
        let d = &l.dictionary;
        writeln!(
            out,
            "{}\tatoms {}\taccepted {}\tappended {}{}",
            d.label(),
            d.n_atoms(),
            l.accepted,
            l.appended(),
            if l.appended() > 0 { "\tfallback" } else { "" }
        )
        .map_err(io)?;
    }
    save_dictionary(dict_path, &dict)?;
    writeln!(
        out,
        "wrote {} atoms for {} sources to {}",
        dict.total_atoms(),
        dict.source_count(),
        dict_path.display()
    )
    .map_err(io)?;
    Ok(())
}

fn cmd_classify(
    dict_path: &Path,
    config: Option<&Path>,
    measures: &[MeasureArg],
    window: Option<usize>,
    wav: &Path,
) -> Outcome {
    let cfg = match config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let window = window.unwrap_or(cfg.window);
    if window == 0 {
        return Err(Error::Config("--window must be at least 1".into()).into());
    }
    let measures: Vec<Measure> = if measures.is_empty() {
        Measure::FRAME.to_vec()
    } else {
        measures.iter().map(|&m| m.into()).collect()
    };
    let dict = load_dictionary(dict_path)?;
    let signal = read_wav(wav)?;
    let meta = dict.meta().frame;
    if signal.sample_rate() != meta.sample_rate {
        return Err(Error::SampleRateMismatch {
            dictionary: meta.sample_rate,
            input: signal.sample_rate(),
        }
        .into());
    }
    let framing = FramingConfig {
        frame_ms: meta.frame_ms,
        hop_ms: meta.hop_ms,
        window: cfg.framing.window,
        fft_size: FftSize::Fixed(meta.fft_size as usize),
    };
    let hop_s = framing.resolve(meta.sample_rate)?.hop_len as f64 / meta.sample_rate as f64;
    let frames = frame_signal(&signal, &framing)?;

    let m = dict.source_count();
    let labels: Vec<String> = dict.labels().into_iter().map(String::from).collect();
    let classifier =
        Classifier::new(dict, cfg.solver)?.with_cascade(measures.contains(&Measure::Cascade));
    classifier.check_meta(&framing.meta(meta.sample_rate)?)?;
    let scores = classifier.score_all(&frames)?;

    let mut out = std::io::BufWriter::new(std::io::stdout().lock());
    let mut header = vec!["frame".to_string(), "time_s".to_string()];
    header.extend(measures.iter().map(|m| m.name().to_string()));
    header.push("masdr".into());
    writeln!(out, "{}", header.join("\t")).map_err(io)?;

    let mut stream = StreamState::new(m, window)?;
    let (mut solves, mut unconverged) = (0, 0);
    for (t, s) in scores.iter().enumerate() {
        let mut row = vec![t.to_string(), format!("{:.3}", t as f64 * hop_s)];
        match s {
            None => row.extend((0..=measures.len()).map(|_| "unclassifiable".to_string())),
            Some(s) => {
                solves += m + 1;
                unconverged += s.unconverged;
                for &ms in &measures {
                    let pick = match ms {
                        Measure::Cascade => s.cascade.expect("cascade enabled"),
                        other => s.predicted.get(other).expect("frame measure"),
                    };
                    row.push(labels[pick].clone());
                }
                row.push(labels[stream.update(&s.sdr)?].clone());
            }
        }
        writeln!(out, "{}", row.join("\t")).map_err(io)?;
    }
    let verdict = if stream.frames() == 0 {
        "none"
    } else {
        labels[stream.prediction()].as_str()
    };
    writeln!(out, "verdict\t{verdict}").map_err(io)?;
    out.flush().map_err(io)?;
    check_convergence(unconverged, solves)
}

fn cmd_eval(
    config: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    measures: &[MeasureArg],
    do_sweep: bool,
) -> Outcome {
    let cfg = load_config(config, seed)?;
    let split = split_corpus(&cfg.corpus(), &cfg.framing)?;
    let mut stdout = std::io::stdout().lock();
    if do_sweep {
        let results = sweep(&split, &cfg.learning, &cfg.solver, &SWEEP_GRID)?;
        let rows: Vec<SweepRow> = results.iter().map(|(r, _)| *r).collect();
        write_sweep(out_dir, &rows)?;
        let text = std::fs::read_to_string(out_dir.join("sweep.txt")).map_err(io)?;
        write!(stdout, "{text}").map_err(io)?;
        let (u, s) = results
            .iter()
            .fold((0, 0), |(u, s), (_, r)| (u + r.unconverged, s + r.solves));
        return check_convergence(u, s);
    }
    let (dict, _) = train(&split, &cfg.learning)?;
    let classifier =
        Classifier::new(dict, cfg.solver)?.with_cascade(measures.contains(&MeasureArg::Cascade));
    let report = evaluate(&classifier, &split.test_sets(), &split.meta)?;
    write_report(out_dir, &report)?;
    write!(stdout, "{}", report.render_table()).map_err(io)?;
    check_convergence(report.unconverged, report.solves)
}

fn cmd_synth(out_dir: &Path, seed: u64, seconds: f64, sample_rate: u32) -> Outcome {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::File {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut cfg = RunConfig::default();
    cfg.learning.n_atoms = 50;
    cfg.learning.rng_seed = seed;
    for (label, spec) in synth::six_source_set(seconds, seed) {
        let path = out_dir.join(format!("{label}.wav"));
        write_wav(&path, &synth::generate_synthetic(&spec, sample_rate)?)?;
        cfg.sources.push(CorpusSource {
            label,
            paths: vec![path],
        });
    }
    let conf = out_dir.join("corpus.conf");
    std::fs::write(&conf, cfg.to_text(Some(out_dir))).map_err(|source| Error::File {
        path: conf.clone(),
        source,
    })?;
    println!("wrote {} sources and {}", cfg.sources.len(), conf.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Train { config, dict, seed } => cmd_train(config, dict, *seed),
        Command::Classify {
            dict,
            config,
            measure,
            window,
            wav,
        } => cmd_classify(dict, config.as_deref(), measure, *window, wav),
        Command::Eval {
            config,
            out,
            seed,
            measure,
            sweep,
        } => cmd_eval(config, out, *seed, measure, *sweep),
        Command::Synth {
            out,
            seed,
            seconds,
            sample_rate,
        } => cmd_synth(out, *seed, *seconds, *sample_rate),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Sparsedict(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
        Err(Failure::Unconverged {
            unconverged,
            solves,
        }) => {
            eprintln!("error: {unconverged} of {solves} solver runs did not converge");
            ExitCode::from(3)
        }
    }
}
