use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use defunc_core::check::{check_entry, CheckConfig, EntryReport, Status};
use defunc_core::corpus::{corpus_dir, load_corpus, load_entry, CorpusEntry};
use defunc_core::defunc::defunctionalize_program;
use defunc_core::emit::{emit, Dialect, EmitConfig};
use defunc_core::parser::parse_with_warnings;
use defunc_core::typecheck::typecheck;
use defunc_core::{Diagnostic, Error};

/// Defunctionalize contract-annotated higher-order programs.
///
/// Exit status: 0 on success, 1 on diagnostics or failed checks, 2 when the
/// transform breaks one of its own invariants.
#[derive(Parser)]
#[command(name = "defunc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the first-order version of a program.
    Transform(Output),
    /// Parse, typecheck and print a program unchanged.
    Emit(Output),
    /// Run the dynamic checks on corpus entries.
    Check(CheckArgs),
}

#[derive(Args)]
struct Output {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DialectArg::Plain)]
    dialect: DialectArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum DialectArg {
    Plain,
    Whyml,
}

#[derive(Args)]
struct CheckArgs {
    /// Corpus entry directory, entry name, or `source.hof` inside an entry.
    /// All entries of the corpus when omitted.
    input: Option<PathBuf>,
    /// Check this first-order program instead of the generated one.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    runs: Option<u64>,
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    lemma_samples: Option<usize>,
    #[arg(long, default_value_t = 10_000_000)]
    fuel: u64,
    /// Stop an entry at its first failing run.
    #[arg(long)]
    strict: bool,
    /// Print the target's apply trace of the first failing (or first) run.
    #[arg(long)]
    trace: bool,
}

/// A user-level failure (exit 1) or an internal one (exit 2).
enum Failure {
    User,
    Internal,
}

type Outcome = Result<(), Failure>;

fn report_diagnostics(path: &Path, ds: &[Diagnostic]) {
    for d in ds {
        let sep = if d.span.is_synthetic() { " " } else { "" };
        eprintln!("{}:{sep}{d}", path.display());
    }
}

fn report_error(path: &Path, e: &Error) -> Failure {
    match e {
        Error::Diagnostics(ds) => {
            report_diagnostics(path, ds);
            Failure::User
        }
        Error::Internal(m) => {
            eprintln!("{}: internal error: {m}", path.display());
            Failure::Internal
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: error: cannot read: {e}", path.display());
        Failure::User
    })
}

fn write_out(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| {
            eprintln!("{}: error: cannot write: {e}", p.display());
            Failure::User
        }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|_| Failure::User)
        }
    }
}

fn emit_config(d: DialectArg) -> EmitConfig {
    match d {
        DialectArg::Plain => EmitConfig::default(),
        DialectArg::Whyml => EmitConfig {
            dialect: Dialect::WhyMl,
            ..EmitConfig::default()
        },
    }
}

fn parse_file(path: &Path) -> Result<defunc_core::Program, Failure> {
    let text = read(path)?;
    match parse_with_warnings(&text) {
        Ok((p, warnings)) => {
            report_diagnostics(path, &warnings);
            Ok(p)
        }
        Err(ds) => {
            report_diagnostics(path, &ds);
            Err(Failure::User)
        }
    }
}

fn transform(o: &Output) -> Outcome {
    let p = parse_file(&o.input)?;
    let (_, d) = defunctionalize_program(p).map_err(|e| report_error(&o.input, &e))?;
    report_diagnostics(&o.input, &d.warnings);
    write_out(
        o.output.as_deref(),
        &emit(&d.program, &emit_config(o.dialect)),
    )
}

fn emit_only(o: &Output) -> Outcome {
    let p = parse_file(&o.input)?;
    let tp = typecheck(p).map_err(|e| report_error(&o.input, &e))?;
    write_out(
        o.output.as_deref(),
        &emit(tp.program(), &emit_config(o.dialect)),
    )
}

fn entries(input: Option<&Path>) -> Result<Vec<CorpusEntry>, Failure> {
    let fail = |e: defunc_core::corpus::CorpusError| {
        eprintln!("error: {e}");
        Failure::User
    };
    let Some(input) = input else {
        return load_corpus(&corpus_dir()).map_err(fail);
    };
    let dir = if input.is_file() {
        input.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else if input.is_dir() {
        input.to_path_buf()
    } else {
        corpus_dir().join(input)
    };
    if !dir.join("meta.cfg").is_file() {
        eprintln!(
            "{}: error: not a corpus entry (no meta.cfg); check needs an entry point, generator and oracle",
            input.display()
        );
        return Err(Failure::User);
    }
    Ok(vec![load_entry(&dir).map_err(fail)?])
}

fn summary(r: &EntryReport) -> String {
    let count = |s: Status| r.lines.iter().filter(|l| l.status == s).count();
    let verdict = if r.passed() { "ok" } else { "FAILED" };
    let mut s = format!(
        "{}: {verdict} ({} runs, {} checks",
        r.entry,
        r.runs,
        r.lines.len()
    );
    for (st, what) in [
        (Status::Fail, "failed"),
        (Status::Sampled, "sampled only"),
        (Status::Inconclusive, "inconclusive"),
    ] {
        if count(st) > 0 {
            s.push_str(&format!(", {} {what}", count(st)));
        }
    }
    s.push(')');
    s
}

fn check(a: &CheckArgs) -> Outcome {
    let entries = entries(a.input.as_deref())?;
    let target = match &a.target {
        Some(p) if entries.len() != 1 => {
            eprintln!(
                "{}: error: --target needs a single corpus entry",
                p.display()
            );
            return Err(Failure::User);
        }
        Some(p) => Some(read(p)?),
        None => None,
    };
    let cfg = CheckConfig {
        runs: a.runs.map(|n| n as usize),
        max_size: a.max_size,
        seed: a.seed,
        lemma_samples: a.lemma_samples,
        fuel: a.fuel,
        strict: a.strict,
        trace: a.trace,
        ..CheckConfig::default()
    };
    let mut report = String::new();
    let (mut failed, mut internal) = (false, false);
    for e in &entries {
        let r = check_entry(e, target.as_deref(), &cfg);
        for l in &r.lines {
            report.push_str(&format!("{l}\n"));
        }
        if a.trace {
            for t in &r.trace {
                eprintln!("trace\t{}\t{t}", r.entry);
            }
        }
        eprintln!("{}", summary(&r));
        failed |= !r.passed();
        internal |= r.internal;
    }
    write_out(a.output.as_deref(), &report)?;
    match (internal, failed) {
        (true, _) => Err(Failure::Internal),
        (_, true) => Err(Failure::User),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are user-level failures; 2 is kept for internal ones.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let r = match &cli.cmd {
        Cmd::Transform(o) => transform(o),
        Cmd::Emit(o) => emit_only(o),
        Cmd::Check(a) => check(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User) => ExitCode::from(1),
        Err(Failure::Internal) => ExitCode::from(2),
    }
}
