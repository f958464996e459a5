use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seedvec::data::ElemKind;
use seedvec::feature::VectorShape;
use seedvec::plan::{default_policy, CostModel};
use seedvec::report::{
    cmd_analyze, cmd_corpus, cmd_gen, cmd_run, cmd_verify, load_workload, to_csv, CliError, Format,
    InputSource, Kernel,
};

#[derive(Parser)]
#[command(name = "seedvec", version, about = "Vectorize irregular kernels by pattern specialization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Tuning {
    #[arg(long, default_value = "spmv")]
    kernel: Kernel,
    #[arg(long, default_value = "8", value_parser = parse_width)]
    width: VectorShape,
    /// Largest window count a gather is replaced at.
    #[arg(long)]
    threshold: Option<usize>,
    /// Element kind of the data arrays: int64, real64 or real32.
    #[arg(long, default_value = "real64", value_parser = parse_kind)]
    data: ElemKind,
    /// JSON file overriding opcode costs, e.g. {"costs": {"GATHER": 4}}.
    #[arg(long)]
    cost_table: Option<PathBuf>,
}

#[derive(Args)]
struct Input {
    /// A .mtx file, an edge list (pagerank), dense:RxC or random:RxC:K:SEED.
    input: InputSource,
    #[command(flatten)]
    tuning: Tuning,
    /// Vertex count for edge-list input (default: max id + 1).
    #[arg(long)]
    vertices: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Gather, scatter and reduction flag distributions.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "json")]
        format: Format,
    },
    /// Compare the vector plan against the scalar interpreter.
    Verify {
        #[command(flatten)]
        input: Input,
    },
    /// Execute the plan and report checksum, counters and costs.
    Run {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "1")]
        repeat: usize,
    },
    /// Analyze every .mtx file in a directory.
    Corpus {
        dir: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
        #[arg(long, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated matrix in MatrixMarket format.
    Gen {
        /// dense:RxC or random:RxC:K:SEED
        spec: InputSource,
        /// Overrides the seed of a random spec.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_width(s: &str) -> Result<VectorShape, String> {
    let w: usize = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    VectorShape::new(w).map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> Result<ElemKind, String> {
    match s {
        "int64" => Ok(ElemKind::Int64),
        "real64" => Ok(ElemKind::Real64),
        "real32" => Ok(ElemKind::Real32),
        _ => Err(format!("unknown data kind `{s}` (expected int64, real64 or real32)")),
    }
}

fn model(t: &Tuning) -> Result<CostModel, CliError> {
    let mut m = default_policy(t.width);
    if let Some(p) = &t.cost_table {
        let io = |source| CliError::Io {
            path: p.display().to_string(),
            source,
        };
        let text = fs::read_to_string(p).map_err(io)?;
        m.apply_json(&text)
            .map_err(|e| io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    }
    if let Some(th) = t.threshold {
        m = m.with_threshold(th);
    }
    Ok(m)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cmd: Cmd) -> Result<ExitCode, CliError> {
    match cmd {
        Cmd::Analyze { input, format } => {
            let w = load_workload(&input.input, input.tuning.kernel, input.tuning.data, input.vertices)?;
            let r = cmd_analyze(&w, input.tuning.width, &model(&input.tuning)?)?;
            let text = match format {
                Format::Json => r.to_json(),
                Format::Csv => to_csv([&r]),
            };
            emit(input.out.as_deref(), &text)?;
        }
        Cmd::Verify { input } => {
            let w = load_workload(&input.input, input.tuning.kernel, input.tuning.data, input.vertices)?;
            let v = cmd_verify(&w, input.tuning.width, &model(&input.tuning)?)?;
            emit(input.out.as_deref(), &json(&v))?;
            if !v.pass {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Run { input, repeat } => {
            let w = load_workload(&input.input, input.tuning.kernel, input.tuning.data, input.vertices)?;
            let r = cmd_run(&w, input.tuning.width, &model(&input.tuning)?, repeat)?;
            emit(input.out.as_deref(), &json(&r))?;
        }
        Cmd::Corpus {
            dir,
            tuning,
            format,
            out,
        } => {
            let r = cmd_corpus(&dir, tuning.kernel, tuning.data, tuning.width, &model(&tuning)?)?;
            for (path, why) in &r.skipped {
                eprintln!("warning: skipped {path}: {why}");
            }
            let text = match format {
                Format::Json => r.to_json(),
                Format::Csv => to_csv(&r.datasets),
            };
            emit(out.as_deref(), &text)?;
        }
        Cmd::Gen { spec, seed, out } => {
            let spec = match (spec, seed) {
                (InputSource::Random { rows, cols, per_row, .. }, Some(seed)) => InputSource::Random {
                    rows,
                    cols,
                    per_row,
                    seed,
                },
                (s, _) => s,
            };
            emit(out.as_deref(), &cmd_gen(&spec)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
