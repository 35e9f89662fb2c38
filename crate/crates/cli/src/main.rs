//! `latlin`: multiply and reduce binary numbers on self-stabilizing node trees.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use latlin::engine::{run_concurrent, trace_export};
use latlin::modseq::{build_dfa_closed, build_dfa_loop, division_modulo_with, DFA_DENSE_LIMIT};
use latlin::{
    arbitrary_init, division_modulo, seq_karatsuba, zero_init, Bitstring, GlobalState,
    KaratsubaProgram, ModBackendKind, ModuloProgram, NodeProgram, OpCounter, RunReport, Runner,
    Scheduler,
};

/// Parse errors and invalid operands.
const EXIT_USAGE: u8 = 2;
/// Output file could not be written.
const EXIT_OUTPUT: u8 = 3;
/// The run ended without converging.
const EXIT_NOT_CONVERGED: u8 = 1;

#[derive(Parser)]
#[command(name = "latlin", version, about = "Lattice-linear multiplication and modulo trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiply two binary numbers on the Karatsuba tree.
    Mul {
        n: String,
        m: String,
        /// Skip the tree and run sequential Karatsuba.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reduce `n mod m` on the modulo tree.
    Mod {
        n: String,
        m: String,
        /// Skip the tree and run long division (or the automaton with --backend dfa).
        #[arg(long)]
        sequential: bool,
        #[arg(long, value_enum, default_value = "div")]
        backend: Backend,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a tree and write its trace (to --trace, or stdout).
    Simulate {
        #[arg(long, value_enum, default_value = "mul")]
        problem: Problem,
        n: String,
        m: String,
        #[arg(long, value_enum, default_value = "div")]
        backend: Backend,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Dump the divisibility automaton for a decimal modulus.
    Dfa {
        m: u64,
        /// Compare the state-order builder with the closed form for every modulus up to `m`.
        #[arg(long)]
        check: bool,
    },
    /// Emit operation-counter records for the modulo backends.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        n_bits: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "8,16")]
        m_bits: Vec<usize>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "div,dfa,tables")]
        backend: Vec<Backend>,
        #[arg(long, env = "LATLIN_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "sync")]
    scheduler: SchedulerArg,
    #[arg(long, env = "LATLIN_SEED", default_value_t = 0)]
    seed: u64,
    /// Staleness bound B for the stale scheduler, in versions.
    #[arg(long, default_value_t = 8)]
    staleness: u32,
    /// Fairness window F in activations (default: twice the node count).
    #[arg(long)]
    fairness: Option<u64>,
    #[arg(long, default_value_t = 100_000_000)]
    max_steps: u64,
    #[arg(long, value_enum, default_value = "zero")]
    init: InitArg,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Run on this many OS threads instead of a simulated scheduler.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerArg {
    Sync,
    Random,
    Stale,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Zero,
    Arbitrary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Mul,
    Mod,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Div,
    Dfa,
    Tables,
}

impl From<Backend> for ModBackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Div => ModBackendKind::LongDivision,
            Backend::Dfa => ModBackendKind::Dfa,
            Backend::Tables => ModBackendKind::Tables,
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure { code: EXIT_USAGE, message: message.to_string() }
}

fn output(path: &std::path::Path, e: io::Error) -> Failure {
    Failure { code: EXIT_OUTPUT, message: format!("cannot write {}: {e}", path.display()) }
}

impl RunArgs {
    fn scheduler(&self) -> Scheduler {
        let s = match self.scheduler {
            SchedulerArg::Sync => Scheduler::synchronous(),
            SchedulerArg::Random => Scheduler::random_serial(self.seed),
            SchedulerArg::Stale => Scheduler::stale_read(self.seed, self.staleness),
        };
        match self.fairness {
            Some(f) => s.with_fairness_window(f),
            None => s,
        }
    }

    fn init<P: NodeProgram>(&self, program: &P) -> GlobalState<P::State> {
        match self.init {
            InitArg::Zero => zero_init(program),
            InitArg::Arbitrary => arbitrary_init(program, self.seed),
        }
    }
}

fn parse_operand(text: &str, what: &str) -> Result<Bitstring, Failure> {
    text.parse().map_err(|e| usage(format!("{what}: {e}")))
}

/// Outcome of a tree run, reduced to what the commands print.
struct Outcome<S> {
    final_state: GlobalState<S>,
    converged: bool,
    summary: String,
}

fn execute<P: NodeProgram>(
    program: &P,
    args: &RunArgs,
    trace_sink: Option<&mut dyn Write>,
) -> Result<Outcome<P::State>, Failure> {
    let init = args.init(program);
    if let Some(threads) = args.threads {
        let report = run_concurrent(program, init, threads, args.max_steps).map_err(usage)?;
        let summary = format!(
            "converged={} activations={} firings={} threads={threads}",
            report.converged, report.activations, report.firings
        );
        return Ok(Outcome { final_state: report.final_state, converged: report.converged, summary });
    }
    // open the trace file before running so a bad path fails fast
    let mut file = match &args.trace {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(|e| output(path, e))?)),
        None => None,
    };
    let report: RunReport<P::State> = Runner::new(program, args.scheduler())
        .max_steps(args.max_steps)
        .record_trace(trace_sink.is_some() || file.is_some())
        .run(init)
        .map_err(usage)?;
    if let Some(trace) = &report.trace {
        if let (Some(w), Some(path)) = (file.as_mut(), &args.trace) {
            trace_export(program, trace, w)
                .and_then(|_| w.flush())
                .map_err(|e| output(path, e))?;
        } else if let Some(sink) = trace_sink {
            trace_export(program, trace, sink).map_err(stdout_failure)?;
        }
    }
    let summary = format!(
        "converged={} steps={} rounds={} max_staleness={}",
        report.converged, report.steps, report.rounds, report.max_staleness
    );
    Ok(Outcome { final_state: report.final_state, converged: report.converged, summary })
}

fn print_number(out: &mut impl Write, x: &Bitstring) -> io::Result<()> {
    writeln!(out, "{}", x.trimmed())?;
    writeln!(out, "decimal={}", x.to_decimal_string())
}

fn finish(converged: bool) -> Result<(), Failure> {
    if converged {
        Ok(())
    } else {
        Err(Failure { code: EXIT_NOT_CONVERGED, message: "step budget exhausted before convergence".into() })
    }
}

fn cmd_mul(n: &str, m: &str, sequential: bool, args: &RunArgs, out: &mut impl Write) -> Result<(), Failure> {
    let (n, m) = (parse_operand(n, "n")?, parse_operand(m, "m")?);
    if sequential {
        print_number(out, &seq_karatsuba(&n, &m)).map_err(stdout_failure)?;
        return Ok(());
    }
    let program = KaratsubaProgram::new(&n, &m);
    let outcome = execute(&program, args, None)?;
    print_number(out, &program.product(&outcome.final_state)).map_err(stdout_failure)?;
    writeln!(out, "nodes={} {}", program.node_count(), outcome.summary).map_err(stdout_failure)?;
    finish(outcome.converged)
}

fn cmd_mod(
    n: &str,
    m: &str,
    sequential: bool,
    backend: Backend,
    args: &RunArgs,
    out: &mut impl Write,
) -> Result<(), Failure> {
    let (n, m) = (parse_operand(n, "n")?, parse_operand(m, "m")?);
    if m.is_zero() {
        return Err(usage("modulus must be at least 1"));
    }
    if sequential {
        let ops = OpCounter::new();
        let r = match (backend, m.to_u64()) {
            (Backend::Dfa, Some(v)) => {
                let dfa = build_dfa_closed(v).map_err(usage)?;
                Bitstring::from_u64(latlin::modseq::dfa_run_with(&dfa, &n, Some(&ops)), m.len())
            }
            _ => division_modulo_with(&n, &m, Some(&ops)).map_err(usage)?,
        };
        print_number(out, &r).map_err(stdout_failure)?;
        writeln!(out, "bit_ops={} subtractions={}", ops.bit_ops(), ops.subtractions())
            .map_err(stdout_failure)?;
        return Ok(());
    }
    let program = ModuloProgram::new(&n, &m, backend.into()).map_err(usage)?;
    let outcome = execute(&program, args, None)?;
    print_number(out, &program.result(&outcome.final_state)).map_err(stdout_failure)?;
    let counts = program.backend().counts();
    writeln!(
        out,
        "nodes={} {} bit_ops={} subtractions={}",
        program.node_count(),
        outcome.summary,
        counts.bit_ops,
        counts.subtractions
    )
    .map_err(stdout_failure)?;
    finish(outcome.converged)
}

fn cmd_simulate(
    problem: Problem,
    n: &str,
    m: &str,
    backend: Backend,
    args: &RunArgs,
    out: &mut impl Write,
) -> Result<(), Failure> {
    if args.threads.is_some() {
        return Err(usage("simulate records a trace and cannot use --threads"));
    }
    let (n, m) = (parse_operand(n, "n")?, parse_operand(m, "m")?);
    let converged = match problem {
        Problem::Mul => {
            let program = KaratsubaProgram::new(&n, &m);
            simulate_one(&program, args, out)?
        }
        Problem::Mod => {
            if m.is_zero() {
                return Err(usage("modulus must be at least 1"));
            }
            let program = ModuloProgram::new(&n, &m, backend.into()).map_err(usage)?;
            simulate_one(&program, args, out)?
        }
    };
    finish(converged)
}

fn simulate_one<P: NodeProgram>(program: &P, args: &RunArgs, out: &mut impl Write) -> Result<bool, Failure> {
    let outcome = if args.trace.is_some() {
        let o = execute(program, args, None)?;
        writeln!(out, "{}", o.summary).map_err(stdout_failure)?;
        o
    } else {
        // the trace is the output; the summary goes to stderr
        let o = execute(program, args, Some(out))?;
        eprintln!("{}", o.summary);
        o
    };
    Ok(outcome.converged)
}

fn cmd_dfa(m: u64, check: bool, out: &mut impl Write) -> Result<(), Failure> {
    if m == 0 || m > DFA_DENSE_LIMIT {
        return Err(usage(format!("modulus must be in 1..={DFA_DENSE_LIMIT}")));
    }
    if check {
        let bad = (1..=m).find(|&k| build_dfa_loop(k).ok() != build_dfa_closed(k).ok());
        match bad {
            None => writeln!(out, "agree"),
            Some(k) => writeln!(out, "disagree m={k}"),
        }
        .map_err(stdout_failure)?;
        return match bad {
            None => Ok(()),
            Some(_) => Err(Failure { code: 1, message: "builders disagree".into() }),
        };
    }
    let dfa = build_dfa_loop(m).map_err(usage)?;
    out.write_all(dfa.dump().as_bytes()).map_err(stdout_failure)
}

fn cmd_bench(
    n_bits: &[usize],
    m_bits: &[usize],
    backends: &[Backend],
    seed: u64,
    out: &mut impl Write,
) -> Result<(), Failure> {
    for &mb in m_bits {
        if mb == 0 || mb > 64 {
            return Err(usage("--m-bits values must be in 1..=64"));
        }
    }
    for &nb in n_bits {
        for &mb in m_bits {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((nb as u64) << 32) ^ mb as u64);
            let n = Bitstring::random(nb.max(1), &mut rng);
            let m = match mb {
                1 => Bitstring::one(),
                _ => Bitstring::one().shl(mb - 1).add(&Bitstring::random(mb - 1, &mut rng)).trimmed(),
            };
            // sequential long division as the baseline record
            let ops = OpCounter::new();
            division_modulo_with(&n, &m, Some(&ops)).map_err(usage)?;
            writeln!(
                out,
                "n_bits={nb}\tm_bits={mb}\tbackend=sequential-div\tbit_ops={}\tsubtractions={}\tsteps=0\trounds=0",
                ops.bit_ops(),
                ops.subtractions()
            )
            .map_err(stdout_failure)?;
            for &b in backends {
                let kind: ModBackendKind = b.into();
                let program = ModuloProgram::new(&n, &m, kind).map_err(usage)?;
                let report = Runner::new(&program, Scheduler::synchronous())
                    .record_trace(false)
                    .run(zero_init(&program))
                    .map_err(usage)?;
                debug_assert!(report.converged);
                let expect = division_modulo(&n, &m).map_err(usage)?;
                if !program.result(&report.final_state).value_eq(&expect) {
                    return Err(Failure { code: 1, message: format!("{} backend gave a wrong residue", kind.name()) });
                }
                let counts = program.backend().counts();
                writeln!(
                    out,
                    "n_bits={nb}\tm_bits={mb}\tbackend={}\tbit_ops={}\tsubtractions={}\tsteps={}\trounds={}",
                    kind.name(),
                    counts.bit_ops,
                    counts.subtractions,
                    report.steps,
                    report.rounds
                )
                .map_err(stdout_failure)?;
            }
        }
    }
    Ok(())
}

fn stdout_failure(e: io::Error) -> Failure {
    Failure { code: EXIT_OUTPUT, message: format!("cannot write output: {e}") }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = match &cli.command {
        Command::Mul { n, m, sequential, run } => cmd_mul(n, m, *sequential, run, &mut out),
        Command::Mod { n, m, sequential, backend, run } => {
            cmd_mod(n, m, *sequential, *backend, run, &mut out)
        }
        Command::Simulate { problem, n, m, backend, run } => {
            cmd_simulate(*problem, n, m, *backend, run, &mut out)
        }
        Command::Dfa { m, check } => cmd_dfa(*m, *check, &mut out),
        Command::Bench { n_bits, m_bits, backend, seed } => {
            cmd_bench(n_bits, m_bits, backend, *seed, &mut out)
        }
    };
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
        (Ok(()), Err(e)) => {
            eprintln!("latlin: cannot write output: {e}");
            ExitCode::from(EXIT_OUTPUT)
        }
        (Err(f), _) => {
            eprintln!("latlin: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
