use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scnn::host::{run_inference, synthetic_inputs, Mode, RunOptions, RunReport};
use scnn::memrd::{write_csv, ConvGeometry};
use scnn::model::flop_count;
use scnn::{bundled, dse, ArchConfig, Error, FpgaSpec, ModelDescriptor, WeightStore};

#[derive(Parser)]
#[command(name = "scnn", version, about = "Systolic CNN accelerator simulator")]
struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run inference and report per-layer cycles.
    Run(RunArgs),
    /// Count a model's floating-point operations.
    Flops { model: String },
    /// Explore vec_fac, pe_num and reuse_fac for a board.
    Dse {
        #[arg(long)]
        fpga: String,
        #[arg(long)]
        model: String,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the IFM load schedule of one conv layer as CSV.
    ScheduleDump {
        #[arg(long)]
        model: String,
        #[arg(long)]
        layer: String,
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an architecture configuration, and optionally a model and board.
    Validate {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        fpga: Option<String>,
    },
}

#[derive(Args, Clone, Copy)]
struct ArchArgs {
    #[arg(long = "pe", default_value_t = 16)]
    pe_num: usize,
    #[arg(long = "vec", default_value_t = 16)]
    vec_fac: usize,
    #[arg(long = "reuse", default_value_t = 4)]
    reuse_fac: usize,
}

impl ArchArgs {
    fn config(self) -> scnn::Result<ArchConfig> {
        ArchConfig::new(self.pe_num, self.vec_fac, self.reuse_fac)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulate,
    ModelOnly,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "arria10")]
    fpga: String,
    /// Weight file; synthetic weights from `--seed` when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Simulate)]
    mode: ModeArg,
}

/// A file path, or the name of a bundled descriptor.
fn read_source(arg: &str, lookup: fn(&str) -> Option<&'static str>) -> scnn::Result<String> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(std::fs::read_to_string(path)?);
    }
    let stem = arg.strip_suffix(".json").unwrap_or(arg);
    lookup(stem)
        .map(str::to_string)
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{arg}: no such file or bundled name")).into())
}

fn load_model(arg: &str) -> scnn::Result<ModelDescriptor> {
    ModelDescriptor::from_json(&read_source(arg, bundled::model)?)
}

fn load_fpga(arg: &str) -> scnn::Result<FpgaSpec> {
    FpgaSpec::from_json(&read_source(arg, bundled::board)?)
}

fn output(path: Option<&Path>) -> scnn::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> scnn::Result<()> {
    let text = serde_json::to_string_pretty(v).expect("report types serialize");
    let mut out = io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

fn print_run(r: &RunReport) -> scnn::Result<()> {
    let mut out = io::stdout().lock();
    let a = r.config.arch;
    writeln!(
        out,
        "model {} on {}, pe_num={} vec_fac={} reuse_fac={}, batch {}",
        r.config.model, r.config.fpga, a.pe_num, a.vec_fac, a.reuse_fac, r.config.batch
    )?;
    writeln!(
        out,
        "{:<20} {:<8} {:>12} {:<14} {:>14} {:>14}",
        "layer", "type", "output", "bound", "modeled", "simulated"
    )?;
    for l in &r.layers {
        let sim = l.simulated.map(|s| s.cycles().to_string()).unwrap_or_else(|| "-".into());
        writeln!(
            out,
            "{:<20} {:<8} {:>12} {:<14} {:>14} {:>14}",
            l.name,
            l.kind,
            l.output_shape.to_string(),
            l.modeled.bound.as_str(),
            l.modeled.cycles(),
            sim
        )?;
    }
    writeln!(out, "modeled latency: {:.4} ms ({} cycles)", r.totals.modeled_seconds * 1e3, r.totals.modeled_cycles)?;
    if let (Some(c), Some(s)) = (r.totals.simulated_cycles, r.totals.simulated_seconds) {
        writeln!(out, "simulated latency: {:.4} ms ({c} cycles)", s * 1e3)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> scnn::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let model = load_model(&args.model)?;
            let fpga = load_fpga(&args.fpga)?;
            let opts = RunOptions {
                mode: match args.mode {
                    ModeArg::Simulate => Mode::Simulate,
                    ModeArg::ModelOnly => Mode::ModelOnly,
                },
                batch: args.batch,
                cfg: args.arch.config()?,
                fpga: &fpga,
                seed: args.seed,
            };
            let weights = match &args.weights {
                Some(p) => WeightStore::load(p, &model)?,
                None if opts.mode == Mode::Simulate => WeightStore::synthetic(&model, args.seed),
                None => WeightStore::new(),
            };
            let inputs = match opts.mode {
                Mode::Simulate => synthetic_inputs(model.input_shape(), args.batch, args.seed),
                Mode::ModelOnly => Vec::new(),
            };
            let report = run_inference(&model, &weights, &inputs, &opts)?;
            if cli.json {
                print_json(&report)
            } else {
                print_run(&report)
            }
        }
        Command::Flops { model } => {
            let m = load_model(&model)?;
            let flops = flop_count(&m);
            if cli.json {
                print_json(&serde_json::json!({ "model": m.name(), "flops": flops, "gflops": flops as f64 / 1e9 }))
            } else {
                writeln!(io::stdout().lock(), "{}: {:.2} GFLOPs", m.name(), flops as f64 / 1e9)?;
                Ok(())
            }
        }
        Command::Dse { fpga, model, out } => {
            let m = load_model(&model)?;
            let f = load_fpga(&fpga)?;
            let x = dse::explore(&m, &f)?;
            if cli.json {
                print_json(&x)?;
                if out.is_none() {
                    return Ok(());
                }
            }
            dse::write_csv(&x, output(out.as_deref())?)?;
            Ok(())
        }
        Command::ScheduleDump { model, layer, arch, out } => {
            let m = load_model(&model)?;
            let cfg = arch.config()?;
            let (i, l) =
                m.layer(&layer).ok_or_else(|| Error::Shape(format!("model `{}` has no layer `{layer}`", m.name())))?;
            let geo = ConvGeometry::new(l, &cfg, m.input_shape_of(i))?;
            write_csv(geo.schedule(), output(out.as_deref())?)?;
            Ok(())
        }
        Command::Validate { arch, model, fpga } => {
            let cfg = arch.config()?;
            let m = model.as_deref().map(load_model).transpose()?;
            let f = fpga.as_deref().map(load_fpga).transpose()?;
            let dsp = f.as_ref().map(|f| scnn::perf::dsp_usage(&cfg, f));
            if let Some(d) = dsp.filter(|d| !d.feasible) {
                return Err(Error::Infeasible(format!(
                    "configuration needs {:.1} DSPs, {:.1}% of the board",
                    d.dsp_used,
                    d.dsp_utilization * 100.0
                )));
            }
            if cli.json {
                print_json(&serde_json::json!({
                    "valid": true,
                    "arch": cfg,
                    "model": m.as_ref().map(|m| m.name()),
                    "dsp": dsp,
                }))
            } else {
                let mut o = io::stdout().lock();
                writeln!(o, "ok: pe_num={} vec_fac={} reuse_fac={}", cfg.pe_num, cfg.vec_fac, cfg.reuse_fac)?;
                if let Some(m) = &m {
                    writeln!(o, "model {}: {} layers", m.name(), m.layers().len())?;
                }
                if let Some(d) = dsp {
                    writeln!(o, "dsp: {:.1} used ({:.1}%)", d.dsp_used, d.dsp_utilization * 100.0)?;
                }
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed stdout is not worth reporting.
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
