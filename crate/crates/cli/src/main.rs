use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use fogbench::adapter::serve;
use fogbench::config::{ConfigFile, Mode, RunConfig};
use fogbench::metrics::ProbeLog;
use fogbench::runner::{self, RunOptions};

#[derive(Parser)]
#[command(name = "fogbench", version, about = "Fog data-processing benchmark harness")]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a configuration and print derived rates and feasibility warnings.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run one experiment and write report.json and samples.csv.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write trace.csv with one line per simulation event.
        #[arg(long)]
        trace: bool,
        /// Cross-check results against the oracle and fail on any violated invariant.
        #[arg(long)]
        verify: bool,
        /// Reach the reference store over the wire protocol on a loopback socket.
        #[arg(long)]
        loopback: bool,
        /// SUT endpoint for external mode.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Export sensor readings and queries as NDJSON.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the minimal edge resource scale that keeps the edge stable.
    SloSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.25)]
        lo: f64,
        #[arg(long, default_value_t = 4.0)]
        hi: f64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Find the request rate that drives the cloud to a target utilization.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.8)]
        target: f64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        /// Highest per-client request rate tried, in Hz.
        #[arg(long, default_value_t = 1000.0)]
        ceiling: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Serve the reference store over the wire protocol.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration; built-in defaults if absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Factor applied to the number of sensors per site.
    #[arg(long)]
    scale_sensors: Option<f64>,
    #[command(flatten)]
    workload: WorkloadArgs,
}

#[derive(Args, Clone, Default)]
struct WorkloadArgs {
    #[arg(long)]
    n_sensors: Option<u32>,
    #[arg(long)]
    buffer_size: Option<u32>,
    #[arg(long)]
    n_agg: Option<u32>,
    #[arg(long)]
    quorum_ratio: Option<f64>,
    #[arg(long)]
    resolution_bits: Option<u32>,
    #[arg(long)]
    resolution_channels: Option<u32>,
    #[arg(long)]
    sampling_rate_hz: Option<f64>,
    #[arg(long)]
    exceed_prob: Option<f64>,
    #[arg(long)]
    lstm_window_s: Option<f64>,
    #[arg(long)]
    q_recent: Option<f64>,
    #[arg(long)]
    q_random: Option<f64>,
    #[arg(long)]
    q_scan: Option<f64>,
    #[arg(long)]
    n_clients: Option<u32>,
    #[arg(long)]
    request_rate_hz: Option<f64>,
    #[arg(long)]
    stale_threshold_s: Option<f64>,
    #[arg(long)]
    n_cloud: Option<u32>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: fogbench::ConfigError| e.to_string())
}

impl Common {
    fn source(&self) -> Result<String> {
        match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(String::new()),
        }
    }

    fn file(&self) -> Result<ConfigFile> {
        let mut f = ConfigFile::parse(&self.source()?)?;
        if let Some(s) = self.seed {
            f.run.seed = s;
        }
        if let Some(d) = self.duration {
            f.run.duration_s = d;
        }
        if let Some(s) = self.scale_sensors {
            f.run.scale_sensors = s;
        }
        let w = &self.workload;
        let wl = &mut f.workload;
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = w.$field { wl.$field = v; } )* };
        }
        set!(
            n_sensors,
            buffer_size,
            n_agg,
            quorum_ratio,
            resolution_bits,
            resolution_channels,
            sampling_rate_hz,
            exceed_prob,
            lstm_window_s,
            q_recent,
            q_random,
            q_scan,
            n_clients,
            request_rate_hz,
            stale_threshold_s,
            n_cloud
        );
        Ok(f)
    }

    fn resolve(&self) -> Result<RunConfig> {
        Ok(self.file()?.resolve()?)
    }
}

fn print_validation(cfg: &RunConfig, json: bool) -> Result<()> {
    let v = runner::validate(cfg)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    let r = &v.rates;
    println!("config hash            {}", v.config_hash);
    println!("sites                  {}", cfg.topology.sites.len());
    println!("sensors per site       {}", cfg.workload.n_sensors);
    println!("raw rate per sensor    {:.1} bit/s", r.sensor_raw_bps);
    println!("quorum threshold       {}", r.quorum_threshold);
    println!("trigger probability    {:.7}", r.quorum_probability);
    println!("sensor to gateway      {:.1} bit/s per sensor", r.mean_sensor_gateway_bps);
    println!("edge ingress           {:.1} bit/s per site", r.edge_ingress_bps);
    println!("aggregates per site    {:.1} /s", r.aggregate_rate_per_site);
    println!("collections per site   {:.4} /s", r.collection_rate_per_site);
    println!("store inserts          {:.1} /s", r.total_insert_rate);
    println!("queries                {:.1} /s", r.query_rate);
    for w in &v.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn print_summary(report: &fogbench::metrics::MetricsReport) {
    println!("config hash   {}", report.config_hash);
    for (name, s) in &report.latency {
        println!(
            "{name:<28} n={:<8} p50={:.3} ms p99={:.3} ms",
            s.count,
            s.p50_ns as f64 / 1e6,
            s.p99_ns as f64 / 1e6
        );
    }
    match report.staleness.ratio {
        Some(r) => println!("staleness     {:.4} of {} recent reads", r, report.staleness.recent_queries),
        None => println!("staleness     no recent reads checked"),
    }
    for (name, b) in &report.bandwidth {
        println!("{name:<14} {:.1} bit/s per link offered", b.mean_payload_bps);
    }
    println!(
        "edge          {} (queue {:.3} -> {:.3}, drops {})",
        if report.edge_stability.stable { "stable" } else { "unstable" },
        report.edge_stability.first_half_queue,
        report.edge_stability.second_half_queue,
        report.edge_stability.drops
    );
    println!("cloud util    {:.4}", report.cloud_utilization);
}

/// Exit status when `--verify` finds a problem.
const EXIT_VERIFY: u8 = 3;

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { common, json } => {
            print_validation(&common.resolve()?, json)?;
        }
        Command::Run {
            common,
            mode,
            out,
            trace,
            verify,
            loopback,
            endpoint,
        } => {
            let mut f = common.file()?;
            if let Some(m) = mode {
                f.run.mode = m;
            }
            if let Some(e) = endpoint {
                f.run.sut.endpoint = e;
            }
            f.run.verify |= verify;
            f.run.trace |= trace;
            let cfg = f.resolve()?;
            if loopback && cfg.run.mode != Mode::Sim {
                anyhow::bail!("--loopback applies to simulation mode only");
            }
            fs::create_dir_all(&out)?;
            let trace_sink: Option<Box<dyn Write + Send>> = if cfg.run.trace {
                Some(Box::new(BufWriter::new(File::create(out.join("trace.csv"))?)))
            } else {
                None
            };
            let output = runner::run(
                &cfg,
                RunOptions {
                    loopback,
                    trace: trace_sink,
                },
            )?;
            runner::write_outputs(&out, &output)?;
            print_summary(&output.report);
            println!("wrote {}", out.join("report.json").display());
            if let Some(v) = &output.report.verify {
                if !v.passed {
                    for f in &v.failures {
                        eprintln!("verify: {f}");
                    }
                    eprintln!("verify: {} of {} queries mismatched", v.mismatched_queries, v.checked_queries);
                    return Ok(ExitCode::from(EXIT_VERIFY));
                }
                println!("verify passed ({} queries checked)", v.checked_queries);
            }
        }
        Command::Generate { common, out } => {
            let cfg = common.resolve()?;
            let summary = match out {
                Some(p) => runner::generate(&cfg, &mut BufWriter::new(File::create(&p)?))?,
                None => runner::generate(&cfg, &mut BufWriter::new(std::io::stdout().lock()))?,
            };
            eprintln!("{} readings, {} queries", summary.readings, summary.queries);
        }
        Command::SloSearch {
            common,
            lo,
            hi,
            tol,
            out,
        } => {
            let cfg = common.resolve()?;
            fs::create_dir_all(&out)?;
            let hash = cfg.config_hash();
            let log_path = out.join(format!("probes-{}.jsonl", &hash[..12]));
            let mut log = ProbeLog::open(&log_path)?;
            let outcome = runner::search_min_scale(&cfg, lo, hi, tol, &mut log)?;
            write_json(&out.join("slo.json"), &outcome)?;
            println!(
                "minimal stable edge scale {} ({} probes, {} executed, bound {})",
                outcome.min_scale,
                outcome.probes.len(),
                outcome.executed,
                outcome.probe_bound
            );
        }
        Command::Calibrate {
            common,
            target,
            tol,
            ceiling,
            out,
        } => {
            let cfg = common.resolve()?;
            let cal = runner::calibrate(&cfg, target, tol, ceiling)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("calibration.json"), &cal)?;
            let derived = runner::with_request_rate(&common.source()?, cal.rate)?;
            let path = out.join("calibrated.toml");
            fs::write(&path, derived)?;
            println!(
                "request_rate_hz = {} gives cloud utilization {:.4}; wrote {}",
                cal.rate,
                cal.utilization,
                path.display()
            );
        }
        Command::Serve { common, listen } => {
            let cfg = common.resolve()?;
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            println!("serving reference store on {}", listener.local_addr()?);
            info!("config hash {}", cfg.config_hash());
            serve(listener, Arc::new(Mutex::new(runner::reference_store(&cfg))));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
