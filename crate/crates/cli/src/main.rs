use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sgq_client::api::*;
use sgq_client::Client;
use sgq_core::executor::Threading;
use sgq_core::io::SyntheticStreamSpec;
use sgq_core::oracle::Instants;
use sgq_core::query::WindowSpec;

/// Persistent regular path queries over streaming graphs.
#[derive(Parser)]
#[command(name = "sgq", version)]
struct Cli {
    /// Talk to a running server instead of starting one in-process.
    #[arg(long, global = true, value_name = "URL")]
    server: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a query over an edge stream.
    Run {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "one")]
        threads: Threads,
    },
    /// Print the canonical plan and its rewrites.
    Plan {
        #[arg(long)]
        query: PathBuf,
        /// Rewrite budget.
        #[arg(long, default_value_t = 0)]
        rewrites: usize,
        #[command(flatten)]
        window: WindowArgs,
    },
    /// Compare the engine against from-scratch evaluation.
    Check {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_enum, default_value = "boundary")]
        instants: InstantsArg,
        /// Same as `--instants dense`.
        #[arg(long, conflicts_with = "instants")]
        dense: bool,
    },
    /// Write a synthetic edge stream.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
}

/// Falls back to the query's WINDOW clause, then to a window of one instant.
#[derive(Args)]
struct WindowArgs {
    /// Window size in the stream's time unit.
    #[arg(long)]
    window: Option<u64>,
    /// Slide; defaults to 1.
    #[arg(long, requires = "window")]
    slide: Option<u64>,
}

impl WindowArgs {
    fn spec(&self) -> Option<WindowSpec> {
        self.window.map(|size| WindowSpec { size, slide: self.slide.unwrap_or(1) })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Threads {
    One,
    PerOp,
}

#[derive(Clone, Copy, ValueEnum)]
enum InstantsArg {
    Boundary,
    Dense,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

async fn connect(server: Option<String>) -> Result<Client> {
    if let Some(url) = server {
        return Ok(Client::new(url));
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.context("starting embedded server")?;
    let addr = listener.local_addr()?;
    tokio::spawn(sgq_server::serve(listener));
    Ok(Client::new(format!("http://{addr}")))
}

async fn exec(cli: Cli) -> Result<ExitCode> {
    if let Cmd::Serve { addr } = &cli.cmd {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        sgq_server::serve_until(listener, async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await?;
        return Ok(ExitCode::SUCCESS);
    }
    let client = connect(cli.server).await?;
    match cli.cmd {
        Cmd::Run { src, output, metrics, threads } => {
            let req = RunRequest {
                query: read(&src.query)?,
                edges: read(&src.input)?,
                window: src.window.spec(),
                threads: match threads {
                    Threads::One => Threading::One,
                    Threads::PerOp => Threading::PerOp,
                },
            };
            let r = client.run(&req).await?;
            match output {
                Some(p) => write(&p, &r.results)?,
                None => print!("{}", r.results),
            }
            let m = serde_json::to_string_pretty(&r.metrics)? + "\n";
            match metrics {
                Some(p) => write(&p, &m)?,
                None => eprint!("{m}"),
            }
        }
        Cmd::Plan { query, rewrites, window } => {
            let r = client.plan(&PlanRequest { query: read(&query)?, window: window.spec(), rewrites }).await?;
            println!("{}", r.canonical.trim_end());
            if rewrites > 0 {
                println!();
                for (i, p) in r.plans.iter().enumerate() {
                    println!("[{i}] {p}");
                }
            }
        }
        Cmd::Check { src, instants, dense } => {
            let instants = match (dense, instants) {
                (true, _) | (_, InstantsArg::Dense) => Instants::Dense,
                _ => Instants::Boundary,
            };
            let req = CheckRequest { query: read(&src.query)?, edges: read(&src.input)?, window: src.window.spec(), instants };
            let r = client.check(&req).await?;
            for d in &r.diffs {
                println!("t={}", d.t);
                for f in &d.missing {
                    println!("  missing {f}");
                }
                for f in &d.extra {
                    println!("  extra {f}");
                }
            }
            println!("{} instants checked, {} with differences", r.instants, r.diffs.len());
            if !r.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Gen { spec, out } => {
            let spec: SyntheticStreamSpec =
                serde_json::from_str(&read(&spec)?).with_context(|| format!("parsing {}", spec.display()))?;
            write(&out, &client.generate(&GenRequest { spec }).await?.edges)?;
        }
        Cmd::Serve { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match exec(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("sgq: {e:#}");
            ExitCode::from(2)
        }
    }
}
