//! `trilogy`: broker, mediator and resource daemons plus the ingest,
//! query, ontology and maintenance commands.

mod commands;
mod config;
mod context;
mod daemon;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::Level;

use crate::config::Config;
use crate::context::{is_user_error, Ctx, OrUser};

#[derive(Debug, Parser)]
#[command(name = "trilogy", version, about = "Federated resource discovery over topic brokers")]
struct Cli {
    /// Config file (overrides $TRILOGY_CONFIG and <data-dir>/broker.conf)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory holding hierarchy.tsv and links.tsv
    #[arg(long, global = true)]
    ontology: Option<PathBuf>,
    /// More logging; repeat for more
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Topic broker daemon
    Broker {
        #[command(subcommand)]
        cmd: BrokerCmd,
    },
    /// Mediator daemon
    Mediator {
        #[command(subcommand)]
        cmd: MediatorCmd,
    },
    /// Generic resource agent daemon
    Resource {
        #[command(subcommand)]
        cmd: ResourceCmd,
    },
    /// Add documents
    Ingest {
        #[command(subcommand)]
        cmd: IngestCmd,
    },
    /// Search through the mediators
    Query(QueryArgs),
    /// Inspect or edit the ontology
    Ontology {
        #[command(subcommand)]
        cmd: OntologyCmd,
    },
    /// Index maintenance
    Index {
        #[command(subcommand)]
        cmd: IndexCmd,
    },
    /// Show a user's notifications
    Inbox(InboxArgs),
    /// Request a service from a resource found by topic
    Service(ServiceArgs),
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    /// Address to listen on (default 127.0.0.1:0)
    #[arg(long)]
    pub listen: Option<String>,
    /// Mediator to advertise to; repeatable
    #[arg(long = "mediator")]
    pub mediators: Vec<String>,
    /// Unique resource name
    #[arg(long)]
    pub name: Option<String>,
    /// Advertised topic; repeatable
    #[arg(long = "topic")]
    pub topics: Vec<String>,
    /// Advertised keyword; repeatable
    #[arg(long = "keyword")]
    pub keywords: Vec<String>,
    #[arg(long)]
    pub max_instances: Option<u32>,
    /// Per-request time limit in milliseconds
    #[arg(long, default_value_t = 60_000)]
    pub timeout_ms: u64,
}

#[derive(Debug, Subcommand)]
enum BrokerCmd {
    Serve {
        #[command(flatten)]
        agent: AgentArgs,
        /// Period between maintenance runs, e.g. 30m or 7d
        #[arg(long, value_parser = config::parse_duration)]
        refresh_interval: Option<std::time::Duration>,
    },
}

#[derive(Debug, Subcommand)]
enum MediatorCmd {
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, default_value = "mediator")]
        name: String,
    },
}

#[derive(Debug, Subcommand)]
enum ResourceCmd {
    Serve(ResourceServeArgs),
}

#[derive(Debug, Args)]
pub struct ResourceServeArgs {
    #[command(flatten)]
    pub agent: AgentArgs,
    /// Serve the built-in experiment stand-in
    #[arg(long)]
    pub mock_experiment: bool,
    /// How long each mock run takes
    #[arg(long, default_value_t = 100)]
    pub delay_ms: u64,
    /// Make every mock run fail with this reason
    #[arg(long)]
    pub fail_reason: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum IngestCmd {
    /// Build one bibliographic record from fields
    Add {
        #[arg(long)]
        kind: String,
        /// name=value; repeatable
        #[arg(long = "field", value_name = "NAME=VALUE")]
        fields: Vec<String>,
        #[command(flatten)]
        target: IngestTarget,
    },
    /// One JSON object per line with `kind` and `fields`
    Batch {
        file: PathBuf,
        #[command(flatten)]
        target: IngestTarget,
    },
    /// Gather local files into the store in the data directory
    File {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// text, html or bib (default: from the file extension)
        #[arg(long)]
        media_hint: Option<String>,
        #[arg(long, default_value = "operator")]
        user: String,
    },
}

#[derive(Debug, Args)]
pub struct IngestTarget {
    /// Broker address; without it the store in the data directory is used
    #[arg(long)]
    pub broker: Option<String>,
    /// Contributing user, never notified about their own document
    #[arg(long, default_value = "operator")]
    pub user: String,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub text: String,
    #[arg(long)]
    pub user: String,
    #[arg(long = "mediator")]
    pub mediators: Vec<String>,
    #[arg(long, default_value_t = trilogy_agents::paa::DEFAULT_LIMIT)]
    pub limit: usize,
    /// One JSON object per hit, scores at full precision
    #[arg(long)]
    pub json: bool,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
}

#[derive(Debug, Subcommand)]
pub enum OntologyCmd {
    /// Print the concept tree, or the keyword links with --links
    List {
        #[arg(long)]
        links: bool,
    },
    AddConcept {
        name: String,
        #[arg(long)]
        parent: Option<String>,
    },
    /// Create or re-weight a keyword link
    Link {
        keyword: String,
        concept: String,
        #[arg(allow_negative_numbers = true)]
        weight: i64,
    },
    /// List every broken invariant; silent when valid
    Validate,
    /// Concepts linked to a keyword, heaviest first
    Lookup { keyword: String },
}

#[derive(Debug, Subcommand)]
pub enum IndexCmd {
    /// Probe every document, re-gather changed ones, drop dead ones
    Refresh,
}

#[derive(Debug, Args)]
pub struct InboxArgs {
    #[arg(long)]
    pub user: String,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    #[arg(long = "mediator")]
    pub mediators: Vec<String>,
    #[arg(long)]
    pub topic: String,
    #[arg(long)]
    pub service: String,
    /// Service input; repeatable
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub user: String,
    /// Only use this resource
    #[arg(long)]
    pub resource: Option<String>,
    #[arg(long, default_value_t = 600_000)]
    pub timeout_ms: u64,
}

fn init_logging(verbose: u8, daemon: bool) {
    let base = if daemon { 2 } else { 0 };
    let level = match base + verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        2 => Level::INFO,
        3 => Level::DEBUG,
        _ => Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let env = std::env::var_os(config::ENV_VAR).map(PathBuf::from);
    let mut config = Config::resolve(cli.config.as_deref(), env.as_deref(), cli.data_dir.as_deref()).or_user()?;
    if cli.data_dir.is_some() {
        config.data_dir = cli.data_dir;
    }
    let ctx = Ctx {
        config,
        ontology_dir: cli.ontology,
    };
    let daemon = matches!(
        cli.command,
        Command::Broker { .. } | Command::Mediator { .. } | Command::Resource { .. }
    );
    init_logging(cli.verbose, daemon);
    let runtime = if daemon {
        tokio::runtime::Builder::new_multi_thread().enable_all().build()?
    } else {
        tokio::runtime::Builder::new_current_thread().enable_all().build()?
    };
    runtime.block_on(async move {
        match cli.command {
            Command::Broker {
                cmd:
                    BrokerCmd::Serve {
                        agent,
                        refresh_interval,
                    },
            } => daemon::broker(ctx, agent, refresh_interval).await,
            Command::Mediator {
                cmd: MediatorCmd::Serve { listen, name },
            } => daemon::mediator(ctx, listen, name).await,
            Command::Resource {
                cmd: ResourceCmd::Serve(args),
            } => daemon::resource(ctx, args).await,
            Command::Ingest { cmd } => commands::ingest(&ctx, cmd).await,
            Command::Query(args) => commands::query(&ctx, args).await,
            Command::Ontology { cmd } => commands::ontology(&ctx, cmd),
            Command::Index { cmd: IndexCmd::Refresh } => commands::refresh(&ctx),
            Command::Inbox(args) => commands::inbox(&ctx, args),
            Command::Service(args) => commands::service(&ctx, args).await,
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_user_error(&e) { 1 } else { 2 })
        }
    }
}
