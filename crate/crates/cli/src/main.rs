//! `codecap`: operator and client tool for codecaps.
//!
//! Exit status is 0 on success, 1 when a request is denied or otherwise
//! refused, and 2 for usage errors and unreadable inputs.

mod commands;
mod home;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable input files.
    Usage(String),
    /// Denied, refused or unreachable.
    Failed(String),
    /// Failed, and the failure was already printed as a record.
    Reported,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) | CliError::Reported => 1,
            CliError::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => m,
            CliError::Reported => "",
        }
    }
}

#[derive(Parser)]
#[command(name = "codecap", version, about = "Capabilities with executable rights functions")]
struct Cli {
    /// Configuration directory holding `key`, `home.cap`, `working.cap` and `peers`.
    #[arg(long, env = "CODECAP_HOME", global = true)]
    home: Option<PathBuf>,
    /// One JSON record per result instead of text.
    #[arg(long, global = true)]
    machine: bool,
    #[command(subcommand)]
    command: Command,
}

/// Where a request goes and who signs it.
#[derive(Args, Clone)]
struct Conn {
    /// Heritage file.
    #[arg(long)]
    cap: Option<PathBuf>,
    /// Key file of the heritage's final subject.
    #[arg(long)]
    key: Option<PathBuf>,
    /// host:port of the service the cap is rooted at (otherwise from `peers`).
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair and print its public key.
    Keygen {
        /// Where to write the key file (default: `$CODECAP_HOME/key`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// 64 hex characters for a deterministic key.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Mint a root cap with a service key.
    Mint {
        /// Service key file.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Subject public key (hex).
        #[arg(long)]
        to: String,
        #[arg(long)]
        rights_file: PathBuf,
        #[arg(long)]
        plength: i64,
        /// Object the cap names; omit for a factory cap.
        #[arg(long)]
        object: Option<String>,
        #[arg(long)]
        version: Option<i64>,
        /// Service display name recorded as `issuerName`.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extend a heritage with a certificate for another principal.
    Delegate {
        #[arg(long)]
        cap: PathBuf,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Target public key (hex).
        #[arg(long)]
        to: String,
        #[arg(long)]
        rights_file: PathBuf,
        #[arg(long)]
        plength: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wrap a rights function so it only holds for the last certificate.
    Confine {
        #[arg(long)]
        rights_file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut a heritage back to the last certificate issued to `--key`.
    Amplify {
        #[arg(long)]
        cap: PathBuf,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show each certificate of a heritage.
    Inspect {
        #[arg(long)]
        cap: PathBuf,
        /// Print rights functions in full.
        #[arg(long)]
        full: bool,
    },
    /// Check a heritage against a service key.
    Validate {
        /// Service public key (hex).
        #[arg(long)]
        root_pub: String,
        #[arg(long)]
        cap: PathBuf,
    },
    /// Sign a request with a codecap and send it.
    Request {
        #[command(flatten)]
        conn: Conn,
        #[arg(long = "type")]
        kind: String,
        /// String attribute `name=value` (repeatable).
        #[arg(long = "str", value_name = "NAME=VALUE")]
        strs: Vec<String>,
        /// Integer attribute `name=value` (repeatable).
        #[arg(long = "int", value_name = "NAME=VALUE")]
        ints: Vec<String>,
        #[arg(long)]
        payload_file: Option<PathBuf>,
        /// Write the response payload here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Directory operations.
    Dir {
        #[command(flatten)]
        conn: Conn,
        #[command(subcommand)]
        command: DirCommand,
    },
    /// Run an object service.
    Serve(ServeArgs),
    /// Ask a service to sweep its objects now.
    Gc {
        #[command(flatten)]
        conn: Conn,
    },
    /// Bump an object's version, revoking every outstanding cap on it.
    Bump {
        #[command(flatten)]
        conn: Conn,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DirCommand {
    /// Fetch a row's cap restricted by a group's rights function.
    Lookup {
        name: String,
        #[arg(long)]
        group: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replace a group's rights function on a row.
    Chmod {
        name: String,
        #[arg(long)]
        group: String,
        #[arg(long)]
        rights_file: PathBuf,
    },
    /// Store a heritage under a name.
    Insert {
        name: String,
        /// Heritage to store; it must end at the directory service's key.
        #[arg(long)]
        entry: PathBuf,
        /// `group=rights-file` (repeatable).
        #[arg(long = "grant", value_name = "GROUP=FILE")]
        grants: Vec<String>,
    },
    Remove {
        name: String,
    },
    List,
    /// Move the working directory.
    Chdir {
        path: String,
        #[arg(long)]
        group: String,
    },
    /// Resolve a path and print the resulting heritage.
    Resolve {
        path: String,
        #[arg(long)]
        group: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Service key file.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Object store directory (default: `$CODECAP_HOME/store`).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Keep objects in memory only.
    #[arg(long, conflicts_with = "store")]
    memory: bool,
    #[arg(long)]
    realm: Option<String>,
    /// Seconds between garbage-collection sweeps.
    #[arg(long, default_value_t = 60)]
    gc_period: u64,
    /// Rights-function step budget.
    #[arg(long)]
    budget: Option<u64>,
    /// Seconds of clock skew and nonce memory.
    #[arg(long)]
    replay_window: Option<i64>,
    /// Publish `name=heritage-file` in the yellow-pages directory (repeatable).
    #[arg(long = "yellow", value_name = "NAME=FILE")]
    yellow: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let machine = cli.machine;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Reported) => ExitCode::from(1),
        Err(e) => {
            if machine {
                println!("{}", serde_json::json!({ "error": e.message(), "exit": e.exit_code() }));
            } else {
                eprintln!("codecap: {}", e.message());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
