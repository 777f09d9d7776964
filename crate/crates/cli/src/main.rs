mod commands;
mod files;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatmap_core::protocol::RejectReason;
use heatmap_core::CoreError;

#[derive(Parser, Debug)]
#[command(name = "heatmap", version, about = "Encrypted heatmaps of infected subscribers' cell-tower time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a secret key and the evaluation keys the server needs.
    Keygen(KeygenArgs),
    /// Build the phone-number to row mapping shared with the client.
    Map(MapArgs),
    /// Turn raw counts or check-ins into a subscriber x tower matrix.
    Ingest(IngestArgs),
    /// Encrypt an indicator vector of patients into a request file.
    EncryptQuery(EncryptArgs),
    /// Answer requests arriving on a TCP socket, one per connection.
    Serve(ServeArgs),
    /// Send a request file to a running server.
    Submit(SubmitArgs),
    /// Answer a request file offline.
    Aggregate(AggregateArgs),
    /// Decrypt a response into a heatmap CSV and optional PNG.
    Decrypt(DecryptArgs),
    /// Noise-versus-epsilon experiment on plaintext data.
    DpEval(DpEvalArgs),
    /// Runtime sweep over the number of tile products.
    Bench(BenchArgs),
    /// Plaintext reference output for a query.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Args, Debug)]
struct KeygenArgs {
    #[arg(long, default_value = "desk")]
    params: String,
    #[arg(long, value_enum, default_value = "off")]
    mask: Toggle,
    /// Seed for key generation; fresh OS entropy when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving secret.key and eval.keys.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MapArgs {
    /// One phone number per line, in matrix row order.
    #[arg(long)]
    subscribers: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// CSV with header user,tower,count.
    #[arg(long, conflicts_with = "checkins", required_unless_present = "checkins")]
    counts: Option<PathBuf>,
    /// Lines of user_id, timestamp, latitude, longitude, location_id.
    #[arg(long)]
    checkins: Option<PathBuf>,
    /// Known tower ids, one per line; unknown ids are an error.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Per-user per-tower cap; larger entries are clamped.
    #[arg(long)]
    delta_q: Option<u64>,
    /// Only check-ins within START..END count.
    #[arg(long)]
    period: Option<String>,
    /// Reorder rows to follow this mapping.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    params: String,
    /// Matrix output; `.csv` selects CSV, anything else the binary layout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    users_out: Option<PathBuf>,
    #[arg(long)]
    towers_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncryptArgs {
    /// Directory written by keygen.
    #[arg(long)]
    keys: PathBuf,
    #[arg(long, required_unless_present = "indicator", requires = "patients")]
    mapping: Option<PathBuf>,
    /// Patient phone numbers, one per line.
    #[arg(long)]
    patients: Option<PathBuf>,
    /// Raw query vector, one integer per line, instead of mapping + patients.
    #[arg(long, conflicts_with_all = ["mapping", "patients"])]
    indicator: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "off")]
    mask: Toggle,
    #[arg(long)]
    jurisdiction: String,
    /// START..END, inclusive dates.
    #[arg(long)]
    period: String,
    /// Override the announced weight.
    #[arg(long)]
    w: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ServerArgs {
    #[arg(long, default_value = "desk")]
    params: String,
    /// Binary or CSV matrix in mapping row order.
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, value_enum, default_value = "off")]
    mask: Toggle,
    /// Privacy budget per query; no noise when absent.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    delta_q: u64,
    #[arg(long, default_value_t = heatmap_core::protocol::DEFAULT_W_MIN)]
    w_min: u64,
    /// Allowed jurisdictions, comma-separated.
    #[arg(long, value_delimiter = ',')]
    jurisdictions: Option<Vec<String>>,
    /// Collection period of the data, START..END.
    #[arg(long)]
    collection: Option<String>,
    /// Append-only JSON-lines ledger of accepted requests.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Seed of the mask and noise streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Byte budget of the encoded-diagonal cache.
    #[arg(long, default_value_t = 1 << 30)]
    cache_bytes: usize,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    server: ServerArgs,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Stop after this many sessions; 0 serves forever.
    #[arg(long, default_value_t = 0)]
    sessions: usize,
}

#[derive(Args, Debug)]
struct SubmitArgs {
    #[arg(long)]
    connect: String,
    #[arg(long)]
    request: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[command(flatten)]
    server: ServerArgs,
    #[arg(long)]
    request: PathBuf,
    /// Response or REJECT message.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DecryptArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    response: PathBuf,
    /// CSV with columns tower,value.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    png: Option<PathBuf>,
    /// Tower ids for the CSV; column indices otherwise.
    #[arg(long)]
    towers: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DpEvalArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Single epsilon; the 0.05..1.0 grid when absent.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    delta_q: u64,
    #[arg(long, default_value_t = heatmap_core::protocol::DEFAULT_W_MIN)]
    w_min: u64,
    #[arg(long)]
    w_max: Option<u64>,
    #[arg(long, default_value_t = 1)]
    w_step: u64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV: epsilon,w,mean_noise,min,max and quantiles.
    #[arg(long)]
    out: PathBuf,
    /// Also write one original-versus-noised heatmap for a random w_min query.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    towers: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "desk")]
    params: String,
    #[arg(long, value_enum, default_value = "off")]
    mask: Toggle,
    /// Row blocks per point, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    cache_bytes: usize,
    /// Timed passes per point; the fastest counts.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value = "desk")]
    params: String,
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, required_unless_present = "indicator", requires = "patients")]
    mapping: Option<PathBuf>,
    #[arg(long)]
    patients: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["mapping", "patients"])]
    indicator: Option<PathBuf>,
    /// Announced weight; the true weight when absent.
    #[arg(long)]
    w: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    delta_q: u64,
    /// Same seed as the server's `--seed`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    towers: Option<PathBuf>,
}

/// Exit status of each failure class.
pub(crate) mod exit {
    pub const REJECTED: u8 = 2;
    pub const WIRE: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const INTERNAL: u8 = 1;
}

/// A REJECT message the client received.
#[derive(Debug)]
pub(crate) struct Rejected {
    pub reason: RejectReason,
    pub detail: String,
}

impl std::fmt::Display for Rejected {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "request rejected ({}): {}", self.reason, self.detail)
    }
}

impl std::error::Error for Rejected {}

fn classify(err: &anyhow::Error) -> (u8, &'static str, Option<RejectReason>) {
    if let Some(r) = err.downcast_ref::<Rejected>() {
        return (exit::REJECTED, "rejected", Some(r.reason));
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Rejected { reason, .. } => (exit::REJECTED, "rejected", Some(*reason)),
                CoreError::Wire(_) => (exit::WIRE, "wire", None),
                CoreError::He(heatmap_bfv::HeError::Decode(_)) => (exit::WIRE, "wire", None),
                CoreError::He(heatmap_bfv::HeError::NoiseExhausted) => (exit::INTERNAL, "noise", None),
                _ => (exit::CONFIG, "config", None),
            };
        }
        if let Some(heatmap_bfv::HeError::Decode(_)) = cause.downcast_ref::<heatmap_bfv::HeError>() {
            return (exit::WIRE, "wire", None);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (exit::CONFIG, "io", None);
        }
    }
    (exit::CONFIG, "config", None)
}

fn report_error(code: u8, kind: &str, reason: Option<RejectReason>, message: String) -> ExitCode {
    let mut v = serde_json::json!({ "error": kind, "exit_code": code, "message": message });
    if let Some(r) = reason {
        v["reason"] = r.as_str().into();
        v["reason_code"] = r.code().into();
    }
    eprintln!("{v}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return report_error(exit::CONFIG, "usage", None, e.render().to_string().trim().to_string());
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind, reason) = classify(&e);
            report_error(code, kind, reason, format!("{e:#}"))
        }
    }
}
