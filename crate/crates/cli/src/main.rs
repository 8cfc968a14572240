//! `orbitcad`: operator tool for the model-review server.
//!
//! Every command exits 0 on success. Failures exit nonzero; with `--json`
//! the error is printed to stdout as `{"error": {"code", "message", ...}}`.

mod commands;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "orbitcad", version, about = "Import, reduce and review CAD models")]
struct Cli {
    /// Data directory shared with the server.
    #[arg(long, global = true, env = "ORBITCAD_DATA_DIR", default_value = "./orbitcad-data")]
    data_dir: PathBuf,
    /// Machine-readable output, including errors.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Import a model file into the data directory.
    Import(ImportArgs),
    /// Write a stored model in an interchange format.
    Export(ExportArgs),
    /// Apply a reduction plan to a stored model.
    Reduce(ReduceArgs),
    /// Render a sprite sheet of orbit views.
    Thumbs(ThumbsArgs),
    /// Write the printable alignment sheet as SVG.
    LayoutSvg(LayoutArgs),
    /// Run the server.
    Serve(ServeArgs),
    /// Drive a session with simulated clients and check convergence.
    Simulate(simulate::SimArgs),
}

#[derive(Args, Debug)]
struct ImportArgs {
    path: PathBuf,
    /// obj, stl, ply, gltf or glb; defaults to the file extension.
    #[arg(long)]
    format: Option<String>,
    /// Meters per file unit, e.g. 0.001 for millimeters.
    #[arg(long)]
    unit_scale: Option<f64>,
    /// Project to file the model under; created when missing.
    #[arg(long, default_value = "local")]
    project: String,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    model_id: String,
    /// obj, stl, ply, glb or ocm.
    #[arg(long)]
    format: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    model_id: String,
    plan: PathBuf,
    /// Print the report without storing the reduced model.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["model", "session"])))]
struct ThumbsArgs {
    /// Stored model id.
    #[arg(long)]
    model: Option<String>,
    /// Session id; renders its current state.
    #[arg(long)]
    session: Option<String>,
    /// Slide of `--session` to render instead of the current state.
    #[arg(long, requires = "session")]
    slide: Option<String>,
    #[arg(long, default_value_t = 24)]
    viewpoints: u32,
    #[arg(long, default_value_t = 256)]
    tile: u32,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct LayoutArgs {
    /// Tag edge length in meters.
    #[arg(long, default_value_t = orbitcad_align::layout::DEFAULT_TAG_SIZE)]
    tag_size: f64,
    /// Gap between tags in meters.
    #[arg(long, default_value_t = orbitcad_align::layout::DEFAULT_SPACING)]
    spacing: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Address to listen on; port 0 picks a free one.
    #[arg(long)]
    bind: Option<String>,
    /// Seconds between fsync and compaction passes.
    #[arg(long)]
    flush_secs: Option<f64>,
}

/// A failed command.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: u8,
    pub extra: Value,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
            exit: 1,
            extra: Value::Null,
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        CliError {
            exit: 4,
            ..CliError::new("not_found", format!("{what} {id} not found"))
        }
    }
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::new("failed", e.to_string())
    }
}

/// What a successful command prints: a JSON value and its human form.
pub struct Output {
    pub json: Value,
    pub text: String,
}

fn run(cli: Cli) -> Result<Output, CliError> {
    let dir = &cli.data_dir;
    match cli.command {
        Command::Import(a) => commands::import(dir, &a.path, a.format.as_deref(), a.unit_scale, &a.project, a.name),
        Command::Export(a) => commands::export(dir, &a.model_id, &a.format, &a.output),
        Command::Reduce(a) => commands::reduce(dir, &a.model_id, &a.plan, a.dry_run),
        Command::Thumbs(a) => commands::thumbs(dir, a.model.as_deref(), a.session.as_deref(), a.slide, a.viewpoints, a.tile, &a.output),
        Command::LayoutSvg(a) => commands::layout_svg(a.tag_size, a.spacing, &a.output),
        Command::Serve(a) => commands::serve(dir, a.bind.as_deref(), a.flush_secs),
        Command::Simulate(a) => simulate::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            if !informational && std::env::args().any(|a| a == "--json") {
                let message = e.kind().to_string();
                println!("{}", json!({"error": {"code": "usage", "message": message, "detail": e.to_string()}}));
                return ExitCode::from(2);
            }
            e.exit()
        }
    };
    let json_mode = cli.json;
    match run(cli) {
        Ok(out) => {
            if json_mode {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json_mode {
                let mut err = json!({"code": e.code, "message": e.message});
                if let Value::Object(extra) = e.extra {
                    err.as_object_mut().expect("object").extend(extra);
                }
                println!("{}", json!({ "error": err }));
            } else {
                eprintln!("error: {}", e.message);
            }
            ExitCode::from(e.exit)
        }
    }
}
