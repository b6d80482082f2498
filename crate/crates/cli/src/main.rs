use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use regionstyle::segment::{segment, PointLabel, PromptBox, PromptPoint, PromptSet};
use regionstyle::{load_weights, save_weights, stylize, Image, Mask, MaskPair, MaskPairSet, ModelParams, SegmenterConfig};
use regionstyle_service::{AppState, Config};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "regionstyle", version, about = "Region-paired attention style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stylize a content image with a style image and a pairs manifest.
    Stylize {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        /// JSON manifest: {"pairs":[{"content_mask": path, "style_mask": path}]}
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment an image from point, box or contour prompts.
    Segment {
        #[arg(long)]
        image: PathBuf,
        /// x,y,label with label 1 = foreground, 0 = background (repeatable)
        #[arg(long = "point", value_parser = parse_point)]
        points: Vec<PromptPoint>,
        /// x1,y1,x2,y2, both corners inclusive
        #[arg(long = "box", value_parser = parse_box)]
        bbox: Option<PromptBox>,
        /// x1,y1,x2,y2,... polygon vertices in pixel coordinates
        #[arg(long, value_parser = parse_contour)]
        contour: Option<Contour>,
        #[arg(long, default_value_t = 0.1)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long, env = "REGIONSTYLE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, env = "REGIONSTYLE_WEIGHTS")]
        weights: PathBuf,
        #[arg(long, env = "REGIONSTYLE_SEGMENT_URL")]
        segment_url: Option<String>,
        #[arg(long, env = "REGIONSTYLE_DATA_DIR")]
        data_dir: Option<PathBuf>,
    },
    /// Write a synthetic weight file.
    InitWeights {
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        config: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Identity,
    Toy,
    Vgg,
}

#[derive(Clone)]
struct Contour(Vec<[f64; 2]>);

fn numbers<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| format!("not a number: {v:?}")))
        .collect()
}

fn parse_point(s: &str) -> Result<PromptPoint, String> {
    match numbers::<usize>(s)?[..] {
        [x, y, 1] => Ok(PromptPoint { x, y, label: PointLabel::Foreground }),
        [x, y, 0] => Ok(PromptPoint { x, y, label: PointLabel::Background }),
        _ => Err("expected x,y,label with label 0 or 1".into()),
    }
}

fn parse_box(s: &str) -> Result<PromptBox, String> {
    match numbers::<usize>(s)?[..] {
        [x_lt, y_lt, x_rb, y_rb] => Ok(PromptBox { x_lt, y_lt, x_rb, y_rb }),
        _ => Err("expected x1,y1,x2,y2".into()),
    }
}

fn parse_contour(s: &str) -> Result<Contour, String> {
    let v = numbers::<f64>(s)?;
    if v.len() % 2 != 0 {
        return Err("expected an even number of coordinates".into());
    }
    Ok(Contour(v.chunks(2).map(|c| [c[0], c[1]]).collect()))
}

#[derive(Deserialize)]
struct Manifest {
    pairs: Vec<ManifestPair>,
}

#[derive(Deserialize)]
struct ManifestPair {
    content_mask: PathBuf,
    style_mask: PathBuf,
}

/// A failure with its structured name and process exit code.
struct Failure {
    code: u8,
    name: &'static str,
    message: String,
}

impl From<regionstyle::Error> for Failure {
    fn from(e: regionstyle::Error) -> Self {
        let code = match e {
            regionstyle::Error::MaskTooSmall { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            name: e.name(),
            message: e.to_string(),
        }
    }
}

fn read_manifest(path: &Path) -> Result<MaskPairSet, Failure> {
    let bytes = std::fs::read(path).map_err(regionstyle::Error::from)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Failure {
        code: 2,
        name: "ManifestError",
        message: format!("{}: {e}", path.display()),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = MaskPairSet::new();
    for p in manifest.pairs {
        let content = Mask::load_png(base.join(p.content_mask))?;
        let style = Mask::load_png(base.join(p.style_mask))?;
        pairs.push(MaskPair::new(content, style));
    }
    Ok(pairs)
}

fn cmd_stylize(content: &Path, style: &Path, pairs: Option<&Path>, weights: &Path, out: &Path) -> Result<(), Failure> {
    let params = load_weights(weights)?;
    let content = Image::load_png(content)?;
    let style = Image::load_png(style)?;
    let pairs = match pairs {
        Some(p) => read_manifest(p)?,
        None => MaskPairSet::new(),
    };
    let result = stylize(&content, &style, &pairs, &params)?;
    result.save_png(out)?;
    Ok(())
}

fn cmd_segment(image: &Path, prompts: PromptSet, tau: f64, out: &Path) -> Result<(), Failure> {
    let image = Image::load_png(image)?;
    let seg = segment(&image, &prompts, &SegmenterConfig { tau })?;
    for w in &seg.warnings {
        eprintln!("warning: {w:?}");
    }
    seg.mask.save_png(out)?;
    Ok(())
}

fn cmd_serve(config: Config, host: std::net::IpAddr) -> Result<(), Failure> {
    let state = AppState::from_config(&config)?;
    let runtime = tokio::runtime::Runtime::new().map_err(regionstyle::Error::from)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(SocketAddr::new(host, config.port))
            .await
            .map_err(regionstyle::Error::from)?;
        println!("listening on {}", listener.local_addr().map_err(regionstyle::Error::from)?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        regionstyle_service::serve(listener, Arc::new(state), shutdown)
            .await
            .map_err(|e| Failure::from(regionstyle::Error::from(e)))
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Stylize { content, style, pairs, weights, out } => cmd_stylize(&content, &style, pairs.as_deref(), &weights, &out),
        Command::Segment { image, points, bbox, contour, tau, out } => {
            let prompts = PromptSet {
                points,
                bbox,
                contour: contour.map(|c| c.0),
            };
            cmd_segment(&image, prompts, tau, &out)
        }
        Command::Serve { port, host, weights, segment_url, data_dir } => {
            let config = Config { port, weights, segment_url, data_dir };
            cmd_serve(config, host)
        }
        Command::InitWeights { config, seed, out } => {
            let params = match config {
                Preset::Identity => ModelParams::identity(),
                Preset::Toy => ModelParams::toy(seed),
                Preset::Vgg => ModelParams::vgg19_relu4_1(seed),
            };
            save_weights(&params, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.name, f.message);
            ExitCode::from(f.code)
        }
    }
}
