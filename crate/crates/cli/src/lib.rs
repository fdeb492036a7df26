//! `usfield` command line: phantom generation, training, rendering,
//! evaluation and the HTTP render service.

pub mod service;
pub mod view;

use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use usfield::frustum::SamplingMode;
use usfield::io;
use usfield::phantom::{generate_dataset, PhantomConfig};
use usfield::trainer::{evaluate, train_with, TrainConfig};

pub use view::{render_png, RenderRequest};

/// Default service port when neither `--port` nor `USFIELD_PORT` is set.
pub const DEFAULT_PORT: u16 = 8470;

#[derive(Parser, Debug)]
#[command(name = "usfield", version, about = "Neural ultrasound field tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic phantom datasets.
    Phantom {
        #[command(subcommand)]
        action: PhantomAction,
    },
    /// Fit a field to a dataset.
    Train(TrainArgs),
    /// Render one slice to PNG.
    Render(RenderArgs),
    /// Render the uniformly resampled panorama to a volume file.
    Panorama(PanoramaArgs),
    /// Score a checkpoint against dataset volumes; prints JSON.
    Eval(EvalArgs),
    /// Serve renders over HTTP.
    Serve(ServeArgs),
}

#[derive(Subcommand, Debug)]
enum PhantomAction {
    /// Simulate a tracked sweep and write it as a dataset directory.
    Gen {
        /// Phantom config JSON; the reference phantom if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Mvg,
    Point,
}

impl From<Mode> for SamplingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Mvg => SamplingMode::Mvg,
            Mode::Point => SamplingMode::Point,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON; the desk preset if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long = "elev-downsample")]
    elev_downsample: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON file with one row-major 4×4 pose.
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "opening-angle")]
    opening_angle: Option<f64>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args, Debug)]
struct PanoramaArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Plane count; the training layout's if omitted.
    #[arg(long)]
    planes: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Volume index to score; all volumes if omitted.
    #[arg(long)]
    holdout: Option<usize>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, env = "USFIELD_PORT", default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Interface to bind; loopback unless set.
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
}

/// Runtime failure, reported on stderr with exit code 2.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command. Returns the exit
/// code: 0 on success, 1 on usage errors, 2 on runtime errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Phantom {
            action: PhantomAction::Gen { config, out },
        } => phantom_gen(config.as_deref(), &out),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Panorama(a) => panorama_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn phantom_gen(config: Option<&Path>, out: &Path) -> Outcome {
    let config = match config {
        Some(p) => io::read_json::<PhantomConfig>(p)?,
        None => PhantomConfig::reference(),
    };
    let dataset = generate_dataset(&config)?;
    let manifest = io::write_dataset(&dataset, Some(&config), out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let dataset = io::read_dataset(&a.data)?;
    let mut config = match &a.config {
        Some(p) => io::read_json::<TrainConfig>(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(m) = a.mode {
        config.sampling_mode = m.into();
    }
    if let Some(k) = a.elev_downsample {
        config.elevational_downsample = k;
    }
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
        config.field.seed = s;
    }
    if let Some(h) = config.holdout {
        if h >= dataset.volumes.len() {
            config.holdout = None;
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Failure(format!("{}: {e}", a.out.display())))?;
    io::write_json(&config, a.out.join("config.json"))?;
    let out = a.out.clone();
    let outcome = train_with(&dataset, &config, &mut |model, step| {
        io::write_checkpoint(model, out.join(format!("step_{step:06}.ckpt")))
    })?;
    io::write_checkpoint(&outcome.model, a.out.join("model.ckpt"))?;
    io::write_loss_csv(&outcome.history, a.out.join("loss.csv"))?;
    if let Some(last) = outcome.history.last() {
        println!("trained {} steps, final loss {:.6}", outcome.history.len(), last.total);
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Outcome {
    let model = io::read_checkpoint(&a.ckpt)?;
    let pose = io::read_pose(&a.pose)?;
    let request = RenderRequest {
        opening_angle_deg: a.opening_angle,
        n_rays: a.rays,
        n_samples: a.samples,
        width: a.width,
        height: a.height,
        ..RenderRequest::at(&pose)
    };
    let bytes = render_png(&model, &request)?;
    std::fs::write(&a.out, bytes).map_err(|e| Failure(format!("{}: {e}", a.out.display())))?;
    Ok(())
}

fn panorama_cmd(a: PanoramaArgs) -> Outcome {
    let model = io::read_checkpoint(&a.ckpt)?;
    let planes = a.planes.unwrap_or(model.layout.planes);
    io::write_volume(&model.panorama(planes)?, &a.out)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Outcome {
    let model = io::read_checkpoint(&a.ckpt)?;
    let dataset = io::read_dataset(&a.data)?;
    let volumes: Vec<_> = match a.holdout {
        Some(i) => {
            let v = dataset
                .volumes
                .iter()
                .find(|v| v.index == i)
                .ok_or_else(|| Failure(format!("no volume with index {i}")))?;
            vec![v.clone()]
        }
        None => dataset.volumes.clone(),
    };
    let report = evaluate(&model, &dataset.probe, &volumes)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Outcome {
    let model = io::read_checkpoint(&a.ckpt)?;
    let state = Arc::new(service::Service::new(model)?);
    let addr = SocketAddr::new(a.bind, a.port);
    let (local, handle) = service::spawn(state, addr).map_err(|e| Failure(format!("cannot bind {addr}: {e}")))?;
    println!("listening on {local}");
    std::io::stdout().flush()?;
    handle
        .join()
        .map_err(|_| Failure("server thread panicked".into()))??;
    Ok(())
}
