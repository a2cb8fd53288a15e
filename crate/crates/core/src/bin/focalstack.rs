use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use focalstack::focusmap::Thresholds;
use focalstack::imageio::{encode_gray16, read_rgb, Transfer};
use focalstack::measures::{analyze_measures, AnalysisOptions, CompositeFocusMeasure, Registry};
use focalstack::metrics::{psnr, ssim};
use focalstack::pipeline::{build_representation, init_thread_pool, BuildOptions, JobConfig};
use focalstack::refocus::{Renderer, TargetSpec};
use focalstack::representation::{directory_size, quantize_rgb, Representation};
use focalstack::service::{self, Service};
use focalstack::stack::synth::{presets, synth_stack, SyntheticScene};
use focalstack::stack::{load_stack, write_stack};
use focalstack::{Error, Result};

#[derive(Parser)]
#[command(name = "focalstack", version, about = "Compact focal stack representation and refocusing")]
struct Cli {
    /// Worker threads (defaults to FSR_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an fsr container from a stack directory.
    Build(BuildArgs),
    /// Render a refocused image from a container.
    Refocus(RefocusArgs),
    /// Rank focus measures over a corpus of stacks.
    AnalyzeMeasures(AnalyzeArgs),
    /// Write a synthetic stack with its ground truth.
    Synth(SynthArgs),
    /// Serve a container over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct BuildArgs {
    stack: PathBuf,
    out: PathBuf,
    /// `builtin` or a path to a cfm.json.
    #[arg(long, default_value = "builtin")]
    cfm: String,
    #[arg(long, default_value_t = 0.10)]
    w_frac: f64,
    #[arg(long, default_value_t = 20.0)]
    t_grad: f32,
    #[arg(long, default_value_t = 0.9)]
    t_bokeh: f32,
    #[arg(long, default_value_t = 0.30)]
    t_beta_frac: f64,
}

#[derive(Args)]
struct RefocusArgs {
    container: PathBuf,
    out: PathBuf,
    #[arg(long, group = "target")]
    slice: Option<u16>,
    #[arg(long, num_args = 2, value_names = ["A", "B"], group = "target")]
    range: Option<Vec<u16>>,
    #[arg(long, value_delimiter = ',', group = "target")]
    labels: Option<Vec<u16>>,
    #[arg(long, group = "target")]
    aif: bool,
    #[arg(long, num_args = 2, value_names = ["X", "Y"], group = "target")]
    point: Option<Vec<usize>>,
    /// Labels added on each side of the clicked label in point mode.
    #[arg(long, default_value_t = 0, requires = "point")]
    spread: u16,
    /// Target spec as JSON.
    #[arg(long, group = "target")]
    spec: Option<PathBuf>,
    /// Ground truth image; prints PSNR and SSIM as JSON.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(required = true)]
    stacks: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Members of the composite measure.
    #[arg(long)]
    members: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Corpus,
    TwoPlane,
    RedGreen,
    Bokeh,
    Vignetting,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    preset: Preset,
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct ServeArgs {
    container: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Directory served at `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_thread_pool(cli.threads);
    let result = match cli.command {
        Command::Build(a) => build(a, cli.threads),
        Command::Refocus(a) => refocus(a),
        Command::AnalyzeMeasures(a) => analyze(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn build(a: BuildArgs, threads: Option<usize>) -> Result<()> {
    let job = JobConfig {
        input: a.stack,
        output: a.out,
        thresholds: Thresholds {
            w_frac: a.w_frac,
            t_grad: a.t_grad,
            t_bokeh: a.t_bokeh,
            t_beta_frac: a.t_beta_frac,
        },
        cfm: a.cfm,
        threads,
    };
    job.validate()?;
    let stack = load_stack(&job.input, None)?;
    let opts = BuildOptions {
        thresholds: job.thresholds,
        cfm: CompositeFocusMeasure::resolve(&job.cfm)?,
    };
    let report = build_representation(&stack, &opts)?;
    let rep = &report.representation;
    rep.serialize(&job.output)?;
    let summary = json!({
        "k": rep.k,
        "labels": rep.labels(),
        "dual_count": rep.dual_count(),
        "bokeh_count": rep.bokeh_count(),
        "container_bytes": directory_size(&job.output)?,
    });
    println!("{summary}");
    Ok(())
}

fn target_spec(a: &RefocusArgs) -> Result<TargetSpec> {
    let spec = if let Some(l) = a.slice {
        TargetSpec::single(l)
    } else if let Some(r) = &a.range {
        TargetSpec::range(r[0], r[1])
    } else if let Some(v) = &a.labels {
        TargetSpec::labels(v.clone())
    } else if a.aif {
        TargetSpec::all_in_focus()
    } else if let Some(p) = &a.point {
        TargetSpec::point(p[0], p[1], a.spread)
    } else if let Some(path) = &a.spec {
        serde_json::from_str(&std::fs::read_to_string(path)?)?
    } else {
        return Err(Error::InvalidTargets(
            "one of --slice, --range, --labels, --aif, --point or --spec is required".into(),
        ));
    };
    if let Some(m) = spec.malformed() {
        return Err(Error::InvalidTargets(m));
    }
    Ok(spec)
}

fn refocus(a: RefocusArgs) -> Result<()> {
    let spec = target_spec(&a)?;
    let rep = Representation::deserialize(&a.container)?;
    let renderer = Renderer::new(&rep);
    let bytes = renderer.render_png(&spec)?;
    std::fs::write(&a.out, &bytes)?;
    if let Some(ground) = &a.compare {
        let truth = read_rgb(ground, Transfer::Linear)?;
        let rendered = quantize_rgb(&read_rgb(&a.out, Transfer::Linear)?);
        if truth.dims() != rendered.dims() {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: rendered.dims(),
                got: truth.dims(),
            });
        }
        println!("{}", json!({ "psnr": psnr(&rendered, &truth), "ssim": ssim(&rendered, &truth) }));
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let stacks = a.stacks.iter().map(|p| load_stack(p, None)).collect::<Result<Vec<_>>>()?;
    let mut opts = AnalysisOptions::default();
    if let Some(m) = a.members {
        opts.members = m;
    }
    let analysis = analyze_measures(&stacks, &Registry::builtin(), &opts)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let mut ranking = String::from("rank,measure,score\n");
    for (i, (name, score)) in analysis.report.ranking().iter().enumerate() {
        ranking.push_str(&format!("{},{name},{score:.6}\n", i + 1));
    }
    std::fs::write(a.out_dir.join("ranking.csv"), ranking)?;
    std::fs::write(a.out_dir.join("distances.csv"), analysis.distances.to_csv())?;
    analysis.cfm.write(&a.out_dir.join("cfm.json"))?;
    println!("{}", json!({ "cfm": analysis.cfm.names(), "out_dir": a.out_dir }));
    Ok(())
}

fn scene(a: &SynthArgs) -> SyntheticScene {
    let dims = |w: usize, h: usize| (a.width.unwrap_or(w), a.height.unwrap_or(h));
    match a.preset {
        Preset::Corpus => {
            let (w, h) = dims(500, 500);
            presets::corpus_scene_sized(a.index, w, h)
        }
        Preset::TwoPlane => {
            let (w, h) = dims(256, 256);
            presets::two_plane_scene(w, h, 2, a.k.saturating_sub(1).max(3), a.k)
        }
        Preset::RedGreen => {
            let (w, h) = dims(160, 64);
            presets::red_green_scene(w, h)
        }
        Preset::Bokeh => {
            let (w, h) = dims(256, 128);
            presets::bokeh_scene(w, h)
        }
        Preset::Vignetting => {
            let (w, h) = dims(400, 400);
            presets::vignetting_scene(w, h, a.k)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let (stack, truth) = synth_stack(&scene(&a))?;
    write_stack(&a.out, &stack)?;
    let truth_dir = a.out.join("truth");
    std::fs::create_dir_all(&truth_dir)?;
    let (w, h) = truth.focus.dims();
    write_labels(&truth_dir.join("focus.png"), w, h, truth.focus.data())?;
    write_labels(&truth_dir.join("dual.png"), w, h, truth.dual.data())?;
    let meta = json!({ "sigma": truth.sigma, "layer_labels": truth.layer_labels });
    std::fs::write(truth_dir.join("truth.json"), serde_json::to_string_pretty(&meta)?)?;
    println!("{}", json!({ "k": stack.k(), "width": w, "height": h, "out": a.out }));
    Ok(())
}

fn write_labels(path: &Path, w: usize, h: usize, labels: &[u16]) -> Result<()> {
    std::fs::write(path, encode_gray16(w, h, labels)?)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let svc = Arc::new(Service::open(&a.container, a.static_dir)?);
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(svc, addr))
}
