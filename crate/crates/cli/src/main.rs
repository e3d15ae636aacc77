//! `panoforge` command-line tool. JSON results go to stdout, logs to
//! stderr. Exit status: 0 ok, 1 I/O failure, 2 invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use panoforge::analysis::{cluster_floors, psnr, ssim, CameraPosition, DbscanParams, FloorSummary};
use panoforge::grid::OccupancyGrid;
use panoforge::image::{load_depth_tensor, load_rgb_tensor, ColorImage};
use panoforge::losses::{alignment_loss, color_loss, diff_mse, total_loss, LossReport, DEFAULT_BINS};
use panoforge::reinforce::{
    box_room_topdown, box_room_wall_mask, build_box_room, reinforce_floor, reinforce_walls,
    BoxRoomSpec, WallMask,
};
use panoforge::renderer::{default_workers, SamplingConfig};
use panoforge::tensor::Tensor;
use panoforge_service::{ApiError, CameraRequest, Outputs, RenderJob, RenderRequest, ServiceConfig};
use serde_json::json;

/// Camera height above the floor when `--cam` gives only x,y.
const DEFAULT_EYE_HEIGHT: f64 = 1.6;

#[derive(Parser)]
#[command(name = "panoforge", version, about = "Volumetric panorama rendering from occupancy grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render depth and color panoramas from a grid and a top-down image.
    Render(RenderArgs),
    /// Rasterize a JSON box-room description into an OCC1 grid.
    Boxroom(BoxroomArgs),
    /// Solidify wall columns and/or the floor layer of a grid.
    Reinforce(ReinforceArgs),
    /// PSNR and SSIM between two PNG images.
    Metrics(MetricsArgs),
    /// Cluster camera positions into floors by height.
    Floors(FloorsArgs),
    /// Training loss terms for a generated panorama pair.
    Losses(LossesArgs),
    /// Run the HTTP rendering service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// OCC1 occupancy grid.
    #[arg(long)]
    grid: PathBuf,
    /// Top-down color image matching the grid footprint.
    #[arg(long)]
    topdown: PathBuf,
    /// Camera position "x,y" or "x,y,z" in meters; z defaults to 1.6 m
    /// above the floor.
    #[arg(long, allow_hyphen_values = true)]
    cam: String,
    /// Panorama size "WxH" with W = 2H.
    #[arg(long, default_value = "1024x512")]
    pano: String,
    /// Samples per ray.
    #[arg(long)]
    samples: Option<usize>,
    /// Depth ray length in meters; the color ray is half of it.
    #[arg(long)]
    ray_depth: Option<f64>,
    /// Longitude offset in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    yaw: f64,
    /// Free text stored in the metadata sidecar.
    #[arg(long)]
    style_prompt: Option<String>,
    /// Output prefix: writes PREFIX_depth.png, PREFIX_color.png, PREFIX_meta.json.
    #[arg(long, default_value = "pano")]
    out_prefix: String,
}

#[derive(Args)]
struct BoxroomArgs {
    /// JSON room description.
    #[arg(long)]
    spec: PathBuf,
    /// Meters per top-down pixel.
    #[arg(long, default_value_t = 0.05)]
    mpp: f64,
    /// Vertical layers.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write a matching top-down PNG.
    #[arg(long)]
    topdown: Option<PathBuf>,
    /// Also write the wall mask PNG.
    #[arg(long)]
    walls: Option<PathBuf>,
}

#[derive(Args)]
struct ReinforceArgs {
    #[arg(long)]
    grid: PathBuf,
    /// PNG mask; nonzero pixels are walls.
    #[arg(long)]
    walls: Option<PathBuf>,
    /// Make the bottom layer solid.
    #[arg(long)]
    floor: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args)]
struct FloorsArgs {
    /// CSV of x,y,z camera positions, with or without a header row.
    cams: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    eps: f64,
    #[arg(long, default_value_t = 3)]
    min_pts: usize,
}

#[derive(Args)]
struct LossesArgs {
    /// Generated color panorama.
    #[arg(long)]
    pred: PathBuf,
    /// Reference color panorama.
    #[arg(long)]
    gt: PathBuf,
    /// Depth of the generated panorama (16-bit millimeter PNG).
    #[arg(long)]
    depth_pred: PathBuf,
    /// Coarse rendered depth (16-bit millimeter PNG).
    #[arg(long)]
    depth_gt: PathBuf,
    /// Sampled noise as a JSON array; enables the diffusion term.
    #[arg(long, requires = "noise_pred")]
    noise: Option<PathBuf>,
    /// Predicted noise as a JSON array.
    #[arg(long, requires = "noise")]
    noise_pred: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "PANOFORGE_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "PANOFORGE_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, env = "PANOFORGE_MAX_CONCURRENT_RENDERS", default_value_t = 4)]
    max_concurrent_renders: usize,
    #[arg(long, env = "PANOFORGE_MAX_QUEUED_RENDERS", default_value_t = 32)]
    max_queued_renders: usize,
    /// Upload limit in MiB.
    #[arg(long, env = "PANOFORGE_MAX_UPLOAD_MB", default_value_t = 512)]
    max_upload_mb: usize,
    /// Allowed CORS origin; repeat for several. Any origin when omitted.
    #[arg(long, env = "PANOFORGE_CORS_ORIGINS", value_delimiter = ',')]
    cors_origin: Vec<String>,
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Invalid(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Invalid(_) => 2,
        }
    }
}

impl From<panoforge::Error> for Failure {
    fn from(e: panoforge::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

/// Missing inputs are reported as invalid arguments.
fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{}: no such file", path.display())))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("output serializes"));
}

fn parse_cam(s: &str, grid: &OccupancyGrid) -> Result<CameraRequest, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| invalid(format!("--cam {s:?}: expected x,y or x,y,z")))?;
    let floor_z = grid.meta().floor_z;
    match parts[..] {
        [x, y] => Ok(CameraRequest { x, y, z: floor_z + DEFAULT_EYE_HEIGHT }),
        [x, y, z] => Ok(CameraRequest { x, y, z }),
        _ => Err(invalid(format!("--cam {s:?}: expected x,y or x,y,z"))),
    }
}

fn parse_pano(s: &str) -> Result<(usize, usize), Failure> {
    let err = || invalid(format!("--pano {s:?}: expected WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(err)?;
    Ok((w.trim().parse().map_err(|_| err())?, h.trim().parse().map_err(|_| err())?))
}

fn cmd_render(args: RenderArgs) -> CmdResult {
    require_file(&args.grid)?;
    require_file(&args.topdown)?;
    let grid = OccupancyGrid::load(&args.grid)?;
    let topdown = ColorImage::load(&args.topdown)?;
    let (pano_width, pano_height) = parse_pano(&args.pano)?;
    let mut sampling = SamplingConfig::default();
    if let Some(s) = args.samples {
        sampling = sampling.with_samples(s);
    }
    if let Some(l) = args.ray_depth {
        sampling = sampling.with_ray_length(l);
    }
    let req = RenderRequest {
        camera: parse_cam(&args.cam, &grid)?,
        pano_width,
        pano_height,
        yaw: args.yaw,
        sampling: Some(sampling),
        outputs: Outputs::Both,
        style_prompt: args.style_prompt,
    };
    let job = RenderJob::prepare(&req, &grid)?;
    let images = job.run(&grid, &topdown, default_workers())?;

    let depth_path = format!("{}_depth.png", args.out_prefix);
    let color_path = format!("{}_color.png", args.out_prefix);
    let meta_path = format!("{}_meta.json", args.out_prefix);
    write_file(Path::new(&depth_path), &images.depth_png.expect("depth requested"))?;
    write_file(Path::new(&color_path), &images.color_png.expect("color requested"))?;
    let sidecar = serde_json::to_vec_pretty(&job.sidecar(&grid)).expect("sidecar serializes");
    write_file(Path::new(&meta_path), &sidecar)?;
    log::info!("wrote {depth_path}, {color_path}, {meta_path}");
    print_json(&json!({ "depth": depth_path, "color": color_path, "meta": meta_path }));
    Ok(())
}

fn cmd_boxroom(args: BoxroomArgs) -> CmdResult {
    require_file(&args.spec)?;
    let text = std::fs::read(&args.spec).map_err(|e| Failure::Io(e.to_string()))?;
    let spec: BoxRoomSpec =
        serde_json::from_slice(&text).map_err(|e| invalid(format!("{}: {e}", args.spec.display())))?;
    let (grid, geometry) = build_box_room(&spec, args.mpp, args.n)?;
    grid.save(&args.out)?;
    if let Some(path) = &args.topdown {
        write_file(path, &box_room_topdown(&grid, &geometry)?.to_png()?)?;
    }
    if let Some(path) = &args.walls {
        write_file(path, &box_room_wall_mask(&grid, &geometry).to_png()?)?;
    }
    print_json(&json!({
        "width": grid.width(),
        "height_px": grid.height_px(),
        "n_vertical": grid.n_vertical(),
        "grid_checksum": grid.checksum(),
        "geometry": geometry,
    }));
    Ok(())
}

fn cmd_reinforce(args: ReinforceArgs) -> CmdResult {
    require_file(&args.grid)?;
    if args.walls.is_none() && !args.floor {
        log::warn!("neither --walls nor --floor given; output equals input");
    }
    let mut grid = OccupancyGrid::load(&args.grid)?;
    if let Some(path) = &args.walls {
        require_file(path)?;
        grid = reinforce_walls(&grid, &WallMask::load(path)?)?;
    }
    if args.floor {
        grid = reinforce_floor(&grid);
    }
    grid.save(&args.out)?;
    print_json(&json!({ "grid_checksum": grid.checksum() }));
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> CmdResult {
    require_file(&args.a)?;
    require_file(&args.b)?;
    let a = load_rgb_tensor(&args.a)?;
    let b = load_rgb_tensor(&args.b)?;
    let p = psnr(&a, &b, 1.0)?;
    let s = ssim(&a, &b)?;
    print_json(&json!({ "psnr": p, "ssim": s }));
    Ok(())
}

fn read_cameras(path: &Path) -> Result<Vec<CameraPosition>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Failure::Io(e.to_string()))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let values: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match values {
            Ok(v) if v.len() == 3 => out.push(CameraPosition { x: v[0], y: v[1], z: v[2] }),
            // A non-numeric first row is a header.
            Err(_) if i == 0 => continue,
            _ => return Err(invalid(format!("{} row {}: expected x,y,z", path.display(), i + 1))),
        }
    }
    Ok(out)
}

fn cmd_floors(args: FloorsArgs) -> CmdResult {
    require_file(&args.cams)?;
    let cams = read_cameras(&args.cams)?;
    let params = DbscanParams {
        eps: args.eps,
        min_pts: args.min_pts,
    };
    let labels = cluster_floors(&cams, &params)?;
    print_json(&FloorSummary::from_labels(labels));
    Ok(())
}

fn read_noise(path: &Path) -> Result<Tensor, Failure> {
    require_file(path)?;
    let text = std::fs::read(path).map_err(|e| Failure::Io(e.to_string()))?;
    let values: Vec<f64> =
        serde_json::from_slice(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(Tensor::new(&[values.len()], values)?)
}

fn cmd_losses(args: LossesArgs) -> CmdResult {
    for p in [&args.pred, &args.gt, &args.depth_pred, &args.depth_gt] {
        require_file(p)?;
    }
    let color = color_loss(&load_rgb_tensor(&args.pred)?, &load_rgb_tensor(&args.gt)?, args.bins)?;
    let (alignment, _) = alignment_loss(&load_depth_tensor(&args.depth_pred)?, &load_depth_tensor(&args.depth_gt)?)?;
    let diff = match (&args.noise, &args.noise_pred) {
        (Some(n), Some(p)) => Some(diff_mse(&read_noise(n)?, &read_noise(p)?)?),
        _ => None,
    };
    let total = total_loss(diff.unwrap_or(0.0), alignment, color)?;
    print_json(&LossReport {
        diff,
        alignment,
        color,
        total,
    });
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> CmdResult {
    let config = ServiceConfig {
        port: args.port,
        data_dir: args.data_dir,
        max_concurrent_renders: args.max_concurrent_renders,
        max_queued_renders: args.max_queued_renders,
        max_upload_bytes: args.max_upload_mb.saturating_mul(1024 * 1024),
        cors_origins: args.cors_origin,
        ..ServiceConfig::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    runtime
        .block_on(panoforge_service::serve(config))
        .map_err(|e| Failure::Io(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Boxroom(a) => cmd_boxroom(a),
        Command::Reinforce(a) => cmd_reinforce(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Floors(a) => cmd_floors(a),
        Command::Losses(a) => cmd_losses(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Io(m) => log::error!("{m}"),
                Failure::Invalid(m) => log::error!("invalid input: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
