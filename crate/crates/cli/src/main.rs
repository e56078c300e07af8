//! `splatar`: bake, render, benchmark and validate Gaussian head avatars.
//!
//! Successful commands print one JSON object on stdout; diagnostics go to
//! stderr. Exit codes: 0 ok, 1 I/O failure, 2 invalid input or failed check.

use std::error::Error;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use splatar_core::asset::GaussianAttributes;
use splatar_core::container::Container;
use splatar_core::driving::{read_stream, write_stream, CameraSpec, DrivingFrame};
use splatar_core::render::{render_oracle, Camera, Rasterizer, RenderTarget};
use splatar_core::rig::{ExprParams, PoseParams, RigTemplate, ShapeParams};
use splatar_core::synthetic::{self, MiniRigSpec};
use splatar_core::{animate, bake, CanonicalGaussianAvatar, PosedGaussianSet};

/// Largest tiled-vs-oracle difference accepted by `render --oracle`.
const ORACLE_TOLERANCE: f32 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "splatar", version, about = "Rigged 3D Gaussian head avatars on the CPU")]
struct Cli {
    /// Worker threads for animation and rendering (default: all cores).
    #[arg(long, global = true, env = "SPLATAR_THREADS")]
    threads: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bake a canonical avatar from a rig.
    Bake {
        /// Rig file (`.json` or section-table container).
        rig: PathBuf,
        /// JSON array of shape coefficients (default: all zero).
        #[arg(long)]
        beta: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        iterations: u32,
        /// JSON object with optional per-point attribute arrays.
        #[arg(long)]
        attrs: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Animate and render every frame of a driving stream to PNG.
    Render {
        asset: PathBuf,
        driving: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (u32, u32),
        /// Also render with the brute-force reference and fail on mismatch.
        #[arg(long)]
        oracle: bool,
        /// Also write binary PPM images.
        #[arg(long)]
        ppm: bool,
        /// Background color as `r,g,b` in [0, 1].
        #[arg(long, default_value = "0,0,0", value_parser = parse_color)]
        background: [f32; 3],
    },
    /// Measure animation, rendering and end-to-end throughput.
    Bench {
        asset: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (u32, u32),
        /// Driving stream to replay (default: random frames).
        #[arg(long)]
        driving: Option<PathBuf>,
    },
    /// Check every asset invariant; exit 2 when any fails.
    Validate { asset: PathBuf },
    /// Generate synthetic rigs, avatars and driving streams.
    #[command(subcommand)]
    Synth(Synth),
}

#[derive(Subcommand, Debug)]
enum Synth {
    /// Small random rig on an icosphere.
    Rig {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        joints: usize,
        #[arg(long, default_value_t = 4)]
        n_shape: usize,
        #[arg(long, default_value_t = 3)]
        n_expr: usize,
        /// Icosphere refinement level.
        #[arg(long, default_value_t = 1)]
        level: u32,
    },
    /// Random valid avatar with the given point count.
    Avatar {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        points: usize,
        #[arg(long, default_value_t = 50)]
        n_expr: usize,
        #[arg(long, default_value_t = 5)]
        joints: usize,
    },
    /// Driving stream for an asset, with a camera framing it.
    Stream {
        asset: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        size: (u32, u32),
        /// Emit all-zero pose and expression parameters.
        #[arg(long)]
        identity: bool,
    },
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

fn parse_color(s: &str) -> Result<[f32; 3], String> {
    let v: Vec<f32> = s.split(',').map(|p| p.trim().parse::<f32>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(format!("expected three values in [0, 1], got {s:?}")),
    }
}

/// A failed command: message for stderr, exit code, optional JSON for stdout.
struct Failure {
    code: u8,
    message: String,
    report: Option<Value>,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into(), report: None }
    }
}

/// OS-level I/O anywhere in the cause chain is exit code 1, anything else 2.
impl<E: Error + 'static> From<E> for Failure {
    fn from(e: E) -> Self {
        let mut cur: Option<&(dyn Error + 'static)> = Some(&e);
        let mut code = 2;
        while let Some(err) = cur {
            if err.is::<std::io::Error>() {
                code = 1;
                break;
            }
            cur = err.source();
        }
        Self { code, message: e.to_string(), report: None }
    }
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    let result = pool.install(|| run(&cli));
    let (value, code) = match result {
        Ok(v) => (Some(v), 0),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.report, f.code)
        }
    };
    if let Some(v) = value {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"));
    }
    ExitCode::from(code)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Bake { rig, beta, iterations, attrs, output } => cmd_bake(rig, beta.as_deref(), *iterations, attrs.as_deref(), output),
        Command::Render { asset, driving, output, size, oracle, ppm, background } => {
            cmd_render(asset, driving, output, *size, *oracle, *ppm, *background)
        }
        Command::Bench { asset, frames, size, driving } => cmd_bench(asset, *frames, *size, driving.as_deref(), cli.seed),
        Command::Validate { asset } => cmd_validate(asset),
        Command::Synth(s) => cmd_synth(s, cli.seed),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()), report: None })?;
    serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn section_summary(c: &Container) -> Value {
    Value::Array(
        c.sections
            .iter()
            .map(|s| json!({"name": s.name, "dtype": format!("{:?}", s.dtype).to_lowercase(), "shape": s.shape, "bytes": s.data.len()}))
            .collect(),
    )
}

fn cmd_bake(rig: &Path, beta: Option<&Path>, iterations: u32, attrs: Option<&Path>, output: &Path) -> CmdResult {
    let rig = RigTemplate::load(rig)?;
    let beta = match beta {
        Some(p) => ShapeParams(read_json::<Vec<f64>>(p)?),
        None => ShapeParams::zeros(rig.n_shape()),
    };
    let attrs: GaussianAttributes = match attrs {
        Some(p) => read_json(p)?,
        None => GaussianAttributes::default(),
    };
    let avatar = bake(&rig, &beta, iterations, &attrs)?;
    let container = avatar.to_container();
    container.write_file(output)?;
    Ok(json!({
        "output": output,
        "points": avatar.len(),
        "rig_vertices": rig.vertex_count(),
        "iterations": iterations,
        "joints": avatar.joint_count(),
        "n_expr": avatar.n_expr,
        "n_posecorr": avatar.n_posecorr,
        "sections": section_summary(&container),
    }))
}

fn load_asset(path: &Path) -> Result<CanonicalGaussianAvatar, Failure> {
    CanonicalGaussianAvatar::load(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn load_stream(path: &Path) -> Result<Vec<DrivingFrame>, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()), report: None })?;
    read_stream(BufReader::new(file))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| {
            let mut f = Failure::from(e);
            f.message = format!("{}: {}", path.display(), f.message);
            f
        })
}

fn frame_params(frame: &DrivingFrame, theta: &mut PoseParams, phi: &mut ExprParams) {
    theta.0.clear();
    theta.0.extend_from_slice(&frame.theta);
    phi.0.clear();
    phi.0.extend_from_slice(&frame.phi);
}

fn cmd_render(
    asset: &Path,
    driving: &Path,
    output: &Path,
    (w, h): (u32, u32),
    oracle: bool,
    ppm: bool,
    background: [f32; 3],
) -> CmdResult {
    let avatar = load_asset(asset)?;
    let frames = load_stream(driving)?;
    fs::create_dir_all(output)?;
    let mut posed = PosedGaussianSet::for_avatar(&avatar);
    let mut raster = Rasterizer::new();
    let mut target = RenderTarget::new(w, h, background);
    let mut reference = RenderTarget::new(w, h, background);
    let (mut theta, mut phi) = (PoseParams::default(), ExprParams::default());
    let mut max_diff = 0.0f32;
    let mut files = Vec::new();
    for (i, frame) in frames.iter().enumerate() {
        let camera = frame.camera.to_camera(w, h).map_err(|e| Failure::invalid(format!("frame {i}: {e}")))?;
        frame_params(frame, &mut theta, &mut phi);
        animate(&avatar, &theta, &phi, &mut posed).map_err(|e| Failure::invalid(format!("frame {i}: {e}")))?;
        raster.render(&posed.view(&avatar), &camera, &mut target)?;
        let stem = output.join(format!("frame_{i:05}"));
        let png = stem.with_extension("png");
        target.write_png(&png)?;
        target.write_alpha_png(output.join(format!("frame_{i:05}_alpha.png")))?;
        if ppm {
            target.write_ppm(stem.with_extension("ppm"))?;
        }
        files.push(png);
        if oracle {
            render_oracle(&posed.view(&avatar), &camera, &mut reference)?;
            let d = target.max_abs_diff(&reference);
            max_diff = max_diff.max(d);
            if d > ORACLE_TOLERANCE {
                return Err(Failure {
                    code: 2,
                    message: format!("frame {i}: tiled render differs from the reference by {d:e}"),
                    report: Some(json!({"frame": i, "max_abs_diff": d, "tolerance": ORACLE_TOLERANCE})),
                });
            }
        }
    }
    let mut out = json!({
        "frames": frames.len(),
        "width": w,
        "height": h,
        "points": avatar.len(),
        "output": output,
        "files": files,
    });
    if oracle {
        out["oracle_max_abs_diff"] = json!(max_diff);
    }
    Ok(out)
}

/// Camera on the +z side of the asset's bounding sphere, looking at its center.
fn cmd_bench(asset: &Path, frames: usize, (w, h): (u32, u32), driving: Option<&Path>, seed: u64) -> CmdResult {
    if frames == 0 {
        return Err(Failure::invalid("frames must be >= 1"));
    }
    let avatar = load_asset(asset)?;
    let camera = synthetic::framing_camera(&avatar, w, h);
    let stream = match driving {
        Some(p) => {
            let s = load_stream(p)?;
            if s.is_empty() {
                return Err(Failure::invalid("driving stream is empty"));
            }
            s
        }
        None => synthetic::random_frames(frames, avatar.joint_count(), avatar.n_expr, &camera, seed),
    };
    let params: Vec<(PoseParams, ExprParams, Camera)> = (0..frames)
        .map(|i| {
            let f = &stream[i % stream.len()];
            let cam = f.camera.to_camera(w, h).map_err(|e| Failure::invalid(format!("frame {i}: {e}")))?;
            Ok((f.pose(), f.expression(), cam))
        })
        .collect::<Result<_, Failure>>()?;
    let mut posed = PosedGaussianSet::for_avatar(&avatar);
    let mut raster = Rasterizer::new();
    let mut target = RenderTarget::new(w, h, [0.0; 3]);
    let anim_err = |e: splatar_core::AnimateError| Failure::invalid(e.to_string());

    // warm-up, untimed
    animate(&avatar, &params[0].0, &params[0].1, &mut posed).map_err(anim_err)?;
    raster.render(&posed.view(&avatar), &params[0].2, &mut target)?;

    let start = Instant::now();
    for (theta, phi, _) in &params {
        animate(&avatar, theta, phi, &mut posed).map_err(anim_err)?;
    }
    let animate_s = start.elapsed().as_secs_f64();

    let mut render_s = 0.0;
    for (theta, phi, cam) in &params {
        animate(&avatar, theta, phi, &mut posed).map_err(anim_err)?;
        let t = Instant::now();
        raster.render(&posed.view(&avatar), cam, &mut target)?;
        render_s += t.elapsed().as_secs_f64();
    }

    let start = Instant::now();
    for (theta, phi, cam) in &params {
        animate(&avatar, theta, phi, &mut posed).map_err(anim_err)?;
        raster.render(&posed.view(&avatar), cam, &mut target)?;
    }
    let e2e_s = start.elapsed().as_secs_f64();

    let fps = |s: f64| if s > 0.0 { frames as f64 / s } else { f64::MAX };
    Ok(json!({
        "points": avatar.len(),
        "frames": frames,
        "threads": rayon::current_num_threads(),
        "width": w,
        "height": h,
        "animate_fps": fps(animate_s),
        "render_fps": fps(render_s),
        "end_to_end_fps": fps(e2e_s),
    }))
}

fn cmd_validate(path: &Path) -> CmdResult {
    let bytes = fs::read(path).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()), report: None })?;
    let avatar = match CanonicalGaussianAvatar::decode(&bytes) {
        Ok(a) => a,
        Err(e) => {
            let section = e.section().map(str::to_owned);
            let message = e.to_string();
            return Err(Failure {
                code: 2,
                report: Some(json!({"valid": false, "violations": [{"section": section, "detail": message}]})),
                message,
            });
        }
    };
    let report = avatar.validate();
    let violations: Vec<Value> = report
        .violations
        .iter()
        .map(|v| json!({"section": v.section, "count": v.count, "first_index": v.first_index, "detail": v.detail}))
        .collect();
    let value = json!({"valid": report.is_valid(), "points": avatar.len(), "violations": violations});
    if report.is_valid() {
        Ok(value)
    } else {
        Err(Failure {
            code: 2,
            message: format!("{} invariant(s) violated, first in \"{}\"", violations.len(), report.violations[0].section),
            report: Some(value),
        })
    }
}

fn cmd_synth(s: &Synth, seed: u64) -> CmdResult {
    match s {
        Synth::Rig { output, joints, n_shape, n_expr, level } => {
            if *joints == 0 {
                return Err(Failure::invalid("joints must be >= 1"));
            }
            let spec = MiniRigSpec { joints: *joints, n_shape: *n_shape, n_expr: *n_expr, level: *level, ..MiniRigSpec::default() };
            let rig = synthetic::mini_rig(&spec, seed);
            rig.to_container().write_file(output)?;
            Ok(json!({"output": output, "vertices": rig.vertex_count(), "faces": rig.faces().len(), "joints": rig.joint_count()}))
        }
        Synth::Avatar { output, points, n_expr, joints } => {
            if *joints == 0 || *points == 0 {
                return Err(Failure::invalid("points and joints must be >= 1"));
            }
            let avatar = synthetic::random_avatar(*points, *n_expr, *joints, seed);
            avatar.save(output)?;
            Ok(json!({"output": output, "points": avatar.len(), "joints": avatar.joint_count(), "n_expr": avatar.n_expr}))
        }
        Synth::Stream { asset, output, frames, size, identity } => {
            let avatar = load_asset(asset)?;
            let camera = synthetic::framing_camera(&avatar, size.0, size.1);
            let list = if *identity {
                let spec = CameraSpec::from(&camera);
                (0..*frames)
                    .map(|_| DrivingFrame {
                        theta: vec![0.0; 3 * avatar.joint_count()],
                        phi: vec![0.0; avatar.n_expr],
                        camera: spec.clone(),
                    })
                    .collect()
            } else {
                synthetic::random_frames(*frames, avatar.joint_count(), avatar.n_expr, &camera, seed)
            };
            fs::write(output, write_stream(&list))?;
            Ok(json!({"output": output, "frames": list.len()}))
        }
    }
}
