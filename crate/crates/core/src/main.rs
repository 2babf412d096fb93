use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stripescan::config::{
    load_pattern_spec, load_rig, PipelineConfig, PipelineFile, SceneFile, SweepAxis, SweepSpec,
};
use stripescan::pattern::{generate_pattern, Orientation, PatternSpec};
use stripescan::pipeline::{run_pipeline, run_sweep, write_sweep_csv};
use stripescan::reconstruct::{
    anchor_by_reference_depth, evaluate, to_point_cloud, triangulate, EvalInput, EvalMode,
};
use stripescan::segmentation::{segment, BlurAxis, SegmentParams, Window};
use stripescan::simulator::{render_capture, GroundTruth};
use stripescan::unwrap::{unwrap, Anchor, UnwrapParams};
use stripescan::{io, Error, Result};

#[derive(Parser)]
#[command(
    name = "stripescan",
    version,
    about = "Single-shot green-blue stripe range sensing"
)]
struct Cli {
    /// Pipeline config; its parameter sections also serve as defaults for
    /// the single-stage commands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base directory for relative output paths.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Vertical,
    Horizontal,
}

impl From<OrientationArg> for Orientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Vertical => Orientation::VerticalStripes,
            OrientationArg::Horizontal => Orientation::HorizontalStripes,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Vertical,
    Horizontal,
}

fn parse_window(s: &str) -> std::result::Result<Window, String> {
    if s.eq_ignore_ascii_case("whole") {
        return Ok(Window::whole());
    }
    let parse = |v: &str| {
        v.trim()
            .parse::<u32>()
            .map_err(|_| format!("bad window size `{s}`"))
    };
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok(Window::pixels(parse(w)?, parse(h)?)),
        None => {
            let n = parse(s)?;
            Ok(Window::pixels(n, n))
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the stripe pattern image (PNG or PPM by extension).
    GenPattern {
        #[arg(long, default_value_t = 1024)]
        width: u32,
        #[arg(long, default_value_t = 768)]
        height: u32,
        #[arg(long, default_value_t = 2)]
        stripe_width: u32,
        #[arg(long, value_enum, default_value = "vertical")]
        orientation: OrientationArg,
        #[arg(long)]
        out: PathBuf,
        /// Also write the pattern spec as TOML.
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
    /// Render a capture plus ground truth: <prefix>_capture.png,
    /// <prefix>_ids.pgm and <prefix>_depth.pfm.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        /// Pattern spec; defaults to the rig file's [pattern] section.
        #[arg(long)]
        pattern_spec: Option<PathBuf>,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Classify a capture into green, blue and invalid pixels.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        /// Class map: .png for paletted PNG, anything else for raw bytes.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        blur_axis: Option<AxisArg>,
        #[arg(long)]
        blur_sigma: Option<f64>,
        /// WxH, N or `whole`.
        #[arg(long, value_parser = parse_window)]
        balance_window: Option<Window>,
        #[arg(long, value_parser = parse_window)]
        threshold_window: Option<Window>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long)]
        global_threshold: Option<f64>,
    },
    /// Assign absolute stripe ids to a class map.
    Unwrap {
        #[arg(long = "in")]
        input: PathBuf,
        /// 16-bit PGM of stripe ids.
        #[arg(long)]
        out: PathBuf,
        /// Believable scan-line mask (one flag per column for horizontal
        /// stripes); defaults to the output path with `.rows.txt`.
        #[arg(long)]
        rows_out: Option<PathBuf>,
        #[arg(long)]
        min_run: Option<usize>,
        #[arg(long)]
        max_gap: Option<usize>,
        #[arg(long)]
        agree: Option<f64>,
        #[arg(long)]
        valid_frac: Option<f64>,
        /// Vertical label filter radius in rows; 0 disables it.
        #[arg(long)]
        filter_radius: Option<usize>,
        /// Even id offset added to the first-run anchoring.
        #[arg(long, allow_negative_numbers = true)]
        anchor: Option<i64>,
        #[arg(long, value_enum, default_value = "vertical")]
        orientation: OrientationArg,
    },
    /// Triangulate stripe ids into a depth map and point cloud.
    Reconstruct {
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        pattern_spec: Option<PathBuf>,
        #[arg(long)]
        out_depth: PathBuf,
        #[arg(long)]
        out_ply: PathBuf,
        #[arg(long)]
        colors: Option<PathBuf>,
        #[arg(long)]
        min_angle: Option<f64>,
        /// Known working distance in meters used to fix the id offset.
        #[arg(long)]
        reference_depth: Option<f64>,
    },
    /// Score an id map (.pgm) or depth map (.pfm) against ground truth.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        /// Ground-truth prefix as written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "mod-offset")]
        mode: EvalMode,
        /// Rig for depth metrics of an id map.
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long)]
        pattern_spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline from --config.
    Pipeline,
    /// Run a parameter sweep from --config and write a CSV table.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Defaults to <out_dir>/sweep.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Ctx {
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    verbose: bool,
    defaults: Option<PipelineFile>,
}

impl Ctx {
    fn out(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn segment_defaults(&self) -> SegmentParams {
        self.defaults
            .as_ref()
            .map(|d| d.segmentation)
            .unwrap_or_default()
    }

    fn unwrap_defaults(&self) -> UnwrapParams {
        self.defaults.as_ref().map(|d| d.unwrap).unwrap_or_default()
    }

    fn min_angle_deg(&self) -> f64 {
        self.defaults
            .as_ref()
            .map(|d| d.reconstruct)
            .unwrap_or_default()
            .min_angle_deg
    }

    fn config(&self, path: &Option<PathBuf>) -> Result<PipelineConfig> {
        let path = path
            .as_deref()
            .ok_or_else(|| Error::Config("this command needs --config <file>".into()))?;
        let mut cfg = PipelineConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn optional_pattern(path: &Option<PathBuf>) -> Result<Option<PatternSpec>> {
    path.as_deref().map(load_pattern_spec).transpose()
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    let defaults = cli.config.as_deref().map(PipelineFile::parse).transpose()?;
    let ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        seed: cli.seed,
        verbose: cli.verbose,
        defaults,
    };
    match cli.command {
        Command::GenPattern {
            width,
            height,
            stripe_width,
            orientation,
            out,
            spec_out,
        } => {
            let spec = PatternSpec {
                width,
                height,
                stripe_width,
                orientation: orientation.into(),
            };
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            let img = generate_pattern(&spec)?;
            io::write_rgb(&img, &ctx.out(&out))?;
            if let Some(p) = spec_out {
                io::write_atomic(
                    &ctx.out(&p),
                    stripescan::config::pattern_spec_toml(&spec).as_bytes(),
                )?;
            }
            ctx.note(format!(
                "wrote {} stripes to {}",
                spec.stripe_count(),
                ctx.out(&out).display()
            ));
        }
        Command::Simulate {
            scene,
            rig,
            pattern_spec,
            out_prefix,
        } => {
            let scene = SceneFile::load(&scene)?;
            let rig = load_rig(&rig, optional_pattern(&pattern_spec)?)?;
            let mut model = scene.capture;
            if let Some(seed) = ctx.seed {
                model.seed = seed;
            }
            let (capture, truth) = render_capture(&scene.surface()?, &rig, &rig.pattern, &model)?;
            let prefix = ctx.out(&out_prefix);
            io::write_rgb(&capture, &with_suffix(&prefix, "_capture.png"))?;
            io::write_stripe_ids(&truth.id_map(), &with_suffix(&prefix, "_ids.pgm"))?;
            io::write_pfm(
                &stripescan::reconstruct::DepthMap {
                    width: truth.width,
                    height: truth.height,
                    depth: truth.depth.clone(),
                },
                &with_suffix(&prefix, "_depth.pfm"),
            )?;
            ctx.note(format!(
                "{} of {} pixels have ground truth",
                truth.valid_count(),
                truth.stripe_ids.len()
            ));
        }
        Command::Segment {
            input,
            out,
            blur_axis,
            blur_sigma,
            balance_window,
            threshold_window,
            margin,
            floor,
            global_threshold,
        } => {
            let mut p = ctx.segment_defaults();
            if let Some(a) = blur_axis {
                p.blur_axis = match a {
                    AxisArg::Vertical => BlurAxis::Vertical,
                    AxisArg::Horizontal => BlurAxis::Horizontal,
                };
            }
            p.blur_sigma = blur_sigma.unwrap_or(p.blur_sigma);
            p.balance_window = balance_window.unwrap_or(p.balance_window);
            p.threshold_window = threshold_window.unwrap_or(p.threshold_window);
            p.margin = margin.unwrap_or(p.margin);
            p.intensity_floor = floor.unwrap_or(p.intensity_floor);
            p.global_threshold = global_threshold.or(p.global_threshold);
            let img = io::read_rgb(&input)?;
            let labels = segment(&img, &p)?;
            io::write_classmap(&labels, &ctx.out(&out))?;
            ctx.note(format!(
                "{} of {} pixels classified",
                labels.valid_count(),
                labels.labels.len()
            ));
        }
        Command::Unwrap {
            input,
            out,
            rows_out,
            min_run,
            max_gap,
            agree,
            valid_frac,
            filter_radius,
            anchor,
            orientation,
        } => {
            let mut p = ctx.unwrap_defaults();
            p.min_run = min_run.unwrap_or(p.min_run);
            p.max_gap = max_gap.unwrap_or(p.max_gap);
            p.agree_theta = agree.unwrap_or(p.agree_theta);
            p.valid_phi = valid_frac.unwrap_or(p.valid_phi);
            p.filter_radius = filter_radius.unwrap_or(p.filter_radius);
            if let Some(k) = anchor {
                p.anchor = Anchor::FixedOffset(k);
            }
            p.validate()?;
            let labels = io::read_classmap(&input)?;
            let ids = match Orientation::from(orientation) {
                Orientation::VerticalStripes => unwrap(&labels, &p)?,
                Orientation::HorizontalStripes => unwrap(&labels.transposed(), &p)?.transposed(),
            };
            let out = ctx.out(&out);
            io::write_stripe_ids(&ids, &out)?;
            let rows = rows_out
                .map(|r| ctx.out(&r))
                .unwrap_or_else(|| out.with_extension("rows.txt"));
            io::write_believable_rows(&ids.believable_rows, &rows)?;
            ctx.note(format!("{} pixels unwrapped", ids.valid_count()));
        }
        Command::Reconstruct {
            ids,
            rig,
            pattern_spec,
            out_depth,
            out_ply,
            colors,
            min_angle,
            reference_depth,
        } => {
            let rig = load_rig(&rig, optional_pattern(&pattern_spec)?)?;
            let min_angle = min_angle
                .unwrap_or_else(|| ctx.min_angle_deg())
                .to_radians();
            let mut ids = io::read_stripe_ids(&ids)?;
            if (ids.width, ids.height) != (rig.camera_width, rig.camera_height) {
                return Err(Error::Domain(format!(
                    "id map is {}x{}, rig camera is {}x{}",
                    ids.width, ids.height, rig.camera_width, rig.camera_height
                )));
            }
            if let Some(reference) = reference_depth {
                let max_shift = rig.pattern.stripe_count() as i64;
                if let Some(shift) =
                    anchor_by_reference_depth(&ids, &rig, reference, max_shift, min_angle)
                {
                    ctx.note(format!("reference depth shifts ids by {shift}"));
                    ids = ids.shifted(shift);
                }
            }
            let depth = triangulate(&ids, &rig, min_angle);
            let colors = colors.as_deref().map(io::read_rgb).transpose()?;
            let cloud = to_point_cloud(&depth, &rig.camera, colors.as_ref())?;
            io::write_pfm(&depth, &ctx.out(&out_depth))?;
            io::write_ply(&cloud, &ctx.out(&out_ply))?;
            ctx.note(format!("{} points", cloud.len()));
        }
        Command::Evaluate {
            result,
            truth,
            mode,
            rig,
            pattern_spec,
            out,
        } => {
            let truth_ids = io::read_stripe_ids(&with_suffix(&truth, "_ids.pgm"))?;
            let truth_depth = io::read_pfm(&with_suffix(&truth, "_depth.pfm"))?;
            let truth = GroundTruth {
                width: truth_ids.width,
                height: truth_ids.height,
                stripe_ids: truth_ids.ids,
                depth: truth_depth.depth,
            };
            let rig = match &rig {
                Some(r) => Some(load_rig(r, optional_pattern(&pattern_spec)?)?),
                None => None,
            };
            let min_angle = ctx.min_angle_deg().to_radians();
            let ext = result
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or_default()
                .to_ascii_lowercase();
            let metrics = match ext.as_str() {
                "pfm" => {
                    let depth = io::read_pfm(&result)?;
                    evaluate(
                        EvalInput::Depth(&depth),
                        &truth,
                        mode,
                        rig.as_ref(),
                        min_angle,
                    )?
                }
                _ => {
                    let ids = io::read_stripe_ids(&result)?;
                    evaluate(EvalInput::Ids(&ids), &truth, mode, rig.as_ref(), min_angle)?
                }
            };
            let line = metrics.to_json_line();
            println!("{line}");
            if let Some(p) = out {
                io::write_atomic(&ctx.out(&p), format!("{line}\n").as_bytes())?;
            }
        }
        Command::Pipeline => {
            let cfg = ctx.config(&cli.config)?;
            let manifest = run_pipeline(&cfg)?;
            for stage in &manifest.stages {
                ctx.note(format!("{:<12} {:>9.1} ms", stage.name, stage.wall_ms));
            }
            if let Some(m) = &manifest.metrics {
                println!("{}", m.to_json_line());
            }
            ctx.note(format!(
                "manifest: {}",
                cfg.out_dir.join("manifest.json").display()
            ));
        }
        Command::Sweep {
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = ctx.config(&cli.config)?;
            let base = cfg.sweep.clone();
            let spec = SweepSpec {
                axis: axis.or(base.as_ref().map(|s| s.axis)).ok_or_else(|| {
                    Error::Config("sweep needs --axis or a [sweep] section".into())
                })?,
                values: if values.is_empty() {
                    base.as_ref().map(|s| s.values.clone()).unwrap_or_default()
                } else {
                    values
                },
                seeds: if seeds.is_empty() {
                    base.as_ref()
                        .map(|s| s.seeds.clone())
                        .unwrap_or_else(|| vec![cfg.seed])
                } else {
                    seeds
                },
            };
            let rows = run_sweep(&cfg, &spec)?;
            let path = match out {
                Some(p) => ctx.out(&p),
                None => cfg.out_dir.join("sweep.csv"),
            };
            write_sweep_csv(&rows, &path)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            ctx.note(format!(
                "{} cells, {failed} failed, table at {}",
                rows.len(),
                path.display()
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
