//! Run configuration and the commands behind the command-line tool.
//!
//! A run file is `key = value` text:
//!
//! ```text
//! rig = converging.rig            # calibration file, relative to this file
//! scene = plane.scene             # scene file (simulate, sweep)
//! output = out                    # default output directory
//! seed = 7                        # optional; overrides the scene's seed
//! lut.z_range = 0.4 1.2           # meters
//! lut.n_samples = 256
//! lut.grid_stride = 16
//! detect.window = 61              # odd, pixels
//! detect.offset = -0.2            # threshold is local mean * (1 + offset)
//! detect.b_min = 15               # accepted line interval, pixels
//! detect.b_max = 60
//! detect.min_contrast = 0.03      # smallest band rise above its floor
//! detect.width_tol = 0.2          # relative width agreement with neighbours
//! detect.support_rows = 3         # vertical support check (0 = off)
//! detect.support_tol = 0.03
//! detect.sigma = 2                # flow smoothing, pixels (0 = none)
//! detect.line_width = 3           # optional; projector px, else from the rig
//! detect.unmix = 1 0 0 0 1 0 0 0 1  # optional camera-to-pattern RGB matrix
//! sweep.exposures = 0.1 0.2 0.3 0.4 0.5   # seconds
//! sweep.sigmas = 2 30 60
//! ```
//!
//! Referenced files must exist when the run file is read; paths are stored
//! absolute.

use std::fs;
use std::path::{Path, PathBuf};

use crate::band::{estimate_flow, extract_channel, FlowEstimate, FlowField, FlowParams};
use crate::depth::{
    compare_to_ground_truth, depth_to_points, fit_plane_rmse, reconstruct_depth, write_points_csv, Comparison,
    DepthMap, DepthMeta, PlaneFit, ReconDiagnostics,
};
use crate::error::{Error, Result};
use crate::imageio::{read_pfm_planes, write_pfm_planes, RgbImage};
use crate::kv::{KvDoc, KvWriter};
use crate::lut::{DepthRatioLut, LutParams, MonotonicityReport, DEFAULT_FLAT_EPS};
use crate::rig::{PatternKind, PatternSpec, RigCalibration};
use crate::sim::{render_frame, RenderOutput, SceneSpec};

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DEGENERATE_RIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const EMPTY_RECONSTRUCTION: i32 = 5;
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::DimensionMismatch(_) | Error::Domain(_) => exit::CONFIG,
        Error::DegenerateRig(_) => exit::DEGENERATE_RIG,
        Error::Io(_) | Error::Format(_) => exit::IO,
        Error::EmptyComparison => exit::EMPTY_RECONSTRUCTION,
        _ => exit::FAILURE,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub rig: PathBuf,
    pub scene: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub lut: LutParams,
    pub flow: FlowParams,
    pub line_width: Option<f64>,
    pub unmix: Option<[[f64; 3]; 3]>,
    pub sweep_exposures: Vec<f64>,
    pub sweep_sigmas: Vec<f64>,
}

impl RunConfig {
    pub fn new(rig: impl Into<PathBuf>) -> Self {
        Self {
            rig: rig.into(),
            scene: None,
            output: PathBuf::from("out"),
            seed: None,
            lut: LutParams::default(),
            flow: FlowParams::default(),
            line_width: None,
            unmix: None,
            sweep_exposures: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            sweep_sigmas: vec![2.0, 30.0, 60.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lut.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.flow.bands.validate()?;
        if !(self.flow.sigma >= 0.0) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if !(self.flow.support_tol >= 0.0) {
            return Err(Error::Config("support_tol must be non-negative".into()));
        }
        if let Some(w) = self.line_width {
            if !(w > 0.0) {
                return Err(Error::Config("line width must be positive".into()));
            }
        }
        if self.sweep_exposures.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("sweep exposures must be positive".into()));
        }
        if self.sweep_sigmas.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Config("sweep sigmas must be non-negative".into()));
        }
        Ok(())
    }

    /// Parses a run file; relative paths are resolved against `base`.
    pub fn from_kv_text(text: &str, base: &Path) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| {
            matches!(
                k,
                "rig" | "scene" | "output" | "seed" | "lut.z_range" | "lut.n_samples" | "lut.grid_stride"
                    | "detect.window" | "detect.offset" | "detect.b_min" | "detect.b_max" | "detect.sigma"
                    | "detect.min_contrast" | "detect.width_tol" | "detect.support_rows" | "detect.support_tol"
                    | "detect.line_width" | "detect.unmix" | "sweep.exposures" | "sweep.sigmas"
            )
        })?;
        let base = absolute(base)?;
        let existing = |key: &str| -> Result<PathBuf> {
            let p = base.join(doc.str(key)?);
            fs::canonicalize(&p).map_err(|_| Error::Config(format!("`{key}` file {} does not exist", p.display())))
        };
        let mut cfg = RunConfig::new(existing("rig")?);
        if doc.contains("scene") {
            cfg.scene = Some(existing("scene")?);
        }
        if doc.contains("output") {
            cfg.output = base.join(doc.str("output")?);
        } else {
            cfg.output = base.join("out");
        }
        if doc.contains("seed") {
            cfg.seed = Some(doc.get("seed")?);
        }
        if doc.contains("lut.z_range") {
            let [a, b] = doc.floats::<2>("lut.z_range")?;
            cfg.lut.z_min = a;
            cfg.lut.z_max = b;
        }
        cfg.lut.n_samples = doc.get_or("lut.n_samples", cfg.lut.n_samples)?;
        cfg.lut.grid_stride = doc.get_or("lut.grid_stride", cfg.lut.grid_stride)?;
        let b = &mut cfg.flow.bands;
        b.window = doc.get_or("detect.window", b.window)?;
        b.offset = doc.get_or("detect.offset", b.offset)?;
        b.b_min = doc.get_or("detect.b_min", b.b_min)?;
        b.b_max = doc.get_or("detect.b_max", b.b_max)?;
        b.min_contrast = doc.get_or("detect.min_contrast", b.min_contrast)?;
        b.width_tol = doc.get_or("detect.width_tol", b.width_tol)?;
        cfg.flow.support_rows = doc.get_or("detect.support_rows", cfg.flow.support_rows)?;
        cfg.flow.support_tol = doc.get_or("detect.support_tol", cfg.flow.support_tol)?;
        cfg.flow.sigma = doc.get_or("detect.sigma", cfg.flow.sigma)?;
        if doc.contains("detect.line_width") {
            cfg.line_width = Some(doc.get("detect.line_width")?);
        }
        if doc.contains("detect.unmix") {
            let m = doc.floats::<9>("detect.unmix")?;
            cfg.unmix = Some([[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]]);
        }
        if doc.contains("sweep.exposures") {
            cfg.sweep_exposures = doc.float_list("sweep.exposures")?;
        }
        if doc.contains("sweep.sigmas") {
            cfg.sweep_sigmas = doc.float_list("sweep.sigmas")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("rig", self.rig.display());
        if let Some(s) = &self.scene {
            w.put("scene", s.display());
        }
        w.put("output", self.output.display());
        if let Some(seed) = self.seed {
            w.put("seed", seed);
        }
        w.floats("lut.z_range", &[self.lut.z_min, self.lut.z_max])
            .put("lut.n_samples", self.lut.n_samples)
            .put("lut.grid_stride", self.lut.grid_stride)
            .put("detect.window", self.flow.bands.window)
            .floats("detect.offset", &[self.flow.bands.offset])
            .floats("detect.b_min", &[self.flow.bands.b_min])
            .floats("detect.b_max", &[self.flow.bands.b_max])
            .floats("detect.min_contrast", &[self.flow.bands.min_contrast])
            .floats("detect.width_tol", &[self.flow.bands.width_tol])
            .put("detect.support_rows", self.flow.support_rows)
            .floats("detect.support_tol", &[self.flow.support_tol])
            .floats("detect.sigma", &[self.flow.sigma]);
        if let Some(lw) = self.line_width {
            w.floats("detect.line_width", &[lw]);
        }
        if let Some(m) = &self.unmix {
            let flat: Vec<f64> = m.iter().flatten().copied().collect();
            w.floats("detect.unmix", &flat);
        }
        w.floats("sweep.exposures", &self.sweep_exposures)
            .floats("sweep.sigmas", &self.sweep_sigmas)
            .finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_kv_text(&text, base)
    }

    pub fn load_rig(&self) -> Result<RigCalibration> {
        RigCalibration::load(&self.rig)
    }

    /// Scene from the scene file with the run's seed applied.
    pub fn load_scene(&self) -> Result<SceneSpec> {
        let path = self.scene.as_ref().ok_or_else(|| Error::Config("no scene file configured".into()))?;
        let mut scene = SceneSpec::load(path)?;
        if let Some(seed) = self.seed {
            scene.seed = seed;
        }
        Ok(scene)
    }

    /// Line width of `pattern` in line-index units, used to discount the
    /// static width of each band.
    pub fn static_width_lines(&self, pattern: &PatternSpec) -> f64 {
        let width = self.line_width.unwrap_or(pattern.line_width);
        match pattern.kind {
            PatternKind::UniformLines => width / pattern.interval,
            PatternKind::ModulatedLines => width / pattern.min_interval(),
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

#[derive(Debug, Clone)]
pub struct LutOutcome {
    pub lut: DepthRatioLut,
    pub report: MonotonicityReport,
}

/// Builds and saves `lut.bin` and `lut_report.txt`. A rig whose nodes are all
/// degenerate is written out and then reported as an error.
pub fn cmd_build_lut(cfg: &RunConfig, out: &Path) -> Result<LutOutcome> {
    let rig = cfg.load_rig()?;
    let lut = DepthRatioLut::build(&rig, &cfg.lut)?;
    let report = lut.validate_monotonic(DEFAULT_FLAT_EPS);
    fs::create_dir_all(out)?;
    lut.save(out.join("lut.bin"))?;
    fs::write(out.join("lut_report.txt"), report_text(&rig, &report))?;
    if report.all_degenerate() {
        return Err(Error::DegenerateRig(format!(
            "all {} grid nodes of `{}` have a constant flow ratio",
            report.total(),
            rig.name
        )));
    }
    Ok(LutOutcome { lut, report })
}

fn report_text(rig: &RigCalibration, r: &MonotonicityReport) -> String {
    KvWriter::new()
        .put("rig", &rig.name)
        .put("nodes", r.total())
        .put("valid", r.valid_nodes)
        .put("degenerate", r.degenerate_nodes)
        .put("nonmonotone", r.nonmonotone_nodes)
        .put("invalid", r.invalid_nodes)
        .finish()
}

/// Writes `frame.ppm`, `truth_depth.pfm` and `truth_flow.pfm` (one colour
/// plane per pattern channel, NaN where undefined).
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<RenderOutput> {
    let rig = cfg.load_rig()?;
    let scene = cfg.load_scene()?;
    let render = render_frame(&scene, &rig)?;
    write_render(&render, out)?;
    Ok(render)
}

pub fn write_render(render: &RenderOutput, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    render.frame.save_ppm(out.join("frame.ppm"))?;
    render.truth_depth.save_pfm(out.join("truth_depth.pfm"))?;
    save_flows(&render.truth_flow, &out.join("truth_flow.pfm"))
}

/// Two flow fields as a colour PFM, each in its channel's plane.
pub fn save_flows(flows: &[FlowField; 2], path: &Path) -> Result<()> {
    let (w, h) = (flows[0].width, flows[0].height);
    let mut planes = vec![vec![f32::NAN; w * h]; 3];
    for f in flows {
        planes[f.channel.rgb_index()] = f.to_gray().data;
    }
    let refs: Vec<&[f32]> = planes.iter().map(Vec::as_slice).collect();
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    write_pfm_planes(w, h, &refs, &mut file)?;
    std::io::Write::flush(&mut file)?;
    Ok(())
}

/// Reads the flow of `rig`'s two patterns back from a colour PFM.
pub fn load_flows(rig: &RigCalibration, path: &Path) -> Result<[FlowField; 2]> {
    let (w, h, planes) = read_pfm_planes(fs::File::open(path)?)?;
    if planes.len() != 3 {
        return Err(Error::Format("flow file must be a colour PFM".into()));
    }
    let field = |i: usize| {
        let c = rig.pattern(i).channel;
        FlowField::from_gray(&crate::imageio::GrayImage { width: w, height: h, data: planes[c.rgb_index()].clone() }, c)
    };
    Ok([field(0), field(1)])
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub depth: DepthMap,
    pub diagnostics: ReconDiagnostics,
    pub flows: [FlowEstimate; 2],
}

impl Reconstruction {
    pub fn diagnostics_text(&self) -> String {
        let mut s = self.diagnostics.to_text();
        for (i, f) in self.flows.iter().enumerate() {
            s.push_str(&format!(
                "pattern{}.bands = {}\npattern{}.bands_valid = {}\npattern{}.flow_pixels = {}\n",
                i + 1,
                f.bands_total,
                i + 1,
                f.bands_valid,
                i + 1,
                f.field.valid_count()
            ));
        }
        s.push_str(&format!("coverage = {:?}\n", self.depth.coverage()));
        s
    }
}

/// Flow estimation on both pattern channels followed by table inversion.
pub fn reconstruct_frame(
    cfg: &RunConfig,
    rig: &RigCalibration,
    lut: &DepthRatioLut,
    frame: &RgbImage,
    sigma: f64,
) -> Result<Reconstruction> {
    if [frame.width, frame.height] != lut.resolution() || rig.camera.resolution != lut.resolution() {
        return Err(Error::DimensionMismatch(format!(
            "frame {}x{}, table {:?}, camera {:?}",
            frame.width,
            frame.height,
            lut.resolution(),
            rig.camera.resolution
        )));
    }
    let params = FlowParams { sigma, ..cfg.flow };
    let estimate = |i: usize| {
        let p = rig.pattern(i);
        let plane = extract_channel(frame, p.channel, cfg.unmix.as_ref());
        estimate_flow(&plane, p.channel, cfg.static_width_lines(p), &params)
    };
    let (a, b) = rayon::join(|| estimate(0), || estimate(1));
    let flows = [a?, b?];
    let (mut depth, diagnostics) = reconstruct_depth(&flows[0].field, &flows[1].field, lut)?;
    depth.meta = DepthMeta { rig: rig.name.clone(), ..DepthMeta::default() };
    Ok(Reconstruction { depth, diagnostics, flows })
}

/// Reconstructs a PPM frame; writes `depth.pfm`, `flow.pfm` and
/// `diagnostics.txt`. The table is read from `lut_path` or built from the
/// run configuration.
pub fn cmd_reconstruct(cfg: &RunConfig, frame_path: &Path, lut_path: Option<&Path>, out: &Path) -> Result<Reconstruction> {
    let rig = cfg.load_rig()?;
    let lut = match lut_path {
        Some(p) => DepthRatioLut::load(p)?,
        None => DepthRatioLut::build(&rig, &cfg.lut)?,
    };
    let frame = RgbImage::load_ppm(frame_path)?;
    let rec = reconstruct_frame(cfg, &rig, &lut, &frame, cfg.flow.sigma)?;
    fs::create_dir_all(out)?;
    rec.depth.save_pfm(out.join("depth.pfm"))?;
    save_flows(&[rec.flows[0].field.clone(), rec.flows[1].field.clone()], &out.join("flow.pfm"))?;
    fs::write(out.join("diagnostics.txt"), rec.diagnostics_text())?;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Plane { fit: PlaneFit, coverage: f64 },
    Truth(Comparison),
}

impl Evaluation {
    pub fn to_text(&self) -> String {
        match self {
            Evaluation::Plane { fit, coverage } => KvWriter::new()
                .put("mode", "plane")
                .floats("plane_rmse", &[fit.rmse])
                .floats("plane_normal", fit.normal.as_slice())
                .floats("plane_offset", &[fit.offset])
                .put("points", fit.inlier_count)
                .floats("coverage", &[*coverage])
                .finish(),
            Evaluation::Truth(c) => format!("mode = truth\n{}", c.to_text()),
        }
    }
}

/// Plane-fit residual of the depth map, or per-pixel statistics against a
/// ground-truth depth. Writes `metrics.txt` and a `depth.pgm` preview.
pub fn evaluate(cfg: &RunConfig, depth: &DepthMap, truth: Option<&DepthMap>) -> Result<Evaluation> {
    if depth.valid_count() == 0 {
        return Err(Error::EmptyComparison);
    }
    match truth {
        Some(t) => Ok(Evaluation::Truth(compare_to_ground_truth(depth, t)?)),
        None => {
            let rig = cfg.load_rig()?;
            let points: Vec<_> = depth_to_points(depth, &rig.camera)?.into_iter().map(|(_, p)| p).collect();
            Ok(Evaluation::Plane { fit: fit_plane_rmse(&points)?, coverage: depth.coverage() })
        }
    }
}

pub fn cmd_evaluate(cfg: &RunConfig, depth_path: &Path, truth_path: Option<&Path>, out: &Path) -> Result<Evaluation> {
    let depth = DepthMap::load_pfm(depth_path)?;
    let truth = truth_path.map(DepthMap::load_pfm).transpose()?;
    fs::create_dir_all(out)?;
    let mut pgm = std::io::BufWriter::new(fs::File::create(out.join("depth.pgm"))?);
    depth.to_gray().write_pgm(cfg.lut.z_min as f32, cfg.lut.z_max as f32, &mut pgm)?;
    std::io::Write::flush(&mut pgm)?;
    let eval = evaluate(cfg, &depth, truth.as_ref())?;
    fs::write(out.join("metrics.txt"), eval.to_text())?;
    if truth.is_none() {
        let rig = cfg.load_rig()?;
        let points = depth_to_points(&depth, &rig.camera)?;
        let mut csv = std::io::BufWriter::new(fs::File::create(out.join("points.csv"))?);
        write_points_csv(&points, &mut csv)?;
        std::io::Write::flush(&mut csv)?;
    }
    Ok(eval)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub exposure: f64,
    pub sigma: f64,
    /// Reconstructed share of the surface's pixels.
    pub coverage: f64,
    /// Plane-fit residual; NaN when fewer than three points remain.
    pub plane_rmse: f64,
    pub median_abs_err: f64,
    pub rmse: f64,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("# exposure sigma coverage plane_rmse median_abs_err rmse\n");
    for r in rows {
        s.push_str(&format!(
            "{:.3} {} {:.6} {:.6e} {:.6e} {:.6e}\n",
            r.exposure, r.sigma, r.coverage, r.plane_rmse, r.median_abs_err, r.rmse
        ));
    }
    s
}

/// Scores one reconstruction against the rendered truth.
pub fn score(rig: &RigCalibration, rec: &DepthMap, truth: &DepthMap) -> Result<(f64, f64, f64, f64)> {
    let surface = truth.valid_count().max(1) as f64;
    let hits = (0..rec.mask.len()).filter(|&i| rec.mask[i] && truth.mask[i]).count();
    let coverage = hits as f64 / surface;
    let (median, rmse) = match compare_to_ground_truth(rec, truth) {
        Ok(c) => (c.median_abs_err, c.rmse),
        Err(Error::EmptyComparison) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    let points: Vec<_> = depth_to_points(rec, &rig.camera)?.into_iter().map(|(_, p)| p).collect();
    let plane = fit_plane_rmse(&points).map_or(f64::NAN, |f| f.rmse);
    Ok((coverage, plane, median, rmse))
}

/// Renders the scene at every sweep exposure and reconstructs each frame at
/// every sweep sigma. Frames go to `exposure_<ms>/`, the table to
/// `sweep.txt`.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let rig = cfg.load_rig()?;
    let base = cfg.load_scene()?;
    let lut = DepthRatioLut::build(&rig, &cfg.lut)?;
    if lut.validate_monotonic(DEFAULT_FLAT_EPS).all_degenerate() {
        return Err(Error::DegenerateRig(rig.name.clone()));
    }
    let mut rows = Vec::new();
    for &exposure in &cfg.sweep_exposures {
        let scene = SceneSpec { exposure, ..base.clone() };
        let render = render_frame(&scene, &rig)?;
        write_render(&render, &out.join(format!("exposure_{:03}", (exposure * 1000.0).round() as i64)))?;
        for &sigma in &cfg.sweep_sigmas {
            let rec = reconstruct_frame(cfg, &rig, &lut, &render.frame, sigma)?;
            let (coverage, plane_rmse, median_abs_err, rmse) = score(&rig, &rec.depth, &render.truth_depth)?;
            rows.push(SweepRow { exposure, sigma, coverage, plane_rmse, median_abs_err, rmse });
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.txt"), sweep_table(&rows))?;
    Ok(rows)
}
