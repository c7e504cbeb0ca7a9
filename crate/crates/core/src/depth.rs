//! Depth from the two flow fields, point export and evaluation.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::band::FlowField;
use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::lut::DepthRatioLut;
use crate::rig::CameraModel;

/// Flows below this many line-index units are treated as no motion.
pub const FLOW_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMeta {
    pub rig: String,
    pub exposure: f64,
    /// Instant within the exposure the depth refers to.
    pub anchor: String,
}

impl Default for DepthMeta {
    fn default() -> Self {
        Self { rig: String::new(), exposure: 0.0, anchor: "mid-exposure".into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    pub meta: DepthMeta,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, mask: Vec<bool>, meta: DepthMeta) -> Result<Self> {
        if depth.len() != width * height || mask.len() != width * height {
            return Err(Error::DimensionMismatch(format!("depth buffers for {width}x{height}")));
        }
        Ok(Self { width, height, depth, mask, meta })
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn coverage(&self) -> f64 {
        self.valid_count() as f64 / self.mask.len() as f64
    }

    pub fn to_gray(&self) -> GrayImage {
        let data = self.depth.iter().zip(&self.mask).map(|(&z, &m)| if m { z as f32 } else { f32::NAN }).collect();
        GrayImage { width: self.width, height: self.height, data }
    }

    pub fn from_gray(image: &GrayImage, meta: DepthMeta) -> Self {
        let mask: Vec<bool> = image.data.iter().map(|v| v.is_finite()).collect();
        let depth = image.data.iter().map(|&v| if v.is_finite() { v as f64 } else { 0.0 }).collect();
        Self { width: image.width, height: image.height, depth, mask, meta }
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_gray().save_pfm(path)
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_gray(&GrayImage::load_pfm(path)?, DepthMeta::default()))
    }

    /// Copy with `delta` added to every valid depth.
    pub fn offset(&self, delta: f64) -> Self {
        Self { depth: self.depth.iter().map(|z| z + delta).collect(), ..self.clone() }
    }
}

/// Pixel accounting for one reconstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReconDiagnostics {
    pub pixels: usize,
    /// Either flow field has no value.
    pub flow_missing: usize,
    /// A flow is below [`FLOW_FLOOR`].
    pub flow_floor: usize,
    /// The ratio falls outside the table's depth range at this pixel.
    pub lut_range: usize,
    /// The pixel touches a non-invertible table node.
    pub lut_invalid: usize,
    pub reconstructed: usize,
}

impl ReconDiagnostics {
    pub fn to_text(&self) -> String {
        format!(
            "pixels = {}\nflow_missing = {}\nflow_floor = {}\nlut_range = {}\nlut_invalid = {}\nreconstructed = {}\n",
            self.pixels, self.flow_missing, self.flow_floor, self.lut_range, self.lut_invalid, self.reconstructed
        )
    }
}

#[derive(Clone, Copy)]
enum PixelOutcome {
    Depth(f64),
    Missing,
    Floor,
    Range,
    Invalid,
}

/// Per pixel, the depth whose tabulated log ratio equals `ln(flow1 / flow2)`.
/// Taking the quotient first makes the result exactly invariant to any
/// common scaling that is itself exact in floating point.
pub fn reconstruct_depth(
    flow1: &FlowField,
    flow2: &FlowField,
    lut: &DepthRatioLut,
) -> Result<(DepthMap, ReconDiagnostics)> {
    let [w, h] = lut.resolution();
    for f in [flow1, flow2] {
        if f.width != w || f.height != h {
            return Err(Error::DimensionMismatch(format!(
                "flow field {}x{} against a {w}x{h} table",
                f.width, f.height
            )));
        }
    }
    let outcomes: Vec<PixelOutcome> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !flow1.mask[i] || !flow2.mask[i] {
                return PixelOutcome::Missing;
            }
            let (a, b) = (flow1.flow[i], flow2.flow[i]);
            if a < FLOW_FLOOR || b < FLOW_FLOOR {
                return PixelOutcome::Floor;
            }
            let pixel = [(i % w) as f64, (i / w) as f64];
            match lut.h_invert(pixel, (a / b).ln()) {
                Ok(z) => PixelOutcome::Depth(z),
                Err(Error::OutOfRange { .. }) => PixelOutcome::Range,
                Err(_) => PixelOutcome::Invalid,
            }
        })
        .collect();
    let mut diag = ReconDiagnostics { pixels: w * h, ..Default::default() };
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            PixelOutcome::Depth(z) => {
                depth[i] = z;
                mask[i] = true;
                diag.reconstructed += 1;
            }
            PixelOutcome::Missing => diag.flow_missing += 1,
            PixelOutcome::Floor => diag.flow_floor += 1,
            PixelOutcome::Range => diag.lut_range += 1,
            PixelOutcome::Invalid => diag.lut_invalid += 1,
        }
    }
    Ok((DepthMap::new(w, h, depth, mask, DepthMeta::default())?, diag))
}

/// Camera-frame points `z * r` of every valid pixel, with their pixel
/// coordinates.
pub fn depth_to_points(depth: &DepthMap, camera: &CameraModel) -> Result<Vec<([usize; 2], Vector3<f64>)>> {
    if camera.resolution != [depth.width, depth.height] {
        return Err(Error::DimensionMismatch("depth map and camera resolution differ".into()));
    }
    let mut out = Vec::with_capacity(depth.valid_count());
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(z) = depth.get(x, y) {
                out.push(([x, y], camera.pixel_ray([x as f64, y as f64])?.at(z)));
            }
        }
    }
    Ok(out)
}

/// CSV export, one `x,y,z` point per line in camera coordinates.
pub fn write_points_csv(points: &[([usize; 2], Vector3<f64>)], mut w: impl Write) -> Result<()> {
    writeln!(w, "x,y,z")?;
    for (_, p) in points {
        writeln!(w, "{},{},{}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vector3<f64>,
    /// `normal . p = offset` on the plane.
    pub offset: f64,
    pub rmse: f64,
    pub inlier_count: usize,
}

/// Total-least-squares plane through `points`.
pub fn fit_plane_rmse(points: &[Vector3<f64>]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if l1 <= 1e-12 * l2.max(f64::MIN_POSITIVE) {
        return Err(Error::Fit("points are collinear or coincident".into()));
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let offset = normal.dot(&centroid);
    let ss: f64 = points.iter().map(|p| (normal.dot(p) - offset).powi(2)).sum();
    Ok(PlaneFit { normal, offset, rmse: (ss / n).sqrt(), inlier_count: points.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub median_abs_err: f64,
    pub rmse: f64,
    /// Fraction of all pixels valid in both maps.
    pub coverage: f64,
    pub count: usize,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        format!(
            "median_abs_err = {:?}\nrmse = {:?}\ncoverage = {:?}\ncount = {}\n",
            self.median_abs_err, self.rmse, self.coverage, self.count
        )
    }
}

pub fn compare_to_ground_truth(depth: &DepthMap, truth: &DepthMap) -> Result<Comparison> {
    if depth.width != truth.width || depth.height != truth.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} against {}x{}",
            depth.width, depth.height, truth.width, truth.height
        )));
    }
    let mut errs: Vec<f64> = (0..depth.depth.len())
        .filter(|&i| depth.mask[i] && truth.mask[i])
        .map(|i| (depth.depth[i] - truth.depth[i]).abs())
        .collect();
    if errs.is_empty() {
        return Err(Error::EmptyComparison);
    }
    let count = errs.len();
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / count as f64).sqrt();
    errs.sort_by(f64::total_cmp);
    let median_abs_err = if count % 2 == 1 { errs[count / 2] } else { 0.5 * (errs[count / 2 - 1] + errs[count / 2]) };
    Ok(Comparison { median_abs_err, rmse, coverage: count as f64 / depth.depth.len() as f64, count })
}
