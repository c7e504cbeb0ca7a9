//! Camera and projector models for a one- or two-projector light-flow rig.
//!
//! The camera is a pinhole without distortion. A projector is treated as an
//! inverse camera: a camera-frame point `s` lands on the projector's pattern
//! at `f_h(R s + t)` with `f_h((x, y, z)) = -x / z`. Only the horizontal
//! pattern coordinate matters because the projected lines are vertical.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Smallest projector-frame depth accepted before a point counts as lying on
/// the projector's principal plane.
pub const MIN_PROJECTOR_DEPTH: f64 = 1e-9;

const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub resolution: [usize; 2],
}

impl CameraModel {
    pub fn new(focal_px: f64, principal_point: [f64; 2], resolution: [usize; 2]) -> Result<Self> {
        let cam = Self { focal_px, principal_point, resolution };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::Config(format!("camera focal length {} must be > 0", self.focal_px)));
        }
        if self.resolution[0] < 1 || self.resolution[1] < 1 {
            return Err(Error::Config("camera resolution must be at least 1x1".into()));
        }
        if !self.contains(self.principal_point) {
            return Err(Error::Config(format!(
                "principal point {:?} outside the {}x{} image",
                self.principal_point, self.resolution[0], self.resolution[1]
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.resolution[0]
    }

    pub fn height(&self) -> usize {
        self.resolution[1]
    }

    /// Pixel centres sit at integer coordinates; the image spans half a pixel
    /// beyond the outermost centres.
    pub fn contains(&self, pixel: [f64; 2]) -> bool {
        let inside = |v: f64, n: usize| v >= -0.5 && v <= n as f64 - 0.5;
        inside(pixel[0], self.resolution[0]) && inside(pixel[1], self.resolution[1])
    }

    pub fn pixel_ray(&self, pixel: [f64; 2]) -> Result<Ray> {
        if !self.contains(pixel) || !pixel.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("pixel {pixel:?} outside the image")));
        }
        Ok(Ray::new(
            (pixel[0] - self.principal_point[0]) / self.focal_px,
            (pixel[1] - self.principal_point[1]) / self.focal_px,
        ))
    }

    /// Perspective projection of a camera-frame point (no bounds check).
    pub fn project(&self, point: &Vector3<f64>) -> [f64; 2] {
        [
            self.focal_px * point.x / point.z + self.principal_point[0],
            self.focal_px * point.y / point.z + self.principal_point[1],
        ]
    }
}

/// A camera ray in normalized coordinates; the third component is exactly 1
/// so that `z * direction` is the point at depth `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(x: f64, y: f64) -> Self {
        Self { direction: Vector3::new(x, y, 1.0) }
    }

    pub fn at(&self, z: f64) -> Vector3<f64> {
        self.direction * z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorModel {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub resolution: [usize; 2],
    /// Camera-to-projector rotation.
    pub rotation: Matrix3<f64>,
    /// Camera-to-projector translation, meters.
    pub translation: Vector3<f64>,
}

impl ProjectorModel {
    pub fn new(
        focal_px: f64,
        principal_point: [f64; 2],
        resolution: [usize; 2],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let proj = Self { focal_px, principal_point, resolution, rotation, translation };
        proj.validate()?;
        Ok(proj)
    }

    /// Projector at camera-frame `position` with its optical axis through
    /// `target` and its vertical axis close to the camera's.
    pub fn look_at(
        position: [f64; 3],
        target: [f64; 3],
        focal_px: f64,
        resolution: [usize; 2],
    ) -> Result<Self> {
        let position = Vector3::from(position);
        let axis = (Vector3::from(target) - position).normalize();
        let x_axis = Vector3::y().cross(&axis);
        if x_axis.norm() < 1e-12 {
            return Err(Error::Config("projector axis parallel to the vertical".into()));
        }
        let x_axis = x_axis.normalize();
        let y_axis = axis.cross(&x_axis);
        let rotation = Matrix3::from_rows(&[x_axis.transpose(), y_axis.transpose(), axis.transpose()]);
        let translation = -(rotation * position);
        let principal = [resolution[0] as f64 / 2.0, resolution[1] as f64 / 2.0];
        Self::new(focal_px, principal, resolution, rotation, translation)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.focal_px.is_finite()) {
            return Err(Error::Config(format!("projector focal length {} must be > 0", self.focal_px)));
        }
        if self.resolution[0] < 1 || self.resolution[1] < 1 {
            return Err(Error::Config("projector resolution must be at least 1x1".into()));
        }
        let r = &self.rotation;
        let gram_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if gram_err > ROTATION_TOL || (r.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Config(format!(
                "projector rotation is not a proper rotation (orthogonality error {gram_err:e})"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("projector translation must be finite".into()));
        }
        Ok(())
    }

    pub fn pattern_width(&self) -> f64 {
        self.resolution[0] as f64
    }

    /// Camera-frame point expressed in the projector frame.
    pub fn to_projector_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Projector-frame point at depth `z` along `ray`, rejecting points on or
    /// behind the principal plane.
    fn transformed(&self, ray: &Ray, z: f64) -> Result<Vector3<f64>> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("depth {z} must be positive")));
        }
        let p = self.to_projector_frame(&ray.at(z));
        if p.z <= MIN_PROJECTOR_DEPTH {
            return Err(Error::DegenerateGeometry { depth: p.z });
        }
        Ok(p)
    }

    /// Normalized horizontal pattern coordinate `q_h = g(z)` lighting depth
    /// `z` along `ray`.
    pub fn g_eval(&self, ray: &Ray, z: f64) -> Result<f64> {
        let p = self.transformed(ray, z)?;
        Ok(-p.x / p.z)
    }

    /// `dq_h/dz`, signed.
    pub fn g_derivative(&self, ray: &Ray, z: f64) -> Result<f64> {
        let p = self.transformed(ray, z)?;
        let d = self.rotation * ray.direction;
        // q = -(a z + tx) / (c z + tz)
        Ok(-(d.x * self.translation.z - d.z * self.translation.x) / (p.z * p.z))
    }

    /// Projector pixel coordinates of a camera-frame point, or `None` when the
    /// point is behind the projector.
    pub fn pattern_pixel(&self, point: &Vector3<f64>) -> Option<[f64; 2]> {
        let p = self.to_projector_frame(point);
        if p.z <= MIN_PROJECTOR_DEPTH {
            return None;
        }
        Some([
            -p.x / p.z * self.focal_px + self.principal_point[0],
            -p.y / p.z * self.focal_px + self.principal_point[1],
        ])
    }

    pub fn to_pattern_px(&self, q_h: f64) -> f64 {
        q_h * self.focal_px + self.principal_point[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    UniformLines,
    ModulatedLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    None,
    /// Intervals grow towards the right edge: `u -> 2^u - 1`.
    WideRight,
    /// Mirror image: `u -> 2 - 2^(1-u)`.
    WideLeft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Red,
    Blue,
}

impl Channel {
    /// Index into an RGB triple.
    pub fn rgb_index(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Blue => 2,
        }
    }
}

fn unit_check(x: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {x} outside [0, 1]")))
    }
}

/// Remaps a normalized pattern coordinate to its modulated position.
pub fn modulate(u: f64, modulation: Modulation) -> Result<f64> {
    unit_check(u, "pattern coordinate")?;
    Ok(modulate_unchecked(u, modulation))
}

/// Inverse of [`modulate`].
pub fn demodulate(v: f64, modulation: Modulation) -> Result<f64> {
    unit_check(v, "modulated coordinate")?;
    Ok(demodulate_unchecked(v, modulation).expect("inside [0,1] the inverse exists"))
}

pub(crate) fn modulate_unchecked(u: f64, modulation: Modulation) -> f64 {
    match modulation {
        Modulation::None => u,
        Modulation::WideRight => u.exp2() - 1.0,
        Modulation::WideLeft => 2.0 - (1.0 - u).exp2(),
    }
}

/// Analytic continuation of the inverse modulation beyond `[0, 1]`; `None`
/// where the logarithm is undefined.
pub(crate) fn demodulate_unchecked(v: f64, modulation: Modulation) -> Option<f64> {
    match modulation {
        Modulation::None => Some(v),
        Modulation::WideRight if v > -1.0 => Some((v + 1.0).log2()),
        Modulation::WideLeft if v < 2.0 => Some(1.0 - (2.0 - v).log2()),
        _ => None,
    }
}

/// Derivative of the continued inverse modulation.
fn demodulate_slope(v: f64, modulation: Modulation) -> Option<f64> {
    let ln2 = std::f64::consts::LN_2;
    match modulation {
        Modulation::None => Some(1.0),
        Modulation::WideRight if v > -1.0 => Some(1.0 / ((v + 1.0) * ln2)),
        Modulation::WideLeft if v < 2.0 => Some(1.0 / ((2.0 - v) * ln2)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSpec {
    pub kind: PatternKind,
    /// Line spacing in projector pixels; the base spacing for modulated lines.
    pub interval: f64,
    pub line_width: f64,
    pub modulation: Modulation,
    pub channel: Channel,
}

impl PatternSpec {
    pub fn uniform(interval: f64, line_width: f64, channel: Channel) -> Self {
        Self { kind: PatternKind::UniformLines, interval, line_width, modulation: Modulation::None, channel }
    }

    pub fn modulated(interval: f64, line_width: f64, modulation: Modulation, channel: Channel) -> Self {
        Self { kind: PatternKind::ModulatedLines, interval, line_width, modulation, channel }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval > self.line_width && self.line_width > 0.0) {
            return Err(Error::Config(format!(
                "pattern needs interval > line_width > 0 (got {} and {})",
                self.interval, self.line_width
            )));
        }
        let modulated = self.modulation != Modulation::None;
        if modulated != (self.kind == PatternKind::ModulatedLines) {
            return Err(Error::Config("modulation must be set exactly for modulated patterns".into()));
        }
        Ok(())
    }

    /// Smallest spacing between adjacent lines, projector pixels.
    pub fn min_interval(&self) -> f64 {
        match self.modulation {
            Modulation::None => self.interval,
            // 2^u - 1 has slope ln 2 at its narrow end
            _ => self.interval * std::f64::consts::LN_2,
        }
    }

    /// Projector-pixel centre of line `k` if it exists on a pattern of the
    /// given width.
    pub fn line_center(&self, k: i64, pattern_width: f64) -> Option<f64> {
        let x = k as f64 * self.interval;
        if k < 0 || x > pattern_width {
            return None;
        }
        match self.kind {
            PatternKind::UniformLines => Some(x),
            PatternKind::ModulatedLines => {
                Some(modulate_unchecked(x / pattern_width, self.modulation) * pattern_width)
            }
        }
    }
}

/// Position of projector-pixel coordinate `x_px` in line-index units, using
/// the continued modulation outside the pattern.
pub(crate) fn line_index_at_px(pattern: &PatternSpec, x_px: f64, pattern_width: f64) -> Option<f64> {
    match pattern.kind {
        PatternKind::UniformLines => Some(x_px / pattern.interval),
        PatternKind::ModulatedLines => demodulate_unchecked(x_px / pattern_width, pattern.modulation)
            .map(|u| u * pattern_width / pattern.interval),
    }
}

/// Line-index coordinate of the normalized pattern coordinate `q_h`.
pub fn line_index_coord(proj: &ProjectorModel, pattern: &PatternSpec, q_h: f64) -> Result<f64> {
    let width = proj.pattern_width();
    let x_px = proj.to_pattern_px(q_h);
    if !(0.0..=width).contains(&x_px) {
        return Err(Error::OffPattern { coord: x_px, width });
    }
    Ok(line_index_at_px(pattern, x_px, width).expect("on-pattern coordinates are in the domain"))
}

/// `dL/dq_h` at `q_h`, with the modulation continued beyond the pattern.
pub(crate) fn line_index_slope(proj: &ProjectorModel, pattern: &PatternSpec, q_h: f64) -> Option<f64> {
    match pattern.kind {
        PatternKind::UniformLines => Some(proj.focal_px / pattern.interval),
        PatternKind::ModulatedLines => {
            let v = proj.to_pattern_px(q_h) / proj.pattern_width();
            demodulate_slope(v, pattern.modulation).map(|s| s * proj.focal_px / pattern.interval)
        }
    }
}

/// A pattern together with the index of the projector that casts it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternBinding {
    pub projector: usize,
    pub pattern: PatternSpec,
}

/// Camera plus projectors casting exactly two line patterns. Pattern 0 is
/// the numerator of the flow ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCalibration {
    pub name: String,
    pub camera: CameraModel,
    pub projectors: Vec<ProjectorModel>,
    pub patterns: [PatternBinding; 2],
}

impl RigCalibration {
    pub fn new(
        name: impl Into<String>,
        camera: CameraModel,
        projectors: Vec<ProjectorModel>,
        patterns: [PatternBinding; 2],
    ) -> Result<Self> {
        let rig = Self { name: name.into(), camera, projectors, patterns };
        rig.validate()?;
        Ok(rig)
    }

    /// Two projectors, one uniform pattern each.
    pub fn two_projector(
        name: impl Into<String>,
        camera: CameraModel,
        first: (ProjectorModel, PatternSpec),
        second: (ProjectorModel, PatternSpec),
    ) -> Result<Self> {
        Self::new(
            name,
            camera,
            vec![first.0, second.0],
            [
                PatternBinding { projector: 0, pattern: first.1 },
                PatternBinding { projector: 1, pattern: second.1 },
            ],
        )
    }

    /// One projector casting both modulated patterns.
    pub fn single_projector(
        name: impl Into<String>,
        camera: CameraModel,
        projector: ProjectorModel,
        patterns: [PatternSpec; 2],
    ) -> Result<Self> {
        Self::new(
            name,
            camera,
            vec![projector],
            [
                PatternBinding { projector: 0, pattern: patterns[0] },
                PatternBinding { projector: 0, pattern: patterns[1] },
            ],
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        for p in &self.projectors {
            p.validate()?;
        }
        for b in &self.patterns {
            b.pattern.validate()?;
            if b.projector >= self.projectors.len() {
                return Err(Error::Config(format!("pattern refers to missing projector {}", b.projector + 1)));
            }
        }
        let [a, b] = &self.patterns;
        if a.pattern.channel == b.pattern.channel {
            return Err(Error::Config("the two patterns must use distinct channels".into()));
        }
        match self.projectors.len() {
            1 => {
                let opposite = matches!(
                    (a.pattern.modulation, b.pattern.modulation),
                    (Modulation::WideRight, Modulation::WideLeft) | (Modulation::WideLeft, Modulation::WideRight)
                );
                if !opposite {
                    return Err(Error::Config(
                        "a single projector needs two modulated patterns with opposite modulation".into(),
                    ));
                }
            }
            2 => {
                if a.projector == b.projector {
                    return Err(Error::Config("each of two projectors carries one pattern".into()));
                }
                if a.pattern.kind != PatternKind::UniformLines || b.pattern.kind != PatternKind::UniformLines {
                    return Err(Error::Config("two-projector rigs use uniform line patterns".into()));
                }
            }
            n => return Err(Error::Config(format!("rig needs 1 or 2 projectors, got {n}"))),
        }
        Ok(())
    }

    pub fn projector_of(&self, pattern: usize) -> &ProjectorModel {
        &self.projectors[self.patterns[pattern].projector]
    }

    pub fn pattern(&self, pattern: usize) -> &PatternSpec {
        &self.patterns[pattern].pattern
    }

    /// Line-index coordinate of pattern `idx` lighting depth `z` on `ray`.
    /// Off-pattern positions use the continued mapping.
    pub fn line_index(&self, idx: usize, ray: &Ray, z: f64) -> Result<f64> {
        let proj = self.projector_of(idx);
        let pattern = self.pattern(idx);
        let q = proj.g_eval(ray, z)?;
        line_index_at_px(pattern, proj.to_pattern_px(q), proj.pattern_width())
            .ok_or_else(|| Error::Domain("modulation undefined at this depth".into()))
    }

    /// Signed `dL/dz` of pattern `idx` at depth `z` on `ray`.
    pub fn line_index_rate(&self, idx: usize, ray: &Ray, z: f64) -> Result<f64> {
        let proj = self.projector_of(idx);
        let q = proj.g_eval(ray, z)?;
        let dq = proj.g_derivative(ray, z)?;
        let slope = line_index_slope(proj, self.pattern(idx), q)
            .ok_or_else(|| Error::Domain("modulation undefined at this depth".into()))?;
        Ok(dq * slope)
    }

    /// `ln|dL_1/dz| - ln|dL_2/dz|` with the two derivative signs.
    pub fn log_flow_ratio_on_ray(&self, ray: &Ray, z: f64) -> Result<(f64, i8, i8)> {
        let d1 = self.line_index_rate(0, ray, z)?;
        let d2 = self.line_index_rate(1, ray, z)?;
        if d1 == 0.0 || d2 == 0.0 {
            return Err(Error::DegenerateGeometry { depth: z });
        }
        let sign = |v: f64| if v > 0.0 { 1 } else { -1 };
        Ok((d1.abs().ln() - d2.abs().ln(), sign(d1), sign(d2)))
    }

    /// Exact log flow ratio at a camera pixel, from the calibration.
    pub fn log_flow_ratio(&self, pixel: [f64; 2], z: f64) -> Result<f64> {
        let ray = self.camera.pixel_ray(pixel)?;
        Ok(self.log_flow_ratio_on_ray(&ray, z)?.0)
    }
}
