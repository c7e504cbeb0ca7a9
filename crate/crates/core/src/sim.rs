//! Motion-blur renderer for translating analytic surfaces lit by the rig's
//! line patterns.
//!
//! The exposure window is centred on `t = 0`, so the scene description gives
//! the surface position at mid-exposure. Each pixel averages `time_samples`
//! instants spread uniformly over the window. At every instant the stripes are
//! integrated exactly across the pixel's horizontal footprint, taking the
//! pattern coordinate as linear between the two pixel edges. Pixels whose
//! footprint crosses a silhouette fall back to one point sample per instant at
//! a stratified sub-pixel offset.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::band::FlowField;
use crate::depth::{DepthMap, DepthMeta};
use crate::error::{Error, Result};
use crate::imageio::RgbImage;
use crate::kv::{KvDoc, KvWriter};
use crate::rig::{line_index_at_px, PatternKind, PatternSpec, ProjectorModel, Ray, RigCalibration};

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    /// Points with `normal . p = offset`; with `size` set, a `[width, height]`
    /// board centred on the plane's closest point to the camera.
    Plane { normal: Vector3<f64>, offset: f64, size: Option<[f64; 2]> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Surface {
    pub fn plane(normal: [f64; 3], offset: f64) -> Self {
        Surface::Plane { normal: Vector3::from(normal).normalize(), offset, size: None }
    }

    pub fn board(normal: [f64; 3], offset: f64, width: f64, height: f64) -> Self {
        Surface::Plane { normal: Vector3::from(normal).normalize(), offset, size: Some([width, height]) }
    }

    pub fn sphere(center: [f64; 3], radius: f64) -> Self {
        Surface::Sphere { center: Vector3::from(center), radius }
    }

    /// Smallest positive depth along `ray` hitting the surface displaced by
    /// `shift`.
    pub fn intersect(&self, ray: &Ray, shift: &Vector3<f64>) -> Option<f64> {
        let r = &ray.direction;
        match self {
            Surface::Plane { normal, offset, size } => {
                let denom = normal.dot(r);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let z = (offset + normal.dot(shift)) / denom;
                if !(z > 0.0) {
                    return None;
                }
                if let Some([w, h]) = size {
                    let (u, v) = board_axes(normal);
                    let rel = r * z - (normal * *offset + shift);
                    if rel.dot(&u).abs() > w / 2.0 || rel.dot(&v).abs() > h / 2.0 {
                        return None;
                    }
                }
                Some(z)
            }
            Surface::Sphere { center, radius } => {
                let c = center + shift;
                let a = r.norm_squared();
                let b = r.dot(&c);
                let disc = b * b - a * (c.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                [(b - root) / a, (b + root) / a].into_iter().find(|&z| z > 0.0)
            }
        }
    }
}

impl Surface {
    /// Outward normal at a surface point `p` of the surface displaced by
    /// `shift`.
    pub fn normal_at(&self, p: &Vector3<f64>, shift: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Surface::Plane { normal, .. } => *normal,
            Surface::Sphere { center, .. } => (p - (center + shift)).normalize(),
        }
    }
}

/// In-plane board axes: `u` is the camera x axis projected onto the plane.
fn board_axes(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let x = Vector3::x();
    let mut u = x - normal * normal.dot(&x);
    if u.norm() < 1e-9 {
        u = Vector3::y() - normal * normal.dot(&Vector3::y());
    }
    let u = u.normalize();
    (u, normal.cross(&u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub surface: Surface,
    /// Rigid translation velocity, m/s.
    pub velocity: Vector3<f64>,
    /// Exposure duration, s.
    pub exposure: f64,
    pub time_samples: usize,
    pub albedo: f64,
    pub background: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(surface: Surface, velocity: [f64; 3], exposure: f64) -> Self {
        Self {
            surface,
            velocity: Vector3::from(velocity),
            exposure,
            time_samples: 64,
            albedo: 0.9,
            background: 0.0,
            noise_std: 0.01,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exposure > 0.0) {
            return Err(Error::Config("exposure must be positive".into()));
        }
        if self.time_samples < 2 {
            return Err(Error::Config("need at least 2 time samples".into()));
        }
        if let Surface::Sphere { radius, .. } = self.surface {
            if !(radius > 0.0) {
                return Err(Error::Config("sphere radius must be positive".into()));
            }
        }
        if let Surface::Plane { normal, size, .. } = &self.surface {
            if !(normal.norm() > 0.0) {
                return Err(Error::Config("plane normal must be non-zero".into()));
            }
            if let Some([w, h]) = size {
                if !(*w > 0.0 && *h > 0.0) {
                    return Err(Error::Config("board size must be positive".into()));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.albedo) || !(0.0..=1.0).contains(&self.background) {
            return Err(Error::Config("albedo and background must lie in [0, 1]".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Depth along `ray` at time `time` (seconds from mid-exposure).
    pub fn intersect(&self, ray: &Ray, time: f64) -> Option<f64> {
        self.surface.intersect(ray, &(self.velocity * time))
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(|k| {
            matches!(
                k,
                "surface" | "plane.normal" | "plane.offset" | "plane.size" | "sphere.center" | "sphere.radius"
                    | "velocity" | "exposure" | "samples" | "albedo" | "background" | "noise" | "seed"
            )
        })?;
        let surface = match doc.str("surface")? {
            "plane" => {
                let normal = doc.floats::<3>("plane.normal")?;
                let offset = doc.get("plane.offset")?;
                if doc.contains("plane.size") {
                    let [w, h] = doc.floats::<2>("plane.size")?;
                    Surface::board(normal, offset, w, h)
                } else {
                    Surface::plane(normal, offset)
                }
            }
            "sphere" => Surface::sphere(doc.floats::<3>("sphere.center")?, doc.get("sphere.radius")?),
            other => return Err(Error::Config(format!("unknown surface `{other}`"))),
        };
        let mut scene = SceneSpec::new(surface, doc.floats::<3>("velocity")?, doc.get("exposure")?);
        scene.time_samples = doc.get_or("samples", scene.time_samples)?;
        scene.albedo = doc.get_or("albedo", scene.albedo)?;
        scene.background = doc.get_or("background", scene.background)?;
        scene.noise_std = doc.get_or("noise", scene.noise_std)?;
        scene.seed = doc.get_or("seed", scene.seed)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_kv_text(&self) -> String {
        let mut w = KvWriter::new();
        match &self.surface {
            Surface::Plane { normal, offset, size } => {
                w.put("surface", "plane").floats("plane.normal", normal.as_slice()).floats("plane.offset", &[*offset]);
                if let Some(s) = size {
                    w.floats("plane.size", s);
                }
            }
            Surface::Sphere { center, radius } => {
                w.put("surface", "sphere").floats("sphere.center", center.as_slice()).floats("sphere.radius", &[*radius]);
            }
        }
        w.floats("velocity", self.velocity.as_slice())
            .floats("exposure", &[self.exposure])
            .put("samples", self.time_samples)
            .floats("albedo", &[self.albedo])
            .floats("background", &[self.background])
            .floats("noise", &[self.noise_std])
            .put("seed", self.seed)
            .finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }
}

/// 1 when the camera-frame `point` is lit by a line of `pattern`, else 0.
pub fn pattern_intensity(proj: &ProjectorModel, pattern: &PatternSpec, point: &Vector3<f64>) -> f64 {
    let Some([x, y]) = proj.pattern_pixel(point) else {
        return 0.0;
    };
    let [w, h] = [proj.resolution[0] as f64, proj.resolution[1] as f64];
    if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
        return 0.0;
    }
    let half = pattern.line_width / 2.0;
    let nearest = match pattern.kind {
        PatternKind::UniformLines => (x / pattern.interval).round() as i64,
        PatternKind::ModulatedLines => match line_index_at_px(pattern, x, w) {
            Some(l) => l.round() as i64,
            None => return 0.0,
        },
    };
    let lit = (nearest - 1..=nearest + 1)
        .filter_map(|k| pattern.line_center(k, w))
        .any(|c| (x - c).abs() <= half);
    if lit { 1.0 } else { 0.0 }
}

/// Lit length of the horizontal projector-pixel span `[a, b]`, `a <= b`.
fn lit_length(pattern: &PatternSpec, width: f64, a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(0.0), b.min(width));
    if !(b > a) {
        return 0.0;
    }
    let half = pattern.line_width / 2.0;
    let (Some(la), Some(lb)) = (
        line_index_at_px(pattern, (a - half).max(0.0), width),
        line_index_at_px(pattern, (b + half).min(width), width),
    ) else {
        return 0.0;
    };
    (la.floor() as i64 - 1..=lb.ceil() as i64 + 1)
        .filter_map(|k| pattern.line_center(k, width))
        .map(|c| ((c + half).min(b) - (c - half).max(a)).max(0.0))
        .sum()
}

/// Fraction of the camera-pixel footprint between surface points `left` and
/// `right` (its two horizontal edges) that is lit by `pattern`. The pattern
/// coordinate is taken as linear across the footprint.
pub fn pattern_coverage(
    proj: &ProjectorModel,
    pattern: &PatternSpec,
    left: &Vector3<f64>,
    right: &Vector3<f64>,
) -> f64 {
    let (Some([xa, ya]), Some([xb, yb])) = (proj.pattern_pixel(left), proj.pattern_pixel(right)) else {
        return 0.0;
    };
    let h = proj.resolution[1] as f64;
    let y = 0.5 * (ya + yb);
    if !(0.0..=h).contains(&y) {
        return 0.0;
    }
    let (lo, hi) = if xa <= xb { (xa, xb) } else { (xb, xa) };
    if hi - lo < 1e-9 {
        return pattern_intensity(proj, pattern, &(0.5 * (left + right)));
    }
    lit_length(pattern, proj.pattern_width(), lo, hi) / (hi - lo)
}

/// Whether `point` on the surface faces both the camera and projector centre
/// `source` (no attached shadow).
fn faces(normal: &Vector3<f64>, point: &Vector3<f64>, source: &Vector3<f64>) -> bool {
    normal.dot(&(source - point)) * normal.dot(&(-point)) > 0.0
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub frame: RgbImage,
    pub truth_depth: DepthMap,
    /// Line-index displacement over the exposure, one per pattern.
    pub truth_flow: [FlowField; 2],
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Sub-pixel offsets in `(-0.5, 0.5)`, one per time sample, decorrelated from
/// the time ordering.
fn stratified_offsets(n: usize) -> Vec<f64> {
    let mut step = ((n as f64) * 0.618_034).round().max(1.0) as usize;
    while gcd(step, n) != 1 {
        step += 1;
    }
    (0..n).map(|k| (((k * step) % n) as f64 + 0.5) / n as f64 - 0.5).collect()
}

/// Renders one motion-blurred frame plus its ground truth.
pub fn render_frame(scene: &SceneSpec, rig: &RigCalibration) -> Result<RenderOutput> {
    scene.validate()?;
    rig.validate()?;
    let cam = &rig.camera;
    let [width, height] = cam.resolution;
    let n = scene.time_samples;
    let times: Vec<f64> = (0..n).map(|k| ((k as f64 + 0.5) / n as f64 - 0.5) * scene.exposure).collect();
    let offsets = stratified_offsets(n);
    let noise = if scene.noise_std > 0.0 {
        Some(Normal::new(0.0, scene.noise_std).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let channels = [rig.pattern(0).channel.rgb_index(), rig.pattern(1).channel.rgb_index()];

    let sources: Vec<Vector3<f64>> = (0..2)
        .map(|i| {
            let p = rig.projector_of(i);
            -(p.rotation.transpose() * p.translation)
        })
        .collect();
    let ray_at = |x: f64, y: f64| {
        Ray::new((x - cam.principal_point[0]) / cam.focal_px, (y - cam.principal_point[1]) / cam.focal_px)
    };

    let mut frame = RgbImage::new(width, height);
    frame.data.par_chunks_mut(width * 3).enumerate().for_each(|(y, row)| {
        let yf = y as f64;
        let mut acc = vec![[0.0f64; 3]; width];
        let mut edges: Vec<Option<Vector3<f64>>> = vec![None; width + 1];
        for (t, du) in times.iter().zip(&offsets) {
            let shift = scene.velocity * *t;
            for (e, slot) in edges.iter_mut().enumerate() {
                let ray = ray_at(e as f64 - 0.5, yf);
                *slot = scene.surface.intersect(&ray, &shift).map(|z| ray.at(z));
            }
            for (x, a) in acc.iter_mut().enumerate() {
                let (left, right) = (edges[x], edges[x + 1]);
                let full = left.is_some() && right.is_some();
                let (lit_point, hit) = if full {
                    (0.5 * (left.unwrap() + right.unwrap()), true)
                } else {
                    let ray = ray_at(x as f64 + du, yf);
                    match scene.surface.intersect(&ray, &shift) {
                        Some(z) => (ray.at(z), true),
                        None => (Vector3::zeros(), false),
                    }
                };
                if !hit {
                    a.iter_mut().for_each(|v| *v += scene.background);
                    continue;
                }
                let normal = scene.surface.normal_at(&lit_point, &shift);
                for (i, &c) in channels.iter().enumerate() {
                    if !faces(&normal, &lit_point, &sources[i]) {
                        continue;
                    }
                    let (proj, pattern) = (rig.projector_of(i), rig.pattern(i));
                    let lit = if full {
                        pattern_coverage(proj, pattern, &left.unwrap(), &right.unwrap())
                    } else {
                        pattern_intensity(proj, pattern, &lit_point)
                    };
                    a[c] += scene.albedo * lit;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(scene.seed ^ splitmix(y as u64)));
        for (x, a) in acc.iter().enumerate() {
            for c in 0..3 {
                let mut v = a[c] / n as f64;
                if let Some(dist) = &noise {
                    v += dist.sample(&mut rng);
                }
                row[x * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    });

    let half = scene.exposure / 2.0;
    let mut depth = vec![0.0; width * height];
    let mut depth_mask = vec![false; width * height];
    let mut flows = [vec![0.0; width * height], vec![0.0; width * height]];
    let mut flow_masks = [vec![false; width * height], vec![false; width * height]];
    for y in 0..height {
        for x in 0..width {
            let idx = y * width + x;
            let ray = cam.pixel_ray([x as f64, y as f64])?;
            if let Some(z) = scene.intersect(&ray, 0.0) {
                depth[idx] = z;
                depth_mask[idx] = true;
            }
            let (Some(z0), Some(z1)) = (scene.intersect(&ray, -half), scene.intersect(&ray, half)) else {
                continue;
            };
            for i in 0..2 {
                if let (Ok(l0), Ok(l1)) = (rig.line_index(i, &ray, z0), rig.line_index(i, &ray, z1)) {
                    flows[i][idx] = (l1 - l0).abs();
                    flow_masks[i][idx] = true;
                }
            }
        }
    }
    let meta = DepthMeta { rig: rig.name.clone(), exposure: scene.exposure, anchor: "mid-exposure".into() };
    let truth_depth = DepthMap::new(width, height, depth, depth_mask, meta)?;
    let [f0, f1] = flows;
    let [m0, m1] = flow_masks;
    let truth_flow = [
        FlowField::new(width, height, f0, m0, rig.pattern(0).channel)?,
        FlowField::new(width, height, f1, m1, rig.pattern(1).channel)?,
    ];
    Ok(RenderOutput { frame, truth_depth, truth_flow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::rig::{Channel, Modulation};
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;

    #[test]
    fn intersect_cases() {
        let ray = Ray::new(0.0, 0.0);
        let plane = SceneSpec::new(Surface::plane([0.0, 0.0, 1.0], 0.6), [0.0, 0.0, 0.2], 0.1);
        assert_abs_diff_eq!(plane.intersect(&ray, 0.0).unwrap(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(plane.intersect(&ray, 0.5).unwrap(), 0.7, epsilon = 1e-15);
        let sphere = Surface::sphere([0.0, 0.0, 1.0], 0.1);
        assert_abs_diff_eq!(sphere.intersect(&ray, &Vector3::zeros()).unwrap(), 0.9, epsilon = 1e-15);
        assert!(sphere.intersect(&Ray::new(0.5, 0.0), &Vector3::zeros()).is_none());
        let board = Surface::board([0.0, 0.0, 1.0], 0.6, 0.6, 0.4);
        assert!(board.intersect(&Ray::new(0.49, 0.0), &Vector3::zeros()).is_some());
        assert!(board.intersect(&Ray::new(0.51, 0.0), &Vector3::zeros()).is_none());
        assert!(board.intersect(&Ray::new(0.0, 0.34), &Vector3::zeros()).is_none());
    }

    fn facing_projector() -> ProjectorModel {
        ProjectorModel::new(1000.0, [640.0, 400.0], [1280, 800], Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    /// Camera-frame point at depth 1 that projects to projector pixel `x`.
    fn point_at_px(x: f64) -> Vector3<f64> {
        Vector3::new(-(x - 640.0) / 1000.0, 0.0, 1.0)
    }

    #[test]
    fn uniform_lines_lit_at_centers_only() {
        let proj = facing_projector();
        let pattern = PatternSpec::uniform(40.0, 4.0, Channel::Red);
        assert_eq!(pattern_intensity(&proj, &pattern, &point_at_px(120.0)), 1.0);
        assert_eq!(pattern_intensity(&proj, &pattern, &point_at_px(121.9)), 1.0);
        assert_eq!(pattern_intensity(&proj, &pattern, &point_at_px(140.0)), 0.0);
        assert_eq!(pattern_intensity(&proj, &pattern, &point_at_px(-20.0)), 0.0);
        assert_eq!(pattern_intensity(&proj, &pattern, &Vector3::new(0.0, 0.0, -1.0)), 0.0);
    }

    #[test]
    fn coverage_integrates_point_samples() {
        let proj = facing_projector();
        let pattern = PatternSpec::uniform(40.0, 4.0, Channel::Red);
        let cov = |a: f64, b: f64| pattern_coverage(&proj, &pattern, &point_at_px(a), &point_at_px(b));
        assert_abs_diff_eq!(cov(116.0, 124.0), 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(cov(119.0, 121.0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cov(130.0, 134.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov(100.0, 180.0), 0.1, epsilon = 1e-9);
        // midpoint rule over dense point samples
        for (a, b) in [(117.3, 118.9), (95.5, 163.25), (121.0, 122.7)] {
            let n = 20_000;
            let mean = (0..n)
                .map(|i| pattern_intensity(&proj, &pattern, &point_at_px(a + (b - a) * (i as f64 + 0.5) / n as f64)))
                .sum::<f64>()
                / n as f64;
            assert_abs_diff_eq!(cov(a, b), mean, epsilon = 1e-3);
        }
    }

    #[test]
    fn attached_shadow_needs_both_views_on_one_side() {
        let n = Vector3::new(0.0, 0.0, -1.0);
        let p = Vector3::new(0.0, 0.0, 1.0);
        assert!(faces(&n, &p, &Vector3::new(0.3, 0.0, 0.0)));
        assert!(!faces(&n, &p, &Vector3::new(0.0, 0.0, 2.0)));
        assert!(faces(&-n, &p, &Vector3::new(0.3, 0.0, 0.0)));
    }

    #[test]
    fn modulated_gaps_double_across_pattern() {
        let proj = facing_projector();
        let pattern = PatternSpec::modulated(40.0, 3.0, Modulation::WideRight, Channel::Red);
        // scan the lit runs along the pattern and measure their spacing
        let mut centers = Vec::new();
        let mut run: Option<f64> = None;
        let step = 0.05;
        let mut x = 0.0;
        while x <= 1280.0 {
            let lit = pattern_intensity(&proj, &pattern, &point_at_px(x)) > 0.0;
            match (lit, run) {
                (true, None) => run = Some(x),
                (false, Some(start)) => {
                    centers.push((start + x - step) / 2.0);
                    run = None;
                }
                _ => {}
            }
            x += step;
        }
        let gaps: Vec<f64> = centers.windows(2).map(|w| w[1] - w[0]).collect();
        // spacing follows d(2^u)/du, so the ratio of two gaps is 2^(u_b - u_a)
        let n = centers.len();
        let u = |x: f64| (x / 1280.0 + 1.0).log2();
        let expected = 2f64.powf(u(0.5 * (centers[n - 1] + centers[n - 2])) - u(0.5 * (centers[1] + centers[2])));
        let ratio = gaps[gaps.len() - 1] / gaps[1];
        assert!((ratio / expected - 1.0).abs() < 0.02, "gap ratio {ratio} vs {expected}");
        assert!(expected > 1.8);
        assert!(gaps.windows(2).all(|w| w[1] > w[0] - 0.2));
    }

    #[test]
    fn scene_file_round_trip() {
        let mut scene = SceneSpec::new(Surface::board([0.0, 0.1, 1.0], 0.6, 0.6, 0.4), [0.0, 0.0, 0.05], 0.3);
        scene.noise_std = 0.01;
        scene.seed = 42;
        let back = SceneSpec::from_kv_text(&scene.to_kv_text()).unwrap();
        assert_eq!(back, scene);
        assert!(SceneSpec::from_kv_text("surface = cube\nvelocity = 0 0 0\nexposure = 1").is_err());
        assert!(SceneSpec::from_kv_text(&format!("{}bogus = 1\n", scene.to_kv_text())).is_err());
    }

    #[test]
    fn scene_validation() {
        let mut s = SceneSpec::new(Surface::sphere([0.0, 0.0, 1.0], 0.1), [0.0; 3], 0.1);
        s.time_samples = 1;
        assert!(s.validate().is_err());
        let s = SceneSpec::new(Surface::sphere([0.0, 0.0, 1.0], -0.1), [0.0; 3], 0.1);
        assert!(s.validate().is_err());
        let s = SceneSpec::new(Surface::sphere([0.0, 0.0, 1.0], 0.1), [0.0; 3], 0.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn offsets_are_a_permutation() {
        for n in [2, 16, 64, 100] {
            let mut o = stratified_offsets(n);
            o.sort_by(f64::total_cmp);
            for (k, v) in o.iter().enumerate() {
                assert_abs_diff_eq!(*v, (k as f64 + 0.5) / n as f64 - 0.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn static_scene_has_zero_truth_flow_and_exact_depth() {
        let mut rig = presets::converging_rig();
        rig.camera = crate::rig::CameraModel::new(70.0, [40.0, 30.0], [80, 60]).unwrap();
        let scene = SceneSpec::new(Surface::plane([0.0, 0.0, 1.0], 0.6), [0.0; 3], 0.1);
        let out = render_frame(&scene, &rig).unwrap();
        assert!(out.truth_flow.iter().all(|f| f.flow.iter().all(|&v| v == 0.0)));
        let ray = rig.camera.pixel_ray([13.0, 7.0]).unwrap();
        assert_eq!(out.truth_depth.depth[7 * 80 + 13], scene.intersect(&ray, 0.0).unwrap());
        assert!(out.frame.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
