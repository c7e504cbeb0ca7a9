//! Per-pixel depth to log-flow-ratio table and its inverse.
//!
//! For a camera pixel the log ratio `h(z) = ln|dL_1/dz| - ln|dL_2/dz|` of the
//! two patterns' line-index rates depends on depth alone. It is sampled on a
//! coarse pixel grid at `n_samples` depths. At any pixel the four surrounding
//! node curves are blended bilinearly and a measured log ratio is inverted on
//! the blended curve by piecewise-linear interpolation.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rig::RigCalibration;

/// Nodes whose log ratio spans less than this over the working range carry
/// no depth information.
pub const DEFAULT_FLAT_EPS: f64 = 1e-6;

const MAGIC: &[u8; 8] = b"LFLUTBIN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutParams {
    pub z_min: f64,
    pub z_max: f64,
    pub n_samples: usize,
    pub grid_stride: usize,
}

impl Default for LutParams {
    fn default() -> Self {
        Self { z_min: 0.4, z_max: 1.2, n_samples: 256, grid_stride: 16 }
    }
}

impl LutParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_min > 0.0 && self.z_max > self.z_min && self.z_max.is_finite()) {
            return Err(Error::Config(format!("bad depth range [{}, {}]", self.z_min, self.z_max)));
        }
        if self.n_samples < 8 {
            return Err(Error::Config(format!("need at least 8 depth samples, got {}", self.n_samples)));
        }
        if self.grid_stride == 0 {
            return Err(Error::Config("grid stride must be positive".into()));
        }
        Ok(())
    }

    pub fn z_samples(&self) -> Vec<f64> {
        let n = self.n_samples;
        (0..n)
            .map(|k| self.z_min + (self.z_max - self.z_min) * k as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeState {
    Valid = 0,
    /// Geometry failed at some depth or a derivative changed sign.
    Invalid = 1,
    /// `h` is flat over the working range.
    Degenerate = 2,
    NonMonotone = 3,
}

impl NodeState {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Self::Valid,
            1 => Self::Invalid,
            2 => Self::Degenerate,
            3 => Self::NonMonotone,
            other => return Err(Error::Format(format!("unknown node state {other}"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Valid => "valid",
            Self::Invalid => "invalid",
            Self::Degenerate => "degenerate",
            Self::NonMonotone => "nonmonotone",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MonotonicityReport {
    pub valid_nodes: usize,
    pub degenerate_nodes: usize,
    pub nonmonotone_nodes: usize,
    pub invalid_nodes: usize,
}

impl MonotonicityReport {
    pub fn total(&self) -> usize {
        self.valid_nodes + self.degenerate_nodes + self.nonmonotone_nodes + self.invalid_nodes
    }

    /// No node can be inverted.
    pub fn all_degenerate(&self) -> bool {
        self.valid_nodes == 0
    }
}

/// Classifies one node's samples; returns the state and the direction of
/// monotonicity (+1 increasing, -1 decreasing, 0 otherwise).
fn classify(h: &[f64], flat_eps: f64) -> (NodeState, i8) {
    let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo < flat_eps {
        return (NodeState::Degenerate, 0);
    }
    let increasing = h.windows(2).all(|w| w[1] > w[0]);
    let decreasing = h.windows(2).all(|w| w[1] < w[0]);
    match (increasing, decreasing) {
        (true, _) => (NodeState::Valid, 1),
        (_, true) => (NodeState::Valid, -1),
        _ => (NodeState::NonMonotone, 0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRatioLut {
    width: usize,
    height: usize,
    stride: usize,
    nx: usize,
    ny: usize,
    z_samples: Vec<f64>,
    /// Node-major: `h_values[node * n + k]`.
    h_values: Vec<f64>,
    sign1: Vec<i8>,
    sign2: Vec<i8>,
    monotone_dir: Vec<i8>,
    state: Vec<NodeState>,
}

fn grid_len(extent: usize, stride: usize) -> usize {
    if extent <= 1 {
        1
    } else {
        (extent - 1).div_ceil(stride) + 1
    }
}

struct NodeSamples {
    h: Vec<f64>,
    sign1: i8,
    sign2: i8,
    ok: bool,
}

fn sample_node(rig: &RigCalibration, pixel: [f64; 2], zs: &[f64]) -> NodeSamples {
    let mut out = NodeSamples { h: vec![f64::NAN; zs.len()], sign1: 0, sign2: 0, ok: true };
    let Ok(ray) = rig.camera.pixel_ray(pixel) else {
        out.ok = false;
        return out;
    };
    for (k, &z) in zs.iter().enumerate() {
        match rig.log_flow_ratio_on_ray(&ray, z) {
            Ok((h, s1, s2)) => {
                if k == 0 {
                    out.sign1 = s1;
                    out.sign2 = s2;
                } else if s1 != out.sign1 || s2 != out.sign2 {
                    out.ok = false;
                }
                out.h[k] = h;
            }
            Err(_) => out.ok = false,
        }
    }
    out
}

impl DepthRatioLut {
    /// Samples `h` at every grid node of the rig's camera image.
    pub fn build(rig: &RigCalibration, params: &LutParams) -> Result<Self> {
        params.validate()?;
        let [width, height] = rig.camera.resolution;
        let stride = params.grid_stride;
        let (nx, ny) = (grid_len(width, stride), grid_len(height, stride));
        let zs = params.z_samples();
        let n = zs.len();

        let node_pos = |i: usize, extent: usize| ((i * stride).min(extent - 1)) as f64;
        let nodes: Vec<NodeSamples> = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (ix, iy) = (idx % nx, idx / nx);
                sample_node(rig, [node_pos(ix, width), node_pos(iy, height)], &zs)
            })
            .collect();

        let mut lut = Self {
            width,
            height,
            stride,
            nx,
            ny,
            z_samples: zs,
            h_values: Vec::with_capacity(nx * ny * n),
            sign1: Vec::with_capacity(nx * ny),
            sign2: Vec::with_capacity(nx * ny),
            monotone_dir: Vec::with_capacity(nx * ny),
            state: Vec::with_capacity(nx * ny),
        };
        for node in nodes {
            let (state, dir) = if node.ok { classify(&node.h, DEFAULT_FLAT_EPS) } else { (NodeState::Invalid, 0) };
            lut.h_values.extend_from_slice(&node.h);
            lut.sign1.push(node.sign1);
            lut.sign2.push(node.sign2);
            lut.monotone_dir.push(dir);
            lut.state.push(state);
        }
        if lut.state.iter().all(|&s| s == NodeState::Invalid) {
            return Err(Error::Build("every grid node is geometrically invalid".into()));
        }
        Ok(lut)
    }

    pub fn resolution(&self) -> [usize; 2] {
        [self.width, self.height]
    }

    pub fn grid_stride(&self) -> usize {
        self.stride
    }

    pub fn grid_shape(&self) -> [usize; 2] {
        [self.nx, self.ny]
    }

    pub fn z_samples(&self) -> &[f64] {
        &self.z_samples
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z_samples[0], *self.z_samples.last().expect("non-empty"))
    }

    /// Camera pixel of node `(ix, iy)`.
    pub fn node_pixel(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            ((ix * self.stride).min(self.width - 1)) as f64,
            ((iy * self.stride).min(self.height - 1)) as f64,
        ]
    }

    fn node(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn node_state(&self, ix: usize, iy: usize) -> NodeState {
        self.state[self.node(ix, iy)]
    }

    pub fn node_h_values(&self, ix: usize, iy: usize) -> &[f64] {
        let n = self.z_samples.len();
        let i = self.node(ix, iy);
        &self.h_values[i * n..(i + 1) * n]
    }

    pub fn node_signs(&self, ix: usize, iy: usize) -> (i8, i8) {
        let i = self.node(ix, iy);
        (self.sign1[i], self.sign2[i])
    }

    pub fn node_monotone_dir(&self, ix: usize, iy: usize) -> i8 {
        self.monotone_dir[self.node(ix, iy)]
    }

    /// Counts node classes, re-deriving them from the stored samples with the
    /// given flatness threshold.
    pub fn validate_monotonic(&self, flat_eps: f64) -> MonotonicityReport {
        let mut report = MonotonicityReport::default();
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let state = if self.node_state(ix, iy) == NodeState::Invalid {
                    NodeState::Invalid
                } else {
                    classify(self.node_h_values(ix, iy), flat_eps).0
                };
                match state {
                    NodeState::Valid => report.valid_nodes += 1,
                    NodeState::Invalid => report.invalid_nodes += 1,
                    NodeState::Degenerate => report.degenerate_nodes += 1,
                    NodeState::NonMonotone => report.nonmonotone_nodes += 1,
                }
            }
        }
        report
    }

    fn axis_cell(coord: f64, stride: usize, n: usize, extent: usize) -> (usize, f64) {
        if n == 1 {
            return (0, 0.0);
        }
        let c = coord.clamp(0.0, (extent - 1) as f64);
        let i = ((c / stride as f64).floor() as usize).min(n - 2);
        let x0 = (i * stride) as f64;
        let x1 = ((i + 1) * stride).min(extent - 1) as f64;
        (i, ((c - x0) / (x1 - x0)).clamp(0.0, 1.0))
    }

    /// The up-to-four nodes around `pixel` with their bilinear weights;
    /// zero-weight corners are skipped.
    fn corners(&self, pixel: [f64; 2]) -> Result<Vec<(usize, usize, f64)>> {
        let inside = |v: f64, n: usize| v >= -0.5 && v <= n as f64 - 0.5;
        if !(inside(pixel[0], self.width) && inside(pixel[1], self.height)) {
            return Err(Error::Domain(format!("pixel {pixel:?} outside the table's image")));
        }
        let (ix, tx) = Self::axis_cell(pixel[0], self.stride, self.nx, self.width);
        let (iy, ty) = Self::axis_cell(pixel[1], self.stride, self.ny, self.height);
        let mut out = Vec::with_capacity(4);
        for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                let w = wx * wy;
                if w > 0.0 {
                    out.push((ix + dx, iy + dy, w));
                }
            }
        }
        Ok(out)
    }

    /// Tabulated `h` at a pixel and depth (linear in depth, bilinear across
    /// nodes).
    pub fn h_eval(&self, pixel: [f64; 2], z: f64) -> Result<f64> {
        let (z0, z1) = self.z_range();
        if !(z0..=z1).contains(&z) {
            return Err(Error::Domain(format!("depth {z} outside [{z0}, {z1}]")));
        }
        let n = self.z_samples.len();
        let k = self.z_samples.partition_point(|&s| s <= z).clamp(1, n - 1) - 1;
        let t = (z - self.z_samples[k]) / (self.z_samples[k + 1] - self.z_samples[k]);
        let mut acc = 0.0;
        for (ix, iy, w) in self.corners(pixel)? {
            if self.node_state(ix, iy) == NodeState::Invalid {
                return Err(Error::InvalidNode(ix, iy));
            }
            let h = self.node_h_values(ix, iy);
            acc += w * (h[k] + t * (h[k + 1] - h[k]));
        }
        Ok(acc)
    }

    /// The blended curve `h(z_k)` at `pixel` and its monotone direction.
    fn blended_curve(&self, pixel: [f64; 2]) -> Result<(Vec<f64>, f64)> {
        let n = self.z_samples.len();
        let mut curve = vec![0.0; n];
        let mut dir = 0;
        for (ix, iy, w) in self.corners(pixel)? {
            if self.node_state(ix, iy) != NodeState::Valid {
                return Err(Error::InvalidNode(ix, iy));
            }
            let d = self.node_monotone_dir(ix, iy);
            if dir != 0 && d != dir {
                return Err(Error::InvalidNode(ix, iy));
            }
            dir = d;
            for (c, h) in curve.iter_mut().zip(self.node_h_values(ix, iy)) {
                *c += w * h;
            }
        }
        Ok((curve, dir as f64))
    }

    /// Depth whose log flow ratio at `pixel` equals `log_ratio`: the
    /// bilinearly blended node curve is inverted piecewise-linearly, so this
    /// is the exact inverse of [`Self::h_eval`] within the depth range.
    pub fn h_invert(&self, pixel: [f64; 2], log_ratio: f64) -> Result<f64> {
        if !log_ratio.is_finite() {
            return Err(Error::Domain(format!("log ratio {log_ratio} is not finite")));
        }
        let (h, dir) = self.blended_curve(pixel)?;
        let (first, last) = (h[0], h[h.len() - 1]);
        let (min, max) = if dir > 0.0 { (first, last) } else { (last, first) };
        if !(min..=max).contains(&log_ratio) {
            return Err(Error::OutOfRange { value: log_ratio, min, max });
        }
        // first index whose (direction-adjusted) value exceeds the query
        let k = h.partition_point(|&v| dir * v <= dir * log_ratio).clamp(1, h.len() - 1) - 1;
        let t = (log_ratio - h[k]) / (h[k + 1] - h[k]);
        Ok(self.z_samples[k] + t * (self.z_samples[k + 1] - self.z_samples[k]))
    }

    /// `dh/dz` at a pixel from the tabulated samples.
    pub fn h_slope(&self, pixel: [f64; 2], z: f64) -> Result<f64> {
        let (z0, z1) = self.z_range();
        let step = (z1 - z0) / (self.z_samples.len() - 1) as f64;
        let lo = (z - step).max(z0);
        let hi = (z + step).min(z1);
        Ok((self.h_eval(pixel, hi)? - self.h_eval(pixel, lo)?) / (hi - lo))
    }

    /// Predicted depth error at `pixel` and depth `z` for bands of width
    /// `dr` and spacing `b` whose edges are located to `precision` pixels.
    /// Non-invertible nodes give an infinite error.
    pub fn error_budget(&self, pixel: [f64; 2], z: f64, dr: f64, b: f64, precision: f64) -> Result<f64> {
        if !(dr > 0.0 && b > 0.0 && precision >= 0.0) {
            return Err(Error::Domain("band width and spacing must be positive".into()));
        }
        for (ix, iy, _) in self.corners(pixel)? {
            if self.node_state(ix, iy) != NodeState::Valid {
                return Ok(f64::INFINITY);
            }
        }
        let slope = self.h_slope(pixel, z)?.abs();
        if slope == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(log_ratio_error(dr, b, precision) / slope)
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.h_values.len() * 8);
        buf.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.width as u32,
            self.height as u32,
            self.stride as u32,
            self.nx as u32,
            self.ny as u32,
            self.z_samples.len() as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for z in &self.z_samples {
            buf.extend_from_slice(&z.to_le_bytes());
        }
        let n = self.z_samples.len();
        for i in 0..self.nx * self.ny {
            buf.push(self.state[i] as u8);
            buf.extend_from_slice(&[self.sign1[i] as u8, self.sign2[i] as u8, self.monotone_dir[i] as u8]);
            for h in &self.h_values[i * n..(i + 1) * n] {
                buf.extend_from_slice(&h.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not a lookup table file".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported lookup table version {version}")));
        }
        let [width, height, stride, nx, ny, n] = [(); 6].map(|_| cur.u32().map(|v| v as usize));
        let (width, height, stride, nx, ny, n) = (width?, height?, stride?, nx?, ny?, n?);
        if width == 0 || height == 0 || stride == 0 || n < 2 {
            return Err(Error::Format("bad lookup table header".into()));
        }
        if nx != grid_len(width, stride) || ny != grid_len(height, stride) {
            return Err(Error::Format("grid shape disagrees with image size".into()));
        }
        let z_samples = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        if !z_samples.windows(2).all(|w| w[1] > w[0]) || z_samples[0] <= 0.0 {
            return Err(Error::Format("depth samples must be positive and increasing".into()));
        }
        let nodes = nx * ny;
        let mut lut = Self {
            width,
            height,
            stride,
            nx,
            ny,
            z_samples,
            h_values: Vec::with_capacity(nodes * n),
            sign1: Vec::with_capacity(nodes),
            sign2: Vec::with_capacity(nodes),
            monotone_dir: Vec::with_capacity(nodes),
            state: Vec::with_capacity(nodes),
        };
        for _ in 0..nodes {
            let head = cur.take(4)?;
            lut.state.push(NodeState::from_u8(head[0])?);
            lut.sign1.push(head[1] as i8);
            lut.sign2.push(head[2] as i8);
            lut.monotone_dir.push(head[3] as i8);
            for _ in 0..n {
                lut.h_values.push(cur.f64()?);
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after lookup table".into()));
        }
        Ok(lut)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Human-readable dump: a header, then one line per node.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# lightflow lut v{VERSION}\nresolution {} {}\nstride {}\ngrid {} {}\nz",
            self.width, self.height, self.stride, self.nx, self.ny
        );
        for z in &self.z_samples {
            out.push_str(&format!(" {z}"));
        }
        out.push_str("\n# ix iy x y state sign1 sign2 dir h...\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let [x, y] = self.node_pixel(ix, iy);
                let (s1, s2) = self.node_signs(ix, iy);
                out.push_str(&format!(
                    "{ix} {iy} {x} {y} {} {s1} {s2} {}",
                    self.node_state(ix, iy).name(),
                    self.node_monotone_dir(ix, iy)
                ));
                for h in self.node_h_values(ix, iy) {
                    out.push_str(&format!(" {h}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Coarse log-ratio error for bands of width `dr` and spacing `b` with edge
/// precision `precision`: each channel contributes
/// `sqrt((p/dr)^2 + (p/b)^2) * sqrt(2)` (two edges), and the two channels
/// add in quadrature.
pub fn log_ratio_error(dr: f64, b: f64, precision: f64) -> f64 {
    let per_channel = ((precision / dr).powi(2) + (precision / b).powi(2)).sqrt() * std::f64::consts::SQRT_2;
    per_channel * std::f64::consts::SQRT_2
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("lookup table file truncated".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
