//! Blur-band detection on scanlines and conversion to line-index flow.
//!
//! A projected line swept across the image during the exposure leaves a
//! bright band. Bands are segmented with an adaptive threshold (local mean
//! scaled by `1 + offset`) and their edges are then refined at half the
//! band's plateau height. A hard line of apparent width `w` swept over `D`
//! pixels has a trapezoidal profile whose half-height width is `max(D, w)`, so
//! the refined width is the blur extent once motion exceeds the line width.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{GrayImage, RgbImage};
use crate::rig::Channel;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanProfile {
    pub row: usize,
    pub channel: Channel,
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Rise,
    Fall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub x: f64,
    pub polarity: Polarity,
}

/// Threshold crossings against `mean(window) * (1 + offset)`, located by
/// linear interpolation. The window is truncated at the profile ends.
pub fn adaptive_binarize(profile: &ScanProfile, window: usize, offset: f64) -> Result<Vec<Crossing>> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Domain(format!("window must be odd and at least 3, got {window}")));
    }
    let d = threshold_residual(&profile.intensities, window, offset);
    let mut out = Vec::new();
    for i in 0..d.len().saturating_sub(1) {
        let (a, b) = (d[i], d[i + 1]);
        let polarity = match (a > 0.0, b > 0.0) {
            (false, true) => Polarity::Rise,
            (true, false) => Polarity::Fall,
            _ => continue,
        };
        out.push(Crossing { x: i as f64 + a / (a - b), polarity });
    }
    Ok(out)
}

fn threshold_residual(v: &[f64], window: usize, offset: f64) -> Vec<f64> {
    let half = window / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            let mean = v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            v[i] - mean * (1.0 + offset)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurBand {
    pub row: usize,
    pub left_edge: f64,
    pub right_edge: f64,
    pub center: f64,
    pub width: f64,
    pub interval_to_prev: Option<f64>,
    pub interval_to_next: Option<f64>,
    pub valid: bool,
}

impl BlurBand {
    /// Local line interval `B`: mean of both neighbour spacings.
    pub fn interval(&self) -> Option<f64> {
        match (self.interval_to_prev, self.interval_to_next) {
            (Some(a), Some(b)) => Some(0.5 * (a + b)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandParams {
    /// Odd window of the adaptive threshold, pixels.
    pub window: usize,
    pub offset: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// Smallest accepted rise of a band above its local floor.
    pub min_contrast: f64,
    /// Largest relative width difference between a band and each neighbour.
    pub width_tol: f64,
}

impl Default for BandParams {
    fn default() -> Self {
        Self { window: 61, offset: -0.2, b_min: 15.0, b_max: 60.0, min_contrast: 0.03, width_tol: 0.2 }
    }
}

impl BandParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("window must be odd and at least 3, got {}", self.window)));
        }
        if !(self.offset > -1.0) {
            return Err(Error::Config("threshold offset must exceed -1".into()));
        }
        if !(self.b_min > 0.0 && self.b_min < self.b_max) {
            return Err(Error::Config(format!("need 0 < b_min < b_max, got {} and {}", self.b_min, self.b_max)));
        }
        if !(self.min_contrast >= 0.0) {
            return Err(Error::Config("min_contrast must be non-negative".into()));
        }
        if !(self.width_tol > 0.0) {
            return Err(Error::Config("width_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Bands on one scanline, ordered left to right. A band is valid when both
/// neighbours exist, both intervals lie in `[b_min, b_max]` and both
/// neighbours' widths agree with its own within `width_tol`.
pub fn detect_row_bands(profile: &ScanProfile, params: &BandParams) -> Result<Vec<BlurBand>> {
    let v = &profile.intensities;
    let crossings = adaptive_binarize(profile, params.window, params.offset)?;
    let start = crossings.iter().position(|c| c.polarity == Polarity::Rise).unwrap_or(crossings.len());
    let segments: Vec<(f64, f64)> = crossings[start..]
        .chunks_exact(2)
        .map(|p| (p[0].x, p[1].x))
        .collect();

    let mut bands = Vec::with_capacity(segments.len());
    for (k, &(rise, fall)) in segments.iter().enumerate() {
        let lo = if k == 0 { 0.0 } else { segments[k - 1].1 };
        let hi = segments.get(k + 1).map_or((v.len() - 1) as f64, |s| s.0);
        if let Some((left, right)) = refine_edges(v, rise, fall, lo, hi, params.min_contrast) {
            bands.push(BlurBand {
                row: profile.row,
                left_edge: left,
                right_edge: right,
                center: 0.5 * (left + right),
                width: right - left,
                interval_to_prev: None,
                interval_to_next: None,
                valid: false,
            });
        }
    }
    for i in 0..bands.len() {
        if i > 0 {
            bands[i].interval_to_prev = Some(bands[i].center - bands[i - 1].center);
        }
        if i + 1 < bands.len() {
            bands[i].interval_to_next = Some(bands[i + 1].center - bands[i].center);
        }
    }
    let in_range = |b: &BlurBand| {
        let ok = |b: Option<f64>| b.is_some_and(|b| (params.b_min..=params.b_max).contains(&b));
        ok(b.interval_to_prev) && ok(b.interval_to_next)
    };
    let alike = |a: &BlurBand, b: &BlurBand| (a.width - b.width).abs() <= params.width_tol * a.width.max(b.width);
    for i in 1..bands.len().saturating_sub(1) {
        let this = &bands[i];
        bands[i].valid = in_range(this) && alike(this, &bands[i - 1]) && alike(this, &bands[i + 1]);
    }
    Ok(bands)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Half-height edges of the band segmented as `[rise, fall]`, searching no
/// further than the neighbouring segments `lo` and `hi`. The floor is the
/// median of the samples between the neighbours; the top is the band's
/// maximum, re-estimated as the median of the central half of the band once
/// that half holds at least three samples. Bands rising less than
/// `min_contrast` above the floor are rejected.
fn refine_edges(v: &[f64], rise: f64, fall: f64, lo: f64, hi: f64, min_contrast: f64) -> Option<(f64, f64)> {
    let last = v.len() - 1;
    let inner_lo = (rise.ceil() as usize).min(last);
    let inner_hi = (fall.floor() as usize).min(last);
    let (a, b) = if inner_lo <= inner_hi {
        (inner_lo, inner_hi)
    } else {
        let c = (0.5 * (rise + fall)).round() as usize;
        (c.min(last), c.min(last))
    };
    let top = v[a..=b].iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let lo_i = lo.ceil().max(0.0) as usize;
    let hi_i = (hi.floor() as usize).min(last);
    let outside: Vec<f64> = (lo_i..=hi_i)
        .filter(|&i| (i as f64) < rise || (i as f64) > fall)
        .map(|i| v[i])
        .collect();
    let floor = median(outside).unwrap_or(0.0).min(top);
    if !(top - floor >= min_contrast && top > floor) {
        return None;
    }
    let (left, right) = half_height_edges(v, a, b, lo_i, hi_i, floor + 0.5 * (top - floor))?;

    let (c, r) = (0.5 * (left + right), 0.25 * (right - left));
    let first = (c - r).ceil().max(0.0) as usize;
    let central: Vec<f64> = (first..=last).take_while(|&i| i as f64 <= c + r).map(|i| v[i]).collect();
    if central.len() < 3 {
        return Some((left, right));
    }
    let top = median(central)?;
    if !(top > floor) {
        return None;
    }
    half_height_edges(v, a, b, lo_i, hi_i, floor + 0.5 * (top - floor)).or(Some((left, right)))
}

/// Outermost `half` crossings around the samples `a..=b`, scanning outward
/// within `lo_i..=hi_i` and interpolating linearly between samples.
fn half_height_edges(v: &[f64], a: usize, b: usize, lo_i: usize, hi_i: usize, half: f64) -> Option<(f64, f64)> {
    let band = &v[a..=b];
    let start = a + band.iter().position(|&x| x >= half)?;
    let mut i = start;
    while i > lo_i && v[i - 1] >= half {
        i -= 1;
    }
    let left = if i > lo_i {
        let (p, q) = (v[i - 1], v[i]);
        (i - 1) as f64 + (half - p) / (q - p)
    } else {
        i as f64
    };
    let end = a + band.iter().rposition(|&x| x >= half)?;
    let mut j = end;
    while j < hi_i && v[j + 1] >= half {
        j += 1;
    }
    let right = if j < hi_i {
        let (p, q) = (v[j], v[j + 1]);
        j as f64 + (p - half) / (p - q)
    } else {
        j as f64
    };
    (right > left).then_some((left, right))
}

/// One colour plane of `frame`, optionally through a linear unmixing matrix
/// whose rows map camera RGB to pattern RGB.
pub fn extract_channel(frame: &RgbImage, channel: Channel, unmix: Option<&[[f64; 3]; 3]>) -> GrayImage {
    let c = channel.rgb_index();
    let data = match unmix {
        None => frame.channel(c),
        Some(m) => frame
            .data
            .chunks_exact(3)
            .map(|px| (m[c][0] * px[0] as f64 + m[c][1] * px[1] as f64 + m[c][2] * px[2] as f64) as f32)
            .collect(),
    };
    GrayImage { width: frame.width, height: frame.height, data }
}

/// Bands on every row of a single-channel image.
pub fn detect_bands(image: &GrayImage, channel: Channel, params: &BandParams) -> Result<Vec<Vec<BlurBand>>> {
    params.validate()?;
    image
        .data
        .par_chunks_exact(image.width)
        .enumerate()
        .map(|(row, px)| {
            let profile = ScanProfile { row, channel, intensities: px.iter().map(|&x| x as f64).collect() };
            detect_row_bands(&profile, params)
        })
        .collect()
}

/// Text table of bands: `row left right B valid`, with `nan` for a missing
/// interval.
pub fn bands_to_text(bands: &[Vec<BlurBand>]) -> String {
    let mut s = String::from("# row left right B valid\n");
    for b in bands.iter().flatten() {
        let interval = b.interval().map_or("nan".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!(
            "{} {:.4} {:.4} {} {}\n",
            b.row, b.left_edge, b.right_edge, interval, b.valid as u8
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub row: usize,
    pub x: f64,
    /// Line-index displacement over the exposure.
    pub value: f64,
}

/// Below this excess over the apparent line width a band counts as static.
pub const STATIC_MARGIN_PX: f64 = 0.5;

/// `width / B` at each valid band centre. `static_width_lines` is the
/// pattern's line width in line-index units, so `static_width_lines * B` is
/// its apparent width; narrower bands carry no measurable motion and give 0.
pub fn flow_from_bands(bands: &[BlurBand], static_width_lines: f64) -> Vec<FlowSample> {
    bands
        .iter()
        .filter(|b| b.valid)
        .filter_map(|b| {
            let interval = b.interval()?;
            if !(interval > 0.0) {
                return None;
            }
            let apparent = static_width_lines * interval;
            let dr = if b.width - apparent < STATIC_MARGIN_PX { 0.0 } else { b.width };
            Some(FlowSample { row: b.row, x: b.center, value: dr / interval })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub flow: Vec<f64>,
    pub mask: Vec<bool>,
    pub channel: Channel,
}

impl FlowField {
    pub fn new(width: usize, height: usize, flow: Vec<f64>, mask: Vec<bool>, channel: Channel) -> Result<Self> {
        if flow.len() != width * height || mask.len() != width * height {
            return Err(Error::DimensionMismatch(format!("flow field buffers for {width}x{height}")));
        }
        Ok(Self { width, height, flow, mask, channel })
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.mask[i].then(|| self.flow[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Same field scaled by `c`, mask unchanged.
    pub fn scaled(&self, c: f64) -> Self {
        Self { flow: self.flow.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    /// Float image with NaN where masked.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.flow.iter().zip(&self.mask).map(|(&v, &m)| if m { v as f32 } else { f32::NAN }).collect();
        GrayImage { width: self.width, height: self.height, data }
    }

    pub fn from_gray(image: &GrayImage, channel: Channel) -> Self {
        let mask: Vec<bool> = image.data.iter().map(|v| v.is_finite()).collect();
        let flow = image.data.iter().map(|&v| if v.is_finite() { v as f64 } else { 0.0 }).collect();
        Self { width: image.width, height: image.height, flow, mask, channel }
    }
}

/// Piecewise-linear flow along each row between neighbouring samples, then a
/// Gaussian of standard deviation `sigma` normalized over the mask. Samples
/// further apart than `max_gap` are not bridged; nothing is extrapolated.
pub fn interpolate_flow(
    samples: &[FlowSample],
    size: [usize; 2],
    sigma: f64,
    max_gap: f64,
    channel: Channel,
) -> Result<FlowField> {
    let mut field = interpolate_rows(samples, size, max_gap, channel)?;
    smooth_flow(&mut field, sigma);
    Ok(field)
}

/// Row-wise piecewise-linear interpolation without smoothing.
pub fn interpolate_rows(samples: &[FlowSample], size: [usize; 2], max_gap: f64, channel: Channel) -> Result<FlowField> {
    let [width, height] = size;
    let mut rows: Vec<Vec<(f64, f64)>> = vec![Vec::new(); height];
    for s in samples {
        if s.row >= height || !s.value.is_finite() || s.value < 0.0 {
            return Err(Error::Domain(format!("bad flow sample {s:?}")));
        }
        rows[s.row].push((s.x, s.value));
    }
    let mut flow = vec![0.0; width * height];
    let mut mask = vec![false; width * height];
    flow.par_chunks_mut(width)
        .zip(mask.par_chunks_mut(width))
        .zip(rows.par_iter_mut())
        .for_each(|((f, m), pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pts.windows(2) {
                let ((x0, v0), (x1, v1)) = (w[0], w[1]);
                if x1 - x0 > max_gap || x1 <= x0 {
                    continue;
                }
                let first = x0.ceil().max(0.0) as usize;
                let last = (x1.floor() as usize).min(width - 1);
                for x in first..=last {
                    let t = (x as f64 - x0) / (x1 - x0);
                    f[x] = v0 + t * (v1 - v0);
                    m[x] = true;
                }
            }
        });
    FlowField::new(width, height, flow, mask, channel)
}

/// Masks pixels whose flow is not backed by the rows next to them. A pixel
/// survives when, on at least one side, the `reach` adjacent rows are all
/// valid and their median lies within relative `tol` of the pixel's value.
/// Rows that see the surface for only part of the exposure (silhouettes
/// sweeping across them) carry truncated bands whose flow climbs steeply
/// from row to row and fail this test.
pub fn reject_unsupported(field: &mut FlowField, reach: usize, tol: f64) {
    if reach == 0 {
        return;
    }
    let (w, h) = (field.width, field.height);
    let (flow, mask) = (&field.flow, &field.mask);
    let keep: Vec<bool> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !mask[i] {
                return false;
            }
            let (x, y) = (i % w, i / w);
            let v = flow[i];
            let side = |up: bool| {
                let mut vals = Vec::with_capacity(reach);
                for k in 1..=reach {
                    let yy = if up { y.checked_sub(k) } else { Some(y + k).filter(|&r| r < h) };
                    match yy {
                        Some(r) if mask[r * w + x] => vals.push(flow[r * w + x]),
                        _ => return false,
                    }
                }
                vals.sort_by(f64::total_cmp);
                (vals[reach / 2] - v).abs() <= tol * v.abs().max(vals[reach / 2].abs())
            };
            side(true) || side(false)
        })
        .collect();
    for (i, k) in keep.into_iter().enumerate() {
        if !k {
            field.mask[i] = false;
            field.flow[i] = 0.0;
        }
    }
}

/// In-place masked Gaussian smoothing; `sigma <= 0` leaves the field as is.
pub fn smooth_flow(field: &mut FlowField, sigma: f64) {
    if sigma > 0.0 {
        field.flow = masked_gaussian(&field.flow, &field.mask, field.width, field.height, sigma);
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect()
}

/// Normalized convolution: `G*(f m) / G*m` on the mask.
fn masked_gaussian(flow: &[f64], mask: &[bool], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let num: Vec<f64> = flow.iter().zip(mask).map(|(&f, &m)| if m { f } else { 0.0 }).collect();
    let den: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let blur = |src: &[f64]| {
        let rows = convolve_rows(src, width, height, &k);
        let t = transpose(&rows, width, height);
        let cols = convolve_rows(&t, height, width, &k);
        transpose(&cols, height, width)
    };
    let (num, den) = rayon::join(|| blur(&num), || blur(&den));
    num.iter()
        .zip(&den)
        .zip(mask)
        .map(|((&n, &d), &m)| if m && d > 0.0 { n / d } else { 0.0 })
        .collect()
}

fn convolve_rows(src: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let s = &src[y * width..(y + 1) * width];
        for (x, o) in row.iter_mut().enumerate() {
            let lo = (x as i64 - r).max(0) as usize;
            let hi = ((x as i64 + r) as usize).min(width - 1);
            let mut acc = 0.0;
            for (i, sv) in s[lo..=hi].iter().enumerate() {
                acc += sv * k[(lo + i) + r as usize - x];
            }
            *o = acc;
        }
    });
    out
}

fn transpose(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = src[y * width + x];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub bands: BandParams,
    pub sigma: f64,
    /// Rows on each side consulted by [`reject_unsupported`]; 0 disables it.
    pub support_rows: usize,
    pub support_tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { bands: BandParams::default(), sigma: 2.0, support_rows: 3, support_tol: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEstimate {
    pub field: FlowField,
    pub bands_total: usize,
    pub bands_valid: usize,
}

/// Bands, samples and interpolated field for one channel.
pub fn estimate_flow(
    image: &GrayImage,
    channel: Channel,
    static_width_lines: f64,
    params: &FlowParams,
) -> Result<FlowEstimate> {
    let bands = detect_bands(image, channel, &params.bands)?;
    let samples: Vec<FlowSample> = bands.iter().flat_map(|row| flow_from_bands(row, static_width_lines)).collect();
    let mut field = interpolate_rows(&samples, [image.width, image.height], 2.0 * params.bands.b_max, channel)?;
    reject_unsupported(&mut field, params.support_rows, params.support_tol);
    smooth_flow(&mut field, params.sigma);
    Ok(FlowEstimate {
        field,
        bands_total: bands.iter().map(Vec::len).sum(),
        bands_valid: bands.iter().flatten().filter(|b| b.valid).count(),
    })
}
