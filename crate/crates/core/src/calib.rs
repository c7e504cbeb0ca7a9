//! Calibration file reader and writer.
//!
//! ```text
//! unit = m                      # m or mm; stored internally in meters
//! rig.name = converging-pair    # optional
//! camera.focal_px = 700
//! camera.principal = 400 300
//! camera.resolution = 800 600
//! projector1.focal_px = 900
//! projector1.principal = 640 400
//! projector1.resolution = 1280 800
//! projector1.rotation = r00 r01 r02 r10 r11 r12 r20 r21 r22   # row-major, camera -> projector
//! projector1.translation = tx ty tz                          # camera -> projector
//! pattern1.projector = 1
//! pattern1.kind = uniform       # uniform | modulated
//! pattern1.interval = 40        # projector px (base interval when modulated)
//! pattern1.line_width = 4       # projector px
//! pattern1.modulation = none    # none | wide_right | wide_left
//! pattern1.channel = red        # red | blue
//! pattern2.* ...
//! ```
//!
//! `pattern1` is the numerator of the flow ratio. Unknown keys are rejected.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvWriter};
use crate::rig::{
    CameraModel, Channel, Modulation, PatternBinding, PatternKind, PatternSpec, ProjectorModel,
    RigCalibration,
};

const PROJECTOR_FIELDS: [&str; 5] = ["focal_px", "principal", "resolution", "rotation", "translation"];
const PATTERN_FIELDS: [&str; 6] = ["projector", "kind", "interval", "line_width", "modulation", "channel"];

fn allowed_key(key: &str) -> bool {
    if matches!(
        key,
        "unit" | "rig.name" | "camera.focal_px" | "camera.principal" | "camera.resolution"
    ) {
        return true;
    }
    let Some((head, field)) = key.split_once('.') else {
        return false;
    };
    match head {
        "projector1" | "projector2" => PROJECTOR_FIELDS.contains(&field),
        "pattern1" | "pattern2" => PATTERN_FIELDS.contains(&field),
        _ => false,
    }
}

fn unit_scale(unit: &str) -> Result<f64> {
    match unit {
        "m" => Ok(1.0),
        "mm" => Ok(1e-3),
        other => Err(Error::Config(format!("unsupported length unit `{other}` (use m or mm)"))),
    }
}

fn resolution(doc: &KvDoc, key: &str) -> Result<[usize; 2]> {
    let [w, h] = doc.floats::<2>(key)?;
    let ok = |v: f64| v >= 1.0 && v.fract() == 0.0;
    if !ok(w) || !ok(h) {
        return Err(Error::Config(format!("`{key}` must be two positive integers")));
    }
    Ok([w as usize, h as usize])
}

fn parse_kind(s: &str) -> Result<PatternKind> {
    match s {
        "uniform" => Ok(PatternKind::UniformLines),
        "modulated" => Ok(PatternKind::ModulatedLines),
        other => Err(Error::Config(format!("unknown pattern kind `{other}`"))),
    }
}

fn parse_modulation(s: &str) -> Result<Modulation> {
    match s {
        "none" => Ok(Modulation::None),
        "wide_right" => Ok(Modulation::WideRight),
        "wide_left" => Ok(Modulation::WideLeft),
        other => Err(Error::Config(format!("unknown modulation `{other}`"))),
    }
}

pub(crate) fn parse_channel(s: &str) -> Result<Channel> {
    match s {
        "red" => Ok(Channel::Red),
        "blue" => Ok(Channel::Blue),
        other => Err(Error::Config(format!("unknown channel `{other}`"))),
    }
}

pub(crate) fn channel_name(c: Channel) -> &'static str {
    match c {
        Channel::Red => "red",
        Channel::Blue => "blue",
    }
}

fn kind_name(k: PatternKind) -> &'static str {
    match k {
        PatternKind::UniformLines => "uniform",
        PatternKind::ModulatedLines => "modulated",
    }
}

fn modulation_name(m: Modulation) -> &'static str {
    match m {
        Modulation::None => "none",
        Modulation::WideRight => "wide_right",
        Modulation::WideLeft => "wide_left",
    }
}

impl RigCalibration {
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        doc.reject_unknown(allowed_key)?;
        let scale = unit_scale(doc.str("unit")?)?;

        let camera = CameraModel::new(
            doc.get("camera.focal_px")?,
            doc.floats::<2>("camera.principal")?,
            resolution(&doc, "camera.resolution")?,
        )?;

        let mut projectors = Vec::new();
        for i in 1..=2 {
            let prefix = format!("projector{i}");
            if !doc.keys().any(|k| k.starts_with(&format!("{prefix}."))) {
                break;
            }
            let rotation = Matrix3::from_row_slice(&doc.floats::<9>(&format!("{prefix}.rotation"))?);
            let translation = Vector3::from(doc.floats::<3>(&format!("{prefix}.translation"))?) * scale;
            projectors.push(ProjectorModel::new(
                doc.get(&format!("{prefix}.focal_px"))?,
                doc.floats::<2>(&format!("{prefix}.principal"))?,
                resolution(&doc, &format!("{prefix}.resolution"))?,
                rotation,
                translation,
            )?);
        }

        let binding = |j: usize| -> Result<PatternBinding> {
            let key = |f: &str| format!("pattern{j}.{f}");
            let projector: usize = doc.get(&key("projector"))?;
            if projector == 0 {
                return Err(Error::Config(format!("`{}` is 1-based", key("projector"))));
            }
            let pattern = PatternSpec {
                kind: parse_kind(doc.str(&key("kind"))?)?,
                interval: doc.get(&key("interval"))?,
                line_width: doc.get(&key("line_width"))?,
                modulation: parse_modulation(doc.get_or(&key("modulation"), "none".to_string())?.as_str())?,
                channel: parse_channel(doc.str(&key("channel"))?)?,
            };
            Ok(PatternBinding { projector: projector - 1, pattern })
        };
        let patterns = [binding(1)?, binding(2)?];
        let name = doc.get_or("rig.name", String::new())?;
        RigCalibration::new(name, camera, projectors, patterns)
    }

    /// Serializes in meters with round-trip exact floats.
    pub fn to_kv_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("unit", "m");
        if !self.name.is_empty() {
            w.put("rig.name", &self.name);
        }
        let c = &self.camera;
        w.floats("camera.focal_px", &[c.focal_px])
            .floats("camera.principal", &c.principal_point)
            .put("camera.resolution", format!("{} {}", c.resolution[0], c.resolution[1]));
        for (i, p) in self.projectors.iter().enumerate() {
            let prefix = format!("projector{}", i + 1);
            let rot: Vec<f64> = (0..3).flat_map(|r| (0..3).map(move |col| (r, col))).map(|(r, col)| p.rotation[(r, col)]).collect();
            w.floats(&format!("{prefix}.focal_px"), &[p.focal_px])
                .floats(&format!("{prefix}.principal"), &p.principal_point)
                .put(&format!("{prefix}.resolution"), format!("{} {}", p.resolution[0], p.resolution[1]))
                .floats(&format!("{prefix}.rotation"), &rot)
                .floats(&format!("{prefix}.translation"), p.translation.as_slice());
        }
        for (j, b) in self.patterns.iter().enumerate() {
            let prefix = format!("pattern{}", j + 1);
            let p = &b.pattern;
            w.put(&format!("{prefix}.projector"), b.projector + 1)
                .put(&format!("{prefix}.kind"), kind_name(p.kind))
                .floats(&format!("{prefix}.interval"), &[p.interval])
                .floats(&format!("{prefix}.line_width"), &[p.line_width])
                .put(&format!("{prefix}.modulation"), modulation_name(p.modulation))
                .put(&format!("{prefix}.channel"), channel_name(p.channel));
        }
        w.finish()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_kv_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn round_trip_presets() {
        for rig in [presets::converging_rig(), presets::single_projector_rig(), presets::parallel_rig()] {
            let text = rig.to_kv_text();
            let back = RigCalibration::from_kv_text(&text).unwrap();
            assert_eq!(back, rig);
            assert_eq!(back.to_kv_text(), text);
        }
    }

    #[test]
    fn millimeters_are_converted() {
        let rig = presets::parallel_rig();
        let text = rig.to_kv_text().replace("unit = m", "unit = mm");
        let mm = RigCalibration::from_kv_text(&text).unwrap();
        assert!((mm.projectors[0].translation - rig.projectors[0].translation * 1e-3).norm() < 1e-15);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let text = presets::converging_rig().to_kv_text();
        let err = RigCalibration::from_kv_text(&format!("{text}projector1.pattern.kind = uniform\n"));
        assert!(matches!(err, Err(Error::Parse { .. })));
        let missing: String = text.lines().filter(|l| !l.starts_with("unit")).map(|l| format!("{l}\n")).collect();
        assert!(RigCalibration::from_kv_text(&missing).is_err());
        let bad_unit = text.replace("unit = m", "unit = furlong");
        assert!(RigCalibration::from_kv_text(&bad_unit).is_err());
    }
}
