//! Reference rigs used by the examples, the simulator scenes and the tests.
//!
//! The converging pair mimics a desk-scale experimental setup: an 800x600
//! camera and two 1280x800 projectors converging in front of it. One projector
//! sits beside the camera, the other behind it and further out, which makes
//! the flow ratio vary with depth at every pixel. Both projectors keep their
//! epipoles outside the camera image and cover it over 0.45 to 0.9 m; line
//! intervals give an apparent spacing of 25 to 45 camera pixels at 0.6 m, and
//! the blue interval balances the two channels so the larger of the two
//! line-index rates varies little across the image.

use nalgebra::{Matrix3, Vector3};

use crate::rig::{CameraModel, Channel, Modulation, PatternSpec, ProjectorModel, RigCalibration};

pub const CAMERA_RESOLUTION: [usize; 2] = [800, 600];
pub const PROJECTOR_RESOLUTION: [usize; 2] = [1280, 800];

pub fn camera() -> CameraModel {
    CameraModel::new(700.0, [400.0, 300.0], CAMERA_RESOLUTION).expect("valid camera")
}

fn fixed_projector(position: [f64; 3]) -> ProjectorModel {
    let translation = -Vector3::from(position);
    ProjectorModel::new(900.0, [640.0, 400.0], PROJECTOR_RESOLUTION, Matrix3::identity(), translation)
        .expect("valid projector")
}

/// Two converging projectors with uniform lines; red is the ratio numerator.
pub fn converging_rig() -> RigCalibration {
    let p1 = ProjectorModel::look_at([-0.3, 0.0, 0.0], [0.0, 0.0, 1.0], 900.0, PROJECTOR_RESOLUTION)
        .expect("valid projector");
    let p2 = ProjectorModel::look_at([0.5, 0.0, -0.6], [0.0, 0.0, 0.8], 900.0, PROJECTOR_RESOLUTION)
        .expect("valid projector");
    RigCalibration::two_projector(
        "converging-pair",
        camera(),
        (p1, PatternSpec::uniform(32.0, 2.0, Channel::Red)),
        (p2, PatternSpec::uniform(20.0, 1.5, Channel::Blue)),
    )
    .expect("valid rig")
}

/// Projectors side by side, parallel to the camera: the flow ratio is the
/// same at every depth.
pub fn parallel_rig() -> RigCalibration {
    RigCalibration::two_projector(
        "parallel-pair",
        camera(),
        (fixed_projector([-0.2, 0.0, 0.0]), PatternSpec::uniform(40.0, 4.0, Channel::Red)),
        (fixed_projector([0.2, 0.0, 0.0]), PatternSpec::uniform(40.0, 4.0, Channel::Blue)),
    )
    .expect("valid rig")
}

/// All three devices in one plane facing the same way, projectors offset
/// both horizontally and vertically.
pub fn fronto_parallel_rig() -> RigCalibration {
    RigCalibration::two_projector(
        "fronto-parallel",
        camera(),
        (fixed_projector([0.3, 0.2, 0.0]), PatternSpec::uniform(40.0, 4.0, Channel::Red)),
        (fixed_projector([-0.35, -0.1, 0.0]), PatternSpec::uniform(30.0, 3.0, Channel::Blue)),
    )
    .expect("valid rig")
}

/// One projector with mirrored interval modulations on red and blue.
pub fn single_projector_rig() -> RigCalibration {
    let p = ProjectorModel::look_at([0.4, 0.0, 0.0], [0.0, 0.0, 0.7], 900.0, PROJECTOR_RESOLUTION)
        .expect("valid projector");
    RigCalibration::single_projector(
        "single-projector",
        camera(),
        p,
        [
            PatternSpec::modulated(40.0, 2.0, Modulation::WideRight, Channel::Red),
            PatternSpec::modulated(40.0, 2.0, Modulation::WideLeft, Channel::Blue),
        ],
    )
    .expect("valid rig")
}
