#![allow(dead_code)]

use depth_inpaint::bench::{presets, render_sequence, RenderedSequence, SceneSpec};
use depth_inpaint::dataset::CaptureSequence;

/// The street preset, shortened.
pub fn street(seed: u64, frames: usize) -> SceneSpec {
    presets::street(seed, frames, false)
}

pub fn render(spec: &SceneSpec) -> (RenderedSequence, CaptureSequence) {
    let r = render_sequence(spec).unwrap();
    let seq = CaptureSequence::from_rendered(&r).unwrap();
    (r, seq)
}

pub fn sequence(spec: &SceneSpec) -> CaptureSequence {
    render(spec).1
}
