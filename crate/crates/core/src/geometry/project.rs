use serde::{Deserialize, Serialize};

use crate::data::SkeletonSequence;

/// Orthographic view of the court frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// Along the depth axis: keeps `(x, z)`.
    #[default]
    Front,
    /// Along the width axis: keeps `(y, z)`.
    Side,
}

pub fn project_point(p: [f32; 3], view: View) -> [f32; 2] {
    match view {
        View::Front => [p[0], p[2]],
        View::Side => [p[1], p[2]],
    }
}

/// Two-channel sequence of the projected joints; validity is kept.
pub fn project_to_view(seq: &SkeletonSequence, view: View) -> SkeletonSequence {
    let [t, n, j, c] = seq.dims();
    let mut data = Vec::with_capacity(t * n * j * 2);
    for xyz in seq.data().chunks_exact(c) {
        data.extend(project_point([xyz[0], xyz[1], xyz[2]], view));
    }
    SkeletonSequence::new([t, n, j, 2], data, seq.validity().to_vec(), seq.fps).expect("dimensions are consistent")
}
