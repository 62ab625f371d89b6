//! Fixtures shared by the benchmarks in `benches/`.

use viewrel_core::synth::{make_room, SynthConfig};
use viewrel_core::SceneBundle;

/// Room with 40 instances and about 100k points.
pub fn large_room(pose_count: usize) -> SceneBundle {
    make_room(&SynthConfig {
        seed: 1,
        n_instances: 40,
        points_per_instance: 2000,
        background_density: 91.0,
        placement_half_extent: 3.0,
        pose_count,
        ..Default::default()
    })
    .expect("benchmark room")
}

/// Default-sized synthetic room.
pub fn small_room(seed: u64) -> SceneBundle {
    make_room(&SynthConfig {
        seed,
        ..Default::default()
    })
    .expect("benchmark room")
}
