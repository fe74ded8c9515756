use late_mvs::scene::{CameraRig, Primitive, RigLayout, SceneDefinition, Shape, SuiteScene, Texture, SUITE_DEPTH};

/// Textured fronto-parallel plane seen by a small ring of cameras.
pub fn small_plane(name: &str, width: usize, height: usize) -> SuiteScene {
    SuiteScene {
        name: name.into(),
        scene: SceneDefinition::new(
            3,
            vec![Primitive {
                shape: Shape::FrontoPlane {
                    depth: SUITE_DEPTH,
                    center: [0.0, 0.0],
                    half_extent: [1e4, 1e4],
                },
                texture: Texture::noise(0, 1.25),
            }],
        )
        .unwrap(),
        rig: CameraRig {
            layout: RigLayout::Ring {
                radius: SUITE_DEPTH * 10f64.to_radians().tan(),
                count: 5,
                phase_deg: 17.0,
            },
            target: [0.0, 0.0, SUITE_DEPTH],
            distance: SUITE_DEPTH,
            focal: 2000.0,
            width,
            height,
            source_margin: 16,
        },
    }
}
