use hmpdm::synthdata::*;

fn single_rect(velocity: (i64, i64)) -> SceneSpec {
    SceneSpec {
        height: 16,
        width: 16,
        frames: 5,
        background: [0, 0, 0],
        agents: vec![Agent {
            shape: Shape::Rect,
            size: (3, 2),
            pos: (2, 4),
            velocity,
            color: [255, 0, 0],
        }],
        occluder: None,
        wrap: true,
        watermark: None,
        seed: 0,
    }
}

fn red_pixels(spec: &SceneSpec, t: usize) -> Vec<(usize, usize)> {
    let img = spec.render_frame(t);
    (0..spec.height * spec.width)
        .filter(|i| img[i * 3] == 255)
        .map(|i| (i % spec.width, i / spec.width))
        .collect()
}

#[test]
fn rect_follows_kinematics() {
    let spec = single_rect((1, 0));
    for t in 0..5 {
        let px = red_pixels(&spec, t);
        assert_eq!(px.len(), 6);
        assert_eq!(*px.iter().min().unwrap(), (2 + t, 4));
    }
    let still = single_rect((0, 0));
    let clip = generate_clip(&still).unwrap();
    assert_eq!(clip.frame(0, 0), clip.frame(0, 4));
}

#[test]
fn occluder_hides_agent() {
    let mut spec = single_rect((2, 0));
    spec.occluder = Some(Occluder {
        x: 6,
        y: 0,
        width: 5,
        height: 16,
        color: [9, 9, 9],
    });
    // box columns [2+2t, 4+2t] fall inside [6, 10] at t = 2, 3; at t = 4 only column 10 is hidden
    assert_eq!(red_pixels(&spec, 0).len(), 6);
    assert_eq!(red_pixels(&spec, 2).len(), 0);
    assert_eq!(red_pixels(&spec, 3).len(), 0);
    assert_eq!(red_pixels(&spec, 4).len(), 4);
}

#[test]
fn oversized_agent_rejected() {
    let mut spec = single_rect((1, 0));
    spec.agents[0].size = (17, 2);
    assert!(generate_clip(&spec).is_err());
}

#[test]
fn random_scene_is_seeded() {
    assert_eq!(SceneSpec::random(32, 32, 16, 3), SceneSpec::random(32, 32, 16, 3));
    assert_ne!(SceneSpec::random(32, 32, 16, 3), SceneSpec::random(32, 32, 16, 4));
}

#[test]
fn png_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::random(32, 32, 3, 11);
    let clip = generate_clip(&spec).unwrap();
    write_clip_frames(dir.path(), &clip, 0).unwrap();
    let back = read_clip_frames(dir.path(), 0, 3).unwrap();
    assert_eq!(back.data.data(), clip.data.data());
    for t in 0..3 {
        assert_eq!(frame_to_rgb8(&back, 0, t), spec.render_frame(t));
    }
}
