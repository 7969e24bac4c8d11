use hmpdm::checkpoint::{checkpoint_name, Checkpoint, Record, TrainingState, Values, MAGIC};
use hmpdm::codec::VideoClip;
use hmpdm::config::RunConfig;
use hmpdm::pipeline::{initial_state, latest_checkpoint, train_until, training_data};
use hmpdm::synthdata::{generate_clip, SceneSpec};
use hmpdm::Error;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [("embed_dim", "16"), ("widths", "16,16,16"), ("time_dim", "16"), ("mape_blocks", "1"), ("batch", "2")] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn clips() -> Vec<VideoClip> {
    (0..2).map(|i| generate_clip(&SceneSpec::random(32, 32, 8, 10 + i)).unwrap()).collect()
}

fn sample() -> Checkpoint {
    let mut c = Checkpoint::new(7);
    c.push(Record::new("a", &[2, 2], Values::F32(vec![1.0, -2.0, 3.5, 0.0])).unwrap()).unwrap();
    c.push(Record::new("b", &[3], Values::F64(vec![0.1, 0.2, 0.3])).unwrap()).unwrap();
    c.push(Record::new("c", &[2], Values::U8(vec![9, 8])).unwrap()).unwrap();
    c.push(Record::new("d", &[1], Values::U64(vec![u64::MAX])).unwrap()).unwrap();
    c
}

#[test]
fn records_round_trip_through_bytes() {
    let c = sample();
    let bytes = c.to_bytes();
    assert_eq!(&bytes[..4], &MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.step, 7);
    assert_eq!(back.f32s("a").unwrap(), &[1.0, -2.0, 3.5, 0.0]);
    assert_eq!(back.u8s("c").unwrap(), &[9, 8]);
    assert_eq!(back.u64s("d").unwrap(), &[u64::MAX]);
    assert_eq!(back.get("b").unwrap().values, Values::F64(vec![0.1, 0.2, 0.3]));
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn corrupt_or_truncated_bytes_are_rejected() {
    let bytes = sample().to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).is_err());
}

#[test]
fn records_reject_shape_value_mismatch_and_duplicates() {
    assert!(Record::new("x", &[3], Values::F32(vec![1.0])).is_err());
    let mut c = sample();
    assert!(c.push(Record::new("a", &[1], Values::F32(vec![1.0])).unwrap()).is_err());
    assert!(c.f32s("c").is_err(), "dtype mismatch");
}

#[test]
fn training_state_round_trips_and_checks_hashes() {
    let cfg = tiny();
    let clips = clips();
    let mut state = initial_state(&cfg, &clips).unwrap();
    let data = training_data(&state, &clips).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    train_until(&mut state, &data, 3, Some(tmp.path()), |_| Ok(())).unwrap();
    let path = tmp.path().join(checkpoint_name(3));
    assert_eq!(latest_checkpoint(tmp.path()).unwrap().as_deref(), Some(path.as_path()));

    let ckpt = Checkpoint::load(&path).unwrap();
    let back = TrainingState::from_checkpoint(&ckpt, Some(&cfg), false).unwrap();
    assert_eq!(back.step(), 3);
    assert_eq!(back.to_checkpoint().unwrap().to_bytes(), ckpt.to_bytes());

    let mut other = cfg.clone();
    other.set("lr", "0.5").unwrap();
    let err = TrainingState::from_checkpoint(&ckpt, Some(&other), false).unwrap_err();
    assert!(matches!(err, Error::ConfigHashMismatch { .. }), "{err}");
    assert!(TrainingState::from_checkpoint(&ckpt, Some(&other), true).is_ok());

    // a stored config that no longer matches its stored hash is corruption
    let mut tampered = Checkpoint::new(3);
    for r in &ckpt.records {
        let mut r = r.clone();
        if r.name == "meta.config_hash" {
            r.values = Values::U64(vec![1]);
        }
        tampered.push(r).unwrap();
    }
    assert!(matches!(TrainingState::from_checkpoint(&tampered, None, false), Err(Error::Checkpoint(_))));
}
