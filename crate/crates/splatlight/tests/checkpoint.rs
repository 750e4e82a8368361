use splatlight::checkpoint::{decode, encode, load, peek_header, save, Checkpoint, CheckpointError, FORMAT_VERSION};
use splatlight::pipeline::synthetic_dataset;
use splatlight_core::dataset::SyntheticSpec;
use splatlight_core::scene::init_scene;
use splatlight_core::schedule::{TrainSchedule, Variant};
use splatlight_core::trainer::{TrainConfig, Trainer};

fn trained() -> Trainer {
    let data = synthetic_dataset(
        &SyntheticSpec {
            gaussians: 10,
            frames: 3,
            image_size: 12,
            ..SyntheticSpec::default()
        },
        0,
    );
    let config = TrainConfig {
        schedule: TrainSchedule::variant(Variant::H).with_total(6),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(init_scene(10, 1), data.train.len(), config);
    t.run(&data.train, |_, _| {}).unwrap();
    t
}

#[test]
fn scene_round_trip_is_bit_exact() {
    let ck = Checkpoint::scene_only(init_scene(100, 7));
    let back = decode(&encode(&ck)).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.scene.len(), 100);
}

#[test]
fn training_state_round_trip_is_bit_exact() {
    let t = trained();
    assert!(!t.adam.state.is_empty());
    let ck = Checkpoint::from_trainer(&t);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.ckpt");
    save(&p, &ck).unwrap();
    let back = load(&p).unwrap();
    assert_eq!(back, ck);
    let tr = back.training.unwrap();
    assert_eq!(tr.iter, 6);
    assert_eq!(tr.adam, t.adam);
    assert_eq!(tr.frame_adams, t.delta_optim);
}

#[test]
fn version_mismatch_names_both_versions() {
    let mut bytes = encode(&Checkpoint::scene_only(init_scene(4, 0)));
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, CheckpointError::Version { found: 7, expected: FORMAT_VERSION }));
    let msg = err.to_string();
    assert!(msg.contains('7') && msg.contains(&FORMAT_VERSION.to_string()), "{msg}");
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = encode(&Checkpoint::scene_only(init_scene(4, 0)));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic)));
    assert!(matches!(decode(&bytes[..bytes.len() - 8]), Err(CheckpointError::Truncated)));
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 8]);
    assert!(matches!(decode(&long), Err(CheckpointError::Trailing(8))));
    assert!(matches!(decode(&bytes[..10]), Err(CheckpointError::Truncated)));
}

#[test]
fn architecture_mismatch_is_caught_from_the_header() {
    let bytes = encode(&Checkpoint::scene_only(init_scene(4, 0)));
    let (_, mut header, start) = peek_header(&bytes).unwrap();
    header.shadow_net[1] += 1;
    let json = serde_json::to_vec(&header).unwrap();
    let mut out = bytes[..12].to_vec();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[start..]);
    let msg = decode(&out).unwrap_err().to_string();
    assert!(msg.contains("shadow"), "{msg}");
}

#[test]
fn header_records_counts() {
    let bytes = encode(&Checkpoint::scene_only(init_scene(100, 0)));
    let (version, header, _) = peek_header(&bytes).unwrap();
    assert_eq!(version, FORMAT_VERSION);
    assert_eq!(header.gaussians, 100);
    assert!(header.training.is_none());
}
