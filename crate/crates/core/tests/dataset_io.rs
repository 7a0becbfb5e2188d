use std::fs;

use rdepth::synthdata::{generate_dataset, read_dataset, read_sequence, sequence_dir, write_dataset, DatasetSpec, Difficulty};
use rdepth::Error;

fn spec() -> DatasetSpec {
    DatasetSpec {
        seed: 11,
        sequences: 2,
        frames: 4,
        height: 16,
        width: 32,
        difficulty: Difficulty::Cluttered,
        motion_scale: 1.0,
    }
}

#[test]
fn dataset_round_trips_exactly() {
    let samples = generate_dataset(&spec(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&samples, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), samples.len());
    for (a, b) in samples.iter().zip(&back) {
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.depths, b.depths);
        // Frames are stored as 8-bit PNG and were quantized at render time.
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.intrinsics, b.intrinsics);
    }
}

#[test]
fn missing_or_corrupt_files_are_parse_errors() {
    let samples = generate_dataset(&spec(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&samples, dir.path()).unwrap();
    let seq = sequence_dir(dir.path(), 0);

    fs::remove_file(seq.join("intrinsics.txt")).unwrap();
    let err = read_sequence(&seq).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");

    let seq1 = sequence_dir(dir.path(), 1);
    fs::write(seq1.join("poses.csv"), "frame,rx,ry,rz,tx,ty,tz\n0,0,0,0,0,0,zero\n").unwrap();
    let err = read_sequence(&seq1).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}
