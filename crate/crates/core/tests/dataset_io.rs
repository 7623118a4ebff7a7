use proptest::prelude::*;
use tactile_align::data::{
    generate_synthetic, load_dataset, save_dataset, save_dataset_stamped, GenConfig, TaskKind,
};
use tactile_align::Error;

fn small_config(fingers: usize, humans: usize, robots: usize, len: usize, noise: f64) -> GenConfig {
    GenConfig {
        fingers,
        tasks: vec![TaskKind::Pivot, TaskKind::Insertion],
        human_per_task: humans,
        robot_per_task: robots,
        human_play: 1,
        robot_play: 0,
        length_min: len,
        length_max: len + 2,
        human_noise: noise * 50.0,
        robot_noise: noise,
        ..GenConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn saved_datasets_load_back_identically(
        seed in any::<u64>(),
        fingers in 1usize..=3,
        humans in 1usize..=3,
        robots in 1usize..=3,
        len in 3usize..=6,
        noisy in any::<bool>(),
    ) {
        let cfg = small_config(fingers, humans, robots, len, if noisy { 0.3 } else { 0.0 });
        let ds = generate_synthetic(&cfg, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.fingerprint(), ds.fingerprint());
        let again = dir.path().join("e.jsonl");
        save_dataset(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

fn saved(stamp: Option<&str>) -> (tempfile::TempDir, std::path::PathBuf) {
    let ds = generate_synthetic(&small_config(2, 2, 1, 4, 0.0), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset_stamped(&ds, &path, stamp).unwrap();
    (dir, path)
}

#[test]
fn config_stamp_does_not_change_content() {
    let (_d, path) = saved(Some("abc123"));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains("\"config_hash\":\"abc123\""));
    let (_e, plain) = saved(None);
    assert_eq!(load_dataset(&path).unwrap(), load_dataset(&plain).unwrap());
}

#[test]
fn truncated_file_reports_the_missing_line() {
    let (_d, path) = saved(None);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(&path, lines[..lines.len() - 1].join("\n")).unwrap();
    match load_dataset(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, lines.len()),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn corrupt_record_reports_its_line() {
    let (_d, path) = saved(None);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[2] = "{\"id\": oops".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn unknown_format_version_is_refused() {
    let (_d, path) = saved(None);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"format_version\":1", "\"format_version\":99", 1)).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(&dir.path().join("none.jsonl")), Err(Error::Io { .. })));
}
