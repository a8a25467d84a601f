use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn cultprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cultprobe"))
        .args(args)
        .env_remove("CULTPROBE_REGISTRY")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cultprobe(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn report_lists_what_it_writes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = fixtures().join("desk/run.json");
    let listed = ok(&["report", "--config", p(&config), "--output-dir", p(&out)]);
    let files: Vec<&str> = listed.lines().collect();
    assert!(files.contains(&"run.json"));
    assert!(files.contains(&"reports/radar.csv"));
    for f in files {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn xna_reports_language_means() {
    let tmp = tempfile::tempdir().unwrap();
    let answers = fixtures().join("hi_xna/answers.jsonl");
    ok(&["xna", "--answers", p(&answers), "-o", p(tmp.path())]);
    let csv = std::fs::read_to_string(tmp.path().join("reports/xna_language_means.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("blip2,HI,primary,0.693313,6"));
}

#[test]
fn na_respects_model_filter() {
    let tmp = tempfile::tempdir().unwrap();
    let archive = fixtures().join("desk/archive");
    let listed = ok(&[
        "na",
        "--archive",
        p(&archive),
        "--model",
        "DF",
        "-o",
        p(tmp.path()),
    ]);
    assert!(listed.contains("reports/na_confusion/DF__fully_translated.csv"));
    assert!(!listed.contains("SD2.1"));
}

#[test]
fn missing_archive_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = cultprobe(&[
        "cd",
        "--archive",
        p(&tmp.path().join("nope")),
        "-o",
        p(&out),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope"));
    assert!(!out.exists());
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = fixtures().join("desk/run.json");
    ok(&["--dry-run", "report", "--config", p(&config), "-o", p(&out)]);
    assert!(!out.exists());
}

#[test]
fn prompts_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&[
        "prompts",
        "--model",
        "SD2.1",
        "--language",
        "EN",
        "--language",
        "FR",
        "--concept",
        "food",
        "-o",
        p(tmp.path()),
    ]);
    let manifest = std::fs::read_to_string(tmp.path().join("prompts/SD2.1.jsonl")).unwrap();
    // One line per set: 2 languages x 5 templates.
    assert_eq!(manifest.lines().count(), 10);
}

#[test]
fn exported_registry_loads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let reg = tmp.path().join("registry.json");
    ok(&["registry", "export", "--output", p(&reg)]);
    let again = ok(&["--registry", p(&reg), "registry", "export"]);
    assert_eq!(std::fs::read_to_string(&reg).unwrap(), again);
}

#[test]
fn external_encoder_matches_in_process() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("toy.json");
    let b = tmp.path().join("external.json");
    let server = format!("'{}' toy-server", env!("CARGO_BIN_EXE_cultprobe"));
    ok(&[
        "optimize",
        "--objective",
        "text:photo",
        "-T",
        "2",
        "--steps",
        "40",
        "-o",
        p(&a),
    ]);
    ok(&[
        "optimize",
        "--objective",
        "text:photo",
        "-T",
        "2",
        "--steps",
        "40",
        "--encoder",
        "external",
        "--encoder-cmd",
        &server,
        "-o",
        p(&b),
    ]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn optimize_keeps_to_the_alphabet() {
    let out = ok(&[
        "optimize",
        "--objective",
        "text:привет",
        "--lang",
        "RU",
        "-T",
        "3",
        "--steps",
        "30",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let gib = v[0]["gibberish"].as_str().unwrap();
    assert_eq!(gib.chars().count(), 3);
    assert!(
        gib.chars()
            .all(|c| "абвгдеёжзийклмнопрстуфхцчшщъыьэюя".contains(c)),
        "{gib}"
    );
}
