use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cultprobe::extrinsic::{read_answers, validate_answers, xna_summary, xna_votes, AliasTable};
use cultprobe::human_eval::{evaluate, read_annotations, read_auto_labels};
use cultprobe::ontology::{NationalityOrder, OntologyRegistry};
use cultprobe::par::Execution;
use cultprobe::pipeline::{run, RunConfig, RunOptions, RunStatus, Stage};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn desk_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_path(fixtures().join("desk/run.json")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn hi_row_mean_is_reproduced() {
    let reg = OntologyRegistry::bundled();
    let answers = read_answers(BufReader::new(
        File::open(fixtures().join("hi_xna/answers.jsonl")).unwrap(),
    ))
    .unwrap();
    validate_answers(&answers, &reg).unwrap();
    let votes = xna_votes(
        &answers,
        &AliasTable::nationalities(&reg).unwrap(),
        Execution::default(),
    );
    let summary = xna_summary(&votes, &reg, NationalityOrder::Primary).unwrap();
    let hi = summary
        .language_means
        .iter()
        .find(|m| m.lang == "HI")
        .unwrap();
    assert_eq!(hi.models, 6);
    assert!((hi.mean - 0.693).abs() <= 0.001, "{}", hi.mean);
    let df = summary.cells.iter().find(|c| c.model == "DF").unwrap();
    assert_eq!((df.result.correct, df.result.total), (14, 19));
}

#[test]
fn human_agreement_is_reproduced() {
    let tables = read_annotations(
        File::open(fixtures().join("human_eval/annotations.csv")).unwrap(),
        Some(3),
    )
    .unwrap();
    let auto = read_auto_labels(BufReader::new(
        File::open(fixtures().join("human_eval/auto_labels.jsonl")).unwrap(),
    ))
    .unwrap();
    let reports = evaluate(&tables, &auto).unwrap();
    let xna = reports.iter().find(|r| r.question_id == "xna").unwrap();
    let agreement = xna.agreement.as_ref().unwrap();
    assert_eq!((agreement.matches, agreement.total), (87, 125));
    assert!((agreement.rate - 69.6).abs() <= 0.1);
    assert!(xna.kappa.kappa.unwrap() > 0.0);
}

#[test]
fn desk_run_emits_every_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = run(&desk_config(&tmp.path().join("out")), RunOptions::default()).unwrap();
    assert_eq!(rec.status, RunStatus::Complete);
    assert_eq!(rec.stages, Stage::ALL);
    assert!(rec.skipped.is_empty(), "{:?}", rec.skipped);
    for group in [
        "prompts",
        "ingest",
        "na",
        "dp",
        "cd",
        "ccs",
        "coverage",
        "xna",
        "xdp",
        "human_eval",
        "record",
    ] {
        assert!(rec.outputs.contains_key(group), "missing {group}");
    }
    let written = tree(&tmp.path().join("out"));
    let listed: Vec<PathBuf> = rec.files().map(PathBuf::from).collect();
    assert_eq!(
        written.keys().cloned().collect::<Vec<_>>().len(),
        listed.len()
    );
    for f in &listed {
        assert!(written.contains_key(f), "{}", f.display());
    }
    let radar = std::fs::read_to_string(tmp.path().join("out/reports/radar.csv")).unwrap();
    // 2 models x 10 languages x 2 dimensions, plus the header.
    assert_eq!(radar.lines().count(), 1 + 2 * 10 * 2);
}

#[test]
fn desk_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&desk_config(&a), RunOptions::default()).unwrap();
    run(
        &desk_config(&b),
        RunOptions {
            exec: Execution::Sequential,
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(tree(&a), tree(&b));
}
