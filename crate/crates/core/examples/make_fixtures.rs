//! Regenerates the shipped test fixtures under `tests/fixtures/`.
//!
//! ```text
//! cargo run -p cultprobe --example make_fixtures
//! ```
//!
//! Everything is drawn from fixed ChaCha8 seeds, so rerunning reproduces the
//! committed files byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cultprobe::embedding::{EmbeddingStore, SetKey};
use cultprobe::extrinsic::{QuestionId, VqaAnswer, CANT_TELL};
use cultprobe::ontology::OntologyRegistry;
use cultprobe::prompt::TemplateKind;
use cultprobe::suite::{concept_term_key, nationality_text_key, pole_text_key, reference_text_key};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DIM: usize = 32;
const K: u32 = 4;
const DESK_MODELS: [&str; 2] = ["SD2.1", "DF"];
const DESK_CONCEPTS: [&str; 3] = ["food", "house", "wedding"];
const DESK_TEMPLATES: [TemplateKind; 2] = [
    TemplateKind::FullyTranslated,
    TemplateKind::EnglishWithNation,
];
const XDP_DIMENSIONS: [&str; 2] = ["modern_ancient", "traditional_rational"];

/// Correct XNA majorities per model over HI answer sets: (model, correct, sets).
const HI_ROW: [(&str, usize, usize); 6] = [
    ("AD", 233, 379),
    ("DL", 5, 8),
    ("DF", 14, 19),
    ("LB", 297, 400),
    ("SD1.4", 151, 211),
    ("SD2.1", 153, 211),
];

const HUMAN_ITEMS: usize = 125;
const HUMAN_AGREE: usize = 87;
const HUMAN_LANGS: [&str; 4] = ["EN", "HI", "RU", "ZH"];

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let reg = OntologyRegistry::bundled();
    desk_archive(&reg, &root.join("desk/archive"));
    write(&root.join("desk/answers.jsonl"), &desk_answers(&reg));
    write(&root.join("desk/run.json"), DESK_RUN);
    write(&root.join("hi_xna/answers.jsonl"), &hi_answers(&reg));
    let (annotations, auto) = human_eval(&reg);
    write(&root.join("human_eval/annotations.csv"), &annotations);
    write(&root.join("human_eval/auto_labels.jsonl"), &auto);
    println!("fixtures written to {}", root.display());
}

const DESK_RUN: &str = r#"{
  "output_dir": "out",
  "models": [
    {"model_id": "SD2.1", "languages": ["EN", "FR", "HI"], "concepts": ["food", "house", "wedding"]}
  ],
  "archives": ["archive"],
  "answers": ["answers.jsonl"],
  "annotations": "../human_eval/annotations.csv",
  "auto_labels": "../human_eval/auto_labels.jsonl"
}
"#;

fn write(path: &Path, contents: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, contents).unwrap();
}

fn gaussian(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DIM).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `normalize(sum of weight * direction)` plus Gaussian noise.
fn mix(parts: &[(f64, &[f64])], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut v: Vec<f64> = gaussian(rng)
        .into_iter()
        .map(|x| x * noise / (DIM as f64).sqrt())
        .collect();
    for (w, dir) in parts {
        for (a, b) in v.iter_mut().zip(*dir) {
            *a += w * b;
        }
    }
    unit(v).into_iter().map(|x| x as f32).collect()
}

fn desk_archive(reg: &OntologyRegistry, dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let langs = reg.language_codes();
    let lang_dir: Vec<Vec<f64>> = langs.iter().map(|_| unit(gaussian(&mut rng))).collect();
    let concept_dir: Vec<Vec<f64>> = DESK_CONCEPTS
        .iter()
        .map(|_| unit(gaussian(&mut rng)))
        .collect();
    let dims: Vec<_> = reg.dimensions().to_vec();
    let pole_dir: Vec<(Vec<f64>, Vec<f64>)> = dims
        .iter()
        .map(|_| (unit(gaussian(&mut rng)), unit(gaussian(&mut rng))))
        .collect();
    // Per language, how strongly images lean to each pole.
    let leaning: Vec<Vec<(f64, f64)>> = langs
        .iter()
        .map(|_| {
            dims.iter()
                .map(|_| (rng.random_range(0.0..0.4), rng.random_range(0.0..0.4)))
                .collect()
        })
        .collect();

    let mut store = EmbeddingStore::new(DIM);
    for (li, lang) in langs.iter().enumerate() {
        let nat = reg.nationality(lang).unwrap();
        store
            .insert(
                nationality_text_key(&nat.primary_name),
                mix(&[(1.0, &lang_dir[li])], 0.3, &mut rng),
            )
            .unwrap();
    }
    for (d, (p, n)) in dims.iter().zip(&pole_dir) {
        store
            .insert(
                pole_text_key(&d.pole_positive),
                mix(&[(1.0, p)], 0.2, &mut rng),
            )
            .unwrap();
        store
            .insert(
                pole_text_key(&d.pole_negative),
                mix(&[(1.0, n)], 0.2, &mut rng),
            )
            .unwrap();
    }
    let en = langs.iter().position(|l| l == "EN").unwrap();
    for (ci, cid) in DESK_CONCEPTS.iter().enumerate() {
        let concept = reg.concept(cid).unwrap();
        store
            .insert(
                reference_text_key(concept),
                mix(
                    &[(1.0, &concept_dir[ci]), (0.2, &lang_dir[en])],
                    0.2,
                    &mut rng,
                ),
            )
            .unwrap();
        store
            .insert(
                concept_term_key(concept),
                mix(&[(1.0, &concept_dir[ci])], 0.1, &mut rng),
            )
            .unwrap();
    }
    for model in DESK_MODELS {
        for (ti, pt) in DESK_TEMPLATES.iter().enumerate() {
            // The nation template pulls harder towards the language direction.
            let cultural = 0.5 + 0.3 * ti as f64;
            for (li, lang) in langs.iter().enumerate() {
                for (ci, cid) in DESK_CONCEPTS.iter().enumerate() {
                    for idx in 0..K {
                        let mut parts: Vec<(f64, &[f64])> =
                            vec![(1.0, &concept_dir[ci]), (cultural, &lang_dir[li])];
                        for ((p, n), (wp, wn)) in pole_dir.iter().zip(&leaning[li]) {
                            parts.push((*wp, p));
                            parts.push((*wn, n));
                        }
                        let row = mix(&parts, 0.6, &mut rng);
                        store
                            .insert(SetKey::image(model, cid, *pt, lang, idx), row)
                            .unwrap();
                        if model == DESK_MODELS[0] {
                            let text = format!("a photo of {} number {idx}", concept_label(cid));
                            let noise = 0.5 + 0.5 * ti as f64;
                            let desc = mix(
                                &[(1.0, &concept_dir[ci]), (0.4, &lang_dir[li])],
                                noise,
                                &mut rng,
                            );
                            store
                                .insert(
                                    SetKey::description(model, cid, *pt, lang, idx, &text),
                                    desc,
                                )
                                .unwrap();
                        }
                    }
                }
            }
        }
    }
    for (li, lang) in langs.iter().enumerate() {
        for (ci, cid) in DESK_CONCEPTS.iter().enumerate() {
            for idx in 0..2 {
                let row = mix(
                    &[(1.0, &concept_dir[ci]), (0.8, &lang_dir[li])],
                    0.5,
                    &mut rng,
                );
                store
                    .insert(SetKey::visual_baseline("google", cid, lang, idx), row)
                    .unwrap();
            }
        }
    }
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    store.export_archive(dir).unwrap();
}

fn concept_label(id: &str) -> String {
    id.replace('_', " ")
}

fn answer(
    model: &str,
    concept: &str,
    pt: TemplateKind,
    lang: &str,
    idx: u32,
    q: QuestionId,
    text: &str,
) -> String {
    let a = VqaAnswer {
        model: model.to_string(),
        concept: concept.to_string(),
        pt,
        lang: lang.to_string(),
        image_index: idx,
        question_id: q,
        answer: text.to_string(),
        source: "blip2".to_string(),
    };
    serde_json::to_string(&a).unwrap()
}

fn desk_answers(reg: &OntologyRegistry) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let langs = reg.language_codes();
    let names: Vec<String> = reg
        .nationalities()
        .iter()
        .map(|n| n.primary_name.clone())
        .collect();
    let mut out = String::new();
    for model in DESK_MODELS {
        for pt in DESK_TEMPLATES {
            for lang in &langs {
                let own = reg.nationality(lang).unwrap();
                for cid in DESK_CONCEPTS {
                    for idx in 0..K {
                        let text = match rng.random_range(0..10) {
                            0..=5 => format!(
                                "this photo is from {}",
                                own.country_aliases.first().unwrap_or(&own.primary_name)
                            ),
                            6 => "__error__".to_string(),
                            7 => "i don't know".to_string(),
                            _ => names[rng.random_range(0..names.len())].clone(),
                        };
                        writeln!(
                            out,
                            "{}",
                            answer(model, cid, pt, lang, idx, QuestionId::Xna, &text)
                        )
                        .unwrap();
                        for dim_id in XDP_DIMENSIONS {
                            let dim = reg.dimension(dim_id).unwrap();
                            let text = match rng.random_range(0..5) {
                                0 | 1 => dim.pole_positive.answer.clone(),
                                2 | 3 => dim.pole_negative.answer.clone(),
                                _ => "both".to_string(),
                            };
                            let q = QuestionId::Xdp(dim_id.to_string());
                            writeln!(out, "{}", answer(model, cid, pt, lang, idx, q, &text))
                                .unwrap();
                        }
                    }
                }
            }
        }
    }
    out
}

/// Answer sets for the HI row: the first `correct` sets get a clear Hindi
/// majority, the rest a wrong majority, a tie or no usable answer.
fn hi_answers(reg: &OntologyRegistry) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(693);
    let concepts = reg.concept_ids();
    let pts = [
        TemplateKind::TranslatedConcept,
        TemplateKind::FullyTranslated,
    ];
    let slots: Vec<(&String, TemplateKind)> =
        concepts.iter().flat_map(|c| pts.map(|p| (c, p))).collect();
    let hindi = ["India", "indian", "the photo is from india", "Hindi"];
    let other = [
        "Chinese",
        "pakistan",
        "Arab",
        "nepal",
        "a Greek village",
        "Russian",
    ];
    let right: [&[usize]; 4] = [&[0, 0, 0, 1], &[0, 0, 1, 2], &[0, 0, 0, 0], &[0, 0, 0, 3]];
    let wrong: [&[usize]; 4] = [&[1, 1, 0, 2], &[0, 0, 1, 1], &[2, 2, 2, 0], &[1, 1, 1, 1]];
    let mut out = String::new();
    for (model, correct, sets) in HI_ROW {
        for (s, (concept, pt)) in slots.iter().take(sets).enumerate() {
            let pattern = if s < correct {
                right[rng.random_range(0..right.len())]
            } else {
                wrong[rng.random_range(0..wrong.len())]
            };
            // 0: a Hindi form, 1: one wrong nationality per set, 2: no nationality, 3: model failure.
            let wrong_pick = other[rng.random_range(0..other.len())];
            let wrong_pick = if wrong_pick == "pakistan" || wrong_pick == "nepal" {
                "Chinese"
            } else {
                wrong_pick
            };
            for (idx, &kind) in pattern.iter().enumerate() {
                let text = match kind {
                    0 => hindi[rng.random_range(0..hindi.len())].to_string(),
                    1 => wrong_pick.to_string(),
                    2 => ["i can't tell", "pakistan", "nepal", "unknown"][rng.random_range(0..4)]
                        .to_string(),
                    _ => "__error__".to_string(),
                };
                writeln!(
                    out,
                    "{}",
                    answer(
                        model,
                        concept,
                        *pt,
                        "HI",
                        idx as u32,
                        QuestionId::Xna,
                        &text
                    )
                )
                .unwrap();
            }
        }
    }
    out
}

/// 125 items with three annotators on the origin question and a second
/// dimension question; automatic labels match the human majority on 87.
fn human_eval(reg: &OntologyRegistry) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(696);
    let names: Vec<String> = HUMAN_LANGS
        .iter()
        .map(|l| reg.nationality(l).unwrap().primary_name.clone())
        .collect();
    let mut csv = String::from("item_id,annotator_id,question_id,label\n");
    let mut majority = Vec::with_capacity(HUMAN_ITEMS);
    for i in 0..HUMAN_ITEMS {
        let item = format!("img_{i:03}");
        let truth = &names[i % names.len()];
        let other = &names[(i + 1 + rng.random_range(0..names.len() - 1)) % names.len()];
        let labels: [&str; 3] = match rng.random_range(0..10) {
            0..=5 => [truth, truth, truth],
            6..=8 => [truth, truth, other],
            _ => [other, other, truth],
        };
        majority.push(
            if labels[0] == labels[1] {
                labels[0]
            } else {
                labels[2]
            }
            .to_string(),
        );
        for (a, label) in labels.iter().enumerate() {
            writeln!(csv, "{item},ann{a},xna,{label}").unwrap();
        }
        let dim = reg.dimension("modern_ancient").unwrap();
        let poles = [
            dim.pole_positive.name.as_str(),
            dim.pole_negative.name.as_str(),
            CANT_TELL,
        ];
        for a in 0..3 {
            let label = poles[if rng.random_bool(0.7) {
                i % 2
            } else {
                rng.random_range(0..3)
            }];
            writeln!(csv, "{item},ann{a},xdp:modern_ancient,{label}").unwrap();
        }
    }
    let mut order: Vec<usize> = (0..HUMAN_ITEMS).collect();
    order.shuffle(&mut rng);
    let disagree: std::collections::BTreeSet<usize> =
        order[HUMAN_AGREE..].iter().copied().collect();
    let mut auto = String::new();
    for (i, human) in majority.iter().enumerate() {
        let label = if disagree.contains(&i) {
            if rng.random_bool(0.5) {
                CANT_TELL.to_string()
            } else {
                names.iter().find(|n| *n != human).unwrap().clone()
            }
        } else {
            human.clone()
        };
        let line = serde_json::json!({"item_id": format!("img_{i:03}"), "question_id": "xna", "label": label});
        writeln!(auto, "{line}").unwrap();
    }
    (csv, auto)
}
