//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.
//!
//! ```text
//! cargo test -p cultprobe --test acceptance
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cultprobe::embedding::{EmbeddingStore, EmbeddingVector, SetKey};
use cultprobe::extrinsic::{
    majority_of, majority_vote, read_answers, xdp_from_labels, xna_summary, xna_votes, AliasTable,
    AnswerLabel,
};
use cultprobe::human_eval::{fleiss_kappa, AnnotationTable};
use cultprobe::intrinsic::{
    build_ccs_matrix, confusion_accuracy, cultural_distance, national_association, softmax,
    CcsInput, ConfusionMatrix, NaDistribution,
};
use cultprobe::ontology::{NationalityOrder, OntologyRegistry};
use cultprobe::optimizer::{
    optimize, ObjectiveFeatures, ObjectiveKind, OptimizationConfig, TokenVocabulary, ToyEncoder,
};
use cultprobe::par::Execution;
use cultprobe::pipeline::{run, RunConfig, RunOptions};
use cultprobe::prompt::{
    enumerate_dataset, render_prompt, GibberishSpec, ModelConfig, TemplateKind,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn f32s(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn prompt_rows() -> Outcome {
    let started = Instant::now();
    let reg = OntologyRegistry::bundled();
    let food = reg.concept("food").unwrap();
    let ru = reg.language("RU").unwrap();
    let en = reg.language("EN").unwrap();
    let gib = GibberishSpec {
        length: 10,
        rng_seed: 7,
    };
    let render = |kind, lang| render_prompt(kind, food, lang, &reg, Some(&gib)).unwrap();
    let exact = [
        (
            render(TemplateKind::EnglishReference, en).text,
            "a photo of food",
        ),
        (render(TemplateKind::FullyTranslated, ru).text, "фото еда"),
        (
            render(TemplateKind::TranslatedConcept, ru).text,
            "a photo of еда",
        ),
        (
            render(TemplateKind::EnglishWithNation, ru).text,
            "a photo of Russian food",
        ),
    ];
    let mut bad: Vec<String> = exact
        .iter()
        .filter(|(got, want)| got != want)
        .map(|(got, want)| format!("`{got}` != `{want}`"))
        .collect();
    // The gibberish word is random: check the fixed part and its alphabet.
    let g = render(TemplateKind::EnglishWithGibberish, ru);
    let word = g.text.strip_prefix("a photo of food ").unwrap_or("");
    if word.chars().count() != 10 || !ru.is_in_alphabet(word) {
        bad.push(format!("gibberish row `{}`", g.text));
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(1) {
        bad.push(format!("took {elapsed:.2?}"));
    }
    if bad.is_empty() {
        outcome(
            true,
            format!("5 rows exact, gibberish `{word}` ({elapsed:.2?})"),
        )
    } else {
        outcome(false, bad.join("; "))
    }
}

fn dataset_size() -> Outcome {
    let reg = OntologyRegistry::bundled();
    let m = enumerate_dataset(&ModelConfig::new("SD"), &reg, Execution::default()).unwrap();
    let seeds_ok = m
        .entries
        .iter()
        .all(|e| e.seed == 42 && e.image_seed(0) == 42);
    outcome(
        m.entries.len() == 10_500 && seeds_ok,
        format!(
            "{} entries, first-image seed 42 everywhere: {seeds_ok}",
            m.entries.len()
        ),
    )
}

fn na_math() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut argmax_moved = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let scale = [1.0, 10.0, 300.0][rng.random_range(0..3)];
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let p = softmax(&scores);
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            worst_shift = worst_shift.max((a - b).abs());
        }
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let d1 = NaDistribution {
            labels: labels.clone(),
            probs: p,
        };
        let d2 = NaDistribution { labels, probs: q };
        if d1.argmax() != d2.argmax() {
            argmax_moved += 1;
        }
    }

    // One image with cosines 0.8 and 0.2 against two nationality prompts.
    let mut store = EmbeddingStore::new(3);
    let image = SetKey::image("M", "food", TemplateKind::EnglishReference, "EN", 0);
    let a = SetKey::text("a photo of A style");
    let b = SetKey::text("a photo of B style");
    store.insert(image.clone(), vec![1.0, 0.0, 0.0]).unwrap();
    store.insert(a.clone(), f32s(&[0.8, 0.6, 0.0])).unwrap();
    store
        .insert(b.clone(), f32s(&[0.2, 0.0, 0.96f64.sqrt()]))
        .unwrap();
    let d = national_association(&[image], &[("A".into(), a), ("B".into(), b)], &store).unwrap();
    let analytic = 0.8f64.exp() / (0.8f64.exp() + 0.2f64.exp());
    let pair_err = (d.probs[0] - analytic).abs();

    let elapsed = started.elapsed();
    let pass = worst_sum <= 1e-6
        && pair_err <= 1e-4
        && worst_shift <= 1e-9
        && argmax_moved == 0
        && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "sum err {worst_sum:.1e}, (0.8, 0.2) err {pair_err:.1e}, shift err {worst_shift:.1e}, argmax moved {argmax_moved} ({elapsed:.2?})"
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("L{i}")).collect()
}

fn accuracy() -> Outcome {
    let identity = ConfusionMatrix {
        labels: labels(10),
        rows: (0..10)
            .map(|i| (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect(),
    };
    let id_acc = confusion_accuracy(&identity).unwrap().accuracy;

    let perms = permutations(4);
    let mut perm_bad = 0;
    for sigma in &perms {
        let m = ConfusionMatrix {
            labels: labels(4),
            rows: (0..4)
                .map(|i| {
                    (0..4)
                        .map(|j| if sigma[i] == j { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect(),
        };
        let fixed = sigma.iter().enumerate().filter(|(i, s)| i == *s).count();
        if confusion_accuracy(&m).unwrap().accuracy != fixed as f64 / 4.0 {
            perm_bad += 1;
        }
    }

    // Rows 3 and 7 peak off the diagonal; the others on it.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let mut row: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..0.5)).collect();
            let peak = if i == 3 || i == 7 { (i + 1) % 10 } else { i };
            row[peak] = 0.9;
            row
        })
        .collect();
    let synth = confusion_accuracy(&ConfusionMatrix {
        labels: labels(10),
        rows,
    })
    .unwrap()
    .accuracy;

    outcome(
        id_acc == 1.0 && perms.len() == 24 && perm_bad == 0 && synth == 0.8,
        format!(
            "identity {id_acc}, {}/24 permutations exact, synthetic {synth}",
            24 - perm_bad
        ),
    )
}

fn xdp() -> Outcome {
    let reg = OntologyRegistry::bundled();
    let dim = reg.dimension("modern_ancient").unwrap();
    let d0 = AnswerLabel::Named(dim.pole_positive.name.clone());
    let d1 = AnswerLabel::Named(dim.pole_negative.name.clone());
    let mut votes = vec![d0; 6];
    votes.extend(vec![d1; 3]);
    votes.push(AnswerLabel::CantTell);
    let s = xdp_from_labels(&votes, dim);
    outcome(
        s.value == 0.3 && (s.frac_d0, s.frac_d1, s.frac_cant) == (0.6, 0.3, 0.1),
        format!(
            "({}, {}, {}) -> {}",
            s.frac_d0, s.frac_d1, s.frac_cant, s.value
        ),
    )
}

fn majority() -> Outcome {
    let reg = OntologyRegistry::bundled();
    let aliases = AliasTable::nationalities(&reg).unwrap();
    let tie = majority_vote(&["India", "indian", "Russian", "a russian house"], &aliases).label;
    let three = majority_vote(&["India", "indian", "Hindi", "Russian"], &aliases).label;
    let india = reg.nationality("HI").unwrap().primary_name.clone();

    let pool: Vec<AnswerLabel> = ["Indian", "Russian", "Greek", "Chinese"]
        .iter()
        .map(|s| AnswerLabel::Named(s.to_string()))
        .chain([AnswerLabel::CantTell])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut moved = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=9);
        let mut votes: Vec<AnswerLabel> = (0..n)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect();
        let before = majority_of(&votes);
        votes.shuffle(&mut rng);
        if majority_of(&votes) != before {
            moved += 1;
        }
    }
    let pass =
        tie == AnswerLabel::CantTell && three == AnswerLabel::Named(india.clone()) && moved == 0;
    outcome(
        pass,
        format!("2-2 -> {tie:?}, 3-1 -> {three:?}, {moved} of 1000 shuffles changed the outcome"),
    )
}

fn xna_fixture() -> Outcome {
    let reg = OntologyRegistry::bundled();
    let file = File::open(fixtures().join("hi_xna/answers.jsonl")).unwrap();
    let answers = read_answers(BufReader::new(file)).unwrap();
    let votes = xna_votes(
        &answers,
        &AliasTable::nationalities(&reg).unwrap(),
        Execution::default(),
    );
    let summary = xna_summary(&votes, &reg, NationalityOrder::Primary).unwrap();
    match summary.language_means.iter().find(|m| m.lang == "HI") {
        Some(hi) => outcome(
            (hi.mean - 0.693).abs() <= 0.001,
            format!("HI mean {:.6} over {} models", hi.mean, hi.models),
        ),
        None => outcome(false, "no HI row"),
    }
}

fn cos64(a: &[f32], b: &[f32]) -> f64 {
    let d = |x: &[f32], y: &[f32]| {
        x.iter()
            .zip(y)
            .map(|(&p, &q)| p as f64 * q as f64)
            .sum::<f64>()
    };
    d(a, b) / (d(a, a).sqrt() * d(b, b).sqrt())
}

fn cd_ccs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 12;
    let pt = TemplateKind::FullyTranslated;

    // Identical embeddings.
    let mut same = EmbeddingStore::new(dim);
    let v = f32s(&gaussian(&mut rng, dim));
    let reference = SetKey::concept_text("food", "EN", "a photo of food");
    same.insert(reference.clone(), v.clone()).unwrap();
    let imgs: Vec<SetKey> = (0..3)
        .map(|i| SetKey::image("M", "food", pt, "FR", i))
        .collect();
    let bases: Vec<SetKey> = (0..2)
        .map(|i| SetKey::visual_baseline("web", "food", "FR", i))
        .collect();
    for k in imgs.iter().chain(&bases) {
        same.insert(k.clone(), v.clone()).unwrap();
    }
    let cd0 = cultural_distance(&imgs, &reference, &same).unwrap();
    let ccs1 = cultural_distance(&imgs, &reference, &same)
        .and_then(|_| cultprobe::intrinsic::cross_cultural_similarity(&imgs, &bases, &same))
        .unwrap();

    // Three languages, two concepts, uneven set sizes.
    let langs = ["EN", "FR", "DE"];
    let concepts = ["food", "house"];
    let mut store = EmbeddingStore::new(dim);
    let mut input = CcsInput {
        languages: langs.iter().map(|s| s.to_string()).collect(),
        concepts: concepts.iter().map(|s| s.to_string()).collect(),
        ..CcsInput::default()
    };
    for (li, lang) in langs.iter().enumerate() {
        for concept in concepts {
            let mut im = Vec::new();
            for i in 0..(2 + li as u32) {
                let k = SetKey::image("M", concept, pt, lang, i);
                store
                    .insert(k.clone(), f32s(&gaussian(&mut rng, dim)))
                    .unwrap();
                im.push(k);
            }
            let mut ba = Vec::new();
            for i in 0..(3 - li as u32 % 2) {
                let k = SetKey::visual_baseline("web", concept, lang, i);
                store
                    .insert(k.clone(), f32s(&gaussian(&mut rng, dim)))
                    .unwrap();
                ba.push(k);
            }
            input
                .images
                .insert((lang.to_string(), concept.to_string()), im);
            input
                .baselines
                .insert((lang.to_string(), concept.to_string()), ba);
        }
    }
    let m = build_ccs_matrix(&input, &store, Execution::default()).unwrap();
    let mut worst: f64 = 0.0;
    let mut oracle = vec![vec![0.0; 3]; 3];
    for (i, l1) in langs.iter().enumerate() {
        for (j, l2) in langs.iter().enumerate() {
            let mut per_concept = Vec::new();
            for concept in concepts {
                let a = &input.images[&(l1.to_string(), concept.to_string())];
                let b = &input.baselines[&(l2.to_string(), concept.to_string())];
                let mut sum = 0.0;
                for x in a {
                    for y in b {
                        sum += cos64(store.get(x).unwrap(), store.get(y).unwrap());
                    }
                }
                per_concept.push(sum / (a.len() * b.len()) as f64);
            }
            oracle[i][j] = per_concept.iter().sum::<f64>() / per_concept.len() as f64;
            worst = worst.max((oracle[i][j] - m.raw[i][j]).abs());
        }
    }
    let flat: Vec<f64> = m.raw.iter().flatten().copied().collect();
    let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let affine_exact = flat
        .iter()
        .zip(&m.normalized.values)
        .all(|(r, n)| (r - lo) / (hi - lo) == *n);

    outcome(
        cd0 == 0.0 && ccs1 == 1.0 && worst <= 1e-9 && affine_exact,
        format!("identical: CD {cd0}, CCS {ccs1}; 3-language oracle err {worst:.1e}; affine exact {affine_exact}"),
    )
}

/// Fleiss kappa written out term by term.
fn kappa_oracle(items: &[Vec<usize>]) -> f64 {
    let n = items.len() as f64;
    let m = items[0].iter().sum::<usize>() as f64;
    let k = items[0].len();
    let mut p_i = Vec::new();
    for row in items {
        let agree: f64 = row.iter().map(|&c| c as f64 * (c as f64 - 1.0)).sum();
        p_i.push(agree / (m * (m - 1.0)));
    }
    let p_bar = p_i.iter().sum::<f64>() / n;
    let mut p_e = 0.0;
    for j in 0..k {
        let p_j = items.iter().map(|r| r[j] as f64).sum::<f64>() / (n * m);
        p_e += p_j * p_j;
    }
    (p_bar - p_e) / (1.0 - p_e)
}

fn table(items: &[Vec<usize>]) -> AnnotationTable {
    AnnotationTable {
        question_id: "q".into(),
        categories: labels(items[0].len()),
        items: items
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("i{i}"), c.clone()))
            .collect(),
    }
}

fn kappa() -> Outcome {
    let perfect = table(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0]]);
    let perfect_k = fleiss_kappa(&perfect).unwrap().kappa;

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    let mut perm_bad = 0;
    while tested < 50 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let items: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let mut c = vec![0; k];
                for _ in 0..m {
                    c[rng.random_range(0..k)] += 1;
                }
                c
            })
            .collect();
        let r = fleiss_kappa(&table(&items)).unwrap();
        let Some(got) = r.kappa else { continue };
        tested += 1;
        worst = worst.max((got - kappa_oracle(&items)).abs());
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<Vec<usize>> = items
            .iter()
            .map(|c| order.iter().map(|&j| c[j]).collect())
            .collect();
        if fleiss_kappa(&table(&permuted)).unwrap().kappa != Some(got) {
            perm_bad += 1;
        }
    }
    outcome(
        perfect_k == Some(1.0) && worst <= 1e-9 && perm_bad == 0,
        format!("perfect {perfect_k:?}, 50 tables oracle err {worst:.1e}, {perm_bad} permutations changed kappa"),
    )
}

fn objective(enc: &ToyEncoder, rows: &[&[f64]], kind: ObjectiveKind) -> ObjectiveFeatures {
    ObjectiveFeatures {
        kind,
        vector: EmbeddingVector::from_f64(&enc.embed_rows(rows).unwrap()).unwrap(),
    }
}

fn toy_loss(enc: &ToyEncoder, rows: &[&[f64]], target: &[f64]) -> f64 {
    let e = enc.embed_rows(rows).unwrap();
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    -d(&e, target) / (d(&e, &e).sqrt() * d(target, target).sqrt())
}

fn optimizer() -> Outcome {
    let started = Instant::now();

    // Encoder gradient against central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    let mut worst_fd: f64 = 0.0;
    for trial in 0..100u64 {
        let (td, od) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let enc = ToyEncoder::new(td, od, trial).unwrap();
        let n = rng.random_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, td)).collect();
        let upstream = gaussian(&mut rng, od);
        let f = |rows: &[Vec<f64>]| -> f64 {
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            enc.embed_rows(&refs)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let analytic = enc.gradient_rows(&refs, &upstream).unwrap();
        for i in 0..n {
            for j in 0..td {
                let mut plus = rows.clone();
                plus[i][j] += h;
                let mut minus = rows.clone();
                minus[i][j] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let a = analytic[i][j];
                worst_fd = worst_fd.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
            }
        }
    }

    // Recovering a single known token.
    let letters: Vec<String> = ('a'..='z').map(String::from).collect();
    let mut recovered_min: f64 = 1.0;
    for seed in 0..10u64 {
        let vocab = TokenVocabulary::toy(&letters, 16, 11 + seed).unwrap();
        let enc = ToyEncoder::new(16, 8, 100 + seed).unwrap();
        let target = (seed as usize * 7) % vocab.len();
        let obj = objective(&enc, &[vocab.row(target)], ObjectiveKind::Textual);
        let mut cfg = OptimizationConfig::new(1, seed);
        cfg.learning_rate = 1.0;
        let r = optimize(&obj, &mut enc.clone(), &vocab, &vocab, &cfg).unwrap();
        recovered_min = recovered_min.min(r.final_cosine());
    }

    // T=2 against exhaustive search over a three-token vocabulary, defaults.
    let mut violations = 0;
    let mut matched = 0;
    for seed in 0..10u64 {
        let vocab = TokenVocabulary::toy(&["a", "b", "c"], 8, seed).unwrap();
        let enc = ToyEncoder::new(8, 8, 1000 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let raw = gaussian(&mut rng, 8);
        let obj = ObjectiveFeatures {
            kind: ObjectiveKind::Visual,
            vector: EmbeddingVector::from_f64(&raw).unwrap(),
        };
        let target: Vec<f64> = obj.vector.as_slice().iter().map(|&v| v as f64).collect();
        let mut best = f64::INFINITY;
        for i in 0..vocab.len() {
            for j in 0..vocab.len() {
                best = best.min(toy_loss(&enc, &[vocab.row(i), vocab.row(j)], &target));
            }
        }
        let r = optimize(
            &obj,
            &mut enc.clone(),
            &vocab,
            &vocab,
            &OptimizationConfig::new(2, seed),
        )
        .unwrap();
        if r.final_loss < best - 1e-6 {
            violations += 1;
        }
        if (r.final_loss - best).abs() <= 1e-6 {
            matched += 1;
        }
    }

    let elapsed = started.elapsed();
    let pass = worst_fd < 1e-4
        && recovered_min >= 0.99
        && violations == 0
        && matched >= 8
        && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "fd rel err {worst_fd:.1e}, recovery min cos {recovered_min:.4}, T=2 bound violations {violations}, optimum on {matched}/10 seeds ({elapsed:.2?})"
        ),
    )
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

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let mut cfg = RunConfig::from_path(fixtures().join("desk/run.json")).unwrap();
        cfg.output_dir = tmp.path().join(name);
        if let Err(e) = run(&cfg, RunOptions::default()) {
            return outcome(false, format!("run failed: {e}"));
        }
        trees.push(tree(&cfg.output_dir));
    }
    let files = trees[0].len();
    let differing: HashSet<&PathBuf> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    outcome(
        differing.is_empty() && trees[0].len() == trees[1].len(),
        format!("{files} files, {} differ", differing.len()),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 11] = [
        ("prompt rendering", prompt_rows),
        ("dataset enumeration", dataset_size),
        ("NA math", na_math),
        ("ACC", accuracy),
        ("XDP", xdp),
        ("majority vote", majority),
        ("XNA fixture", xna_fixture),
        ("CD/CCS", cd_ccs),
        ("Fleiss kappa", kappa),
        ("optimizer", optimizer),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = check();
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
