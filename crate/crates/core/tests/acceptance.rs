//! Acceptance gate: one pass/fail line per criterion, then a single assert.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::fixtures::{mocks, tree_digests};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;
use videomemory::agents::template::{MEMORY_ANALYZE, VIDEO_SUMMARIZE};
use videomemory::agents::{build_keyframe_request, build_video_prompt, BannedTerms, PromptSet};
use videomemory::backends::mock::{render_response, MockRule};
use videomemory::backends::{ImagePurpose, MockText};
use videomemory::bench::{mock_fixture, synthetic_case, synthetic_suite, write_suite, MockFixture};
use videomemory::domain::{
    AssetRef, AttributeState, EntityCategory, EntitySpec, ShotDescription, Storyboard, Synopsis,
    MAX_VIDEO_PROMPT_CHARS,
};
use videomemory::eval::{
    cosine, evaluate_suite, load_run_outputs, score_features, score_from_similarities, sequence_score,
    validate_suite_layout, BenchmarkCase, FeatureVector, MockEmbedder, Subclass, SuiteReport,
};
use videomemory::memory::{ExactMatcher, MemoryBank, MemoryEntry};
use videomemory::pipeline::{resume, run_storyboard, PipelineError, RunConfig, RunManifest, MANIFEST_FILE};

const SHIPPED_TERMS: &str = include_str!("../assets/banned_terms.txt");

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
}

fn criterion(id: u32, budget: Option<Duration>, f: impl FnOnce() -> String) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(d) => (true, d),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            (false, msg)
        }
    };
    if let Some(b) = budget {
        if elapsed > b {
            passed = false;
            detail = format!("{detail}; over budget of {b:?}");
        }
    }
    println!(
        "criterion {id}: {} ({:.2}s) {detail}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    Outcome { id, passed, detail }
}

fn case(n_req: u32) -> BenchmarkCase {
    BenchmarkCase {
        id: format!("oracle-{n_req}"),
        subclass: Subclass::CharacterPersistent,
        required_shots: n_req,
        shots: vec!["x".into(); n_req as usize],
        target: "t".into(),
    }
}

fn config(out: &Path, run_id: &str) -> RunConfig {
    let mut c = RunConfig::new(out);
    c.run_id = Some(run_id.into());
    c
}

fn shot_frames(manifest: &RunManifest, run_dir: &Path) -> Vec<Vec<PathBuf>> {
    manifest.videos().iter().map(|v| v.frames(run_dir).unwrap()).collect()
}

fn as_subclass(case: &BenchmarkCase, subclass: Subclass, target: &str) -> BenchmarkCase {
    BenchmarkCase {
        subclass,
        target: target.into(),
        ..case.clone()
    }
}

// Criterion 1

fn worked_example() -> String {
    let sims = [0.91, 0.82, 0.73, 0.64, 0.55];
    let listed: Vec<Option<f64>> = sims.iter().copied().map(Some).collect();
    let expected = (0.91 + 0.82 + 0.73 + 0.64 + 0.55) / 7.0;
    let got = score_from_similarities(8, &listed);
    assert_eq!(got, expected, "sum of five over seven");

    let ones = score_from_similarities(8, &[Some(1.0); 5]);
    assert!((ones - 5.0 / 7.0).abs() <= 1e-12, "{ones}");

    let same = vec![FeatureVector::detected(vec![0.3, -0.2, 0.9]); 6];
    let scored = score_features(&case(8), &same).unwrap();
    assert!((scored.score - 5.0 / 7.0).abs() <= 1e-12, "{}", scored.score);
    assert_eq!(scored.similarities.len(), 5);
    format!("score {got:.12} = sum/7, all-ones {ones:.12}")
}

// Criterion 2

fn oracle_similarity(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter().zip(v).map(|(a, b)| (a / nu) * (b / nv)).sum()
}

fn oracle_score(n_req: usize, shots: &[(bool, Vec<f64>)]) -> f64 {
    let (ref_seen, reference) = &shots[0];
    if !ref_seen {
        return 0.0;
    }
    let mut padded = vec![0.0; n_req - 1];
    for (slot, i) in padded.iter_mut().zip(1..n_req) {
        if let Some((true, v)) = shots.get(i) {
            *slot = oracle_similarity(reference, v);
        }
    }
    padded.iter().map(|s| if *s > 0.0 { *s } else { 0.0 }).sum::<f64>() / (n_req - 1) as f64
}

fn oracle_equivalence() -> String {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let instances = 2000;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n_req = [4usize, 8, 12][rng.random_range(0..3)];
        let n_out = rng.random_range(1..=n_req + 3);
        let dim = rng.random_range(1..=24);
        let shots: Vec<(bool, Vec<f64>)> = (0..n_out)
            .map(|_| {
                let seen = rng.random::<f64>() >= 0.1;
                (seen, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            })
            .collect();
        let features: Vec<FeatureVector> = shots
            .iter()
            .map(|(seen, v)| {
                if *seen {
                    FeatureVector::detected(v.clone())
                } else {
                    FeatureVector::undetected()
                }
            })
            .collect();
        let got = score_features(&case(n_req as u32), &features).unwrap().score;
        worst = worst.max((got - oracle_score(n_req, &shots)).abs());
        for (seen, v) in &shots[1..] {
            if *seen && shots[0].0 {
                let c = cosine(&features[0], &FeatureVector::detected(v.clone())).unwrap();
                worst = worst.max((c - oracle_similarity(&shots[0].1, v)).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
    format!("{instances} instances, max deviation {worst:e}")
}

// Criterion 3

fn mock_loop() -> String {
    let dir = tempfile::tempdir().unwrap();
    let case = synthetic_case(Subclass::CharacterPersistent, 4, 1);
    write_suite(&dir.path().join("suite"), std::slice::from_ref(&case), false).unwrap();
    let suite = validate_suite_layout(&dir.path().join("suite")).unwrap();
    let f = mock_fixture(&case);
    let mut scores = Vec::new();
    for (runs, no_memory) in [("with", false), ("without", true)] {
        let m = mocks(f.text_backend(), 5);
        let mut c = config(&dir.path().join(runs), &case.id);
        c.memory.ablation_no_memory = no_memory;
        run_storyboard(&f.storyboard, &c, &m.backends, &ExactMatcher).unwrap();
        let outputs = load_run_outputs(&dir.path().join(runs), &suite);
        let report = evaluate_suite(&suite, &outputs, &MockEmbedder, runs).unwrap();
        scores.push(report.average(Subclass::CharacterPersistent).unwrap().mean.unwrap());
    }
    assert!((scores[0] - 1.0).abs() <= 1e-6, "with memory {}", scores[0]);
    assert!(scores[1] < 1.0, "without memory {}", scores[1]);
    format!("with memory {:.6}, without {:.6}", scores[0], scores[1])
}

// Criterion 4

fn per_bank_ablation() -> String {
    let dir = tempfile::tempdir().unwrap();
    let case = synthetic_case(Subclass::PropPersistent, 4, 1);
    let f = mock_fixture(&case);
    let mut per_run = Vec::new();
    for (run_id, prop_bank) in [("baseline", true), ("no-prop-bank", false)] {
        let m = mocks(f.text_backend(), 5);
        let mut c = config(dir.path(), run_id);
        c.memory.enable_prop_bank = prop_bank;
        let manifest = run_storyboard(&f.storyboard, &c, &m.backends, &ExactMatcher).unwrap();
        let frames = shot_frames(&manifest, &dir.path().join(run_id));
        let score = |sub: Subclass, target: &str| {
            sequence_score(&as_subclass(&case, sub, target), &frames, &MockEmbedder)
                .unwrap()
                .score
        };
        per_run.push([
            score(Subclass::CharacterPersistent, "any character"),
            score(Subclass::PropPersistent, &case.target),
            score(Subclass::BackgroundPersistent, "any scene"),
        ]);
    }
    let [base, ablated] = [per_run[0], per_run[1]];
    assert!(ablated[1] < base[1], "prop {} -> {}", base[1], ablated[1]);
    assert_eq!(ablated[0], base[0], "character changed");
    assert_eq!(ablated[2], base[2], "background changed");
    format!(
        "prop {:.4} -> {:.4}; character {:.4}, background {:.4} unchanged",
        base[1], ablated[1], base[0], base[2]
    )
}

// Criterion 5

fn reuse_economy() -> String {
    let dir = tempfile::tempdir().unwrap();
    let f = mock_fixture(&synthetic_case(Subclass::CharacterPersistent, 8, 1));
    let m = mocks(f.text_backend(), 2);
    run_storyboard(&f.storyboard, &config(dir.path(), "k8"), &m.backends, &ExactMatcher).unwrap();
    let counts = (
        m.image.reference_calls(EntityCategory::Character),
        m.image.keyframe_calls(),
        m.video.call_count(),
    );
    assert_eq!(counts, (1, 8, 8));
    format!("character references {}, keyframes {}, videos {}", counts.0, counts.1, counts.2)
}

// Criterion 6

fn time_jump_fixture() -> MockFixture {
    let shot = |index: u32, plot: &str| ShotDescription {
        index,
        scene: "orchard".into(),
        scene_description: "An apple orchard.".into(),
        plot: plot.into(),
        characters: vec!["Mara".into()],
        key_props: vec!["basket".into()],
        environment_info: String::new(),
        extra: Default::default(),
    };
    let shots = vec![
        shot(1, "Mara picks apples beside her father."),
        shot(2, "Forty years later Mara returns to the same trees."),
    ];
    let board = Storyboard::new(Synopsis::new("Mara and the orchard.", None).unwrap(), shots).unwrap();
    let analysis = |age: &str| {
        render_response(&json!({ "entities": [
            { "entity_name": "Mara", "entity_type": "character",
              "state_description": format!("Mara at age {age}"), "attributes": { "age": age } },
            { "entity_name": "basket", "entity_type": "prop",
              "state_description": "a wicker basket", "attributes": { "condition": "worn" } },
            { "entity_name": "orchard", "entity_type": "background",
              "state_description": "the orchard in daylight", "attributes": { "lighting": "daylight" } },
        ]}))
    };
    let rules = vec![
        MockRule { template: MEMORY_ANALYZE.into(), shot: Some(1), response: analysis("20") },
        MockRule { template: MEMORY_ANALYZE.into(), shot: Some(2), response: analysis("60") },
    ];
    MockFixture { storyboard: board, rules }
}

fn temporal_update() -> String {
    let dir = tempfile::tempdir().unwrap();
    let f = time_jump_fixture();
    let m = mocks(f.text_backend(), 2);
    run_storyboard(&f.storyboard, &config(dir.path(), "mara"), &m.backends, &ExactMatcher).unwrap();
    let bank = MemoryBank::load(&dir.path().join("mara/memory")).unwrap();
    let history = bank.history("Mara", EntityCategory::Character);
    assert_eq!(history.len(), 2, "bank entries for Mara");
    assert_eq!(history[0].entity.state.attributes["age"], "20");
    assert_eq!(history[1].entity.state.attributes["age"], "60");
    let calls: Vec<_> = m
        .image
        .calls()
        .into_iter()
        .filter(|c| c.purpose == ImagePurpose::Reference(EntityCategory::Character))
        .collect();
    assert_eq!(calls.len(), 2);
    assert!(calls[0].reference_digests.is_empty());
    assert_eq!(calls[1].reference_digests, vec![history[0].reference.digest.clone()]);
    format!("2 entries, second generation saw history of {}", calls[1].reference_digests.len())
}

// Criterion 7

fn comparable(bank: &MemoryBank) -> Vec<(String, EntitySpec, String, u32, u64)> {
    EntityCategory::ALL
        .iter()
        .flat_map(|c| bank.store(*c).values())
        .map(|e: &MemoryEntry| {
            (
                e.key.clone(),
                e.entity.clone(),
                e.reference.digest.clone(),
                e.created_at_shot,
                e.sequence,
            )
        })
        .collect()
}

fn persistence_and_resume() -> String {
    let dir = tempfile::tempdir().unwrap();
    let f = mock_fixture(&synthetic_case(Subclass::CharacterPersistent, 4, 1));

    let m = mocks(f.text_backend(), 3);
    run_storyboard(&f.storyboard, &config(dir.path(), "full"), &m.backends, &ExactMatcher).unwrap();
    let bank = MemoryBank::load(&dir.path().join("full/memory")).unwrap();
    assert!(bank.len() >= 3);
    let copy = dir.path().join("copy");
    bank.save(&copy).unwrap();
    let reloaded = MemoryBank::load(&copy).unwrap();
    assert_eq!(comparable(&reloaded), comparable(&bank));

    let mut rules = f.rules.clone();
    for r in rules.iter_mut() {
        if r.template == MEMORY_ANALYZE && r.shot == Some(3) {
            r.response = "nothing usable".into();
        }
    }
    let broken = mocks(MockText::rules(rules), 3);
    let err = run_storyboard(&f.storyboard, &config(dir.path(), "halted"), &broken.backends, &ExactMatcher)
        .unwrap_err();
    assert!(matches!(err, PipelineError::ShotFailed { shot: 3, .. }), "{err}");
    let run_dir = dir.path().join("halted");
    let before: Vec<_> = tree_digests(&run_dir.join("shots"))
        .into_iter()
        .filter(|(k, _)| k.starts_with("1/") || k.starts_with("2/"))
        .collect();
    assert!(!before.is_empty());

    let fixed = mocks(f.text_backend(), 3);
    let done = resume(
        &run_dir.join(MANIFEST_FILE),
        &config(dir.path(), "halted"),
        &fixed.backends,
        &ExactMatcher,
    )
    .unwrap();
    assert!(done.is_complete());
    let after = tree_digests(&run_dir.join("shots"));
    for (path, digest) in &before {
        assert_eq!(after.get(path), Some(digest), "{path} changed");
    }
    assert!(fixed.text.requests().iter().all(|r| r.shot.is_some_and(|s| s >= 3)));
    assert_eq!(fixed.image.keyframe_calls(), 2);
    assert_eq!(fixed.video.call_count(), 2);
    format!(
        "{} bank entries round-trip; resume regenerated 0 of 2 done shots, {} artifacts unchanged",
        bank.len(),
        before.len()
    )
}

// Criterion 8

fn rejected_with(dir: &Path, needle: &str) -> String {
    let err = validate_suite_layout(dir).expect_err("suite should be rejected");
    let text = err.to_string();
    assert!(
        err.violations.iter().any(|v| v.contains(needle)),
        "no violation mentions {needle:?}: {text}"
    );
    needle.to_string()
}

fn benchmark_layout() -> String {
    let cases = synthetic_suite();
    let build = |dir: &Path| write_suite(dir, &cases, true).unwrap();
    let root = tempfile::tempdir().unwrap();

    let good = root.path().join("good");
    build(&good);
    let suite = validate_suite_layout(&good).unwrap();
    assert_eq!(suite.cases.len(), 54);
    assert!(suite.complete);

    let target = cases
        .iter()
        .find(|c| c.subclass == Subclass::PropPersistent && c.required_shots == 8)
        .unwrap();
    let rel = format!("prop-persistent/8/{}.json", target.id);

    let short = root.path().join("short");
    build(&short);
    let mut shortened = target.clone();
    shortened.shots.pop();
    fs::write(short.join(&rel), serde_json::to_string(&shortened).unwrap()).unwrap();
    rejected_with(&short, &rel);
    rejected_with(&short, "required_shots is 8 but 7 shot texts are given");

    let missing = root.path().join("missing");
    build(&missing);
    fs::remove_file(missing.join(&rel)).unwrap();
    rejected_with(&missing, "cell prop-persistent/8 has 5 case(s), expected 6");

    let tagged = root.path().join("tagged");
    build(&tagged);
    let mut value = serde_json::to_value(target).unwrap();
    value["subclass"] = json!("prop_persistent");
    fs::write(tagged.join(&rel), value.to_string()).unwrap();
    rejected_with(&tagged, "unknown subclass \"prop_persistent\"");

    "54 cases accepted; shot count, missing cell and bad tag rejected".into()
}

// Criterion 9

fn parse_terms(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.to_lowercase()
                .split([' ', '-'])
                .filter(|p| !p.is_empty())
                .map(str::to_string)
                .collect()
        })
        .collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Word-bounded occurrence of `parts` joined by runs of spaces or hyphens.
fn occurs(text: &[char], parts: &[String]) -> bool {
    let parts: Vec<Vec<char>> = parts.iter().map(|p| p.chars().collect()).collect();
    'start: for start in 0..text.len() {
        if start > 0 && is_word(text[start - 1]) {
            continue;
        }
        let mut i = start;
        for (n, part) in parts.iter().enumerate() {
            if n > 0 {
                let gap = i;
                while i < text.len() && (text[i].is_whitespace() || text[i] == '-') {
                    i += 1;
                }
                if i == gap {
                    continue 'start;
                }
            }
            for &pc in part {
                if i >= text.len() || text[i].to_lowercase().next() != Some(pc) {
                    continue 'start;
                }
                i += 1;
            }
        }
        if i == text.len() || !is_word(text[i]) {
            return true;
        }
    }
    false
}

fn banned_hit(terms: &[Vec<String>], text: &str) -> Option<String> {
    let chars: Vec<char> = text.chars().collect();
    terms.iter().find(|t| occurs(&chars, t)).map(|t| t.join(" "))
}

const FILLER: &[&str] = &[
    "Wren", "walks", "slowly", "across", "the", "harbor", "holding", "a", "lantern", "while", "gulls",
    "circle", "overhead", "and", "rain", "begins", "to", "fall", "on", "wooden", "boards", "she",
    "stops", "turns", "smiles", "panorama", "campaign", "tiltyard", "zoomed", "pandas",
];

fn random_text(rng: &mut StdRng, terms: &[Vec<String>], words: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push_str([" ", " ", " ", ", ", ". ", "-", "  "][rng.random_range(0..7)]);
        }
        if rng.random::<f64>() < 0.15 {
            let term = &terms[rng.random_range(0..terms.len())];
            let joined = term.join(if rng.random() { " " } else { "-" });
            if rng.random() {
                out.push_str(&joined.to_uppercase());
            } else {
                out.push_str(&joined);
            }
        } else {
            out.push_str(FILLER[rng.random_range(0..FILLER.len())]);
        }
    }
    out
}

fn prompt_contract() -> String {
    let terms = parse_terms(SHIPPED_TERMS);
    assert!(terms.len() > 20);
    let banned = BannedTerms::default();
    let prompts = PromptSet::default();
    let mut rng = StdRng::seed_from_u64(9);

    let summaries = [
        MockText::rules(vec![MockRule {
            template: VIDEO_SUMMARIZE.into(),
            shot: None,
            response: "Wren crosses the harbor in a slow pan as the rain starts.".into(),
        }]),
        MockText::rules(vec![MockRule {
            template: VIDEO_SUMMARIZE.into(),
            shot: None,
            response: "Wren keeps walking. ".repeat(40),
        }]),
        MockText::queue(Vec::<String>::new()),
    ];

    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("ref.png");
    image::RgbImage::from_pixel(4, 4, image::Rgb([9, 9, 9])).save(&image).unwrap();
    let asset = AssetRef::image(&image).unwrap();

    let plots = 10_000;
    let mut longest = 0;
    let mut keyframes = 0;
    for n in 0..plots {
        let words = rng.random_range(1..=400);
        let shot = ShotDescription {
            index: 1,
            scene: "harbor".into(),
            scene_description: random_text(&mut rng, &terms, 6),
            plot: random_text(&mut rng, &terms, words),
            characters: vec!["Wren".into()],
            key_props: vec!["lantern".into()],
            environment_info: random_text(&mut rng, &terms, 3),
            extra: Default::default(),
        };
        let llm = match rng.random_range(0..4) {
            3 => None,
            i => Some(&summaries[i] as &dyn videomemory::backends::TextBackend),
        };
        let video = build_video_prompt(&shot, llm, &prompts, &banned);
        let len = video.text.chars().count();
        longest = longest.max(len);
        assert!(len <= MAX_VIDEO_PROMPT_CHARS, "plot {n}: {len} characters");
        if let Some(t) = banned_hit(&terms, &video.text) {
            panic!("plot {n}: video prompt contains {t:?}: {:?}", video.text);
        }

        if n % 10 == 0 {
            let mut spec = |name: &str, category| {
                let state = AttributeState::new([("look", "plain")], random_text(&mut rng, &terms, 5)).unwrap();
                (EntitySpec::new(name, category, state).unwrap(), asset.clone())
            };
            let refs = vec![
                spec("Wren", EntityCategory::Character),
                spec("lantern", EntityCategory::Prop),
                spec("harbor", EntityCategory::Background),
            ];
            let key = build_keyframe_request(&shot, &refs, &banned).unwrap();
            if let Some(t) = banned_hit(&terms, &key.prompt) {
                panic!("plot {n}: keyframe prompt contains {t:?}: {:?}", key.prompt);
            }
            keyframes += 1;
        }
    }
    format!("{plots} plots, longest video prompt {longest}, {keyframes} keyframe prompts clean")
}

// Criterion 10

fn determinism() -> String {
    let case = synthetic_case(Subclass::BackgroundPersistent, 4, 2);
    let f = mock_fixture(&case);
    let mut digests = Vec::new();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        write_suite(&dir.path().join("suite"), std::slice::from_ref(&case), false).unwrap();
        let suite = validate_suite_layout(&dir.path().join("suite")).unwrap();
        let m = mocks(f.text_backend(), 3);
        run_storyboard(&f.storyboard, &config(&dir.path().join("runs"), &case.id), &m.backends, &ExactMatcher)
            .unwrap();
        let outputs = load_run_outputs(&dir.path().join("runs"), &suite);
        let report: SuiteReport = evaluate_suite(&suite, &outputs, &MockEmbedder, "videomemory").unwrap();
        digests.push(tree_digests(&dir.path().join("runs")));
        reports.push(report.to_json());
    }
    assert!(digests[0].keys().any(|k| k.ends_with(MANIFEST_FILE)));
    assert_eq!(digests[0], digests[1], "run trees differ");
    assert_eq!(reports[0], reports[1], "reports differ");
    format!("{} files digest-identical, reports identical", digests[0].len())
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let outcomes = vec![
        criterion(1, Some(secs(1)), worked_example),
        criterion(2, Some(secs(30)), oracle_equivalence),
        criterion(3, Some(secs(10)), mock_loop),
        criterion(4, Some(secs(30)), per_bank_ablation),
        criterion(5, Some(secs(10)), reuse_economy),
        criterion(6, Some(secs(5)), temporal_update),
        criterion(7, Some(secs(10)), persistence_and_resume),
        criterion(8, Some(secs(5)), benchmark_layout),
        criterion(9, Some(secs(30)), prompt_contract),
        criterion(10, None, determinism),
    ];
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("criterion {}: {}", o.id, o.detail))
        .collect();
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}
