//! Benchmark authoring support: an empty suite scaffold, the story-generation
//! prompt handed to an external LLM, and synthetic cases with matching mock
//! scripts for offline runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::template::{MEMORY_ANALYZE, STORYBOARD_PLAN, VIDEO_SUMMARIZE};
use crate::backends::mock::{render_response, MockRule};
use crate::backends::MockText;
use crate::domain::{ShotDescription, Storyboard, Synopsis};
use crate::eval::{case_path, BenchmarkCase, Subclass, SuiteMeta, SAMPLES_PER_CELL, SHOT_LENGTHS, SUITE_FILE};

pub const TEMPLATE_FILE: &str = "_template.json";
pub const GENERATION_PROMPT: &str = include_str!("../assets/bench_generation_prompt.txt");

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{0} is not empty; pass --force to write into it anyway")]
    NotEmpty(PathBuf),
    #[error("bench I/O: {0}")]
    Io(#[from] io::Error),
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text)
}

fn is_empty_dir(dir: &Path) -> io::Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut entries) => Ok(entries.next().is_none()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(e),
    }
}

/// Writes `suite.json` and the 3x3 grid of cell directories, each holding a
/// case template. Returns the cell directories.
pub fn scaffold(dir: &Path, force: bool) -> Result<Vec<PathBuf>, BenchError> {
    if !force && !is_empty_dir(dir)? {
        return Err(BenchError::NotEmpty(dir.to_path_buf()));
    }
    fs::create_dir_all(dir)?;
    write_json(
        &dir.join(SUITE_FILE),
        &SuiteMeta {
            full_suite: true,
            name: None,
        },
    )?;
    let mut cells = Vec::new();
    for subclass in Subclass::ALL {
        for shots in SHOT_LENGTHS {
            let cell = dir.join(subclass.as_str()).join(shots.to_string());
            let template = json!({
                "id": format!("{}-{shots}-01", subclass.as_str()),
                "subclass": subclass.as_str(),
                "required_shots": shots,
                "target": target_hint(subclass),
                "shots": (1..=shots).map(|i| format!("<shot {i} text>")).collect::<Vec<_>>(),
            });
            write_json(&cell.join(TEMPLATE_FILE), &template)?;
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn target_hint(subclass: Subclass) -> &'static str {
    match subclass {
        Subclass::CharacterPersistent => "<description of the recurring character>",
        Subclass::PropPersistent => "<short phrase naming the recurring object>",
        Subclass::BackgroundPersistent => "<label of the recurring location>",
    }
}

/// Writes the story-generation prompt to `path`.
pub fn emit_prompt(path: &Path) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, GENERATION_PROMPT)
}

// ---------------------------------------------------------------------------
// Synthetic cases for offline runs
// ---------------------------------------------------------------------------

const CAST: [&str; 12] = [
    "Ansel", "Berit", "Corin", "Dalia", "Emeric", "Fenna", "Gideon", "Hedda", "Ivo", "Junia",
    "Kasimir", "Lorna",
];
const PROPS: [&str; 12] = [
    "lantern", "compass", "teapot", "violin", "umbrella", "kite", "ledger", "clock", "basket",
    "mirror", "drum", "satchel",
];
const SCENES: [&str; 12] = [
    "harbor", "orchard", "library", "market", "bridge", "attic", "station", "garden", "workshop",
    "chapel", "meadow", "quarry",
];
const TARGETS: [(&str, &str, &str); SAMPLES_PER_CELL] = [
    ("a tall woman in a green wool coat", "a brass pocket watch", "lighthouse"),
    ("a bearded fisherman with a yellow cap", "a red paper kite", "bakery"),
    ("a girl with braided silver hair", "a cracked porcelain vase", "train depot"),
    ("an old tailor with round spectacles", "a leather-bound map", "rooftop garden"),
    ("a boy in a striped sailor shirt", "a wooden music box", "snowy pass"),
    ("a courier in a blue rain cape", "a copper kettle", "night market"),
];

/// Name the mock fixture gives the recurring character.
pub const PERSISTENT_CHARACTER: &str = "Wren";

/// A deterministic case for offline runs. `sample` is 1-based.
pub fn synthetic_case(subclass: Subclass, required_shots: u32, sample: usize) -> BenchmarkCase {
    let (who, what, where_) = TARGETS[(sample.max(1) - 1) % TARGETS.len()];
    let target = match subclass {
        Subclass::CharacterPersistent => who,
        Subclass::PropPersistent => what,
        Subclass::BackgroundPersistent => where_,
    };
    let shots = (0..required_shots as usize)
        .map(|i| match subclass {
            Subclass::CharacterPersistent => {
                format!("{PERSISTENT_CHARACTER} carries a {} through the {}.", PROPS[i], SCENES[i])
            }
            Subclass::PropPersistent => {
                format!("{} sets down {target} in the {}.", CAST[i], SCENES[i])
            }
            Subclass::BackgroundPersistent => {
                format!("{} waits at the {target} with a {}.", CAST[i], PROPS[i])
            }
        })
        .collect();
    BenchmarkCase {
        id: format!("{}-{required_shots}-{sample:02}", subclass.as_str()),
        subclass,
        required_shots,
        shots,
        target: target.into(),
    }
}

/// The full 3 x 3 x 6 grid of synthetic cases.
pub fn synthetic_suite() -> Vec<BenchmarkCase> {
    let mut out = Vec::new();
    for subclass in Subclass::ALL {
        for shots in SHOT_LENGTHS {
            for sample in 1..=SAMPLES_PER_CELL {
                out.push(synthetic_case(subclass, shots, sample));
            }
        }
    }
    out
}

/// Writes cases plus a full-suite `suite.json` under `dir`.
pub fn write_suite(dir: &Path, cases: &[BenchmarkCase], full_suite: bool) -> io::Result<()> {
    write_json(
        &dir.join(SUITE_FILE),
        &SuiteMeta {
            full_suite,
            name: None,
        },
    )?;
    for case in cases {
        write_json(&case_path(dir, case), case)?;
    }
    Ok(())
}

/// A storyboard for a case plus the text-model script that plans and
/// analyzes it.
#[derive(Debug, Clone)]
pub struct MockFixture {
    pub storyboard: Storyboard,
    pub rules: Vec<MockRule>,
}

impl MockFixture {
    pub fn text_backend(&self) -> MockText {
        MockText::rules(self.rules.clone())
    }

    /// The script in the `{"rules": [...]}` file format.
    pub fn script_json(&self) -> String {
        let rules: Vec<Value> = self
            .rules
            .iter()
            .map(|r| json!({"template": r.template, "shot": r.shot, "response": r.response}))
            .collect();
        let mut text = serde_json::to_string_pretty(&json!({ "rules": rules })).expect("json serializes");
        text.push('\n');
        text
    }
}

fn entity(name: &str, kind: &str, description: &str, attribute: (&str, &str)) -> Value {
    json!({
        "entity_name": name,
        "entity_type": kind,
        "state_description": description,
        "attributes": { attribute.0: attribute.1 },
    })
}

/// Builds the storyboard and mock script for a case. The recurring factor
/// keeps one name and one attribute state in every shot; the other two
/// factors change from shot to shot.
pub fn mock_fixture(case: &BenchmarkCase) -> MockFixture {
    let mut shots = Vec::new();
    let mut rules = Vec::new();
    for (i, text) in case.shots.iter().enumerate() {
        let index = i as u32 + 1;
        let (character, character_desc) = match case.subclass {
            Subclass::CharacterPersistent => (PERSISTENT_CHARACTER.to_string(), case.target.clone()),
            _ => (CAST[i % CAST.len()].to_string(), format!("a traveler called {}", CAST[i % CAST.len()])),
        };
        let prop = match case.subclass {
            Subclass::PropPersistent => case.target.clone(),
            _ => PROPS[i % PROPS.len()].to_string(),
        };
        let scene = match case.subclass {
            Subclass::BackgroundPersistent => case.target.clone(),
            _ => SCENES[i % SCENES.len()].to_string(),
        };
        let shot = ShotDescription {
            index,
            scene: scene.clone(),
            scene_description: format!("The {scene}."),
            plot: text.clone(),
            characters: vec![character.clone()],
            key_props: vec![prop.clone()],
            environment_info: "present day, afternoon".into(),
            extra: Default::default(),
        };
        let analysis = json!({
            "entities": [
                entity(&character, "character", &character_desc, ("appearance", &character_desc)),
                entity(&prop, "prop", &format!("{prop}, intact"), ("condition", "intact")),
                entity(&scene, "background", &format!("the {scene} in daylight"), ("lighting", "daylight")),
            ]
        });
        rules.push(MockRule {
            template: MEMORY_ANALYZE.into(),
            shot: Some(index),
            response: render_response(&analysis),
        });
        shots.push(shot);
    }
    let synopsis = Synopsis::new(case.shots.join(" "), Some(case.id.clone()))
        .expect("case shot texts are non-empty");
    let storyboard = Storyboard::new(synopsis, shots).expect("synthetic shots are valid");
    rules.insert(
        0,
        MockRule {
            template: STORYBOARD_PLAN.into(),
            shot: None,
            response: render_response(&json!({ "shots": storyboard.shots })),
        },
    );
    rules.push(MockRule {
        template: VIDEO_SUMMARIZE.into(),
        shot: None,
        response: "A brief continuous moment.".into(),
    });
    MockFixture { storyboard, rules }
}
