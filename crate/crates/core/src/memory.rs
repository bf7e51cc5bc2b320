//! The dynamic memory bank: three entity stores (characters, props,
//! backgrounds) holding entity frames `(entity, attribute state, reference
//! image)` with retrieve-or-generate semantics and an inspectable on-disk
//! layout.
//!
//! Retrieval runs in two phases. An exact canonical-key lookup answers
//! first; only on a miss is the [`SemanticMatcher`] consulted, and only
//! against entries of the same name lineage, newest first.
//!
//! On disk a bank rooted at `root` looks like:
//!
//! ```text
//! root/characters/index.json
//! root/characters/images/<key>.png
//! root/props/...
//! root/backgrounds/...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{fnv1a64_hex8, sha256_file};
use crate::domain::{
    canonical_entity_key, AssetKind, AssetRef, AttributeState, EntityCategory, EntitySpec,
    Provenance,
};

/// Attempts made by [`retrieve_or_generate`] before giving up on a generator.
pub const GENERATION_ATTEMPTS: usize = 3;

pub const INDEX_FILE: &str = "index.json";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("matcher failed: {0}")]
pub struct MatcherError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("reference generation failed after {attempts} attempt(s): {message}")]
pub struct GenerationError {
    pub attempts: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("{category} store already holds key {key:?}")]
    DuplicateKey {
        category: EntityCategory,
        key: String,
    },
    #[error("reference asset {0} does not exist")]
    MissingAsset(PathBuf),
    #[error("reference asset for {0:?} is not an image")]
    NotAnImage(String),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("corrupt {store} index: entry {key:?}: {reason}")]
    CorruptIndex {
        store: String,
        key: String,
        reason: String,
    },
    #[error("memory bank I/O: {0}")]
    Io(#[from] io::Error),
}

/// One entity frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: String,
    pub entity: EntitySpec,
    pub reference: AssetRef,
    pub created_at_shot: u32,
    pub sequence: u64,
}

/// Outcome of asking a matcher whether a stored entry depicts the queried
/// state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub matched: bool,
    pub key: Option<String>,
    pub rationale: String,
}

impl MatchDecision {
    pub fn accept(key: impl Into<String>, rationale: impl Into<String>) -> Self {
        Self {
            matched: true,
            key: Some(key.into()),
            rationale: rationale.into(),
        }
    }

    pub fn reject(rationale: impl Into<String>) -> Self {
        Self {
            matched: false,
            key: None,
            rationale: rationale.into(),
        }
    }
}

/// Decides whether `candidate` already depicts `query`'s state.
pub trait SemanticMatcher: Send + Sync {
    fn judge(&self, query: &EntitySpec, candidate: &MemoryEntry)
        -> Result<MatchDecision, MatcherError>;
}

/// Accepts a candidate only when canonical keys coincide.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatcher;

impl SemanticMatcher for ExactMatcher {
    fn judge(
        &self,
        query: &EntitySpec,
        candidate: &MemoryEntry,
    ) -> Result<MatchDecision, MatcherError> {
        if query.key() == candidate.key {
            Ok(MatchDecision::accept(&candidate.key, "identical canonical key"))
        } else {
            Ok(MatchDecision::reject("canonical keys differ"))
        }
    }
}

/// Creates a new reference image for an entity state, conditioned on the
/// entity's earlier references (oldest first).
pub trait ReferenceGenerator: Send + Sync {
    fn generate(
        &self,
        spec: &EntitySpec,
        history: &[MemoryEntry],
        shot: u32,
    ) -> Result<AssetRef, GenerationError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryBank {
    pub characters: BTreeMap<String, MemoryEntry>,
    pub props: BTreeMap<String, MemoryEntry>,
    pub backgrounds: BTreeMap<String, MemoryEntry>,
    pub next_sequence: u64,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&self, category: EntityCategory) -> &BTreeMap<String, MemoryEntry> {
        match category {
            EntityCategory::Character => &self.characters,
            EntityCategory::Prop => &self.props,
            EntityCategory::Background => &self.backgrounds,
        }
    }

    fn store_mut(&mut self, category: EntityCategory) -> &mut BTreeMap<String, MemoryEntry> {
        match category {
            EntityCategory::Character => &mut self.characters,
            EntityCategory::Prop => &mut self.props,
            EntityCategory::Background => &mut self.backgrounds,
        }
    }

    pub fn len(&self) -> usize {
        self.characters.len() + self.props.len() + self.backgrounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Looks a key up in every store.
    pub fn find(&self, key: &str) -> Option<&MemoryEntry> {
        EntityCategory::ALL
            .iter()
            .find_map(|&c| self.store(c).get(key))
    }

    /// Where a reference image for `key` lives under a bank rooted at `root`.
    pub fn image_path(root: &Path, category: EntityCategory, key: &str) -> PathBuf {
        root.join(category.store_name())
            .join(IMAGES_DIR)
            .join(image_file_name(key))
    }

    /// Exact-key lookup followed by a matcher pass over the same name
    /// lineage, newest entry first.
    pub fn retrieve(
        &self,
        spec: &EntitySpec,
        matcher: &dyn SemanticMatcher,
    ) -> Result<Option<&MemoryEntry>, MemoryError> {
        let store = self.store(spec.category);
        let key = spec.key();
        if let Some(hit) = store.get(&key) {
            return Ok(Some(hit));
        }
        let mut lineage: Vec<&MemoryEntry> = store
            .values()
            .filter(|e| crate::domain::names_match(&e.entity.name, &spec.name))
            .collect();
        lineage.sort_by(|a, b| b.sequence.cmp(&a.sequence));
        for candidate in lineage {
            let decision = matcher.judge(spec, candidate)?;
            if !decision.matched {
                continue;
            }
            return match decision.key.as_deref() {
                Some(k) if k == candidate.key => Ok(Some(candidate)),
                other => Err(MatcherError(format!(
                    "matcher accepted {:?} but returned key {other:?}",
                    candidate.key
                ))
                .into()),
            };
        }
        Ok(None)
    }

    /// Appends a new entity frame with the next sequence number.
    pub fn insert(
        &mut self,
        spec: EntitySpec,
        reference: AssetRef,
        shot: u32,
    ) -> Result<&MemoryEntry, MemoryError> {
        if reference.kind != AssetKind::Image {
            return Err(MemoryError::NotAnImage(spec.name));
        }
        if !reference.path.exists() {
            return Err(MemoryError::MissingAsset(reference.path));
        }
        let key = spec.key();
        let category = spec.category;
        if self.store(category).contains_key(&key) {
            return Err(MemoryError::DuplicateKey { category, key });
        }
        let entry = MemoryEntry {
            key: key.clone(),
            entity: spec,
            reference,
            created_at_shot: shot,
            sequence: self.next_sequence,
        };
        self.next_sequence += 1;
        let store = self.store_mut(category);
        store.insert(key.clone(), entry);
        Ok(&store[&key])
    }

    /// Every entry of the named entity in one store, oldest first.
    pub fn history(&self, name: &str, category: EntityCategory) -> Vec<MemoryEntry> {
        let mut entries: Vec<MemoryEntry> = self
            .store(category)
            .values()
            .filter(|e| crate::domain::names_match(&e.entity.name, name))
            .cloned()
            .collect();
        entries.sort_by_key(|e| e.sequence);
        entries
    }

    /// Reuses a compatible reference or generates, stores and returns a new
    /// one. The bank is untouched when generation fails.
    pub fn retrieve_or_generate(
        &mut self,
        spec: &EntitySpec,
        shot: u32,
        matcher: &dyn SemanticMatcher,
        generator: &dyn ReferenceGenerator,
    ) -> Result<(AssetRef, Provenance), MemoryError> {
        if let Some(hit) = self.retrieve(spec, matcher)? {
            return Ok((hit.reference.clone(), Provenance::Reused));
        }
        let history = self.history(&spec.name, spec.category);
        let reference = generate_with_retries(generator, spec, &history, shot)?;
        let entry = self.insert(spec.clone(), reference, shot)?;
        Ok((entry.reference.clone(), Provenance::Generated))
    }

    /// Writes every store's index plus its images under `root`.
    pub fn save(&self, root: &Path) -> Result<(), MemoryError> {
        for category in EntityCategory::ALL {
            let store_dir = root.join(category.store_name());
            let images = store_dir.join(IMAGES_DIR);
            fs::create_dir_all(&images)?;
            let mut entries: Vec<&MemoryEntry> = self.store(category).values().collect();
            entries.sort_by_key(|e| e.sequence);
            let mut records = Vec::with_capacity(entries.len());
            for entry in entries {
                let file = image_file_name(&entry.key);
                let target = images.join(&file);
                if !same_file(&entry.reference.path, &target) {
                    fs::copy(&entry.reference.path, &target)?;
                }
                records.push(IndexRecord {
                    key: entry.key.clone(),
                    name: entry.entity.name.clone(),
                    category,
                    attributes: entry.entity.state.attributes.clone(),
                    summary: entry.entity.state.summary.clone(),
                    image: file,
                    digest: entry.reference.digest.clone(),
                    created_at_shot: entry.created_at_shot,
                    sequence: entry.sequence,
                });
            }
            let index = StoreIndex {
                store: category.store_name().to_string(),
                entries: records,
            };
            let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
            text.push('\n');
            let tmp = store_dir.join(format!("{INDEX_FILE}.tmp"));
            fs::write(&tmp, text)?;
            fs::rename(&tmp, store_dir.join(INDEX_FILE))?;
        }
        Ok(())
    }

    /// Loads a bank; an absent root yields an empty bank. The first integrity
    /// problem found is reported as [`MemoryError::CorruptIndex`].
    pub fn load(root: &Path) -> Result<Self, MemoryError> {
        let (bank, problems) = load_checked(root)?;
        match problems.into_iter().next() {
            Some(p) => Err(MemoryError::CorruptIndex {
                store: p.store,
                key: p.key,
                reason: p.reason,
            }),
            None => Ok(bank),
        }
    }

    /// SHA-256 of each store's index file, `None` where the file is absent.
    pub fn index_digests(root: &Path) -> io::Result<BTreeMap<String, Option<String>>> {
        let mut out = BTreeMap::new();
        for category in EntityCategory::ALL {
            let path = root.join(category.store_name()).join(INDEX_FILE);
            let digest = if path.exists() {
                Some(sha256_file(&path)?)
            } else {
                None
            };
            out.insert(category.store_name().to_string(), digest);
        }
        Ok(out)
    }
}

pub(crate) fn generate_with_retries(
    generator: &dyn ReferenceGenerator,
    spec: &EntitySpec,
    history: &[MemoryEntry],
    shot: u32,
) -> Result<AssetRef, GenerationError> {
    let mut last = String::new();
    for attempt in 1..=GENERATION_ATTEMPTS {
        match generator.generate(spec, history, shot) {
            Ok(asset) => return Ok(asset),
            Err(e) => {
                log::warn!(
                    "reference generation for {} failed (attempt {attempt}/{GENERATION_ATTEMPTS}): {}",
                    spec.name,
                    e.message
                );
                last = e.message;
            }
        }
    }
    Err(GenerationError {
        attempts: GENERATION_ATTEMPTS,
        message: last,
    })
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// `<key>.png` when the key is filename-safe, otherwise a sanitized stem
/// disambiguated by a digest of the full key.
pub fn image_file_name(key: &str) -> String {
    let safe = !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '-' | '.'))
        && !key.starts_with('.');
    if safe {
        return format!("{key}.png");
    }
    let stem: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '-' })
        .collect();
    format!("{stem}_{}.png", fnv1a64_hex8(key.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreIndex {
    store: String,
    entries: Vec<IndexRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexRecord {
    key: String,
    name: String,
    category: EntityCategory,
    attributes: BTreeMap<String, String>,
    summary: String,
    image: String,
    digest: String,
    created_at_shot: u32,
    sequence: u64,
}

/// One integrity problem found while reading a bank from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexProblem {
    pub store: String,
    pub key: String,
    pub reason: String,
}

/// Reads every store and collects all integrity problems instead of stopping
/// at the first one. Unreadable index files are still hard errors.
pub fn load_checked(root: &Path) -> Result<(MemoryBank, Vec<IndexProblem>), MemoryError> {
    let mut bank = MemoryBank::new();
    let mut problems = Vec::new();
    if !root.exists() {
        return Ok((bank, problems));
    }
    let mut max_sequence = None::<u64>;
    for category in EntityCategory::ALL {
        let store_name = category.store_name();
        let store_dir = root.join(store_name);
        let index_path = store_dir.join(INDEX_FILE);
        if !index_path.exists() {
            continue;
        }
        let text = fs::read_to_string(&index_path)?;
        let index: StoreIndex = serde_json::from_str(&text).map_err(|e| MemoryError::CorruptIndex {
            store: store_name.to_string(),
            key: String::new(),
            reason: format!("unreadable index: {e}"),
        })?;
        for record in index.entries {
            let problem = |reason: String| IndexProblem {
                store: store_name.to_string(),
                key: record.key.clone(),
                reason,
            };
            let state = match AttributeState::new(&record.attributes, &record.summary) {
                Ok(s) => s,
                Err(e) => {
                    problems.push(problem(e.to_string()));
                    continue;
                }
            };
            if record.category != category {
                problems.push(problem(format!("category {} in {store_name} store", record.category)));
                continue;
            }
            if canonical_entity_key(&record.name, &state) != record.key {
                problems.push(problem("key does not match name and attributes".into()));
                continue;
            }
            let image = store_dir.join(IMAGES_DIR).join(&record.image);
            if !image.exists() {
                problems.push(problem(format!("image {} is missing", image.display())));
                continue;
            }
            match sha256_file(&image) {
                Ok(d) if d == record.digest => {}
                Ok(_) => {
                    problems.push(problem(format!("digest mismatch for {}", image.display())));
                    continue;
                }
                Err(e) => {
                    problems.push(problem(e.to_string()));
                    continue;
                }
            }
            let entry = MemoryEntry {
                key: record.key.clone(),
                entity: EntitySpec {
                    name: record.name.clone(),
                    category,
                    state,
                },
                reference: AssetRef {
                    path: image,
                    kind: AssetKind::Image,
                    digest: record.digest.clone(),
                },
                created_at_shot: record.created_at_shot,
                sequence: record.sequence,
            };
            max_sequence = Some(max_sequence.map_or(record.sequence, |m| m.max(record.sequence)));
            if bank.store_mut(category).insert(record.key.clone(), entry).is_some() {
                problems.push(problem("duplicate key".into()));
            }
        }
    }
    bank.next_sequence = max_sequence.map_or(0, |m| m + 1);
    Ok((bank, problems))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn spec(name: &str, category: EntityCategory, attrs: &[(&str, &str)], summary: &str) -> EntitySpec {
        EntitySpec::new(name, category, AttributeState::new(attrs.iter().copied(), summary).unwrap())
            .unwrap()
    }

    fn anna(age: &str) -> EntitySpec {
        spec("Anna", EntityCategory::Character, &[("age", age)], "a woman")
    }

    /// Writes a small distinct file per call under `root`.
    struct FileGenerator {
        root: PathBuf,
        calls: AtomicUsize,
        histories: Mutex<Vec<usize>>,
    }

    impl FileGenerator {
        fn new(root: &Path) -> Self {
            Self {
                root: root.to_path_buf(),
                calls: AtomicUsize::new(0),
                histories: Mutex::new(Vec::new()),
            }
        }
    }

    impl ReferenceGenerator for FileGenerator {
        fn generate(
            &self,
            spec: &EntitySpec,
            history: &[MemoryEntry],
            _shot: u32,
        ) -> Result<AssetRef, GenerationError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.histories.lock().unwrap().push(history.len());
            let path = MemoryBank::image_path(&self.root, spec.category, &spec.key());
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, spec.describe()).unwrap();
            Ok(AssetRef::image(path).unwrap())
        }
    }

    struct FailingGenerator(AtomicUsize);

    impl ReferenceGenerator for FailingGenerator {
        fn generate(&self, _: &EntitySpec, _: &[MemoryEntry], _: u32) -> Result<AssetRef, GenerationError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(GenerationError {
                attempts: 1,
                message: "backend down".into(),
            })
        }
    }

    struct CountingMatcher {
        calls: AtomicUsize,
        accept: bool,
    }

    impl SemanticMatcher for CountingMatcher {
        fn judge(&self, _: &EntitySpec, c: &MemoryEntry) -> Result<MatchDecision, MatcherError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(if self.accept {
                MatchDecision::accept(&c.key, "same state")
            } else {
                MatchDecision::reject("different")
            })
        }
    }

    struct BrokenMatcher;

    impl SemanticMatcher for BrokenMatcher {
        fn judge(&self, _: &EntitySpec, _: &MemoryEntry) -> Result<MatchDecision, MatcherError> {
            Err(MatcherError("llm unreachable".into()))
        }
    }

    fn asset(dir: &Path, name: &str) -> AssetRef {
        let p = dir.join(name);
        fs::write(&p, name).unwrap();
        AssetRef::image(p).unwrap()
    }

    #[test]
    fn insert_and_store_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("45"), asset(dir.path(), "a.png"), 1).unwrap();
        assert_eq!(bank.characters.len(), 1);
        let before = bank.characters.clone();
        bank.insert(
            spec("suitcase", EntityCategory::Prop, &[("color", "red")], "a red suitcase"),
            asset(dir.path(), "s.png"),
            1,
        )
        .unwrap();
        assert_eq!(bank.characters, before);
        assert_eq!(bank.props.len(), 1);
    }

    #[test]
    fn duplicate_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("45"), asset(dir.path(), "a.png"), 1).unwrap();
        let err = bank.insert(anna("45"), asset(dir.path(), "b.png"), 2).unwrap_err();
        assert!(matches!(err, MemoryError::DuplicateKey { .. }));
        assert_eq!(bank.len(), 1);
        assert_eq!(bank.next_sequence, 1);
    }

    #[test]
    fn missing_asset_rejected() {
        let mut bank = MemoryBank::new();
        let missing = AssetRef {
            path: PathBuf::from("/nonexistent/a.png"),
            kind: AssetKind::Image,
            digest: "x".into(),
        };
        assert!(matches!(
            bank.insert(anna("45"), missing, 1),
            Err(MemoryError::MissingAsset(_))
        ));
    }

    #[test]
    fn sequences_increase_across_stores() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        let a = bank.insert(anna("20"), asset(dir.path(), "a"), 1).unwrap().sequence;
        let b = bank
            .insert(spec("hall", EntityCategory::Background, &[], "a hall"), asset(dir.path(), "b"), 1)
            .unwrap()
            .sequence;
        let c = bank.insert(anna("60"), asset(dir.path(), "c"), 2).unwrap().sequence;
        assert!(a < b && b < c);
    }

    #[test]
    fn exact_hit_skips_matcher() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("45"), asset(dir.path(), "a"), 1).unwrap();
        let matcher = CountingMatcher { calls: AtomicUsize::new(0), accept: false };
        let hit = bank.retrieve(&anna("45"), &matcher).unwrap().unwrap();
        assert_eq!(hit.key, anna("45").key());
        assert_eq!(matcher.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn paraphrased_state_retrieved_by_matcher() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        let stored = spec(
            "Anna",
            EntityCategory::Character,
            &[("age", "about 45"), ("outfit", "thick coat"), ("weather", "snow")],
            "Anna, about 45, wearing a thick coat in the snow",
        );
        bank.insert(stored.clone(), asset(dir.path(), "a"), 1).unwrap();
        let query = spec(
            "anna",
            EntityCategory::Character,
            &[("age", "middle-aged"), ("outfit", "winter coat")],
            "middle-aged Anna in a winter coat",
        );
        let matcher = CountingMatcher { calls: AtomicUsize::new(0), accept: true };
        let hit = bank.retrieve(&query, &matcher).unwrap().unwrap();
        assert_eq!(hit.key, stored.key());
        assert_eq!(matcher.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn matcher_only_sees_same_name_lineage_and_prefers_newest() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("20"), asset(dir.path(), "a"), 1).unwrap();
        bank.insert(anna("30"), asset(dir.path(), "b"), 2).unwrap();
        bank.insert(
            spec("Bella", EntityCategory::Character, &[("age", "30")], "b"),
            asset(dir.path(), "c"),
            2,
        )
        .unwrap();
        let matcher = CountingMatcher { calls: AtomicUsize::new(0), accept: true };
        let hit = bank.retrieve(&anna("40"), &matcher).unwrap().unwrap();
        assert_eq!(hit.key, anna("30").key());
        assert_eq!(matcher.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_bank_misses() {
        let bank = MemoryBank::new();
        assert!(bank.retrieve(&anna("45"), &ExactMatcher).unwrap().is_none());
    }

    #[test]
    fn matcher_error_propagates() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("20"), asset(dir.path(), "a"), 1).unwrap();
        let gen = FileGenerator::new(dir.path());
        let err = bank
            .retrieve_or_generate(&anna("60"), 2, &BrokenMatcher, &gen)
            .unwrap_err();
        assert!(matches!(err, MemoryError::Matcher(_)));
        assert_eq!(gen.calls.load(Ordering::SeqCst), 0);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn history_is_ordered_and_category_scoped() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("20"), asset(dir.path(), "a"), 1).unwrap();
        bank.insert(anna("60"), asset(dir.path(), "b"), 5).unwrap();
        let h = bank.history("ANNA", EntityCategory::Character);
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].entity.state.attributes["age"], "20");
        assert_eq!(h[1].entity.state.attributes["age"], "60");
        assert!(bank.history("nobody", EntityCategory::Character).is_empty());

        bank.insert(spec("star", EntityCategory::Prop, &[], "a star prop"), asset(dir.path(), "c"), 1)
            .unwrap();
        bank.insert(
            spec("star", EntityCategory::Background, &[], "a starry sky"),
            asset(dir.path(), "d"),
            1,
        )
        .unwrap();
        assert_eq!(bank.history("star", EntityCategory::Prop).len(), 1);
    }

    #[test]
    fn persistent_character_is_generated_once() {
        let dir = tempfile::tempdir().unwrap();
        let gen = FileGenerator::new(dir.path());
        let mut bank = MemoryBank::new();
        let mut provenance = Vec::new();
        for shot in 1..=4 {
            let (_, p) = bank
                .retrieve_or_generate(&anna("45"), shot, &ExactMatcher, &gen)
                .unwrap();
            provenance.push(p);
        }
        assert_eq!(
            provenance,
            vec![Provenance::Generated, Provenance::Reused, Provenance::Reused, Provenance::Reused]
        );
        assert_eq!(bank.characters.len(), 1);
        assert_eq!(gen.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn time_jump_passes_history() {
        let dir = tempfile::tempdir().unwrap();
        let gen = FileGenerator::new(dir.path());
        let mut bank = MemoryBank::new();
        bank.retrieve_or_generate(&anna("20"), 1, &ExactMatcher, &gen).unwrap();
        bank.retrieve_or_generate(&anna("60"), 2, &ExactMatcher, &gen).unwrap();
        assert_eq!(bank.characters.len(), 2);
        assert_eq!(*gen.histories.lock().unwrap(), vec![0, 1]);
    }

    #[test]
    fn failing_generator_leaves_bank_unchanged() {
        let gen = FailingGenerator(AtomicUsize::new(0));
        let mut bank = MemoryBank::new();
        let err = bank
            .retrieve_or_generate(&anna("20"), 1, &ExactMatcher, &gen)
            .unwrap_err();
        assert!(matches!(err, MemoryError::Generation(GenerationError { attempts: 3, .. })));
        assert_eq!(gen.0.load(Ordering::SeqCst), GENERATION_ATTEMPTS);
        assert_eq!(bank, MemoryBank::new());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("bank");
        let gen = FileGenerator::new(&root);
        let mut bank = MemoryBank::new();
        bank.retrieve_or_generate(&anna("20"), 1, &ExactMatcher, &gen).unwrap();
        bank.retrieve_or_generate(
            &spec("feather", EntityCategory::Prop, &[("color", "white")], "a white feather"),
            1,
            &ExactMatcher,
            &gen,
        )
        .unwrap();
        bank.retrieve_or_generate(
            &spec("castle hall", EntityCategory::Background, &[], "a stone hall"),
            1,
            &ExactMatcher,
            &gen,
        )
        .unwrap();
        bank.save(&root).unwrap();
        let loaded = MemoryBank::load(&root).unwrap();
        assert_eq!(loaded, bank);
        assert_eq!(loaded.next_sequence, 3);
    }

    #[test]
    fn save_to_other_root_copies_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = MemoryBank::new();
        bank.insert(anna("20"), asset(dir.path(), "a.png"), 1).unwrap();
        let root = dir.path().join("copy");
        bank.save(&root).unwrap();
        let loaded = MemoryBank::load(&root).unwrap();
        let (a, b) = (&bank.characters, &loaded.characters);
        assert_eq!(a.len(), b.len());
        for (k, e) in a {
            let l = &b[k];
            assert_eq!((l.sequence, &l.entity, &l.reference.digest), (e.sequence, &e.entity, &e.reference.digest));
            assert!(l.reference.path.starts_with(&root));
        }
    }

    #[test]
    fn missing_image_is_corrupt_index() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("bank");
        let gen = FileGenerator::new(&root);
        let mut bank = MemoryBank::new();
        let (asset, _) = bank.retrieve_or_generate(&anna("20"), 1, &ExactMatcher, &gen).unwrap();
        bank.save(&root).unwrap();
        fs::remove_file(&asset.path).unwrap();
        match MemoryBank::load(&root).unwrap_err() {
            MemoryError::CorruptIndex { key, .. } => assert_eq!(key, anna("20").key()),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tampered_image_is_corrupt_index() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("bank");
        let gen = FileGenerator::new(&root);
        let mut bank = MemoryBank::new();
        let (asset, _) = bank.retrieve_or_generate(&anna("20"), 1, &ExactMatcher, &gen).unwrap();
        bank.save(&root).unwrap();
        fs::write(&asset.path, b"tampered").unwrap();
        assert!(matches!(MemoryBank::load(&root), Err(MemoryError::CorruptIndex { .. })));
    }

    #[test]
    fn absent_root_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let bank = MemoryBank::load(&dir.path().join("nope")).unwrap();
        assert!(bank.is_empty());
    }

    #[test]
    fn image_file_names() {
        assert_eq!(image_file_name("anna_c0f4e28d"), "anna_c0f4e28d.png");
        let odd = image_file_name("r/2d2_0000");
        assert!(odd.starts_with("r-2d2_0000_") && odd.ends_with(".png"), "{odd}");
        assert_ne!(image_file_name("a/b_1"), image_file_name("a?b_1"));
    }
}
