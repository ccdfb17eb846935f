//! Record validation, `.jsonl` persistence and deterministic splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    ContextDimension, Corpus, DatasetProfile, EntityType, PairRecord, SceneDescriptor, Split,
    VocabConfig,
};

/// Required context dimensions per dataset profile.
#[derive(Debug, Clone)]
pub struct ProfileRules {
    required: BTreeMap<DatasetProfile, Vec<ContextDimension>>,
}

impl Default for ProfileRules {
    fn default() -> Self {
        let required = DatasetProfile::ALL
            .iter()
            .map(|p| (*p, p.dimensions().to_vec()))
            .collect();
        ProfileRules { required }
    }
}

impl ProfileRules {
    pub fn required(&self, profile: DatasetProfile) -> &[ContextDimension] {
        self.required.get(&profile).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Every violated record invariant, in a fixed order. Empty means valid.
pub fn validate_record(record: &PairRecord, rules: &ProfileRules) -> Vec<String> {
    let mut violations = Vec::new();
    if record.id.is_empty() {
        violations.push("empty id".to_string());
    }

    let scene = &record.scene;
    if !scene.sentiment_polarity.is_finite() || scene.sentiment_polarity.abs() > 1.0 {
        violations.push(format!(
            "sentiment_polarity {} outside [-1, 1]",
            scene.sentiment_polarity
        ));
    }
    if scene.time_slot > 23 {
        violations.push(format!("time_slot {} outside [0, 23]", scene.time_slot));
    }

    for entity in EntityType::LABELLED {
        if !record.entity_labels.contains_key(&entity) {
            violations.push(format!("missing entity label {entity}"));
        }
    }
    if record.entity_labels.contains_key(&EntityType::CTXT) {
        violations.push("CTXT is not a standalone entity label".to_string());
    }

    let required = rules.required(record.dataset_profile);
    for dim in ContextDimension::ALL {
        let present = record.ctxt_labels.contains_key(&dim);
        let needed = required.contains(&dim);
        if needed && !present {
            violations.push(format!("missing required dimension {dim}"));
        } else if present && !needed {
            violations.push(format!(
                "dimension {dim} is not annotated by profile {}",
                record.dataset_profile
            ));
        }
    }

    if record.overall_consistent != record.labels_conjunction() {
        violations.push("overall/label contradiction".to_string());
    }

    if let Some(p) = &record.perturbation {
        if p.source_id == record.id {
            violations.push("perturbation references its own record".to_string());
        }
    }
    violations
}

/// Checks scene ids against the corpus vocabulary.
pub fn validate_scene(scene: &SceneDescriptor, vocab: &VocabConfig) -> Vec<String> {
    let checks = [
        ("person_id", scene.person_id, vocab.persons),
        ("location_id", scene.location_id, vocab.locations),
        ("event_id", scene.event_id, vocab.events),
        ("narrative_theme_id", scene.narrative_theme_id, vocab.narratives),
        ("background_id", scene.background_id, vocab.backgrounds),
        ("spatial_zone_id", scene.spatial_zone_id, vocab.zones),
    ];
    checks
        .iter()
        .filter(|(_, v, size)| v >= size)
        .map(|(name, v, size)| format!("{name} {v} outside vocabulary of size {size}"))
        .collect()
}

/// Corpus-level checks: every record valid, ids unique, lineage resolvable.
pub fn validate_corpus(corpus: &Corpus) -> Result<()> {
    let rules = ProfileRules::default();
    let mut ids = HashSet::with_capacity(corpus.records.len());
    for record in &corpus.records {
        if !ids.insert(record.id.as_str()) {
            return Err(Error::DuplicateId(record.id.clone()));
        }
        let mut violations = validate_record(record, &rules);
        violations.extend(validate_scene(&record.scene, &corpus.vocab_config));
        if !violations.is_empty() {
            return Err(Error::InvalidRecord {
                id: record.id.clone(),
                violations,
            });
        }
    }
    for record in &corpus.records {
        if let Some(p) = &record.perturbation {
            if !ids.contains(p.source_id.as_str()) {
                return Err(Error::UnresolvedSource {
                    id: record.id.clone(),
                    source_id: p.source_id.clone(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    vocab_config: VocabConfig,
    seed: u64,
}

/// Sidecar holding the corpus-level fields that are not part of any record.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for record in &corpus.records {
        let line = serde_json::to_string(record).expect("records always serialize");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let meta = CorpusMeta {
        vocab_config: corpus.vocab_config,
        seed: corpus.seed,
    };
    fs::write(
        meta_path(path),
        serde_json::to_string_pretty(&meta).expect("meta always serializes"),
    )?;
    Ok(())
}

/// Reads a `.jsonl` corpus and validates it. A missing sidecar falls back to
/// the default vocabulary and seed 0.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        let text = fs::read_to_string(&meta_file)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", meta_file.display()),
        })?
    } else {
        CorpusMeta {
            vocab_config: VocabConfig::default(),
            seed: 0,
        }
    };
    let corpus = Corpus {
        records,
        vocab_config: meta.vocab_config,
        seed: meta.seed,
    };
    validate_corpus(&corpus)?;
    Ok(corpus)
}

/// Assigns train/val/test to every non-perturbed record.
///
/// Val and test get `floor(n * fraction)` records, train takes the rest.
/// Records already marked `perturbed_test` keep that split and do not count
/// towards `n`.
pub fn split_corpus(corpus: &Corpus, fractions: (f64, f64, f64), seed: u64) -> Result<Corpus> {
    let (train, val, test) = fractions;
    if [train, val, test].iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative, got {fractions:?}"
        )));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            train + val + test
        )));
    }

    let mut indices: Vec<usize> = corpus
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split != Split::PerturbedTest)
        .map(|(i, _)| i)
        .collect();
    let n = indices.len();
    let n_val = (n as f64 * val).floor() as usize;
    let n_test = (n as f64 * test).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let mut out = corpus.clone();
    for (pos, idx) in indices.into_iter().enumerate() {
        out.records[idx].split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Perturbation;

    fn scene() -> SceneDescriptor {
        SceneDescriptor {
            person_id: 0,
            location_id: 1,
            event_id: 2,
            sentiment_polarity: 0.3,
            narrative_theme_id: 0,
            background_id: 1,
            time_slot: 9,
            spatial_zone_id: 0,
            coherence_flag: true,
        }
    }

    fn record(id: &str, profile: DatasetProfile) -> PairRecord {
        PairRecord {
            id: id.to_string(),
            split: Split::Train,
            scene: scene(),
            text_tokens: vec![1, 2, 3],
            entity_labels: EntityType::LABELLED.iter().map(|e| (*e, true)).collect(),
            ctxt_labels: profile.dimensions().iter().map(|d| (*d, true)).collect(),
            overall_consistent: true,
            dataset_profile: profile,
            perturbation: None,
        }
    }

    #[test]
    fn consistent_record_is_valid() {
        let r = record("a", DatasetProfile::TamperedNewsEnt);
        assert!(validate_record(&r, &ProfileRules::default()).is_empty());
    }

    #[test]
    fn contradiction_is_reported() {
        let mut r = record("a", DatasetProfile::TamperedNewsEnt);
        r.ctxt_labels.insert(ContextDimension::Sentiment, false);
        assert_eq!(
            validate_record(&r, &ProfileRules::default()),
            vec!["overall/label contradiction".to_string()]
        );
    }

    #[test]
    fn missing_required_dimension() {
        let mut r = record("a", DatasetProfile::MMGEnt);
        r.ctxt_labels.clear();
        assert_eq!(
            validate_record(&r, &ProfileRules::default()),
            vec!["missing required dimension LogicalCoherence".to_string()]
        );
    }

    #[test]
    fn unexpected_dimension_and_missing_entity() {
        let mut r = record("a", DatasetProfile::MMGEnt);
        r.ctxt_labels.insert(ContextDimension::Sentiment, true);
        r.entity_labels.remove(&EntityType::LOC);
        let v = validate_record(&r, &ProfileRules::default());
        assert_eq!(
            v,
            vec![
                "missing entity label LOC".to_string(),
                "dimension Sentiment is not annotated by profile MMGEnt".to_string(),
            ]
        );
    }

    /// Exhaustive enumeration over every label assignment of each profile: the
    /// record validates exactly when overall equals the conjunction.
    #[test]
    fn label_closure_enumeration() {
        let rules = ProfileRules::default();
        for profile in DatasetProfile::ALL {
            let dims = profile.dimensions();
            let n_labels = 3 + dims.len();
            for mask in 0u32..(1 << n_labels) {
                for overall in [false, true] {
                    let mut r = record("x", profile);
                    for (i, e) in EntityType::LABELLED.iter().enumerate() {
                        r.entity_labels.insert(*e, mask & (1 << i) != 0);
                    }
                    for (j, d) in dims.iter().enumerate() {
                        r.ctxt_labels.insert(*d, mask & (1 << (3 + j)) != 0);
                    }
                    r.overall_consistent = overall;
                    let all_true = mask == (1 << n_labels) - 1;
                    let valid = validate_record(&r, &rules).is_empty();
                    assert_eq!(valid, overall == all_true, "{profile} mask={mask:b}");
                }
            }
        }
    }

    fn corpus_of(n: usize) -> Corpus {
        Corpus {
            records: (0..n)
                .map(|i| record(&format!("r{i:04}"), DatasetProfile::News400Ent))
                .collect(),
            vocab_config: VocabConfig::default(),
            seed: 0,
        }
    }

    #[test]
    fn split_sizes_exact_division() {
        let c = split_corpus(&corpus_of(100), (0.8, 0.1, 0.1), 1).unwrap();
        let count = |s| c.records.iter().filter(|r| r.split == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (80, 10, 10)
        );
    }

    #[test]
    fn degenerate_split_all_train() {
        let c = split_corpus(&corpus_of(10), (1.0, 0.0, 0.0), 3).unwrap();
        assert!(c.records.iter().all(|r| r.split == Split::Train));
    }

    #[test]
    fn split_remainder_goes_to_train_and_perturbed_are_kept() {
        let mut c = corpus_of(11);
        c.records[4].split = Split::PerturbedTest;
        let s = split_corpus(&c, (0.5, 0.25, 0.25), 9).unwrap();
        let count = |sp| s.records.iter().filter(|r| r.split == sp).count();
        assert_eq!(count(Split::PerturbedTest), 1);
        assert_eq!(s.records[4].split, Split::PerturbedTest);
        // n = 10: val = 2, test = 2, train = 6
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (6, 2, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus_of(57);
        let a = split_corpus(&c, (0.6, 0.2, 0.2), 42).unwrap();
        let b = split_corpus(&c, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(a, b);
        let other = split_corpus(&c, (0.6, 0.2, 0.2), 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(matches!(
            split_corpus(&corpus_of(3), (0.5, 0.3, 0.3), 0),
            Err(Error::Config(_))
        ));
        assert!(split_corpus(&corpus_of(3), (1.1, -0.1, 0.0), 0).is_err());
    }

    #[test]
    fn load_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let c = load_corpus(&path).unwrap();
        assert!(c.records.is_empty());
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let mut c = corpus_of(2);
        c.records[1].id = c.records[0].id.clone();
        save_corpus(&c, &path).unwrap();
        match load_corpus(&path) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "r0000"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_parse_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&record("a", DatasetProfile::MMGEnt)).unwrap();
        fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match load_corpus(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_dangling_lineage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lineage.jsonl");
        let mut c = corpus_of(1);
        c.records[0].perturbation = Some(Perturbation {
            source_id: "ghost".into(),
            dimension: crate::types::Target::Entity(EntityType::PER),
            method: "swap".into(),
        });
        save_corpus(&c, &path).unwrap();
        assert!(matches!(
            load_corpus(&path),
            Err(Error::UnresolvedSource { .. })
        ));
    }

    #[test]
    fn absent_optionals_are_omitted() {
        let line = serde_json::to_string(&record("a", DatasetProfile::MMGEnt)).unwrap();
        assert!(!line.contains("perturbation"));
        assert!(!line.contains("null"));
        assert!(line.contains("\"split\":\"train\""));
        assert!(line.contains("\"LogicalCoherence\":true"));
    }
}
