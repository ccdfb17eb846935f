use contextguard_core::config::RunConfig;
use contextguard_core::corpus::{load_corpus, save_corpus, validate_corpus};
use contextguard_core::eval::{evaluate, ConstantPredictor, OraclePredictor, Predictor, ReportKind};
use contextguard_core::experiment::{prepare_corpus, train_model};
use contextguard_core::fccr::predict;
use contextguard_core::model::{load_checkpoint, save_checkpoint, Variant};
use contextguard_core::train::Paradigm;
use contextguard_core::types::{DatasetProfile, Split};

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_preset("tiny").unwrap();
    c.data.n_consistent = 50;
    c.data.n_inconsistent = 50;
    c.train.epochs = 1;
    c
}

#[test]
fn corpus_round_trips_through_disk() {
    let c = small();
    let world = c.world();
    let corpus = prepare_corpus(&c, &world, 3).unwrap();
    validate_corpus(&corpus).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&corpus, &path).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), corpus);
    assert!(corpus.split(Split::PerturbedTest).count() > 0);
}

#[test]
fn trained_checkpoint_reloads_to_identical_scores() {
    let c = small();
    let world = c.world();
    let corpus = prepare_corpus(&c, &world, 8).unwrap();
    for paradigm in Paradigm::ALL {
        let (model, stats) = train_model(&c, &corpus, &world, Variant::Full, paradigm, 8).unwrap();
        assert_eq!(stats.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.jsonl");
        save_checkpoint(&model.params, &path).unwrap();
        let mut fresh = c.init_model(Variant::Full, &world, 8).unwrap();
        load_checkpoint(&mut fresh.params, &path).unwrap();
        for r in corpus.split(Split::Test) {
            assert_eq!(predict(r, &fresh).unwrap(), predict(r, &model).unwrap(), "{paradigm:?}");
        }
    }
}

#[test]
fn oracle_beats_constant_predictors_in_every_cell() {
    let c = small();
    let world = c.world();
    let corpus = prepare_corpus(&c, &world, 5).unwrap();
    let yes = ConstantPredictor(0.9);
    let no = ConstantPredictor(0.1);
    let predictors: [(&str, &dyn Predictor); 3] = [("oracle", &OraclePredictor), ("yes", &yes), ("no", &no)];
    for kind in [ReportKind::Entity, ReportKind::Ctxt] {
        let table = evaluate(&predictors, &corpus, kind, 0.5).unwrap();
        for (profile, group) in &table.columns {
            let Some(oracle) = table.cell("oracle", *profile, group) else { continue };
            assert_eq!(oracle.accuracy, 1.0, "{profile:?} {group}");
            for other in ["yes", "no"] {
                assert!(table.cell(other, *profile, group).unwrap().accuracy <= oracle.accuracy);
            }
        }
        if kind == ReportKind::Ctxt {
            let groups: Vec<&str> = table
                .columns
                .iter()
                .filter(|(p, _)| *p == DatasetProfile::TamperedNewsEnt)
                .map(|(_, g)| g.as_str())
                .collect();
            assert_eq!(groups.len(), DatasetProfile::TamperedNewsEnt.dimensions().len());
        }
    }
}
