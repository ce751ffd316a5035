use umind::pipeline::{
    build_dataset, evaluate_sets, generate_all, instruct_tune, load_motion_set, pretrain, random_token_baseline, s2m_prompt,
    save_generations, train_codec, DataBundle, Dataset, ExperimentConfig, DATASET_FILE,
};
use umind::synthdata::Split;
use umind::token_space::parse_response_with;
use umind::Error;

#[test]
fn smoke_pipeline_round_trips_every_artifact() {
    let cfg = ExperimentConfig::smoke();
    let dir = tempfile::tempdir().unwrap();

    let data = DataBundle::generate(&cfg).unwrap();
    data.save(dir.path()).unwrap();
    assert_eq!(DataBundle::load(dir.path()).unwrap(), data);

    let (trainer, reports) = train_codec(&cfg, &data.corpus.split(Split::Train)).unwrap();
    assert_eq!(reports.len() as u64, cfg.codec_training.steps);
    let codec = trainer.codec;

    let dataset = build_dataset(&cfg, &data, &codec).unwrap();
    assert!(!dataset.aligned.is_empty());
    assert_eq!(dataset.instruct_test.len(), cfg.evaluation.heldout_instruct);
    let path = dir.path().join(DATASET_FILE);
    dataset.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), dataset);

    let (stage1, r1) = pretrain(&cfg, &dataset).unwrap();
    assert_eq!(r1.len() as u64, cfg.stage1.steps);
    let (stage2, _) = instruct_tune(&cfg, &dataset, stage1).unwrap();

    let test = data.corpus.split(Split::Test);
    let prompts: Vec<_> = test.iter().map(|c| s2m_prompt(&cfg, c)).collect();
    let layout = cfg.layout().unwrap();
    let mut one = generate_all(&cfg, &stage2.model, &codec, &prompts, 1, true).unwrap();
    let two = generate_all(&cfg, &stage2.model, &codec, &prompts, 2, true).unwrap();
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a.record, b.record);
        if let Some(r) = &a.result {
            parse_response_with(&r.raw, &layout, r.order).unwrap();
        }
    }

    let gen_dir = dir.path().join("gen");
    save_generations(&gen_dir, &mut one).unwrap();
    let generated = load_motion_set(&gen_dir).unwrap();
    let reference = load_motion_set(dir.path()).unwrap();
    assert_eq!(reference.len(), test.len());
    let report = evaluate_sets(&cfg, &generated, &reference).unwrap();
    assert!(report.fgd.is_finite() && report.fgd >= 0.0);

    let baseline = random_token_baseline(&codec, &reference, 0).unwrap();
    for ((_, b), (_, r)) in baseline.iter().zip(&reference) {
        assert!(b.frames() >= r.frames());
    }
}

#[test]
fn missing_inputs_are_reported_as_such() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_motion_set(&dir.path().join("nope")), Err(Error::InputMissing(_))));
    assert!(matches!(load_motion_set(dir.path()), Err(Error::InputMissing(_))));
    assert!(matches!(Dataset::load(&dir.path().join(DATASET_FILE)), Err(Error::InputMissing(_))));
}
