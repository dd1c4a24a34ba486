use cl4ctr::data::{read_dataset, split, synth_generate, write_dataset, SynthConfig};
use cl4ctr::fi_encoder::EncoderConfig;
use cl4ctr::metrics::evaluate;
use cl4ctr::models::CtrModel;
use cl4ctr::trainer::{train, TrainConfig};

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 128,
        max_epochs: 4,
        embedding_dim: 8,
        learning_rate: 0.01,
        encoder: EncoderConfig {
            layers: 1,
            ..EncoderConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_split_scores_at_least_validation_auc() {
    let mut wins = 0;
    let seeds = 10;
    for seed in 0..seeds {
        let synth = SynthConfig {
            fields: 4,
            features_per_field: 40,
            instances: 3000,
            sample_seed: seed,
            ..SynthConfig::default()
        };
        let (ds, vocab) = synth_generate(&synth).unwrap();
        let [tr, va, _] = split(&ds, [0.8, 0.1, 0.1], seed).unwrap();
        let (report, state) = train(&config(seed), vocab.field_ranges(), &tr, &va, None).unwrap();
        let train_auc = evaluate(&state.model, &tr).unwrap().auc.unwrap();
        if train_auc >= report.best_val_auc {
            wins += 1;
        }
    }
    assert!(wins * 10 >= seeds * 9, "{wins}/{seeds}");
}

#[test]
fn checkpoint_and_dataset_files_round_trip() {
    let synth = SynthConfig {
        fields: 3,
        features_per_field: 10,
        instances: 500,
        ..SynthConfig::default()
    };
    let (ds, vocab) = synth_generate(&synth).unwrap();
    let [tr, va, te] = split(&ds, [0.8, 0.1, 0.1], 1).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let path = dir.path().join("test.cl4d");
    write_dataset(std::fs::File::create(&path).unwrap(), &te).unwrap();
    let te2 = read_dataset(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(te, te2);

    let (report, state) = train(&config(1), vocab.field_ranges(), &tr, &va, Some(&te)).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    state.model.write_to(std::fs::File::create(&ckpt).unwrap()).unwrap();
    let model = CtrModel::read_from(std::fs::File::open(&ckpt).unwrap()).unwrap();
    assert_eq!(model, state.model);
    assert_eq!(evaluate(&model, &te2).unwrap(), report.test.unwrap());
}
