use super::*;
use crate::data::{split, synth_generate, SynthConfig, Vocabulary};
use crate::fi_encoder::EncoderKind;
use crate::models::ModelKind;

fn small_task(seed: u64) -> (Vocabulary, [EncodedDataset; 3]) {
    let cfg = SynthConfig {
        fields: 3,
        features_per_field: 20,
        instances: 900,
        sample_seed: seed,
        weight_scale: 2.0,
        ..SynthConfig::default()
    };
    let (ds, vocab) = synth_generate(&cfg).unwrap();
    let parts = split(&ds, [0.7, 0.15, 0.15], seed).unwrap();
    (vocab, parts)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        max_epochs: 3,
        embedding_dim: 4,
        learning_rate: 0.01,
        encoder: EncoderConfig {
            layers: 1,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn plateau_fixtures() {
    let s = lr_schedule(&[0.70, 0.71, 0.72, 0.73, 0.74, 0.75], 0.001, 4, 10.0);
    assert!(s.reductions.is_empty());
    assert!(s.lrs.iter().all(|&lr| lr == 0.001));

    let s = lr_schedule(&[0.8, 0.79, 0.79, 0.79, 0.79], 0.001, 4, 10.0);
    assert_eq!(s.reductions, vec![5]);
    assert_eq!(*s.lrs.last().unwrap(), 0.001 / 10.0);

    let s = lr_schedule(&[0.8, 0.79, 0.79, 0.79, 0.79, 0.79, 0.79, 0.79, 0.79], 0.001, 4, 10.0);
    assert_eq!(s.reductions, vec![5, 9]);
    assert_eq!(*s.lrs.last().unwrap(), 0.001 / 10.0 / 10.0);
    assert!(s.lrs.windows(2).all(|w| w[1] <= w[0]));

    // an improvement resets the counter
    let s = lr_schedule(&[0.8, 0.7, 0.7, 0.7, 0.81, 0.7, 0.7, 0.7], 0.001, 4, 10.0);
    assert!(s.reductions.is_empty());
}

#[test]
fn early_stop_fixtures() {
    let up: Vec<f64> = (0..30).map(|i| 0.5 + i as f64 * 0.01).collect();
    assert_eq!(early_stop(&up, 8), StopDecision { stop_epoch: None, best_epoch: 30 });
    assert_eq!(early_stop(&[0.7; 9], 8), StopDecision { stop_epoch: Some(9), best_epoch: 1 });
    assert_eq!(early_stop(&[0.7; 8], 8).stop_epoch, None);
    let d = early_stop(&[0.6, 0.8, 0.7, 0.8, 0.75], 8);
    assert_eq!(d.best_epoch, 2);
}

#[test]
fn config_problems_are_listed_together() {
    let bad = TrainConfig {
        batch_size: 0,
        alpha: -1.0,
        plateau_patience: 0,
        embedding_dim: 5,
        ..TrainConfig::default()
    };
    let p = bad.problems();
    assert_eq!(p.len(), 4, "{p:?}");
    assert!(matches!(bad.validate(), Err(TrainError::Config(v)) if v.len() == 4));
    assert!(TrainConfig::default().validate().is_ok());
    let parsed: Result<TrainConfig, _> = serde_json::from_str(r#"{"batch_sise": 3}"#);
    assert!(parsed.is_err());
}

#[test]
fn untrained_ctr_loss_is_near_ln2() {
    let (vocab, [train, ..]) = small_task(1);
    let config = small_config();
    let state = TrainState::init(&config, vocab.field_ranges()).unwrap();
    let l = epoch_losses(&state, &train, &config).unwrap();
    let rate = train.positive_rate();
    assert!((rate - 0.5).abs() < 0.1, "{rate}");
    assert!((l.l_ctr - std::f64::consts::LN_2).abs() < 0.05, "{l:?}");
    assert_eq!(l, epoch_losses(&state, &train, &config).unwrap());
}

#[test]
fn training_is_deterministic() {
    let (vocab, [train, val, test]) = small_task(2);
    let config = small_config();
    let run = || {
        let (r, s) = super::train(&config, vocab.field_ranges(), &train, &val, Some(&test)).unwrap();
        (r.to_json(), s)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    for key in ["\"epoch\"", "\"l_ctr\"", "\"l_cl\"", "\"l_a\"", "\"l_u\"", "\"val_auc\"", "\"val_logloss\"", "\"lr\""] {
        assert!(a.contains(key), "{key}");
    }
}

#[test]
fn zero_ssl_weights_leave_encoder_untouched() {
    let (vocab, [train, val, _]) = small_task(3);
    let config = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..small_config()
    };
    let init = TrainState::init(&config, vocab.field_ranges()).unwrap();
    let (report, state) = super::train(&config, vocab.field_ranges(), &train, &val, None).unwrap();
    assert_eq!(state.ssl, init.ssl);
    assert!(report.epochs.iter().all(|r| r.ssl_frozen && r.l_cl.value().is_none()));
    assert!(report.to_json().contains("\"l_cl\": \"frozen\""));

    // the base trajectory ignores the (unused) encoder entirely
    let other = TrainConfig {
        encoder: EncoderConfig {
            kind: EncoderKind::Crossnet,
            ..EncoderConfig::default()
        },
        mask: MaskSpec { p: 0.9, ..MaskSpec::default() },
        ..config.clone()
    };
    let (report2, state2) = super::train(&other, vocab.field_ranges(), &train, &val, None).unwrap();
    assert_eq!(state.model, state2.model);
    assert_eq!(report.epochs, report2.epochs);
}

#[test]
fn ssl_terms_train_the_encoder() {
    let (vocab, [train, val, _]) = small_task(4);
    let config = TrainConfig {
        max_epochs: 1,
        ..small_config()
    };
    let init = TrainState::init(&config, vocab.field_ranges()).unwrap();
    let (report, state) = super::train(&config, vocab.field_ranges(), &train, &val, None).unwrap();
    assert_ne!(state.ssl, init.ssl);
    let r = &report.epochs[0];
    assert!(r.l_cl.value().unwrap() >= 0.0 && r.l_a.value().unwrap() >= 0.0);
    assert!(!r.ssl_frozen);
}

#[test]
fn inference_ignores_ssl_parameters() {
    let (vocab, [train, val, test]) = small_task(5);
    let config = TrainConfig {
        max_epochs: 1,
        ..small_config()
    };
    let (_, mut state) = super::train(&config, vocab.field_ranges(), &train, &val, None).unwrap();
    let before = state.model.predict(&test).unwrap();
    for p in state.ssl.params_mut() {
        p.data_mut().fill(123.0);
    }
    assert_eq!(state.model.predict(&test).unwrap(), before);
}

#[test]
fn separable_toy_reaches_high_auc() {
    // label = 1 iff the field-0 feature lies in the upper half of its range
    let n = 2000;
    let mut idx = Vec::new();
    let mut labels = Vec::new();
    let mut rng = seed::stream(1, "toy", 0, 0);
    use rand::Rng;
    for _ in 0..n {
        let a: u32 = rng.gen_range(0..10);
        let b: u32 = rng.gen_range(10..20);
        idx.extend([a, b]);
        labels.push(u8::from(a >= 5));
    }
    let ds = EncodedDataset::new(2, idx, labels).unwrap();
    // closed-form threshold on the field-0 index separates perfectly
    let scores: Vec<f64> = (0..n).map(|i| f64::from(ds.instance(i)[0])).collect();
    assert_eq!(crate::metrics::auc(&scores, ds.labels()).unwrap(), 1.0);

    let [train, val, test] = split(&ds, [0.8, 0.1, 0.1], 2).unwrap();
    let config = TrainConfig {
        batch_size: 128,
        max_epochs: 50,
        embedding_dim: 4,
        predictor: PredictorConfig {
            kind: ModelKind::Fm,
            ..PredictorConfig::default()
        },
        encoder: EncoderConfig {
            layers: 1,
            ..EncoderConfig::default()
        },
        ..TrainConfig::default()
    };
    let (report, _) = super::train(&config, vec![0..10, 10..20], &train, &val, Some(&test)).unwrap();
    assert!(report.best_val_auc > 0.95, "{}", report.best_val_auc);
    assert!(report.epochs.windows(2).all(|w| w[1].lr <= w[0].lr));
    let best = report.epochs.iter().map(|r| r.val_auc).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.epochs[report.best_epoch - 1].val_auc, best);
}

#[test]
fn divergence_is_reported() {
    let (vocab, [train, val, _]) = small_task(6);
    let config = TrainConfig {
        learning_rate: 1e300,
        ..small_config()
    };
    let err = super::train(&config, vocab.field_ranges(), &train, &val, None).unwrap_err();
    assert!(matches!(err, TrainError::Divergence { .. }), "{err}");
}

#[test]
fn fwfm_and_dnn_predictors_train() {
    let (vocab, [train, val, test]) = small_task(7);
    for kind in [ModelKind::Lr, ModelKind::Fwfm, ModelKind::FmDnn] {
        let config = TrainConfig {
            max_epochs: 1,
            clip_norm: Some(5.0),
            predictor: PredictorConfig {
                kind,
                dnn_widths: vec![16, 1],
                ..PredictorConfig::default()
            },
            ..small_config()
        };
        let (report, _) = super::train(&config, vocab.field_ranges(), &train, &val, Some(&test)).unwrap();
        assert!(report.test.unwrap().logloss.is_finite());
    }
}

#[test]
fn mismatched_fields_rejected() {
    let (vocab, [train, val, _]) = small_task(8);
    let wrong = EncodedDataset::new(2, vec![0, 21], vec![1]).unwrap();
    assert!(super::train(&small_config(), vocab.field_ranges(), &train, &wrong, None).is_err());
    assert!(super::train(&small_config(), vocab.field_ranges(), &train, &val.subset(&[]), None).is_err());
}
