mod common;

use avatar_core::dit::{role_of, Role};
use avatar_core::trainer::{TrainState, Trainer, STATE_FILE};
use avatar_core::Error;
use common::{tiny_corpus, tiny_train};

#[test]
fn frozen_mode_leaves_base_weights_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 4, 0);
    let mut t = Trainer::new(tiny_train("frozen_dit", 10), &corpus, None).unwrap();
    let before = t.weights.clone();
    t.run(None, None).unwrap();
    let mut changed = Vec::new();
    for (name, w) in &t.weights.params {
        if w != &before.params[name] {
            changed.push(name.clone());
        }
    }
    assert!(!changed.is_empty());
    assert!(changed.iter().all(|n| role_of(n) == Role::Audio), "{changed:?}");
}

#[test]
fn changed_tensors_equal_the_trainable_set() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 4, 0);
    for mode in ["lora", "full"] {
        let mut cfg = tiny_train(mode, 8);
        cfg.audio_dropout = 0.0;
        cfg.text_dropout = 0.0;
        let mut t = Trainer::new(cfg, &corpus, None).unwrap();
        let (w0, a0) = (t.weights.clone(), t.adapters.clone());
        t.run(None, None).unwrap();
        let mut changed = std::collections::BTreeSet::new();
        for (n, w) in &t.weights.params {
            if w != &w0.params[n] {
                changed.insert(n.clone());
            }
        }
        if let (Some(a), Some(a0)) = (&t.adapters, &a0) {
            for n in a.param_names() {
                if a.param(&n) != a0.param(&n) {
                    changed.insert(n);
                }
            }
        }
        assert_eq!(changed, t.trainable, "{mode}");
    }
}

#[test]
fn lora_loss_goes_down() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 8, 0);
    let mut t = Trainer::new(tiny_train("lora", 300), &corpus, None).unwrap();
    let mut log = Vec::new();
    let hist = t.run(Some(&mut log), None).unwrap();
    assert!(
        hist[299].ema_loss < hist[29].ema_loss,
        "{} vs {}",
        hist[299].ema_loss,
        hist[29].ema_loss
    );
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 300);
    assert_eq!(lines[0]["mode"], "lora");
    assert!(lines[299]["ema_loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn full_audio_dropout_zeroes_audio_gradients() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 4, 0);
    let mut cfg = tiny_train("full", 5);
    cfg.audio_dropout = 1.0;
    let mut t = Trainer::new(cfg, &corpus, None).unwrap();
    let before = t.weights.clone();
    for _ in 0..5 {
        let s = t.step().unwrap();
        for (name, g) in &s.grad_max_abs {
            if role_of(name) == Role::Audio {
                assert_eq!(*g, 0.0, "{name}");
            }
        }
        assert!(s.grad_max_abs["blocks.1.attn.q"] > 0.0);
    }
    for n in t.weights.audio_names() {
        assert_eq!(t.weights.params[n], before.params[n]);
    }
}

#[test]
fn dropout_frequency_is_calibrated() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 4, 0);
    let t = Trainer::new(tiny_train("lora", 1), &corpus, None).unwrap();
    let draws = t.sample_draws(10_000, 77);
    let audio = draws.iter().filter(|d| d.drop_audio).count() as f64 / 1e4;
    let text = draws.iter().filter(|d| d.drop_text).count() as f64 / 1e4;
    assert!((audio - 0.1).abs() <= 0.01, "{audio}");
    assert!((text - 0.1).abs() <= 0.01, "{text}");
    let prefixes: std::collections::BTreeSet<_> = draws.iter().map(|d| d.prefix_len).collect();
    assert_eq!(prefixes.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
}

#[test]
fn resume_reproduces_the_uninterrupted_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir.path().join("corpus"), 4, 0);
    let ck_dir = dir.path().join("ck");

    let mut straight = Trainer::new(tiny_train("lora", 60), &corpus, None).unwrap();
    straight.run(None, None).unwrap();

    let mut first = Trainer::new(tiny_train("lora", 50), &corpus, None).unwrap();
    first.run(None, Some(&ck_dir)).unwrap();
    let mut resumed = Trainer::resume(tiny_train("lora", 60), &corpus, &ck_dir).unwrap();
    assert_eq!(resumed.state, first.state);
    assert_eq!(resumed.checkpoint(), first.checkpoint());
    resumed.run(None, None).unwrap();
    assert_eq!(resumed.checkpoint(), straight.checkpoint());
    assert_eq!(resumed.state, straight.state);

    let again = Trainer::resume(tiny_train("lora", 60), &corpus, &ck_dir).unwrap();
    assert_eq!(TrainState::decode(&again.state.encode()).unwrap(), again.state);

    let path = ck_dir.join(STATE_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        Trainer::resume(tiny_train("lora", 60), &corpus, &ck_dir),
        Err(Error::Format(_))
    ));
}

#[test]
fn same_config_same_checkpoint_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(&dir.path().join("corpus"), 4, 0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        Trainer::new(tiny_train("lora", 5), &corpus, None)
            .unwrap()
            .run(None, Some(out))
            .unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        assert_eq!(
            std::fs::read(a.join(&n)).unwrap(),
            std::fs::read(b.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn missing_corpus_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = avatar_core::corpus::Corpus::load(&dir.path().join("absent")).unwrap_err();
    assert!(err.to_string().contains("absent"), "{err}");
}
