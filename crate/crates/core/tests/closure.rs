use std::collections::HashMap;

use narrator::caption::{caption, oracle_caption, OracleBackend, QueryConfig, RetryPolicy};
use narrator::cursor_ground::TemplateMatcher;
use narrator::datasets::{load_manifest, persist_sample, validate, write_manifest, Split};
use narrator::keyframe::KeyframeStrategy;
use narrator::metric::{decompose, score_dataset, score_sample, BuiltinMatcher};
use narrator::pipeline::{assemble_query, choose_keyframes, ground, synth_sample, SynthConfig};
use narrator::scene_sim::{caption_template, random_script, standard_scene, ActionKind};
use narrator::sprite::CursorSpriteLibrary;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn template_captions_decompose_completely(seed in any::<u64>(), class in 0usize..5) {
        let scene = standard_scene(640, 400, seed);
        let kind = ActionKind::ALL[class];
        let script = random_script(&scene, kind, seed);
        let widget = scene.widget(&script.target_widget).unwrap();
        let text = caption_template(widget, &script);
        let v = decompose(&text);
        prop_assert_eq!(v.action_class, Some(kind));
        prop_assert!(v.slots.iter().all(|(_, s)| !s.is_empty()), "{text:?} -> {v:?}");
        prop_assert_eq!(score_sample(&text, &text, &BuiltinMatcher).1, 1.0);
    }
}

#[test]
fn oracle_answers_every_class_perfectly() {
    let cfg = SynthConfig { seed: 9, ..SynthConfig::default() };
    let pairs: Vec<(String, String)> = (0..10)
        .map(|i| {
            let s = synth_sample(&cfg, i).unwrap();
            (oracle_caption(&s), s.gt_caption)
        })
        .collect();
    let report = score_dataset(&pairs, &BuiltinMatcher);
    assert_eq!(report.per_category.len(), 5);
    assert!(report.per_category.iter().all(|c| c.iou == 100.0));
    assert_eq!(report.average, 100.0);
}

#[test]
fn grounded_query_round_trip() {
    let cfg = SynthConfig { seed: 2, ..SynthConfig::default() };
    let matcher = TemplateMatcher::with_default_threshold(&CursorSpriteLibrary::builtin());
    for i in 0..5 {
        let s = synth_sample(&cfg, i).unwrap();
        let g = ground(&s.frames, 10, &matcher).unwrap();
        for (fix, want) in g.fixes.iter().zip(&s.cursor_track) {
            assert!(fix.center.x.abs_diff(want.x) <= 2 && fix.center.y.abs_diff(want.y) <= 2);
        }
        let sel = choose_keyframes(KeyframeStrategy::GroundTruth, &g, Some(s.gt_keyframes), None).unwrap();
        let q = assemble_query("id", &g, &sel, 128, &QueryConfig::default()).unwrap();
        assert_eq!(q.images.len(), 4);
        assert_eq!((q.images[2].width(), q.images[2].height()), (128, 128));
        let backend = OracleBackend::new(HashMap::from([("id".to_string(), oracle_caption(&s))]));
        let out = caption(&backend, &q, &RetryPolicy::default()).unwrap();
        assert_eq!(score_sample(&out.text, &s.gt_caption, &BuiltinMatcher).1, 1.0);
    }
}

#[test]
fn persisted_samples_validate_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::default();
    let records: Vec<_> = (0..6)
        .map(|i| {
            let split = if i < 3 { Split::Train } else { Split::Test };
            persist_sample(dir.path(), &format!("s{i}"), split, &synth_sample(&cfg, i).unwrap()).unwrap()
        })
        .collect();
    let manifest = dir.path().join("manifest.jsonl");
    write_manifest(&manifest, &records).unwrap();
    let loaded = load_manifest(&manifest).unwrap();
    assert_eq!(loaded, records);
    assert!(validate(&loaded, dir.path()).is_empty());
}
