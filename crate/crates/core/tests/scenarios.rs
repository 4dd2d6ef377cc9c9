use std::path::Path;

use refseg_core::backends::scripted::Scenario;
use refseg_core::backends::{BackendError, Backends};
use refseg_core::config::Config;
use refseg_core::eval::generate::{ObjectSpec, OverStyle};
use refseg_core::eval::{write_scenario, Fault, SceneSpec};
use refseg_core::image::Image;
use refseg_core::mask::{io, iou, BBox};
use refseg_core::pipeline::{segment, PipelineError};
use refseg_core::trace::Phase;

fn backpack_scene(fault: Fault) -> SceneSpec {
    SceneSpec {
        id: "backpack".into(),
        target: ObjectSpec {
            name: "man".into(),
            synonyms: ["person".into(), "guy".into()],
            color: [235, 130, 20],
            rect: BBox::new(8, 12, 28, 52).unwrap(),
        },
        refer: Some(ObjectSpec {
            name: "blue backpack".into(),
            synonyms: ["blue rucksack".into(), "blue bag".into()],
            color: [40, 70, 210],
            rect: BBox::new(28, 20, 38, 34).unwrap(),
        }),
        query: "the man carrying a blue backpack".into(),
        short: "the man".into(),
        long: "the man who carries the blue backpack on his back".into(),
        relation: "carrying".into(),
        fault,
        over_style: OverStyle::Decoy,
        decoy_color: [40, 180, 60],
        corner: 1,
        noise_seed: 17,
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    backends: Backends,
    image: Image,
    gt: refseg_core::mask::BinaryMask,
    query: String,
}

fn fixture(spec: &SceneSpec) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    write_scenario(spec, &scene).unwrap();
    Fixture {
        backends: Backends::scripted(Scenario::load(&scene).unwrap()),
        image: Image::load(&scene.join("image.png")).unwrap(),
        gt: io::load(&scene.join("gt.png")).unwrap(),
        query: spec.query.clone(),
        _dir: dir,
    }
}

#[test]
fn man_with_backpack_is_recovered_from_a_missing_corner() {
    let f = fixture(&backpack_scene(Fault::Under));
    let seg = segment(&f.backends, &f.image, &f.query, &Config::default()).unwrap();
    assert!(iou(&seg.mask, &f.gt).unwrap() > 0.9);
    assert_eq!(seg.eri.parsed.target_name, "man");
    assert_eq!(seg.eri.parsed.refer_names, vec!["blue backpack".to_string()]);
    assert_eq!(seg.eri.bundle.texts, vec!["man", "person", "guy"]);
    assert_eq!(seg.eri.short, "the man");
    assert_eq!(seg.eri.bundle.boxes.len(), 3);
    // The negative point sits off the man, the positive on it.
    let p = seg.eri.bundle.positives[0];
    assert!(f.gt.get(p.x, p.y));
    let n = seg.eri.bundle.negative.unwrap();
    assert!(!f.gt.get(n.x, n.y));
    let verdicts: Vec<_> = seg.trace.filter(Phase::Msr, "verdict").collect();
    assert!(verdicts.iter().any(|e| e.data["fault"] == "under"));
}

#[test]
fn refer_object_candidate_is_filtered_out() {
    let f = fixture(&backpack_scene(Fault::None));
    let seg = segment(&f.backends, &f.image, &f.query, &Config::default()).unwrap();
    let filter = seg.trace.filter(Phase::Eri, "filter").next().unwrap();
    let kept: Vec<bool> = filter.data["decisions"].as_array().unwrap().iter().map(|d| d["kept"].as_bool().unwrap()).collect();
    assert_eq!(kept, vec![true, false, true]);
    assert_eq!(filter.data["fallback"], false);
    // Two text survivors are scored; the lone box candidate is not.
    let calls = seg.trace.call_counts();
    assert_eq!(calls["score"], 2);
    assert_eq!(calls["segment_box"], 1);
    assert_eq!(seg.mask, f.gt);
}

#[test]
fn single_candidates_need_no_scoring() {
    let f = fixture(&backpack_scene(Fault::None));
    let config = Config { text_aug: false, ..Config::default() };
    let seg = segment(&f.backends, &f.image, &f.query, &config).unwrap();
    assert_eq!(seg.trace.call_counts().get("score"), None);
    let selects: Vec<_> = seg.trace.filter(Phase::Eri, "select").map(|e| e.data["scored"].clone()).collect();
    assert_eq!(selects, vec![serde_json::json!(false), serde_json::json!(false)]);
}

#[test]
fn unreachable_threshold_keeps_every_text_candidate() {
    let f = fixture(&backpack_scene(Fault::None));
    let config = Config { tau: 1.01, ..Config::default() };
    let seg = segment(&f.backends, &f.image, &f.query, &config).unwrap();
    let filter = seg.trace.filter(Phase::Eri, "filter").next().unwrap();
    assert_eq!(filter.data["fallback"], true);
    assert!(seg.trace.filter(Phase::Eri, "warning").count() >= 1);
    // Three survivors are scored against the oracle; the exact mask wins.
    assert_eq!(seg.trace.call_counts()["score"], 3);
    assert_eq!(seg.eri.mask_text.as_ref(), Some(&f.gt));
}

#[test]
fn every_backend_call_is_traced_once() {
    let f = fixture(&backpack_scene(Fault::Over));
    let seg = segment(&f.backends, &f.image, &f.query, &Config::default()).unwrap();
    let calls: Vec<_> = seg.trace.events().iter().filter(|e| e.event == "call").collect();
    assert_eq!(calls.len(), seg.trace.call_counts().values().sum::<usize>());
    for c in &calls {
        assert!(c.data["args_digest"].as_str().unwrap().starts_with("sha256:"));
        assert!(c.data.get("response_digest").is_some() || c.data.get("error").is_some());
    }
    let seqs: Vec<u64> = seg.trace.events().iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    assert_eq!(seg.trace.events()[0].event, "header");
    assert_eq!(seg.trace.events().last().unwrap().event, "result");
}

#[test]
fn disabled_stages_skip_their_calls() {
    let f = fixture(&backpack_scene(Fault::None));
    let config = Config { text_aug: false, bbox_aug: false, opm: false, ..Config::default() };
    let seg = segment(&f.backends, &f.image, &f.query, &config).unwrap();
    let calls = seg.trace.call_counts();
    assert_eq!(calls.get("augment"), None);
    assert_eq!(calls["ground"], 1);
    assert_eq!(calls.get("affiliate"), None);
    assert_eq!(seg.eri.bundle.texts, vec!["man"]);
}

#[test]
fn unknown_query_fails_with_a_trace() {
    let f = fixture(&backpack_scene(Fault::None));
    let err = segment(&f.backends, &f.image, "the woman on the left", &Config::default()).unwrap_err();
    assert!(matches!(err.error, PipelineError::Backend(BackendError::Unscripted { .. })));
    assert_eq!(err.trace.events().last().unwrap().event, "error");
    let err = segment(&f.backends, &f.image, "   ", &Config::default()).unwrap_err();
    assert!(matches!(err.error, PipelineError::Invariant(_)));
}

#[test]
fn query_lookup_ignores_case_and_spacing() {
    let f = fixture(&backpack_scene(Fault::None));
    let seg = segment(&f.backends, &f.image, "  The MAN carrying a   blue backpack ", &Config::default());
    // Rewrites and grounding are keyed on the normalized query too.
    assert!(seg.is_ok(), "{:?}", seg.err().map(|e| e.error));
}

#[test]
fn scenario_files_resolve_relative_to_their_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario(&backpack_scene(Fault::None), &dir.path().join("s")).unwrap();
    assert!(Scenario::load(&dir.path().join("s/scenario.json")).is_ok());
    let err = Scenario::load(Path::new("/nonexistent/scenario")).err().unwrap();
    assert!(matches!(err, BackendError::Scenario(_)));
}
