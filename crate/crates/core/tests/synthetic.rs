use refseg_core::config::Config;
use refseg_core::eval::{generate_scenarios, run_benchmark, BackendSource, FaultMix};

fn run(mix: &str, count: usize, seed: u64, tweak: impl Fn(&mut Config)) -> refseg_core::eval::Report {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_scenarios(seed, count, &mix.parse::<FaultMix>().unwrap(), &dir.path().join("scenes")).unwrap();
    let mut config = Config { out_dir: dir.path().join("out"), ..Config::default() };
    tweak(&mut config);
    let source = BackendSource::from_config(&config).unwrap();
    run_benchmark(&manifest, &config, &source).unwrap().report
}

#[test]
fn every_fault_is_repaired() {
    let report = run("none=6,under=7,over=7", 20, 7, |_| {});
    for s in &report.samples {
        println!("{} {:?} iou={:.4} verdicts={:?} err={:?}", s.id, s.fault, s.iou, s.verdicts, s.error);
    }
    assert!(report.giou >= 0.95, "gIoU {}", report.giou);
}

fn by_fault(report: &refseg_core::eval::Report) -> Vec<(String, Vec<String>, f64)> {
    report.samples.iter().map(|s| (s.fault.clone().unwrap(), s.verdicts.clone(), s.iou)).collect()
}

#[test]
fn verdicts_match_injected_faults() {
    let report = run("none=6,under=7,over=7", 20, 11, |_| {});
    for (fault, verdicts, _) in by_fault(&report) {
        match fault.as_str() {
            "none" => assert!(verdicts.is_empty()),
            kind => assert!(verdicts.iter().any(|v| v == kind), "{kind}: {verdicts:?}"),
        }
    }
    assert_eq!(report.errors, 0);
}

#[test]
fn refinement_and_selection_ablations() {
    let on = run("under=6,over=6", 12, 5, |_| {});
    let no_opm = run("under=6,over=6", 12, 5, |c| c.opm = false);
    let no_ips = run("under=6,over=6", 12, 5, |c| c.ips = false);
    assert!(on.giou > no_opm.giou, "{} vs {}", on.giou, no_opm.giou);
    assert!(on.giou >= no_ips.giou);
    // Without refinement the injected faults stay in the output.
    assert!(no_opm.samples.iter().all(|s| s.iou < 1.0 && s.verdicts.is_empty()));
}

#[test]
fn misread_query_without_structured_reasoning_scores_lower() {
    let on = run("none=1,under=1", 4, 2, |_| {});
    let off = run("none=1,under=1", 4, 2, |c| c.rpo = false);
    assert_eq!(off.errors, 0);
    assert!(off.giou < on.giou);
}

#[test]
fn generation_is_byte_deterministic() {
    let mix: FaultMix = "none=1,under=2,over=2".parse().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_scenarios(42, 5, &mix, a.path()).unwrap();
    generate_scenarios(42, 5, &mix, b.path()).unwrap();
    let mut files = 0;
    for entry in walk(a.path()) {
        let rel = entry.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
        files += 1;
    }
    assert_eq!(files, 1 + 5 * 7);
    let c = tempfile::tempdir().unwrap();
    generate_scenarios(43, 5, &mix, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("scene-000/image.png")).unwrap(),
        std::fs::read(c.path().join("scene-000/image.png")).unwrap()
    );
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_write_identical_masks() {
    let dir = tempfile::tempdir().unwrap();
    let manifest =
        generate_scenarios(9, 6, &"none=2,under=2,over=2".parse().unwrap(), &dir.path().join("scenes")).unwrap();
    let config = Config { out_dir: dir.path().join("out"), workers: 3, ..Config::default() };
    let source = BackendSource::from_config(&config).unwrap();
    let first = run_benchmark(&manifest, &config, &source).unwrap();
    let second = run_benchmark(&manifest, &config, &source).unwrap();
    assert_ne!(first.dir, second.dir);
    for s in &first.report.samples {
        let m = s.mask.as_ref().unwrap();
        assert_eq!(std::fs::read(first.dir.join(m)).unwrap(), std::fs::read(second.dir.join(m)).unwrap());
        let t1 = refseg_core::trace::Trace::load(&first.dir.join(&s.trace)).unwrap();
        let t2 = refseg_core::trace::Trace::load(&second.dir.join(&s.trace)).unwrap();
        assert_eq!(refseg_core::trace::semantic_diff(&t1, &t2), None);
    }
    assert!(first.dir.join("report.json").is_file() && first.dir.join("report.txt").is_file());
}

#[test]
fn manifest_order_does_not_change_per_sample_iou() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_scenarios(3, 8, &"none=2,under=3,over=3".parse::<FaultMix>().unwrap(), dir.path()).unwrap();
    let mut lines: Vec<String> = std::fs::read_to_string(&manifest).unwrap().lines().map(String::from).collect();
    lines.reverse();
    lines.rotate_left(3);
    let shuffled = dir.path().join("shuffled.jsonl");
    std::fs::write(&shuffled, lines.join("\n") + "\n").unwrap();
    let config = Config { out_dir: dir.path().join("out"), workers: 3, ..Config::default() };
    let source = BackendSource::from_config(&config).unwrap();
    let ious = |m: &std::path::Path| {
        let mut v: Vec<(String, f64)> =
            run_benchmark(m, &config, &source).unwrap().report.samples.iter().map(|s| (s.id.clone(), s.iou)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    assert_eq!(ious(&manifest), ious(&shuffled));
}

#[test]
fn giou_is_the_mean_of_sample_ious() {
    let report = run("none=2,under=2,over=2", 6, 9, |c| c.opm = false);
    let mean = report.samples.iter().map(|s| s.iou).sum::<f64>() / report.samples.len() as f64;
    assert!((report.giou - mean).abs() <= 1e-9);
    let ciou = report.total_intersection as f64 / report.total_union as f64;
    assert!((report.ciou - ciou).abs() <= 1e-12);
}

#[test]
fn a_broken_sample_does_not_sink_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_scenarios(1, 4, &"under=2,over=2".parse::<FaultMix>().unwrap(), dir.path()).unwrap();
    std::fs::write(dir.path().join("scene-002/scenario.json"), "{ not json").unwrap();
    let config = Config { out_dir: dir.path().join("out"), ..Config::default() };
    let run = run_benchmark(&manifest, &config, &BackendSource::from_config(&config).unwrap()).unwrap();
    let report = run.report;
    assert_eq!(report.errors, 1);
    let broken = report.samples.iter().find(|s| s.id == "scene-002").unwrap();
    assert!(broken.error.is_some());
    assert_eq!(broken.iou, 0.0);
    assert!(report.samples.iter().filter(|s| s.id != "scene-002").all(|s| s.error.is_none() && s.iou > 0.9));
    assert!(run.dir.join("report.json").is_file());
}
