use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use granular::dsmc::Frame;
use granular::harness::{self, emit_report, io, ExperimentConfig, Mode};
use granular::observables::anchors;
use granular::operator::QuadratureSpec;
use granular::rescale::Direction;
use granular::Error;

fn run_in(mut cfg: ExperimentConfig, dir: &Path) -> harness::RunReport {
    cfg.output.directory = dir.to_path_buf();
    harness::execute(&cfg).unwrap()
}

fn small_selfsim() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Mode::Selfsim);
    c.numerics.particles = 20_000;
    c.numerics.t_final = 6.0;
    c.numerics.cadence = 0.5;
    c.analysis.stationarity_times = [5.0, 6.0];
    c
}

fn small_qcheck3() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Mode::Qcheck);
    c.physics.dimension = 3;
    c.numerics.quadrature = QuadratureSpec::uniform(6);
    c.numerics.quadrature.velocity_order = 6;
    c.numerics.grid.points = 25;
    c.operator.probes = 3;
    c.operator.weak_order = 6;
    c.operator.spreading_order = 6;
    c
}

fn raw_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| n.ends_with(".csv") || n == io::METADATA_FILE || n == io::CONFIG_FILE)
        .collect();
    names.sort();
    names
}

#[test]
fn same_seed_reproduces_every_raw_file_bit_for_bit() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_selfsim();
    let ra = run_in(cfg.clone(), a.path());
    let rb = run_in(cfg.clone(), b.path());
    assert_eq!(ra.config_hash, rb.config_hash);
    let names = raw_files(a.path());
    assert!(names.iter().any(|n| n.starts_with("hist_t")), "{names:?}");
    assert_eq!(names, raw_files(b.path()));
    for n in names.iter().filter(|n| *n != io::CONFIG_FILE) {
        assert_eq!(fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap(), "{n} differs");
    }
    let mut other = cfg;
    other.seed = 2;
    run_in(other, c.path());
    assert_ne!(fs::read(a.path().join(io::MOMENTS_FILE)).unwrap(), fs::read(c.path().join(io::MOMENTS_FILE)).unwrap());
}

#[test]
fn report_is_rebuilt_from_raw_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_in(small_selfsim(), dir.path());
    let elsewhere = tempfile::tempdir().unwrap();
    let again = emit_report(dir.path(), Some(elsewhere.path())).unwrap();
    // Debug text so that NaN values compare equal.
    assert_eq!(format!("{:?}", first.checks), format!("{:?}", again.checks));
    assert_eq!(first.observations, again.observations);
    assert_eq!(first.config_hash, again.config_hash);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(elsewhere.path().join(io::REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    for c in json["checks"].as_array().unwrap() {
        for key in ["check", "pass", "value", "tolerance", "paper_ref"] {
            assert!(c.get(key).is_some(), "{key} missing in {c}");
        }
    }
    assert!(fs::read_to_string(elsewhere.path().join(io::SUMMARY_FILE)).unwrap().contains("checks passed"));
}

#[test]
fn every_csv_carries_the_config_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_selfsim();
    cfg.seed = 7;
    run_in(cfg.clone(), dir.path());
    let hash = cfg.hash();
    for n in raw_files(dir.path()).into_iter().filter(|n| n.ends_with(".csv")) {
        let text = fs::read_to_string(dir.path().join(&n)).unwrap();
        assert!(text.contains(&format!("# config_hash={hash}")), "{n}");
        assert!(text.contains("# seed=7"), "{n}");
        assert!(text.starts_with("# schema_version=1"), "{n}");
    }
    let plot = fs::read_to_string(dir.path().join(io::PLOT_TAIL_FILE)).unwrap();
    assert!(plot.contains(&hash) && plot.contains("r[ok] ** 2"));
}

#[test]
fn empty_directory_lists_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    match emit_report(dir.path(), None) {
        Err(Error::MissingInputs(files)) => assert!(files.iter().any(|f| f.ends_with(io::CONFIG_FILE)), "{files:?}"),
        other => panic!("expected missing inputs, got {other:?}"),
    }
    io::write_json(&dir.path().join(io::CONFIG_FILE), &small_selfsim()).unwrap();
    match emit_report(dir.path(), None) {
        Err(Error::MissingInputs(files)) => {
            for expected in [io::MOMENTS_FILE, io::METADATA_FILE, "hist_t*.csv"] {
                assert!(files.iter().any(|f| f.ends_with(expected)), "{expected} not in {files:?}");
            }
        }
        other => panic!("expected missing inputs, got {other:?}"),
    }
}

#[test]
fn haff_fit_and_transfer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut haff = ExperimentConfig::new(Mode::Haff);
    haff.numerics.particles = 5_000;
    haff.numerics.t_final = 101f64.ln();
    haff.numerics.cadence = 0.1;
    haff.numerics.frame = Some(Frame::Rescaled);
    let r = run_in(haff, dir.path());
    let slope = r.find("haff_slope").unwrap().value;
    assert!(slope < -1.0 && slope > -3.0, "{slope}");
    let script = fs::read_to_string(dir.path().join(io::PLOT_ENERGY_FILE)).unwrap();
    assert!(script.contains("log1p") && script.contains(&format!("REPORTED_SLOPE = {slope}")));
    let t = io::read_moments(&dir.path().join(io::TRANSFERRED_FILE)).unwrap();
    assert_eq!(t.series.frame, Frame::Original);
    assert!(t.source_time.is_some());

    let out = tempfile::tempdir().unwrap();
    let mut tr = ExperimentConfig::new(Mode::Transfer);
    tr.analysis.input = Some(dir.path().join(io::MOMENTS_FILE));
    let r = run_in(tr.clone(), out.path());
    assert!(r.find("transfer_round_trip").unwrap().pass);

    tr.analysis.direction = Direction::FToG;
    tr.output.directory = tempfile::tempdir().unwrap().path().to_path_buf();
    match harness::execute(&tr) {
        Err(Error::Frame { expected, found }) => assert_eq!((expected, found), ("original", "rescaled")),
        other => panic!("expected a frame error, got {other:?}"),
    }
}

#[test]
fn reports_cover_every_anchor() {
    let mut seen = BTreeSet::new();
    let mut add = |r: &harness::RunReport| seen.extend(r.checks.iter().map(|c| c.paper_ref.clone()));
    let d = tempfile::tempdir().unwrap();
    let mut sim = ExperimentConfig::new(Mode::Simulate);
    sim.numerics.particles = 5_000;
    add(&run_in(sim, &d.path().join("sim")));
    let mut ss = small_selfsim();
    ss.numerics.initial = granular::dsmc::InitialCondition::TwoBump { offset: vec![1.5, 0.0, 0.0], width: 0.5 };
    let selfsim_dir = d.path().join("selfsim");
    add(&run_in(ss, &selfsim_dir));
    let mut haff = ExperimentConfig::new(Mode::Haff);
    haff.analysis.input = Some(selfsim_dir.join(io::MOMENTS_FILE));
    haff.analysis.haff_window = [5.0, 300.0];
    add(&run_in(haff, &d.path().join("haff")));
    let mut tr = ExperimentConfig::new(Mode::Transfer);
    tr.analysis.input = Some(selfsim_dir.join(io::MOMENTS_FILE));
    add(&run_in(tr, &d.path().join("transfer")));
    add(&run_in(small_qcheck3(), &d.path().join("qcheck")));
    for a in anchors::ALL {
        assert!(seen.contains(a), "anchor {a} not cited; saw {seen:?}");
    }
}

#[test]
fn stale_outputs_are_cleared_but_foreign_files_kept() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("hist_t0099.0000.csv"), "stale").unwrap();
    fs::write(dir.path().join("notes.txt"), "mine").unwrap();
    let mut sim = ExperimentConfig::new(Mode::Simulate);
    sim.numerics.particles = 2_000;
    run_in(sim, dir.path());
    assert!(!dir.path().join("hist_t0099.0000.csv").exists());
    assert_eq!(fs::read_to_string(dir.path().join("notes.txt")).unwrap(), "mine");
}
