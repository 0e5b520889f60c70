use std::path::Path;
use std::process::{Command, Output};

fn prevmap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prevmap"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "seed = 5\n\
[mesh]\ninterior_max_edge = 0.6\nexterior_max_edge = 2.5\n\
[model]\nnum_samples = 100\n\
[sim]\nn_clusters = 150\nlattice_size = 40\n\
[functionals]\npoints_per_area = 20\n";

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 1\n[mesh]\nbogus = 3\n").unwrap();
    let o = prevmap(&["config", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn invalid_value_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "[mesh]\ninterior_max_edge = -1.0\n",
    )
    .unwrap();
    let o = prevmap(&["fit", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mesh.interior_max_edge"), "{}", stderr(&o));
}

#[test]
fn missing_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = prevmap(&["run", "--config", "absent.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_without_inputs_lists_them() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = prevmap(&["report", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing report inputs"), "{}", stderr(&o));
}

#[test]
fn config_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 9\n").unwrap();
    let o = prevmap(&["config", "--config", "c.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9"));
    assert!(text.contains("interior_max_edge"));
}

#[test]
fn full_run_writes_maps_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = prevmap(&["run", "--config", "c.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("output");
    for f in [
        "survey.csv",
        "direct.csv",
        "bym_areas.csv",
        "spde_areas.csv",
        "spde_field_grid.csv",
        "excursions.csv",
        "map_excursions.svg",
        "map_excursions.pgm",
        "map_median.pgm",
        "config.resolved.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let svg = std::fs::read_to_string(out.join("map_excursions.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="legend""#).count(), 3);
    for word in ["above", "below", "indeterminate"] {
        assert!(svg.contains(word), "legend lacks {word}");
    }
    let pgm = std::fs::read(out.join("map_excursions.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));

    // The resolved config reproduces the run.
    let resolved = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 5"));

    // Re-running a later stage reuses stored samples.
    let before = std::fs::read(out.join("spde_areas.csv")).unwrap();
    let o = prevmap(&["areas", "--config", "c.toml"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("spde_areas.csv")).unwrap(), before);
}

#[test]
fn bad_thread_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_prevmap"))
        .args(["config", "--config", "c.toml"])
        .current_dir(dir.path())
        .env("PREVMAP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
