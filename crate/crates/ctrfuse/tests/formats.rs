use std::path::{Path, PathBuf};

use ctrfuse::commands::{cmd_preprocess, read, CACHE_FILE, STATS_FILE};
use ctrfuse::config::{ConfigArgs, DataKind, RunConfig};
use ctrfuse::tsv::{parse_tsv, TsvSchema};
use ctrfuse::{cache, document, CliError};
use ctrfuse_core::architecture::{discretize, Metadata, Variant};
use ctrfuse_core::{
    preset, ComponentGraph, ConnectionParams, Error, FieldSchema, Mode, OpSet, OperationParams,
    PresetKind, Supernet, SupernetConfig,
};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/criteo_100.tsv")
}

fn write_lines(dir: &Path, lines: &[String]) -> PathBuf {
    let path = dir.join("input.tsv");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn criteo_line(columns: usize) -> String {
    let mut cols = vec!["1".to_string()];
    cols.extend((1..columns).map(|i| {
        if i <= 13 {
            i.to_string()
        } else {
            format!("{i:x}")
        }
    }));
    cols.join("\t")
}

#[test]
fn tsv_empty_fields_are_missing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cols: Vec<String> = criteo_line(40).split('\t').map(str::to_string).collect();
    cols[2] = String::new();
    cols[20] = String::new();
    let path = write_lines(dir.path(), &[cols.join("\t")]);
    let rec = &parse_tsv(&path, TsvSchema::CRITEO).unwrap()[0];
    assert_eq!(rec.label, 1);
    assert_eq!(rec.numeric[0], Some(1.0));
    assert_eq!(rec.numeric[1], None);
    assert_eq!(rec.categorical[20 - 14], None);
    assert_eq!(rec.categorical.len(), 26);
}

#[test]
fn tsv_column_count_is_strict() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_lines(
        dir.path(),
        &[criteo_line(40), criteo_line(40), criteo_line(39)],
    );
    match parse_tsv(&path, TsvSchema::CRITEO) {
        Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let err = parse_tsv(&path, TsvSchema::CRITEO).unwrap_err();
    assert!(err.to_string().contains(":3:"), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert!(matches!(
        parse_tsv(dir.path().join("absent.tsv"), TsvSchema::CRITEO),
        Err(CliError::Io { .. })
    ));
}

fn preprocess_config(out: &Path) -> RunConfig {
    RunConfig::from_args(&ConfigArgs {
        data_kind: Some(DataKind::CriteoTsv),
        input: Some(fixture()),
        out: Some(out.to_path_buf()),
        ..ConfigArgs::default()
    })
    .unwrap()
}

#[test]
fn preprocess_fixture_stats_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let records = parse_tsv(fixture(), TsvSchema::CRITEO).unwrap();
    assert_eq!(records.len(), 100);
    let stats = cmd_preprocess(&preprocess_config(dir.path())).unwrap();
    assert_eq!(stats.samples, 100);
    assert_eq!(stats.fields, 39);

    let text = read(&dir.path().join(CACHE_FILE)).unwrap();
    let pre = cache::from_json(&text, "cache").unwrap();
    assert_eq!(pre.train.len() + pre.val.len() + pre.test.len(), 100);
    let labels: Vec<u8> = [&pre.train, &pre.val, &pre.test]
        .iter()
        .flat_map(|d| d.labels().to_vec())
        .collect();
    let mean = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / labels.len() as f64;
    assert!((stats.positive_ratio - mean).abs() < 1e-9);
    let raw_mean = records.iter().map(|r| f64::from(r.label)).sum::<f64>() / 100.0;
    assert!((stats.positive_ratio - raw_mean).abs() < 1e-9);

    let on_disk: cache::DatasetStats =
        serde_json::from_str(&read(&dir.path().join(STATS_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, stats);
}

#[test]
fn preprocess_rerun_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_preprocess(&preprocess_config(a.path())).unwrap();
    cmd_preprocess(&preprocess_config(b.path())).unwrap();
    for name in [CACHE_FILE, STATS_FILE] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let text = read(&a.path().join(CACHE_FILE)).unwrap();
    let pre = cache::from_json(&text, "cache").unwrap();
    let info = cache::CacheInfo {
        transform: "criteo",
        log_base: Default::default(),
        seed: 0,
    };
    assert_eq!(cache::to_json(&pre, info), text);
}

fn searched(n: usize, with_s0: bool, variant: Variant) -> ctrfuse_core::ArchitectureDescriptor {
    let g = ComponentGraph::new(n, with_s0).unwrap();
    let mut alpha = ConnectionParams::init(&g);
    for (k, (from, to)) in g.valid_edges().into_iter().enumerate() {
        alpha
            .set(from, to, if k % 3 == 0 { -0.2 } else { 0.4 })
            .unwrap();
    }
    let mut beta = OperationParams::init(&g);
    for c in 0..beta.columns() {
        beta.set_column(c, core::array::from_fn(|o| ((c + 2 * o) % 5) as f64 * 0.3));
    }
    let meta = Metadata {
        seed: 4,
        dataset: "unit".into(),
        stage: "oneshot".into(),
    };
    discretize(&g, &alpha, &beta, variant, OpSet::all(), meta).unwrap()
}

#[test]
fn documents_round_trip() {
    for variant in [Variant::Soft, Variant::Hard] {
        for with_s0 in [false, true] {
            let desc = searched(2, with_s0, variant);
            let text = document::to_json(&desc, Some("abc"));
            let (back, doc) = document::from_json(&text, "doc").unwrap();
            assert_eq!(back, desc);
            assert_eq!(doc.metadata.config_hash.as_deref(), Some("abc"));
            assert_eq!(document::to_json(&back, Some("abc")), text);
        }
    }
    for kind in [PresetKind::Parallel, PresetKind::Stacked] {
        let desc = preset(kind, 3).unwrap();
        assert_eq!(
            document::from_json(&document::to_json(&desc, None), "doc")
                .unwrap()
                .0,
            desc
        );
    }
}

const HAND_WRITTEN: &str = r#"{
  "format": "ctrfuse-architecture",
  "version": 1,
  "n": 1,
  "with_s0": false,
  "components": [
    {"id": 0, "name": "E", "kind": "embedding", "level": 0},
    {"id": 1, "name": "S1", "kind": "cross", "level": 1},
    {"id": 2, "name": "D1", "kind": "deep", "level": 1},
    {"id": 3, "name": "H", "kind": "output", "level": 2}
  ],
  "edges": [{"from": 0, "to": 2}, {"from": 2, "to": 3}],
  "operations": [
    {"component": 1, "op": "ADD"},
    {"component": 2, "op": "ADD"},
    {"component": 3, "probabilities": {"ADD": 0.25, "PROD": 0.25, "CONCAT": 0.25, "ATT": 0.25}}
  ],
  "metadata": {"seed": 0}
}"#;

#[test]
fn hand_written_document_loads_and_runs() {
    let (desc, _) = document::from_json(HAND_WRITTEN, "hand.json").unwrap();
    assert_eq!(desc.num_edges(), 2);
    assert_eq!(desc.dead_components(), vec![1]);
    let schema = FieldSchema::uniform(3, 5, 4).unwrap();
    for mode in [Mode::RetrainSoft, Mode::RetrainHard] {
        let cfg = SupernetConfig {
            n: 1,
            with_s0: false,
            mode,
            op_set: OpSet::all(),
        };
        let net = Supernet::new(cfg, schema.clone(), Some(desc.clone()), 1).unwrap();
        let probs = net.predict(&[0, 1, 2, 4, 3, 0], 2).unwrap();
        assert_eq!(probs.len(), 2);
        assert!(probs.iter().all(|p| p.is_finite() && *p > 0.0 && *p < 1.0));
    }
}

#[test]
fn level_violations_are_rejected() {
    // S1 and D1 share a level.
    let bad = HAND_WRITTEN.replace(r#"{"from": 0, "to": 2}"#, r#"{"from": 1, "to": 2}"#);
    let err = document::from_json(&bad, "bad.json").unwrap_err();
    assert!(
        matches!(
            err,
            CliError::Core(Error::LevelConstraint { from: 1, to: 2 })
        ),
        "{err:?}"
    );
    assert_eq!(err.exit_code(), 3);
    let backwards = HAND_WRITTEN.replace(r#"{"from": 2, "to": 3}"#, r#"{"from": 3, "to": 2}"#);
    assert!(matches!(
        document::from_json(&backwards, "bad.json"),
        Err(CliError::Core(Error::LevelConstraint { .. }))
    ));
}

#[test]
fn schema_errors_name_the_offending_path() {
    let cases = [
        (
            HAND_WRITTEN.replace(r#""op": "ADD"}"#, r#""op": "MAX"}"#),
            "operations[0].op",
        ),
        (
            HAND_WRITTEN.replace(r#""level": 2"#, r#""level": 5"#),
            "components[3]",
        ),
        (
            HAND_WRITTEN.replace(r#""from": 0"#, r#""from": "E""#),
            "edges[0].from",
        ),
        (
            HAND_WRITTEN.replace(r#""version": 1"#, r#""version": 7"#),
            "version",
        ),
        (
            HAND_WRITTEN.replace(r#""with_s0": false"#, r#""with_s0": false, "extra": 1"#),
            "extra",
        ),
        (
            HAND_WRITTEN.replace(r#"{"component": 1, "op": "ADD"},"#, ""),
            "operations",
        ),
    ];
    for (text, at) in cases {
        match document::from_json(&text, "doc.json") {
            Err(e @ CliError::Schema { .. }) => {
                assert!(e.to_string().contains(at), "expected {at} in {e}");
                assert_eq!(e.exit_code(), 3);
            }
            other => panic!("expected a schema error at {at}, got {other:?}"),
        }
    }
}

#[test]
fn dot_export_lists_nodes_and_edges() {
    let desc = preset(PresetKind::Stacked, 1).unwrap();
    let dot = document::export_dot(&desc);
    let nodes = dot
        .lines()
        .filter(|l| l.trim_start().starts_with('c') && l.contains("[label="))
        .count();
    assert_eq!(nodes, 5);
    let edges = dot.lines().filter(|l| l.contains("->")).count();
    assert_eq!(edges, desc.num_edges());
    assert_eq!(document::export_dot(&desc), dot);
    let dashed = dot.lines().filter(|l| l.contains("style=dashed")).count();
    assert_eq!(dashed, desc.dead_components().len());

    let soft = searched(2, true, Variant::Soft);
    assert_eq!(
        document::export_dot(&soft)
            .lines()
            .filter(|l| l.contains("->"))
            .count(),
        soft.num_edges()
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(
        &path,
        r#"{"n": 4, "lr": 0.01, "seed": 9, "mode": "hard", "synthetic-noise": 0.2}"#,
    )
    .unwrap();
    let flags = ConfigArgs {
        config: Some(path.clone()),
        n: Some(2),
        ..ConfigArgs::default()
    };
    let cfg = flags.resolve().unwrap();
    assert_eq!(cfg.n, 2);
    assert_eq!(cfg.lr, 0.01);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.synthetic.noise, 0.2);
    assert_eq!(cfg.batch_size, 4096);

    std::fs::write(&path, r#"{"n": 4, "learning-rate": 0.01}"#).unwrap();
    let err = ConfigArgs {
        config: Some(path),
        ..ConfigArgs::default()
    }
    .resolve()
    .unwrap_err();
    assert!(err.to_string().contains("learning-rate"), "{err}");
}

#[test]
fn config_hash_ignores_location_and_workers() {
    let base = RunConfig::from_args(&ConfigArgs::default()).unwrap();
    let mut moved = base.clone();
    moved.out = PathBuf::from("elsewhere");
    moved.jobs = 8;
    moved.timing = true;
    assert_eq!(base.hash(), moved.hash());
    moved.lr = 0.5;
    assert_ne!(base.hash(), moved.hash());
}

#[test]
fn invalid_flags_are_input_errors() {
    for args in [
        ConfigArgs {
            ops: Some("ADD,MAX".into()),
            ..ConfigArgs::default()
        },
        ConfigArgs {
            lr: Some(-1.0),
            ..ConfigArgs::default()
        },
        ConfigArgs {
            log_base: Some("ten".into()),
            ..ConfigArgs::default()
        },
        ConfigArgs {
            n: Some(0),
            ..ConfigArgs::default()
        },
    ] {
        let err = RunConfig::from_args(&args).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }
}
