mod common;

use std::path::Path;

use proptest::prelude::*;
use sparsenas::bayes::{SearchConfig, TaskConfig};
use sparsenas::graph::{graph_forward, OpKind};
use sparsenas::io::idx::{encode_idx, parse_idx, read_images, read_labels, Idx};
use sparsenas::io::{
    config_hash, gen_synthetic_cell_task, gen_synthetic_dag_task, load_mnist_idx, parse_config_str, read_metrics_csv,
    to_dot, write_metrics_csv, MetricsRow, MNIST_FILES,
};
use sparsenas::nn::{Activation, Targets};
use sparsenas::Error;

fn origin() -> &'static Path {
    Path::new("inline.json")
}

proptest! {
    #[test]
    fn idx_round_trips(dims in prop::collection::vec(1usize..6, 1..4), fill in any::<u8>()) {
        let n: usize = dims.iter().product();
        let data: Vec<u8> = (0..n).map(|i| fill.wrapping_add(i as u8)).collect();
        let idx = Idx { dims, data };
        let bytes = encode_idx(&idx).unwrap();
        prop_assert_eq!(parse_idx(&bytes, origin()).unwrap(), idx);
    }
}

fn parse_reason(e: Error) -> String {
    match e {
        Error::Parse { reason, .. } => reason,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn truncated_idx_reports_the_byte_offset() {
    let idx = Idx { dims: vec![2, 3], data: vec![1; 6] };
    let mut bytes = encode_idx(&idx).unwrap();
    bytes.truncate(bytes.len() - 2);
    let reason = parse_reason(parse_idx(&bytes, origin()).unwrap_err());
    assert!(reason.contains("byte 16"), "{reason}");

    let reason = parse_reason(parse_idx(&bytes[..6], origin()).unwrap_err());
    assert!(reason.contains("byte 6"), "{reason}");

    let reason = parse_reason(parse_idx(&[0, 0, 9, 1], origin()).unwrap_err());
    assert!(reason.contains("magic"), "{reason}");

    let mut long = encode_idx(&idx).unwrap();
    long.push(0);
    assert!(parse_idx(&long, origin()).is_err());
}

fn write_mnist(dir: &Path, labels: &[u8]) {
    let n = labels.len();
    let images = Idx { dims: vec![n, 2, 3], data: (0..n * 6).map(|i| (i * 37 % 256) as u8).collect() };
    let label_idx = Idx { dims: vec![n], data: labels.to_vec() };
    let mut image_bytes = encode_idx(&images).unwrap();
    image_bytes[3] = 3;
    for (i, name) in MNIST_FILES.iter().enumerate() {
        let bytes = if i % 2 == 0 { image_bytes.clone() } else { encode_idx(&label_idx).unwrap() };
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

#[test]
fn mnist_loader_standardizes_with_training_statistics() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), &[3, 1, 4, 1]);
    let (count, rows, cols, pixels) = read_images(&dir.path().join(MNIST_FILES[0])).unwrap();
    assert_eq!((count, rows, cols, pixels.len()), (4, 2, 3, 24));
    let data = load_mnist_idx(dir.path()).unwrap();
    assert_eq!(data.train.inputs.shape(), &[4, 1, 2, 3]);
    assert_eq!(data.test.labels().unwrap(), &[3, 1, 4, 1]);
    let x = data.train.inputs.data();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
}

#[test]
fn out_of_range_label_is_rejected_with_its_offset() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), &[3, 10, 4]);
    let path = dir.path().join(MNIST_FILES[1]);
    let reason = parse_reason(read_labels(&path, 10).unwrap_err());
    assert!(reason.contains("sample 1") && reason.contains("byte 9"), "{reason}");
    assert!(load_mnist_idx(dir.path()).is_err());
}

#[test]
fn image_file_with_label_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_mnist(dir.path(), &[0, 1]);
    let reason = parse_reason(read_images(&dir.path().join(MNIST_FILES[1])).unwrap_err());
    assert!(reason.contains("magic"), "{reason}");
}

#[test]
fn empty_config_selects_defaults() {
    let loaded = parse_config_str("  \n", origin()).unwrap();
    assert_eq!(loaded.config, SearchConfig::default());
    assert_eq!(loaded.hash, config_hash(&SearchConfig::default()));
    assert_eq!(parse_config_str("{}", origin()).unwrap().hash, loaded.hash);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(
        parse_config_str(r#"{"lambda_w": -1}"#, origin()),
        Err(Error::Config { ref field, .. }) if field == "lambda_w"
    ));
    assert!(matches!(parse_config_str(r#"{"lambda_w": 0}"#, origin()), Err(Error::Config { .. })));
    assert!(matches!(parse_config_str(r#"{"lamda_w": 1}"#, origin()), Err(Error::Parse { .. })));
    assert!(matches!(parse_config_str(r#"{"task": {"nodez": 3}}"#, origin()), Err(Error::Parse { .. })));
    assert!(matches!(parse_config_str("[1, 2]", origin()), Err(Error::Parse { .. })));
    assert!(parse_config_str(r#"{"momentum": 1.0}"#, origin()).is_err());
}

#[test]
fn hash_tracks_every_effective_field() {
    let base = parse_config_str("{}", origin()).unwrap().hash;
    let same = parse_config_str(r#"{"seed": 0, "lambda_w": 0.01}"#, origin()).unwrap().hash;
    assert_eq!(base, same);
    for text in [
        r#"{"seed": 1}"#,
        r#"{"lambda_w": 0.02}"#,
        r#"{"task": {"nodes": 5}}"#,
        r#"{"compress": {"weight_decay": 0.0}}"#,
    ] {
        assert_ne!(parse_config_str(text, origin()).unwrap().hash, base, "{text}");
    }
}

fn row(i: usize) -> MetricsRow {
    MetricsRow {
        iteration: i / 3,
        epoch: i,
        loss: 0.5 / (i + 1) as f64,
        test_error: 0.1 * i as f64,
        alive_edges: 15 - i,
        min_gamma: 1e-3 * i as f64,
        median_gamma: 0.25,
        entropy_pruned: i % 2,
        cascade_pruned: 0,
    }
}

#[test]
fn metrics_csv_has_a_fixed_header_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let rows: Vec<MetricsRow> = (0..5).map(row).collect();
    write_metrics_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "iteration,epoch,loss,test_error,alive_edges,min_gamma,median_gamma,entropy_pruned,cascade_pruned"
    );
    assert_eq!(read_metrics_csv(&path).unwrap(), rows);

    write_metrics_csv(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    assert!(read_metrics_csv(&path).unwrap().is_empty());

    std::fs::write(&path, "epoch,iteration\n1,2\n").unwrap();
    assert!(read_metrics_csv(&path).is_err());
}

fn small_task() -> TaskConfig {
    TaskConfig {
        train_samples: 64,
        test_samples: 16,
        ..TaskConfig::default()
    }
}

#[test]
fn dot_marks_roles_and_pruned_edges() {
    let mut task = gen_synthetic_dag_task(0, &small_task(), Activation::Tanh, 0.0).unwrap();
    task.graph.edges[0].alive = false;
    let dot = to_dot(&task.graph);
    assert!(dot.starts_with("digraph supergraph {"));
    assert!(dot.trim_end().ends_with('}'));
    assert!(dot.contains("(input)") && dot.contains("(output)") && dot.contains("(gate)"));
    assert_eq!(dot.matches(" -> ").count(), task.graph.edges.len());
    assert_eq!(dot.matches("style=dashed").count(), 1);
    assert_eq!(dot.matches(" gate\"").count(), task.graph.gates.len());
}

#[test]
fn synthetic_tasks_are_deterministic_per_seed() {
    let cfg = small_task();
    let a = gen_synthetic_dag_task(4, &cfg, Activation::Tanh, 0.01).unwrap();
    let b = gen_synthetic_dag_task(4, &cfg, Activation::Tanh, 0.01).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    assert_eq!(a.planted, b.planted);
    assert_eq!(a.graph, b.graph);
    let c = gen_synthetic_dag_task(5, &cfg, Activation::Tanh, 0.01).unwrap();
    assert_ne!(a.train, c.train);

    let cells = gen_synthetic_cell_task(4, &cfg, Activation::Tanh, 0.01).unwrap();
    assert_eq!(cells.planted.len(), cfg.cells * a.planted.len());
    assert_eq!(cells.planted[..a.planted.len()], cells.planted[a.planted.len()..]);
}

#[test]
fn noiseless_linear_task_reproduces_the_teacher() {
    let task = gen_synthetic_dag_task(9, &small_task(), Activation::Identity, 0.0).unwrap();
    for split in [&task.train, &task.test] {
        let out = graph_forward(&task.teacher, &split.inputs).unwrap();
        let Targets::Values(y) = &split.targets else { panic!("regression targets") };
        assert_eq!(out.output(&task.teacher).data(), y.data());
    }
    assert_eq!(task.planted.iter().filter(|&&p| p).count(), small_task().planted);
    assert_eq!(task.teacher.alive_count(), small_task().planted);
}

#[test]
fn planting_every_edge_keeps_the_whole_graph() {
    let cfg = TaskConfig { planted: 12, ..small_task() };
    let task = gen_synthetic_dag_task(1, &cfg, Activation::Tanh, 0.0).unwrap();
    assert!(task.planted.iter().all(|&p| p));
    let ops = task.graph.edges.iter().filter(|e| e.op != OpKind::ZeroGateIdentity).count();
    assert_eq!(ops, 12);
    let too_many = TaskConfig { planted: 13, ..small_task() };
    assert!(gen_synthetic_dag_task(1, &too_many, Activation::Tanh, 0.0).is_err());
}
