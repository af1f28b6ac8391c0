use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use gpn::cli::main_with_args;
use gpn::config::ExperimentConfig;
use gpn::formats::{load_model, load_repertoire};
use gpn::Error;

const SMALL: &str = r#"
seed = 4
trials = 10
taus = [0.1, 0.2, 0.5]
ks = [1, 3]
occlusion_rates = [0.02, 0.05]
obstacle_maps = 2
noisy_sigmas = [0.01, 0.05]

[qd]
population = 50
budget = 500

[gpn]
z_dim = 8
epochs = 1
batch_size = 32
generator_steps = 1
hidden = [16, 16]

[bayes_opt]
acquisition_samples = 200

[[scenarios]]
goal = [1.2, 0.0]
wall_min = [0.65, -0.6, 0.0]
wall_max = [0.7, 0.6, 1.0]

[[scenarios]]
goal = [1.6, -0.3]
wall_min = [1.25, -0.9, 0.0]
wall_max = [1.3, 0.3, 0.6]
"#;

fn run(args: &[&str]) -> u8 {
    main_with_args(std::iter::once("gpn").chain(args.iter().copied()))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stage(cmd: &str, cfg: &Path, out: &Path) -> u8 {
    run(&[cmd, "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()])
}

/// One small end-to-end pipeline shared by the tests below.
fn pipeline() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "small.toml", SMALL);
        let out = dir.path().join("out");
        for cmd in ["gen-data", "train", "eval-grid", "eval-obstacles", "compare-baselines"] {
            assert_eq!(stage(cmd, &cfg, &out), 0, "{cmd}");
        }
        dir
    })
    .path()
}

fn out(name: &str) -> String {
    fs::read_to_string(pipeline().join("out").join(name)).unwrap()
}

/// Data lines of an output file (comments dropped).
fn data(name: &str) -> Vec<String> {
    out(name).lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["fly"]), 2);
    assert_eq!(run(&["train", "--config", "x.toml"]), 2);
    assert_eq!(run(&["gen-data", "--config", "x", "--out", "o", "--seed", "abc"]), 2);
}

#[test]
fn config_and_io_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    assert_eq!(stage("gen-data", &dir.path().join("missing.toml"), &o), 4);
    let bad = write_config(dir.path(), "bad.toml", "seed = [");
    assert_eq!(stage("gen-data", &bad, &o), 3);
    let unknown = write_config(dir.path(), "unknown.toml", "sead = 3\n");
    assert_eq!(stage("gen-data", &unknown, &o), 3);
    let invalid = write_config(dir.path(), "invalid.toml", "ks = [0]\n");
    assert_eq!(stage("gen-data", &invalid, &o), 3);
    let no_arm = write_config(dir.path(), "arm.toml", "arm = \"nowhere.toml\"\n");
    assert_eq!(stage("gen-data", &no_arm, &o), 3);
    let plain = write_config(dir.path(), "plain.toml", "");
    assert_eq!(stage("compare-baselines", &plain, &o), 3);
    assert_eq!(stage("train", &plain, &o), 4);
    fs::create_dir_all(&o).unwrap();
    fs::write(o.join("repertoire.txt"), "# gpn-repertoire v1\nmeta\n").unwrap();
    assert_eq!(stage("train", &plain, &o), 5);
    fs::write(o.join("repertoire.txt"), "# gpn-repertoire v7\n").unwrap();
    assert_eq!(stage("train", &plain, &o), 6);
}

#[test]
fn error_classes_map_to_codes() {
    let codes = [
        Error::Config("x".into()).exit_code(),
        Error::Parse { path: "p".into(), line: 1, message: String::new() }.exit_code(),
        Error::Core(gpn_core::Error::EmptyRepertoire).exit_code(),
        Error::Core(gpn_core::Error::DegenerateSample).exit_code(),
    ];
    assert_eq!(codes, [3, 5, 9, 10]);
    assert!(codes.iter().all(|&c| c != 0 && c != 2));
}

#[test]
fn config_parsing() {
    let cfg: ExperimentConfig = toml::from_str(SMALL).unwrap();
    assert_eq!(cfg.qd.population, 50);
    assert_eq!(cfg.qd.novelty_k, ExperimentConfig::default().qd.novelty_k);
    assert_eq!(cfg.scenario_walls().unwrap().len(), 2);
    assert!(toml::from_str::<ExperimentConfig>("[qd]\npopulaton = 3\n").is_err());
    let mut a = cfg.clone();
    assert_eq!(a.hash(), cfg.hash());
    a.seed += 1;
    assert_ne!(a.hash(), cfg.hash());
    assert_eq!(cfg.hash().len(), 16);
    let mut paper = ExperimentConfig::default();
    paper.paper_scale();
    assert_eq!(paper.qd.budget, 150_000);
    assert_eq!(paper.gpn.epochs, 1000);
    assert_eq!(paper.obstacle_maps, 1000);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cfg = ExperimentConfig::load(&dir.join("desk.toml")).unwrap();
    assert_eq!(cfg.scenarios.len(), 4);
    assert_eq!(cfg.arm_model().unwrap(), gpn_core::kinematics::ArmModel::default_arm());
    // The file spells out the built-in defaults apart from the arm path and
    // the scenarios.
    let mut plain = cfg.clone();
    plain.arm = None;
    plain.scenarios.clear();
    assert_eq!(plain, ExperimentConfig::default());
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(stage("gen-data", &cfg, &a), 0);
    assert_eq!(stage("gen-data", &cfg, &b), 0);
    for f in ["repertoire.txt", "landing_histogram.txt", "config.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_outputs() {
    let rep = load_repertoire(&pipeline().join("out/repertoire.txt")).unwrap();
    assert!(!rep.is_empty());
    assert_eq!(rep.meta.evaluations, 500);
    let total: u64 = data("landing_histogram.txt")
        .iter()
        .flat_map(|l| l.split_whitespace().map(|w| w.parse::<u64>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(total as usize, rep.len());
    let cfg: ExperimentConfig = toml::from_str(&out("config.toml")).unwrap();
    assert_eq!(cfg.seed, 4);
    let header = out("repertoire.txt");
    assert!(header.lines().nth(1).unwrap().contains(&format!("config_hash={} seed=4", cfg.hash())));
}

#[test]
fn train_writes_log_and_model() {
    let rep = load_repertoire(&pipeline().join("out/repertoire.txt")).unwrap();
    let n = rep.len();
    let holdout = (n / 10).min(32);
    let iterations = ((n - holdout) / 32.min(n - holdout)).max(1);
    let log = data("training_log.tsv");
    assert_eq!(log[0].split('\t').count(), 7);
    assert_eq!(log.len() - 1, iterations);
    let (gen, disc) = load_model(&pipeline().join("out/model.txt")).unwrap();
    assert_eq!(gen.z_dim, 8);
    assert!(disc.is_some());
}

#[test]
fn eval_grid_outputs() {
    for name in ["gpn", "lookup"] {
        for panel in ["error", "diversity", "harmonic"] {
            let m = data(&format!("grid_{name}_{panel}.txt"));
            assert_eq!(m.len(), 5);
            assert!(m.iter().all(|r| r.split_whitespace().count() == 5));
        }
        assert_eq!(data(&format!("grid_{name}.tsv")).len(), 26);
    }
    // A repeated deterministic throw has no spread.
    for v in data("grid_lookup_diversity.txt").iter().flat_map(|r| r.split_whitespace().map(String::from).collect::<Vec<_>>()) {
        assert!(v.parse::<f64>().unwrap().abs() < 1e-12);
    }
    let summary = data("grid_summary.tsv");
    assert_eq!(summary.len(), 1 + 2 + 2);
    let episodes: Vec<String> = data("grid_episodes.jsonl");
    assert_eq!(episodes.len(), 2 * 25 * 10);
    let v: serde_json::Value = serde_json::from_str(&episodes[0]).unwrap();
    assert_eq!(v["policy"].as_array().unwrap().len(), 15);
    assert_eq!(data("grid_welch.tsv").len(), 2);
}

#[test]
fn eval_obstacles_outputs() {
    for f in ["obstacles_gpn.txt", "obstacles_lookup.txt", "obstacles_diff.txt"] {
        let m = data(f);
        assert_eq!(m.len(), 2, "{f}");
        for v in m.iter().flat_map(|r| r.split_whitespace().map(|w| w.parse::<f64>().unwrap()).collect::<Vec<_>>()) {
            assert!((-1.0..=1.0).contains(&v));
        }
    }
    assert_eq!(data("obstacles_tau_gpn.txt").len(), 3);
    assert_eq!(data("obstacles_tensor.tsv").len(), 1 + 2 * 2 * 2 * 3);
}

#[test]
fn compare_baselines_outputs() {
    let table = data("baselines_table.tsv");
    assert_eq!(table[0], "method\trmse\tdiversity\tcollision_rate\tsuccess");
    let methods: Vec<&str> = table[1..].iter().map(|r| r.split('\t').next().unwrap()).collect();
    assert_eq!(methods, ["gpn", "lookup", "kde", "bayes_opt"]);
    assert!(table[1..].iter().all(|r| r.split('\t').count() == 5));
    assert_eq!(data("baselines_scenarios.tsv").len(), 1 + 2 * 4);
    for i in 0..2 {
        assert_eq!(data(&format!("bayes_opt_history_{i}.tsv")).len(), 1 + 10);
        assert!(out(&format!("scenario_{i}_world.txt")).contains("\nbox "));
    }
}

#[test]
fn every_output_has_a_provenance_header() {
    pipeline();
    let hash = {
        let cfg: ExperimentConfig = toml::from_str(&out("config.toml")).unwrap();
        cfg.hash()
    };
    let mut seen = 0;
    for e in fs::read_dir(pipeline().join("out")).unwrap() {
        let p = e.unwrap().path();
        if p.file_name().unwrap() == "config.toml" {
            continue;
        }
        let text = fs::read_to_string(&p).unwrap();
        let second = text.lines().nth(1).unwrap_or_default();
        assert!(text.starts_with("# gpn-"), "{}", p.display());
        assert!(second.contains(&format!("config_hash={hash} seed=4 gpn-core=")), "{}", p.display());
        seen += 1;
    }
    assert!(seen > 20);
}
