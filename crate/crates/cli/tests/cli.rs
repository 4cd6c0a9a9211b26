use std::path::Path;
use std::process::Command;

use brainfuse::dataio::GeneratorConfig;
use brainfuse::encoders::{GatConfig, VitConfig};
use brainfuse::fusion::FusionVariant;
use brainfuse::pipeline::{ExperimentConfig, ExperimentReport, REPORT_FILE, TABLE_FILE};

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed: 5,
        folds: 2,
        k: 3,
        cohort: GeneratorConfig {
            n_subjects: 16,
            n_sites: 2,
            n_rois: 8,
            volume_side: 16,
            timepoints: 32,
            patch_side: 4,
            seed: 3,
            ..Default::default()
        },
        variants: vec![FusionVariant::Concat, FusionVariant::Dual, FusionVariant::FunctionalOnly],
        ..Default::default()
    };
    c.vit.model = VitConfig { dim: 16, depth: 1, heads: 2, mlp_dim: 32, classes: 2 };
    c.vit.epochs = 2;
    c.fusion.epochs = 3;
    c.fusion.gat = GatConfig { heads: 2, head_dim: 8 };
    for h in [&mut c.fusion.concat, &mut c.fusion.dual] {
        h.heads = 4;
        h.hidden_dim = 8;
    }
    c
}

fn brainfuse(config: &Path, out: &Path, args: &[&str]) -> String {
    let output = Command::new(env!("CARGO_BIN_EXE_brainfuse"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "brainfuse {args:?} failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

#[test]
fn staged_commands_reproduce_the_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let config = dir.path().join("config.json");
    std::fs::write(&config, cfg.to_json()).unwrap();

    let whole = dir.path().join("whole");
    brainfuse(&config, &whole, &["run"]);
    let expected = ExperimentReport::load(&whole.join(REPORT_FILE)).unwrap();

    let staged = dir.path().join("staged");
    brainfuse(&config, &staged, &["generate"]);
    assert!(staged.join("cohort/manifest.json").exists() && staged.join("folds.json").exists());
    for fold in 0..cfg.folds {
        let f = fold.to_string();
        for cmd in ["harmonize", "train-vit", "extract-embeddings", "build-graphs"] {
            brainfuse(&config, &staged, &[cmd, "--fold", &f]);
        }
        for v in &cfg.variants {
            brainfuse(&config, &staged, &["train-fusion", "--variant", v.name(), "--fold", &f]);
            brainfuse(&config, &staged, &["evaluate", "--variant", v.name(), "--fold", &f]);
        }
    }
    let table = brainfuse(&config, &staged, &["report"]);
    assert!(staged.join(TABLE_FILE).exists());
    assert!(table.contains("concat") && table.contains("dual"));
    let got = ExperimentReport::load(&staged.join(REPORT_FILE)).unwrap();
    assert_eq!(got, expected);

    let out = brainfuse(
        &config,
        &staged,
        &["ttest", staged.join(REPORT_FILE).to_str().unwrap(), "--a", "concat", "--b", "functional_only"],
    );
    assert!(out.contains("concat vs functional_only") && out.contains("p = "), "{out}");
}

#[test]
fn functional_only_needs_no_vit() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.variants = vec![FusionVariant::FunctionalOnly];
    let config = dir.path().join("config.json");
    std::fs::write(&config, cfg.to_json()).unwrap();
    let out = dir.path().join("out");
    brainfuse(&config, &out, &["generate"]);
    brainfuse(&config, &out, &["harmonize", "--fold", "0"]);
    brainfuse(&config, &out, &["build-graphs", "--fold", "0"]);
    assert!(!out.join("fold-0/graphs").read_dir().unwrap().any(|e| {
        e.unwrap().file_name().to_string_lossy().contains("structural")
    }));
    brainfuse(&config, &out, &["train-fusion", "--variant", "functional_only", "--fold", "0"]);
    let acc = brainfuse(&config, &out, &["evaluate", "--variant", "functional_only", "--fold", "0"]);
    assert!(acc.contains("accuracy"));
}

#[test]
fn missing_stages_fail_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, tiny_config().to_json()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_brainfuse"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("empty"))
        .args(["harmonize", "--fold", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate"));
}
