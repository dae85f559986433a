//! End-to-end smoke test for the command-line binary: generate a tiny
//! corpus, train, evaluate, recommend, gradient-check, and dump the
//! learned intentions, all through the real executable.

use std::path::Path;
use std::process::{Command, Output};

fn otrec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otrec"))
}

fn run(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("failed to spawn the binary");
    assert!(
        output.status.success(),
        "command {:?} failed with {}\nstdout:\n{}\nstderr:\n{}",
        cmd,
        output.status,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    output
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn full_command_flow() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.ckpt");

    // generate: scale comes from a key=value config file
    let gen_cfg = dir.path().join("gen.cfg");
    std::fs::write(
        &gen_cfg,
        "n_users=60\nn_home_pois=40\nn_out_pois=30\nk_true=3\nhome_clusters=3\n",
    )
    .expect("write config");
    run(otrec()
        .arg("gen-data")
        .args(["--config"])
        .arg(&gen_cfg)
        .arg("--out")
        .arg(&data)
        .args(["--seed", "11"]));
    assert!(data.join("pois.tsv").is_file());
    assert!(data.join("checkins.tsv").is_file());

    // train: flags override the defaults
    let train_out = run(otrec()
        .arg("train")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt)
        .args(["--d", "8", "--k-topics", "3", "--ntm-hidden", "8"])
        .args(["--epochs", "2", "--batch-size", "16", "--seed", "11"]));
    assert!(ckpt.is_file(), "train must write the checkpoint");
    let train_log = stdout(&train_out);
    assert!(
        train_log.lines().count() >= 3,
        "expected a header plus one line per epoch, got:\n{train_log}"
    );

    // evaluate: comparison table for a subset of models
    let report_path = dir.path().join("report.txt");
    let eval_out = run(otrec()
        .arg("evaluate")
        .arg("--data")
        .arg(&data)
        .arg("--ckpt")
        .arg(&ckpt)
        .args(["--models", "full,top", "--k", "5,10", "--repeats", "1"])
        .arg("--out")
        .arg(&report_path));
    let table = stdout(&eval_out);
    for needle in ["full", "top", "Rec@5", "Rec@10", "MAP"] {
        assert!(table.contains(needle), "report lacks {needle:?}:\n{table}");
    }
    let written = std::fs::read_to_string(&report_path).expect("report file");
    assert_eq!(written, table, "--out must receive the same report");

    // recommend: raw home-POI ids for a fresh user (generator numbers
    // home POIs from 10000)
    let visits = dir.path().join("visits.tsv");
    let lines: String = (0..6)
        .map(|t| format!("42\t{t}\t{}\n", 10_000 + t % 5))
        .collect();
    std::fs::write(&visits, lines).expect("write visits");
    let rec_out = run(otrec()
        .arg("recommend")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--user-checkins")
        .arg(&visits)
        .args(["--k", "5"]));
    let recs = stdout(&rec_out);
    let rows: Vec<&str> = recs.lines().collect();
    assert_eq!(rows[0], "user\trank\tpoi\tscore");
    assert_eq!(rows.len(), 6, "header plus five ranked rows:\n{recs}");
    assert!(
        rows[1].starts_with("42\t1\t100000"),
        "recommendations must be raw out-of-town ids (numbered from 1000000):\n{recs}"
    );

    // gradcheck: the report ends with its verdict
    let gc_out = run(otrec()
        .arg("gradcheck")
        .args(["--eps", "1e-5", "--tol", "1e-4"]));
    let gc = stdout(&gc_out);
    assert!(
        gc.trim_end().ends_with("ok"),
        "gradcheck should report ok:\n{gc}"
    );

    // dump-intentions: one line per intention, then per-user mixtures
    let dump_out = run(otrec()
        .arg("dump-intentions")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .args(["--top", "3"]));
    let dump = stdout(&dump_out);
    for row in 0..3 {
        assert!(
            dump.contains(&format!("intention {row}\t")),
            "missing intention row {row}:\n{dump}"
        );
    }
    assert!(
        dump.contains("user\tdominant\tmixture"),
        "missing per-user mixture section:\n{dump}"
    );

    // config typos must fail loudly instead of being ignored
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "n_userz=10\n").expect("write config");
    let bad = otrec()
        .arg("gen-data")
        .arg("--config")
        .arg(&bad_cfg)
        .arg("--out")
        .arg(dir.path().join("unused"))
        .output()
        .expect("spawn");
    assert!(
        !bad.status.success(),
        "unknown config keys must be rejected"
    );
    assert!(
        String::from_utf8_lossy(&bad.stderr).contains("unknown key"),
        "error should name the problem"
    );
}

/// The recommend path keeps raw ids stable: two runs over the same
/// checkpoint and input produce identical bytes.
#[test]
fn recommend_is_deterministic() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.ckpt");
    let gen_cfg = dir.path().join("gen.cfg");
    std::fs::write(
        &gen_cfg,
        "n_users=60\nn_home_pois=40\nn_out_pois=30\nk_true=3\nhome_clusters=3\n",
    )
    .expect("write config");
    run(otrec()
        .arg("gen-data")
        .arg("--config")
        .arg(&gen_cfg)
        .arg("--out")
        .arg(&data)
        .args(["--seed", "7"]));
    run(otrec()
        .arg("train")
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt)
        .args(["--d", "8", "--k-topics", "3", "--ntm-hidden", "8"])
        .args(["--epochs", "1", "--batch-size", "16", "--seed", "7"]));

    let visits = dir.path().join("visits.tsv");
    std::fs::write(
        &visits,
        "1\t0\t10001\n1\t1\t10002\n1\t2\t10001\n1\t3\t10003\n1\t4\t10002\n",
    )
    .expect("write visits");
    let score = |path: &Path| {
        stdout(&run(otrec()
            .arg("recommend")
            .arg("--ckpt")
            .arg(path)
            .arg("--user-checkins")
            .arg(&visits)
            .args(["--k", "10"])))
    };
    assert_eq!(score(&ckpt), score(&ckpt));
}
