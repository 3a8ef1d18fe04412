use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn xpir(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xpir"))
        .current_dir(dir)
        .env_remove("XPIR_ONTOLOGY")
        .env_remove("XPIR_PROFILES")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Generates a small corpus under `dir/corpus` and indexes it into `dir/index.xpir`.
fn corpus_and_index(dir: &Path) -> PathBuf {
    let onto = fixture("cs_ontology.json");
    let config = serde_json::json!({
        "ontology": onto,
        "out_dir": "corpus",
        "corpus": {"documents": 8, "queries": 3}
    });
    fs::write(dir.join("gen.json"), config.to_string()).unwrap();
    let o = xpir(dir, &["gen", "corpus", "gen.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("corpus/qrels.txt").is_file());
    assert!(dir.join("corpus/queries.json").is_file());
    let o = xpir(
        dir,
        &[
            "--ontology",
            onto.to_str().unwrap(),
            "index",
            "build",
            "corpus/docs",
            "index.xpir",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("indexed 8 documents"));
    dir.join("index.xpir")
}

#[test]
fn ontology_check_prints_weighting() {
    let dir = tempfile::tempdir().unwrap();
    let o = xpir(
        dir.path(),
        &["ontology", "check", fixture("generic_7class.json").to_str().unwrap()],
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("Δ = 0.004444"), "{out}");
    assert!(out.contains("Coef_AVG = 3.142857"));
    assert!(out.contains("W_AVG = 0.142857"));
    assert!(out.contains("granule"));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = xpir(dir.path(), &["search"]);
    assert_eq!(o.status.code(), Some(1));
    let o = xpir(dir.path(), &["index", "build", "a", "b"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--ontology"));
    let o = xpir(dir.path(), &["ontology", "check", "missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert_eq!(xpir(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn search_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let index = corpus_and_index(d);
    let onto = fixture("cs_ontology.json");
    let onto = onto.to_str().unwrap();
    let index = index.to_str().unwrap();

    let o = xpir(
        d,
        &[
            "--ontology",
            onto,
            "search",
            index,
            "--user",
            "bob",
            "--concept",
            "sorting",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown user"));

    let o = xpir(d, &["--ontology", onto, "profile", "create", "bob"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = xpir(d, &["--ontology", onto, "profile", "create", "bob"]);
    assert_eq!(o.status.code(), Some(2));

    let o = xpir(
        d,
        &[
            "--ontology",
            onto,
            "search",
            index,
            "--user",
            "bob",
            "--concept",
            "sorting",
            "-k",
            "3",
            "--json",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let resp: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(resp["results"].as_array().unwrap().len() <= 3);

    let o = xpir(d, &["--ontology", onto, "profile", "show", "bob"]);
    let profile: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(profile["weights"]["sorting"].as_f64().unwrap() > 1.0 / 43.0);
    assert_eq!(profile["history"].as_array().unwrap().len(), 1);

    let o = xpir(
        d,
        &[
            "--ontology",
            onto,
            "search",
            index,
            "--no-profile",
            "--query",
            "hashing",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("rank"));

    let o = xpir(
        d,
        &["--ontology", onto, "search", index, "--no-profile", "--query", "zzz"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no concepts"));
}

#[test]
fn index_build_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let first = fs::read(corpus_and_index(d)).unwrap();
    let onto = fixture("cs_ontology.json");
    let o = xpir(
        d,
        &[
            "--ontology",
            onto.to_str().unwrap(),
            "index",
            "build",
            "corpus/docs",
            "again.xpir",
        ],
    );
    assert!(o.status.success());
    assert_eq!(first, fs::read(d.join("again.xpir")).unwrap());
}

#[test]
fn eval_run_twice_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = |out: &str| {
        serde_json::json!({
            "ontology": fixture("cs_ontology.json"),
            "output": out,
            "text_output": format!("{out}.txt"),
        })
        .to_string()
    };
    fs::write(d.join("a.json"), config("a.csv")).unwrap();
    fs::write(d.join("b.json"), config("b.csv")).unwrap();
    let a = xpir(d, &["eval", "run", "a.json"]);
    let b = xpir(d, &["eval", "run", "b.json"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(b.status.success());
    let csv = fs::read(d.join("a.csv")).unwrap();
    assert!(!csv.is_empty());
    assert_eq!(csv, fs::read(d.join("b.csv")).unwrap());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(d.join("a.csv.txt")).unwrap(), a.stdout);
    assert!(stdout(&a).contains("0.426"));
}

#[test]
fn serve_rejects_missing_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = serde_json::json!({
        "listen": "127.0.0.1:0",
        "ontology": fixture("cs_ontology.json"),
        "index": "missing.xpir",
        "profiles": ".",
    });
    fs::write(d.join("serve.json"), config.to_string()).unwrap();
    let o = xpir(d, &["serve", "serve.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.xpir"));
}
