use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn stagerank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stagerank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = stagerank(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let docs = [
            (
                "d1",
                "Solar",
                "Solar panels convert sunlight into electricity. They work on roofs.",
            ),
            (
                "d2",
                "Wind",
                "Wind turbines convert moving air into electricity. Farms are offshore.",
            ),
            (
                "d3",
                "Courts",
                "Judges evaluate evidence. Appeals take months.",
            ),
            (
                "d4",
                "Deserts",
                "Deserts receive strong sunlight. Solar farms are common there.",
            ),
            (
                "d5",
                "Prices",
                "Electricity prices rose this year. Demand grew.",
            ),
        ];
        let corpus: String = docs
            .iter()
            .map(|(id, t, b)| {
                format!("{{\"docid\":\"{id}\",\"title\":\"{t}\",\"body\":\"{b}\"}}\n")
            })
            .collect();
        fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();
        fs::write(
            dir.path().join("topics.jsonl"),
            "{\"qid\":\"q1\",\"query\":\"solar electricity\"}\n{\"qid\":\"q2\",\"query\":\"wind turbines\"}\n{\"qid\":\"q3\",\"query\":\"judges appeals\"}\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("qrels.txt"),
            "q1 0 d1 1\nq2 0 d2 1\nq3 0 d3 2\n",
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn build_index(&self, name: &str, extra: &[&str]) {
        let corpus = self.p("corpus.jsonl");
        let output = self.p(name);
        let mut args = vec!["index", "build", "--corpus", &corpus, "--output", &output];
        args.extend(extra);
        ok(&args);
    }

    fn write_config(&self, name: &str, body: &str) -> String {
        fs::write(self.path(name), body).unwrap();
        self.p(name)
    }
}

const FULL: &str = r#"
tag = "cascade"
workers = 2

[retrieval]
index = "idx"
k0 = 5

[mono]
enabled = true
k_out = 5

[duo]
enabled = true
k1 = 3
method = "sym-sum"
"#;

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn search_writes_trec_run() {
    let fx = Fixture::new();
    fx.build_index("idx", &[]);
    let stdout = ok(&[
        "index",
        "search",
        "--index",
        &fx.p("idx"),
        "--topics",
        &fx.p("topics.jsonl"),
        "--k",
        "3",
        "--preset",
        "passage",
    ]);
    let first = stdout.lines().next().unwrap();
    let fields: Vec<&str> = first.split_whitespace().collect();
    assert_eq!(fields.len(), 6);
    assert_eq!(
        (fields[0], fields[1], fields[3], fields[5]),
        ("q1", "Q0", "1", "bm25")
    );
    assert!(stdout.lines().filter(|l| l.starts_with("q1 ")).count() <= 3);
}

#[test]
fn rm3_search_runs() {
    let fx = Fixture::new();
    fx.build_index("idx", &[]);
    let out = fx.p("rm3.txt");
    ok(&[
        "index",
        "search",
        "--index",
        &fx.p("idx"),
        "--topics",
        &fx.p("topics.jsonl"),
        "--rm3",
        "--fb-docs",
        "2",
        "--output",
        &out,
    ]);
    assert!(read(Path::new(&out)).contains("q1 Q0"));
}

#[test]
fn pipeline_run_is_deterministic_and_persists_stages() {
    let fx = Fixture::new();
    fx.build_index("idx", &[]);
    let config = fx.write_config("cfg.toml", FULL);
    let a = fx.p("a.txt");
    let b = fx.p("b.txt");
    ok(&[
        "run",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--output",
        &a,
        "--persist-stages",
    ]);
    ok(&[
        "run",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--output",
        &b,
        "--workers",
        "1",
    ]);
    assert_eq!(read(Path::new(&a)), read(Path::new(&b)));
    for stage in ["h0", "h1", "h2"] {
        let text = read(&fx.path(&format!("a.txt.{stage}")));
        assert!(text
            .lines()
            .all(|l| l.ends_with(&format!("cascade.{stage}"))));
    }
    assert!(!fx.path("b.txt.h0").exists());

    let metrics = ok(&[
        "eval",
        "--run",
        &a,
        "--qrels",
        &fx.p("qrels.txt"),
        "--metrics",
        "mrr@10,ndcg@10",
    ]);
    assert!(metrics.contains("mrr@10\tall\t1.0000"), "{metrics}");
}

#[test]
fn overrides_change_the_pipeline() {
    let fx = Fixture::new();
    fx.build_index("idx", &[]);
    let config = fx.write_config("cfg.toml", FULL);
    let out = fx.p("mono.txt");
    ok(&[
        "run",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--output",
        &out,
        "--no-duo",
        "--tag",
        "m",
    ]);
    assert!(read(Path::new(&out)).lines().all(|l| l.ends_with(" m")));
}

#[test]
fn invalid_config_fails_before_work() {
    let fx = Fixture::new();
    let config = fx.write_config(
        "bad.toml",
        "[retrieval]\nindex = \"missing\"\nk0 = 10\n[mono]\nenabled = true\nk_out = 20\n[duo]\nenabled = true\nk1 = 30\n",
    );
    let out = stagerank(&[
        "run",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--output",
        &fx.p("o"),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("mono.k_out") && stderr.contains("duo.k1"),
        "{stderr}"
    );
    assert!(!fx.path("o").exists());
}

#[test]
fn unreachable_scorer_is_a_partial_failure() {
    let fx = Fixture::new();
    fx.build_index("idx", &[]);
    let config = fx.write_config("cfg.toml", FULL);
    let out = stagerank(&[
        "run",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--output",
        &fx.p("o.txt"),
        "--scorer-url",
        "http://127.0.0.1:1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("query q1 failed"));
}

#[test]
fn expansion_cache_feeds_index_build() {
    let fx = Fixture::new();
    let cache = fx.p("cache.jsonl");
    ok(&[
        "expand",
        "--corpus",
        &fx.p("corpus.jsonl"),
        "--cache",
        &cache,
        "--num-queries",
        "3",
    ]);
    let lines = read(Path::new(&cache));
    assert_eq!(lines.lines().count(), 5);
    // A second pass is served from the cache.
    let again = stagerank(&[
        "expand",
        "--corpus",
        &fx.p("corpus.jsonl"),
        "--cache",
        &cache,
        "--num-queries",
        "3",
    ]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("(0 generator requests)"));
    assert_eq!(read(Path::new(&cache)), lines);

    fx.build_index("plain", &[]);
    fx.build_index("expanded", &["--expansions", &cache]);
    let manifest =
        |name: &str| -> serde_json::Value { serde_json::from_str(&read(&fx.path(name))).unwrap() };
    let plain = manifest("plain/manifest.json");
    let expanded = manifest("expanded/manifest.json");
    assert!(expanded["total_terms"].as_u64() > plain["total_terms"].as_u64());
    assert_eq!(
        (expanded["expanded"].as_bool(), plain["expanded"].as_bool()),
        (Some(true), Some(false))
    );
}

#[test]
fn passage_index_and_per_passage_expansion() {
    let fx = Fixture::new();
    let cache = fx.p("pcache.jsonl");
    ok(&[
        "expand",
        "--corpus",
        &fx.p("corpus.jsonl"),
        "--cache",
        &cache,
        "--mode",
        "per-passage",
        "--num-queries",
        "2",
        "--window",
        "1",
        "--stride",
        "1",
    ]);
    assert!(read(Path::new(&cache)).contains("\"d1#1\""));
    fx.build_index(
        "pidx",
        &[
            "--passages",
            "--window",
            "1",
            "--stride",
            "1",
            "--expansions",
            &cache,
        ],
    );
    let config = fx.write_config(
        "p.toml",
        "[retrieval]\nindex = \"pidx\"\nk0 = 4\n[mono]\nenabled = true\nk_out = 4\nmaxp = true\n",
    );
    let out = fx.p("p.txt");
    ok(&[
        "run",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--output",
        &out,
    ]);
    assert!(read(Path::new(&out)).lines().all(|l| !l.contains('#')));
}

#[test]
fn fuse_and_residual_filter() {
    let fx = Fixture::new();
    fs::write(
        fx.path("a.txt"),
        "q Q0 x 1 3 a\nq Q0 y 2 2 a\nq Q0 z 3 1 a\n",
    )
    .unwrap();
    fs::write(fx.path("b.txt"), "q Q0 y 1 9 b\nq Q0 z 2 8 b\n").unwrap();
    let fused = fx.p("f.txt");
    ok(&[
        "fuse",
        "--runs",
        &fx.p("a.txt"),
        &fx.p("b.txt"),
        "--output",
        &fused,
    ]);
    let text = read(Path::new(&fused));
    let ids: Vec<&str> = text
        .lines()
        .map(|l| l.split_whitespace().nth(2).unwrap())
        .collect();
    assert_eq!(ids, ["y", "z", "x"]);

    fs::write(fx.path("prior.txt"), "q 0 y 0\n").unwrap();
    let filtered = fx.p("r.txt");
    ok(&[
        "residual-filter",
        "--run",
        &fused,
        "--prior-qrels",
        &fx.p("prior.txt"),
        "--output",
        &filtered,
    ]);
    let text = read(Path::new(&filtered));
    let rows: Vec<(&str, &str)> = text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[2], f[3])
        })
        .collect();
    assert_eq!(rows, [("z", "1"), ("x", "2")]);
}

#[test]
fn eval_per_query_and_bad_metric() {
    let fx = Fixture::new();
    fs::write(fx.path("r.txt"), "q1 Q0 d2 1 2 t\nq1 Q0 d1 2 1 t\n").unwrap();
    let out = ok(&[
        "eval",
        "--run",
        &fx.p("r.txt"),
        "--qrels",
        &fx.p("qrels.txt"),
        "--metrics",
        "mrr@10",
        "--per-query",
    ]);
    assert!(out.contains("mrr@10\tq1\t0.5000"));
    assert!(out.contains("mrr@10\tq2\t0.0000"));
    let bad = stagerank(&[
        "eval",
        "--run",
        &fx.p("r.txt"),
        "--qrels",
        &fx.p("qrels.txt"),
        "--metrics",
        "mrr",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn sweep_prints_table() {
    let fx = Fixture::new();
    fx.build_index("idx", &[]);
    let config = fx.write_config("cfg.toml", FULL);
    let out = ok(&[
        "sweep-k1",
        "--config",
        &config,
        "--topics",
        &fx.p("topics.jsonl"),
        "--qrels",
        &fx.p("qrels.txt"),
        "--k1",
        "0,2,5",
        "--methods",
        "sum,sym-sum",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "k1\tmethod\tmetric\tvalue\tinferences");
    assert_eq!(lines.len(), 7);
    assert!(lines[5].starts_with("5\tsum\tmrr@10\t") && lines[5].ends_with("\t20"));
}

#[test]
fn malformed_run_reports_line() {
    let fx = Fixture::new();
    fs::write(fx.path("r.txt"), "q1 Q0 d2 1 2 t\nq1 Q0 d1 x 1 t\n").unwrap();
    let out = stagerank(&[
        "eval",
        "--run",
        &fx.p("r.txt"),
        "--qrels",
        &fx.p("qrels.txt"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"));
}
