use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::json;
use tempfile::TempDir;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

/// A scratch working directory and an isolated `$HOME`.
struct Sandbox {
    home: TempDir,
    work: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox {
            home: tempfile::tempdir().unwrap(),
            work: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.work.path().join(rel)
    }

    fn command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_kleio"));
        cmd.args(args).current_dir(self.work.path()).env("HOME", self.home.path());
        for var in ["KLEIO_EMBED_URL", "KLEIO_EMBED_MODEL", "KLEIO_LLM_URL", "KLEIO_LLM_KEY"] {
            cmd.env_remove(var);
        }
        cmd
    }

    fn run(&self, args: &[&str]) -> Output {
        self.command(args).output().unwrap()
    }

    fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> PathBuf {
        let p = self.path(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, contents).unwrap();
        p
    }

    fn entries(&self) -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(self.work.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        names
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero_without_side_effects() {
    let sb = Sandbox::new();
    for cmd in [
        vec!["--help"],
        vec!["--version"],
        vec!["ingest", "--help"],
        vec!["ask", "--help"],
        vec!["batch", "--help"],
        vec!["grade", "--help"],
        vec!["extract", "--help"],
        vec!["serve", "--help"],
        vec!["stats", "--help"],
        vec!["config", "--help"],
    ] {
        let out = sb.run(&cmd);
        assert_eq!(code(&out), 0, "{cmd:?}");
        assert!(!out.stdout.is_empty(), "{cmd:?}");
    }
    assert!(sb.entries().is_empty());
}

#[test]
fn usage_errors_exit_64() {
    let sb = Sandbox::new();
    for cmd in [
        vec![],
        vec!["frobnicate"],
        vec!["ask", "q", "--chunks", "-1"],
        vec!["ask", "q", "--chunks", "many"],
        vec!["batch", "--in", "q.csv"],
        vec!["grade", "--grades", "g.csv", "--format", "html"],
    ] {
        assert_eq!(code(&sb.run(&cmd)), 64, "{cmd:?}");
    }
    assert_eq!(code(&sb.run(&["ask", "   "])), 64);
}

fn write_books(sb: &Sandbox, dir: &str, n: usize) -> PathBuf {
    for i in 0..n {
        sb.write(
            &format!("{dir}/book{i}.txt"),
            format!("Estate book {i} lists tenants, rents and arrears for the year. ").repeat(25),
        );
    }
    sb.path(dir)
}

#[test]
fn ingest_exit_codes_and_counts() {
    let sb = Sandbox::new();
    let src = write_books(&sb, "src", 3);
    let out = sb.run(&["ingest", s(&src)]);
    assert_eq!(code(&out), 0);
    let line = stdout(&out);
    assert!(line.starts_with("3 documents, "), "{line}");
    assert!(sb.path("kleio-data/index/manifest.json").exists());

    let out = sb.run(&["ingest", s(&src)]);
    assert_eq!(stdout(&out), "0 documents, 0 chunks\n");

    fs::create_dir_all(sb.path("empty")).unwrap();
    let out = sb.run(&["ingest", "empty", "--store", "other/store", "--index", "other/index"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "0 documents, 0 chunks\n");

    assert_eq!(code(&sb.run(&["ingest", "missing-dir"])), 1);

    sb.write("mixed/good.txt", "A short but valid parish note about the harvest. ".repeat(10));
    sb.write("mixed/bad.pdf", "%PDF-1.4 truncated");
    let out = sb.run(&["ingest", "mixed"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).starts_with("1 documents"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.pdf"));
}

#[test]
fn ingest_refuses_a_locked_index() {
    let sb = Sandbox::new();
    let src = write_books(&sb, "src", 1);
    sb.write("kleio-data/index/.lock", "");
    let out = sb.run(&["ingest", s(&src)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

fn planted(sb: &Sandbox) {
    let out = sb.run(&["ingest", s(&fixture("planted/docs"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ask_prints_answer_and_sources() {
    let sb = Sandbox::new();
    planted(&sb);
    let q = "How many departures did the harbour ledger of Cobh record in 1847?";
    let out = sb.run(&["ask", q, "--chunks", "4"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("The harbour ledger of Cobh recorded 4120 departures in 1847."));
    let sources: Vec<&str> = text.lines().filter(|l| l.starts_with('[')).collect();
    assert!(!sources.is_empty() && sources.len() <= 4);
    assert!(sources.iter().any(|l| l.starts_with("[1] doc01 (")), "{sources:?}");

    let out = sb.run(&["ask", q, "--chunks", "0"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "I don't know the answer.\n");
}

#[test]
fn ask_with_unreachable_model_exits_1() {
    let sb = Sandbox::new();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let out = sb.command(&["ask", "hello?", "--chunks", "0"]).env("KLEIO_LLM_URL", &url).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable"));
}

#[test]
fn batch_exit_codes() {
    let sb = Sandbox::new();
    planted(&sb);
    let out = sb.run(&["batch", "--in", s(&fixture("questions.csv")), "--out", "r.csv", "--chunks", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(sb.path("r.csv")).unwrap();
    assert_eq!(reader.records().count(), 40);

    sb.write("noheader.csv", "f1,factual,When?\n");
    assert_eq!(code(&sb.run(&["batch", "--in", "noheader.csv", "--out", "x.csv"])), 1);
    assert_eq!(code(&sb.run(&["batch", "--in", "absent.csv", "--out", "x.csv"])), 1);

    sb.write("onebad.csv", "id,category,question\nq1,factual,Where?\nq2,gossip,Who?\n");
    let out = sb.run(&["batch", "--in", "onebad.csv", "--out", "y.csv", "-k", "4"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout(&out), "y.csv: 2 rows, 1 errors\n");
}

#[test]
fn batch_defaults_to_the_k_grid() {
    let sb = Sandbox::new();
    planted(&sb);
    let input = s(&fixture("planted/questions.csv")).to_string();
    let out = sb.run(&["batch", "--in", &input, "--out", "grid.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for k in [0, 4, 8] {
        let report = fs::read_to_string(sb.path(&format!("grid.k{k}.csv"))).unwrap();
        let header = report.lines().next().unwrap();
        assert_eq!(header.matches("source_").count(), k);
    }
    assert!(!sb.path("grid.csv").exists());

    let out = sb.run(&["batch", "--in", &input, "--out", "par.csv", "-k", "4", "--parallel"]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(sb.path("par.csv")).unwrap(),
        fs::read(sb.path("grid.k4.csv")).unwrap()
    );
}

fn grades_csv(model: &str, k: usize, passes: [usize; 4]) -> String {
    let mut out = String::from("id,category,model_id,k,pass\n");
    for (cat, p) in ["factual", "argumentative", "descriptive", "integrative"].iter().zip(passes) {
        for q in 0..10 {
            let id = format!("{}{}", &cat[..1], q + 1);
            out += &format!("{id},{cat},{model},{k},{}\n", u8::from(q < p));
        }
    }
    out
}

#[test]
fn grade_renders_table_and_rejects_bad_input() {
    let sb = Sandbox::new();
    sb.write("g.csv", grades_csv("ChatGPT", 0, [10, 8, 10, 9]));
    let out = sb.run(&["grade", "--grades", "g.csv"]);
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    assert!(table.starts_with("| model | #chunks | factual | argumentative | descriptive | integrative | total |"));
    let row = table.lines().find(|l| l.starts_with("| ChatGPT")).unwrap();
    assert!(row.ends_with("**92.5%** |"), "{row}");

    let out = sb.run(&["grade", "--grades", "g.csv", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("92.5"));
    assert!(!stdout(&out).contains("**"));

    let mut dup = grades_csv("ChatGPT", 0, [10, 8, 10, 9]);
    dup += "f1,factual,ChatGPT,0,1\n";
    sb.write("dup.csv", dup);
    assert_eq!(code(&sb.run(&["grade", "--grades", "dup.csv"])), 1);

    sb.write("empty.csv", "id,category,model_id,k,pass\n");
    assert_eq!(code(&sb.run(&["grade", "--grades", "empty.csv"])), 1);

    sb.write("report.csv", "id,category,question,answer,model_id,k,grounding_score\nf1,factual,Q?,A.,ChatGPT,0,0\n");
    let out = sb.run(&["grade", "--report", "report.csv", "--grades", "g.csv"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no row"));
}

#[test]
fn grade_accepts_grades_matching_a_report() {
    let sb = Sandbox::new();
    planted(&sb);
    let out = sb.run(&["batch", "--in", s(&fixture("questions.csv")), "--out", "r.csv", "--chunks", "4"]);
    assert_eq!(code(&out), 0);
    let q = fs::read_to_string(fixture("questions.csv")).unwrap();
    let mut grades = String::from("id,category,model_id,k,pass\n");
    for line in q.lines().skip(1) {
        let mut parts = line.splitn(3, ',');
        let (id, cat) = (parts.next().unwrap(), parts.next().unwrap());
        grades += &format!("{id},{cat},mock,4,1\n");
    }
    sb.write("g.csv", grades);
    let out = sb.run(&["grade", "--report", "r.csv", "--grades", "g.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("| mock | 4 | **100%**"));
}

fn extraction_script(sb: &Sandbox, reply: &str) -> PathBuf {
    let script = json!([{ "contains": "Domingo de Ajuría, natural de Ubidea", "reply": reply }]);
    sb.write("script.json", script.to_string())
}

#[test]
fn extract_diffs_against_gold() {
    let sb = Sandbox::new();
    let reply = fs::read_to_string(fixture("table3_raw_response.md")).unwrap();
    let script = extraction_script(&sb, &reply);
    let out = sb.run(&[
        "extract",
        "--in",
        s(&fixture("fig4_page.txt")),
        "--out",
        "people.csv",
        "--gold",
        s(&fixture("table3_gold.csv")),
        "--mock-script",
        s(&script),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("correct 24, missing 19, wrong 1, spurious 0\n"), "{text}");
    let wrong: Vec<&str> = text.lines().filter(|l| l.starts_with("wrong\t")).collect();
    assert_eq!(wrong, ["wrong\tTomás de Ajuria y Urratia\tdate_of_birth\texpected -\tgot 15-03-1671"]);
    let mut reader = csv::Reader::from_path(sb.path("people.csv")).unwrap();
    assert_eq!(reader.records().count(), 7);
}

#[test]
fn extract_partial_and_fatal() {
    let sb = Sandbox::new();
    let script = extraction_script(&sb, "Sorry, I cannot find any people on this page.");
    let page = fs::read_to_string(fixture("fig4_page.txt")).unwrap();
    let reply = fs::read_to_string(fixture("table3_raw_response.md")).unwrap();

    let out = sb.run(&["extract", "--in", s(&fixture("fig4_page.txt")), "--out", "p.csv", "--mock-script", s(&script)]);
    assert_eq!(code(&out), 2);

    let script = extraction_script(&sb, &reply);
    sb.write("pages.txt", format!("{page}\u{c}An unrelated page with no people.\u{c}\n"));
    let out = sb.run(&["extract", "--in", "pages.txt", "--out", "p.csv", "--mock-script", s(&script)]);
    assert_eq!(code(&out), 2);
    let mut reader = csv::Reader::from_path(sb.path("p.csv")).unwrap();
    assert_eq!(reader.records().count(), 7);
    assert!(String::from_utf8_lossy(&out.stderr).contains("page 1: parse failed"));

    sb.write("two.txt", format!("{page}\u{c}{page}"));
    let out = sb.run(&["extract", "--in", "two.txt", "--out", "p.csv", "--mock-script", s(&script)]);
    assert_eq!(code(&out), 0);
    let pages: Vec<String> = csv::Reader::from_path(sb.path("p.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[0].to_string())
        .collect();
    assert_eq!(pages.iter().filter(|p| *p == "1").count(), 7);

    assert_eq!(code(&sb.run(&["extract", "--in", "nothing.txt", "--out", "p.csv"])), 1);
}

#[test]
fn stats_on_empty_and_filled_store() {
    let sb = Sandbox::new();
    let out = sb.run(&["stats"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "documents: 0\ntotal words: 0\nunique word forms: 0\n");
    assert!(sb.entries().is_empty());

    sb.write("src/a.txt", "The mill, the Mill and THE mill. ".repeat(10));
    assert_eq!(code(&sb.run(&["ingest", "src"])), 0);
    assert_eq!(stdout(&sb.run(&["stats"])), "documents: 1\ntotal words: 70\nunique word forms: 3\n");
}

/// Looks up a dotted key such as `model.endpoint` in `kleio config` output.
fn config_value(out: &Output, key: &str) -> String {
    let table: toml::Table = stdout(out).parse().unwrap();
    let mut value = &toml::Value::Table(table);
    for part in key.split('.') {
        value = &value[part];
    }
    value.as_str().unwrap().to_string()
}

#[test]
fn config_precedence_flag_env_file_default() {
    let sb = Sandbox::new();
    let out = sb.run(&["config"]);
    assert_eq!(config_value(&out, "model.endpoint"), "mock");
    assert_eq!(config_value(&out, "store_dir"), "kleio-data/store");

    let cfg_dir = sb.home.path().join(".config/kleio");
    fs::create_dir_all(&cfg_dir).unwrap();
    fs::write(
        cfg_dir.join("config.toml"),
        "# lab defaults\nstore_dir = \"/srv/store\"\n[model]\nendpoint = \"http://file/\"\nmodel_id = \"xgen-7b\"\n",
    )
    .unwrap();
    let out = sb.run(&["config"]);
    assert_eq!(config_value(&out, "model.endpoint"), "http://file/");
    assert_eq!(config_value(&out, "store_dir"), "/srv/store");

    let out = sb.command(&["config"]).env("KLEIO_LLM_URL", "http://env/").output().unwrap();
    assert_eq!(config_value(&out, "model.endpoint"), "http://env/");
    assert_eq!(config_value(&out, "model.model_id"), "xgen-7b");

    let out = sb
        .command(&["config", "--llm-url", "http://flag/", "--store", "/flag/store"])
        .env("KLEIO_LLM_URL", "http://env/")
        .output()
        .unwrap();
    assert_eq!(config_value(&out, "model.endpoint"), "http://flag/");
    assert_eq!(config_value(&out, "store_dir"), "/flag/store");

    let other = sb.write("other.toml", "index_dir = \"/elsewhere\"\n");
    let out = sb.run(&["config", "--config", s(&other)]);
    assert_eq!(config_value(&out, "index_dir"), "/elsewhere");
    assert_eq!(config_value(&out, "store_dir"), "kleio-data/store");

    let out = sb.command(&["config"]).env("KLEIO_EMBED_URL", "http://embed/").env("KLEIO_LLM_KEY", "sk-secret").output().unwrap();
    assert_eq!(config_value(&out, "embedder.backend"), "http");
    assert!(!stdout(&out).contains("sk-secret"));

    assert_eq!(code(&sb.run(&["config", "--config", "nope.toml"])), 1);
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn serve_answers_health_and_stops_on_sigint() {
    let sb = Sandbox::new();
    let mut child = sb
        .command(&["serve", "--port", "0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();

    let response = http_get(&addr, "/api/health");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"status\":\"ok\""));
    assert!(response.contains("\"index_size\":0"));

    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGINT);
    }
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let mut rest = String::new();
    stderr.read_to_string(&mut rest).unwrap();
    assert!(rest.contains("shut down"));
}

#[test]
fn serve_bind_failures_exit_1() {
    let sb = Sandbox::new();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = sb.run(&["serve", "--port", &port]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));

    let out = sb.run(&["serve", "--host", "0.0.0.0", "--port", "0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-remote"));
}
