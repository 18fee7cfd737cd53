use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use codecaps::certchain::{encode_heritage, AttrValue, Certificate, Heritage, KeyPair};
use codecaps::codecap::{delegate, mint_root_named, Codecap};

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    /// Path of `name` as a `'static` argument string.
    fn arg(&self, name: &str) -> &'static str {
        Box::leak(self.path(name).to_str().unwrap().to_string().into_boxed_str())
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn cmd(&self) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_codecap"));
        c.env("CODECAP_HOME", self.path("home")).env_remove("RUST_LOG");
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd().args(args).output().unwrap()
    }

    /// Runs and expects success; returns stdout.
    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn key(&self, name: &str, seed: u8) -> String {
        let path = self.path(name);
        let seed = hex_seed(seed);
        self.ok(&["keygen", "--out", path.to_str().unwrap(), "--seed", &seed]).trim().to_string()
    }
}

fn hex_seed(n: u8) -> String {
    format!("{n:02x}").repeat(32)
}

fn lib_key(n: u8) -> KeyPair {
    KeyPair::from_seed(&[n; 32]).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// service(1) -> a(2) -> b(3) -> c(4), pLengths 3, 2, 1.
fn three_chain(sb: &Sandbox) -> String {
    let svc = sb.key("svc.key", 1);
    let a = sb.key("a.key", 2);
    let b = sb.key("b.key", 3);
    let c = sb.key("c.key", 4);
    let all = sb.write("all.rf", "1");
    let long: String = (0..14).map(|i| format!("request.offset != {i} &&\n")).collect::<String>() + "1";
    let long = sb.write("long.rf", &long);
    let reads = sb.write("reads.rf", "request.type == \"READ\"");
    let mint = sb.path("c1.cap");
    sb.ok(&["mint", "--key", sb.arg("svc.key"), "--to", &a, "--rights-file", s(&all), "--plength", "3", "--object", "obj-1", "--version", "0", "--out", s(&mint)]);
    sb.ok(&["delegate", "--cap", s(&mint), "--key", sb.arg("a.key"), "--to", &b, "--rights-file", s(&long), "--plength", "2", "--out", sb.arg("c2.cap")]);
    sb.ok(&["delegate", "--cap", sb.arg("c2.cap"), "--key", sb.arg("b.key"), "--to", &c, "--rights-file", s(&reads), "--plength", "1", "--out", sb.arg("c3.cap")]);
    svc
}

#[test]
fn validate_reports_the_tampered_certificate() {
    let sb = Sandbox::new();
    let svc = three_chain(&sb);
    let good = sb.run(&["validate", "--root-pub", &svc, "--cap", sb.arg("c3.cap")]);
    assert_eq!(good.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&good.stdout).contains("valid: 3 certificates"));

    let h = codecaps::certchain::decode_heritage(&sb.read("c3.cap")).unwrap();
    let mut certs = h.certs().to_vec();
    let mut attrs = certs[1].attrs().clone();
    attrs.insert("rights".into(), AttrValue::Str("1".into()));
    certs[1] = Certificate::from_parts(attrs, certs[1].signature().to_vec());
    sb.write("tampered.cap", &encode_heritage(&Heritage::new(certs).unwrap()));

    let bad = sb.run(&["validate", "--root-pub", &svc, "--cap", sb.arg("tampered.cap")]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("chain break at cert 2"));

    let machine = sb.run(&["--machine", "validate", "--root-pub", &svc, "--cap", sb.arg("tampered.cap")]);
    assert_eq!(machine.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&machine.stdout).unwrap();
    assert_eq!((record["valid"].as_bool(), record["index"].as_u64()), (Some(false), Some(2)));
}

#[test]
fn inspect_prints_one_block_per_certificate() {
    let sb = Sandbox::new();
    three_chain(&sb);
    let text = sb.ok(&["inspect", "--cap", sb.arg("c3.cap")]);
    let blocks: Vec<&str> = text.split("\n\n").collect();
    assert_eq!(blocks.len(), 3);
    let plengths: Vec<i64> = blocks
        .iter()
        .map(|b| {
            let line = b.lines().find(|l| l.trim_start().starts_with("pLength:")).unwrap();
            line.split(':').nth(1).unwrap().trim().parse().unwrap()
        })
        .collect();
    assert_eq!(plengths, vec![3, 2, 1]);
    assert!(blocks[0].starts_with("cert 1\n"));
    assert!(blocks[1].contains("... [5 more lines, use --full]"));
    assert!(!blocks[1].contains("request.offset != 13"));

    let full = sb.ok(&["inspect", "--full", "--cap", sb.arg("c3.cap")]);
    assert!(full.contains("request.offset != 13"));
    assert!(!full.contains("more lines"));

    let machine = sb.ok(&["--machine", "inspect", "--cap", sb.arg("c3.cap")]);
    let records: Vec<serde_json::Value> = machine.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    assert_eq!(records[1]["truncated"], serde_json::json!(true));
    assert_eq!(machine, sb.ok(&["--machine", "inspect", "--cap", sb.arg("c3.cap")]));
}

#[test]
fn cli_artifacts_match_the_library() {
    let sb = Sandbox::new();
    three_chain(&sb);
    let a = lib_key(2);
    let h1 = mint_root_named(&lib_key(1), None, &a.public_key(), "1", 3, Some("obj-1"), Some(0)).unwrap();
    assert_eq!(sb.read("c1.cap"), encode_heritage(&h1));
    let long = sb.read("long.rf");
    let h2 = delegate(&Codecap::new(h1, a).unwrap(), &lib_key(3).public_key(), &long, 2).unwrap();
    assert_eq!(sb.read("c2.cap"), encode_heritage(&h2));
    let h3 = delegate(&Codecap::new(h2.clone(), lib_key(3)).unwrap(), &lib_key(4).public_key(), "request.type == \"READ\"", 1).unwrap();
    assert_eq!(sb.read("c3.cap"), encode_heritage(&h3));

    let amp = sb.ok(&["amplify", "--cap", sb.arg("c3.cap"), "--key", sb.arg("b.key")]);
    assert_eq!(amp, encode_heritage(&h2));
    let confined = sb.ok(&["confine", "--rights-file", sb.arg("reads.rf")]);
    assert_eq!(confined.trim_end(), codecaps::codecap::confine("request.type == \"READ\"").unwrap());
}

#[test]
fn keys_are_private_and_not_clobbered() {
    let sb = Sandbox::new();
    let pk = sb.ok(&["keygen"]);
    assert_eq!(pk.trim().len(), 64);
    let path = sb.path("home").join("key");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(std::fs::metadata(&path).unwrap().permissions().mode() & 0o777, 0o600);
    }
    let again = sb.run(&["keygen"]);
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(KeyPair::from_key_file(&std::fs::read_to_string(&path).unwrap()).unwrap().public_key().to_hex(), pk.trim());
}

#[test]
fn usage_errors_exit_2() {
    let sb = Sandbox::new();
    assert_eq!(sb.run(&["inspect", "--cap", "/nonexistent"]).status.code(), Some(2));
    assert_eq!(sb.run(&["validate", "--root-pub", "zz", "--cap", "x"]).status.code(), Some(2));
    assert_eq!(sb.run(&["frobnicate"]).status.code(), Some(2));
    sb.write("junk.cap", "not a heritage");
    assert_eq!(sb.run(&["inspect", "--cap", sb.arg("junk.cap")]).status.code(), Some(2));
    sb.key("svc.key", 1);
    sb.write("bad.rf", "request.type ==");
    let out = sb.run(&["mint", "--key", sb.arg("svc.key"), "--to", &"00".repeat(32), "--rights-file", sb.arg("bad.rf"), "--plength", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

struct Served {
    child: Child,
    addr: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(sb: &Sandbox, key: &str) -> Served {
    let mut child = sb
        .cmd()
        .args(["serve", "--memory", "--listen", "127.0.0.1:0", "--realm", "cli-test", "--key", s(&sb.path(key))])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(addr) = line.strip_prefix("listening on ") {
            break addr.to_string();
        }
    };
    Served { child, addr }
}

#[test]
fn request_end_to_end() {
    let sb = Sandbox::new();
    sb.key("svc.key", 10);
    let owner = sb.key("owner.key", 11);
    let reader = sb.key("reader.key", 12);
    let server = serve(&sb, "svc.key");
    let ep = server.addr.as_str();

    sb.write("all.rf", "1");
    sb.write("reads.rf", "request.type == \"READ\"");
    sb.ok(&["mint", "--key", sb.arg("svc.key"), "--to", &owner, "--rights-file", sb.arg("all.rf"), "--plength", "4", "--out", sb.arg("factory.cap")]);
    let owner_conn = ["--cap", sb.arg("owner.cap"), "--key", sb.arg("owner.key"), "--endpoint", ep];

    sb.ok(&[
        "request", "--cap", sb.arg("factory.cap"), "--key", sb.arg("owner.key"), "--endpoint", ep,
        "--type", "CREATE", "--str", "rightsForCreator=1", "--int", "pLength=3", "--out", sb.arg("owner.cap"),
    ]);
    sb.write("body.txt", "payload from the cli\n");
    let mut write = vec!["request", "--type", "WRITE", "--payload-file", sb.arg("body.txt")];
    write.extend_from_slice(&owner_conn);
    sb.ok(&write);

    sb.ok(&["delegate", "--cap", sb.arg("owner.cap"), "--key", sb.arg("owner.key"), "--to", &reader, "--rights-file", sb.arg("reads.rf"), "--plength", "1", "--out", sb.arg("reader.cap")]);
    let reader_conn = ["--cap", sb.arg("reader.cap"), "--key", sb.arg("reader.key"), "--endpoint", ep];
    let mut read = vec!["request", "--type", "READ"];
    read.extend_from_slice(&reader_conn);
    assert_eq!(sb.ok(&read), "payload from the cli\n");
    let mut ranged = read.clone();
    ranged.extend_from_slice(&["--int", "offset=8", "--int", "length=4"]);
    assert_eq!(sb.ok(&ranged), "from");

    let mut denied = vec!["request", "--type", "WRITE", "--str", "value=x"];
    denied.extend_from_slice(&reader_conn);
    let out = sb.run(&denied);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("403 denied at rights(2)"));

    let stranger = ["request", "--type", "READ", "--cap", sb.arg("reader.cap"), "--key", sb.arg("owner.key"), "--endpoint", ep];
    assert_eq!(sb.run(&stranger).status.code(), Some(2));

    let mut gc = vec!["gc"];
    gc.extend_from_slice(&owner_conn);
    assert!(sb.ok(&gc).starts_with("persisted="));

    let mut bump = vec!["bump", "--out", sb.arg("bumped.cap")];
    bump.extend_from_slice(&owner_conn);
    sb.ok(&bump);
    let out = sb.run(&read);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at version"));
    let mut fresh = vec!["request", "--type", "READ", "--cap", sb.arg("bumped.cap"), "--key", sb.arg("owner.key"), "--endpoint", ep];
    assert_eq!(sb.ok(&fresh), "payload from the cli\n");

    fresh[6] = sb.arg("reader.key");
    assert_eq!(sb.run(&fresh).status.code(), Some(2));
}

#[test]
fn directories_end_to_end() {
    let sb = Sandbox::new();
    let svc = sb.key("svc.key", 20);
    let me = sb.ok(&["keygen"]).trim().to_string();
    let server = serve(&sb, "svc.key");
    let ep = server.addr.as_str();
    let home_key = sb.path("home").join("key");

    sb.write("all.rf", "1");
    sb.write("reads.rf", "request.type == \"READ\"");
    sb.ok(&["mint", "--key", sb.arg("svc.key"), "--to", &me, "--rights-file", sb.arg("all.rf"), "--plength", "6", "--out", sb.arg("factory.cap")]);
    let create = |kind: &str, out: &str| {
        sb.ok(&[
            "request", "--cap", sb.arg("factory.cap"), "--endpoint", ep, "--type", "CREATE",
            "--str", "rightsForCreator=1", "--int", "pLength=5", "--str", &format!("kind={kind}"),
            "--str", "groups=readers", "--out", out,
        ]);
    };
    let home_cap = sb.path("home").join("home.cap");
    create("directory", s(&home_cap));
    create("directory", sb.arg("sub.cap"));
    create("plain", sb.arg("doc.cap"));
    sb.ok(&["request", "--cap", sb.arg("doc.cap"), "--endpoint", ep, "--type", "WRITE", "--str", "value=leaf text"]);

    // Entries must end at the directory service's key.
    for (src, dst) in [("doc.cap", "doc.entry"), ("sub.cap", "sub.entry")] {
        sb.ok(&["delegate", "--cap", s(&sb.path(src)), "--key", s(&home_key), "--to", &svc, "--rights-file", sb.arg("all.rf"), "--plength", "4", "--out", s(&sb.path(dst))]);
    }
    let grant = format!("readers={}", sb.arg("reads.rf"));
    let sub_grant = format!("readers={}", sb.arg("all.rf"));
    sb.ok(&["dir", "--endpoint", ep, "insert", "sub", "--entry", sb.arg("sub.entry"), "--grant", &sub_grant]);
    sb.ok(&["dir", "--endpoint", ep, "--cap", sb.arg("sub.cap"), "insert", "doc", "--entry", sb.arg("doc.entry"), "--grant", &grant]);

    assert_eq!(sb.ok(&["dir", "--endpoint", ep, "list"]), "sub\treaders\n");
    let listed = sb.ok(&["--machine", "dir", "--endpoint", ep, "--cap", sb.arg("sub.cap"), "list"]);
    assert_eq!(listed.trim(), r#"{"groups":["readers"],"name":"doc"}"#);

    sb.ok(&["dir", "--endpoint", ep, "resolve", "/sub/doc", "--group", "readers", "--out", sb.arg("resolved.cap")]);
    let read = ["request", "--cap", sb.arg("resolved.cap"), "--endpoint", ep, "--type", "READ"];
    assert_eq!(sb.ok(&read), "leaf text");
    let write = ["request", "--cap", sb.arg("resolved.cap"), "--endpoint", ep, "--type", "WRITE", "--str", "value=no"];
    assert_eq!(sb.run(&write).status.code(), Some(1));

    sb.ok(&["dir", "--endpoint", ep, "chdir", "/sub", "--group", "readers"]);
    assert!(sb.path("home").join("working.cap").exists());
    assert_eq!(sb.ok(&["dir", "--endpoint", ep, "list"]), "doc\treaders\n");
    sb.ok(&["dir", "--endpoint", ep, "lookup", "doc", "--group", "readers", "--out", sb.arg("looked.cap")]);
    let inspect = sb.ok(&["inspect", "--cap", sb.arg("looked.cap")]);
    assert_eq!(inspect.matches("cert ").count(), 3);

    sb.ok(&["dir", "--endpoint", ep, "chmod", "doc", "--group", "readers", "--rights-file", sb.arg("all.rf")]);
    let missing = sb.run(&["dir", "--endpoint", ep, "resolve", "/sub/nothing", "--group", "readers"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("component 2 (`nothing`)"));
    sb.ok(&["dir", "--endpoint", ep, "remove", "doc"]);
    assert_eq!(sb.ok(&["dir", "--endpoint", ep, "list"]), "");
}
