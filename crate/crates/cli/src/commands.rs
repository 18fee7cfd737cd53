use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use codecaps::certchain::{
    encode_heritage, validate_heritage, AttrMap, AttrValue, Heritage, KeyPair, PublicKey,
};
use codecaps::codecap::{amplify, confine, delegate, mint_root_named, Codecap};
use codecaps::directory::{ClientDirState, DirClient, DirError};
use codecaps::objectsvc::{
    CallError, Connector, ObjectService, Response, ServiceConfig, BUMPVERSION, GCSWEEP,
};
use codecaps::wire::{Client, Router, Server, TcpEndpoint};

use crate::home::{self, Home, HOME_CAP, WORKING_CAP};
use crate::{Cli, CliError, Command, Conn, DirCommand, ServeArgs};

const INSPECT_LINES: usize = 10;

struct Out {
    machine: bool,
}

impl Out {
    fn emit(&self, record: Value, text: impl FnOnce() -> String) {
        if self.machine {
            println!("{record}");
        } else {
            let text = text();
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
        }
    }

    /// Prints a heritage, or writes it to `out` and reports the path.
    fn heritage(&self, h: &Heritage, out: Option<&Path>) -> Result<(), CliError> {
        let text = encode_heritage(h);
        if let Some(path) = out {
            home::write_text(path, &text)?;
            self.emit(json!({ "written": path.display().to_string(), "certs": h.len() }), || {
                format!("wrote {} ({} certificates)", path.display(), h.len())
            });
        } else {
            self.emit(json!({ "heritage": text, "certs": h.len() }), || text.clone());
        }
        Ok(())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failed(msg: impl Into<String>) -> CliError {
    CliError::Failed(msg.into())
}

fn pubkey(hex: &str) -> Result<PublicKey, CliError> {
    PublicKey::from_hex(hex).map_err(|e| usage(format!("bad public key: {e}")))
}

fn split_kv(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| usage(format!("expected NAME=VALUE, got `{s}`")))
}

fn rights(path: &Path) -> Result<String, CliError> {
    home::read_text(path)
}

fn call_failed(e: CallError) -> CliError {
    match e {
        CallError::Cap(e) => usage(e.to_string()),
        other => failed(other.to_string()),
    }
}

fn refused(r: &Response) -> CliError {
    if r.status == 401 {
        let realm = r.realm.as_deref().unwrap_or("?");
        return failed(format!("401 challenge from realm {realm}: {}", r.text()));
    }
    let mut msg = format!("{} {}", r.status, r.error.as_deref().unwrap_or("error"));
    if let Some(stage) = &r.stage {
        msg.push_str(&format!(" at {stage}"));
    }
    msg.push_str(&format!(": {}", r.text()));
    failed(msg)
}

fn dir_failed(e: DirError) -> CliError {
    match e {
        DirError::Cap(e) => usage(e.to_string()),
        other => failed(other.to_string()),
    }
}

struct Session {
    cap: Codecap,
    client: Client<Router>,
}

fn connect(home: &Home, conn: &Conn, default_cap: PathBuf) -> Result<Session, CliError> {
    let key = home.key(conn.key.as_deref())?;
    let cap = home::read_cap(conn.cap.as_deref().unwrap_or(&default_cap), key)?;
    let service = cap.service_key().ok_or_else(|| usage("heritage has no root key"))?;
    let router = home.router(conn.endpoint.as_deref().map(|addr| (service, addr)))?;
    Ok(Session {
        cap,
        client: Client::with_sessions(router),
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let home = Home::new(cli.home);
    let out = Out { machine: cli.machine };
    match cli.command {
        Command::Keygen { out: path, seed, force } => {
            let key = match seed {
                Some(hex) => {
                    let seed = PublicKey::from_hex(&hex).map_err(|e| usage(format!("bad seed: {e}")))?;
                    KeyPair::from_seed(seed.as_bytes()).map_err(|e| usage(e.to_string()))?
                }
                None => KeyPair::generate(),
            };
            let path = path.unwrap_or_else(|| home.path(home::KEY_FILE));
            home::write_key(&path, &key, force)?;
            let pk = key.public_key().to_hex();
            out.emit(json!({ "pubkey": pk, "key": path.display().to_string() }), || pk.clone());
        }

        Command::Mint { key, to, rights_file, plength, object, version, name, out: dest } => {
            let service = home.key(key.as_deref())?;
            let h = mint_root_named(
                &service,
                name.as_deref(),
                &pubkey(&to)?,
                &rights(&rights_file)?,
                plength,
                object.as_deref(),
                version,
            )
            .map_err(|e| usage(e.to_string()))?;
            out.heritage(&h, dest.as_deref())?;
        }

        Command::Delegate { cap, key, to, rights_file, plength, out: dest } => {
            let cap = home::read_cap(&cap, home.key(key.as_deref())?)?;
            let h = delegate(&cap, &pubkey(&to)?, &rights(&rights_file)?, plength)
                .map_err(|e| usage(e.to_string()))?;
            out.heritage(&h, dest.as_deref())?;
        }

        Command::Confine { rights_file, out: dest } => {
            let src = confine(&rights(&rights_file)?).map_err(|e| usage(e.to_string()))?;
            match dest {
                Some(path) => {
                    home::write_text(&path, &src)?;
                    out.emit(json!({ "written": path.display().to_string() }), || format!("wrote {}", path.display()));
                }
                None => out.emit(json!({ "rights": src }), || src.clone()),
            }
        }

        Command::Amplify { cap, key, out: dest } => {
            let h = home::read_heritage(&cap)?;
            let amp = amplify(&h, &home.key(key.as_deref())?).map_err(|e| failed(e.to_string()))?;
            out.heritage(amp.heritage(), dest.as_deref())?;
        }

        Command::Inspect { cap, full } => inspect(&out, &home::read_heritage(&cap)?, full),

        Command::Validate { root_pub, cap } => {
            let root = pubkey(&root_pub)?;
            let h = home::read_heritage(&cap)?;
            match validate_heritage(&root, &h) {
                Ok(()) => out.emit(json!({ "valid": true, "certs": h.len() }), || {
                    format!("valid: {} certificates rooted at {root}", h.len())
                }),
                Err(brk) => {
                    if out.machine {
                        println!("{}", json!({ "valid": false, "index": brk.index, "check": brk.check.to_string() }));
                        return Err(CliError::Reported);
                    }
                    return Err(failed(brk.to_string()));
                }
            }
        }

        Command::Request { conn, kind, strs, ints, payload_file, out: dest } => {
            let s = connect(&home, &conn, home.path(HOME_CAP))?;
            let mut attrs = AttrMap::new();
            attrs.insert("type".into(), AttrValue::Str(kind));
            for kv in &strs {
                let (k, v) = split_kv(kv)?;
                attrs.insert(k.into(), AttrValue::Str(v.into()));
            }
            for kv in &ints {
                let (k, v) = split_kv(kv)?;
                let v: i64 = v.parse().map_err(|_| usage(format!("`{v}` is not an integer")))?;
                attrs.insert(k.into(), AttrValue::Int(v));
            }
            let payload = match payload_file {
                Some(p) => std::fs::read(&p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?,
                None => Vec::new(),
            };
            let r = s.client.call(&s.cap, attrs, &payload).map_err(call_failed)?;
            if !r.is_ok() {
                return Err(refused(&r));
            }
            match dest {
                Some(path) => {
                    std::fs::write(&path, &r.payload)
                        .map_err(|e| failed(format!("cannot write {}: {e}", path.display())))?;
                    out.emit(json!({ "status": r.status, "written": path.display().to_string() }), || {
                        format!("wrote {} bytes to {}", r.payload.len(), path.display())
                    });
                }
                None if out.machine => out.emit(json!({ "status": r.status, "payload": r.text() }), String::new),
                None => {
                    let mut stdout = std::io::stdout();
                    stdout.write_all(&r.payload).and_then(|_| stdout.flush()).map_err(|e| failed(e.to_string()))?;
                }
            }
        }

        Command::Dir { conn, command } => dir(&home, &out, &conn, command)?,

        Command::Serve(args) => serve(&home, args)?,

        Command::Gc { conn } => {
            let s = connect(&home, &conn, home.path(HOME_CAP))?;
            let r = s.client.call(&s.cap, codecaps::attrs! { "type" => GCSWEEP }, &[]).map_err(call_failed)?;
            if !r.is_ok() {
                return Err(refused(&r));
            }
            out.emit(json!({ "report": r.text() }), || r.text());
        }

        Command::Bump { conn, out: dest } => {
            let s = connect(&home, &conn, home.path(HOME_CAP))?;
            let r = s.client.call(&s.cap, codecaps::attrs! { "type" => BUMPVERSION }, &[]).map_err(call_failed)?;
            if !r.is_ok() {
                return Err(refused(&r));
            }
            let h = codecaps::certchain::decode_heritage(&r.text()).map_err(|e| failed(format!("bad reply: {e}")))?;
            out.heritage(&h, dest.as_deref())?;
        }
    }
    Ok(())
}

fn inspect(out: &Out, h: &Heritage, full: bool) {
    for (i, cert) in h.certs().iter().enumerate() {
        let index = i + 1;
        let src = cert.rights().unwrap_or("");
        let lines: Vec<&str> = src.lines().collect();
        let truncated = !full && lines.len() > INSPECT_LINES;
        let shown = if truncated { &lines[..INSPECT_LINES] } else { &lines[..] };
        let key = |k: Option<PublicKey>| k.map(|k| k.to_hex()).unwrap_or_else(|| "?".into());
        let record = json!({
            "cert": index,
            "subject": key(cert.subject_key()),
            "subjectName": cert.subject_name(),
            "issuer": key(cert.issuer_key()),
            "issuerName": cert.issuer_name(),
            "pLength": cert.p_length(),
            "objectId": cert.object_id(),
            "version": cert.version(),
            "rights": shown.join("\n"),
            "truncated": truncated,
        });
        out.emit(record, || {
            let mut text = format!("cert {index}\n");
            let named = |k: Option<PublicKey>, n: Option<&str>| match n {
                Some(n) => format!("{} ({n})", key(k)),
                None => key(k),
            };
            text.push_str(&format!("  subject:  {}\n", named(cert.subject_key(), cert.subject_name())));
            text.push_str(&format!("  issuer:   {}\n", named(cert.issuer_key(), cert.issuer_name())));
            let p = cert.p_length().map(|p| p.to_string()).unwrap_or_else(|| "?".into());
            text.push_str(&format!("  pLength:  {p}\n"));
            if let Some(id) = cert.object_id() {
                text.push_str(&format!("  objectId: {id}\n"));
            }
            if let Some(v) = cert.version() {
                text.push_str(&format!("  version:  {v}\n"));
            }
            text.push_str("  rights:\n");
            for line in shown {
                text.push_str(&format!("    {line}\n"));
            }
            if truncated {
                text.push_str(&format!(
                    "    ... [{} more lines, use --full]\n",
                    lines.len() - INSPECT_LINES
                ));
            }
            if index < h.len() {
                text.push('\n');
            }
            text
        });
    }
}

fn dir(home: &Home, out: &Out, conn: &Conn, command: DirCommand) -> Result<(), CliError> {
    let default_cap = match command {
        DirCommand::Chdir { .. } | DirCommand::Resolve { .. } => home.path(HOME_CAP),
        _ => home.dir_cap_path(None),
    };
    let s = connect(home, conn, default_cap)?;
    let client = DirClient::new(&s.client);
    let state = || -> Result<ClientDirState, CliError> {
        let mut st = ClientDirState::new(s.cap.clone());
        let working = home.path(WORKING_CAP);
        if conn.cap.is_none() && working.exists() {
            st.working = home::read_cap(&working, s.cap.key().clone())?;
        }
        Ok(st)
    };
    match command {
        DirCommand::Lookup { name, group, out: dest } => {
            let h = client.lookup(&s.cap, &name, &group).map_err(dir_failed)?;
            out.heritage(&h, dest.as_deref())?;
        }
        DirCommand::Chmod { name, group, rights_file } => {
            client.chmod(&s.cap, &name, &group, &rights(&rights_file)?).map_err(dir_failed)?;
            out.emit(json!({ "chmod": name, "group": group }), || format!("{name}: rights for {group} replaced"));
        }
        DirCommand::Insert { name, entry, grants } => {
            let h = home::read_heritage(&entry)?;
            let mut sources = Vec::new();
            for g in &grants {
                let (group, file) = split_kv(g)?;
                sources.push((group.to_string(), rights(Path::new(file))?));
            }
            let pairs: Vec<(&str, &str)> = sources.iter().map(|(g, s)| (g.as_str(), s.as_str())).collect();
            client.insert(&s.cap, &name, &h, &pairs).map_err(dir_failed)?;
            out.emit(json!({ "inserted": name }), || format!("inserted {name}"));
        }
        DirCommand::Remove { name } => {
            client.remove(&s.cap, &name).map_err(dir_failed)?;
            out.emit(json!({ "removed": name }), || format!("removed {name}"));
        }
        DirCommand::List => {
            for (name, groups) in client.list(&s.cap).map_err(dir_failed)? {
                out.emit(json!({ "name": name, "groups": groups }), || format!("{name}\t{}", groups.join(",")));
            }
        }
        DirCommand::Chdir { path, group } => {
            let next = client.chdir(&state()?, &path, &group).map_err(dir_failed)?;
            let dest = home.path(WORKING_CAP);
            home::write_heritage(&dest, next.working.heritage())?;
            out.emit(json!({ "working": path }), || format!("working directory is now {path}"));
        }
        DirCommand::Resolve { path, group, out: dest } => {
            let h = client.resolve_path(&state()?, &path, &group).map_err(dir_failed)?;
            out.heritage(&h, dest.as_deref())?;
        }
    }
    Ok(())
}

fn serve(home: &Home, args: ServeArgs) -> Result<(), CliError> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let key = home.key(args.key.as_deref())?;
    let mut config = ServiceConfig::new(key.clone());
    if let Some(realm) = args.realm {
        config.realm = realm;
    }
    config.gc_period = Duration::from_secs(args.gc_period);
    if let Some(b) = args.budget {
        config.step_budget = b;
    }
    if let Some(w) = args.replay_window {
        config.replay_window = w;
    }
    if !args.memory {
        config.store_dir = Some(args.store.unwrap_or_else(|| home.path("store")));
    }
    for y in &args.yellow {
        let (name, file) = split_kv(y)?;
        config.yellow_pages.push((name.to_string(), home::read_heritage(Path::new(file))?));
    }
    let svc = Arc::new(ObjectService::open(config).map_err(|e| usage(e.to_string()))?);
    svc.set_connector(Arc::new(Client::with_sessions(home.router(None)?)));
    svc.spawn_gc();
    let endpoint = TcpEndpoint::bind(args.listen.as_str(), key, Arc::new(Server::new(svc.clone())))
        .map_err(|e| failed(format!("cannot listen on {}: {e}", args.listen)))?;
    println!("service {}", svc.public_key());
    println!("realm {}", svc.realm());
    println!("listening on {}", endpoint.local_addr());
    std::io::stdout().flush().map_err(|e| failed(e.to_string()))?;
    endpoint.join();
    Ok(())
}
