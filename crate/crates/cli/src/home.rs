//! Files under `CODECAP_HOME`: the principal's key, the home and working
//! directory caps, and a peers table mapping service keys to addresses.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use codecaps::certchain::{decode_heritage, encode_heritage, Heritage, KeyPair, PublicKey};
use codecaps::codecap::Codecap;
use codecaps::wire::{Router, TcpDialer};

use crate::CliError;

pub const KEY_FILE: &str = "key";
pub const HOME_CAP: &str = "home.cap";
pub const WORKING_CAP: &str = "working.cap";
pub const PEERS_FILE: &str = "peers";

pub struct Home {
    pub dir: PathBuf,
}

impl Home {
    pub fn new(dir: Option<PathBuf>) -> Self {
        let dir = dir.unwrap_or_else(|| {
            std::env::var_os("HOME")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."))
                .join(".codecap")
        });
        Home { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn key_path(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).unwrap_or_else(|| self.path(KEY_FILE))
    }

    pub fn key(&self, flag: Option<&Path>) -> Result<KeyPair, CliError> {
        read_key(&self.key_path(flag))
    }

    /// `--cap`, else the working cap, else the home cap.
    pub fn dir_cap_path(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        let working = self.path(WORKING_CAP);
        if working.exists() {
            working
        } else {
            self.path(HOME_CAP)
        }
    }

    /// Routes from the peers file: one `<service pubkey hex> <host:port>`
    /// per line, `#` comments allowed.
    pub fn router(&self, extra: Option<(PublicKey, &str)>) -> Result<Router, CliError> {
        let mut router = Router::new();
        let peers = self.path(PEERS_FILE);
        if peers.exists() {
            let text = read_text(&peers)?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let (Some(key), Some(addr), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(CliError::Usage(format!("{}:{}: expected `<pubkey> <host:port>`", peers.display(), n + 1)));
                };
                let key = PublicKey::from_hex(key)
                    .map_err(|e| CliError::Usage(format!("{}:{}: {e}", peers.display(), n + 1)))?;
                router.route(key, TcpDialer::new(addr));
            }
        }
        if let Some((key, addr)) = extra {
            router.route(key, TcpDialer::new(addr));
        }
        Ok(router)
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn read_key(path: &Path) -> Result<KeyPair, CliError> {
    KeyPair::from_key_file(&read_text(path)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn read_heritage(path: &Path) -> Result<Heritage, CliError> {
    decode_heritage(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn read_cap(cap: &Path, key: KeyPair) -> Result<Codecap, CliError> {
    Codecap::new(read_heritage(cap)?, key).map_err(|e| CliError::Usage(format!("{}: {e}", cap.display())))
}

fn write_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("cannot write {}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| write_err(path, e)),
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| write_err(path, e))
}

pub fn write_heritage(path: &Path, h: &Heritage) -> Result<(), CliError> {
    write_text(path, &encode_heritage(h))
}

/// Creates a key file readable only by its owner. Never overwrites
/// unless `force` is set.
pub fn write_key(path: &Path, key: &KeyPair, force: bool) -> Result<(), CliError> {
    ensure_parent(path)?;
    if path.exists() && !force {
        return Err(CliError::Usage(format!("{} exists (use --force to replace it)", path.display())));
    }
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
        opts.mode(0o600);
        if path.exists() {
            fs::set_permissions(path, fs::Permissions::from_mode(0o600)).map_err(|e| write_err(path, e))?;
        }
    }
    let mut file = opts.open(path).map_err(|e| write_err(path, e))?;
    file.write_all(key.to_key_file().as_bytes()).map_err(|e| write_err(path, e))
}
