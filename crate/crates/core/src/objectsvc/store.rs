use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::certchain::{
    canonical_decode, canonical_encode, decode_heritage, encode_heritage, get_bytes, get_int,
    get_str, AttrMap, AttrValue, CodecError, Heritage,
};

/// A (directory, row) reference that keeps an object alive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimaryLink {
    /// Grants this service LOOKUP on the link's directory; its tail key is
    /// the service's own key.
    pub directory_heritage: Heritage,
    pub row_name: String,
    pub group: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectKind {
    Plain,
    Directory,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Plain => "plain",
            ObjectKind::Directory => "directory",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(ObjectKind::Plain),
            "directory" => Some(ObjectKind::Directory),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectRecord {
    pub object_id: String,
    pub version: i64,
    pub state: Vec<u8>,
    pub kind: ObjectKind,
    pub primary_links: Vec<PrimaryLink>,
    pub created_at: i64,
}

fn bad(msg: impl Into<String>) -> CodecError {
    CodecError::Invalid(msg.into())
}

impl ObjectRecord {
    pub fn new(object_id: &str, kind: ObjectKind, state: Vec<u8>, created_at: i64) -> Self {
        ObjectRecord {
            object_id: object_id.to_string(),
            version: 0,
            state,
            kind,
            primary_links: Vec::new(),
            created_at,
        }
    }

    pub fn to_attrs(&self) -> AttrMap {
        let mut m = AttrMap::new();
        m.insert("objectId".into(), AttrValue::Str(self.object_id.clone()));
        m.insert("version".into(), AttrValue::Int(self.version));
        m.insert("state".into(), AttrValue::Bytes(self.state.clone()));
        m.insert("kind".into(), AttrValue::Str(self.kind.as_str().into()));
        m.insert("createdAt".into(), AttrValue::Int(self.created_at));
        m.insert("links".into(), AttrValue::Int(self.primary_links.len() as i64));
        for (i, link) in self.primary_links.iter().enumerate() {
            m.insert(
                format!("link.{i}.heritage"),
                AttrValue::Str(encode_heritage(&link.directory_heritage)),
            );
            m.insert(format!("link.{i}.row"), AttrValue::Str(link.row_name.clone()));
            m.insert(format!("link.{i}.group"), AttrValue::Str(link.group.clone()));
        }
        m
    }

    pub fn from_attrs(m: &AttrMap) -> Result<Self, CodecError> {
        let need_str = |k: &str| -> Result<String, CodecError> {
            get_str(m, k)?
                .map(str::to_string)
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let kind = need_str("kind")?;
        let links = get_int(m, "links")?.unwrap_or(0);
        if links < 0 || links as usize > m.len() {
            return Err(bad("bad link count"));
        }
        let mut primary_links = Vec::new();
        for i in 0..links {
            let text = need_str(&format!("link.{i}.heritage"))?;
            let directory_heritage =
                decode_heritage(&text).map_err(|e| bad(format!("link {i}: {e}")))?;
            primary_links.push(PrimaryLink {
                directory_heritage,
                row_name: need_str(&format!("link.{i}.row"))?,
                group: need_str(&format!("link.{i}.group"))?,
            });
        }
        Ok(ObjectRecord {
            object_id: need_str("objectId")?,
            version: get_int(m, "version")?.ok_or_else(|| bad("missing `version`"))?,
            state: get_bytes(m, "state")?.unwrap_or_default().to_vec(),
            kind: ObjectKind::parse(&kind).ok_or_else(|| bad(format!("unknown kind `{kind}`")))?,
            primary_links,
            created_at: get_int(m, "createdAt")?.unwrap_or(0),
        })
    }
}

/// Objects plus tombstones, optionally mirrored to a directory as
/// `<id>.obj` files (and empty `<id>.gone` markers).
#[derive(Debug, Default)]
pub(crate) struct Store {
    dir: Option<PathBuf>,
    pub objects: BTreeMap<String, ObjectRecord>,
    pub gone: BTreeSet<String>,
}

/// Object ids become file names.
pub(crate) fn valid_object_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'+' | b':'))
}

impl Store {
    pub fn open(dir: Option<&Path>) -> io::Result<Self> {
        let mut store = Store {
            dir: dir.map(Path::to_path_buf),
            ..Store::default()
        };
        let Some(dir) = dir else {
            return Ok(store);
        };
        fs::create_dir_all(dir)?;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let (Some(stem), Some(ext)) = (
                path.file_stem().and_then(|s| s.to_str()),
                path.extension().and_then(|s| s.to_str()),
            ) else {
                continue;
            };
            match ext {
                "gone" => {
                    store.gone.insert(stem.to_string());
                }
                "obj" => {
                    let record = fs::read(&path)
                        .ok()
                        .and_then(|b| canonical_decode(&b).ok())
                        .and_then(|m| ObjectRecord::from_attrs(&m).ok());
                    match record {
                        Some(r) if r.object_id == stem => {
                            store.objects.insert(r.object_id.clone(), r);
                        }
                        _ => log::warn!("ignoring unreadable object file {}", path.display()),
                    }
                }
                _ => {}
            }
        }
        for id in &store.gone {
            store.objects.remove(id);
        }
        Ok(store)
    }

    pub fn is_known(&self, id: &str) -> bool {
        self.objects.contains_key(id) || self.gone.contains(id)
    }

    pub fn put(&mut self, record: ObjectRecord) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            let bytes = canonical_encode(&record.to_attrs());
            write_atomic(dir, &format!("{}.obj", record.object_id), &bytes)?;
        }
        self.objects.insert(record.object_id.clone(), record);
        Ok(())
    }

    /// Removes the object for good; repeated calls are harmless.
    pub fn destroy(&mut self, id: &str) -> io::Result<bool> {
        let existed = self.objects.remove(id).is_some();
        self.gone.insert(id.to_string());
        if let Some(dir) = &self.dir {
            write_atomic(dir, &format!("{id}.gone"), b"")?;
            match fs::remove_file(dir.join(format!("{id}.obj"))) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
                _ => {}
            }
        }
        Ok(existed)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certchain::{CertBuilder, KeyPair};

    fn record() -> ObjectRecord {
        let k = KeyPair::from_seed(&[4; 32]).unwrap();
        let h = Heritage::single(
            CertBuilder::new(&k.public_key(), &k.public_key(), "1", 1)
                .sign(&k)
                .unwrap(),
        );
        let mut r = ObjectRecord::new("abc-1", ObjectKind::Plain, b"41".to_vec(), 7);
        r.version = 2;
        r.primary_links.push(PrimaryLink {
            directory_heritage: h,
            row_name: "players".into(),
            group: "gc".into(),
        });
        r
    }

    #[test]
    fn record_round_trip() {
        let r = record();
        assert_eq!(ObjectRecord::from_attrs(&r.to_attrs()).unwrap(), r);
    }

    #[test]
    fn persistence_survives_reopen_and_ignores_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(Some(dir.path())).unwrap();
        s.put(record()).unwrap();
        let mut other = ObjectRecord::new("gone-1", ObjectKind::Directory, Vec::new(), 0);
        other.version = 1;
        s.put(other).unwrap();
        assert!(s.destroy("gone-1").unwrap());
        assert!(!s.destroy("gone-1").unwrap());
        fs::write(dir.path().join("broken.obj"), b"\x01\x00").unwrap();
        fs::write(dir.path().join(".x.obj.tmp"), b"partial").unwrap();

        let s = Store::open(Some(dir.path())).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects["abc-1"], record());
        assert!(s.gone.contains("gone-1"));
        assert!(s.is_known("gone-1"));
        assert!(!s.is_known("broken"));
    }

    #[test]
    fn object_ids_are_file_safe() {
        assert!(valid_object_id("lost+found"));
        assert!(valid_object_id("0f8e2c1a-0000-4000-8000-000000000000"));
        assert!(!valid_object_id("../etc"));
        assert!(!valid_object_id(""));
    }
}
