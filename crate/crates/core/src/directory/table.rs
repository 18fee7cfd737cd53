use std::collections::BTreeMap;

use thiserror::Error;

use crate::certchain::{
    canonical_decode, canonical_encode, decode_heritage, encode_heritage, get_int, get_str,
    AttrMap, AttrValue, CodecError, Heritage,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid directory table: {0}")]
    Invalid(String),
}

/// One named entry: a stored heritage plus one rights function per group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub cap: Heritage,
    pub group_rights: BTreeMap<String, String>,
}

/// The name→heritage table held as a directory object's state.
///
/// Rows are kept in name order; groups keep their insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DirectoryTable {
    rows: BTreeMap<String, Row>,
    groups: Vec<String>,
}

/// Row and group names end up inside dotted attribute names, so they
/// cannot contain separators or whitespace.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 255
        && !name
            .chars()
            .any(|c| c == '.' || c == '/' || c == ',' || c.is_whitespace() || c.is_control())
}

pub fn valid_group(name: &str) -> bool {
    valid_name(name) && name != "name" && name != "cap"
}

impl DirectoryTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_groups<I, S>(groups: I) -> Result<Self, TableError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut t = Self::new();
        for g in groups {
            t.add_group(&g.into())?;
        }
        Ok(t)
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.groups.iter().any(|g| g == group)
    }

    pub fn add_group(&mut self, group: &str) -> Result<(), TableError> {
        if !valid_group(group) {
            return Err(TableError::Invalid(format!("bad group name `{group}`")));
        }
        if !self.has_group(group) {
            self.groups.push(group.to_string());
        }
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.get(name)
    }

    pub fn row_mut(&mut self, name: &str) -> Option<&mut Row> {
        self.rows.get_mut(name)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &Row)> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds or replaces a row; groups named in `row` join the table.
    pub fn insert(&mut self, name: &str, row: Row) -> Result<(), TableError> {
        if !valid_name(name) {
            return Err(TableError::Invalid(format!("bad row name `{name}`")));
        }
        for g in row.group_rights.keys() {
            self.add_group(g)?;
        }
        self.rows.insert(name.to_string(), row);
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Row> {
        self.rows.remove(name)
    }

    /// `(row name, groups with a rights cell)` for every row. Stored
    /// heritages are never part of a listing.
    pub fn listing(&self) -> Vec<(String, Vec<String>)> {
        self.rows
            .iter()
            .map(|(name, row)| {
                let groups = self
                    .groups
                    .iter()
                    .filter(|g| row.group_rights.contains_key(*g))
                    .cloned()
                    .collect();
                (name.clone(), groups)
            })
            .collect()
    }

    pub fn to_attrs(&self) -> AttrMap {
        let mut m = AttrMap::new();
        m.insert("groups".into(), AttrValue::Int(self.groups.len() as i64));
        for (i, g) in self.groups.iter().enumerate() {
            m.insert(format!("groups.{i}"), AttrValue::Str(g.clone()));
        }
        for (name, row) in &self.rows {
            m.insert(format!("row.{name}.cap"), AttrValue::Str(encode_heritage(&row.cap)));
            for (g, src) in &row.group_rights {
                m.insert(format!("row.{name}.rights.{g}"), AttrValue::Str(src.clone()));
            }
        }
        m
    }

    pub fn from_attrs(m: &AttrMap) -> Result<Self, TableError> {
        let count = get_int(m, "groups")?.unwrap_or(0);
        if count < 0 || count as usize > m.len() {
            return Err(TableError::Invalid("bad group count".into()));
        }
        let mut t = DirectoryTable::new();
        for i in 0..count {
            let key = format!("groups.{i}");
            let g = get_str(m, &key)?
                .ok_or_else(|| TableError::Invalid(format!("missing `{key}`")))?;
            t.add_group(g)?;
        }
        let mut pending: BTreeMap<String, (Option<Heritage>, BTreeMap<String, String>)> =
            BTreeMap::new();
        for (key, value) in m {
            let Some(rest) = key.strip_prefix("row.") else {
                continue;
            };
            let text = value
                .as_str()
                .ok_or_else(|| TableError::Invalid(format!("`{key}` is not a string")))?;
            if let Some(name) = rest.strip_suffix(".cap") {
                if name.contains('.') {
                    return Err(TableError::Invalid(format!("bad key `{key}`")));
                }
                let h = decode_heritage(text)
                    .map_err(|e| TableError::Invalid(format!("`{key}`: {e}")))?;
                pending.entry(name.to_string()).or_default().0 = Some(h);
            } else if let Some((name, group)) = rest.split_once(".rights.") {
                if !t.has_group(group) {
                    return Err(TableError::Invalid(format!("`{key}` names an unknown group")));
                }
                pending
                    .entry(name.to_string())
                    .or_default()
                    .1
                    .insert(group.to_string(), text.to_string());
            } else {
                return Err(TableError::Invalid(format!("bad key `{key}`")));
            }
        }
        for (name, (cap, group_rights)) in pending {
            let cap = cap.ok_or_else(|| TableError::Invalid(format!("row `{name}` has no cap")))?;
            t.insert(&name, Row { cap, group_rights })?;
        }
        Ok(t)
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(&self.to_attrs())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TableError> {
        Self::from_attrs(&canonical_decode(bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certchain::{CertBuilder, KeyPair};

    fn heritage(seed: u8) -> Heritage {
        let k = KeyPair::from_seed(&[seed; 32]).unwrap();
        let cert = CertBuilder::new(&k.public_key(), &k.public_key(), "1", 3)
            .sign(&k)
            .unwrap();
        Heritage::single(cert)
    }

    fn sample() -> DirectoryTable {
        let mut t = DirectoryTable::with_groups(["readers", "admins"]).unwrap();
        let mut rights = BTreeMap::new();
        rights.insert("readers".to_string(), r#"request.type == "READ""#.to_string());
        t.insert("players", Row { cap: heritage(1), group_rights: rights }).unwrap();
        let mut rights = BTreeMap::new();
        rights.insert("admins".to_string(), "1".to_string());
        rights.insert("extra".to_string(), "0".to_string());
        t.insert("scores", Row { cap: heritage(2), group_rights: rights }).unwrap();
        t
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(t.groups(), ["readers", "admins", "extra"]);
        let bytes = t.encode();
        assert_eq!(DirectoryTable::decode(&bytes).unwrap(), t);
        let attrs = t.to_attrs();
        assert_eq!(attrs.get("groups"), Some(&AttrValue::Int(3)));
        assert!(attrs.contains_key("row.players.cap"));
        assert!(attrs.contains_key("row.scores.rights.admins"));
    }

    #[test]
    fn listing_hides_heritages() {
        let t = sample();
        let list = t.listing();
        assert_eq!(
            list,
            vec![
                ("players".to_string(), vec!["readers".to_string()]),
                ("scores".to_string(), vec!["admins".to_string(), "extra".to_string()]),
            ]
        );
    }

    #[test]
    fn names_are_checked() {
        let mut t = DirectoryTable::new();
        assert!(t.add_group("name").is_err());
        assert!(t.add_group("cap").is_err());
        assert!(t.add_group("a.b").is_err());
        let row = Row { cap: heritage(1), group_rights: BTreeMap::new() };
        assert!(t.insert("a/b", row.clone()).is_err());
        assert!(t.insert("", row.clone()).is_err());
        assert!(t.insert("lost:1234-abcd", row).is_ok());
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let mut m = sample().to_attrs();
        m.remove("row.players.cap");
        assert!(DirectoryTable::decode(&canonical_encode(&m)).is_err());
        let mut m = sample().to_attrs();
        m.insert("row.players.rights.ghost".into(), AttrValue::Str("1".into()));
        assert!(DirectoryTable::decode(&canonical_encode(&m)).is_err());
        assert!(DirectoryTable::decode(b"junk").is_err());
        assert_eq!(DirectoryTable::decode(&[]).unwrap(), DirectoryTable::new());
    }
}
