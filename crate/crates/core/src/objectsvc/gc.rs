//! Primary-link garbage collection.
//!
//! An object with primary links lives while some link's directory still
//! maps the link's row to a cap on the object. Unreachable directory hosts
//! and inconclusive answers keep the object; a definitively destroyed
//! directory moves the object under lost+found.

use std::collections::BTreeMap;
use std::fmt;

use crate::attrs;
use crate::certchain::{decode_heritage, AttrValue};
use crate::codecap::Codecap;
use crate::directory::{DirectoryTable, Row};

use super::connector::{sign_call, CallError};
use super::{ObjectKind, ObjectService, PrimaryLink, LOST_FOUND_GROUP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LinkStatus {
    /// The row's cap names this object.
    Found,
    /// The directory answered; the row is absent or points elsewhere.
    Missing,
    /// The directory object itself no longer exists.
    DirectoryGone,
    Unreachable,
    /// Denied, no such group, depth exhausted and the like.
    Inconclusive,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub persisted: Vec<String>,
    pub destroyed: Vec<String>,
    pub moved_to_lost_found: Vec<String>,
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "persisted={} destroyed={} lost+found={}",
            self.persisted.join(","),
            self.destroyed.join(","),
            self.moved_to_lost_found.join(",")
        )
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Verdict {
    Persist,
    Destroy,
    /// Indices of links whose directory is gone.
    LostFound(Vec<usize>),
}

fn judge(statuses: &[LinkStatus]) -> Verdict {
    use LinkStatus::*;
    if statuses
        .iter()
        .any(|s| matches!(s, Found | Unreachable | Inconclusive))
    {
        return Verdict::Persist;
    }
    let gone: Vec<usize> = statuses
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == DirectoryGone)
        .map(|(i, _)| i)
        .collect();
    if gone.is_empty() {
        Verdict::Destroy
    } else {
        Verdict::LostFound(gone)
    }
}

impl ObjectService {
    /// Asks the link's directory what its row currently maps to.
    pub fn probe_link(&self, object_id: &str, link: &PrimaryLink, now: i64) -> LinkStatus {
        let Ok(cap) = Codecap::new(link.directory_heritage.clone(), self.config.service_key.clone())
        else {
            return LinkStatus::Inconclusive;
        };
        let request = attrs! {
            "type" => "LOOKUP",
            "name" => link.row_name.as_str(),
            "group" => link.group.as_str(),
        };
        let own = self.public_key();
        let response = if cap.service_key() == Some(own) {
            let mut request = request;
            request.insert("timestamp".into(), AttrValue::Int(now));
            let Ok(r) = sign_call(&cap, request, &[]) else {
                return LinkStatus::Inconclusive;
            };
            self.handle_request(cap.heritage(), &r, Some(&own), &[], now)
        } else {
            let connector = self.connector.read().unwrap().clone();
            let Some(connector) = connector else {
                return LinkStatus::Unreachable;
            };
            match connector.call(&cap, request, &[]) {
                Ok(resp) => resp,
                Err(CallError::Cap(_)) => return LinkStatus::Inconclusive,
                Err(e) => {
                    log::info!("gc: link for {object_id} unreachable: {e}");
                    return LinkStatus::Unreachable;
                }
            }
        };
        if response.is_ok() {
            let found = std::str::from_utf8(&response.payload)
                .ok()
                .and_then(|t| decode_heritage(t).ok())
                .is_some_and(|h| {
                    h.first().object_id() == Some(object_id) && h.root_key() == Some(own)
                });
            return if found { LinkStatus::Found } else { LinkStatus::Missing };
        }
        match response.error.as_deref() {
            Some("unknown_object") => LinkStatus::DirectoryGone,
            Some("no_such_name") => LinkStatus::Missing,
            _ => LinkStatus::Inconclusive,
        }
    }

    /// One pass over every object that has primary links. The store lock
    /// is released while links are probed.
    pub fn gc_sweep(&self, now: i64) -> SweepReport {
        let targets: Vec<(String, Vec<PrimaryLink>)> = self
            .lock()
            .store
            .objects
            .values()
            .filter(|o| !o.primary_links.is_empty())
            .map(|o| (o.object_id.clone(), o.primary_links.clone()))
            .collect();
        let mut report = SweepReport::default();
        for (id, links) in targets {
            let statuses: Vec<LinkStatus> =
                links.iter().map(|l| self.probe_link(&id, l, now)).collect();
            let verdict = judge(&statuses);
            let mut inner = self.lock();
            let unchanged = inner
                .store
                .objects
                .get(&id)
                .is_some_and(|o| o.primary_links == links);
            if !unchanged {
                continue;
            }
            match verdict {
                Verdict::Persist => report.persisted.push(id),
                Verdict::Destroy => match inner.store.destroy(&id) {
                    Ok(_) => report.destroyed.push(id),
                    Err(e) => {
                        log::error!("gc: cannot destroy {id}: {e}");
                        report.persisted.push(id);
                    }
                },
                Verdict::LostFound(gone) => {
                    drop(inner);
                    match self.move_to_lost_found(&id, &gone) {
                        Ok(()) => report.moved_to_lost_found.push(id),
                        Err(e) => {
                            log::warn!("gc: {id} kept in place: {e}");
                            report.persisted.push(id);
                        }
                    }
                }
            }
        }
        report
    }

    /// Files the object under `lost:<id>` in the service's lost+found
    /// directory and replaces the dead links with a link to that row.
    fn move_to_lost_found(&self, id: &str, gone: &[usize]) -> Result<(), super::ServiceError> {
        use super::ServiceError;
        let lf_id = self
            .config
            .lost_found_directory
            .clone()
            .ok_or_else(|| ServiceError::Config("no lost+found directory configured".into()))?;
        let own = self.public_key();
        let mut inner = self.lock();
        let mut record = inner.store.objects.get(id).cloned().ok_or(ServiceError::UnknownObject)?;
        let mut lf = inner
            .store
            .objects
            .get(&lf_id)
            .cloned()
            .filter(|o| o.kind == ObjectKind::Directory)
            .ok_or_else(|| ServiceError::Config(format!("lost+found `{lf_id}` missing")))?;
        let row_name = format!("lost:{id}");
        let cap = self.mint_for(&record, &own, "1", 1)?;
        let lookup = self.mint_for(&lf, &own, r#"request.type == "LOOKUP""#, 1)?;

        let mut table =
            DirectoryTable::decode(&lf.state).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let mut group_rights = BTreeMap::new();
        group_rights.insert(LOST_FOUND_GROUP.to_string(), "1".to_string());
        table
            .insert(&row_name, Row { cap, group_rights })
            .map_err(|e| ServiceError::Storage(e.to_string()))?;
        lf.state = table.encode();

        let mut links: Vec<PrimaryLink> = record
            .primary_links
            .iter()
            .enumerate()
            .filter(|(i, _)| !gone.contains(i))
            .map(|(_, l)| l.clone())
            .collect();
        let link = PrimaryLink {
            directory_heritage: lookup,
            row_name,
            group: LOST_FOUND_GROUP.to_string(),
        };
        if !links.contains(&link) {
            links.push(link);
        }
        record.primary_links = links;
        inner.store.put(lf)?;
        inner.store.put(record)?;
        Ok(())
    }
}
