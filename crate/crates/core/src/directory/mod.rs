//! Directories: objects whose state is a table mapping names to stored
//! heritages, with one rights-function column per group. A lookup in a
//! group is a restricted delegation of the stored heritage to the caller,
//! using that group's rights function.

mod client;
mod server;
mod table;

pub use client::{is_directory, ClientDirState, DirClient, DirError};
pub use server::{is_verb, parse_listing, CHMOD, INSERT, LIST, LOOKUP, REMOVE, RIGHTS_PREFIX};
pub(crate) use server::execute_verb;
pub use table::{valid_group, valid_name, DirectoryTable, Row, TableError};

/// First-certificate attribute marking a cap on a directory object.
pub const ATTR_OBJECT_KIND: &str = "objectKind";
