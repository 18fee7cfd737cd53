pub mod certchain;
pub mod codecap;
pub mod directory;
pub mod objectsvc;
pub mod rights;
pub mod wire;
