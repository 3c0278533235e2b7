use std::path::PathBuf;

use crate::output::OutDir;

pub mod iterate;
pub mod rates;
pub mod solve;
pub mod verify;

pub struct Context {
    pub config: PathBuf,
    pub out: OutDir,
    pub seed: Option<u64>,
}
