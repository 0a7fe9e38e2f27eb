pub mod analyze;
pub mod bench;
pub mod prepare;
pub mod replay;
pub mod sample;
pub mod verify;

use std::fmt;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

/// Invalid flag combination detected after parsing; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RunArgs {
    /// Worker threads (0 uses every available core)
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output directory
    #[arg(long, default_value = "andiff-out")]
    pub out: PathBuf,
}

impl RunArgs {
    /// Cap the global worker pool. Only the first call in a process takes
    /// effect.
    pub fn init_threads(&self) {
        if self.threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(self.threads).build_global();
        }
    }
}
