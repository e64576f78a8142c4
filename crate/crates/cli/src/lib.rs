//! Configuration, trace files and subcommands of the `rclqr` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod trace;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, CliResult, Exit};

/// Seeds of a `--seeds` fan-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRange(pub Vec<u64>);

impl std::str::FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_seed_range(s).map(SeedRange)
    }
}

/// Parses `a..b` (exclusive) or `a..=b` (inclusive) into the list of seeds.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>, String> {
    let (lo, hi, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = text.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected a..b or a..=b, got {text:?}"));
    };
    let lo: u64 = lo.trim().parse().map_err(|e| format!("bad range start {lo:?}: {e}"))?;
    let hi: u64 = hi.trim().parse().map_err(|e| format!("bad range end {hi:?}: {e}"))?;
    let seeds: Vec<u64> = if inclusive {
        (lo..=hi).collect()
    } else {
        (lo..hi).collect()
    };
    if seeds.is_empty() {
        return Err(format!("seed range {text:?} is empty"));
    }
    Ok(seeds)
}
