//! Command-line front end for the `shapmarket` data market: market
//! simulation from JSON configs, replication attacks, property suites and
//! desk-scale digit-classification experiments.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiments;
pub mod failure;
pub mod properties;
pub mod report;

pub use commands::{run, Cli};

/// Caps the rayon pool at `SHAPMARKET_THREADS` workers when set.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("SHAPMARKET_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| failure::invalid(format!("SHAPMARKET_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}
