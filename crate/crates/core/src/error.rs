use thiserror::Error;

use crate::topology::SwitchId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid coordinates: {0}")]
    InvalidCoordinates(String),
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("invalid fault configuration: {0}")]
    InvalidFaults(String),
    #[error("invalid traffic pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("{key} (line {line}): {message}")]
    ConfigKey {
        key: String,
        line: usize,
        message: String,
    },
    #[error("packet from switch {source_switch} to switch {destination} cannot be delivered: {reason}")]
    Undeliverable {
        source_switch: SwitchId,
        destination: SwitchId,
        reason: String,
    },
    #[error("escape subnetwork has a cyclic channel dependency through {0} channels")]
    CyclicEscape(usize),
    #[error("deadlock: no phit moved for {idle} cycles with {in_flight} packets in flight at cycle {cycle}\n{dump}")]
    Deadlock {
        cycle: u64,
        idle: u64,
        in_flight: usize,
        dump: String,
    },
    #[error("simulation invariant violated at cycle {cycle}: {message}")]
    Invariant { cycle: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
