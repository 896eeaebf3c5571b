//! Independent random streams derived from one run seed.
//!
//! Each consumer (placement, every UE's measurements and shadowing, every
//! cell's agent) draws from its own ChaCha stream, so the draw order of one
//! consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::radio_env::{CellId, UeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Placement,
    Measurement(UeId),
    Shadowing(UeId),
    Agent(CellId),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Placement => 0,
            Stream::Measurement(ue) => (1 << 32) | u64::from(ue.0),
            Stream::Shadowing(ue) => (2 << 32) | u64::from(ue.0),
            Stream::Agent(cell) => (3 << 32) | u64::from(cell.0),
        }
    }
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
