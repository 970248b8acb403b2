//! Named, independent random streams derived from one run seed.
//!
//! Every consumer of randomness gets its own ChaCha stream so that, for
//! example, changing the planner's sampling does not perturb the traffic
//! the simulator draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Layout,
    Traffic,
    Allocation,
    Policy,
    /// Per-agent plan sampling.
    Planner(u32),
    Training,
    Init,
    Theory,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Layout => 1,
            Stream::Traffic => 2,
            Stream::Allocation => 3,
            Stream::Policy => 4,
            Stream::Training => 5,
            Stream::Init => 6,
            Stream::Theory => 7,
            Stream::Planner(agent) => (1 << 32) | agent as u64,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
