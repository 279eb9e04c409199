use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible generator for one consumer of the global seed.
pub fn stream(seed: u64, tag: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag as u64);
    rng
}

/// Sub-streams so that changing one stage's sampling never perturbs another's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    EmbedInit = 1,
    EmbedTrain = 2,
    ClassifierInit = 3,
    Pretrain = 4,
    SelfTrain = 5,
    Synth = 6,
    EmbedWorker = 100,
}

pub fn worker_stream(seed: u64, epoch: usize, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(Stream::EmbedWorker as u64 + ((epoch as u64) << 16) + worker as u64);
    rng
}
