use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

// Streams used across the crate. Keeping them in one place avoids two
// components accidentally sharing a random sequence.
pub const STREAM_ENCODER_INIT: u64 = 1;
pub const STREAM_HEAD_INIT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_KMEANS: u64 = 4;
pub const STREAM_ROUTER_INIT: u64 = 5;
pub const STREAM_EXPERT_INIT: u64 = 6;
pub const STREAM_RANDOM_DISPATCH: u64 = 7;
pub const STREAM_DOWNSAMPLE: u64 = 8;
pub const STREAM_SPLIT: u64 = 9;
pub const STREAM_GENERATOR: u64 = 10;
