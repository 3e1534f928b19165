//! Episode seed streams. Training seeds are even and evaluation seeds odd,
//! so the two sets never overlap.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(base: u64, tag: u64, k: u64) -> u64 {
    splitmix64(splitmix64(base ^ tag).wrapping_add(k))
}

pub fn train_episode_seed(base: u64, episode: u64) -> u64 {
    stream(base, 0x7261_696E, episode) & !1
}

pub fn eval_episode_seed(base: u64, episode: u64) -> u64 {
    stream(base, 0x6576_616C, episode) | 1
}

/// Seed for the agent's own RNG (weights, exploration noise, minibatches).
pub fn agent_seed(base: u64) -> u64 {
    stream(base, 0x6167_656E, 0)
}
