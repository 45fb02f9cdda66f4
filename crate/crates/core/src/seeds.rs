//! Seed derivation. Every random stream in the crate is a pure function of a base seed and a
//! list of tags, so independent roles never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the independent random roles.
pub mod tag {
    pub const PHANTOM: u64 = 0x5048_414e;
    pub const INPUT_NOISE: u64 = 0x4e4f_4953;
    pub const TARGET_TEXTURE: u64 = 0x5458_5452;
    pub const PATCHES: u64 = 0x5041_5443;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const INIT_GEN: u64 = 0x494e_4947;
    pub const INIT_DISC: u64 = 0x494e_4944;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const TARGET_PICK: u64 = 0x5049_434b;
    pub const PROBE: u64 = 0x5052_4f42;
    pub const EVAL: u64 = 0x4556_414c;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_separate_streams() {
        let a = derive_seed(7, &[tag::INPUT_NOISE, 0]);
        let b = derive_seed(7, &[tag::TARGET_TEXTURE, 0]);
        let c = derive_seed(7, &[tag::INPUT_NOISE, 1]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[tag::INPUT_NOISE, 0]));
    }
}
