use super::SentenceEmbedder;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bag-of-tokens embedding: each whitespace token adds ±1 at a hashed
/// position, and the sum is scaled to unit norm. An all-zero sum maps to
/// the first basis vector.
pub fn hash_embed(sentence: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "embedding dim must be >= 1");
    let mut v = vec![0.0; dim];
    for token in sentence.split_whitespace() {
        let h = splitmix(fnv1a(token.as_bytes()) ^ splitmix(seed));
        let pos = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[pos] += sign;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dim must be >= 1");
        Self { dim, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl SentenceEmbedder for HashEmbedder {
    fn name(&self) -> &'static str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, sentence: &str) -> Option<Vec<f64>> {
        Some(hash_embed(sentence, self.dim, self.seed))
    }
}
