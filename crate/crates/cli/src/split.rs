//! Deterministic corpus splitting by question-id hash.

use sha2::{Digest, Sha256};

use skyline_core::QuestionInstance;

pub const SPLIT_NAMES: [&str; 4] = ["train", "dev0", "dev1", "test"];

/// Question counts of train, dev0, dev1 and test in the reference setup.
pub const DEFAULT_RATIOS: [u64; 4] = [78_839, 4_379, 4_379, 10_570];

/// Split index (into [`SPLIT_NAMES`]) for `question_id`.
pub fn bucket(question_id: &str, salt: u64, ratios: &[u64; 4]) -> usize {
    let mut h = Sha256::new();
    h.update(salt.to_le_bytes());
    h.update(question_id.as_bytes());
    let digest = h.finalize();
    let x = u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"));
    let total: u64 = ratios.iter().sum();
    let mut r = x % total;
    for (i, &w) in ratios.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    unreachable!("r < total")
}

/// Partitions `corpus`, keeping input order within each part.
pub fn split(corpus: Vec<QuestionInstance>, salt: u64, ratios: &[u64; 4]) -> [Vec<QuestionInstance>; 4] {
    let mut parts: [Vec<QuestionInstance>; 4] = Default::default();
    for q in corpus {
        let b = bucket(&q.question_id, salt, ratios);
        parts[b].push(q);
    }
    parts
}
