use super::MemoryKind;

/// Deterministic bag-of-words embedding: each lowercase token is hashed
/// (FNV-1a) into one of `dimension` buckets with a hash-derived sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in tokens(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Offline importance rating from text length, nudged up for reflections
/// and plans.
pub fn heuristic_importance(text: &str, kind: MemoryKind) -> u8 {
    let len = text.chars().count();
    let base: u8 = match len {
        0..=29 => 2,
        30..=59 => 3,
        60..=99 => 4,
        100..=159 => 5,
        _ => 6,
    };
    let bonus = match kind {
        MemoryKind::Reflection => 2,
        MemoryKind::Plan => 1,
        MemoryKind::Observation | MemoryKind::Speech => 0,
    };
    (base + bonus).clamp(1, 10)
}
