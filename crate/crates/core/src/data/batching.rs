use rand::seq::SliceRandom;
use rand::RngCore;

/// Indices of the sentences forming one minibatch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sentences: Vec<usize>,
}

/// Shuffles `0..n` and cuts it into batches of `batch_size`; the last batch
/// may be short.
pub fn make_batches(n: usize, batch_size: usize, rng: &mut dyn RngCore) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| Batch {
            sentences: c.to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(33, 16, &mut rng);
        let sizes: Vec<usize> = b.iter().map(|b| b.sentences.len()).collect();
        assert_eq!(sizes, vec![16, 16, 1]);
        let mut all: Vec<usize> = b.iter().flat_map(|b| b.sentences.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..33).collect::<Vec<_>>());
    }

    #[test]
    fn seeded() {
        let a = make_batches(50, 16, &mut ChaCha8Rng::seed_from_u64(7));
        let b = make_batches(50, 16, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }
}
