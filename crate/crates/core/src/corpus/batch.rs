use rand::seq::SliceRandom;
use rand::Rng;

use super::vocab::PAD;

/// A padded minibatch. `mask[b][t]` is true for real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
    /// Index of each row in the source sentence list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_rows(rows: &[&[usize]], indices: Vec<usize>) -> Self {
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len());
        let mut mask = Vec::with_capacity(rows.len());
        for r in rows {
            let mut row = r.to_vec();
            row.resize(width, PAD);
            ids.push(row);
            let mut m = vec![true; r.len()];
            m.resize(width, false);
            mask.push(m);
        }
        Batch {
            ids,
            mask,
            lengths: rows.iter().map(|r| r.len()).collect(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Unpadded ids of row `b`.
    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b][..self.lengths[b]]
    }

    pub fn rows(&self) -> Vec<&[usize]> {
        (0..self.len()).map(|b| self.row(b)).collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// Splits sentences into batches of at most `batch_size`, shuffling the
/// order first when an rng is given.
pub fn make_batches<R: Rng + ?Sized>(
    sentences: &[Vec<usize>],
    batch_size: usize,
    rng: Option<&mut R>,
) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&[usize]> = chunk.iter().map(|&i| sentences[i].as_slice()).collect();
            Batch::from_rows(&rows, chunk.to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pads_and_masks() {
        let s = vec![vec![5, 6, 7], vec![8]];
        let b = make_batches::<ChaCha8Rng>(&s, 4, None);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].ids, vec![vec![5, 6, 7], vec![8, PAD, PAD]]);
        assert_eq!(b[0].mask[1], vec![true, false, false]);
        assert_eq!(b[0].row(1), &[8]);
    }

    proptest! {
        #[test]
        fn batches_cover_every_sentence_once(
            lens in proptest::collection::vec(1usize..9, 1..40),
            bs in 1usize..10,
            seed in any::<u64>(),
        ) {
            let sents: Vec<Vec<usize>> = lens.iter().enumerate()
                .map(|(i, &l)| vec![4 + i; l]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batches = make_batches(&sents, bs, Some(&mut rng));
            let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..sents.len()).collect::<Vec<_>>());
            for b in &batches {
                prop_assert!(b.len() <= bs);
                for (r, &i) in b.indices.iter().enumerate() {
                    prop_assert_eq!(b.row(r), sents[i].as_slice());
                    prop_assert_eq!(b.mask[r].iter().filter(|&&m| m).count(), sents[i].len());
                }
            }
        }
    }
}
