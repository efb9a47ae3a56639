//! Step-major packing of variable-length sequences.
//!
//! A batch is sorted by descending length and laid out step by step: all
//! active sequences' tokens for step 0, then step 1, and so on. Step `t`
//! covers the first `step_counts[t]` batch positions, so the active set is
//! always a prefix and padding never enters the numeric path — pad
//! positions simply have no rows.

/// Packed layout of one batch.
#[derive(Debug, Clone)]
pub struct Packing {
    /// Batch position -> original sequence index (sorted by length, stable).
    pub order: Vec<usize>,
    /// Original sequence index -> batch position.
    pub pos_of: Vec<usize>,
    /// Sequence length per batch position (nonincreasing).
    pub lens: Vec<usize>,
    /// Active sequences at each step (nonincreasing).
    pub step_counts: Vec<usize>,
    /// Row offset of each step; `offsets[max_len]` is the total row count.
    pub offsets: Vec<usize>,
    /// Token index for every row.
    pub tokens: Vec<usize>,
}

impl Packing {
    /// Packs `seqs` (any order, all nonempty) into step-major layout.
    pub fn new(seqs: &[&[usize]]) -> Self {
        debug_assert!(!seqs.is_empty() && seqs.iter().all(|s| !s.is_empty()));
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));

        let mut pos_of = vec![0; seqs.len()];
        for (pos, &orig) in order.iter().enumerate() {
            pos_of[orig] = pos;
        }
        let lens: Vec<usize> = order.iter().map(|&i| seqs[i].len()).collect();
        let max_len = lens[0];

        let mut step_counts = Vec::with_capacity(max_len);
        let mut offsets = Vec::with_capacity(max_len + 1);
        offsets.push(0);
        for t in 0..max_len {
            let m = lens.iter().take_while(|&&l| l > t).count();
            step_counts.push(m);
            offsets.push(offsets[t] + m);
        }

        let mut tokens = vec![0usize; offsets[max_len]];
        for t in 0..max_len {
            for j in 0..step_counts[t] {
                tokens[offsets[t] + j] = seqs[order[j]][t];
            }
        }
        Packing {
            order,
            pos_of,
            lens,
            step_counts,
            offsets,
            tokens,
        }
    }

    /// Total number of rows (= total tokens in the batch).
    pub fn rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn max_len(&self) -> usize {
        self.step_counts.len()
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    /// Row of batch position `j` at step `t`.
    pub fn row(&self, t: usize, j: usize) -> usize {
        debug_assert!(j < self.step_counts[t]);
        self.offsets[t] + j
    }

    /// Rows of the sequence at batch position `j`, in time order.
    pub fn rows_of(&self, j: usize) -> Vec<usize> {
        (0..self.lens[j]).map(|t| self.row(t, j)).collect()
    }

    /// Packs per-sequence values (given in original order) row-aligned.
    pub fn pack_values<T: Copy>(&self, values: &[Vec<T>], fill: T) -> Vec<T> {
        let mut out = vec![fill; self.rows()];
        for (pos, &orig) in self.order.iter().enumerate() {
            debug_assert_eq!(values[orig].len(), self.lens[pos]);
            for (t, &v) in values[orig].iter().enumerate() {
                out[self.row(t, pos)] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packs_ragged_batch_step_major() {
        let seqs: Vec<&[usize]> = vec![&[10, 11], &[20, 21, 22, 23], &[30]];
        let p = Packing::new(&seqs);
        assert_eq!(p.order, [1, 0, 2]);
        assert_eq!(p.lens, [4, 2, 1]);
        assert_eq!(p.step_counts, [3, 2, 1, 1]);
        assert_eq!(p.offsets, [0, 3, 5, 6, 7]);
        assert_eq!(p.tokens, [20, 10, 30, 21, 11, 22, 23]);
        assert_eq!(p.rows_of(p.pos_of[0]), [1, 4]);
        assert_eq!(p.rows_of(p.pos_of[1]), [0, 3, 5, 6]);
    }

    #[test]
    fn pack_values_aligns_with_tokens() {
        let seqs: Vec<&[usize]> = vec![&[1, 2, 3], &[4]];
        let p = Packing::new(&seqs);
        let packed = p.pack_values(&[vec![9u8, 8, 7], vec![6]], 0);
        // rows: step0 = [seq0, seq1], step1 = [seq0], step2 = [seq0]
        assert_eq!(packed, [9, 6, 8, 7]);
    }
}
