use std::fmt;

/// Set of completed block indices of one file.
#[derive(Clone, PartialEq, Eq)]
pub struct CompletedSet {
    total_blocks: u64,
    words: Vec<u64>,
    len: u64,
}

impl CompletedSet {
    pub fn new(total_blocks: u64) -> Self {
        CompletedSet {
            total_blocks,
            words: vec![0; total_blocks.div_ceil(64) as usize],
            len: 0,
        }
    }

    pub fn full(total_blocks: u64) -> Self {
        let mut s = Self::new(total_blocks);
        for k in 0..total_blocks {
            s.insert(k);
        }
        s
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_blocks
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_complete(&self) -> bool {
        self.len == self.total_blocks
    }

    /// Inserts `k`; returns true when it was not already present.
    ///
    /// Panics if `k >= total_blocks`.
    pub fn insert(&mut self, k: u64) -> bool {
        assert!(k < self.total_blocks, "block {k} >= total {}", self.total_blocks);
        let (w, b) = ((k / 64) as usize, k % 64);
        let fresh = self.words[w] & (1 << b) == 0;
        if fresh {
            self.words[w] |= 1 << b;
            self.len += 1;
        }
        fresh
    }

    pub fn contains(&self, k: u64) -> bool {
        k < self.total_blocks && self.words[(k / 64) as usize] & (1 << (k % 64)) != 0
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as u64;
                bits &= bits - 1;
                Some(w as u64 * 64 + b)
            })
        })
    }

    /// Blocks not in the set, ascending.
    pub fn missing(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.total_blocks).filter(|&k| !self.contains(k))
    }

    pub fn to_vec(&self) -> Vec<u64> {
        self.iter().collect()
    }
}

impl fmt::Debug for CompletedSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CompletedSet({}/{}) ", self.len, self.total_blocks)?;
        f.debug_set().entries(self.iter()).finish()
    }
}
