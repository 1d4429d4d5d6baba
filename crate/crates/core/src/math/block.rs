/// Block dimensions of a product space. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStructure(Vec<usize>);

impl BlockStructure {
    /// Panics if `dims` is empty or any dimension is zero.
    pub fn new(dims: Vec<usize>) -> Self {
        assert!(!dims.is_empty(), "need at least one block");
        assert!(dims.iter().all(|&d| d >= 1), "block dimensions must be >= 1");
        BlockStructure(dims)
    }

    pub fn uniform(n: usize, dim: usize) -> Self {
        Self::new(vec![dim; n])
    }

    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn total_dim(&self) -> usize {
        self.0.iter().sum()
    }

    /// Offset of block `i` in the flattened coordinate vector.
    pub fn offset(&self, i: usize) -> usize {
        self.0[..i].iter().sum()
    }

    /// Maps a flat coordinate index to `(block, offset within block)`.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let mut rem = flat;
        for (i, &d) in self.0.iter().enumerate() {
            if rem < d {
                return (i, rem);
            }
            rem -= d;
        }
        panic!("flat index {flat} out of range for total dim {}", self.total_dim());
    }
}

/// A vector of the product space, stored block by block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    blocks: Vec<Vec<f64>>,
}

impl BlockVector {
    /// Panics if `blocks` is empty or any block is empty.
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        assert!(!blocks.is_empty(), "need at least one block");
        assert!(blocks.iter().all(|b| !b.is_empty()), "blocks must be non-empty");
        BlockVector { blocks }
    }

    pub fn zeros(structure: &BlockStructure) -> Self {
        BlockVector {
            blocks: structure.dims().iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    /// Replaces block `i`. Panics if the dimension changes.
    pub fn set_block(&mut self, i: usize, values: Vec<f64>) {
        assert_eq!(self.blocks[i].len(), values.len(), "block dimension is fixed");
        self.blocks[i] = values;
    }

    pub fn structure(&self) -> BlockStructure {
        BlockStructure::new(self.blocks.iter().map(|b| b.len()).collect())
    }

    pub fn matches(&self, structure: &BlockStructure) -> bool {
        self.blocks.len() == structure.num_blocks()
            && self.blocks.iter().enumerate().all(|(i, b)| b.len() == structure.dim(i))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for a given structure.
    pub fn from_flat(structure: &BlockStructure, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), structure.total_dim(), "flat length mismatch");
        let mut blocks = Vec::with_capacity(structure.num_blocks());
        let mut at = 0;
        for &d in structure.dims() {
            blocks.push(flat[at..at + d].to_vec());
            at += d;
        }
        BlockVector { blocks }
    }

    /// Bitwise equality, distinguishing values `==` would conflate (0.0 vs -0.0).
    pub fn bits_eq(&self, other: &BlockVector) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| bits_eq_slice(a, b))
    }
}

pub(crate) fn bits_eq_slice(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}
