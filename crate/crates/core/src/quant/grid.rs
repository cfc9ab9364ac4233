use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of a `rows × cols` weight matrix into OU-sized weight blocks,
/// together with the per-block bitwidth table.
///
/// Block `(vi, hj)` covers rows `vi·ou_height ..` and columns
/// `hj·ou_width ..`; edge blocks are implicitly zero-padded. Masks are kept
/// as bitwidths: bit `b` of block `g` is retained iff `b < bitwidth[g]`,
/// so every mask is contiguous from the LSB.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WbGrid {
    rows: usize,
    cols: usize,
    ou_height: usize,
    ou_width: usize,
    n: u32,
    num_vblock: usize,
    num_hblock: usize,
    bitwidths: Vec<u32>,
}

impl WbGrid {
    /// Partition with every block at the full `n` bits.
    pub fn partition(rows: usize, cols: usize, ou_height: usize, ou_width: usize, n: u32) -> Self {
        assert!(
            ou_height > 0 && ou_width > 0,
            "OU dimensions must be positive"
        );
        let num_vblock = rows.div_ceil(ou_height);
        let num_hblock = cols.div_ceil(ou_width);
        let mut grid = Self {
            rows,
            cols,
            ou_height,
            ou_width,
            n,
            num_vblock,
            num_hblock,
            bitwidths: vec![n; num_vblock * num_hblock],
        };
        for g in 0..grid.num_blocks() {
            if grid.block_elements(g) == 0 {
                grid.bitwidths[g] = 0;
            }
        }
        grid
    }

    /// Rebuild a grid from a stored bitwidth table (`num_vblock` rows of
    /// `num_hblock` entries).
    pub fn with_table(
        rows: usize,
        cols: usize,
        ou_height: usize,
        ou_width: usize,
        n: u32,
        table: &[Vec<u32>],
    ) -> Result<Self> {
        if ou_height == 0 || ou_width == 0 {
            return Err(Error::Model("OU dimensions must be positive".into()));
        }
        let mut grid = Self::partition(rows, cols, ou_height, ou_width, n);
        if table.len() != grid.num_vblock || table.iter().any(|r| r.len() != grid.num_hblock) {
            return Err(Error::Model(format!(
                "bitwidth table must be {}x{}",
                grid.num_vblock, grid.num_hblock
            )));
        }
        for (g, &bw) in table.iter().flatten().enumerate() {
            if bw > n {
                return Err(Error::Model(format!("bitwidth {bw} exceeds {n} bits")));
            }
            grid.bitwidths[g] = bw;
        }
        Ok(grid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ou_height(&self) -> usize {
        self.ou_height
    }

    pub fn ou_width(&self) -> usize {
        self.ou_width
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn num_vblock(&self) -> usize {
        self.num_vblock
    }

    pub fn num_hblock(&self) -> usize {
        self.num_hblock
    }

    pub fn num_blocks(&self) -> usize {
        self.num_vblock * self.num_hblock
    }

    pub fn block_id(&self, vi: usize, hj: usize) -> usize {
        vi * self.num_hblock + hj
    }

    pub fn block_coords(&self, g: usize) -> (usize, usize) {
        (g / self.num_hblock, g % self.num_hblock)
    }

    /// Block containing matrix element `(r, c)`.
    #[inline]
    pub fn block_of(&self, r: usize, c: usize) -> usize {
        (r / self.ou_height) * self.num_hblock + c / self.ou_width
    }

    /// Real (unpadded) rows of vertical block `vi`.
    pub fn block_rows(&self, vi: usize) -> Range<usize> {
        let start = vi * self.ou_height;
        start.min(self.rows)..(start + self.ou_height).min(self.rows)
    }

    /// Real (unpadded) columns of horizontal block `hj`.
    pub fn block_cols(&self, hj: usize) -> Range<usize> {
        let start = hj * self.ou_width;
        start.min(self.cols)..(start + self.ou_width).min(self.cols)
    }

    /// Number of real weights in block `g`.
    pub fn block_elements(&self, g: usize) -> usize {
        let (vi, hj) = self.block_coords(g);
        self.block_rows(vi).len() * self.block_cols(hj).len()
    }

    pub fn bitwidth(&self, g: usize) -> u32 {
        self.bitwidths[g]
    }

    pub fn bitwidths(&self) -> &[u32] {
        &self.bitwidths
    }

    /// Binary mask `m^(g,b)`.
    #[inline]
    pub fn mask(&self, g: usize, bit: u32) -> bool {
        bit < self.bitwidths[g]
    }

    /// Bitwidth table as `num_vblock` rows of `num_hblock` entries.
    pub fn table(&self) -> Vec<Vec<u32>> {
        self.bitwidths
            .chunks(self.num_hblock.max(1))
            .map(<[u32]>::to_vec)
            .collect()
    }

    /// Lower the bitwidth of block `g`. Bitwidths never increase.
    pub(crate) fn shrink(&mut self, g: usize, bitwidth: u32) {
        debug_assert!(bitwidth <= self.bitwidths[g]);
        self.bitwidths[g] = self.bitwidths[g].min(bitwidth);
    }

    /// Σ_g elements(g)·bitwidth(g).
    pub fn retained_bits(&self) -> u64 {
        (0..self.num_blocks())
            .map(|g| self.block_elements(g) as u64 * u64::from(self.bitwidths[g]))
            .sum()
    }

    /// Σ_g bitwidth(g): the number of active OUs under precision-aware mapping.
    pub fn total_bitwidth(&self) -> u64 {
        self.bitwidths.iter().map(|&b| u64::from(b)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shape_partitions_two_by_one() {
        let g = WbGrid::partition(18, 4, 9, 8, 8);
        assert_eq!((g.num_vblock(), g.num_hblock()), (2, 1));
    }

    #[test]
    fn exact_fit_is_single_block() {
        let g = WbGrid::partition(9, 8, 9, 8, 8);
        assert_eq!((g.num_vblock(), g.num_hblock()), (1, 1));
        assert_eq!(g.block_elements(0), 72);
    }

    #[test]
    fn ragged_edges_pad_three_blocks() {
        let g = WbGrid::partition(10, 9, 9, 8, 8);
        assert_eq!((g.num_vblock(), g.num_hblock()), (2, 2));
        let padded = (0..g.num_blocks())
            .filter(|&b| g.block_elements(b) < 72)
            .count();
        assert_eq!(padded, 3);
        assert_eq!(g.block_elements(g.block_id(1, 1)), 1);
    }

    #[test]
    fn table_shape_is_checked() {
        assert!(WbGrid::with_table(18, 4, 9, 8, 8, &[vec![3]]).is_err());
        assert!(WbGrid::with_table(18, 4, 9, 8, 8, &[vec![3], vec![9]]).is_err());
        let g = WbGrid::with_table(18, 4, 9, 8, 8, &[vec![3], vec![0]]).unwrap();
        assert_eq!(g.retained_bits(), 36 * 3);
        assert!(g.mask(0, 2) && !g.mask(0, 3) && !g.mask(1, 0));
    }
}
