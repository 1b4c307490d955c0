//! Slice-block shuffling across a mini-batch.
//!
//! Every volume in a batch of `2B` is cut along one axis into `N` slabs of
//! thickness `p`. For each slab index `j` a permutation of the batch is drawn
//! (column `j` of a [`ShuffleMatrix`]) and output volume `i` takes its slab `j`
//! from input `R[i, j]`. Slabs never change their position along the axis, so
//! all volumes keep the same layer layout. [`recover_batch`] applies the
//! column-wise inverse and maps predictions back to the original order.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{common_dims, Axis, Lattice};

/// Draws the perturbation axis uniformly from {D, H, W}.
pub fn choose_axis<R: Rng + ?Sized>(rng: &mut R) -> Axis {
    Axis::ALL[rng.random_range(0..3)]
}

/// `rows × cols` table of batch indices whose every column is a permutation
/// of `0..rows`. Stored column-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<usize>,
}

fn check_permutation(column: usize, values: &[usize]) -> Result<()> {
    let mut seen = vec![false; values.len()];
    for (row, &v) in values.iter().enumerate() {
        if v >= values.len() {
            return Err(Error::Permutation {
                column,
                detail: format!("entry {v} at row {row} is not below {}", values.len()),
            });
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::Permutation { column, detail: format!("index {v} appears twice") });
        }
    }
    Ok(())
}

fn from_columns(columns: Vec<Vec<usize>>) -> Result<(usize, usize, Vec<usize>)> {
    let cols = columns.len();
    let rows = columns.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::shape("shuffle matrix needs at least one row and one column"));
    }
    let mut entries = Vec::with_capacity(rows * cols);
    for (j, c) in columns.into_iter().enumerate() {
        if c.len() != rows {
            return Err(Error::Permutation { column: j, detail: format!("has {} rows, expected {rows}", c.len()) });
        }
        check_permutation(j, &c)?;
        entries.extend(c);
    }
    Ok((rows, cols, entries))
}

impl ShuffleMatrix {
    /// Builds a matrix from its columns, rejecting any column that is not a permutation.
    pub fn from_columns(columns: Vec<Vec<usize>>) -> Result<Self> {
        let (rows, cols, entries) = from_columns(columns)?;
        Ok(ShuffleMatrix { rows, cols, entries })
    }

    pub fn identity(rows: usize, cols: usize) -> Result<Self> {
        ShuffleMatrix::from_columns(vec![(0..rows).collect(); cols])
    }

    /// Samples every column as an independent uniform permutation.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("cannot sample a {rows}x{cols} shuffle matrix")));
        }
        let mut entries = Vec::with_capacity(rows * cols);
        for _ in 0..cols {
            let mut column: Vec<usize> = (0..rows).collect();
            column.shuffle(rng);
            entries.extend(column);
        }
        Ok(ShuffleMatrix { rows, cols, entries })
    }

    /// Batch size 2B.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of slice-blocks N.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.entries[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[usize] {
        &self.entries[col * self.rows..(col + 1) * self.rows]
    }

    /// Column-wise inverse `S` with `R[S[k, j], j] == k`.
    pub fn invert(&self) -> InverseShuffleMatrix {
        let mut entries = vec![0; self.entries.len()];
        for j in 0..self.cols {
            for (i, &k) in self.column(j).iter().enumerate() {
                entries[j * self.rows + k] = i;
            }
        }
        InverseShuffleMatrix { rows: self.rows, cols: self.cols, entries }
    }
}

/// Samples a shuffle matrix for a batch of `batch` volumes cut into `blocks` slabs.
pub fn sample_shuffle_matrix<R: Rng + ?Sized>(rng: &mut R, batch: usize, blocks: usize) -> Result<ShuffleMatrix> {
    ShuffleMatrix::sample(rng, batch, blocks)
}

/// Validates `columns` as a shuffle matrix and returns its column-wise inverse.
pub fn invert(columns: Vec<Vec<usize>>) -> Result<InverseShuffleMatrix> {
    Ok(ShuffleMatrix::from_columns(columns)?.invert())
}

/// Column-wise inverse of a [`ShuffleMatrix`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InverseShuffleMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<usize>,
}

impl InverseShuffleMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.entries[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[usize] {
        &self.entries[col * self.rows..(col + 1) * self.rows]
    }
}

/// Everything needed to shuffle a batch and undo it: axis, slab thickness,
/// the permutation table and its inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShufflePlan {
    axis: Axis,
    thickness: usize,
    matrix: ShuffleMatrix,
    inverse: InverseShuffleMatrix,
}

impl ShufflePlan {
    pub fn new(axis: Axis, thickness: usize, matrix: ShuffleMatrix) -> Result<Self> {
        if thickness == 0 {
            return Err(Error::Config("slice-block thickness p must be positive".into()));
        }
        let inverse = matrix.invert();
        Ok(ShufflePlan { axis, thickness, matrix, inverse })
    }

    /// Samples a plan for `batch` volumes whose extent along `axis` is `extent`.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        axis: Axis,
        extent: usize,
        thickness: usize,
        batch: usize,
    ) -> Result<Self> {
        let blocks = block_count(axis, extent, thickness)?;
        ShufflePlan::new(axis, thickness, ShuffleMatrix::sample(rng, batch, blocks)?)
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    /// Slice-block thickness p.
    pub fn thickness(&self) -> usize {
        self.thickness
    }

    /// Number of slice-blocks N.
    pub fn blocks(&self) -> usize {
        self.matrix.cols()
    }

    pub fn batch(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ShuffleMatrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &InverseShuffleMatrix {
        &self.inverse
    }

    fn check<G: Lattice>(&self, grids: &[G]) -> Result<()> {
        if grids.len() != self.batch() {
            return Err(Error::Arity { what: "grids in batch", expected: self.batch(), got: grids.len() });
        }
        let dims = common_dims(grids)?;
        let extent = dims.extent(self.axis);
        if extent != self.thickness * self.blocks() {
            return Err(Error::shape(format!(
                "extent L_a={extent} along {} is not p={} times N={}",
                self.axis,
                self.thickness,
                self.blocks()
            )));
        }
        Ok(())
    }
}

/// N = L_a / p, rejecting thicknesses that do not divide the extent.
pub fn block_count(axis: Axis, extent: usize, thickness: usize) -> Result<usize> {
    if thickness == 0 || extent % thickness != 0 {
        return Err(Error::Shape(format!(
            "slice-block thickness p={thickness} does not divide L_a={extent} along axis {axis}"
        )));
    }
    Ok(extent / thickness)
}

// out[i] block j <- grids[table(i, j)] block j
fn gather_blocks<G: Lattice>(grids: &[G], plan: &ShufflePlan, table: impl Fn(usize, usize) -> usize) -> Result<Vec<G>> {
    plan.check(grids)?;
    let p = plan.thickness;
    let mut out = Vec::with_capacity(grids.len());
    for i in 0..grids.len() {
        let mut g = grids[i].clone();
        for j in 0..plan.blocks() {
            let src = table(i, j);
            if src != i {
                g.raw_mut().copy_slab_from(grids[src].raw(), plan.axis, j * p, p)?;
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Output `i` is the concatenation of block `j` of input `R[i, j]` over all `j`.
pub fn shuffle_batch<G: Lattice>(grids: &[G], plan: &ShufflePlan) -> Result<Vec<G>> {
    gather_blocks(grids, plan, |i, j| plan.matrix.get(i, j))
}

/// Inverse of [`shuffle_batch`] for the same plan (uses `S = Inv(R)`).
pub fn recover_batch<G: Lattice>(grids: &[G], plan: &ShufflePlan) -> Result<Vec<G>> {
    gather_blocks(grids, plan, |k, j| plan.inverse.get(k, j))
}

/// Splits a merged batch into its first and second halves.
pub fn split_batch<T>(mut items: Vec<T>) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() % 2 != 0 {
        return Err(Error::Arity { what: "entries (even count)", expected: items.len() + 1, got: items.len() });
    }
    let second = items.split_off(items.len() / 2);
    Ok((items, second))
}
