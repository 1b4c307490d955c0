//! Lattice types shared by every other module.
//!
//! All grids are stored row-major with axis order (D, H, W). Grids that carry
//! more than one value per voxel (class probabilities) keep that dimension
//! innermost, so voxel `i` occupies `data[i * width..(i + 1) * width]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three orthogonal lattice axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    D,
    H,
    W,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::D, Axis::H, Axis::W];

    pub fn index(self) -> usize {
        match self {
            Axis::D => 0,
            Axis::H => 1,
            Axis::W => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        Axis::ALL.get(i).copied()
    }

    /// The two axes orthogonal to `self`, in (D, H, W) order.
    pub fn in_plane(self) -> [Axis; 2] {
        match self {
            Axis::D => [Axis::H, Axis::W],
            Axis::H => [Axis::D, Axis::W],
            Axis::W => [Axis::D, Axis::H],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::D => "D",
            Axis::H => "H",
            Axis::W => "W",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "D" | "d" => Ok(Axis::D),
            "H" | "h" => Ok(Axis::H),
            "W" | "w" => Ok(Axis::W),
            other => Err(Error::Config(format!("unknown axis {other:?}; expected D, H or W"))),
        }
    }
}

/// Extents of a D×H×W lattice. All extents are positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    d: usize,
    h: usize,
    w: usize,
}

impl Dims {
    pub fn new(d: usize, h: usize, w: usize) -> Result<Self> {
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("extents must be positive, got {d}x{h}x{w}")));
        }
        Ok(Dims { d, h, w })
    }

    pub fn cube(side: usize) -> Result<Self> {
        Dims::new(side, side, side)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub fn from_array(extents: [usize; 3]) -> Result<Self> {
        Dims::new(extents[0], extents[1], extents[2])
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn extent(&self, axis: Axis) -> usize {
        self.as_array()[axis.index()]
    }

    pub(crate) fn with_extent(&self, axis: Axis, len: usize) -> Dims {
        let mut e = self.as_array();
        e[axis.index()] = len;
        Dims { d: e[0], h: e[1], w: e[2] }
    }

    /// Linear voxel index of `(z, y, x)`; the single layout function used crate-wide.
    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.w;
        let y = (index / self.w) % self.h;
        let z = index / (self.w * self.h);
        [z, y, x]
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.d, self.h, self.w)
    }
}

/// Untyped lattice storage with `width` values per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn from_vec(dims: Dims, width: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 {
            return Err(Error::shape("values per voxel must be positive"));
        }
        if data.len() != dims.len() * width {
            return Err(Error::shape(format!(
                "data length {} does not match {dims} with {width} value(s) per voxel",
                data.len()
            )));
        }
        Ok(Grid { dims, width, data })
    }

    pub fn filled(dims: Dims, width: usize, value: T) -> Self {
        Grid { dims, width, data: vec![value; dims.len() * width] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Values stored at voxel `(z, y, x)`.
    pub fn voxel(&self, z: usize, y: usize, x: usize) -> &[T] {
        let i = self.dims.index(z, y, x) * self.width;
        &self.data[i..i + self.width]
    }

    fn check_box(&self, origin: [usize; 3], extent: Dims) -> Result<()> {
        for axis in Axis::ALL {
            let start = origin[axis.index()];
            let end = start + extent.extent(axis);
            if end > self.dims.extent(axis) {
                return Err(Error::Range { axis, start, end, extent: self.dims.extent(axis) });
            }
        }
        Ok(())
    }

    /// Copies the axis-aligned box at `origin` with the given extent.
    pub fn extract_box(&self, origin: [usize; 3], extent: Dims) -> Result<Self> {
        self.check_box(origin, extent)?;
        let run = extent.w() * self.width;
        let mut data = Vec::with_capacity(extent.len() * self.width);
        for z in 0..extent.d() {
            for y in 0..extent.h() {
                let src = self.dims.index(origin[0] + z, origin[1] + y, origin[2]) * self.width;
                data.extend_from_slice(&self.data[src..src + run]);
            }
        }
        Ok(Grid { dims: extent, width: self.width, data })
    }

    /// Writes `block` into `self` with its first voxel at `origin`.
    pub fn write_box(&mut self, origin: [usize; 3], block: &Grid<T>) -> Result<()> {
        if block.width != self.width {
            return Err(Error::shape(format!(
                "block has {} value(s) per voxel, target has {}",
                block.width, self.width
            )));
        }
        self.check_box(origin, block.dims)?;
        let run = block.dims.w() * self.width;
        for z in 0..block.dims.d() {
            for y in 0..block.dims.h() {
                let dst = self.dims.index(origin[0] + z, origin[1] + y, origin[2]) * self.width;
                let src = block.dims.index(z, y, 0) * self.width;
                self.data[dst..dst + run].copy_from_slice(&block.data[src..src + run]);
            }
        }
        Ok(())
    }

    /// Overwrites the slab `[start, start + len)` along `axis` with the same slab of `src`.
    pub fn copy_slab_from(&mut self, src: &Grid<T>, axis: Axis, start: usize, len: usize) -> Result<()> {
        if src.dims != self.dims || src.width != self.width {
            return Err(Error::shape(format!(
                "slab source is {} (width {}), target is {} (width {})",
                src.dims, src.width, self.dims, self.width
            )));
        }
        let end = start + len;
        let extent = self.dims.extent(axis);
        if len == 0 || end > extent {
            return Err(Error::Range { axis, start, end, extent });
        }
        let [d, h, w] = self.dims.as_array();
        let width = self.width;
        // Contiguous runs: a D slab is one run, an H slab is one run per z,
        // a W slab is one run per (z, y) row.
        match axis {
            Axis::D => {
                let a = start * h * w * width;
                let b = end * h * w * width;
                self.data[a..b].copy_from_slice(&src.data[a..b]);
            }
            Axis::H => {
                for z in 0..d {
                    let a = self.dims.index(z, start, 0) * width;
                    let b = a + len * w * width;
                    self.data[a..b].copy_from_slice(&src.data[a..b]);
                }
            }
            Axis::W => {
                for z in 0..d {
                    for y in 0..h {
                        let a = self.dims.index(z, y, start) * width;
                        let b = a + len * width;
                        self.data[a..b].copy_from_slice(&src.data[a..b]);
                    }
                }
            }
        }
        Ok(())
    }

    /// The contiguous sub-grid of thickness `len` starting at `start` along `axis`.
    pub fn slice_along(&self, axis: Axis, start: usize, len: usize) -> Result<Self> {
        let extent = self.dims.extent(axis);
        if len == 0 || start + len > extent {
            return Err(Error::Range { axis, start, end: start + len, extent });
        }
        let mut origin = [0; 3];
        origin[axis.index()] = start;
        self.extract_box(origin, self.dims.with_extent(axis, len))
    }

    /// Concatenates blocks along `axis`; the other two extents must agree.
    pub fn concat_along(blocks: &[Grid<T>], axis: Axis) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::shape("cannot concatenate an empty list"))?;
        let mut total = 0;
        for (i, b) in blocks.iter().enumerate() {
            let same_plane = axis.in_plane().iter().all(|&other| b.dims.extent(other) == first.dims.extent(other));
            if !same_plane || b.width != first.width {
                return Err(Error::shape(format!(
                    "block {i} is {} but block 0 is {}; cross-sections orthogonal to {axis} must agree",
                    b.dims, first.dims
                )));
            }
            total += b.dims.extent(axis);
        }
        let dims = first.dims.with_extent(axis, total);
        // Every voxel is overwritten below.
        let mut out = Grid::filled(dims, first.width, first.data[0]);
        let mut offset = 0;
        for b in blocks {
            let mut origin = [0; 3];
            origin[axis.index()] = offset;
            out.write_box(origin, b)?;
            offset += b.dims.extent(axis);
        }
        Ok(out)
    }

    /// Reverses the order of voxels along `axis`.
    pub fn flipped(&self, axis: Axis) -> Self {
        let mut out = self.clone();
        let [d, h, w] = self.dims.as_array();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let mut c = [z, y, x];
                    let i = axis.index();
                    c[i] = self.dims.extent(axis) - 1 - c[i];
                    let src = self.dims.index(c[0], c[1], c[2]) * self.width;
                    let dst = self.dims.index(z, y, x) * self.width;
                    out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
                }
            }
        }
        out
    }
}

/// Common interface of the typed grids: shape queries plus block slicing and
/// concatenation that preserve the grid kind.
pub trait Lattice: Clone {
    type Elem: Copy;

    fn raw(&self) -> &Grid<Self::Elem>;

    fn raw_mut(&mut self) -> &mut Grid<Self::Elem>;

    /// Rebuilds a grid of the same kind (and metadata) around `raw`. Only used
    /// for storage whose values were copied out of grids of this kind.
    fn rewrap(&self, raw: Grid<Self::Elem>) -> Self;

    /// Whether two grids carry the same non-shape metadata (e.g. class count).
    fn same_kind(&self, _other: &Self) -> bool {
        true
    }

    fn dims(&self) -> Dims {
        self.raw().dims()
    }

    fn slice_along(&self, axis: Axis, start: usize, len: usize) -> Result<Self> {
        Ok(self.rewrap(self.raw().slice_along(axis, start, len)?))
    }

    fn extract_box(&self, origin: [usize; 3], extent: Dims) -> Result<Self> {
        Ok(self.rewrap(self.raw().extract_box(origin, extent)?))
    }

    fn concat_along(blocks: &[Self], axis: Axis) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::shape("cannot concatenate an empty list"))?;
        if let Some(i) = blocks.iter().position(|b| !first.same_kind(b)) {
            return Err(Error::shape(format!("block {i} carries different metadata from block 0")));
        }
        let raws: Vec<Grid<Self::Elem>> = blocks.iter().map(|b| b.raw().clone()).collect();
        Ok(first.rewrap(Grid::concat_along(&raws, axis)?))
    }

    fn flipped(&self, axis: Axis) -> Self {
        self.rewrap(self.raw().flipped(axis))
    }
}

impl<T: Copy> Lattice for Grid<T> {
    type Elem = T;

    fn raw(&self) -> &Grid<T> {
        self
    }

    fn raw_mut(&mut self) -> &mut Grid<T> {
        self
    }

    fn rewrap(&self, raw: Grid<T>) -> Self {
        raw
    }

    fn same_kind(&self, other: &Self) -> bool {
        self.width == other.width
    }
}

macro_rules! scalar_lattice {
    ($name:ident, $elem:ty) => {
        impl Lattice for $name {
            type Elem = $elem;

            fn raw(&self) -> &Grid<$elem> {
                &self.0
            }

            fn raw_mut(&mut self) -> &mut Grid<$elem> {
                &mut self.0
            }

            fn rewrap(&self, raw: Grid<$elem>) -> Self {
                $name(raw)
            }
        }

        impl $name {
            pub fn dims(&self) -> Dims {
                self.0.dims()
            }

            pub fn data(&self) -> &[$elem] {
                self.0.data()
            }

            pub fn get(&self, z: usize, y: usize, x: usize) -> $elem {
                self.0.voxel(z, y, x)[0]
            }
        }
    };
}

/// Real-valued single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGrid(Grid<f32>);

impl VolumeGrid {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::value(format!("non-finite intensity at voxel {i}")));
        }
        Ok(VolumeGrid(Grid::from_vec(dims, 1, data)?))
    }

    pub fn zeros(dims: Dims) -> Self {
        VolumeGrid(Grid::filled(dims, 1, 0.0))
    }

    /// Applies `f` to every intensity. `f` must keep values finite.
    pub fn map(&self, mut f: impl FnMut(usize, f32) -> f32) -> Result<Self> {
        let data = self.0.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
        VolumeGrid::new(self.dims(), data)
    }
}
scalar_lattice!(VolumeGrid, f32);

/// Per-voxel reliability in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceGrid(Grid<f32>);

impl ConfidenceGrid {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::value(format!("confidence {} at voxel {i} outside [0, 1]", data[i])));
        }
        Ok(ConfidenceGrid(Grid::from_vec(dims, 1, data)?))
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        ConfidenceGrid::new(dims, vec![value; dims.len()])
    }
}
scalar_lattice!(ConfidenceGrid, f32);

/// Ground-truth indicator: 1 where a voxel carries a real label.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionGrid(Grid<u8>);

impl SupervisionGrid {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::value(format!("supervision value {} at voxel {i} not in {{0, 1}}", data[i])));
        }
        Ok(SupervisionGrid(Grid::from_vec(dims, 1, data)?))
    }

    pub fn uniform(dims: Dims, supervised: bool) -> Self {
        SupervisionGrid(Grid::filled(dims, 1, u8::from(supervised)))
    }

    pub fn is_supervised(&self, index: usize) -> bool {
        self.0.data()[index] == 1
    }
}
scalar_lattice!(SupervisionGrid, u8);

/// Per-voxel class ids in `0..num_classes` (background is class 0).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    grid: Grid<u8>,
    num_classes: usize,
}

impl LabelGrid {
    pub fn new(dims: Dims, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::value(format!("class count {num_classes} outside 1..=256")));
        }
        if let Some(i) = data.iter().position(|&v| usize::from(v) >= num_classes) {
            return Err(Error::value(format!("label {} at voxel {i} not below class count {num_classes}", data[i])));
        }
        Ok(LabelGrid { grid: Grid::from_vec(dims, 1, data)?, num_classes })
    }

    pub fn zeros(dims: Dims, num_classes: usize) -> Result<Self> {
        LabelGrid::new(dims, num_classes, vec![0; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    /// Number of classes including background (C + 1).
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        self.grid.data()
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.grid.voxel(z, y, x)[0]
    }

    pub fn count(&self, class: u8) -> usize {
        self.data().iter().filter(|&&v| v == class).count()
    }
}

impl Lattice for LabelGrid {
    type Elem = u8;

    fn raw(&self) -> &Grid<u8> {
        &self.grid
    }

    fn raw_mut(&mut self) -> &mut Grid<u8> {
        &mut self.grid
    }

    fn rewrap(&self, raw: Grid<u8>) -> Self {
        LabelGrid { grid: raw, num_classes: self.num_classes }
    }

    fn same_kind(&self, other: &Self) -> bool {
        self.num_classes == other.num_classes
    }
}

/// Per-voxel class distribution (softmax output). Classes are stored innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbGrid(Grid<f64>);

/// Allowed deviation of a voxel's class probabilities from summing to one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

impl ProbGrid {
    pub fn new(dims: Dims, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        let grid = Grid::from_vec(dims, num_classes, data)?;
        for (i, p) in grid.data().chunks_exact(num_classes).enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::value(format!("probability outside [0, 1] at voxel {i}")));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::value(format!("probabilities at voxel {i} sum to {sum}")));
            }
        }
        Ok(ProbGrid(grid))
    }

    /// Softmax over `logits` (classes innermost). The result is normalized by construction.
    pub fn from_logits(dims: Dims, num_classes: usize, mut logits: Vec<f64>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::value("class count must be positive"));
        }
        for z in logits.chunks_exact_mut(num_classes) {
            softmax_in_place(z);
        }
        Ok(ProbGrid(Grid::from_vec(dims, num_classes, logits)?))
    }

    /// Wraps rows that are already softmax outputs.
    pub(crate) fn from_normalized(dims: Dims, num_classes: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.len() * num_classes);
        ProbGrid(Grid { dims, width: num_classes, data })
    }

    pub fn uniform(dims: Dims, num_classes: usize) -> Self {
        ProbGrid(Grid::filled(dims, num_classes, 1.0 / num_classes as f64))
    }

    /// One-hot encoding of a label grid.
    pub fn one_hot(labels: &LabelGrid) -> Self {
        let k = labels.num_classes();
        let mut data = vec![0.0; labels.dims().len() * k];
        for (i, &c) in labels.data().iter().enumerate() {
            data[i * k + usize::from(c)] = 1.0;
        }
        ProbGrid(Grid { dims: labels.dims(), width: k, data })
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn num_classes(&self) -> usize {
        self.0.width()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    /// Class distribution at linear voxel index `i`.
    pub fn at(&self, i: usize) -> &[f64] {
        let k = self.num_classes();
        &self.0.data()[i * k..(i + 1) * k]
    }

    /// Voxelwise argmax (ties to the smallest class id) and the winning probability.
    pub fn argmax(&self) -> (LabelGrid, ConfidenceGrid) {
        let k = self.num_classes();
        let mut labels = Vec::with_capacity(self.dims().len());
        let mut conf = Vec::with_capacity(self.dims().len());
        for p in self.data().chunks_exact(k) {
            let mut best = 0;
            for c in 1..k {
                if p[c] > p[best] {
                    best = c;
                }
            }
            labels.push(best as u8);
            conf.push((p[best] as f32).clamp(0.0, 1.0));
        }
        let grid = LabelGrid { grid: Grid { dims: self.dims(), width: 1, data: labels }, num_classes: k };
        (grid, ConfidenceGrid(Grid { dims: self.dims(), width: 1, data: conf }))
    }

    /// Largest deviation of any voxel's class sum from one.
    pub fn max_normalization_error(&self) -> f64 {
        self.data().chunks_exact(self.num_classes()).map(|p| (p.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

impl Lattice for ProbGrid {
    type Elem = f64;

    fn raw(&self) -> &Grid<f64> {
        &self.0
    }

    fn raw_mut(&mut self) -> &mut Grid<f64> {
        &mut self.0
    }

    fn rewrap(&self, raw: Grid<f64>) -> Self {
        ProbGrid(raw)
    }

    fn same_kind(&self, other: &Self) -> bool {
        self.num_classes() == other.num_classes()
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let (arg, max) =
        z.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    let mut sum = 0.0;
    for (i, v) in z.iter_mut().enumerate() {
        *v = if i == arg { 1.0 } else { (*v - max).exp() };
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in z.iter_mut() {
        *v *= inv;
    }
}

/// Checks that every grid shares the dims of the first one.
pub fn common_dims<G: Lattice>(grids: &[G]) -> Result<Dims> {
    let first = grids.first().ok_or_else(|| Error::shape("empty grid list"))?;
    let dims = first.dims();
    if let Some(i) = grids.iter().position(|g| g.dims() != dims || !first.same_kind(g)) {
        return Err(Error::shape(format!("grid {i} is {} but grid 0 is {dims}", grids[i].dims())));
    }
    Ok(dims)
}

/// A mini-batch of `B` labeled and `B` unlabeled volumes with identical dims.
#[derive(Clone, Debug)]
pub struct Batch {
    labeled: Vec<(VolumeGrid, LabelGrid)>,
    unlabeled: Vec<VolumeGrid>,
}

impl Batch {
    pub fn new(labeled: Vec<(VolumeGrid, LabelGrid)>, unlabeled: Vec<VolumeGrid>) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Arity { what: "labeled cases (at least)", expected: 1, got: 0 });
        }
        if labeled.len() != unlabeled.len() {
            return Err(Error::Arity { what: "unlabeled cases", expected: labeled.len(), got: unlabeled.len() });
        }
        let dims = labeled[0].0.dims();
        let classes = labeled[0].1.num_classes();
        for (i, (v, l)) in labeled.iter().enumerate() {
            if v.dims() != dims || l.dims() != dims || l.num_classes() != classes {
                return Err(Error::shape(format!("labeled case {i} does not match {dims}/{classes} classes")));
            }
        }
        if let Some(i) = unlabeled.iter().position(|v| v.dims() != dims) {
            return Err(Error::shape(format!("unlabeled case {i} is {} not {dims}", unlabeled[i].dims())));
        }
        Ok(Batch { labeled, unlabeled })
    }

    /// B, the number of cases in each half.
    pub fn half_size(&self) -> usize {
        self.labeled.len()
    }

    pub fn dims(&self) -> Dims {
        self.labeled[0].0.dims()
    }

    pub fn num_classes(&self) -> usize {
        self.labeled[0].1.num_classes()
    }

    pub fn labeled(&self) -> &[(VolumeGrid, LabelGrid)] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[VolumeGrid] {
        &self.unlabeled
    }

    /// The 2B volumes, labeled first.
    pub fn merged(&self) -> Vec<VolumeGrid> {
        self.labeled.iter().map(|(v, _)| v.clone()).chain(self.unlabeled.iter().cloned()).collect()
    }
}
