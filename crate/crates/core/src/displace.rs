//! Confidence-guided patch displacement between weak and strong streams.
//!
//! Each case contributes two aligned views (weak, strong). Both are cut into
//! layers of thickness `p` along the chosen axis, and each layer is tiled into
//! an `n × n` in-plane grid. Patch statistics decide which stream is the
//! more confident one and whether a patch carries ground truth; at the `K`
//! locations per layer with the largest confidence gap, complementary
//! source/target pairs exchange their image, label and supervision patches.

use crate::error::{Error, Result};
use crate::grid::{common_dims, Axis, ConfidenceGrid, Dims, LabelGrid, Lattice, SupervisionGrid, VolumeGrid};

/// Stream index inside a case. Weak views come first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Weak = 0,
    Strong = 1,
}

impl Stream {
    pub const BOTH: [Stream; 2] = [Stream::Weak, Stream::Strong];

    pub fn other(self) -> Stream {
        match self {
            Stream::Weak => Stream::Strong,
            Stream::Strong => Stream::Weak,
        }
    }
}

/// Weak/strong views of `B` cases with labels, confidences and supervision.
///
/// Members are stored folded, `[b0-weak, b0-strong, b1-weak, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamStack {
    volumes: Vec<VolumeGrid>,
    labels: Vec<LabelGrid>,
    confidence: Vec<ConfidenceGrid>,
    supervision: Vec<SupervisionGrid>,
}

impl StreamStack {
    pub fn new(
        volumes: Vec<VolumeGrid>,
        labels: Vec<LabelGrid>,
        confidence: Vec<ConfidenceGrid>,
        supervision: Vec<SupervisionGrid>,
    ) -> Result<Self> {
        let n = volumes.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Arity { what: "stream members (even, nonzero)", expected: n.max(1) + n % 2, got: n });
        }
        for (what, got) in
            [("labels", labels.len()), ("confidence maps", confidence.len()), ("supervision maps", supervision.len())]
        {
            if got != n {
                return Err(Error::Arity { what, expected: n, got });
            }
        }
        let dims = common_dims(&volumes)?;
        let label_dims = common_dims(&labels)?;
        if label_dims != dims || common_dims(&confidence)? != dims || common_dims(&supervision)? != dims {
            return Err(Error::shape(format!("all stream grids must be {dims}")));
        }
        Ok(StreamStack { volumes, labels, confidence, supervision })
    }

    /// Number of cases B.
    pub fn batch(&self) -> usize {
        self.volumes.len() / 2
    }

    pub fn dims(&self) -> Dims {
        self.volumes[0].dims()
    }

    pub fn num_classes(&self) -> usize {
        self.labels[0].num_classes()
    }

    fn slot(b: usize, s: Stream) -> usize {
        2 * b + s as usize
    }

    pub fn volume(&self, b: usize, s: Stream) -> &VolumeGrid {
        &self.volumes[Self::slot(b, s)]
    }

    pub fn label(&self, b: usize, s: Stream) -> &LabelGrid {
        &self.labels[Self::slot(b, s)]
    }

    pub fn confidence(&self, b: usize, s: Stream) -> &ConfidenceGrid {
        &self.confidence[Self::slot(b, s)]
    }

    pub fn supervision(&self, b: usize, s: Stream) -> &SupervisionGrid {
        &self.supervision[Self::slot(b, s)]
    }

    pub fn volumes(&self) -> &[VolumeGrid] {
        &self.volumes
    }

    pub fn labels(&self) -> &[LabelGrid] {
        &self.labels
    }

    pub fn confidences(&self) -> &[ConfidenceGrid] {
        &self.confidence
    }

    pub fn supervisions(&self) -> &[SupervisionGrid] {
        &self.supervision
    }

    /// Replaces every label with `G ⊙ Y + (1 − G) ⊙ Ỹ` using `pseudo` (folded order).
    pub fn with_composite_labels(&self, pseudo: &[LabelGrid]) -> Result<StreamStack> {
        if pseudo.len() != self.labels.len() {
            return Err(Error::Arity { what: "pseudo-label grids", expected: self.labels.len(), got: pseudo.len() });
        }
        let labels = self
            .labels
            .iter()
            .zip(&self.supervision)
            .zip(pseudo)
            .map(|((y, g), p)| composite_labels(y, g, p))
            .collect::<Result<_>>()?;
        Ok(StreamStack { labels, ..self.clone() })
    }
}

/// Voxelwise `G ⊙ Y + (1 − G) ⊙ Ỹ`: ground truth where supervised, pseudo-label elsewhere.
pub fn composite_labels(truth: &LabelGrid, supervision: &SupervisionGrid, pseudo: &LabelGrid) -> Result<LabelGrid> {
    if truth.dims() != supervision.dims() || truth.dims() != pseudo.dims() {
        return Err(Error::shape(format!(
            "composite inputs disagree: Y {}, G {}, pseudo {}",
            truth.dims(),
            supervision.dims(),
            pseudo.dims()
        )));
    }
    if truth.num_classes() != pseudo.num_classes() {
        return Err(Error::shape("ground truth and pseudo-labels have different class counts"));
    }
    let data = truth
        .data()
        .iter()
        .zip(supervision.data())
        .zip(pseudo.data())
        .map(|((&y, &g), &p)| if g == 1 { y } else { p })
        .collect();
    LabelGrid::new(truth.dims(), truth.num_classes(), data)
}

/// Layer/grid tiling of a stream stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    dims: Dims,
    batch: usize,
    axis: Axis,
    thickness: usize,
    layers: usize,
    grid: usize,
    patch_dims: Dims,
}

impl PatchGeometry {
    pub fn new(dims: Dims, batch: usize, axis: Axis, thickness: usize, grid: usize) -> Result<Self> {
        let extent = dims.extent(axis);
        if thickness == 0 || extent % thickness != 0 {
            return Err(Error::shape(format!(
                "layer thickness p={thickness} does not divide extent {extent} along {axis}"
            )));
        }
        let mut patch = dims.as_array();
        patch[axis.index()] = thickness;
        for other in axis.in_plane() {
            let e = dims.extent(other);
            if grid == 0 || e % grid != 0 {
                return Err(Error::shape(format!(
                    "grid size n={grid} does not divide in-plane extent {e} along {other}"
                )));
            }
            patch[other.index()] = e / grid;
        }
        Ok(PatchGeometry {
            dims,
            batch,
            axis,
            thickness,
            layers: extent / thickness,
            grid,
            patch_dims: Dims::from_array(patch)?,
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn thickness(&self) -> usize {
        self.thickness
    }

    /// Layer count N.
    pub fn layers(&self) -> usize {
        self.layers
    }

    /// In-plane grid size n.
    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn patch_dims(&self) -> Dims {
        self.patch_dims
    }

    /// Total number of patches over (b, stream, layer, u, v).
    pub fn patch_count(&self) -> usize {
        self.batch * 2 * self.layers * self.grid * self.grid
    }

    /// Total number of locations over (b, layer, u, v).
    pub fn location_count(&self) -> usize {
        self.batch * self.layers * self.grid * self.grid
    }

    pub fn patch_index(&self, b: usize, s: Stream, layer: usize, u: usize, v: usize) -> usize {
        (((b * 2 + s as usize) * self.layers + layer) * self.grid + u) * self.grid + v
    }

    pub fn location_index(&self, loc: Location) -> usize {
        ((loc.batch * self.layers + loc.layer) * self.grid + loc.u) * self.grid + loc.v
    }

    pub fn locations(&self) -> impl Iterator<Item = Location> + '_ {
        (0..self.batch).flat_map(move |batch| {
            (0..self.layers).flat_map(move |layer| {
                (0..self.grid).flat_map(move |u| (0..self.grid).map(move |v| Location { batch, layer, u, v }))
            })
        })
    }

    fn origin(&self, layer: usize, u: usize, v: usize) -> [usize; 3] {
        let mut o = [0; 3];
        o[self.axis.index()] = layer * self.thickness;
        let [first, second] = self.axis.in_plane();
        o[first.index()] = u * self.patch_dims.extent(first);
        o[second.index()] = v * self.patch_dims.extent(second);
        o
    }
}

/// A grid location `(b, ℓ, u, v)`, shared by both streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub batch: usize,
    pub layer: usize,
    pub u: usize,
    pub v: usize,
}

/// The four aligned blocks of one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub volume: VolumeGrid,
    pub label: LabelGrid,
    pub confidence: ConfidenceGrid,
    pub supervision: SupervisionGrid,
}

/// Patch view of a [`StreamStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDecomposition {
    geometry: PatchGeometry,
    patches: Vec<Patch>,
    template: StreamStack,
}

/// Cuts every stream member into `N` layers of thickness `p` along `axis`,
/// each tiled by an `n × n` grid over the two orthogonal axes.
pub fn patchify(stack: &StreamStack, axis: Axis, thickness: usize, grid: usize) -> Result<PatchDecomposition> {
    let geometry = PatchGeometry::new(stack.dims(), stack.batch(), axis, thickness, grid)?;
    let pd = geometry.patch_dims;
    let mut patches = Vec::with_capacity(geometry.patch_count());
    for b in 0..stack.batch() {
        for s in Stream::BOTH {
            for layer in 0..geometry.layers {
                for u in 0..grid {
                    for v in 0..grid {
                        let o = geometry.origin(layer, u, v);
                        patches.push(Patch {
                            volume: stack.volume(b, s).extract_box(o, pd)?,
                            label: stack.label(b, s).extract_box(o, pd)?,
                            confidence: stack.confidence(b, s).extract_box(o, pd)?,
                            supervision: stack.supervision(b, s).extract_box(o, pd)?,
                        });
                    }
                }
            }
        }
    }
    Ok(PatchDecomposition { geometry, patches, template: stack.clone() })
}

impl PatchDecomposition {
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn patch(&self, b: usize, s: Stream, layer: usize, u: usize, v: usize) -> &Patch {
        &self.patches[self.geometry.patch_index(b, s, layer, u, v)]
    }

    /// Reassembles the stream stack from the patches.
    pub fn unpatchify(&self) -> Result<StreamStack> {
        let g = &self.geometry;
        let mut out = self.template.clone();
        for b in 0..g.batch {
            for s in Stream::BOTH {
                let slot = StreamStack::slot(b, s);
                for layer in 0..g.layers {
                    for u in 0..g.grid {
                        for v in 0..g.grid {
                            let o = g.origin(layer, u, v);
                            let p = self.patch(b, s, layer, u, v);
                            out.volumes[slot].raw_mut().write_box(o, p.volume.raw())?;
                            out.labels[slot].raw_mut().write_box(o, p.label.raw())?;
                            out.confidence[slot].raw_mut().write_box(o, p.confidence.raw())?;
                            out.supervision[slot].raw_mut().write_box(o, p.supervision.raw())?;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exchanges the two streams' patches at every selected complementary
    /// location. Returns the swapped decomposition and the exchanged locations.
    pub fn swap(&self, stats: &PatchStats, selection: &SelectionMask) -> Result<(PatchDecomposition, Vec<Location>)> {
        if stats.geometry != self.geometry {
            return Err(Error::Consistency("patch statistics come from a different decomposition".into()));
        }
        if selection.geometry != self.geometry {
            return Err(Error::Consistency("selection mask comes from a different decomposition".into()));
        }
        let swapped: Vec<Location> = self
            .geometry
            .locations()
            .filter(|&loc| selection.is_selected(loc) && stats.is_complementary(loc))
            .collect();
        Ok((self.swap_locations(&swapped)?, swapped))
    }

    /// Exchanges the weak and strong patches at each listed location.
    pub fn swap_locations(&self, locations: &[Location]) -> Result<PatchDecomposition> {
        let g = &self.geometry;
        let mut out = self.clone();
        for &loc in locations {
            if loc.batch >= g.batch || loc.layer >= g.layers || loc.u >= g.grid || loc.v >= g.grid {
                return Err(Error::Consistency(format!("swap location {loc:?} lies outside the patch grid")));
            }
            let w = g.patch_index(loc.batch, Stream::Weak, loc.layer, loc.u, loc.v);
            let s = g.patch_index(loc.batch, Stream::Strong, loc.layer, loc.u, loc.v);
            out.patches.swap(w, s);
        }
        Ok(out)
    }
}

/// Per-patch confidence statistics and source/target eligibility.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStats {
    geometry: PatchGeometry,
    mean_conf: Vec<f64>,
    has_gt: Vec<bool>,
    is_high: Vec<bool>,
    source: Vec<bool>,
    target: Vec<bool>,
}

impl PatchStats {
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    fn idx(&self, loc: Location, s: Stream) -> usize {
        self.geometry.patch_index(loc.batch, s, loc.layer, loc.u, loc.v)
    }

    pub fn mean_confidence(&self, loc: Location, s: Stream) -> f64 {
        self.mean_conf[self.idx(loc, s)]
    }

    pub fn has_ground_truth(&self, loc: Location, s: Stream) -> bool {
        self.has_gt[self.idx(loc, s)]
    }

    pub fn is_high(&self, loc: Location, s: Stream) -> bool {
        self.is_high[self.idx(loc, s)]
    }

    /// Low-confidence with ground truth, or high-confidence without.
    pub fn is_source(&self, loc: Location, s: Stream) -> bool {
        self.source[self.idx(loc, s)]
    }

    /// High-confidence with ground truth, or low-confidence without.
    pub fn is_target(&self, loc: Location, s: Stream) -> bool {
        self.target[self.idx(loc, s)]
    }

    /// One stream is a source and the other a target at this location.
    pub fn is_complementary(&self, loc: Location) -> bool {
        let (w, s) = (Stream::Weak, Stream::Strong);
        (self.is_source(loc, w) && self.is_target(loc, s)) || (self.is_target(loc, w) && self.is_source(loc, s))
    }
}

pub fn compute_stats(dec: &PatchDecomposition) -> PatchStats {
    let g = dec.geometry;
    let count = g.patch_count();
    let mut mean_conf = Vec::with_capacity(count);
    let mut has_gt = Vec::with_capacity(count);
    for p in &dec.patches {
        let c = p.confidence.data();
        mean_conf.push(c.iter().map(|&v| f64::from(v)).sum::<f64>() / c.len() as f64);
        has_gt.push(p.supervision.data().contains(&1));
    }
    let mut is_high = vec![false; count];
    for loc in g.locations() {
        let w = g.patch_index(loc.batch, Stream::Weak, loc.layer, loc.u, loc.v);
        let s = g.patch_index(loc.batch, Stream::Strong, loc.layer, loc.u, loc.v);
        // Ties leave both streams low.
        is_high[w] = mean_conf[w] > mean_conf[s];
        is_high[s] = mean_conf[s] > mean_conf[w];
    }
    let source = (0..count).map(|i| (!is_high[i] && has_gt[i]) || (is_high[i] && !has_gt[i])).collect();
    let target = (0..count).map(|i| (is_high[i] && has_gt[i]) || (!is_high[i] && !has_gt[i])).collect();
    PatchStats { geometry: g, mean_conf, has_gt, is_high, source, target }
}

/// Inter-stream confidence gap per location.
#[derive(Clone, Debug, PartialEq)]
pub struct GapMap {
    geometry: PatchGeometry,
    values: Vec<f64>,
}

impl GapMap {
    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn get(&self, loc: Location) -> f64 {
        self.values[self.geometry.location_index(loc)]
    }

    /// Builds a gap map directly from per-location values (ordered as
    /// [`PatchGeometry::locations`]).
    pub fn from_values(geometry: PatchGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.location_count() {
            return Err(Error::Arity { what: "gap values", expected: geometry.location_count(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::value("confidence gaps must be finite"));
        }
        Ok(GapMap { geometry, values })
    }
}

/// `|mean_conf(weak) − mean_conf(strong)|` at every location.
pub fn confidence_gap(stats: &PatchStats) -> GapMap {
    let values = stats
        .geometry
        .locations()
        .map(|loc| (stats.mean_confidence(loc, Stream::Weak) - stats.mean_confidence(loc, Stream::Strong)).abs())
        .collect();
    GapMap { geometry: stats.geometry, values }
}

/// Top-K locations per (case, layer).
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionMask {
    geometry: PatchGeometry,
    budget: usize,
    selected: Vec<bool>,
}

impl SelectionMask {
    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn is_selected(&self, loc: Location) -> bool {
        self.selected[self.geometry.location_index(loc)]
    }

    pub fn selected(&self) -> impl Iterator<Item = Location> + '_ {
        self.geometry.locations().filter(|&l| self.is_selected(l))
    }
}

/// Marks the `k` largest gaps in every (case, layer); ties go to the smaller
/// linear grid index `u·n + v`.
pub fn topk_select(gaps: &GapMap, k: usize) -> Result<SelectionMask> {
    if k == 0 {
        return Err(Error::Config("Top-K budget must be at least 1".into()));
    }
    let g = gaps.geometry;
    let cells = g.grid * g.grid;
    let mut selected = vec![false; g.location_count()];
    for (layer_gaps, layer_sel) in gaps.values.chunks_exact(cells).zip(selected.chunks_exact_mut(cells)) {
        let mut order: Vec<usize> = (0..cells).collect();
        order.sort_by(|&a, &b| layer_gaps[b].total_cmp(&layer_gaps[a]).then(a.cmp(&b)));
        for &i in order.iter().take(k) {
            layer_sel[i] = true;
        }
    }
    Ok(SelectionMask { geometry: g, budget: k, selected })
}

/// Displaced images, labels and supervision in folded order, plus the
/// exchanged locations.
#[derive(Clone, Debug, PartialEq)]
pub struct Displaced {
    pub volumes: Vec<VolumeGrid>,
    pub labels: Vec<LabelGrid>,
    pub supervision: Vec<SupervisionGrid>,
    pub swaps: Vec<Location>,
}

/// Exchanges complementary selected patches and folds streams into the batch
/// as `[b0-weak, b0-strong, b1-weak, ...]`.
pub fn displace(dec: &PatchDecomposition, stats: &PatchStats, selection: &SelectionMask) -> Result<Displaced> {
    let (swapped, swaps) = dec.swap(stats, selection)?;
    let stack = swapped.unpatchify()?;
    Ok(Displaced { volumes: stack.volumes, labels: stack.labels, supervision: stack.supervision, swaps })
}

/// Re-applies a recorded list of swaps to a stream stack.
pub fn replay_displacement(
    stack: &StreamStack,
    axis: Axis,
    thickness: usize,
    grid: usize,
    swaps: &[Location],
) -> Result<Displaced> {
    let stack = patchify(stack, axis, thickness, grid)?.swap_locations(swaps)?.unpatchify()?;
    Ok(Displaced {
        volumes: stack.volumes,
        labels: stack.labels,
        supervision: stack.supervision,
        swaps: swaps.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims4() -> Dims {
        Dims::cube(4).unwrap()
    }

    /// One case; weak/strong confidences constant per stream.
    fn stack(conf_weak: f32, conf_strong: f32, gt: bool) -> StreamStack {
        let d = dims4();
        let vol = |off: f32| VolumeGrid::new(d, (0..d.len()).map(|i| off + i as f32).collect()).unwrap();
        StreamStack::new(
            vec![vol(0.0), vol(1000.0)],
            vec![LabelGrid::new(d, 3, vec![1; d.len()]).unwrap(), LabelGrid::new(d, 3, vec![2; d.len()]).unwrap()],
            vec![ConfidenceGrid::filled(d, conf_weak).unwrap(), ConfidenceGrid::filled(d, conf_strong).unwrap()],
            vec![SupervisionGrid::uniform(d, gt), SupervisionGrid::uniform(d, gt)],
        )
        .unwrap()
    }

    fn loc(layer: usize, u: usize, v: usize) -> Location {
        Location { batch: 0, layer, u, v }
    }

    #[test]
    fn patch_counts_for_a_small_cube() {
        let dec = patchify(&stack(0.5, 0.5, true), Axis::D, 2, 2).unwrap();
        let g = dec.geometry();
        assert_eq!(g.layers(), 2);
        assert_eq!(g.patch_dims(), Dims::cube(2).unwrap());
        assert_eq!(g.patch_count() / (2 * g.batch()), 8);
    }

    #[test]
    fn degenerate_tiling_is_the_whole_volume() {
        let s = stack(0.3, 0.6, false);
        let dec = patchify(&s, Axis::H, 4, 1).unwrap();
        assert_eq!(&dec.patch(0, Stream::Strong, 0, 0, 0).volume, s.volume(0, Stream::Strong));
    }

    #[test]
    fn patchify_rejects_non_divisors() {
        let s = stack(0.3, 0.6, false);
        let msg = patchify(&s, Axis::D, 3, 2).unwrap_err().to_string();
        assert!(msg.contains("p=3"), "{msg}");
        let msg = patchify(&s, Axis::W, 2, 3).unwrap_err().to_string();
        assert!(msg.contains("n=3") && msg.contains("along D"), "{msg}");
    }

    #[test]
    fn unpatchify_round_trips_every_axis() {
        let s = stack(0.3, 0.6, true);
        for axis in Axis::ALL {
            assert_eq!(patchify(&s, axis, 2, 2).unwrap().unpatchify().unwrap(), s);
        }
    }

    #[test]
    fn stats_for_confident_weak_stream() {
        let dec = patchify(&stack(0.9, 0.4, true), Axis::D, 2, 2).unwrap();
        let st = compute_stats(&dec);
        let l = loc(0, 0, 0);
        assert!(st.is_high(l, Stream::Weak) && st.is_target(l, Stream::Weak) && !st.is_source(l, Stream::Weak));
        assert!(!st.is_high(l, Stream::Strong) && st.is_source(l, Stream::Strong));
        assert!(st.is_complementary(l));
        assert!((st.mean_confidence(l, Stream::Weak) - 0.9).abs() < 1e-6);
    }

    #[test]
    fn ties_make_both_streams_low() {
        let st = compute_stats(&patchify(&stack(0.5, 0.5, true), Axis::D, 2, 2).unwrap());
        let l = loc(1, 1, 0);
        for s in Stream::BOTH {
            assert!(!st.is_high(l, s) && st.is_source(l, s) && !st.is_target(l, s));
        }
        assert!(!st.is_complementary(l));
        let st = compute_stats(&patchify(&stack(0.5, 0.5, false), Axis::D, 2, 2).unwrap());
        for s in Stream::BOTH {
            assert!(st.is_target(l, s) && !st.is_source(l, s));
        }
    }

    #[test]
    fn single_labeled_voxel_sets_the_flag() {
        let d = Dims::new(2, 2, 2).unwrap();
        let mut g = vec![0u8; 8];
        g[5] = 1;
        let s = StreamStack::new(
            vec![VolumeGrid::zeros(d), VolumeGrid::zeros(d)],
            vec![LabelGrid::zeros(d, 2).unwrap(), LabelGrid::zeros(d, 2).unwrap()],
            vec![ConfidenceGrid::filled(d, 0.2).unwrap(), ConfidenceGrid::filled(d, 0.2).unwrap()],
            vec![SupervisionGrid::new(d, g).unwrap(), SupervisionGrid::uniform(d, false)],
        )
        .unwrap();
        let st = compute_stats(&patchify(&s, Axis::D, 2, 1).unwrap());
        assert!(st.has_ground_truth(loc(0, 0, 0), Stream::Weak));
        assert!(!st.has_ground_truth(loc(0, 0, 0), Stream::Strong));
    }

    #[test]
    fn gap_is_absolute_difference() {
        let st = compute_stats(&patchify(&stack(0.9, 0.4, true), Axis::D, 2, 2).unwrap());
        assert!((confidence_gap(&st).get(loc(0, 1, 1)) - 0.5).abs() < 1e-6);
        let st2 = compute_stats(&patchify(&stack(0.4, 0.9, true), Axis::D, 2, 2).unwrap());
        assert_eq!(confidence_gap(&st).get(loc(0, 1, 1)), confidence_gap(&st2).get(loc(0, 1, 1)));
        let st3 = compute_stats(&patchify(&stack(0.7, 0.7, true), Axis::D, 2, 2).unwrap());
        assert_eq!(confidence_gap(&st3).get(loc(1, 0, 0)), 0.0);
    }

    fn one_layer_geometry() -> PatchGeometry {
        PatchGeometry::new(Dims::new(1, 2, 2).unwrap(), 1, Axis::D, 1, 2).unwrap()
    }

    #[test]
    fn topk_picks_largest_gaps() {
        let gaps = GapMap::from_values(one_layer_geometry(), vec![0.5, 0.2, 0.4, 0.1]).unwrap();
        let sel = topk_select(&gaps, 2).unwrap();
        let picked: Vec<_> = sel.selected().map(|l| (l.u, l.v)).collect();
        assert_eq!(picked, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn topk_saturates_and_breaks_ties() {
        let gaps = GapMap::from_values(one_layer_geometry(), vec![0.3; 4]).unwrap();
        assert_eq!(topk_select(&gaps, 7).unwrap().selected().count(), 4);
        let one: Vec<_> = topk_select(&gaps, 1).unwrap().selected().collect();
        assert_eq!(one, vec![loc(0, 0, 0)]);
        assert!(topk_select(&gaps, 0).is_err());
    }

    #[test]
    fn composite_label_cases() {
        let d = Dims::new(2, 2, 2).unwrap();
        let y = LabelGrid::new(d, 4, vec![1; 8]).unwrap();
        let p = LabelGrid::new(d, 4, vec![3; 8]).unwrap();
        assert_eq!(composite_labels(&y, &SupervisionGrid::uniform(d, true), &p).unwrap(), y);
        assert_eq!(composite_labels(&y, &SupervisionGrid::uniform(d, false), &p).unwrap(), p);
        let checker: Vec<u8> = (0..8)
            .map(|i| {
                let [z, yy, x] = d.coords(i);
                ((z + yy + x) % 2) as u8
            })
            .collect();
        let c = composite_labels(&y, &SupervisionGrid::new(d, checker.clone()).unwrap(), &p).unwrap();
        for (i, &g) in checker.iter().enumerate() {
            assert_eq!(c.data()[i], if g == 1 { 1 } else { 3 });
        }
    }

    #[test]
    fn no_complementary_pairs_means_no_change() {
        let s = stack(0.5, 0.5, true);
        let dec = patchify(&s, Axis::D, 2, 2).unwrap();
        let st = compute_stats(&dec);
        let sel = topk_select(&confidence_gap(&st), 4).unwrap();
        let out = displace(&dec, &st, &sel).unwrap();
        assert!(out.swaps.is_empty());
        assert_eq!(out.volumes, s.volumes());
        assert_eq!(out.labels, s.labels());
    }

    #[test]
    fn single_selected_pair_is_exchanged() {
        // Weak is low-confidence only in the (layer 1, u 0, v 1) patch.
        let d = dims4();
        let base = stack(0.9, 0.4, true);
        let geometry = PatchGeometry::new(d, 1, Axis::D, 2, 2).unwrap();
        let target = geometry.origin(1, 0, 1);
        let pd = geometry.patch_dims();
        let inside = |i: usize| {
            let c = d.coords(i);
            (0..3).all(|a| c[a] >= target[a] && c[a] < target[a] + pd.as_array()[a])
        };
        let weak_conf: Vec<f32> = (0..d.len()).map(|i| if inside(i) { 0.1 } else { 0.4 }).collect();
        let s = StreamStack::new(
            base.volumes().to_vec(),
            base.labels().to_vec(),
            vec![ConfidenceGrid::new(d, weak_conf).unwrap(), ConfidenceGrid::filled(d, 0.4).unwrap()],
            base.supervisions().to_vec(),
        )
        .unwrap();
        let dec = patchify(&s, Axis::D, 2, 2).unwrap();
        let st = compute_stats(&dec);
        let sel = topk_select(&confidence_gap(&st), 2).unwrap();
        let out = displace(&dec, &st, &sel).unwrap();
        assert_eq!(out.swaps, vec![loc(1, 0, 1)]);
        for i in 0..d.len() {
            let (w, st_) = (0, 1);
            if inside(i) {
                assert_eq!(out.volumes[w].data()[i], s.volumes()[st_].data()[i]);
                assert_eq!(out.labels[w].data()[i], 2);
                assert_eq!(out.volumes[st_].data()[i], s.volumes()[w].data()[i]);
                assert_eq!(out.labels[st_].data()[i], 1);
            } else {
                assert_eq!(out.volumes[w].data()[i], s.volumes()[w].data()[i]);
                assert_eq!(out.labels[st_].data()[i], 2);
            }
        }
    }

    #[test]
    fn swapping_twice_restores_the_stack() {
        let s = stack(0.9, 0.4, false);
        let dec = patchify(&s, Axis::W, 1, 2).unwrap();
        let st = compute_stats(&dec);
        let sel = topk_select(&confidence_gap(&st), 2).unwrap();
        let (once, swaps) = dec.swap(&st, &sel).unwrap();
        assert_eq!(swaps.len(), 2 * 4);
        assert_ne!(once, dec);
        let (twice, _) = once.swap(&st, &sel).unwrap();
        assert_eq!(twice.unpatchify().unwrap(), s);
    }

    #[test]
    fn rejects_stats_from_another_decomposition() {
        let s = stack(0.9, 0.4, true);
        let a = patchify(&s, Axis::D, 2, 2).unwrap();
        let b = patchify(&s, Axis::H, 2, 2).unwrap();
        let st = compute_stats(&b);
        let sel = topk_select(&confidence_gap(&st), 1).unwrap();
        assert!(matches!(displace(&a, &st, &sel), Err(Error::Consistency(_))));
    }

    #[test]
    fn recorded_swaps_replay_exactly() {
        let s = stack(0.9, 0.4, false);
        let dec = patchify(&s, Axis::H, 2, 2).unwrap();
        let st = compute_stats(&dec);
        let out = displace(&dec, &st, &topk_select(&confidence_gap(&st), 1).unwrap()).unwrap();
        let again = replay_displacement(&s, Axis::H, 2, 2, &out.swaps).unwrap();
        assert_eq!(again, out);
        let outside = [Location { batch: 1, layer: 0, u: 0, v: 0 }];
        assert!(matches!(replay_displacement(&s, Axis::H, 2, 2, &outside), Err(Error::Consistency(_))));
    }
}
