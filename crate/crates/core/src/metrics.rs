//! Per-class Dice score and average surface distance.

use crate::error::{Error, Result};
use crate::grid::{Dims, LabelGrid};

fn check(pred: &LabelGrid, reference: &LabelGrid) -> Result<()> {
    if pred.dims() != reference.dims() {
        return Err(Error::shape(format!("prediction is {} but reference is {}", pred.dims(), reference.dims())));
    }
    Ok(())
}

/// `2|P∩R| / (|P| + |R|)` for one class; `None` when the class is absent from both.
pub fn dice_score(pred: &LabelGrid, reference: &LabelGrid, class: u8) -> Result<Option<f64>> {
    check(pred, reference)?;
    let (mut inter, mut p, mut r) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(reference.data()) {
        let (ia, ib) = (a == class, b == class);
        p += usize::from(ia);
        r += usize::from(ib);
        inter += usize::from(ia && ib);
    }
    if p + r == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * inter as f64 / (p + r) as f64))
}

/// Voxels of `class` with at least one 6-connected neighbour outside the
/// class; the volume border counts as outside.
pub fn surface_voxels(labels: &LabelGrid, class: u8) -> Vec<[usize; 3]> {
    let dims = labels.dims();
    let data = labels.data();
    let [d, h, w] = dims.as_array();
    let inside = |z: usize, y: usize, x: usize| data[dims.index(z, y, x)] == class;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !inside(z, y, x) {
                    continue;
                }
                let border = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                if border
                    || !inside(z - 1, y, x)
                    || !inside(z + 1, y, x)
                    || !inside(z, y - 1, x)
                    || !inside(z, y + 1, x)
                    || !inside(z, y, x - 1)
                    || !inside(z, y, x + 1)
                {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

fn mean_min_distance(from: &[[usize; 3]], to: &[[usize; 3]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    let dz = a[0] as f64 - b[0] as f64;
                    let dy = a[1] as f64 - b[1] as f64;
                    let dx = a[2] as f64 - b[2] as f64;
                    dz * dz + dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric average surface distance in voxels: the mean of the two directed
/// mean nearest-surface distances. `None` if either mask is empty.
pub fn average_surface_distance(pred: &LabelGrid, reference: &LabelGrid, class: u8) -> Result<Option<f64>> {
    check(pred, reference)?;
    let sp = surface_voxels(pred, class);
    let sr = surface_voxels(reference, class);
    if sp.is_empty() || sr.is_empty() {
        return Ok(None);
    }
    Ok(Some(0.5 * (mean_min_distance(&sp, &sr) + mean_min_distance(&sr, &sp))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    pub dice: Option<f64>,
    pub asd: Option<f64>,
}

/// Per-class Dice/ASD over the foreground classes, with means over the defined entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    /// Evaluates classes `1..num_classes`; `with_asd = false` skips the surface distance.
    pub fn evaluate(pred: &LabelGrid, reference: &LabelGrid, with_asd: bool) -> Result<Self> {
        check(pred, reference)?;
        if pred.num_classes() != reference.num_classes() {
            return Err(Error::shape("prediction and reference have different class counts"));
        }
        let classes = (1..reference.num_classes())
            .map(|c| {
                let c = c as u8;
                Ok(ClassMetrics {
                    class: c,
                    dice: dice_score(pred, reference, c)?,
                    asd: if with_asd { average_surface_distance(pred, reference, c)? } else { None },
                })
            })
            .collect::<Result<_>>()?;
        Ok(MetricReport { classes })
    }

    pub fn mean_dice(&self) -> Option<f64> {
        mean_defined(self.classes.iter().map(|c| c.dice))
    }

    pub fn mean_asd(&self) -> Option<f64> {
        mean_defined(self.classes.iter().map(|c| c.asd))
    }
}

/// Class-wise mean over several reports, then the mean over classes.
pub fn mean_dice_over(reports: &[MetricReport]) -> Option<f64> {
    let classes = reports.first()?.classes.len();
    mean_defined((0..classes).map(|i| mean_defined(reports.iter().map(|r| r.classes[i].dice))))
}

/// Builds a label grid from a voxel predicate; handy for fixtures.
pub fn mask_from(dims: Dims, num_classes: usize, class: u8, inside: impl Fn([usize; 3]) -> bool) -> Result<LabelGrid> {
    let data = (0..dims.len()).map(|i| if inside(dims.coords(i)) { class } else { 0 }).collect();
    LabelGrid::new(dims, num_classes, data)
}
