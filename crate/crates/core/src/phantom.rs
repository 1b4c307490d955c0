//! Synthetic layered phantoms: ellipsoidal structures placed in fixed bands
//! along one axis, so that relative layer positions are stable across cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Dims, LabelGrid, VolumeGrid};

/// Placement and appearance of one foreground class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// `[start, end]` voxel coordinates along the layer axis that the ellipsoid must stay within.
    pub band: [f64; 2],
    /// Nominal in-plane center as fractions of the two orthogonal extents.
    pub plane_center: [f64; 2],
    /// Uniform jitter (voxels) added to each in-plane center coordinate.
    pub jitter: f64,
    /// Per-axis (D, H, W) radius ranges in voxels.
    pub radius_min: [f64; 3],
    pub radius_max: [f64; 3],
    pub intensity_mean: f64,
    pub intensity_sigma: f64,
}

/// Per-case global intensity change `v ← scale·v + shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensityDrift {
    /// Half-width of the uniform scale range around 1.
    pub scale: f64,
    /// Half-width of the uniform shift range around 0.
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub layer_axis: Axis,
    pub background_mean: f64,
    pub background_sigma: f64,
    /// Classes 1..=C in id order; later classes win where ellipsoids overlap.
    pub classes: Vec<ClassSpec>,
    pub noise_sigma: f64,
    pub drift: IntensityDrift,
    pub seed: u64,
}

/// Fraction of the volume below which a class counts as a small structure.
pub const SMALL_STRUCTURE_FRACTION: f64 = 0.02;

impl PhantomSpec {
    /// 24³ phantom with three classes stacked along D: a large and a medium
    /// structure with overlapping bands and a small one below 2 % of the volume.
    pub fn desk(seed: u64) -> Self {
        PhantomSpec {
            dims: [24, 24, 24],
            layer_axis: Axis::D,
            background_mean: 0.1,
            background_sigma: 0.05,
            classes: vec![
                ClassSpec {
                    band: [1.0, 13.0],
                    plane_center: [0.4, 0.45],
                    jitter: 2.0,
                    radius_min: [4.0, 5.0, 5.0],
                    radius_max: [5.5, 7.0, 7.0],
                    intensity_mean: 0.4,
                    intensity_sigma: 0.05,
                },
                ClassSpec {
                    band: [9.0, 21.0],
                    plane_center: [0.6, 0.6],
                    jitter: 2.0,
                    radius_min: [3.0, 3.5, 3.5],
                    radius_max: [4.0, 5.0, 5.0],
                    intensity_mean: 0.65,
                    intensity_sigma: 0.05,
                },
                ClassSpec {
                    band: [15.0, 22.0],
                    plane_center: [0.5, 0.3],
                    jitter: 2.0,
                    radius_min: [1.5, 1.5, 1.5],
                    radius_max: [2.0, 2.2, 2.2],
                    intensity_mean: 0.9,
                    intensity_sigma: 0.05,
                },
            ],
            noise_sigma: 0.1,
            drift: IntensityDrift { scale: 0.15, shift: 0.1 },
            seed,
        }
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::from_array(self.dims)
    }

    /// Number of labels including background (C + 1).
    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims().map_err(|e| Error::Spec(e.to_string()))?;
        if self.classes.is_empty() || self.classes.len() > 255 {
            return Err(Error::Spec(format!("class count {} outside 1..=255", self.classes.len())));
        }
        let sigmas = [self.background_sigma, self.noise_sigma, self.drift.scale, self.drift.shift];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Spec("noise and drift parameters must be finite and nonnegative".into()));
        }
        let layer = self.layer_axis.index();
        let mut prev_start = f64::NEG_INFINITY;
        let mut small = false;
        for (i, c) in self.classes.iter().enumerate() {
            let id = i + 1;
            if (0..3).any(|a| !(c.radius_min[a] > 0.0 && c.radius_min[a] <= c.radius_max[a])) {
                return Err(Error::Spec(format!("class {id}: radius ranges must satisfy 0 < min <= max")));
            }
            if c.jitter < 0.0 || c.intensity_sigma < 0.0 {
                return Err(Error::Spec(format!("class {id}: jitter and sigma must be nonnegative")));
            }
            let [start, end] = c.band;
            if start < prev_start {
                return Err(Error::Spec(format!("class {id}: bands must be ordered along the layer axis")));
            }
            prev_start = start;
            let extent = dims.as_array()[layer] as f64;
            if start < 0.0 || end > extent - 1.0 {
                return Err(Error::Spec(format!("class {id}: band [{start}, {end}] leaves the volume")));
            }
            if 2.0 * c.radius_max[layer] > end - start {
                return Err(Error::Spec(format!(
                    "class {id}: radius {} exceeds half the band [{start}, {end}]",
                    c.radius_max[layer]
                )));
            }
            for (k, other) in self.layer_axis.in_plane().into_iter().enumerate() {
                let e = dims.extent(other) as f64 - 1.0;
                let center = c.plane_center[k] * e;
                let reach = c.jitter + c.radius_max[other.index()];
                if center - reach < 0.0 || center + reach > e {
                    return Err(Error::Spec(format!("class {id}: ellipsoid may leave the volume along {other}")));
                }
            }
            // Lattice points within an ellipsoid are bounded by its bounding box.
            let bound: f64 = c.radius_max.iter().map(|r| (2.0 * r).floor() + 1.0).product();
            small |= bound < SMALL_STRUCTURE_FRACTION * dims.len() as f64;
        }
        if !small {
            return Err(Error::Spec("no class is guaranteed to stay below 2% of the volume".into()));
        }
        Ok(())
    }
}

/// An axis-aligned ellipsoid with voxel-unit center and radii.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, voxel: [usize; 3]) -> bool {
        (0..3).map(|a| ((voxel[a] as f64 - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
    }
}

/// Draws the ellipsoid of every class.
pub fn place_classes<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Result<Vec<Ellipsoid>> {
    spec.validate()?;
    let dims = spec.dims()?;
    let layer = spec.layer_axis.index();
    let uniform = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut out = Vec::with_capacity(spec.classes.len());
    for c in &spec.classes {
        let radii: [f64; 3] = std::array::from_fn(|a| uniform(rng, c.radius_min[a], c.radius_max[a]));
        let mut center = [0.0; 3];
        center[layer] = uniform(rng, c.band[0] + radii[layer], c.band[1] - radii[layer]);
        for (k, other) in spec.layer_axis.in_plane().into_iter().enumerate() {
            let nominal = c.plane_center[k] * (dims.extent(other) as f64 - 1.0);
            center[other.index()] = nominal + uniform(rng, -c.jitter, c.jitter);
        }
        out.push(Ellipsoid { center, radii });
    }
    Ok(out)
}

/// Labels from ellipsoids; higher class ids overwrite lower ones.
pub fn rasterize(dims: Dims, ellipsoids: &[Ellipsoid]) -> Result<LabelGrid> {
    let mut data = vec![0u8; dims.len()];
    for (i, v) in data.iter_mut().enumerate() {
        let c = dims.coords(i);
        for (k, e) in ellipsoids.iter().enumerate() {
            if e.contains(c) {
                *v = (k + 1) as u8;
            }
        }
    }
    LabelGrid::new(dims, ellipsoids.len() + 1, data)
}

/// Generates one phantom case. Deterministic for a given spec and rng state.
pub fn generate_phantom<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Result<(VolumeGrid, LabelGrid)> {
    let dims = spec.dims()?;
    let ellipsoids = place_classes(spec, rng)?;
    let labels = rasterize(dims, &ellipsoids)?;
    let normal = |s: f64| Normal::new(0.0, s).map_err(|e| Error::Spec(e.to_string()));
    let noise = normal(spec.noise_sigma)?;
    let mut texture = vec![normal(spec.background_sigma)?];
    let mut means = vec![spec.background_mean];
    for c in &spec.classes {
        texture.push(normal(c.intensity_sigma)?);
        means.push(c.intensity_mean);
    }
    let scale = 1.0 + if spec.drift.scale > 0.0 { rng.random_range(-spec.drift.scale..=spec.drift.scale) } else { 0.0 };
    let shift = if spec.drift.shift > 0.0 { rng.random_range(-spec.drift.shift..=spec.drift.shift) } else { 0.0 };
    let data = labels
        .data()
        .iter()
        .map(|&l| {
            let l = usize::from(l);
            let v = means[l] + texture[l].sample(rng) + noise.sample(rng);
            (scale * v + shift) as f32
        })
        .collect();
    Ok((VolumeGrid::new(dims, data)?, labels))
}

/// `count` cases drawn from one seeded stream.
pub fn generate_cases(spec: &PhantomSpec, count: usize, stream: u64) -> Result<Vec<(VolumeGrid, LabelGrid)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    (0..count).map(|_| generate_phantom(spec, &mut rng)).collect()
}
