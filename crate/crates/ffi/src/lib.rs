//! C ABI over the layermix library.
//!
//! Grids and shuffle plans are exposed as opaque handles created by `lm_*_new`
//! / `lm_*_read` / `lm_*_sample` functions and released with the matching
//! `lm_*_free`. Every fallible function returns an [`LmStatus`]; on failure
//! the message is available from [`lm_last_error`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use layermix::io::{read_volume, write_volume, GridKind, VolumeFile};
use layermix::metrics::{average_surface_distance, dice_score};
use layermix::schedule::{consistency_rampup, poly_lr, ScheduleConfig};
use layermix::shuffle::{choose_axis, recover_batch, shuffle_batch, ShuffleMatrix, ShufflePlan};
use layermix::{Axis, Dims, Error, LabelGrid, Lattice, VolumeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid configuration or argument value.
    Config = 2,
    /// Shapes, kinds or class counts disagree.
    Shape = 3,
    /// Malformed volume file.
    Format = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Opaque grid of any kind (image, label, confidence, supervision).
pub struct LmVolume(VolumeFile);

/// Opaque slice-block shuffle plan.
pub struct LmShufflePlan(ShufflePlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LmStatus {
    match e {
        Error::Io(_) => LmStatus::Io,
        Error::Format { .. } => LmStatus::Format,
        Error::Shape(_) | Error::Arity { .. } | Error::Range { .. } | Error::Consistency(_) => LmStatus::Shape,
        _ => LmStatus::Config,
    }
}

struct Fail(LmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LmStatus::NullPointer, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(LmStatus::Config, "path is not valid UTF-8".into()))
}

fn dims(d: usize, h: usize, w: usize) -> Result<Dims, Fail> {
    Ok(Dims::new(d, h, w)?)
}

fn axis_from(code: i32) -> Result<Option<Axis>, Fail> {
    match code {
        -1 => Ok(None),
        0..=2 => Ok(Axis::from_index(code as usize)),
        other => Err(Fail(LmStatus::Config, format!("axis code {other} is not -1 (random), 0 (D), 1 (H) or 2 (W)"))),
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn lm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Image volume from `d*h*w` floats in (D, H, W) row-major order.
#[no_mangle]
pub unsafe extern "C" fn lm_volume_new_image(
    d: usize,
    h: usize,
    w: usize,
    data: *const f32,
    out_volume: *mut *mut LmVolume,
) -> LmStatus {
    guard(|| {
        let dims = dims(d, h, w)?;
        let values = slice(data, dims.len(), "data")?.to_vec();
        *out(out_volume, "out_volume")? = boxed(LmVolume(VolumeFile::Image(VolumeGrid::new(dims, values)?)));
        Ok(())
    })
}

/// Label volume with class ids below `classes`.
#[no_mangle]
pub unsafe extern "C" fn lm_volume_new_label(
    d: usize,
    h: usize,
    w: usize,
    classes: usize,
    data: *const u8,
    out_volume: *mut *mut LmVolume,
) -> LmStatus {
    guard(|| {
        let dims = dims(d, h, w)?;
        let values = slice(data, dims.len(), "data")?.to_vec();
        *out(out_volume, "out_volume")? = boxed(LmVolume(VolumeFile::Label(LabelGrid::new(dims, classes, values)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lm_volume_free(volume: *mut LmVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lm_volume_read(path_utf8: *const c_char, out_volume: *mut *mut LmVolume) -> LmStatus {
    guard(|| {
        let file = read_volume(path(path_utf8)?)?;
        *out(out_volume, "out_volume")? = boxed(LmVolume(file));
        Ok(())
    })
}

/// Atomic write in the volume file format.
#[no_mangle]
pub unsafe extern "C" fn lm_volume_write(volume: *const LmVolume, path_utf8: *const c_char) -> LmStatus {
    guard(|| {
        let v = deref(volume, "volume")?;
        write_volume(path(path_utf8)?, &v.0)?;
        Ok(())
    })
}

/// Kind byte as stored in files: 0 image, 1 label, 2 confidence, 3 supervision.
#[no_mangle]
pub unsafe extern "C" fn lm_volume_kind(volume: *const LmVolume, out_kind: *mut u8) -> LmStatus {
    guard(|| {
        *out(out_kind, "out_kind")? = deref(volume, "volume")?.0.kind() as u8;
        Ok(())
    })
}

/// Writes D, H, W into `out_dims[0..3]` and the class count (0 unless labels).
#[no_mangle]
pub unsafe extern "C" fn lm_volume_shape(
    volume: *const LmVolume,
    out_dims: *mut usize,
    out_classes: *mut usize,
) -> LmStatus {
    guard(|| {
        let v = &deref(volume, "volume")?.0;
        if out_dims.is_null() {
            return Err(null("out_dims"));
        }
        std::slice::from_raw_parts_mut(out_dims, 3).copy_from_slice(&v.dims().as_array());
        *out(out_classes, "out_classes")? = v.class_count();
        Ok(())
    })
}

/// Copies the voxel values of an image or confidence volume.
#[no_mangle]
pub unsafe extern "C" fn lm_volume_copy_floats(volume: *const LmVolume, buffer: *mut f32, len: usize) -> LmStatus {
    guard(|| {
        let values = match &deref(volume, "volume")?.0 {
            VolumeFile::Image(g) => g.data(),
            VolumeFile::Confidence(g) => g.data(),
            other => return Err(Fail(LmStatus::Shape, format!("{:?} volumes store bytes", other.kind()))),
        };
        copy_into(values, buffer, len)
    })
}

/// Copies the voxel values of a label or supervision volume.
#[no_mangle]
pub unsafe extern "C" fn lm_volume_copy_bytes(volume: *const LmVolume, buffer: *mut u8, len: usize) -> LmStatus {
    guard(|| {
        let values = match &deref(volume, "volume")?.0 {
            VolumeFile::Label(g) => g.data(),
            VolumeFile::Supervision(g) => g.data(),
            other => return Err(Fail(LmStatus::Shape, format!("{:?} volumes store floats", other.kind()))),
        };
        copy_into(values, buffer, len)
    })
}

unsafe fn copy_into<T: Copy>(values: &[T], buffer: *mut T, len: usize) -> Result<(), Fail> {
    if len != values.len() {
        return Err(Fail(LmStatus::Shape, format!("buffer holds {len} values, volume has {}", values.len())));
    }
    if buffer.is_null() {
        return Err(null("buffer"));
    }
    std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(values);
    Ok(())
}

/// Samples a plan for `batch` volumes with extent `extent` along the axis.
/// `axis` is 0 (D), 1 (H), 2 (W), or -1 to draw it from the seed as well.
#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_plan_sample(
    seed: u64,
    axis: i32,
    extent: usize,
    p: usize,
    batch: usize,
    out_plan: *mut *mut LmShufflePlan,
) -> LmStatus {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = axis_from(axis)?.unwrap_or_else(|| choose_axis(&mut rng));
        let plan = ShufflePlan::sample(&mut rng, axis, extent, p, batch)?;
        *out(out_plan, "out_plan")? = boxed(LmShufflePlan(plan));
        Ok(())
    })
}

/// Plan from an explicit `rows × cols` table given column by column
/// (`entries[j * rows + i] = R[i, j]`).
#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_plan_new(
    axis: i32,
    p: usize,
    rows: usize,
    cols: usize,
    entries: *const usize,
    out_plan: *mut *mut LmShufflePlan,
) -> LmStatus {
    guard(|| {
        let axis =
            axis_from(axis)?.ok_or_else(|| Fail(LmStatus::Config, "an explicit plan needs a fixed axis".into()))?;
        if rows == 0 {
            return Err(Fail(LmStatus::Config, "a plan needs at least one row".into()));
        }
        let count = rows.checked_mul(cols).ok_or_else(|| Fail(LmStatus::Config, "table too large".into()))?;
        let table = slice(entries, count, "entries")?;
        let columns = table.chunks(rows).map(<[usize]>::to_vec).collect();
        let plan = ShufflePlan::new(axis, p, ShuffleMatrix::from_columns(columns)?)?;
        *out(out_plan, "out_plan")? = boxed(LmShufflePlan(plan));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_plan_free(plan: *mut LmShufflePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Axis code (0 D, 1 H, 2 W), thickness p, batch size and block count.
#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_plan_info(
    plan: *const LmShufflePlan,
    out_axis: *mut i32,
    out_p: *mut usize,
    out_batch: *mut usize,
    out_blocks: *mut usize,
) -> LmStatus {
    guard(|| {
        let plan = &deref(plan, "plan")?.0;
        *out(out_axis, "out_axis")? = plan.axis().index() as i32;
        *out(out_p, "out_p")? = plan.thickness();
        *out(out_batch, "out_batch")? = plan.batch();
        *out(out_blocks, "out_blocks")? = plan.blocks();
        Ok(())
    })
}

/// `R[row, col]`, or `S[row, col]` of the inverse when `inverse` is nonzero.
#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_plan_entry(
    plan: *const LmShufflePlan,
    row: usize,
    col: usize,
    inverse: i32,
    out_entry: *mut usize,
) -> LmStatus {
    guard(|| {
        let plan = &deref(plan, "plan")?.0;
        if row >= plan.batch() || col >= plan.blocks() {
            return Err(Fail(
                LmStatus::Shape,
                format!("entry ({row}, {col}) outside {}x{}", plan.batch(), plan.blocks()),
            ));
        }
        *out(out_entry, "out_entry")? =
            if inverse != 0 { plan.inverse().get(row, col) } else { plan.matrix().get(row, col) };
        Ok(())
    })
}

fn run_plan<G: Lattice + Into<VolumeFile>>(
    grids: Vec<G>,
    plan: &ShufflePlan,
    forward: bool,
) -> Result<Vec<VolumeFile>, Fail> {
    let out = if forward { shuffle_batch(&grids, plan)? } else { recover_batch(&grids, plan)? };
    Ok(out.into_iter().map(Into::into).collect())
}

fn convert<G>(files: &[VolumeFile], f: fn(VolumeFile) -> layermix::Result<G>) -> Result<Vec<G>, Fail> {
    Ok(files.iter().cloned().map(f).collect::<layermix::Result<Vec<_>>>()?)
}

unsafe fn apply(
    plan: *const LmShufflePlan,
    inputs: *const *const LmVolume,
    count: usize,
    outputs: *mut *mut LmVolume,
    forward: bool,
) -> LmStatus {
    guard(|| {
        let plan = &deref(plan, "plan")?.0;
        let handles = slice(inputs, count, "inputs")?;
        if count == 0 {
            return Err(Fail(LmStatus::Shape, "empty batch".into()));
        }
        if outputs.is_null() {
            return Err(null("outputs"));
        }
        let files =
            handles.iter().map(|&h| deref(h, "input volume").map(|v| v.0.clone())).collect::<Result<Vec<_>, _>>()?;
        let kind = files[0].kind();
        if files.iter().any(|f| f.kind() != kind) {
            return Err(Fail(LmStatus::Shape, "all volumes of a batch must have the same kind".into()));
        }
        let result = match kind {
            GridKind::Image => run_plan(convert(&files, VolumeFile::into_image)?, plan, forward)?,
            GridKind::Label => run_plan(convert(&files, VolumeFile::into_label)?, plan, forward)?,
            GridKind::Confidence => run_plan(convert(&files, VolumeFile::into_confidence)?, plan, forward)?,
            GridKind::Supervision => run_plan(convert(&files, VolumeFile::into_supervision)?, plan, forward)?,
        };
        let slots = std::slice::from_raw_parts_mut(outputs, count);
        for (slot, file) in slots.iter_mut().zip(result) {
            *slot = boxed(LmVolume(file));
        }
        Ok(())
    })
}

/// Shuffles `count` volumes of one kind; writes `count` new handles to `outputs`.
#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_apply(
    plan: *const LmShufflePlan,
    inputs: *const *const LmVolume,
    count: usize,
    outputs: *mut *mut LmVolume,
) -> LmStatus {
    apply(plan, inputs, count, outputs, true)
}

/// Undoes [`lm_shuffle_apply`] for the same plan.
#[no_mangle]
pub unsafe extern "C" fn lm_shuffle_recover(
    plan: *const LmShufflePlan,
    inputs: *const *const LmVolume,
    count: usize,
    outputs: *mut *mut LmVolume,
) -> LmStatus {
    apply(plan, inputs, count, outputs, false)
}

unsafe fn label_pair<'a>(
    pred: *const LmVolume,
    reference: *const LmVolume,
) -> Result<(&'a LabelGrid, &'a LabelGrid), Fail> {
    let as_label = |v: &'a LmVolume| match &v.0 {
        VolumeFile::Label(l) => Ok(l),
        other => Err(Fail(LmStatus::Shape, format!("expected a label volume, got {:?}", other.kind()))),
    };
    Ok((as_label(deref(pred, "pred")?)?, as_label(deref(reference, "reference")?)?))
}

/// Dice of one class. `*out_defined` is 0 when the class is absent from both.
#[no_mangle]
pub unsafe extern "C" fn lm_dice_score(
    pred: *const LmVolume,
    reference: *const LmVolume,
    class_id: u8,
    out_value: *mut f64,
    out_defined: *mut i32,
) -> LmStatus {
    guard(|| {
        let (p, r) = label_pair(pred, reference)?;
        let v = dice_score(p, r, class_id)?;
        *out(out_value, "out_value")? = v.unwrap_or(f64::NAN);
        *out(out_defined, "out_defined")? = i32::from(v.is_some());
        Ok(())
    })
}

/// Symmetric average surface distance in voxels. `*out_defined` is 0 when
/// either mask is empty.
#[no_mangle]
pub unsafe extern "C" fn lm_average_surface_distance(
    pred: *const LmVolume,
    reference: *const LmVolume,
    class_id: u8,
    out_value: *mut f64,
    out_defined: *mut i32,
) -> LmStatus {
    guard(|| {
        let (p, r) = label_pair(pred, reference)?;
        let v = average_surface_distance(p, r, class_id)?;
        *out(out_value, "out_value")? = v.unwrap_or(f64::NAN);
        *out(out_defined, "out_defined")? = i32::from(v.is_some());
        Ok(())
    })
}

/// Consistency weight at `iter` for a ramp of `rampup_iters` up to `lambda_max`.
#[no_mangle]
pub extern "C" fn lm_consistency_rampup(iter: u64, rampup_iters: u64, lambda_max: f64) -> f64 {
    let cfg = ScheduleConfig { rampup_iters: rampup_iters.max(1), lambda_u_max: lambda_max, ..Default::default() };
    consistency_rampup(iter, &cfg)
}

/// Polynomial learning rate `base_lr · (1 − iter/max_iters)^power`.
#[no_mangle]
pub extern "C" fn lm_poly_lr(iter: u64, base_lr: f64, max_iters: u64, power: f64) -> f64 {
    let cfg = ScheduleConfig { base_lr, max_iters: max_iters.max(1), lr_pow: power, ..Default::default() };
    poly_lr(iter, &cfg)
}
