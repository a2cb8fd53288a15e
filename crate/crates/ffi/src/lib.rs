//! C ABI over the focalstack engine.
//!
//! Containers are opaque handles. Every fallible call returns an
//! [`FsrStatus`]; the message of the last failure on the calling thread is
//! available from [`fsr_last_error`]. Buffers handed out by the library must
//! be released with [`fsr_buffer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use focalstack::pipeline::{build_representation, BuildOptions};
use focalstack::refocus::{RenderOptions, Renderer, TargetSpec};
use focalstack::representation::Representation;
use focalstack::stack::load_stack;
use focalstack::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    CorruptContainer = 4,
    VersionMismatch = 5,
    MalformedSpec = 6,
    InvalidTargets = 7,
    BufferTooSmall = 8,
    MissingSlices = 9,
    BuildFailed = 10,
    Panic = 11,
}

/// Loaded container ready for rendering.
pub struct FsrContainer {
    renderer: Renderer<'static>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FsrInfo {
    pub k: u32,
    pub width: u32,
    pub height: u32,
    pub label_count: u32,
    pub dual_count: u64,
    pub bokeh_count: u64,
}

/// Byte buffer owned by the library.
#[repr(C)]
pub struct FsrBuffer {
    pub data: *mut u8,
    pub len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FsrStatus, msg: impl Into<String>) -> FsrStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> FsrStatus {
    match e {
        Error::Io(_) | Error::Image { .. } => FsrStatus::Io,
        Error::CorruptContainer(_) | Error::Json(_) | Error::InvalidRepresentation(_) => FsrStatus::CorruptContainer,
        Error::VersionMismatch { .. } => FsrStatus::VersionMismatch,
        Error::MissingSlices { .. } => FsrStatus::MissingSlices,
        e if e.is_target_error() => FsrStatus::InvalidTargets,
        _ => FsrStatus::BuildFailed,
    }
}

fn from_error(e: Error) -> FsrStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

fn guarded(f: impl FnOnce() -> FsrStatus) -> FsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(FsrStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, FsrStatus> {
    if p.is_null() {
        return Err(fail(FsrStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FsrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn spec_arg(p: *const c_char) -> Result<TargetSpec, FsrStatus> {
    let text = str_arg(p, "spec")?;
    let spec: TargetSpec =
        serde_json::from_str(text).map_err(|e| fail(FsrStatus::MalformedSpec, e.to_string()))?;
    if let Some(m) = spec.malformed() {
        return Err(fail(FsrStatus::MalformedSpec, m));
    }
    Ok(spec)
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn fsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Container format version understood by this library.
#[no_mangle]
pub extern "C" fn fsr_format_version() -> *const c_char {
    c"fsr/1".as_ptr()
}

/// Opens the container directory at `dir`.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsr_container_open(dir: *const c_char, out: *mut *mut FsrContainer) -> FsrStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FsrStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match str_arg(dir, "dir") {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        match Representation::deserialize(&dir) {
            Ok(rep) => {
                *out = Box::into_raw(Box::new(FsrContainer {
                    renderer: Renderer::owned(rep),
                }));
                FsrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a container. Null is ignored.
///
/// # Safety
/// `c` must come from [`fsr_container_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fsr_container_free(c: *mut FsrContainer) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be a live container and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsr_container_info(c: *const FsrContainer, out: *mut FsrInfo) -> FsrStatus {
    guarded(|| {
        let (Some(c), Some(out)) = (c.as_ref(), out.as_mut()) else {
            return fail(FsrStatus::NullArgument, "container or out is null");
        };
        let rep = c.renderer.representation();
        *out = FsrInfo {
            k: rep.k as u32,
            width: rep.width as u32,
            height: rep.height as u32,
            label_count: rep.labels().len() as u32,
            dual_count: rep.dual_count() as u64,
            bokeh_count: rep.bokeh_count() as u64,
        };
        FsrStatus::Ok
    })
}

/// Copies the focus labels (row major, `width * height` values) into `out`.
///
/// # Safety
/// `out` must point to `len` writable `u16`s.
#[no_mangle]
pub unsafe extern "C" fn fsr_focus_labels(c: *const FsrContainer, out: *mut u16, len: usize) -> FsrStatus {
    guarded(|| {
        let Some(c) = c.as_ref() else {
            return fail(FsrStatus::NullArgument, "container is null");
        };
        let labels = c.renderer.representation().focus.labels.data();
        if out.is_null() {
            return fail(FsrStatus::NullArgument, "out is null");
        }
        if len < labels.len() {
            return fail(FsrStatus::BufferTooSmall, format!("need {} labels", labels.len()));
        }
        ptr::copy_nonoverlapping(labels.as_ptr(), out, labels.len());
        FsrStatus::Ok
    })
}

/// Renders the JSON target `spec` as a 16-bit PNG into a new buffer.
///
/// # Safety
/// `c` must be a live container, `spec` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsr_render_png(c: *const FsrContainer, spec: *const c_char, out: *mut FsrBuffer) -> FsrStatus {
    guarded(|| {
        let (Some(c), Some(out)) = (c.as_ref(), out.as_mut()) else {
            return fail(FsrStatus::NullArgument, "container or out is null");
        };
        *out = FsrBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        let spec = match spec_arg(spec) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match c.renderer.render_png(&spec) {
            Ok(bytes) => {
                let mut b = bytes.into_boxed_slice();
                *out = FsrBuffer {
                    data: b.as_mut_ptr(),
                    len: b.len(),
                };
                std::mem::forget(b);
                FsrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Renders the JSON target `spec` as interleaved linear RGB floats
/// (`width * height * 3` values).
///
/// # Safety
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn fsr_render_rgb(c: *const FsrContainer, spec: *const c_char, out: *mut f32, len: usize) -> FsrStatus {
    guarded(|| {
        let Some(c) = c.as_ref() else {
            return fail(FsrStatus::NullArgument, "container is null");
        };
        if out.is_null() {
            return fail(FsrStatus::NullArgument, "out is null");
        }
        let spec = match spec_arg(spec) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let rep = c.renderer.representation();
        if len < rep.width * rep.height * 3 {
            return fail(FsrStatus::BufferTooSmall, format!("need {} floats", rep.width * rep.height * 3));
        }
        let img = match spec
            .resolve(&rep.focus.labels, rep.k)
            .and_then(|t| c.renderer.render(&t, &RenderOptions::default()))
        {
            Ok(img) => img,
            Err(e) => return from_error(e),
        };
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, px) in dst.chunks_exact_mut(3).zip(img.data()) {
            d.copy_from_slice(px);
        }
        FsrStatus::Ok
    })
}

/// Releases a buffer from [`fsr_render_png`]. Empty buffers are ignored.
///
/// # Safety
/// `buf` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fsr_buffer_free(buf: FsrBuffer) {
    if !buf.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf.data, buf.len)));
    }
}

/// Builds a container at `out_dir` from the stack in `stack_dir` with the
/// default thresholds and the builtin composite measure.
///
/// # Safety
/// Both arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fsr_build(stack_dir: *const c_char, out_dir: *const c_char) -> FsrStatus {
    guarded(|| {
        let (input, output) = match (str_arg(stack_dir, "stack_dir"), str_arg(out_dir, "out_dir")) {
            (Ok(i), Ok(o)) => (PathBuf::from(i), PathBuf::from(o)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let result = load_stack(&input, None)
            .and_then(|stack| build_representation(&stack, &BuildOptions::default()))
            .and_then(|r| r.representation.serialize(&output));
        match result {
            Ok(()) => FsrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}
