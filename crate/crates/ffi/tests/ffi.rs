use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use focalstack::pipeline::{build_representation, BuildOptions};
use focalstack::refocus::{Renderer, TargetSpec};
use focalstack::stack::synth::{presets, synth_stack};
use focalstack::stack::write_stack;
use focalstack_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn container(dir: &Path) -> std::path::PathBuf {
    let (stack, _) = synth_stack(&presets::two_plane_scene(64, 48, 1, 4, 4)).unwrap();
    let rep = build_representation(&stack, &BuildOptions::default()).unwrap().representation;
    let out = dir.join("rep");
    rep.serialize(&out).unwrap();
    out
}

fn last_error() -> String {
    let p = fsr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn open_render_and_free() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = container(tmp.path());
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { fsr_container_open(cstr(&dir).as_ptr(), &mut c) }, FsrStatus::Ok);
    assert!(!c.is_null());

    let mut info = FsrInfo::default();
    assert_eq!(unsafe { fsr_container_info(c, &mut info) }, FsrStatus::Ok);
    assert_eq!((info.k, info.width, info.height), (4, 64, 48));

    let mut labels = vec![0u16; 64 * 48];
    assert_eq!(unsafe { fsr_focus_labels(c, labels.as_mut_ptr(), labels.len()) }, FsrStatus::Ok);
    assert!(labels.iter().all(|&l| (1..=4).contains(&l)));
    assert_eq!(unsafe { fsr_focus_labels(c, labels.as_mut_ptr(), 10) }, FsrStatus::BufferTooSmall);

    let spec = CString::new(r#"{"mode":"single","labels":[2]}"#).unwrap();
    let mut buf = FsrBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    assert_eq!(unsafe { fsr_render_png(c, spec.as_ptr(), &mut buf) }, FsrStatus::Ok);
    let bytes = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
    unsafe { fsr_buffer_free(buf) };

    let rep = focalstack::representation::Representation::deserialize(&dir).unwrap();
    let expected = Renderer::new(&rep).render_png(&TargetSpec::single(2)).unwrap();
    assert_eq!(bytes, expected);

    let mut rgb = vec![0f32; 64 * 48 * 3];
    assert_eq!(unsafe { fsr_render_rgb(c, spec.as_ptr(), rgb.as_mut_ptr(), rgb.len()) }, FsrStatus::Ok);
    assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));

    unsafe { fsr_container_free(c) };
}

#[test]
fn errors_carry_status_and_message() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ptr::null_mut();
    let missing = cstr(&tmp.path().join("nope"));
    assert_ne!(unsafe { fsr_container_open(missing.as_ptr(), &mut c) }, FsrStatus::Ok);
    assert!(c.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { fsr_container_open(ptr::null(), &mut c) }, FsrStatus::NullArgument);

    let dir = container(tmp.path());
    assert_eq!(unsafe { fsr_container_open(cstr(&dir).as_ptr(), &mut c) }, FsrStatus::Ok);
    let mut buf = FsrBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    let bad = CString::new(r#"{"mode":"single","labels":[9]}"#).unwrap();
    assert_eq!(unsafe { fsr_render_png(c, bad.as_ptr(), &mut buf) }, FsrStatus::InvalidTargets);
    assert!(last_error().contains("outside"));
    assert!(buf.data.is_null());
    let junk = CString::new("{mode").unwrap();
    assert_eq!(unsafe { fsr_render_png(c, junk.as_ptr(), &mut buf) }, FsrStatus::MalformedSpec);
    unsafe { fsr_container_free(c) };
    unsafe { fsr_container_free(ptr::null_mut()) };
}

#[test]
fn build_writes_a_loadable_container() {
    let tmp = tempfile::tempdir().unwrap();
    let (stack, _) = synth_stack(&presets::two_plane_scene(48, 48, 1, 3, 3)).unwrap();
    write_stack(&tmp.path().join("stack"), &stack).unwrap();
    let out = tmp.path().join("rep");
    let st = unsafe { fsr_build(cstr(&tmp.path().join("stack")).as_ptr(), cstr(&out).as_ptr()) };
    assert_eq!(st, FsrStatus::Ok, "{}", last_error());
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { fsr_container_open(cstr(&out).as_ptr(), &mut c) }, FsrStatus::Ok);
    unsafe { fsr_container_free(c) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/focalstack.h")).unwrap();
    for f in [
        "fsr_last_error",
        "fsr_format_version",
        "fsr_container_open",
        "fsr_container_free",
        "fsr_container_info",
        "fsr_focus_labels",
        "fsr_render_png",
        "fsr_render_rgb",
        "fsr_buffer_free",
        "fsr_build",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct FsrContainer FsrContainer;"));
    let v = unsafe { CStr::from_ptr(fsr_format_version()) };
    assert_eq!(v.to_str().unwrap(), focalstack::representation::FORMAT_VERSION);
}
