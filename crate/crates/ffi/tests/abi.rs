use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use impsy_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(impsy_last_error()) }.to_string_lossy().into_owned()
}

fn shape(d: u32) -> ImpsyShape {
    ImpsyShape { dimension: d, layers: 2, hidden: 8, mixtures: 3 }
}

#[test]
fn model_lifecycle_and_generation() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(impsy_model_random(shape(2), 7, &mut model), ImpsyStatus::Ok);
        let mut s = ImpsyShape::default();
        assert_eq!(impsy_model_shape(model, &mut s), ImpsyStatus::Ok);
        assert_eq!(s, shape(2));

        let mut gen = ptr::null_mut();
        assert_eq!(impsy_generator_new(model, 1, 1.0, 1.0, 5.0, &mut gen), ImpsyStatus::Ok);
        // the generator keeps the parameters alive on its own
        impsy_model_free(model);
        assert_eq!(impsy_generator_observe(gen, [0.2, 0.8].as_ptr(), 2, 0.1), ImpsyStatus::Ok);
        let mut values = [0.0f64; 2];
        let mut dt = -1.0;
        for _ in 0..50 {
            assert_eq!(impsy_generator_next(gen, values.as_mut_ptr(), 2, &mut dt), ImpsyStatus::Ok);
            assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((0.0..=5.0).contains(&dt));
        }
        assert_eq!(impsy_generator_next(gen, values.as_mut_ptr(), 1, &mut dt), ImpsyStatus::BufferTooSmall);
        assert_eq!(impsy_generator_observe(gen, [0.5].as_ptr(), 1, 0.1), ImpsyStatus::DimensionMismatch);
        assert!(last_error().contains("dimension mismatch"), "{}", last_error());
        assert_eq!(impsy_generator_reset(gen), ImpsyStatus::Ok);
        impsy_generator_free(gen);
    }
}

#[test]
fn same_seed_same_samples() {
    let run = || unsafe {
        let mut model = ptr::null_mut();
        impsy_model_random(shape(1), 3, &mut model);
        let mut gen = ptr::null_mut();
        impsy_generator_new(model, 11, 1.0, 1.0, 5.0, &mut gen);
        let mut out = Vec::new();
        for _ in 0..20 {
            let mut v = [0.0];
            let mut dt = 0.0;
            impsy_generator_next(gen, v.as_mut_ptr(), 1, &mut dt);
            out.push((v[0], dt));
        }
        impsy_generator_free(gen);
        impsy_model_free(model);
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn weight_files_round_trip_and_corruption_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.mdrn").to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        impsy_model_random(shape(3), 1, &mut model);
        assert_eq!(impsy_model_save(model, path.as_ptr()), ImpsyStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(impsy_model_load(path.as_ptr(), &mut loaded), ImpsyStatus::Ok);
        let mut s = ImpsyShape::default();
        impsy_model_shape(loaded, &mut s);
        assert_eq!(s, shape(3));

        let mut bytes = std::fs::read(dir.path().join("m.mdrn")).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        let mut bad = ptr::null_mut();
        assert_eq!(impsy_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut bad), ImpsyStatus::Checksum);
        assert!(bad.is_null());
        assert!(!last_error().is_empty());

        let missing = CString::new(dir.path().join("nope.mdrn").to_str().unwrap()).unwrap();
        assert_eq!(impsy_model_load(missing.as_ptr(), &mut bad), ImpsyStatus::Io);
        impsy_model_free(model);
        impsy_model_free(loaded);
    }
}

#[test]
fn null_pointers_rejected() {
    unsafe {
        assert_eq!(impsy_model_load(ptr::null(), ptr::null_mut()), ImpsyStatus::NullPointer);
        assert!(last_error().contains("NULL"));
        assert_eq!(impsy_generator_reset(ptr::null_mut()), ImpsyStatus::NullPointer);
        impsy_model_free(ptr::null_mut());
        impsy_generator_free(ptr::null_mut());
        impsy_parser_free(ptr::null_mut());
        assert_eq!(impsy_parser_dropped(ptr::null()), 0);
    }
}

#[test]
fn parser_handles_running_status_across_feeds() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(impsy_parser_new(&mut p), ImpsyStatus::Ok);
        for chunk in [&[0x90u8, 60][..], &[100, 62], &[0], &[0x05]] {
            assert_eq!(impsy_parser_feed(p, chunk.as_ptr(), chunk.len()), ImpsyStatus::Ok);
        }
        let mut msgs = Vec::new();
        loop {
            let mut m = std::mem::zeroed::<ImpsyMidiMessage>();
            let mut has = 0u8;
            assert_eq!(impsy_parser_next(p, &mut m, &mut has), ImpsyStatus::Ok);
            if has == 0 {
                break;
            }
            msgs.push(m);
        }
        assert_eq!(msgs.len(), 2);
        assert_eq!((msgs[0].kind, msgs[0].data1, msgs[0].data2), (ImpsyMidiKind::NoteOn, 60, 100));
        assert_eq!((msgs[1].kind, msgs[1].data1, msgs[1].data2), (ImpsyMidiKind::NoteOff, 62, 0));
        assert_eq!(impsy_parser_dropped(p), 0);
        impsy_parser_free(p);
    }
}

#[test]
fn serialize_matches_wire_format() {
    unsafe {
        let m = ImpsyMidiMessage { kind: ImpsyMidiKind::ControlChange, channel: 3, data1: 7, data2: 127, raw_len: 0, raw: [0; 3] };
        let mut out = [0u8; 3];
        let mut n = 0;
        assert_eq!(impsy_midi_serialize(&m, out.as_mut_ptr(), 3, &mut n), ImpsyStatus::Ok);
        assert_eq!(&out[..n], &[0xB3, 7, 127]);
        assert_eq!(impsy_midi_serialize(&m, out.as_mut_ptr(), 2, &mut n), ImpsyStatus::BufferTooSmall);
        assert_eq!(n, 3);
        let bad = ImpsyMidiMessage { data1: 200, ..m };
        assert_eq!(impsy_midi_serialize(&bad, out.as_mut_ptr(), 3, &mut n), ImpsyStatus::InvalidArgument);
    }
}

#[test]
fn osc_encoding_through_abi() {
    let addr = CString::new("/impsy/frame").unwrap();
    let mut out = [0u8; 64];
    let mut n = 0;
    unsafe {
        assert_eq!(impsy_osc_encode(addr.as_ptr(), [0.5f32].as_ptr(), 1, out.as_mut_ptr(), 64, &mut n), ImpsyStatus::Ok);
    }
    let mut want = b"/impsy/frame\0\0\0\0,f\0\0".to_vec();
    want.extend_from_slice(&[0x3F, 0, 0, 0]);
    assert_eq!(&out[..n], want.as_slice());
    let bad = CString::new("impsy").unwrap();
    unsafe {
        assert_eq!(impsy_osc_encode(bad.as_ptr(), ptr::null(), 0, out.as_mut_ptr(), 64, &mut n), ImpsyStatus::InvalidOscAddress);
    }
}

#[test]
fn config_validation_lists_violations() {
    let bad = CString::new(
        r#"{"dimension":1,"model_file":"m.mdrn","outputs":[{"device":"x","kind":"control_change","channel":0,"number":1,"dim":0,"out_lo":100,"out_hi":10}]}"#,
    )
    .unwrap();
    unsafe {
        assert_eq!(impsy_config_validate(bad.as_ptr()), ImpsyStatus::InvalidConfig);
    }
    assert!(last_error().contains("out_lo 100 > out_hi 10"), "{}", last_error());
    let good = CString::new(r#"{"dimension":1,"model_file":"m.mdrn"}"#).unwrap();
    unsafe {
        assert_eq!(impsy_config_validate(good.as_ptr()), ImpsyStatus::Ok);
    }
    assert_eq!(last_error(), "");
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(impsy_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/impsy.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["impsy_model_load", "impsy_generator_next", "impsy_parser_feed", "impsy_osc_encode", "IMPSY_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let out = Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header]).output();
        match out {
            Ok(o) => assert!(o.status.success(), "{compiler}: {}", String::from_utf8_lossy(&o.stderr)),
            Err(_) => eprintln!("{compiler} not available, skipping syntax check"),
        }
    }
}
