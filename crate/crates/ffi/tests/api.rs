use std::ffi::{CStr, CString};
use std::ptr;

use nbquic_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn publish_subscribe_round_trip() {
    unsafe {
        let mut reg = ptr::null_mut();
        assert_eq!(nbq_registry_new(0, 16, 0, &mut reg), NbqStatus::Ok);
        let topic = c("t-1");
        let mut created = false;
        assert_eq!(nbq_registry_create_topic(reg, topic.as_ptr(), &mut created), NbqStatus::Ok);
        assert!(created);
        assert_eq!(nbq_registry_create_topic(reg, topic.as_ptr(), &mut created), NbqStatus::Ok);
        assert!(!created);

        let mut sub = ptr::null_mut();
        assert_eq!(nbq_subscribe(reg, topic.as_ptr(), &mut sub), NbqStatus::Ok);
        let mut n = 0usize;
        assert_eq!(nbq_registry_subscriber_count(reg, topic.as_ptr(), &mut n), NbqStatus::Ok);
        assert_eq!(n, 1);

        let mut seq = 0;
        let msg = b"hello world";
        assert_eq!(nbq_registry_publish(reg, topic.as_ptr(), msg.as_ptr(), msg.len(), &mut seq), NbqStatus::Ok);
        assert_eq!(seq, 1);
        let big = [0u8; 17];
        assert_eq!(
            nbq_registry_publish(reg, topic.as_ptr(), big.as_ptr(), big.len(), ptr::null_mut()),
            NbqStatus::PayloadTooLarge
        );

        // too small first, then the same event again
        let mut buf = [0u8; 4];
        let mut len = 0;
        assert_eq!(nbq_subscription_next(sub, buf.as_mut_ptr(), buf.len(), &mut len, &mut seq), NbqStatus::BufferTooSmall);
        assert_eq!(len, msg.len());
        let mut buf = [0u8; 32];
        assert_eq!(nbq_subscription_next(sub, buf.as_mut_ptr(), buf.len(), &mut len, &mut seq), NbqStatus::Ok);
        assert_eq!(&buf[..len], msg);
        assert_eq!(nbq_subscription_next(sub, buf.as_mut_ptr(), buf.len(), &mut len, &mut seq), NbqStatus::Empty);

        assert_eq!(nbq_registry_delete_topic(reg, topic.as_ptr()), NbqStatus::Ok);
        assert_eq!(nbq_subscription_next(sub, buf.as_mut_ptr(), buf.len(), &mut len, &mut seq), NbqStatus::Closed);
        assert_eq!(nbq_registry_delete_topic(reg, topic.as_ptr()), NbqStatus::NotFound);

        // the subscription outlives the registry handle
        nbq_registry_free(reg);
        nbq_subscription_free(sub);
    }
}

#[test]
fn bad_inputs_return_codes() {
    unsafe {
        let mut reg = ptr::null_mut();
        assert_eq!(nbq_registry_new(0, 0, 0, ptr::null_mut()), NbqStatus::NullPointer);
        assert_eq!(nbq_registry_new(0, 0, 0, &mut reg), NbqStatus::Ok);
        assert_eq!(nbq_registry_create_topic(reg, c("a/b").as_ptr(), ptr::null_mut()), NbqStatus::InvalidTopic);
        assert_eq!(nbq_registry_create_topic(reg, ptr::null(), ptr::null_mut()), NbqStatus::NullPointer);
        assert_eq!(nbq_registry_create_topic(ptr::null(), c("a").as_ptr(), ptr::null_mut()), NbqStatus::NullPointer);
        let mut seq = 0;
        assert_eq!(nbq_registry_publish(reg, c("nope").as_ptr(), ptr::null(), 0, &mut seq), NbqStatus::NotFound);
        assert_eq!(nbq_registry_publish(reg, c("nope").as_ptr(), ptr::null(), 3, &mut seq), NbqStatus::NullPointer);
        nbq_registry_free(reg);
        nbq_registry_free(ptr::null_mut());

        let mut b = ptr::null_mut();
        assert_eq!(nbq_stream_budget_new(0, 0.5, &mut b), NbqStatus::InvalidArgument);
        assert_eq!(nbq_stream_budget_new(10, 1.5, &mut b), NbqStatus::InvalidArgument);
        assert_eq!(nbq_stream_budget_available(ptr::null()), 0);

        let mut s = NbqSummary::default();
        assert_eq!(nbq_summarize([1.0, 2.0].as_ptr(), 2, &mut s), NbqStatus::InsufficientData);
        assert_eq!(nbq_summarize([1.0, 2.0, f64::NAN, 4.0].as_ptr(), 4, &mut s), NbqStatus::InvalidArgument);

        let mut t = NbqTuning::default();
        assert_eq!(nbq_derive_tuning(127.0, 159.0, 2000, 576, &mut t), NbqStatus::InvalidArgument);

        let spec = NbqImpairment { loss_direction: 9, ..Default::default() };
        let mut sh = ptr::null_mut();
        assert_eq!(nbq_shaper_new(&spec, 0, &mut sh), NbqStatus::InvalidArgument);
    }
}

#[test]
fn status_strings_are_static() {
    for s in [NbqStatus::Ok, NbqStatus::BufferTooSmall, NbqStatus::Panic] {
        let text = unsafe { CStr::from_ptr(nbq_status_str(s)) }.to_str().unwrap();
        assert!(!text.is_empty());
    }
    let v = unsafe { CStr::from_ptr(nbq_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn stream_budget_matches_core() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(nbq_stream_budget_new(100, 0.5, &mut b), NbqStatus::Ok);
        let mut limits = vec![];
        for _ in 0..100 {
            nbq_stream_budget_opened(b);
            let mut l = 0;
            assert_eq!(nbq_stream_budget_closed(b, &mut l), NbqStatus::Ok);
            if l != 0 {
                limits.push(l);
            }
        }
        assert_eq!(limits, [150, 200]);
        assert_eq!(nbq_stream_budget_advertisements(b), 2);
        assert_eq!(nbq_stream_budget_available(b), 100);
        nbq_stream_budget_free(b);

        let mut out = 0;
        assert_eq!(nbq_watermark_threshold(30, 0.1, &mut out), NbqStatus::Ok);
        assert_eq!(out, 3);
        assert_eq!(nbq_frames_saved(100, 100, 0.5, &mut out), NbqStatus::Ok);
        assert_eq!(out, 98);
    }
}

#[test]
fn basic_header_and_summary() {
    unsafe {
        let mut buf = [0 as std::ffi::c_char; 64];
        let mut len = 0;
        let (u, p) = (c("Aladdin"), c("open sesame"));
        assert_eq!(nbq_encode_basic_header(u.as_ptr(), p.as_ptr(), buf.as_mut_ptr(), 4, &mut len), NbqStatus::BufferTooSmall);
        assert_eq!(nbq_encode_basic_header(u.as_ptr(), p.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut len), NbqStatus::Ok);
        let h = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(h, "Basic QWxhZGRpbjpvcGVuIHNlc2FtZQ==");
        assert_eq!(len, h.len());

        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 100.0];
        let mut s = NbqSummary::default();
        assert_eq!(nbq_summarize(data.as_ptr(), data.len(), &mut s), NbqStatus::Ok);
        assert_eq!((s.n, s.q1, s.median, s.q3, s.whisker_high, s.outliers), (8, 2.5, 4.5, 6.5, 7.0, 1));
    }
}

#[test]
fn shaper_is_deterministic_per_seed() {
    let spec = NbqImpairment { delay_ms: 50.0, loss_pct: 20.0, rate_kbit_up: 100.0, seed: 42, ..Default::default() };
    let run = || unsafe {
        let mut sh = ptr::null_mut();
        assert_eq!(nbq_shaper_new(&spec, 0, &mut sh), NbqStatus::Ok);
        let mut out = vec![];
        for i in 0..200 {
            let (mut v, mut at) = (99u32, -1.0);
            assert_eq!(nbq_shaper_forward(sh, 125, i as f64, &mut v, &mut at), NbqStatus::Ok);
            out.push((v, at));
        }
        nbq_shaper_free(sh);
        out
    };
    let a = run();
    assert_eq!(a, run());
    let delivered: Vec<f64> = a.iter().filter(|(v, _)| *v == NBQ_DELIVER).map(|&(_, t)| t).collect();
    assert!(a.iter().any(|(v, _)| *v == NBQ_DROP_LOSS));
    // 125 bytes at 100 kbit/s take 10 ms; the first one lands at 60 ms
    assert!((delivered[0] - 60.0).abs() < 1e-6, "{delivered:?}");
    assert!(delivered.windows(2).all(|w| w[1] - w[0] >= 10.0 - 1e-6));
}
