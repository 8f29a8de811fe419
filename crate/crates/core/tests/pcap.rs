mod common;

use common::*;
use rtp_shaper::model::{import_pcap, validate_trace, MediaPacket, PcapError, StreamKind};

#[test]
fn single_rtp_packet() {
    let file = pcap_file(&[(
        1_700_000_000,
        250_000,
        rtp_frame(7, 0xDEAD_BEEF, 0, 125, 40_000),
    )]);
    let traces = import_pcap(&file, None).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(traces[0].kind, StreamKind::Audio);
    assert_eq!(
        traces[0].packets,
        vec![MediaPacket {
            seq: 7,
            ssrc: 0xDEAD_BEEF,
            payload_type: 0,
            marker: false,
            send_ts_us: 0,
            recv_ts_us: Some(0),
            size_bytes: 125,
        }]
    );
}

#[test]
fn two_streams_and_port_filter() {
    let file = pcap_file(&[
        (10, 0, rtp_frame(1, 1, 96, 100, 40_000)),
        (10, 20_000, rtp_frame(9, 2, 97, 1200, 40_002)),
        (10, 20_000, rtp_frame(2, 1, 96, 100, 40_000)),
        (10, 40_000, rtp_frame(10, 2, 97, 300, 40_002)),
    ]);
    let all = import_pcap(&file, None).unwrap();
    assert_eq!(all.len(), 2);
    let a = all.iter().find(|t| t.packets[0].ssrc == 1).unwrap();
    let v = all.iter().find(|t| t.packets[0].ssrc == 2).unwrap();
    assert_eq!(a.kind, StreamKind::Audio);
    assert_eq!(v.kind, StreamKind::Video);
    assert_eq!(v.active_timestamps(), vec![20_000, 40_000]);
    for t in &all {
        assert!(validate_trace(t).is_empty());
    }
    let only = import_pcap(&file, Some(40_002)).unwrap();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0].packets[0].ssrc, 2);
}

#[test]
fn non_rtp_capture_yields_nothing() {
    // A DNS query on port 53: version bits are not 2.
    let dns = udp_frame(
        &[
            0x12, 0x34, 0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0, 3, b'f', b'o', b'o', 0, 0, 1, 0, 1,
        ],
        53,
    );
    assert!(import_pcap(&pcap_file(&[(0, 0, dns)]), None)
        .unwrap()
        .is_empty());
}

#[test]
fn typed_errors() {
    assert!(matches!(
        import_pcap(b"not a capture", None),
        Err(PcapError::UnsupportedFormat)
    ));
    let mut wrong_link = pcap_file(&[]);
    wrong_link[20] = 113;
    assert!(matches!(
        import_pcap(&wrong_link, None),
        Err(PcapError::UnsupportedLink(113))
    ));
    let mut cut = pcap_file(&[(0, 0, rtp_frame(1, 1, 0, 160, 1))]);
    cut.truncate(cut.len() - 5);
    assert!(matches!(
        import_pcap(&cut, None),
        Err(PcapError::Truncated { .. })
    ));
}

#[test]
fn random_blobs_never_panic() {
    let mut rng = Rng::new(99);
    let template = pcap_file(&[
        (0, 0, rtp_frame(1, 1, 0, 160, 1)),
        (0, 20, rtp_frame(2, 1, 0, 160, 1)),
    ]);
    for i in 0..2000 {
        let blob: Vec<u8> = if i % 2 == 0 {
            (0..rng.range(0, 300))
                .map(|_| rng.range(0, 255) as u8)
                .collect()
        } else {
            // Mutated valid captures reach deeper parsing paths.
            let mut b = template.clone();
            for _ in 0..rng.range(1, 8) {
                let at = rng.range(0, b.len() as u64 - 1) as usize;
                b[at] = rng.range(0, 255) as u8;
            }
            b.truncate(rng.range(24, b.len() as u64) as usize);
            b
        };
        if let Ok(traces) = import_pcap(&blob, None) {
            for t in traces {
                assert!(validate_trace(&t).is_empty());
            }
        }
    }
}
