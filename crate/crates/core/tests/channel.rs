use std::f64::consts::PI;

use proptest::prelude::*;

use phasesync::channel::{
    audit_transcript, AuditPolicy, Channel, ChannelError, ChannelModel, Message, MessageKind,
    TranscriptRecord,
};
use phasesync::protocol::{run_protocol, ProtocolConfig, Side};

fn msg(kind: MessageKind, sender: Side, sequence: u64) -> Message {
    Message {
        kind,
        sender,
        sequence,
    }
}

fn drain(ch: &mut Channel) -> Vec<Message> {
    let mut out = Vec::new();
    while let Some(t) = ch.next_delivery() {
        ch.advance_to(t);
        while let Some(m) = ch.recv() {
            out.push(m);
        }
    }
    out
}

#[test]
fn zero_latency_delivers_immediately() {
    let mut ch = Channel::new(ChannelModel {
        base_latency: 0.0,
        ..Default::default()
    })
    .unwrap();
    ch.advance_to(4.0);
    let tok = ch
        .send(msg(MessageKind::ExcitationComplete, Side::Alice, 0))
        .unwrap();
    assert_eq!(tok.delivery_time, Some(4.0));
    assert_eq!(ch.recv().unwrap().sender, Side::Alice);
}

#[test]
fn nothing_arrives_early() {
    let mut ch = Channel::new(ChannelModel {
        base_latency: 2.0,
        jitter: 1.0,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let tok = ch
        .send(msg(MessageKind::LockIterationSync(0), Side::Bob, 0))
        .unwrap();
    let due = tok.delivery_time.unwrap();
    assert!((1.0..=3.0).contains(&due));
    ch.advance_to(due - 1e-9);
    assert!(ch.recv().is_none());
    ch.advance_to(due);
    assert!(ch.recv().is_some());
}

#[test]
fn drop_rate_is_binomial() {
    let n = 10_000u64;
    let mut ch = Channel::new(ChannelModel {
        drop_probability: 0.5,
        seed: 99,
        ..Default::default()
    })
    .unwrap();
    let mut dropped = 0;
    for k in 0..n {
        if ch
            .send(msg(MessageKind::LockIterationSync(k), Side::Alice, k))
            .unwrap()
            .dropped()
        {
            dropped += 1;
        }
    }
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((dropped as f64 - 5000.0).abs() <= 3.0 * sigma, "{dropped}");
}

#[test]
fn sequence_and_index_rules() {
    let mut ch = Channel::new(ChannelModel::default()).unwrap();
    ch.send(msg(MessageKind::ExcitationComplete, Side::Alice, 4))
        .unwrap();
    assert!(matches!(
        ch.send(msg(MessageKind::ExcitationComplete, Side::Alice, 4)),
        Err(ChannelError::OutOfSequence { .. })
    ));
    // the other sender has its own counter
    ch.send(msg(MessageKind::ExcitationComplete, Side::Bob, 0))
        .unwrap();
    assert_eq!(
        ch.send(msg(MessageKind::IndexList(vec![3, 1]), Side::Alice, 5))
            .unwrap_err(),
        ChannelError::MalformedIndexList
    );
    ch.close();
    assert_eq!(
        ch.send(msg(MessageKind::ExcitationComplete, Side::Bob, 1))
            .unwrap_err(),
        ChannelError::Closed
    );
}

#[test]
fn invalid_models_are_rejected() {
    for model in [
        ChannelModel {
            drop_probability: 1.0,
            ..Default::default()
        },
        ChannelModel {
            jitter: 2.0,
            base_latency: 1.0,
            ..Default::default()
        },
        ChannelModel {
            base_latency: f64::NAN,
            ..Default::default()
        },
    ] {
        assert!(matches!(
            Channel::new(model),
            Err(ChannelError::InvalidModel(_))
        ));
    }
}

#[test]
fn reliable_send_gives_up_after_retry_cap() {
    // every message lost with probability 0.999
    let model = ChannelModel {
        drop_probability: 0.999,
        seed: 1,
        ..Default::default()
    };
    let mut ch = Channel::new(model).unwrap();
    let err = ch
        .send_reliably(Side::Alice, MessageKind::ExcitationComplete, 2)
        .unwrap_err();
    assert_eq!(
        err,
        ChannelError::DeliveryFailed {
            sender: Side::Alice,
            kind: "ExcitationComplete",
            attempts: 3
        }
    );
}

#[test]
fn transcript_lines_have_the_export_fields() {
    let mut ch = Channel::new(ChannelModel {
        drop_probability: 0.2,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    run_protocol(&ProtocolConfig::new(0.2, 0.0, 0.05, 40, 2), &mut ch).unwrap();
    let mut buf = Vec::new();
    ch.write_transcript(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), ch.transcript().len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in [
            "sequence",
            "sender",
            "kind",
            "payload",
            "send_time",
            "delivery_time",
            "dropped",
        ] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
        let back: TranscriptRecord = serde_json::from_str(line).unwrap();
        assert_eq!(back.dropped, back.delivery_time.is_none());
    }
}

#[test]
fn audit_flags_timing_payloads() {
    let mut ch = Channel::new(ChannelModel::default()).unwrap();
    ch.send(msg(
        MessageKind::PhaseShiftAnnounce(PI / 4.0),
        Side::Alice,
        0,
    ))
    .unwrap();
    ch.send(msg(MessageKind::IndexList(vec![0, 2, 5]), Side::Alice, 1))
        .unwrap();
    let policy = AuditPolicy {
        max_index: 6,
        ..AuditPolicy::default()
    };
    assert!(audit_transcript(ch.transcript(), &policy).clean());

    // a sampled phase and an out-of-range index both leak
    ch.send(msg(
        MessageKind::PhaseShiftAnnounce(0.123_456),
        Side::Alice,
        2,
    ))
    .unwrap();
    ch.send(msg(MessageKind::IndexList(vec![1, 9]), Side::Alice, 3))
        .unwrap();
    let report = audit_transcript(ch.transcript(), &policy);
    assert_eq!(report.records_checked, 4);
    assert_eq!(report.violations.len(), 2, "{:?}", report.violations);
}

#[test]
fn audit_catches_forged_records() {
    let forged = TranscriptRecord {
        sequence: 0,
        sender: Side::Bob,
        kind: "ExcitationComplete".into(),
        payload: serde_json::json!(12.5),
        send_time: 0.0,
        delivery_time: Some(1.0),
        dropped: false,
    };
    let report = audit_transcript(&[forged], &AuditPolicy::default());
    assert_eq!(report.violations.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fifo_per_sender(latency in 0.5..5.0f64, frac in 0.0..1.0f64, seed in any::<u64>(), sends in prop::collection::vec((any::<bool>(), 0.0..3.0f64), 1..60)) {
        let model = ChannelModel { base_latency: latency, jitter: latency * frac, drop_probability: 0.0, seed };
        let mut ch = Channel::new(model).unwrap();
        let mut seq = [0u64; 2];
        for (alice, gap) in &sends {
            let (side, k) = if *alice { (Side::Alice, 0) } else { (Side::Bob, 1) };
            ch.advance_to(ch.now() + gap);
            ch.send(msg(MessageKind::LockIterationSync(seq[k]), side, seq[k])).unwrap();
            seq[k] += 1;
        }
        let got = drain(&mut ch);
        prop_assert_eq!(got.len(), sends.len());
        for side in [Side::Alice, Side::Bob] {
            let order: Vec<u64> = got.iter().filter(|m| m.sender == side).map(|m| m.sequence).collect();
            prop_assert!(order.windows(2).all(|w| w[0] < w[1]), "{:?}", order);
        }
    }

    #[test]
    fn protocol_terminates_without_drops(latency in 0.0..50.0f64, frac in 0.0..1.0f64, seed in any::<u64>()) {
        let model = ChannelModel { base_latency: latency, jitter: latency * frac, drop_probability: 0.0, seed };
        let mut ch = Channel::new(model).unwrap();
        let ledger = run_protocol(&ProtocolConfig::new(0.4, 0.0, 0.05, 20, seed), &mut ch).unwrap();
        prop_assert_eq!(ledger.pairs(), 20);
        let report = audit_transcript(ch.transcript(), &AuditPolicy { max_index: 20, ..AuditPolicy::default() });
        prop_assert!(report.clean(), "{:?}", report.violations);
    }
}
