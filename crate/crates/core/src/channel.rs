//! Classical channel between Alice and Bob.
//!
//! A single-owner event queue on a logical clock. Latency is base + uniform
//! jitter; messages can be dropped. Delivery is FIFO per sender: a message
//! never overtakes an earlier one from the same sender, but the two senders'
//! streams interleave freely.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::Side;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum MessageKind {
    ExcitationComplete,
    IndexList(Vec<u64>),
    PhaseShiftAnnounce(f64),
    LockIterationSync(u64),
    /// Acknowledges the sender's message with this sequence number.
    Ack(u64),
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::ExcitationComplete => "ExcitationComplete",
            MessageKind::IndexList(_) => "IndexList",
            MessageKind::PhaseShiftAnnounce(_) => "PhaseShiftAnnounce",
            MessageKind::LockIterationSync(_) => "LockIterationSync",
            MessageKind::Ack(_) => "Ack",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: Side,
    pub sequence: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub base_latency: f64,
    /// Half-width of the uniform jitter.
    pub jitter: f64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            base_latency: 1.0,
            jitter: 0.0,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let ok = self.base_latency.is_finite()
            && self.jitter.is_finite()
            && self.jitter >= 0.0
            && self.base_latency - self.jitter >= 0.0
            && (0.0..1.0).contains(&self.drop_probability);
        if ok {
            Ok(())
        } else {
            Err(ChannelError::InvalidModel(format!(
                "need 0 <= jitter <= base_latency and drop in [0, 1), got {self:?}"
            )))
        }
    }

    /// Longest possible round trip; the resend timer.
    pub fn ack_timeout(&self) -> f64 {
        2.0 * (self.base_latency + self.jitter) + 1e-9
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryToken {
    pub sender: Side,
    pub sequence: u64,
    pub send_time: f64,
    /// None when the message was dropped.
    pub delivery_time: Option<f64>,
}

impl DeliveryToken {
    pub fn dropped(&self) -> bool {
        self.delivery_time.is_none()
    }
}

/// One line of the transcript export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub sequence: u64,
    pub sender: Side,
    pub kind: String,
    pub payload: serde_json::Value,
    pub send_time: f64,
    pub delivery_time: Option<f64>,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("channel closed")]
    Closed,
    #[error("sequence {got} from {sender:?} does not follow {last}")]
    OutOfSequence { sender: Side, last: u64, got: u64 },
    #[error("index list must be sorted and unique")]
    MalformedIndexList,
    #[error("invalid channel model: {0}")]
    InvalidModel(String),
    #[error("{kind} from {sender:?} undelivered after {attempts} attempts")]
    DeliveryFailed {
        sender: Side,
        kind: &'static str,
        attempts: u32,
    },
}

#[derive(Clone, Debug)]
struct InFlight {
    delivery_time: f64,
    order: u64,
    message: Message,
}

fn slot(side: Side) -> usize {
    match side {
        Side::Alice => 0,
        Side::Bob => 1,
    }
}

pub fn other(side: Side) -> Side {
    match side {
        Side::Alice => Side::Bob,
        Side::Bob => Side::Alice,
    }
}

#[derive(Debug)]
pub struct Channel {
    model: ChannelModel,
    rng: ChaCha8Rng,
    now: f64,
    open: bool,
    queue: Vec<InFlight>,
    order: u64,
    last_sequence: [Option<u64>; 2],
    last_delivery: [f64; 2],
    transcript: Vec<TranscriptRecord>,
}

impl Channel {
    pub fn new(model: ChannelModel) -> Result<Self, ChannelError> {
        model.validate()?;
        Ok(Channel {
            model,
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            now: 0.0,
            open: true,
            queue: Vec::new(),
            order: 0,
            last_sequence: [None, None],
            last_delivery: [f64::NEG_INFINITY; 2],
            transcript: Vec::new(),
        })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Move the clock forward; never backward.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn close(&mut self) {
        self.open = false;
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    /// Next unused sequence number for `sender`.
    pub fn next_sequence(&self, sender: Side) -> u64 {
        self.last_sequence[slot(sender)].map_or(0, |s| s + 1)
    }

    pub fn send(&mut self, msg: Message) -> Result<DeliveryToken, ChannelError> {
        if !self.open {
            return Err(ChannelError::Closed);
        }
        let k = slot(msg.sender);
        if let Some(last) = self.last_sequence[k] {
            if msg.sequence <= last {
                return Err(ChannelError::OutOfSequence {
                    sender: msg.sender,
                    last,
                    got: msg.sequence,
                });
            }
        }
        if let MessageKind::IndexList(idx) = &msg.kind {
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ChannelError::MalformedIndexList);
            }
        }
        self.last_sequence[k] = Some(msg.sequence);
        // both draws happen for every message so the stream does not depend on outcomes
        let jitter = if self.model.jitter > 0.0 {
            self.rng
                .random_range(-self.model.jitter..=self.model.jitter)
        } else {
            0.0
        };
        let dropped = self.rng.random::<f64>() < self.model.drop_probability;
        let delivery_time = if dropped {
            None
        } else {
            let t = (self.now + self.model.base_latency + jitter).max(self.last_delivery[k]);
            self.last_delivery[k] = t;
            Some(t)
        };
        self.transcript.push(TranscriptRecord {
            sequence: msg.sequence,
            sender: msg.sender,
            kind: msg.kind.name().to_string(),
            payload: payload_json(&msg.kind),
            send_time: self.now,
            delivery_time,
            dropped,
        });
        let token = DeliveryToken {
            sender: msg.sender,
            sequence: msg.sequence,
            send_time: self.now,
            delivery_time,
        };
        if let Some(t) = delivery_time {
            self.queue.push(InFlight {
                delivery_time: t,
                order: self.order,
                message: msg,
            });
            self.order += 1;
        }
        Ok(token)
    }

    /// Earliest message due at or before the current time.
    pub fn recv(&mut self) -> Option<Message> {
        let idx = self
            .queue
            .iter()
            .enumerate()
            .filter(|(_, f)| f.delivery_time <= self.now)
            .min_by(|(_, a), (_, b)| {
                a.delivery_time
                    .total_cmp(&b.delivery_time)
                    .then(a.order.cmp(&b.order))
            })
            .map(|(i, _)| i)?;
        Some(self.queue.remove(idx).message)
    }

    /// Delivery time of the next message still in flight.
    pub fn next_delivery(&self) -> Option<f64> {
        self.queue
            .iter()
            .map(|f| f.delivery_time)
            .min_by(f64::total_cmp)
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    /// One JSON record per line.
    pub fn write_transcript<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.transcript {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Send with acknowledgement, resending after each timeout up to
    /// `retry_cap` extra attempts. Both endpoints are simulated here, so the
    /// receiver's ack is produced as soon as the data arrives. Returns the
    /// message as the receiver got it.
    pub fn send_reliably(
        &mut self,
        sender: Side,
        kind: MessageKind,
        retry_cap: u32,
    ) -> Result<Message, ChannelError> {
        let receiver = other(sender);
        let mut received: Option<Message> = None;
        for _ in 0..=retry_cap {
            let seq = self.next_sequence(sender);
            let token = self.send(Message {
                kind: kind.clone(),
                sender,
                sequence: seq,
            })?;
            let deadline = token.send_time + self.model.ack_timeout();
            while let Some(t) = self.next_delivery().filter(|&t| t <= deadline) {
                self.advance_to(t);
                while let Some(m) = self.recv() {
                    if m.sender == sender && m.kind == kind {
                        if received.is_none() {
                            received = Some(m.clone());
                        }
                        let ack_seq = self.next_sequence(receiver);
                        self.send(Message {
                            kind: MessageKind::Ack(m.sequence),
                            sender: receiver,
                            sequence: ack_seq,
                        })?;
                    } else if m.sender == receiver && m.kind == MessageKind::Ack(seq) {
                        if let Some(data) = received.take() {
                            return Ok(data);
                        }
                    }
                }
            }
            self.advance_to(deadline);
        }
        Err(ChannelError::DeliveryFailed {
            sender,
            kind: kind.name(),
            attempts: retry_cap + 1,
        })
    }
}

fn payload_json(kind: &MessageKind) -> serde_json::Value {
    match kind {
        MessageKind::ExcitationComplete => serde_json::Value::Null,
        MessageKind::IndexList(v) => serde_json::json!(v),
        MessageKind::PhaseShiftAnnounce(x) => serde_json::json!(x),
        MessageKind::LockIterationSync(k) | MessageKind::Ack(k) => serde_json::json!(k),
    }
}

/// Rules a transcript must follow to carry no timing information.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditPolicy {
    /// Exclusive upper bound for IndexList entries (the pair count).
    pub max_index: u64,
    /// Commanded phase shifts are protocol constants; they must be a
    /// multiple of pi / this. Anything else could be a sampled phase.
    pub phase_quantum_divisor: u32,
}

impl Default for AuditPolicy {
    fn default() -> Self {
        AuditPolicy {
            max_index: u64::MAX,
            phase_quantum_divisor: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub records_checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that payloads hold only indices, counters and commanded phase
/// constants, never clock readings or phase samples.
pub fn audit_transcript(records: &[TranscriptRecord], policy: &AuditPolicy) -> AuditReport {
    let mut report = AuditReport {
        records_checked: records.len(),
        violations: Vec::new(),
    };
    let mut sync_expected = [0u64; 2];
    let quantum = PI / policy.phase_quantum_divisor as f64;
    for r in records {
        let tag = format!("{:?} #{} {}", r.sender, r.sequence, r.kind);
        match r.kind.as_str() {
            "ExcitationComplete" => {
                if !r.payload.is_null() {
                    report
                        .violations
                        .push(format!("{tag}: completion notice carries a payload"));
                }
            }
            "IndexList" => match r.payload.as_array() {
                Some(items) => {
                    let ints: Option<Vec<u64>> = items.iter().map(|v| v.as_u64()).collect();
                    match ints {
                        Some(v)
                            if v.iter().all(|&i| i < policy.max_index)
                                && v.windows(2).all(|w| w[0] < w[1]) => {}
                        _ => report
                            .violations
                            .push(format!("{tag}: entries must be sorted unique pair indices")),
                    }
                }
                None => report
                    .violations
                    .push(format!("{tag}: payload is not a list")),
            },
            "PhaseShiftAnnounce" => match r.payload.as_f64() {
                Some(x) => {
                    let k = (x / quantum).round();
                    if (x - k * quantum).abs() > 1e-12 {
                        report
                            .violations
                            .push(format!("{tag}: {x} rad is not a commanded phase constant"));
                    }
                }
                None => report
                    .violations
                    .push(format!("{tag}: payload is not a number")),
            },
            "LockIterationSync" => {
                let s = slot(r.sender);
                match r.payload.as_u64() {
                    // resends repeat the current counter
                    Some(k) if k == sync_expected[s] || k + 1 == sync_expected[s] => {
                        sync_expected[s] = k + 1;
                    }
                    _ => report
                        .violations
                        .push(format!("{tag}: iteration counter is not consecutive")),
                }
            }
            "Ack" => {
                if r.payload.as_u64().is_none() {
                    report
                        .violations
                        .push(format!("{tag}: ack must name a sequence number"));
                }
            }
            other => report
                .violations
                .push(format!("{tag}: unknown message kind {other}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(sender: Side, sequence: u64) -> Message {
        Message {
            kind: MessageKind::ExcitationComplete,
            sender,
            sequence,
        }
    }

    #[test]
    fn zero_jitter_delivers_at_base_latency() {
        let mut ch = Channel::new(ChannelModel {
            base_latency: 2.5,
            ..Default::default()
        })
        .unwrap();
        ch.advance_to(1.0);
        let tok = ch.send(msg(Side::Alice, 0)).unwrap();
        assert_eq!(tok.delivery_time, Some(3.5));
        assert!(ch.recv().is_none());
        ch.advance_to(3.5);
        assert_eq!(ch.recv().unwrap().sequence, 0);
    }

    #[test]
    fn closed_channel_refuses() {
        let mut ch = Channel::new(ChannelModel::default()).unwrap();
        ch.close();
        assert_eq!(ch.send(msg(Side::Bob, 0)), Err(ChannelError::Closed));
    }

    #[test]
    fn sequence_must_increase() {
        let mut ch = Channel::new(ChannelModel::default()).unwrap();
        ch.send(msg(Side::Alice, 3)).unwrap();
        assert!(matches!(
            ch.send(msg(Side::Alice, 3)),
            Err(ChannelError::OutOfSequence { .. })
        ));
        ch.send(msg(Side::Bob, 0)).unwrap();
    }

    #[test]
    fn audit_flags_sampled_phase() {
        let mut ch = Channel::new(ChannelModel::default()).unwrap();
        ch.send(Message {
            kind: MessageKind::PhaseShiftAnnounce(PI / 4.0),
            sender: Side::Alice,
            sequence: 0,
        })
        .unwrap();
        assert!(audit_transcript(ch.transcript(), &AuditPolicy::default()).clean());
        ch.send(Message {
            kind: MessageKind::PhaseShiftAnnounce(0.1234),
            sender: Side::Alice,
            sequence: 1,
        })
        .unwrap();
        assert_eq!(
            audit_transcript(ch.transcript(), &AuditPolicy::default())
                .violations
                .len(),
            1
        );
    }
}
