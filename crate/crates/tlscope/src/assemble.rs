//! Bidirectional flow assembly from decoded packets.

use std::collections::{HashMap, HashSet};
use std::net::Ipv4Addr;

use crate::flow::{AssembledFlow, FlowRecord, PacketMeta, Segment, SpltEntry, SPLT_CAP};

/// Default flow expiry: 300 s of silence closes a flow.
pub const DEFAULT_IDLE_TIMEOUT_SECS: f64 = 300.0;

type Endpoint = (Ipv4Addr, u16);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct NormKey {
    lo: Endpoint,
    hi: Endpoint,
    protocol: u8,
}

impl NormKey {
    fn of(pkt: &PacketMeta) -> Self {
        let a = (pkt.src_addr, pkt.src_port);
        let b = (pkt.dst_addr, pkt.dst_port);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        NormKey {
            lo,
            hi,
            protocol: pkt.protocol,
        }
    }
}

struct OpenFlow {
    initiator: Endpoint,
    responder: Endpoint,
    protocol: u8,
    start_time: f64,
    end_time: f64,
    last_seen_ms: u64,
    last_payload_ms: Option<u64>,
    inbound_bytes: u64,
    outbound_bytes: u64,
    inbound_packets: u64,
    outbound_packets: u64,
    splt: Vec<SpltEntry>,
    byte_counts: Vec<u64>,
    fwd_seen_seq: HashSet<u32>,
    rev_seen_seq: HashSet<u32>,
    fwd_segments: Vec<Segment>,
    rev_segments: Vec<Segment>,
}

impl OpenFlow {
    fn new(pkt: &PacketMeta) -> Self {
        OpenFlow {
            initiator: (pkt.src_addr, pkt.src_port),
            responder: (pkt.dst_addr, pkt.dst_port),
            protocol: pkt.protocol,
            start_time: pkt.ts_secs(),
            end_time: pkt.ts_secs(),
            last_seen_ms: pkt.ts_ms(),
            last_payload_ms: None,
            inbound_bytes: 0,
            outbound_bytes: 0,
            inbound_packets: 0,
            outbound_packets: 0,
            splt: Vec::new(),
            byte_counts: vec![0; 256],
            fwd_seen_seq: HashSet::new(),
            rev_seen_seq: HashSet::new(),
            fwd_segments: Vec::new(),
            rev_segments: Vec::new(),
        }
    }

    fn absorb(&mut self, pkt: &PacketMeta) {
        let forward = (pkt.src_addr, pkt.src_port) == self.initiator;
        if !pkt.payload.is_empty() {
            let seen = if forward {
                &mut self.fwd_seen_seq
            } else {
                &mut self.rev_seen_seq
            };
            if !seen.insert(pkt.tcp_seq) {
                // Retransmission: ignore the packet entirely.
                return;
            }
            let ts_ms = pkt.ts_ms();
            let gap = self.last_payload_ms.map_or(0, |p| ts_ms.saturating_sub(p));
            self.last_payload_ms = Some(ts_ms);
            if self.splt.len() < SPLT_CAP {
                let len = pkt.payload.len() as i64;
                self.splt
                    .push(SpltEntry(if forward { len } else { -len }, gap));
            }
            for &b in &pkt.payload {
                self.byte_counts[b as usize] += 1;
            }
            if forward {
                self.outbound_bytes += pkt.payload.len() as u64;
                self.outbound_packets += 1;
                self.fwd_segments.push(Segment {
                    ts_ms,
                    data: pkt.payload.clone(),
                });
            } else {
                self.inbound_bytes += pkt.payload.len() as u64;
                self.inbound_packets += 1;
                self.rev_segments.push(Segment {
                    ts_ms,
                    data: pkt.payload.clone(),
                });
            }
        }
        self.end_time = self.end_time.max(pkt.ts_secs());
        self.last_seen_ms = self.last_seen_ms.max(pkt.ts_ms());
    }

    fn finish(self) -> AssembledFlow {
        AssembledFlow {
            record: FlowRecord {
                src_addr: self.initiator.0,
                dst_addr: self.responder.0,
                src_port: self.initiator.1,
                dst_port: self.responder.1,
                protocol: self.protocol,
                inbound_bytes: self.inbound_bytes,
                outbound_bytes: self.outbound_bytes,
                inbound_packets: self.inbound_packets,
                outbound_packets: self.outbound_packets,
                start_time: self.start_time,
                end_time: self.end_time,
                splt: self.splt,
                byte_counts: self.byte_counts,
                tls: None,
                label: None,
            },
            fwd_segments: self.fwd_segments,
            rev_segments: self.rev_segments,
        }
    }
}

/// Group packets into bidirectional flows.
///
/// Packets sharing a direction-normalized 5-tuple join one flow until
/// `idle_timeout` seconds of silence; the sender of the first packet is
/// the initiator. Zero-payload packets update timestamps only, and a
/// payload packet repeating an already-seen sequence number for its
/// direction is dropped as a retransmission.
pub fn assemble_flows(packets: &[PacketMeta], idle_timeout: f64) -> Vec<AssembledFlow> {
    let idle_ms = (idle_timeout * 1000.0) as u64;
    let mut open: HashMap<NormKey, OpenFlow> = HashMap::new();
    // Completion order: first-packet order of each flow.
    let mut order: Vec<NormKey> = Vec::new();
    let mut finished: Vec<(usize, AssembledFlow)> = Vec::new();
    let mut seq_for: HashMap<NormKey, usize> = HashMap::new();
    let mut next_seq = 0usize;

    for pkt in packets {
        let key = NormKey::of(pkt);
        if let Some(flow) = open.get_mut(&key) {
            if pkt.ts_ms().saturating_sub(flow.last_seen_ms) > idle_ms {
                let done = open.remove(&key).unwrap();
                finished.push((seq_for[&key], done.finish()));
                let mut fresh = OpenFlow::new(pkt);
                fresh.absorb(pkt);
                seq_for.insert(key, next_seq);
                next_seq += 1;
                open.insert(key, fresh);
            } else {
                flow.absorb(pkt);
            }
        } else {
            let mut fresh = OpenFlow::new(pkt);
            fresh.absorb(pkt);
            seq_for.insert(key, next_seq);
            next_seq += 1;
            open.insert(key, fresh);
            order.push(key);
        }
    }
    for key in order {
        if let Some(flow) = open.remove(&key) {
            finished.push((seq_for[&key], flow.finish()));
        }
    }
    finished.sort_by_key(|(seq, _)| *seq);
    finished.into_iter().map(|(_, f)| f).collect()
}

/// TLS detection signature over the first payload of each direction:
/// handshake record (0x16), version 0x0300..=0x0303, clientHello from
/// the initiator and serverHello from the responder. Ports are never
/// consulted.
pub fn detect_tls(flow: &AssembledFlow) -> bool {
    fn looks_like(data: &[u8], handshake_type: u8) -> bool {
        data.len() >= 6
            && data[0] == 0x16
            && data[1] == 0x03
            && data[2] <= 0x03
            && data[5] == handshake_type
    }
    match (flow.fwd_segments.first(), flow.rev_segments.first()) {
        (Some(fwd), Some(rev)) => looks_like(&fwd.data, 0x01) && looks_like(&rev.data, 0x02),
        _ => false,
    }
}
