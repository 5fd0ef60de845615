//! Flow-level domain types shared by the whole pipeline.
//!
//! A [`FlowRecord`] is the unit of classification: one bidirectional
//! TCP conversation identified by its 5-tuple, with payload counters,
//! the SPLT sequence (signed packet lengths and inter-arrival gaps),
//! the payload byte histogram, and an optional TLS handshake summary.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

/// Maximum number of SPLT entries kept per flow.
pub const SPLT_CAP: usize = 50;

/// One decoded IPv4/TCP packet, as emitted by the pcap parser.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketMeta {
    pub ts_sec: u32,
    pub ts_usec: u32,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub payload: Vec<u8>,
    pub tcp_seq: u32,
    pub tcp_flags: u8,
}

impl PacketMeta {
    /// Timestamp in integer milliseconds since the epoch.
    pub fn ts_ms(&self) -> u64 {
        self.ts_sec as u64 * 1000 + self.ts_usec as u64 / 1000
    }

    /// Timestamp in fractional seconds since the epoch.
    pub fn ts_secs(&self) -> f64 {
        self.ts_sec as f64 + self.ts_usec as f64 * 1e-6
    }
}

/// One SPLT entry: signed payload length (positive = initiator to
/// responder) and the gap in milliseconds since the previous payload
/// packet of the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpltEntry(pub i64, pub u64);

/// One TLS record observation: content type, record body length, gap
/// in milliseconds since the previous record of the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry(pub u8, pub u32, pub u64);

/// Facts extracted from the first (leaf) certificate of the server chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateInfo {
    pub subject: String,
    pub issuer: String,
    pub validity_days: i64,
    pub san_count: u32,
    pub self_signed: bool,
}

/// Unencrypted TLS handshake parameters of a flow.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsHandshakeSummary {
    #[serde(rename = "cv", with = "hex16")]
    pub client_version: u16,
    #[serde(rename = "cs", with = "hex16_vec")]
    pub offered_ciphersuites: Vec<u16>,
    #[serde(rename = "ext", with = "hex16_vec")]
    pub advertised_extensions: Vec<u16>,
    #[serde(rename = "scs", with = "hex16_opt")]
    pub selected_ciphersuite: Option<u16>,
    #[serde(rename = "sext", with = "hex16_vec")]
    pub selected_extensions: Vec<u16>,
    #[serde(rename = "key")]
    pub client_public_key_bits: Option<u32>,
    pub cert: Option<CertificateInfo>,
    #[serde(rename = "recs")]
    pub records: Vec<RecordEntry>,
    pub complete: bool,
}

/// One bidirectional flow. Field names follow the JSON Lines export
/// format: `sa, da, sp, dp, pr, ib, ob, ip, op, ts, te, splt, bd, tls,
/// label`, one record per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    #[serde(rename = "sa")]
    pub src_addr: Ipv4Addr,
    #[serde(rename = "da")]
    pub dst_addr: Ipv4Addr,
    #[serde(rename = "sp")]
    pub src_port: u16,
    #[serde(rename = "dp")]
    pub dst_port: u16,
    #[serde(rename = "pr")]
    pub protocol: u8,
    #[serde(rename = "ib")]
    pub inbound_bytes: u64,
    #[serde(rename = "ob")]
    pub outbound_bytes: u64,
    #[serde(rename = "ip")]
    pub inbound_packets: u64,
    #[serde(rename = "op")]
    pub outbound_packets: u64,
    #[serde(rename = "ts")]
    pub start_time: f64,
    #[serde(rename = "te")]
    pub end_time: f64,
    pub splt: Vec<SpltEntry>,
    #[serde(rename = "bd")]
    pub byte_counts: Vec<u64>,
    pub tls: Option<TlsHandshakeSummary>,
    pub label: Option<String>,
}

impl FlowRecord {
    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }

    /// Canonical single-line JSON encoding used for content hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("flow record serializes")
    }
}

/// One contiguous unique payload segment of a flow direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub ts_ms: u64,
    pub data: Vec<u8>,
}

/// A flow plus the raw payload streams the TLS inspector needs.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledFlow {
    pub record: FlowRecord,
    /// Initiator-to-responder payload segments, in order, retransmissions removed.
    pub fwd_segments: Vec<Segment>,
    /// Responder-to-initiator payload segments.
    pub rev_segments: Vec<Segment>,
}

pub(crate) mod hex16 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u16, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{v:04x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u16, D::Error> {
        let raw = String::deserialize(d)?;
        parse_hex16(&raw).map_err(serde::de::Error::custom)
    }

    pub fn parse_hex16(raw: &str) -> Result<u16, String> {
        let digits = raw
            .strip_prefix("0x")
            .or_else(|| raw.strip_prefix("0X"))
            .unwrap_or(raw);
        u16::from_str_radix(digits, 16).map_err(|e| format!("bad hex code {raw:?}: {e}"))
    }
}

pub(crate) mod hex16_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u16], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| format!("0x{c:04x}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u16>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| super::hex16::parse_hex16(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub(crate) mod hex16_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<u16>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => s.serialize_some(&format!("0x{c:04x}")),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u16>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        raw.map(|s| super::hex16::parse_hex16(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_flow() -> FlowRecord {
        FlowRecord {
            src_addr: Ipv4Addr::new(10, 0, 0, 1),
            dst_addr: Ipv4Addr::new(192, 168, 1, 2),
            src_port: 49152,
            dst_port: 443,
            protocol: 6,
            inbound_bytes: 200,
            outbound_bytes: 100,
            inbound_packets: 1,
            outbound_packets: 1,
            start_time: 10.0,
            end_time: 11.5,
            splt: vec![SpltEntry(100, 0), SpltEntry(-200, 1500)],
            byte_counts: vec![0; 256],
            tls: None,
            label: Some("malware-like".into()),
        }
    }

    #[test]
    fn jsonl_field_names() {
        let line = sample_flow().canonical_json();
        for key in [
            "\"sa\"", "\"da\"", "\"sp\"", "\"dp\"", "\"pr\"", "\"ib\"", "\"ob\"", "\"ip\"",
            "\"op\"", "\"ts\"", "\"te\"", "\"splt\"", "\"bd\"", "\"tls\"", "\"label\"",
        ] {
            assert!(line.contains(key), "missing {key} in {line}");
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let flow = sample_flow();
        let line = flow.canonical_json();
        let back: FlowRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(flow, back);
    }

    #[test]
    fn hex_codes_render_as_strings() {
        let summary = TlsHandshakeSummary {
            client_version: 0x0303,
            offered_ciphersuites: vec![0x0004, 0xc02f],
            advertised_extensions: vec![0x000d],
            selected_ciphersuite: Some(0x0004),
            selected_extensions: vec![],
            client_public_key_bits: Some(2048),
            cert: None,
            records: vec![RecordEntry(22, 100, 0)],
            complete: true,
        };
        let json = serde_json::to_string(&summary).unwrap();
        assert!(json.contains("\"0x0004\""));
        assert!(json.contains("\"0xc02f\""));
        let back: TlsHandshakeSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(summary, back);
    }
}
