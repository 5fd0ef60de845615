//! TLS record/handshake inspection: summaries, certificates, client
//! fingerprinting, and the hex-code registries.

pub mod build;
pub mod fingerprint;
pub mod registry;
pub mod x509;

use thiserror::Error;

use crate::flow::{AssembledFlow, RecordEntry, Segment, TlsHandshakeSummary};
use registry::{kx_family, KxFamily};

/// Largest legal TLS record body: 2^14 plus expansion allowance.
pub const MAX_RECORD_LEN: usize = 16384 + 2048;

#[derive(Debug, Error)]
pub enum TlsError {
    #[error("record length {0} exceeds maximum")]
    GarbledLength(usize),
    #[error("clientHello offered zero ciphersuites")]
    EmptyCiphersuites,
    #[error("unknown key exchange for suite 0x{0:04x}")]
    UnknownKeyExchange(u16),
    #[error("malformed key exchange payload")]
    MalformedKeyExchange,
    #[error("missing configuration: {0}")]
    MissingConfig(String),
}

/// Client public key length in bits, from the clientKeyExchange body
/// and the negotiated suite's key-exchange family.
pub fn public_key_bits(body: &[u8], selected_suite: u16) -> Result<u32, TlsError> {
    match kx_family(selected_suite) {
        KxFamily::Rsa | KxFamily::Dhe => {
            if body.len() < 2 {
                return Err(TlsError::MalformedKeyExchange);
            }
            Ok(u16::from_be_bytes([body[0], body[1]]) as u32 * 8)
        }
        KxFamily::Ecdhe => {
            if body.is_empty() || body[0] == 0 {
                return Err(TlsError::MalformedKeyExchange);
            }
            // Strip the 1-byte point-format prefix.
            Ok((body[0] as u32 - 1) * 8)
        }
        KxFamily::Unknown => Err(TlsError::UnknownKeyExchange(selected_suite)),
    }
}

struct DirParse {
    /// (content type, body length, timestamp ms) per record.
    records: Vec<(u8, u32, u64)>,
    /// In-order concatenation of handshake record bodies, up to the
    /// first ChangeCipherSpec of the direction.
    handshake: Vec<u8>,
    truncated: bool,
}

fn parse_direction(segments: &[Segment]) -> Result<DirParse, TlsError> {
    // Flatten segments while remembering where each starts, so record
    // offsets map back to packet timestamps.
    let mut stream = Vec::new();
    let mut starts = Vec::new();
    for seg in segments {
        starts.push((stream.len(), seg.ts_ms));
        stream.extend_from_slice(&seg.data);
    }
    let ts_at = |offset: usize| -> u64 {
        match starts.binary_search_by_key(&offset, |&(o, _)| o) {
            Ok(i) => starts[i].1,
            Err(0) => 0,
            Err(i) => starts[i - 1].1,
        }
    };

    let mut out = DirParse {
        records: Vec::new(),
        handshake: Vec::new(),
        truncated: false,
    };
    let mut pos = 0usize;
    let mut ciphered = false;
    while pos < stream.len() {
        if pos + 5 > stream.len() {
            out.truncated = true;
            break;
        }
        let content_type = stream[pos];
        let len = u16::from_be_bytes([stream[pos + 3], stream[pos + 4]]) as usize;
        if len > MAX_RECORD_LEN {
            return Err(TlsError::GarbledLength(len));
        }
        if pos + 5 + len > stream.len() {
            out.truncated = true;
            break;
        }
        out.records.push((content_type, len as u32, ts_at(pos)));
        let body = &stream[pos + 5..pos + 5 + len];
        if content_type == build::CONTENT_CCS {
            ciphered = true;
        } else if content_type == build::CONTENT_HANDSHAKE && !ciphered {
            out.handshake.extend_from_slice(body);
        }
        pos += 5 + len;
    }
    Ok(out)
}

struct ClientHelloFields {
    version: u16,
    suites: Vec<u16>,
    extensions: Vec<u16>,
}

fn be16(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*b.get(at)?, *b.get(at + 1)?]))
}

fn parse_hello_extensions(body: &[u8], mut pos: usize) -> Option<Vec<u16>> {
    if pos >= body.len() {
        return Some(Vec::new()); // extensions block absent
    }
    let total = be16(body, pos)? as usize;
    pos += 2;
    let end = pos + total;
    if end > body.len() {
        return None;
    }
    let mut codes = Vec::new();
    while pos + 4 <= end {
        let code = be16(body, pos)?;
        let len = be16(body, pos + 2)? as usize;
        pos += 4 + len;
        if pos > end {
            return None;
        }
        codes.push(code);
    }
    Some(codes)
}

fn parse_client_hello(body: &[u8]) -> Result<Option<ClientHelloFields>, TlsError> {
    let parse = || -> Option<Result<ClientHelloFields, TlsError>> {
        let version = be16(body, 0)?;
        let sid_len = *body.get(34)? as usize;
        let mut pos = 35 + sid_len;
        let cs_len = be16(body, pos)? as usize;
        pos += 2;
        if cs_len == 0 {
            return Some(Err(TlsError::EmptyCiphersuites));
        }
        if pos + cs_len > body.len() || cs_len % 2 != 0 {
            return None;
        }
        let suites = (0..cs_len / 2)
            .map(|i| u16::from_be_bytes([body[pos + 2 * i], body[pos + 2 * i + 1]]))
            .collect();
        pos += cs_len;
        let comp_len = *body.get(pos)? as usize;
        pos += 1 + comp_len;
        let extensions = parse_hello_extensions(body, pos)?;
        Some(Ok(ClientHelloFields {
            version,
            suites,
            extensions,
        }))
    };
    match parse() {
        Some(Ok(fields)) => Ok(Some(fields)),
        Some(Err(e)) => Err(e),
        None => Ok(None), // truncated body: caller flags incomplete
    }
}

struct ServerHelloFields {
    selected_suite: u16,
    extensions: Vec<u16>,
}

fn parse_server_hello(body: &[u8]) -> Option<ServerHelloFields> {
    let sid_len = *body.get(34)? as usize;
    let pos = 35 + sid_len;
    let selected_suite = be16(body, pos)?;
    let extensions = parse_hello_extensions(body, pos + 3)?;
    Some(ServerHelloFields {
        selected_suite,
        extensions,
    })
}

/// Iterate handshake messages out of concatenated record bodies.
/// Returns (type, body) pairs plus whether the tail was truncated.
fn handshake_messages(data: &[u8]) -> (Vec<(u8, &[u8])>, bool) {
    let mut msgs = Vec::new();
    let mut pos = 0usize;
    while pos < data.len() {
        if pos + 4 > data.len() {
            return (msgs, true);
        }
        let hs_type = data[pos];
        let len = u32::from_be_bytes([0, data[pos + 1], data[pos + 2], data[pos + 3]]) as usize;
        if pos + 4 + len > data.len() {
            return (msgs, true);
        }
        msgs.push((hs_type, &data[pos + 4..pos + 4 + len]));
        pos += 4 + len;
    }
    (msgs, false)
}

/// Parse the TLS layers of a flow into a handshake summary.
///
/// Handshake messages spanning record boundaries are reassembled by
/// in-order concatenation. Truncated input yields the fields parsed so
/// far with `complete = false`; a garbled record length or an empty
/// ciphersuite offer rejects the flow's summary outright.
pub fn parse_handshake(flow: &AssembledFlow) -> Result<TlsHandshakeSummary, TlsError> {
    let fwd = parse_direction(&flow.fwd_segments)?;
    let rev = parse_direction(&flow.rev_segments)?;

    let mut summary = TlsHandshakeSummary {
        client_version: 0,
        offered_ciphersuites: Vec::new(),
        advertised_extensions: Vec::new(),
        selected_ciphersuite: None,
        selected_extensions: Vec::new(),
        client_public_key_bits: None,
        cert: None,
        records: Vec::new(),
        complete: !(fwd.truncated || rev.truncated),
    };

    let (fwd_msgs, fwd_trunc) = handshake_messages(&fwd.handshake);
    let (rev_msgs, rev_trunc) = handshake_messages(&rev.handshake);
    if fwd_trunc || rev_trunc {
        summary.complete = false;
    }

    let mut key_exchange: Option<&[u8]> = None;
    for (hs_type, body) in &fwd_msgs {
        match *hs_type {
            build::HS_CLIENT_HELLO => match parse_client_hello(body)? {
                Some(fields) => {
                    summary.client_version = fields.version;
                    summary.offered_ciphersuites = fields.suites;
                    summary.advertised_extensions = fields.extensions;
                }
                None => summary.complete = false,
            },
            build::HS_CLIENT_KEY_EXCHANGE => key_exchange = Some(body),
            _ => {}
        }
    }
    for (hs_type, body) in &rev_msgs {
        match *hs_type {
            build::HS_SERVER_HELLO => match parse_server_hello(body) {
                Some(fields) => {
                    summary.selected_ciphersuite = Some(fields.selected_suite);
                    summary.selected_extensions = fields.extensions;
                }
                None => summary.complete = false,
            },
            build::HS_CERTIFICATE => {
                // First certificate of the chain only.
                if body.len() >= 6 {
                    let first_len =
                        u32::from_be_bytes([0, body[3], body[4], body[5]]) as usize;
                    if 6 + first_len <= body.len() {
                        summary.cert = x509::parse_certificate(&body[6..6 + first_len]).ok();
                    }
                }
            }
            _ => {}
        }
    }

    if summary.offered_ciphersuites.is_empty() {
        return Err(TlsError::EmptyCiphersuites);
    }

    if let (Some(body), Some(suite)) = (key_exchange, summary.selected_ciphersuite) {
        summary.client_public_key_bits = public_key_bits(body, suite).ok();
    }

    // Merge both directions' record observations by timestamp and
    // compute inter-record gaps.
    let mut merged: Vec<(u8, u32, u64, u8)> = fwd
        .records
        .iter()
        .map(|&(t, l, ts)| (t, l, ts, 0u8))
        .chain(rev.records.iter().map(|&(t, l, ts)| (t, l, ts, 1u8)))
        .collect();
    merged.sort_by_key(|&(_, _, ts, dir)| (ts, dir));
    let mut prev_ts = None;
    for (content_type, len, ts, _) in merged {
        let gap = prev_ts.map_or(0, |p: u64| ts.saturating_sub(p));
        prev_ts = Some(ts);
        summary.records.push(RecordEntry(content_type, len, gap));
    }

    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Segment;
    use build::*;

    fn flow_from(fwd: Vec<(u64, Vec<u8>)>, rev: Vec<(u64, Vec<u8>)>) -> AssembledFlow {
        use crate::flow::FlowRecord;
        use std::net::Ipv4Addr;
        AssembledFlow {
            record: FlowRecord {
                src_addr: Ipv4Addr::new(10, 0, 0, 1),
                dst_addr: Ipv4Addr::new(10, 0, 0, 2),
                src_port: 40000,
                dst_port: 443,
                protocol: 6,
                inbound_bytes: 0,
                outbound_bytes: 0,
                inbound_packets: 0,
                outbound_packets: 0,
                start_time: 0.0,
                end_time: 0.0,
                splt: vec![],
                byte_counts: vec![0; 256],
                tls: None,
                label: None,
            },
            fwd_segments: fwd
                .into_iter()
                .map(|(ts_ms, data)| Segment { ts_ms, data })
                .collect(),
            rev_segments: rev
                .into_iter()
                .map(|(ts_ms, data)| Segment { ts_ms, data })
                .collect(),
        }
    }

    fn hello_flow(suites: &[u16], extensions: &[(u16, Vec<u8>)]) -> AssembledFlow {
        let ch = client_hello(0x0303, &[7u8; 32], suites, extensions);
        let sh = server_hello(0x0303, &[9u8; 32], suites[0], &[]);
        flow_from(
            vec![(0, record(CONTENT_HANDSHAKE, 0x0301, &ch))],
            vec![(20, record(CONTENT_HANDSHAKE, 0x0303, &sh))],
        )
    }

    #[test]
    fn parses_offer_order() {
        let flow = hello_flow(&[0x0004, 0x0005, 0x000a], &[]);
        let summary = parse_handshake(&flow).unwrap();
        assert_eq!(summary.offered_ciphersuites, vec![0x0004, 0x0005, 0x000a]);
        assert!(summary.advertised_extensions.is_empty());
        assert_eq!(summary.selected_ciphersuite, Some(0x0004));
        assert!(summary.complete);
    }

    #[test]
    fn zero_ciphersuites_rejected() {
        let ch = client_hello(0x0303, &[0u8; 32], &[], &[]);
        let sh = server_hello(0x0303, &[0u8; 32], 0x0004, &[]);
        let flow = flow_from(
            vec![(0, record(CONTENT_HANDSHAKE, 0x0301, &ch))],
            vec![(5, record(CONTENT_HANDSHAKE, 0x0303, &sh))],
        );
        assert!(matches!(
            parse_handshake(&flow),
            Err(TlsError::EmptyCiphersuites)
        ));
    }

    #[test]
    fn fragmented_hello_matches_single_record() {
        let suites = [0x002f, 0x0035, 0xc02f];
        let exts: Vec<(u16, Vec<u8>)> = vec![(0x0000, vec![0; 9]), (0x000d, vec![0; 4])];
        let ch = client_hello(0x0303, &[1u8; 32], &suites, &exts);
        let sh = server_hello(0x0303, &[2u8; 32], 0x002f, &[]);

        let whole = flow_from(
            vec![(0, record(CONTENT_HANDSHAKE, 0x0301, &ch))],
            vec![(9, record(CONTENT_HANDSHAKE, 0x0303, &sh))],
        );
        // Split mid-extensions across two records.
        let split = flow_from(
            vec![(0, records_fragmented(CONTENT_HANDSHAKE, 0x0301, &ch, ch.len() - 7))],
            vec![(9, record(CONTENT_HANDSHAKE, 0x0303, &sh))],
        );
        let a = parse_handshake(&whole).unwrap();
        let b = parse_handshake(&split).unwrap();
        assert_eq!(a.offered_ciphersuites, b.offered_ciphersuites);
        assert_eq!(a.advertised_extensions, b.advertised_extensions);
        assert_eq!(a.client_version, b.client_version);
        assert_eq!(a.selected_ciphersuite, b.selected_ciphersuite);
    }

    #[test]
    fn garbled_length_aborts() {
        let mut rec = record(CONTENT_HANDSHAKE, 0x0301, &[0u8; 10]);
        rec[3] = 0xff;
        rec[4] = 0xff;
        let flow = flow_from(vec![(0, rec)], vec![]);
        assert!(matches!(
            parse_handshake(&flow),
            Err(TlsError::GarbledLength(_))
        ));
    }

    #[test]
    fn truncated_hello_marks_incomplete() {
        let ch = client_hello(0x0303, &[1u8; 32], &[0x0004, 0x0005], &[]);
        let sh = server_hello(0x0303, &[2u8; 32], 0x0004, &[]);
        let mut full = record(CONTENT_HANDSHAKE, 0x0301, &ch);
        full.extend(record(CONTENT_HANDSHAKE, 0x0301, &client_key_exchange(&[0u8; 4])));
        // Chop the tail record mid-body.
        full.truncate(full.len() - 3);
        let flow = flow_from(vec![(0, full)], vec![(5, record(CONTENT_HANDSHAKE, 0x0303, &sh))]);
        let summary = parse_handshake(&flow).unwrap();
        assert!(!summary.complete);
        assert_eq!(summary.offered_ciphersuites, vec![0x0004, 0x0005]);
    }

    #[test]
    fn key_bits_by_family() {
        // RSA: 256-byte ciphertext -> 2048 bits.
        assert_eq!(
            public_key_bits(&key_exchange_body(KxFamily::Rsa, 2048, &[0xaa]), 0x002f).unwrap(),
            2048
        );
        // ECDHE: 65-byte uncompressed point -> 512 bits.
        assert_eq!(
            public_key_bits(&key_exchange_body(KxFamily::Ecdhe, 512, &[0xbb]), 0xc02f).unwrap(),
            512
        );
        // DHE: 256-byte public value -> 2048 bits.
        assert_eq!(
            public_key_bits(&key_exchange_body(KxFamily::Dhe, 2048, &[0xcc]), 0x0033).unwrap(),
            2048
        );
        assert!(matches!(
            public_key_bits(&[0u8; 8], 0xbeef),
            Err(TlsError::UnknownKeyExchange(0xbeef))
        ));
    }

    #[test]
    fn records_sequence_merged_with_gaps() {
        let ch = client_hello(0x0303, &[1u8; 32], &[0x0004], &[]);
        let sh = server_hello(0x0303, &[2u8; 32], 0x0004, &[]);
        let flow = flow_from(
            vec![
                (0, record(CONTENT_HANDSHAKE, 0x0301, &ch)),
                (100, record(CONTENT_APPDATA, 0x0303, &[0u8; 40])),
            ],
            vec![(30, record(CONTENT_HANDSHAKE, 0x0303, &sh))],
        );
        let summary = parse_handshake(&flow).unwrap();
        let kinds: Vec<u8> = summary.records.iter().map(|r| r.0).collect();
        let gaps: Vec<u64> = summary.records.iter().map(|r| r.2).collect();
        assert_eq!(kinds, vec![CONTENT_HANDSHAKE, CONTENT_HANDSHAKE, CONTENT_APPDATA]);
        assert_eq!(gaps, vec![0, 30, 70]);
    }
}
