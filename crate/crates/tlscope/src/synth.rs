//! Seeded synthetic traffic generation: labeled flows whose TLS
//! parameters and dynamics follow configurable class profiles, emitted
//! both as FlowRecords and as replayable pcap bytes.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assemble::{assemble_flows, detect_tls};
use crate::flow::{FlowRecord, PacketMeta};
use crate::pcap;
use crate::tls::registry::{kx_family, KxFamily};
use crate::tls::x509::{build_certificate, CertSpec};
use crate::tls::{build, parse_handshake};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile {label:?}: {reason}")]
    InvalidProfile { label: String, reason: String },
}

fn hex_key<S: serde::Serializer>(map: &BTreeMap<u16, f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(map.iter().map(|(k, v)| (format!("0x{k:04x}"), v)))
}

fn hex_key_de<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<u16, f64>, D::Error> {
    let raw = BTreeMap::<String, f64>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            crate::flow::hex16::parse_hex16(&k)
                .map(|c| (c, v))
                .map_err(serde::de::Error::custom)
        })
        .collect()
}

/// Traffic profile for one class or family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassProfile {
    pub label: String,
    /// Per-suite offer probability; suites are offered in ascending
    /// code order.
    #[serde(serialize_with = "hex_key", deserialize_with = "hex_key_de")]
    pub suite_offer_probs: BTreeMap<u16, f64>,
    #[serde(serialize_with = "hex_key", deserialize_with = "hex_key_de")]
    pub ext_probs: BTreeMap<u16, f64>,
    /// (key bits, probability) choices, normalized at sampling time.
    pub key_bits_choices: Vec<(u32, f64)>,
    pub self_signed_prob: f64,
    /// Suite the server selects when offered; falls back to the first
    /// offered suite.
    pub preferred_suite: Option<u16>,
    pub server_port: u16,
    /// Uniform range of application-record payload sizes, bytes.
    pub app_len_range: (u16, u16),
    /// Uniform range of application packets per flow.
    pub app_packets_range: (u8, u8),
    /// Uniform range of inter-packet gaps, milliseconds.
    pub gap_ms_range: (u64, u64),
    /// Payload bytes are drawn uniformly from this alphabet.
    pub payload_alphabet: Vec<u8>,
    /// Uniform range of flows per host window.
    pub flows_per_window: (u8, u8),
    pub cert_validity_days: i64,
    pub cert_san_count: u8,
}

impl ClassProfile {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: &str| SynthError::InvalidProfile {
            label: self.label.clone(),
            reason: reason.to_string(),
        };
        let all_probs = self
            .suite_offer_probs
            .values()
            .chain(self.ext_probs.values())
            .chain(std::iter::once(&self.self_signed_prob));
        for &p in all_probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad("probability outside [0,1]"));
            }
        }
        if !self.suite_offer_probs.values().any(|&p| p > 0.0) {
            return Err(bad("no suite with positive offer probability"));
        }
        if self.payload_alphabet.is_empty() {
            return Err(bad("empty payload alphabet"));
        }
        if self.flows_per_window.0 == 0 || self.flows_per_window.0 > self.flows_per_window.1 {
            return Err(bad("bad flows_per_window range"));
        }
        Ok(())
    }
}

/// Stylized enterprise client traffic, after the reported prevalence of
/// RSA-AES offers, rich extension lists, and 512-bit ECDHE keys.
pub fn enterprise_like() -> ClassProfile {
    ClassProfile {
        label: "enterprise-like".into(),
        suite_offer_probs: [
            (0x002f, 1.0),
            (0x0035, 1.0),
            (0xc013, 0.9),
            (0xc014, 0.9),
            (0xc02f, 1.0),
        ]
        .into_iter()
        .collect(),
        ext_probs: [
            (0x0000, 1.0),
            (0x0005, 0.5),
            (0x000a, 0.9),
            (0x000b, 0.9),
            (0x000d, 1.0),
            (0x0010, 0.5),
            (0x0017, 0.5),
            (0x0023, 0.6),
            (0xff01, 0.9),
        ]
        .into_iter()
        .collect(),
        key_bits_choices: vec![(512, 1.0)],
        self_signed_prob: 0.0,
        preferred_suite: Some(0xc02f),
        server_port: 443,
        app_len_range: (100, 1400),
        app_packets_range: (2, 10),
        gap_ms_range: (5, 120),
        payload_alphabet: (0..=255).collect(),
        flows_per_window: (1, 4),
        cert_validity_days: 730,
        cert_san_count: 2,
    }
}

/// Stylized malware client traffic: the three near-universal legacy RSA
/// offers, a lone signature_algorithms extension, 2048-bit RSA keys.
pub fn malware_like() -> ClassProfile {
    ClassProfile {
        label: "malware-like".into(),
        suite_offer_probs: [(0x0004, 1.0), (0x0005, 1.0), (0x000a, 1.0)]
            .into_iter()
            .collect(),
        ext_probs: [(0x000d, 1.0)].into_iter().collect(),
        key_bits_choices: vec![(2048, 1.0)],
        self_signed_prob: 0.3,
        preferred_suite: Some(0x0004),
        server_port: 443,
        app_len_range: (80, 1300),
        app_packets_range: (2, 10),
        gap_ms_range: (5, 120),
        payload_alphabet: (0..=255).collect(),
        flows_per_window: (1, 4),
        cert_validity_days: 375,
        cert_san_count: 3,
    }
}

/// A generated corpus: labeled flows plus the packets that realize them.
pub struct SynthCorpus {
    pub flows: Vec<FlowRecord>,
    pub packets: Vec<PacketMeta>,
}

impl SynthCorpus {
    pub fn to_pcap(&self) -> Vec<u8> {
        pcap::write_pcap(&self.packets)
    }
}

struct FlowPlan {
    client: Ipv4Addr,
    server: Ipv4Addr,
    client_port: u16,
    start_ms: u64,
}

/// Generate `n_flows` labeled flows split evenly across the profiles
/// (deterministic allocation, remainder to the earlier profiles).
/// Output is a pure function of (profiles, n_flows, seed).
pub fn generate(
    profiles: &[ClassProfile],
    n_flows: usize,
    seed: u64,
) -> Result<SynthCorpus, SynthError> {
    assert!(n_flows >= 1, "n_flows must be at least 1");
    for p in profiles {
        p.validate()?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut flows = Vec::with_capacity(n_flows);
    let mut packets = Vec::new();
    let base = n_flows / profiles.len();
    let rem = n_flows % profiles.len();
    // Hosts get disjoint windows on a global timeline so per-host
    // tumbling windows stay aligned to their first flow.
    let mut host_slot = 0u64;

    for (class_idx, profile) in profiles.iter().enumerate() {
        let quota = base + usize::from(class_idx < rem);
        let mut made = 0usize;
        let mut host_idx = 0u32;
        while made < quota {
            let host = Ipv4Addr::from(
                0x0a00_0000u32 + ((class_idx as u32 + 1) << 16) + host_idx % 0xffff + 1,
            );
            host_idx += 1;
            let window_flows = rng
                .gen_range(profile.flows_per_window.0..=profile.flows_per_window.1)
                as usize;
            let window_flows = window_flows.min(quota - made);
            let window_base_ms = host_slot * 1_000_000; // 1000 s apart
            host_slot += 1;
            for f in 0..window_flows {
                let plan = FlowPlan {
                    client: host,
                    server: Ipv4Addr::from(0xcb00_7100u32 + rng.gen_range(0..200)),
                    client_port: 40000 + f as u16,
                    start_ms: window_base_ms + rng.gen_range(0..240_000 / window_flows as u64)
                        + f as u64 * (240_000 / window_flows as u64),
                };
                let flow_packets = synth_flow_packets(profile, &plan, &mut rng);
                let mut assembled = assemble_flows(&flow_packets, 300.0);
                debug_assert_eq!(assembled.len(), 1);
                let mut af = assembled.remove(0);
                if detect_tls(&af) {
                    af.record.tls = parse_handshake(&af).ok();
                }
                af.record.label = Some(profile.label.clone());
                flows.push(af.record);
                packets.extend(flow_packets);
                made += 1;
            }
        }
    }
    packets.sort_by_key(|p| (p.ts_sec, p.ts_usec));
    Ok(SynthCorpus { flows, packets })
}

fn sample_codes(probs: &BTreeMap<u16, f64>, rng: &mut ChaCha20Rng) -> Vec<u16> {
    probs
        .iter()
        .filter(|&(_, &p)| p > 0.0 && rng.gen_bool(p.min(1.0)))
        .map(|(&c, _)| c)
        .collect()
}

fn sample_choice(choices: &[(u32, f64)], rng: &mut ChaCha20Rng) -> u32 {
    let total: f64 = choices.iter().map(|&(_, p)| p).sum();
    if total <= 0.0 {
        return choices.first().map(|&(v, _)| v).unwrap_or(2048);
    }
    let mut draw = rng.gen_range(0.0..total);
    for &(v, p) in choices {
        if draw < p {
            return v;
        }
        draw -= p;
    }
    choices.last().map(|&(v, _)| v).unwrap_or(2048)
}

fn synth_flow_packets(
    profile: &ClassProfile,
    plan: &FlowPlan,
    rng: &mut ChaCha20Rng,
) -> Vec<PacketMeta> {
    let mut suites = sample_codes(&profile.suite_offer_probs, rng);
    if suites.is_empty() {
        // Guarantee a nonempty offer: take the highest-probability suite.
        let best = profile
            .suite_offer_probs
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(&c, _)| c)
            .unwrap();
        suites.push(best);
    }
    let ext_codes = sample_codes(&profile.ext_probs, rng);
    let extensions: Vec<(u16, Vec<u8>)> = ext_codes.iter().map(|&c| (c, Vec::new())).collect();
    let selected = profile
        .preferred_suite
        .filter(|s| suites.contains(s))
        .unwrap_or(suites[0]);
    let key_bits = sample_choice(&profile.key_bits_choices, rng);
    let self_signed = profile.self_signed_prob > 0.0 && rng.gen_bool(profile.self_signed_prob);

    let mut client_random = [0u8; 32];
    rng.fill(&mut client_random);
    let mut server_random = [0u8; 32];
    rng.fill(&mut server_random);

    let version = 0x0303u16;
    let client_hello = build::record(
        build::CONTENT_HANDSHAKE,
        0x0301,
        &build::client_hello(version, &client_random, &suites, &extensions),
    );

    let cn = format!("host{}.{}.example", rng.gen_range(0..100000), profile.label);
    let subject = [("CN", cn.as_str())];
    let issuer_cn = "Example Trust CA";
    let issuer: &[(&str, &str)] = if self_signed {
        &subject
    } else {
        &[("CN", issuer_cn), ("O", "Example Trust")]
    };
    let san_names: Vec<String> = (0..profile.cert_san_count)
        .map(|i| format!("alt{i}.{cn}"))
        .collect();
    let san_refs: Vec<&str> = san_names.iter().map(|s| s.as_str()).collect();
    let not_before = 1_450_000_000i64; // fixed epoch anchor
    let der = build_certificate(&CertSpec {
        subject: &subject,
        issuer,
        not_before,
        not_after: not_before + profile.cert_validity_days * 86400,
        san_dns: &san_refs,
    });

    let mut server_flight = build::server_hello(version, &server_random, selected, &[]);
    server_flight.extend(build::certificate_msg(&der));
    server_flight.extend(build::server_hello_done());
    let server_flight = build::record(build::CONTENT_HANDSHAKE, version, &server_flight);

    let family = match kx_family(selected) {
        KxFamily::Unknown => KxFamily::Rsa,
        f => f,
    };
    let mut kx_filler = vec![0u8; 32];
    rng.fill(&mut kx_filler[..]);
    let kx_body = build::key_exchange_body(family, key_bits, &kx_filler);
    let mut client_flight = build::record(
        build::CONTENT_HANDSHAKE,
        version,
        &build::client_key_exchange(&kx_body),
    );
    client_flight.extend(build::change_cipher_spec(version));
    let mut finished = vec![0u8; 40];
    rng.fill(&mut finished[..]);
    client_flight.extend(build::record(build::CONTENT_HANDSHAKE, version, &finished));

    let mut server_finish = build::change_cipher_spec(version);
    let mut finished2 = vec![0u8; 40];
    rng.fill(&mut finished2[..]);
    server_finish.extend(build::record(build::CONTENT_HANDSHAKE, version, &finished2));

    // Packet sequence.
    let mut out = Vec::new();
    let mut ts_ms = plan.start_ms;
    let mut client_seq = 1000u32;
    let mut server_seq = 9000u32;
    let gap = |rng: &mut ChaCha20Rng| rng.gen_range(profile.gap_ms_range.0..=profile.gap_ms_range.1);

    let push = |payload: Vec<u8>,
                    from_client: bool,
                    flags: u8,
                    ts_ms: u64,
                    client_seq: &mut u32,
                    server_seq: &mut u32,
                    out: &mut Vec<PacketMeta>| {
        let (src_addr, dst_addr, src_port, dst_port, seq) = if from_client {
            (plan.client, plan.server, plan.client_port, profile.server_port, *client_seq)
        } else {
            (plan.server, plan.client, profile.server_port, plan.client_port, *server_seq)
        };
        if from_client {
            *client_seq += payload.len().max(1) as u32;
        } else {
            *server_seq += payload.len().max(1) as u32;
        }
        out.push(PacketMeta {
            ts_sec: (ts_ms / 1000) as u32,
            ts_usec: ((ts_ms % 1000) * 1000) as u32,
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            protocol: 6,
            payload,
            tcp_seq: seq,
            tcp_flags: flags,
        });
    };

    push(Vec::new(), true, 0x02, ts_ms, &mut client_seq, &mut server_seq, &mut out); // SYN
    ts_ms += gap(rng);
    push(Vec::new(), false, 0x12, ts_ms, &mut client_seq, &mut server_seq, &mut out); // SYN/ACK
    ts_ms += gap(rng);
    push(client_hello, true, 0x18, ts_ms, &mut client_seq, &mut server_seq, &mut out);
    ts_ms += gap(rng);
    push(server_flight, false, 0x18, ts_ms, &mut client_seq, &mut server_seq, &mut out);
    ts_ms += gap(rng);
    push(client_flight, true, 0x18, ts_ms, &mut client_seq, &mut server_seq, &mut out);
    ts_ms += gap(rng);
    push(server_finish, false, 0x18, ts_ms, &mut client_seq, &mut server_seq, &mut out);

    let n_app = rng.gen_range(profile.app_packets_range.0..=profile.app_packets_range.1);
    for i in 0..n_app {
        ts_ms += gap(rng);
        let len = rng.gen_range(profile.app_len_range.0..=profile.app_len_range.1) as usize;
        let body: Vec<u8> = (0..len)
            .map(|_| profile.payload_alphabet[rng.gen_range(0..profile.payload_alphabet.len())])
            .collect();
        let rec = build::record(build::CONTENT_APPDATA, version, &body);
        push(rec, i % 2 == 0, 0x18, ts_ms, &mut client_seq, &mut server_seq, &mut out);
    }
    ts_ms += gap(rng);
    push(Vec::new(), true, 0x11, ts_ms, &mut client_seq, &mut server_seq, &mut out); // FIN
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let profiles = vec![enterprise_like(), malware_like()];
        let a = generate(&profiles, 20, 42).unwrap();
        let b = generate(&profiles, 20, 42).unwrap();
        assert_eq!(a.flows, b.flows);
        assert_eq!(a.packets, b.packets);
        let c = generate(&profiles, 20, 43).unwrap();
        assert_ne!(a.to_pcap(), c.to_pcap());
    }

    #[test]
    fn label_mix_is_exact() {
        let profiles = vec![enterprise_like(), malware_like()];
        let corpus = generate(&profiles, 21, 7).unwrap();
        let ent = corpus
            .flows
            .iter()
            .filter(|f| f.label.as_deref() == Some("enterprise-like"))
            .count();
        assert_eq!(ent, 11);
        assert_eq!(corpus.flows.len(), 21);
    }

    #[test]
    fn deterministic_offers_are_always_present() {
        let corpus = generate(&[malware_like()], 50, 3).unwrap();
        for f in &corpus.flows {
            let tls = f.tls.as_ref().expect("tls parsed");
            assert_eq!(tls.offered_ciphersuites, vec![0x0004, 0x0005, 0x000a]);
            assert_eq!(tls.client_public_key_bits, Some(2048));
        }
    }

    #[test]
    fn self_signed_fraction_tracks_probability() {
        let mut profile = malware_like();
        profile.self_signed_prob = 0.5;
        let corpus = generate(&[profile], 1000, 11).unwrap();
        let selfsigned = corpus
            .flows
            .iter()
            .filter(|f| {
                f.tls
                    .as_ref()
                    .and_then(|t| t.cert.as_ref())
                    .is_some_and(|c| c.self_signed)
            })
            .count();
        let frac = selfsigned as f64 / 1000.0;
        assert!((frac - 0.5).abs() < 0.05, "fraction {frac}");
    }

    #[test]
    fn empty_profile_rejected() {
        let mut p = malware_like();
        p.suite_offer_probs = [(0x0004u16, 0.0)].into_iter().collect();
        assert!(matches!(
            generate(&[p], 1, 0),
            Err(SynthError::InvalidProfile { .. })
        ));
    }

    #[test]
    fn pcap_round_trip_reproduces_flows() {
        let profiles = vec![enterprise_like(), malware_like()];
        let corpus = generate(&profiles, 10, 99).unwrap();
        let (packets, tally) = pcap::parse_pcap(&corpus.to_pcap()).unwrap();
        assert_eq!(tally.skipped(), 0);
        let assembled = assemble_flows(&packets, 300.0);
        assert_eq!(assembled.len(), corpus.flows.len());
        for af in &assembled {
            let mut rec = af.record.clone();
            if detect_tls(af) {
                rec.tls = parse_handshake(af).ok();
            }
            let original = corpus
                .flows
                .iter()
                .find(|f| {
                    f.src_addr == rec.src_addr
                        && f.src_port == rec.src_port
                        && f.dst_addr == rec.dst_addr
                        && f.dst_port == rec.dst_port
                        && f.start_time == rec.start_time
                })
                .expect("matching source flow");
            rec.label = original.label.clone();
            assert_eq!(&rec, original);
        }
    }

    #[test]
    fn non_443_flows_still_detected_as_tls() {
        let mut p = malware_like();
        p.server_port = 9001;
        let corpus = generate(&[p], 5, 5).unwrap();
        for f in &corpus.flows {
            assert_eq!(f.dst_port, 9001);
            assert!(f.tls.is_some());
        }
    }

    #[test]
    fn profile_json_round_trip() {
        let p = enterprise_like();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"0x002f\""));
        let back: ClassProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.suite_offer_probs, p.suite_offer_probs);
    }
}
