//! Classic pcap (v2.4) reading and writing, Ethernet/IPv4/TCP only.

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::flow::PacketMeta;

const MAGIC_LE: u32 = 0xa1b2c3d4;
const MAGIC_NS_1: u32 = 0xa1b23c4d;
const MAGIC_NS_2: u32 = 0x4d3cb2a1;
const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("malformed pcap header: {0}")]
    MalformedHeader(String),
}

/// Counts of records skipped during parsing, by reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestTally {
    pub non_ipv4: u64,
    pub non_tcp: u64,
    pub truncated: u64,
}

impl IngestTally {
    pub fn skipped(&self) -> u64 {
        self.non_ipv4 + self.non_tcp + self.truncated
    }
}

/// Parse a classic pcap byte stream into IPv4/TCP packets.
///
/// Both byte orders are accepted; nanosecond-precision magics are
/// rejected. Non-IPv4/TCP records are skipped and tallied, truncated
/// record headers abort.
pub fn parse_pcap(bytes: &[u8]) -> Result<(Vec<PacketMeta>, IngestTally), PcapError> {
    if bytes.len() < 24 {
        return Err(PcapError::MalformedHeader("truncated global header".into()));
    }
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let swapped = match magic {
        MAGIC_LE => false,
        m if m == MAGIC_LE.swap_bytes() => true,
        MAGIC_NS_1 | MAGIC_NS_2 => {
            return Err(PcapError::MalformedHeader(
                "nanosecond-precision pcap not supported".into(),
            ))
        }
        m => {
            return Err(PcapError::MalformedHeader(format!(
                "unrecognized magic 0x{m:08x}"
            )))
        }
    };
    let read_u32 = |b: &[u8]| -> u32 {
        let v = u32::from_le_bytes(b.try_into().unwrap());
        if swapped {
            v.swap_bytes()
        } else {
            v
        }
    };
    let linktype = read_u32(&bytes[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::MalformedHeader(format!(
            "unsupported link type {linktype}"
        )));
    }

    let mut packets = Vec::new();
    let mut tally = IngestTally::default();
    let mut off = 24;
    while off < bytes.len() {
        if off + 16 > bytes.len() {
            return Err(PcapError::MalformedHeader("truncated record header".into()));
        }
        let ts_sec = read_u32(&bytes[off..off + 4]);
        let ts_usec = read_u32(&bytes[off + 4..off + 8]);
        let incl_len = read_u32(&bytes[off + 8..off + 12]) as usize;
        off += 16;
        if off + incl_len > bytes.len() {
            tally.truncated += 1;
            break;
        }
        let frame = &bytes[off..off + incl_len];
        off += incl_len;
        match decode_frame(frame, ts_sec, ts_usec) {
            Ok(pkt) => packets.push(pkt),
            Err(Skip::NonIpv4) => tally.non_ipv4 += 1,
            Err(Skip::NonTcp) => tally.non_tcp += 1,
            Err(Skip::Truncated) => tally.truncated += 1,
        }
    }
    Ok((packets, tally))
}

enum Skip {
    NonIpv4,
    NonTcp,
    Truncated,
}

fn decode_frame(frame: &[u8], ts_sec: u32, ts_usec: u32) -> Result<PacketMeta, Skip> {
    if frame.len() < 14 {
        return Err(Skip::Truncated);
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != 0x0800 {
        return Err(Skip::NonIpv4);
    }
    let ip = &frame[14..];
    if ip.len() < 20 {
        return Err(Skip::Truncated);
    }
    if ip[0] >> 4 != 4 {
        return Err(Skip::NonIpv4);
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    if ihl < 20 || ip.len() < total_len || total_len < ihl {
        return Err(Skip::Truncated);
    }
    if ip[9] != 6 {
        return Err(Skip::NonTcp);
    }
    let src_addr = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_addr = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);
    let tcp = &ip[ihl..total_len];
    if tcp.len() < 20 {
        return Err(Skip::Truncated);
    }
    let data_off = ((tcp[12] >> 4) as usize) * 4;
    if data_off < 20 || tcp.len() < data_off {
        return Err(Skip::Truncated);
    }
    Ok(PacketMeta {
        ts_sec,
        ts_usec,
        src_addr,
        dst_addr,
        src_port: u16::from_be_bytes([tcp[0], tcp[1]]),
        dst_port: u16::from_be_bytes([tcp[2], tcp[3]]),
        protocol: 6,
        payload: tcp[data_off..].to_vec(),
        tcp_seq: u32::from_be_bytes([tcp[4], tcp[5], tcp[6], tcp[7]]),
        tcp_flags: tcp[13],
    })
}

/// Serialize packets back into a classic little-endian pcap stream.
pub fn write_pcap(packets: &[PacketMeta]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + packets.len() * 128);
    out.extend_from_slice(&MAGIC_LE.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // version major
    out.extend_from_slice(&4u16.to_le_bytes()); // version minor
    out.extend_from_slice(&0u32.to_le_bytes()); // thiszone
    out.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
    out.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for pkt in packets {
        let frame = encode_frame(pkt);
        out.extend_from_slice(&pkt.ts_sec.to_le_bytes());
        out.extend_from_slice(&pkt.ts_usec.to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        out.extend_from_slice(&frame);
    }
    out
}

fn encode_frame(pkt: &PacketMeta) -> Vec<u8> {
    let tcp_len = 20 + pkt.payload.len();
    let ip_len = 20 + tcp_len;
    let mut frame = Vec::with_capacity(14 + ip_len);
    // Ethernet header with fixed locally-administered MACs.
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    frame.extend_from_slice(&0x0800u16.to_be_bytes());
    // IPv4 header.
    let ip_start = frame.len();
    frame.push(0x45);
    frame.push(0);
    frame.extend_from_slice(&(ip_len as u16).to_be_bytes());
    frame.extend_from_slice(&[0, 0, 0x40, 0]); // id, DF
    frame.push(64); // ttl
    frame.push(6); // tcp
    frame.extend_from_slice(&[0, 0]); // checksum placeholder
    frame.extend_from_slice(&pkt.src_addr.octets());
    frame.extend_from_slice(&pkt.dst_addr.octets());
    let cksum = ipv4_checksum(&frame[ip_start..ip_start + 20]);
    frame[ip_start + 10..ip_start + 12].copy_from_slice(&cksum.to_be_bytes());
    // TCP header.
    frame.extend_from_slice(&pkt.src_port.to_be_bytes());
    frame.extend_from_slice(&pkt.dst_port.to_be_bytes());
    frame.extend_from_slice(&pkt.tcp_seq.to_be_bytes());
    frame.extend_from_slice(&0u32.to_be_bytes()); // ack
    frame.push(5 << 4); // data offset
    frame.push(pkt.tcp_flags);
    frame.extend_from_slice(&8192u16.to_be_bytes()); // window
    frame.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent
    frame.extend_from_slice(&pkt.payload);
    frame
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        let word = u16::from_be_bytes([chunk[0], *chunk.get(1).unwrap_or(&0)]);
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(payload: &[u8], seq: u32, flags: u8) -> PacketMeta {
        PacketMeta {
            ts_sec: 100,
            ts_usec: 250_000,
            src_addr: Ipv4Addr::new(10, 0, 0, 1),
            dst_addr: Ipv4Addr::new(10, 0, 0, 2),
            src_port: 40000,
            dst_port: 443,
            protocol: 6,
            payload: payload.to_vec(),
            tcp_seq: seq,
            tcp_flags: flags,
        }
    }

    #[test]
    fn empty_capture_parses_to_nothing() {
        let bytes = write_pcap(&[]);
        let (packets, tally) = parse_pcap(&bytes).unwrap();
        assert!(packets.is_empty());
        assert_eq!(tally.skipped(), 0);
    }

    #[test]
    fn bad_magic_is_malformed() {
        let mut bytes = write_pcap(&[]);
        bytes[0..4].copy_from_slice(&[0x0d, 0x0c, 0x0b, 0x0a]);
        assert!(matches!(
            parse_pcap(&bytes),
            Err(PcapError::MalformedHeader(_))
        ));
    }

    #[test]
    fn nanosecond_magic_rejected() {
        let mut bytes = write_pcap(&[]);
        bytes[0..4].copy_from_slice(&MAGIC_NS_1.to_le_bytes());
        assert!(parse_pcap(&bytes).is_err());
    }

    #[test]
    fn crafted_three_packet_exchange() {
        // SYN, SYN/ACK, then "GET" from the initiator.
        let packets = vec![
            pkt(&[], 1000, 0x02),
            PacketMeta {
                src_addr: Ipv4Addr::new(10, 0, 0, 2),
                dst_addr: Ipv4Addr::new(10, 0, 0, 1),
                src_port: 443,
                dst_port: 40000,
                ..pkt(&[], 2000, 0x12)
            },
            pkt(b"GET", 1001, 0x18),
        ];
        let bytes = write_pcap(&packets);
        let (parsed, tally) = parse_pcap(&bytes).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(tally.skipped(), 0);
        assert_eq!(parsed[2].payload, b"GET");
        assert_eq!(parsed[2].tcp_seq, 1001);
        assert_eq!(parsed, packets);
    }

    #[test]
    fn round_trip_is_lossless() {
        let packets = vec![pkt(b"hello", 7, 0x18), pkt(&[0u8; 1400], 12, 0x10)];
        let (parsed, _) = parse_pcap(&write_pcap(&packets)).unwrap();
        assert_eq!(parsed, packets);
    }

    #[test]
    fn big_endian_capture_accepted() {
        let packets = vec![pkt(b"abc", 5, 0x18)];
        let mut bytes = write_pcap(&packets);
        // Rewrite every header field byte-swapped.
        for range in [0..4usize, 8..12, 12..16, 16..20, 20..24] {
            let v = u32::from_le_bytes(bytes[range.clone()].try_into().unwrap());
            bytes[range].copy_from_slice(&v.to_be_bytes());
        }
        for range in [4..6usize, 6..8] {
            let v = u16::from_le_bytes(bytes[range.clone()].try_into().unwrap());
            bytes[range].copy_from_slice(&v.to_be_bytes());
        }
        for base in [24usize] {
            for range in [base..base + 4, base + 4..base + 8, base + 8..base + 12, base + 12..base + 16] {
                let v = u32::from_le_bytes(bytes[range.clone()].try_into().unwrap());
                bytes[range].copy_from_slice(&v.to_be_bytes());
            }
        }
        let (parsed, _) = parse_pcap(&bytes).unwrap();
        assert_eq!(parsed, packets);
    }

    #[test]
    fn non_tcp_records_tallied() {
        let mut packets = vec![pkt(b"x", 1, 0x18)];
        let bytes = write_pcap(&packets);
        // Flip the protocol byte of the first packet's IP header to UDP.
        let mut udp_bytes = bytes.clone();
        let proto_off = 24 + 16 + 14 + 9;
        udp_bytes[proto_off] = 17;
        // Checksum no longer matches but the parser does not verify it.
        let (parsed, tally) = parse_pcap(&udp_bytes).unwrap();
        assert!(parsed.is_empty());
        assert_eq!(tally.non_tcp, 1);
        packets.clear();
    }
}
