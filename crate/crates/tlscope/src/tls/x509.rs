//! Minimal DER X.509 parsing: subject/issuer rendering, validity in
//! days, subjectAltName count, and the self-signed check (byte equality
//! of the subject and issuer Name elements). Also a small certificate
//! builder used by the synthetic corpus and tests.

use thiserror::Error;

use crate::flow::CertificateInfo;

#[derive(Debug, Error)]
pub enum DerError {
    #[error("malformed DER: {0}")]
    Malformed(String),
}

fn err<T>(msg: &str) -> Result<T, DerError> {
    Err(DerError::Malformed(msg.into()))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

#[derive(Clone, Copy)]
struct Element<'a> {
    tag: u8,
    content: &'a [u8],
    /// Full TLV bytes including tag and length.
    raw: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn done(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn next(&mut self) -> Result<Element<'a>, DerError> {
        let start = self.pos;
        if self.pos + 2 > self.data.len() {
            return err("truncated TLV header");
        }
        let tag = self.data[self.pos];
        let mut len = self.data[self.pos + 1] as usize;
        self.pos += 2;
        if len & 0x80 != 0 {
            let n = len & 0x7f;
            if n == 0 || n > 4 || self.pos + n > self.data.len() {
                return err("bad length encoding");
            }
            len = 0;
            for _ in 0..n {
                len = (len << 8) | self.data[self.pos] as usize;
                self.pos += 1;
            }
        }
        if self.pos + len > self.data.len() {
            return err("content exceeds buffer");
        }
        let content = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(Element {
            tag,
            content,
            raw: &self.data[start..self.pos],
        })
    }
}

fn expect<'a>(el: Element<'a>, tag: u8, what: &str) -> Result<Element<'a>, DerError> {
    if el.tag != tag {
        return err(&format!("expected {what} (tag 0x{tag:02x}), got 0x{:02x}", el.tag));
    }
    Ok(el)
}

const TAG_SEQUENCE: u8 = 0x30;
const TAG_SET: u8 = 0x31;
const TAG_OID: u8 = 0x06;
const TAG_INTEGER: u8 = 0x02;
const TAG_UTC_TIME: u8 = 0x17;
const TAG_GENERALIZED_TIME: u8 = 0x18;
const TAG_OCTET_STRING: u8 = 0x04;
const TAG_UTF8_STRING: u8 = 0x0c;
const TAG_PRINTABLE_STRING: u8 = 0x13;
const TAG_IA5_STRING: u8 = 0x16;
const OID_SAN: &[u8] = &[0x55, 0x1d, 0x11]; // 2.5.29.17

/// Parse one DER-encoded certificate into the fields the pipeline uses.
pub fn parse_certificate(der: &[u8]) -> Result<CertificateInfo, DerError> {
    let mut top = Reader::new(der);
    let cert = expect(top.next()?, TAG_SEQUENCE, "Certificate")?;
    let mut cert_r = Reader::new(cert.content);
    let tbs = expect(cert_r.next()?, TAG_SEQUENCE, "TBSCertificate")?;

    let mut tbs_r = Reader::new(tbs.content);
    let mut el = tbs_r.next()?;
    if el.tag == 0xa0 {
        // [0] EXPLICIT version
        el = tbs_r.next()?;
    }
    expect(el, TAG_INTEGER, "serialNumber")?;
    expect(tbs_r.next()?, TAG_SEQUENCE, "signature algorithm")?;
    let issuer = expect(tbs_r.next()?, TAG_SEQUENCE, "issuer Name")?;
    let validity = expect(tbs_r.next()?, TAG_SEQUENCE, "Validity")?;
    let subject = expect(tbs_r.next()?, TAG_SEQUENCE, "subject Name")?;
    expect(tbs_r.next()?, TAG_SEQUENCE, "subjectPublicKeyInfo")?;

    let mut san_count = 0u32;
    while !tbs_r.done() {
        let opt = tbs_r.next()?;
        if opt.tag == 0xa3 {
            san_count = count_san(opt.content)?;
        }
    }

    let mut val_r = Reader::new(validity.content);
    let not_before = parse_time(val_r.next()?)?;
    let not_after = parse_time(val_r.next()?)?;
    let validity_days = (not_after - not_before).div_euclid(86400);

    Ok(CertificateInfo {
        subject: render_name(subject.content)?,
        issuer: render_name(issuer.content)?,
        validity_days,
        san_count,
        self_signed: subject.raw == issuer.raw,
    })
}

fn count_san(extensions_wrapper: &[u8]) -> Result<u32, DerError> {
    let mut wrap = Reader::new(extensions_wrapper);
    let exts = expect(wrap.next()?, TAG_SEQUENCE, "Extensions")?;
    let mut exts_r = Reader::new(exts.content);
    while !exts_r.done() {
        let ext = expect(exts_r.next()?, TAG_SEQUENCE, "Extension")?;
        let mut ext_r = Reader::new(ext.content);
        let oid = expect(ext_r.next()?, TAG_OID, "extnID")?;
        let mut value = ext_r.next()?;
        if value.tag == 0x01 {
            // critical BOOLEAN
            value = ext_r.next()?;
        }
        let value = expect(value, TAG_OCTET_STRING, "extnValue")?;
        if oid.content == OID_SAN {
            let mut inner = Reader::new(value.content);
            let names = expect(inner.next()?, TAG_SEQUENCE, "GeneralNames")?;
            let mut names_r = Reader::new(names.content);
            let mut count = 0u32;
            while !names_r.done() {
                names_r.next()?;
                count += 1;
            }
            return Ok(count);
        }
    }
    Ok(0)
}

fn parse_time(el: Element<'_>) -> Result<i64, DerError> {
    let text = std::str::from_utf8(el.content).map_err(|_| DerError::Malformed("time not ASCII".into()))?;
    let digits = |s: &str| -> Result<i64, DerError> {
        s.parse::<i64>().map_err(|_| DerError::Malformed("bad time digits".into()))
    };
    let (year, rest) = match el.tag {
        TAG_UTC_TIME => {
            if text.len() < 13 {
                return err("short UTCTime");
            }
            let yy = digits(&text[0..2])?;
            let year = if yy < 50 { 2000 + yy } else { 1900 + yy };
            (year, &text[2..])
        }
        TAG_GENERALIZED_TIME => {
            if text.len() < 15 {
                return err("short GeneralizedTime");
            }
            (digits(&text[0..4])?, &text[4..])
        }
        _ => return err("expected UTCTime or GeneralizedTime"),
    };
    let month = digits(&rest[0..2])?;
    let day = digits(&rest[2..4])?;
    let hour = digits(&rest[4..6])?;
    let minute = digits(&rest[6..8])?;
    let second = digits(&rest[8..10])?;
    if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
        return err("bad calendar date");
    }
    Ok(days_from_civil(year, month, day) * 86400 + hour * 3600 + minute * 60 + second)
}

/// Days since 1970-01-01 (proleptic Gregorian).
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn render_name(rdn_sequence: &[u8]) -> Result<String, DerError> {
    let mut parts = Vec::new();
    let mut seq_r = Reader::new(rdn_sequence);
    while !seq_r.done() {
        let set = expect(seq_r.next()?, TAG_SET, "RDN set")?;
        let mut set_r = Reader::new(set.content);
        while !set_r.done() {
            let atv = expect(set_r.next()?, TAG_SEQUENCE, "AttributeTypeAndValue")?;
            let mut atv_r = Reader::new(atv.content);
            let oid = expect(atv_r.next()?, TAG_OID, "attribute type")?;
            let value = atv_r.next()?;
            let text = match value.tag {
                TAG_UTF8_STRING | TAG_PRINTABLE_STRING | TAG_IA5_STRING => {
                    String::from_utf8_lossy(value.content).into_owned()
                }
                _ => value
                    .content
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect::<String>(),
            };
            parts.push(format!("{}={}", attr_name(oid.content), text));
        }
    }
    // RFC 2253 lists RDNs last-to-first.
    parts.reverse();
    Ok(parts.join(","))
}

fn attr_name(oid: &[u8]) -> String {
    match oid {
        [0x55, 0x04, 0x03] => "CN".into(),
        [0x55, 0x04, 0x06] => "C".into(),
        [0x55, 0x04, 0x07] => "L".into(),
        [0x55, 0x04, 0x08] => "ST".into(),
        [0x55, 0x04, 0x0a] => "O".into(),
        [0x55, 0x04, 0x0b] => "OU".into(),
        _ => render_oid(oid),
    }
}

fn render_oid(oid: &[u8]) -> String {
    if oid.is_empty() {
        return String::new();
    }
    let mut parts = vec![(oid[0] / 40).to_string(), (oid[0] % 40).to_string()];
    let mut acc = 0u64;
    for &b in &oid[1..] {
        acc = (acc << 7) | (b & 0x7f) as u64;
        if b & 0x80 == 0 {
            parts.push(acc.to_string());
            acc = 0;
        }
    }
    parts.join(".")
}

// --- DER building (synthetic certificates) ---

fn tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = vec![tag];
    let len = content.len();
    if len < 128 {
        out.push(len as u8);
    } else {
        let bytes = (len as u32).to_be_bytes();
        let first = bytes.iter().position(|&b| b != 0).unwrap_or(3);
        out.push(0x80 | (4 - first) as u8);
        out.extend_from_slice(&bytes[first..]);
    }
    out.extend_from_slice(content);
    out
}

fn name_der(rdns: &[(&str, &str)]) -> Vec<u8> {
    let mut seq = Vec::new();
    for &(attr, value) in rdns {
        let oid: &[u8] = match attr {
            "CN" => &[0x55, 0x04, 0x03],
            "C" => &[0x55, 0x04, 0x06],
            "O" => &[0x55, 0x04, 0x0a],
            "OU" => &[0x55, 0x04, 0x0b],
            _ => &[0x55, 0x04, 0x03],
        };
        let mut atv = tlv(TAG_OID, oid);
        atv.extend(tlv(TAG_UTF8_STRING, value.as_bytes()));
        seq.extend(tlv(TAG_SET, &tlv(TAG_SEQUENCE, &atv)));
    }
    tlv(TAG_SEQUENCE, &seq)
}

fn utc_time(epoch_secs: i64) -> Vec<u8> {
    // Inverse of days_from_civil. Dates outside the UTCTime range are
    // encoded as GeneralizedTime.
    let days = epoch_secs.div_euclid(86400);
    let secs = epoch_secs.rem_euclid(86400);
    let z = days + 719468;
    let era = z.div_euclid(146097);
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = if m <= 2 { y + 1 } else { y };
    let (hh, mm, ss) = (secs / 3600, (secs % 3600) / 60, secs % 60);
    if (1950..2050).contains(&y) {
        let text = format!("{:02}{m:02}{d:02}{hh:02}{mm:02}{ss:02}Z", y % 100);
        tlv(TAG_UTC_TIME, text.as_bytes())
    } else {
        let text = format!("{y:04}{m:02}{d:02}{hh:02}{mm:02}{ss:02}Z");
        tlv(TAG_GENERALIZED_TIME, text.as_bytes())
    }
}

/// Build a minimal, syntactically valid certificate. The signature is a
/// placeholder; only structure matters to the pipeline.
pub struct CertSpec<'a> {
    pub subject: &'a [(&'a str, &'a str)],
    pub issuer: &'a [(&'a str, &'a str)],
    pub not_before: i64,
    pub not_after: i64,
    pub san_dns: &'a [&'a str],
}

pub fn build_certificate(spec: &CertSpec<'_>) -> Vec<u8> {
    let mut tbs = Vec::new();
    tbs.extend(tlv(TAG_INTEGER, &[0x01])); // serialNumber
    let sig_alg = tlv(TAG_SEQUENCE, &tlv(TAG_OID, &[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x01, 0x0b]));
    tbs.extend(&sig_alg);
    tbs.extend(name_der(spec.issuer));
    let mut validity = utc_time(spec.not_before);
    validity.extend(utc_time(spec.not_after));
    tbs.extend(tlv(TAG_SEQUENCE, &validity));
    tbs.extend(name_der(spec.subject));
    // subjectPublicKeyInfo: opaque placeholder
    let mut spki = tlv(TAG_SEQUENCE, &tlv(TAG_OID, &[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x01, 0x01]));
    spki.extend(tlv(0x03, &[0x00, 0xde, 0xad, 0xbe, 0xef]));
    tbs.extend(tlv(TAG_SEQUENCE, &spki));
    if !spec.san_dns.is_empty() {
        let mut names = Vec::new();
        for dns in spec.san_dns {
            names.extend(tlv(0x82, dns.as_bytes())); // GeneralName dNSName
        }
        let mut ext = tlv(TAG_OID, OID_SAN);
        ext.extend(tlv(TAG_OCTET_STRING, &tlv(TAG_SEQUENCE, &names)));
        let exts = tlv(TAG_SEQUENCE, &tlv(TAG_SEQUENCE, &ext));
        tbs.extend(tlv(0xa3, &exts));
    }
    let mut cert = tlv(TAG_SEQUENCE, &tbs);
    cert.extend(&sig_alg);
    cert.extend(tlv(0x03, &[0x00, 0x00])); // placeholder signature
    tlv(TAG_SEQUENCE, &cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(y: i64, m: i64, d: i64) -> i64 {
        days_from_civil(y, m, d) * 86400
    }

    #[test]
    fn self_signed_when_subject_equals_issuer() {
        let name = [("CN", "evil.example")];
        let der = build_certificate(&CertSpec {
            subject: &name,
            issuer: &name,
            not_before: epoch(2016, 1, 1),
            not_after: epoch(2017, 1, 10),
            san_dns: &[],
        });
        let info = parse_certificate(&der).unwrap();
        assert!(info.self_signed);
        assert_eq!(info.subject, info.issuer);
    }

    #[test]
    fn validity_days_375() {
        let der = build_certificate(&CertSpec {
            subject: &[("CN", "host.example")],
            issuer: &[("CN", "Some CA"), ("O", "CA Org")],
            not_before: epoch(2016, 1, 1),
            not_after: epoch(2017, 1, 10),
            san_dns: &[],
        });
        let info = parse_certificate(&der).unwrap();
        assert_eq!(info.validity_days, 375);
        assert!(!info.self_signed);
    }

    #[test]
    fn san_count_three() {
        let der = build_certificate(&CertSpec {
            subject: &[("CN", "a.example")],
            issuer: &[("CN", "ca.example")],
            not_before: epoch(2015, 6, 1),
            not_after: epoch(2016, 6, 1),
            san_dns: &["a.example", "b.example", "c.example"],
        });
        assert_eq!(parse_certificate(&der).unwrap().san_count, 3);
    }

    #[test]
    fn subject_renders_rfc2253_style() {
        let der = build_certificate(&CertSpec {
            subject: &[("C", "US"), ("O", "Example"), ("CN", "host.example")],
            issuer: &[("CN", "ca")],
            not_before: epoch(2016, 1, 1),
            not_after: epoch(2016, 2, 1),
            san_dns: &[],
        });
        let info = parse_certificate(&der).unwrap();
        assert_eq!(info.subject, "CN=host.example,O=Example,C=US");
    }

    #[test]
    fn generalized_time_supported() {
        // Dates from 2050 on are encoded as GeneralizedTime.
        let der = build_certificate(&CertSpec {
            subject: &[("CN", "x")],
            issuer: &[("CN", "y")],
            not_before: epoch(2050, 1, 1),
            not_after: epoch(2050, 1, 11),
            san_dns: &[],
        });
        let info = parse_certificate(&der).unwrap();
        assert_eq!(info.validity_days, 10);
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(parse_certificate(&[0x30, 0x05, 0x01, 0x02]).is_err());
        assert!(parse_certificate(&[]).is_err());
    }

    #[test]
    fn self_signed_invariant_under_unrelated_fields() {
        let name = [("CN", "same.example")];
        let a = build_certificate(&CertSpec {
            subject: &name,
            issuer: &name,
            not_before: epoch(2015, 1, 1),
            not_after: epoch(2015, 3, 1),
            san_dns: &[],
        });
        let b = build_certificate(&CertSpec {
            subject: &name,
            issuer: &name,
            not_before: epoch(2020, 5, 5),
            not_after: epoch(2021, 5, 5),
            san_dns: &["x.example"],
        });
        assert!(parse_certificate(&a).unwrap().self_signed);
        assert!(parse_certificate(&b).unwrap().self_signed);
    }
}
