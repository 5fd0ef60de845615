//! TLS 1.x record and handshake message synthesis, used by the corpus
//! generator and by round-trip tests.

use super::registry::KxFamily;

pub const CONTENT_HANDSHAKE: u8 = 0x16;
pub const CONTENT_CCS: u8 = 0x14;
pub const CONTENT_APPDATA: u8 = 0x17;

pub const HS_CLIENT_HELLO: u8 = 0x01;
pub const HS_SERVER_HELLO: u8 = 0x02;
pub const HS_CERTIFICATE: u8 = 0x0b;
pub const HS_SERVER_HELLO_DONE: u8 = 0x0e;
pub const HS_CLIENT_KEY_EXCHANGE: u8 = 0x10;

fn handshake_msg(hs_type: u8, body: &[u8]) -> Vec<u8> {
    let mut out = vec![hs_type];
    let len = body.len() as u32;
    out.extend_from_slice(&len.to_be_bytes()[1..]);
    out.extend_from_slice(body);
    out
}

fn extensions_block(extensions: &[(u16, Vec<u8>)]) -> Vec<u8> {
    let mut exts = Vec::new();
    for (code, data) in extensions {
        exts.extend_from_slice(&code.to_be_bytes());
        exts.extend_from_slice(&(data.len() as u16).to_be_bytes());
        exts.extend_from_slice(data);
    }
    let mut out = (exts.len() as u16).to_be_bytes().to_vec();
    out.extend_from_slice(&exts);
    out
}

pub fn client_hello(
    version: u16,
    random: &[u8; 32],
    suites: &[u16],
    extensions: &[(u16, Vec<u8>)],
) -> Vec<u8> {
    let mut body = version.to_be_bytes().to_vec();
    body.extend_from_slice(random);
    body.push(0); // empty session id
    body.extend_from_slice(&((suites.len() * 2) as u16).to_be_bytes());
    for s in suites {
        body.extend_from_slice(&s.to_be_bytes());
    }
    body.extend_from_slice(&[1, 0]); // null compression only
    if !extensions.is_empty() {
        body.extend(extensions_block(extensions));
    }
    handshake_msg(HS_CLIENT_HELLO, &body)
}

pub fn server_hello(
    version: u16,
    random: &[u8; 32],
    selected_suite: u16,
    extensions: &[(u16, Vec<u8>)],
) -> Vec<u8> {
    let mut body = version.to_be_bytes().to_vec();
    body.extend_from_slice(random);
    body.push(0);
    body.extend_from_slice(&selected_suite.to_be_bytes());
    body.push(0); // null compression
    if !extensions.is_empty() {
        body.extend(extensions_block(extensions));
    }
    handshake_msg(HS_SERVER_HELLO, &body)
}

pub fn certificate_msg(leaf_der: &[u8]) -> Vec<u8> {
    let cert_len = (leaf_der.len() as u32).to_be_bytes();
    let mut chain = cert_len[1..].to_vec();
    chain.extend_from_slice(leaf_der);
    let total = (chain.len() as u32).to_be_bytes();
    let mut body = total[1..].to_vec();
    body.extend_from_slice(&chain);
    handshake_msg(HS_CERTIFICATE, &body)
}

pub fn server_hello_done() -> Vec<u8> {
    handshake_msg(HS_SERVER_HELLO_DONE, &[])
}

/// ClientKeyExchange body carrying a key of `key_bits` for the given
/// key-exchange family, filled with `filler` bytes.
pub fn key_exchange_body(family: KxFamily, key_bits: u32, filler: &[u8]) -> Vec<u8> {
    let n = (key_bits / 8) as usize;
    let take = |k: usize| -> Vec<u8> {
        (0..k).map(|i| *filler.get(i % filler.len().max(1)).unwrap_or(&0xaa)).collect()
    };
    match family {
        KxFamily::Rsa | KxFamily::Dhe | KxFamily::Unknown => {
            let mut body = (n as u16).to_be_bytes().to_vec();
            body.extend(take(n));
            body
        }
        KxFamily::Ecdhe => {
            let mut body = vec![(n + 1) as u8, 0x04];
            body.extend(take(n));
            body
        }
    }
}

pub fn client_key_exchange(body: &[u8]) -> Vec<u8> {
    handshake_msg(HS_CLIENT_KEY_EXCHANGE, body)
}

pub fn change_cipher_spec(version: u16) -> Vec<u8> {
    record(CONTENT_CCS, version, &[0x01])
}

/// Wrap a payload in a single record.
pub fn record(content_type: u8, version: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = vec![content_type];
    out.extend_from_slice(&version.to_be_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Wrap a payload in records, splitting at `fragment` bytes.
pub fn records_fragmented(content_type: u8, version: u16, payload: &[u8], fragment: usize) -> Vec<u8> {
    assert!(fragment > 0);
    let mut out = Vec::new();
    for chunk in payload.chunks(fragment) {
        out.extend(record(content_type, version, chunk));
    }
    out
}
