//! Hex-code registries for ciphersuites and extensions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::flow::hex16::parse_hex16;

/// Key-exchange family implied by a ciphersuite, used to interpret the
/// clientKeyExchange payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KxFamily {
    Rsa,
    Dhe,
    Ecdhe,
    Unknown,
}

/// Named ciphersuite and extension codes. Unknown codes render as
/// `unassigned(0xNNNN)`.
#[derive(Clone, Debug)]
pub struct CodeRegistry {
    suites: BTreeMap<u16, String>,
    extensions: BTreeMap<u16, String>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    ciphersuites: BTreeMap<String, String>,
    extensions: BTreeMap<String, String>,
}

const DEFAULT_SUITES: &[(u16, &str)] = &[
    (0x0004, "TLS_RSA_WITH_RC4_128_MD5"),
    (0x0005, "TLS_RSA_WITH_RC4_128_SHA"),
    (0x000a, "TLS_RSA_WITH_3DES_EDE_CBC_SHA"),
    (0x002f, "TLS_RSA_WITH_AES_128_CBC_SHA"),
    (0x0033, "TLS_DHE_RSA_WITH_AES_128_CBC_SHA"),
    (0x0035, "TLS_RSA_WITH_AES_256_CBC_SHA"),
    (0x0039, "TLS_DHE_RSA_WITH_AES_256_CBC_SHA"),
    (0x003c, "TLS_RSA_WITH_AES_128_CBC_SHA256"),
    (0x003d, "TLS_RSA_WITH_AES_256_CBC_SHA256"),
    (0x0067, "TLS_DHE_RSA_WITH_AES_128_CBC_SHA256"),
    (0x006b, "TLS_DHE_RSA_WITH_AES_256_CBC_SHA256"),
    (0x00fd, "unassigned"),
    (0xc009, "TLS_ECDHE_ECDSA_WITH_AES_128_CBC_SHA"),
    (0xc00a, "TLS_ECDHE_ECDSA_WITH_AES_256_CBC_SHA"),
    (0xc013, "TLS_ECDHE_RSA_WITH_AES_128_CBC_SHA"),
    (0xc014, "TLS_ECDHE_RSA_WITH_AES_256_CBC_SHA"),
    (0xc02b, "TLS_ECDHE_ECDSA_WITH_AES_128_GCM_SHA256"),
    (0xc02f, "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256"),
    (0xc030, "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384"),
];

const DEFAULT_EXTENSIONS: &[(u16, &str)] = &[
    (0x0000, "server_name"),
    (0x0005, "status_request"),
    (0x000a, "supported_groups"),
    (0x000b, "ec_point_formats"),
    (0x000d, "signature_algorithms"),
    (0x000f, "heartbeat"),
    (0x0010, "application_layer_protocol_negotiation"),
    (0x0012, "signed_certificate_timestamp"),
    (0x0015, "padding"),
    (0x0017, "extended_master_secret"),
    (0x0023, "SessionTicket TLS"),
    (0x3374, "next_protocol_negotiation"),
    (0x7550, "channel_id"),
    (0xff01, "renegotiation_info"),
];

impl Default for CodeRegistry {
    fn default() -> Self {
        CodeRegistry {
            suites: DEFAULT_SUITES
                .iter()
                .map(|&(c, n)| (c, n.to_string()))
                .collect(),
            extensions: DEFAULT_EXTENSIONS
                .iter()
                .map(|&(c, n)| (c, n.to_string()))
                .collect(),
        }
    }
}

impl CodeRegistry {
    pub fn from_json(json: &str) -> Result<Self, String> {
        let file: RegistryFile = serde_json::from_str(json).map_err(|e| e.to_string())?;
        let parse_map = |m: &BTreeMap<String, String>| -> Result<BTreeMap<u16, String>, String> {
            m.iter()
                .map(|(k, v)| Ok((parse_hex16(k)?, v.clone())))
                .collect()
        };
        Ok(CodeRegistry {
            suites: parse_map(&file.ciphersuites)?,
            extensions: parse_map(&file.extensions)?,
        })
    }

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            ciphersuites: self
                .suites
                .iter()
                .map(|(k, v)| (format!("0x{k:04x}"), v.clone()))
                .collect(),
            extensions: self
                .extensions
                .iter()
                .map(|(k, v)| (format!("0x{k:04x}"), v.clone()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    pub fn suite_name(&self, code: u16) -> String {
        self.suites
            .get(&code)
            .cloned()
            .unwrap_or_else(|| format!("unassigned(0x{code:04x})"))
    }

    pub fn extension_name(&self, code: u16) -> String {
        self.extensions
            .get(&code)
            .cloned()
            .unwrap_or_else(|| format!("unassigned(0x{code:04x})"))
    }
}

/// Classify a ciphersuite code into its key-exchange family.
pub fn kx_family(suite: u16) -> KxFamily {
    match suite {
        0x0004 | 0x0005 | 0x0009 | 0x000a | 0x002f | 0x0035 | 0x003c | 0x003d => KxFamily::Rsa,
        0x0033 | 0x0039 | 0x0067 | 0x006b => KxFamily::Dhe,
        0xc009 | 0xc00a | 0xc013 | 0xc014 | 0xc02b | 0xc02f | 0xc030 => KxFamily::Ecdhe,
        _ => KxFamily::Unknown,
    }
}
