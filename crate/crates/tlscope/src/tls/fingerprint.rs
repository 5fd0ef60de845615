//! Exact-match TLS client fingerprinting and the Windows XP SChannel
//! offer-list check.

use serde::{Deserialize, Serialize};

use super::TlsError;
use crate::flow::{hex16_vec, TlsHandshakeSummary};

/// One fingerprint: an ordered ciphersuite list plus an ordered
/// extension list, mapped to a client program label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintEntry {
    pub label: String,
    #[serde(with = "hex16_vec")]
    pub suites: Vec<u16>,
    #[serde(with = "hex16_vec")]
    pub extensions: Vec<u16>,
}

#[derive(Clone, Debug, Default)]
pub struct FingerprintDb {
    entries: Vec<FingerprintEntry>,
}

impl FingerprintDb {
    pub fn new(entries: Vec<FingerprintEntry>) -> Self {
        FingerprintDb { entries }
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        let entries: Vec<FingerprintEntry> =
            serde_json::from_str(json).map_err(|e| e.to_string())?;
        Ok(FingerprintDb { entries })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("db serializes")
    }

    pub fn entries(&self) -> &[FingerprintEntry] {
        &self.entries
    }
}

/// Map a handshake to a known client program by exact, order-sensitive
/// match on (offered ciphersuites, advertised extensions).
pub fn fingerprint_client<'a>(
    summary: &TlsHandshakeSummary,
    db: &'a FingerprintDb,
) -> Option<&'a str> {
    db.entries
        .iter()
        .find(|e| {
            e.suites == summary.offered_ciphersuites
                && e.extensions == summary.advertised_extensions
        })
        .map(|e| e.label.as_str())
}

/// Configured set of XP SChannel default offer lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XpConfig(Vec<XpList>);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct XpList(#[serde(with = "hex16_vec")] Vec<u16>);

/// The commonly cited Windows XP SChannel default ciphersuite order.
/// The shipped default is documented as a stand-in; deployments should
/// pin their own config.
pub const XP_SCHANNEL_DEFAULT: &[u16] = &[
    0x0004, 0x0005, 0x000a, 0x0010, 0x0013, 0x0009, 0x0012, 0x0003, 0x0008, 0x0006, 0x0002,
];

impl Default for XpConfig {
    fn default() -> Self {
        XpConfig(vec![XpList(XP_SCHANNEL_DEFAULT.to_vec())])
    }
}

impl XpConfig {
    pub fn new(lists: Vec<Vec<u16>>) -> Self {
        XpConfig(lists.into_iter().map(XpList).collect())
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        serde_json::from_str(json).map_err(|e| e.to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("xp config serializes")
    }
}

/// True iff the offered ciphersuite list exactly equals one of the
/// configured XP SChannel lists.
pub fn is_schannel_xp(summary: &TlsHandshakeSummary, cfg: &XpConfig) -> Result<bool, TlsError> {
    if cfg.0.is_empty() {
        return Err(TlsError::MissingConfig("XP SChannel list set is empty".into()));
    }
    Ok(cfg.0.iter().any(|l| l.0 == summary.offered_ciphersuites))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(suites: Vec<u16>, extensions: Vec<u16>) -> TlsHandshakeSummary {
        TlsHandshakeSummary {
            client_version: 0x0303,
            offered_ciphersuites: suites,
            advertised_extensions: extensions,
            selected_ciphersuite: None,
            selected_extensions: vec![],
            client_public_key_bits: None,
            cert: None,
            records: vec![],
            complete: true,
        }
    }

    fn db() -> FingerprintDb {
        FingerprintDb::new(vec![
            FingerprintEntry {
                label: "Opera 12".into(),
                suites: vec![0x0004, 0x0005, 0x000a],
                extensions: vec![0x000d, 0xff01],
            },
            FingerprintEntry {
                label: "Tor 0.2.x".into(),
                suites: vec![0xc02b, 0xc02f],
                extensions: vec![0x0000],
            },
        ])
    }

    #[test]
    fn exact_match_returns_label() {
        let s = summary(vec![0x0004, 0x0005, 0x000a], vec![0x000d, 0xff01]);
        assert_eq!(fingerprint_client(&s, &db()), Some("Opera 12"));
    }

    #[test]
    fn unseen_list_is_unknown() {
        let s = summary(vec![0x1234], vec![]);
        assert_eq!(fingerprint_client(&s, &db()), None);
    }

    #[test]
    fn extension_order_is_significant() {
        let a = summary(vec![0x0004, 0x0005, 0x000a], vec![0x000d, 0xff01]);
        let b = summary(vec![0x0004, 0x0005, 0x000a], vec![0xff01, 0x000d]);
        assert_eq!(fingerprint_client(&a, &db()), Some("Opera 12"));
        assert_eq!(fingerprint_client(&b, &db()), None);
    }

    #[test]
    fn xp_match_is_ordered_and_exact() {
        let cfg = XpConfig::default();
        let exact = summary(XP_SCHANNEL_DEFAULT.to_vec(), vec![]);
        assert!(is_schannel_xp(&exact, &cfg).unwrap());

        let mut reordered = XP_SCHANNEL_DEFAULT.to_vec();
        reordered.swap(0, 1);
        assert!(!is_schannel_xp(&summary(reordered, vec![]), &cfg).unwrap());

        let mut extended = XP_SCHANNEL_DEFAULT.to_vec();
        extended.push(0x002f);
        assert!(!is_schannel_xp(&summary(extended, vec![]), &cfg).unwrap());
    }

    #[test]
    fn empty_xp_config_errors() {
        let cfg = XpConfig::new(vec![]);
        let s = summary(vec![0x0004], vec![]);
        assert!(matches!(
            is_schannel_xp(&s, &cfg),
            Err(TlsError::MissingConfig(_))
        ));
    }

    #[test]
    fn db_json_round_trip() {
        let original = db();
        let back = FingerprintDb::from_json(&original.to_json()).unwrap();
        assert_eq!(back.entries(), original.entries());
    }
}
