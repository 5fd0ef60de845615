//! Passive TLS traffic analysis toolkit.
//!
//! The pipeline: pcap files are parsed into packets and assembled into
//! bidirectional flows ([`assemble`]); unencrypted TLS handshake
//! parameters are extracted ([`tls`]); flows are converted into numeric
//! feature views ([`features`]); l1-regularized logistic regression
//! models detect malicious flows and attribute them to malware families
//! ([`learn`], [`attribution`]). A seeded synthetic corpus generator
//! ([`synth`]) provides labeled traffic for end-to-end checks.

pub mod assemble;
pub mod attribution;
pub mod features;
pub mod flow;
pub mod learn;
pub mod pcap;
pub mod report;
pub mod synth;
pub mod tls;
