//! Prevalence reporting: per-label histograms of TLS offer behavior and
//! certificate facts, a destination-port table, and a CSV rendering of
//! the family similarity matrix.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::flow::FlowRecord;
use crate::tls::registry::CodeRegistry;

/// One categorical histogram; percentages sum to 100 (± fp error)
/// whenever `total > 0`.
#[derive(Clone, Debug, Serialize)]
pub struct Histogram {
    pub title: String,
    pub total: u64,
    /// (key, count, percent), descending by count then ascending key.
    pub rows: Vec<(String, u64, f64)>,
}

impl Histogram {
    fn from_counts(title: &str, counts: BTreeMap<String, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let mut rows: Vec<(String, u64, f64)> = counts
            .into_iter()
            .map(|(k, c)| (k, c, if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }))
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Histogram { title: title.to_string(), total, rows }
    }
}

/// Figures 1–2 analogue for one label.
#[derive(Clone, Debug, Serialize)]
pub struct PrevalenceReport {
    pub label: String,
    pub flow_count: u64,
    pub tls_count: u64,
    /// Share of all suite offers going to each code.
    pub suites: Histogram,
    /// Share of all extension advertisements going to each code.
    pub extensions: Histogram,
    pub key_bits: Histogram,
    pub validity_days: Histogram,
    pub san_counts: Histogram,
    pub self_signed: Histogram,
}

fn label_of(flow: &FlowRecord) -> &str {
    flow.label.as_deref().unwrap_or("(unlabeled)")
}

/// Per-label prevalence tables, labels in ascending order.
pub fn prevalence(flows: &[FlowRecord], registry: &CodeRegistry) -> Vec<PrevalenceReport> {
    let mut by_label: BTreeMap<&str, Vec<&FlowRecord>> = BTreeMap::new();
    for f in flows {
        by_label.entry(label_of(f)).or_default().push(f);
    }
    by_label
        .into_iter()
        .map(|(label, group)| {
            let mut suites = BTreeMap::new();
            let mut exts = BTreeMap::new();
            let mut keys = BTreeMap::new();
            let mut validity = BTreeMap::new();
            let mut sans = BTreeMap::new();
            let mut selfsig = BTreeMap::new();
            let mut tls_count = 0;
            for f in &group {
                let Some(tls) = f.tls.as_ref() else { continue };
                tls_count += 1;
                for &c in &tls.offered_ciphersuites {
                    let key = format!("0x{c:04x} {}", registry.suite_name(c));
                    *suites.entry(key).or_insert(0) += 1;
                }
                for &c in &tls.advertised_extensions {
                    let key = format!("0x{c:04x} {}", registry.extension_name(c));
                    *exts.entry(key).or_insert(0) += 1;
                }
                if let Some(bits) = tls.client_public_key_bits {
                    *keys.entry(format!("{bits}")).or_insert(0) += 1;
                }
                if let Some(cert) = tls.cert.as_ref() {
                    *validity.entry(format!("{}", cert.validity_days)).or_insert(0) += 1;
                    *sans.entry(format!("{}", cert.san_count)).or_insert(0) += 1;
                    let key = if cert.self_signed { "self-signed" } else { "ca-signed" };
                    *selfsig.entry(key.to_string()).or_insert(0) += 1;
                }
            }
            PrevalenceReport {
                label: label.to_string(),
                flow_count: group.len() as u64,
                tls_count,
                suites: Histogram::from_counts("offered ciphersuites", suites),
                extensions: Histogram::from_counts("advertised extensions", exts),
                key_bits: Histogram::from_counts("client public key bits", keys),
                validity_days: Histogram::from_counts("certificate validity days", validity),
                san_counts: Histogram::from_counts("subjectAltName count", sans),
                self_signed: Histogram::from_counts("certificate signing", selfsig),
            }
        })
        .collect()
}

/// Table 1 analogue: destination ports of TLS flows.
pub fn port_table(flows: &[FlowRecord]) -> Histogram {
    let mut counts = BTreeMap::new();
    for f in flows.iter().filter(|f| f.tls.is_some()) {
        *counts.entry(format!("{}", f.dst_port)).or_insert(0) += 1;
    }
    Histogram::from_counts("TLS destination ports", counts)
}

/// Figure 3 analogue: similarity matrix as CSV with a label header row
/// and label-prefixed data rows.
pub fn similarity_csv(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("family");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(matrix) {
        out.push_str(l);
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

fn render_histogram(out: &mut String, hist: &Histogram) {
    out.push_str(&format!("  {} (n={})\n", hist.title, hist.total));
    for (key, count, pct) in &hist.rows {
        out.push_str(&format!("    {key:<42} {count:>8}  {pct:6.2}%\n"));
    }
}

/// Plain-text rendering of the full prevalence report.
pub fn render(reports: &[PrevalenceReport], ports: &Histogram) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "== {} ({} flows, {} TLS) ==\n",
            r.label, r.flow_count, r.tls_count
        ));
        for hist in [
            &r.suites,
            &r.extensions,
            &r.key_bits,
            &r.validity_days,
            &r.san_counts,
            &r.self_signed,
        ] {
            render_histogram(&mut out, hist);
        }
        out.push('\n');
    }
    out.push_str("== ports ==\n");
    render_histogram(&mut out, ports);
    out
}
