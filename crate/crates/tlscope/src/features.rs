//! Feature extraction: the Meta, SPLT, BD, TLS and SS data views, the
//! observed-code feature dictionary, and the zero-mean/unit-variance
//! scaler for flow metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowRecord, TlsHandshakeSummary};

pub const META_DIM: usize = 7;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("unknown view {0:?}")]
    UnknownView(String),
}

/// One data view of a flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Meta,
    Splt,
    Bd,
    Tls,
    Ss,
}

impl View {
    pub const ALL: [View; 5] = [View::Meta, View::Splt, View::Bd, View::Tls, View::Ss];
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            View::Meta => "Meta",
            View::Splt => "SPLT",
            View::Bd => "BD",
            View::Tls => "TLS",
            View::Ss => "SS",
        };
        f.write_str(name)
    }
}

impl FromStr for View {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, FeatureError> {
        match s.to_ascii_lowercase().as_str() {
            "meta" => Ok(View::Meta),
            "splt" => Ok(View::Splt),
            "bd" => Ok(View::Bd),
            "tls" => Ok(View::Tls),
            "ss" => Ok(View::Ss),
            _ => Err(FeatureError::UnknownView(s.to_string())),
        }
    }
}

/// Ordered set of views; concatenation order is fixed:
/// Meta, SPLT, BD, TLS, SS.
pub type ViewSet = std::collections::BTreeSet<View>;

pub fn parse_views(spec: &str) -> Result<ViewSet, FeatureError> {
    spec.split(['+', ','])
        .filter(|s| !s.is_empty())
        .map(View::from_str)
        .collect()
}

pub fn views_to_string(views: &ViewSet) -> String {
    views
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Raw (unscaled) metadata vector:
/// [inbound bytes, outbound bytes, inbound packets, outbound packets,
///  source port, destination port, duration seconds].
pub fn meta_features(flow: &FlowRecord) -> [f64; META_DIM] {
    [
        flow.inbound_bytes as f64,
        flow.outbound_bytes as f64,
        flow.inbound_packets as f64,
        flow.outbound_packets as f64,
        flow.src_port as f64,
        flow.dst_port as f64,
        flow.duration(),
    ]
}

/// Per-column mean and population standard deviation of the metadata
/// features. Constant columns keep stddev 1 so they scale to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

pub fn fit_scaler(rows: &[[f64; META_DIM]]) -> Result<ScalerStats, FeatureError> {
    if rows.is_empty() {
        return Err(FeatureError::EmptyTrainingSet);
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; META_DIM];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; META_DIM];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let stddev = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd == 0.0 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(ScalerStats { mean, stddev })
}

pub fn apply_scaler(stats: &ScalerStats, v: &[f64; META_DIM]) -> [f64; META_DIM] {
    let mut out = [0.0; META_DIM];
    for i in 0..META_DIM {
        out[i] = (v[i] - stats.mean[i]) / stats.stddev[i];
    }
    out
}

/// Bin widths and count for the SPLT Markov chains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    pub bins: usize,
    pub length_bin_width: u64,
    pub time_bin_width_ms: u64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        // 10 bins of 150 bytes spans [0,1500); overflow clamps to the
        // last bin. Times use 50 ms bins.
        MarkovConfig {
            bins: 10,
            length_bin_width: 150,
            time_bin_width_ms: 50,
        }
    }
}

impl MarkovConfig {
    pub fn splt_dim(&self) -> usize {
        2 * self.bins * self.bins
    }
}

/// Row-stochastic transition matrices over SPLT length bins and
/// inter-arrival time bins, flattened row-major. Rows with no outgoing
/// transitions stay all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovFeatures {
    pub bins: usize,
    pub length_matrix: Vec<f64>,
    pub time_matrix: Vec<f64>,
}

fn transition_matrix(bin_seq: &[usize], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins * bins];
    for w in bin_seq.windows(2) {
        counts[w[0] * bins + w[1]] += 1.0;
    }
    for row in 0..bins {
        let sum: f64 = counts[row * bins..(row + 1) * bins].iter().sum();
        if sum > 0.0 {
            for v in &mut counts[row * bins..(row + 1) * bins] {
                *v /= sum;
            }
        }
    }
    counts
}

pub fn splt_markov(flow: &FlowRecord, cfg: &MarkovConfig) -> MarkovFeatures {
    assert!(cfg.bins >= 1);
    let bin_of = |value: u64, width: u64| -> usize {
        ((value / width.max(1)) as usize).min(cfg.bins - 1)
    };
    let length_bins: Vec<usize> = flow
        .splt
        .iter()
        .map(|e| bin_of(e.0.unsigned_abs(), cfg.length_bin_width))
        .collect();
    let time_bins: Vec<usize> = flow
        .splt
        .iter()
        .map(|e| bin_of(e.1, cfg.time_bin_width_ms))
        .collect();
    MarkovFeatures {
        bins: cfg.bins,
        length_matrix: transition_matrix(&length_bins, cfg.bins),
        time_matrix: transition_matrix(&time_bins, cfg.bins),
    }
}

/// Byte-value probabilities over all payload bytes of the flow; all
/// zeros when the flow carried no payload.
pub fn byte_distribution(flow: &FlowRecord) -> Vec<f64> {
    let total: u64 = flow.byte_counts.iter().sum();
    if total == 0 {
        return vec![0.0; 256];
    }
    flow.byte_counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect()
}

/// Ordered mapping from observed ciphersuite/extension hex codes to
/// vector indices; frozen after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    /// Observed suite codes, ascending; position is the column index.
    pub suites: Vec<u16>,
    /// Observed extension codes, ascending.
    pub extensions: Vec<u16>,
    pub built_from: String,
    pub suite_counts: BTreeMap<u16, u64>,
    pub ext_counts: BTreeMap<u16, u64>,
}

impl FeatureDictionary {
    pub fn fit<'a>(
        summaries: impl IntoIterator<Item = &'a TlsHandshakeSummary>,
        corpus_id: &str,
    ) -> Self {
        let mut suite_counts: BTreeMap<u16, u64> = BTreeMap::new();
        let mut ext_counts: BTreeMap<u16, u64> = BTreeMap::new();
        for s in summaries {
            for &c in &s.offered_ciphersuites {
                *suite_counts.entry(c).or_default() += 1;
            }
            for &c in &s.advertised_extensions {
                *ext_counts.entry(c).or_default() += 1;
            }
        }
        FeatureDictionary {
            suites: suite_counts.keys().copied().collect(),
            extensions: ext_counts.keys().copied().collect(),
            built_from: corpus_id.to_string(),
            suite_counts,
            ext_counts,
        }
    }

    pub fn fit_flows<'a>(flows: impl IntoIterator<Item = &'a FlowRecord>, corpus_id: &str) -> Self {
        Self::fit(flows.into_iter().filter_map(|f| f.tls.as_ref()), corpus_id)
    }

    /// TLS client feature width: suite bits + extension bits + key length.
    pub fn tls_dim(&self) -> usize {
        self.suites.len() + self.extensions.len() + 1
    }
}

/// Binary suite/extension indicators plus the raw client key length.
/// Codes absent from the dictionary are dropped; the count of dropped
/// codes is returned for diagnostics.
pub fn tls_client_features(
    summary: Option<&TlsHandshakeSummary>,
    dict: &FeatureDictionary,
) -> (Vec<f64>, u64) {
    let mut out = vec![0.0; dict.tls_dim()];
    let mut dropped = 0u64;
    if let Some(s) = summary {
        for &code in &s.offered_ciphersuites {
            match dict.suites.binary_search(&code) {
                Ok(i) => out[i] = 1.0,
                Err(_) => dropped += 1,
            }
        }
        for &code in &s.advertised_extensions {
            match dict.extensions.binary_search(&code) {
                Ok(i) => out[dict.suites.len() + i] = 1.0,
                Err(_) => dropped += 1,
            }
        }
        out[dict.tls_dim() - 1] = s.client_public_key_bits.unwrap_or(0) as f64;
    }
    (out, dropped)
}

/// A flow's assembled feature vector plus the per-flow completeness mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub tls_present: bool,
    pub cert_present: bool,
    pub dropped_codes: u64,
}

pub fn view_dim(view: View, dict: &FeatureDictionary, cfg: &MarkovConfig) -> usize {
    match view {
        View::Meta => META_DIM,
        View::Splt => cfg.splt_dim(),
        View::Bd => 256,
        View::Tls => dict.tls_dim(),
        View::Ss => 1,
    }
}

pub fn total_dim(views: &ViewSet, dict: &FeatureDictionary, cfg: &MarkovConfig) -> usize {
    views.iter().map(|&v| view_dim(v, dict, cfg)).sum()
}

/// Concatenate the requested views in fixed order Meta, SPLT, BD, TLS,
/// SS. Absent TLS fields contribute zeros so non-TLS views stay
/// computable for every flow.
pub fn assemble_features(
    views: &ViewSet,
    flow: &FlowRecord,
    dict: &FeatureDictionary,
    scaler: &ScalerStats,
    cfg: &MarkovConfig,
) -> FeatureVector {
    let mut values = Vec::with_capacity(total_dim(views, dict, cfg));
    let mut dropped = 0;
    for &view in views {
        match view {
            View::Meta => {
                values.extend_from_slice(&apply_scaler(scaler, &meta_features(flow)));
            }
            View::Splt => {
                let markov = splt_markov(flow, cfg);
                values.extend_from_slice(&markov.length_matrix);
                values.extend_from_slice(&markov.time_matrix);
            }
            View::Bd => values.extend(byte_distribution(flow)),
            View::Tls => {
                let (bits, d) = tls_client_features(flow.tls.as_ref(), dict);
                dropped += d;
                values.extend(bits);
            }
            View::Ss => {
                let self_signed = flow
                    .tls
                    .as_ref()
                    .and_then(|t| t.cert.as_ref())
                    .map(|c| c.self_signed)
                    .unwrap_or(false);
                values.push(if self_signed { 1.0 } else { 0.0 });
            }
        }
    }
    FeatureVector {
        values,
        tls_present: flow.tls.is_some(),
        cert_present: flow.tls.as_ref().is_some_and(|t| t.cert.is_some()),
        dropped_codes: dropped,
    }
}

/// Column names matching [`assemble_features`] output, for CSV export.
pub fn feature_names(views: &ViewSet, dict: &FeatureDictionary, cfg: &MarkovConfig) -> Vec<String> {
    let mut names = Vec::new();
    for &view in views {
        match view {
            View::Meta => {
                for n in ["ib", "ob", "ip", "op", "sp", "dp", "duration"] {
                    names.push(format!("meta_{n}"));
                }
            }
            View::Splt => {
                for kind in ["len", "time"] {
                    for i in 0..cfg.bins {
                        for j in 0..cfg.bins {
                            names.push(format!("splt_{kind}_{i}_{j}"));
                        }
                    }
                }
            }
            View::Bd => {
                for b in 0..256 {
                    names.push(format!("bd_0x{b:02x}"));
                }
            }
            View::Tls => {
                for c in &dict.suites {
                    names.push(format!("suite_0x{c:04x}"));
                }
                for c in &dict.extensions {
                    names.push(format!("ext_0x{c:04x}"));
                }
                names.push("key_bits".into());
            }
            View::Ss => names.push("ss".into()),
        }
    }
    names
}
