//! Malware-family attribution: per-flow verdicts from a multinomial
//! model, tumbling per-host window majority votes, and the TLS-client
//! similarity matrix between family profiles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{tls_client_features, FeatureDictionary};
use crate::flow::FlowRecord;
use crate::learn::{argmax_tie_low, LearnError, LinearModel};

pub const DEFAULT_WINDOW_SECS: f64 = 300.0;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("empty window")]
    EmptyWindow,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("profile dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictScope {
    Flow { id: String },
    Window { host: String, window_start: f64 },
}

/// Per-flow or per-window attribution result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyVerdict {
    pub scope: VerdictScope,
    pub family: String,
    /// Per-family probabilities; for windows, the mean over member flows.
    pub probs: BTreeMap<String, f64>,
    /// Per-family argmax vote counts (window scope only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub votes: Option<BTreeMap<String, u64>>,
}

pub fn flow_id(flow: &FlowRecord) -> String {
    format!(
        "{}:{}-{}:{}@{}",
        flow.src_addr, flow.src_port, flow.dst_addr, flow.dst_port, flow.start_time
    )
}

/// Attribute one flow: argmax family plus the full probability vector.
pub fn attribute_flow(model: &LinearModel, flow: &FlowRecord) -> Result<FamilyVerdict, AttributionError> {
    let x = model.feature_vector(flow);
    let proba = model.predict_proba(&x)?;
    let best = argmax_tie_low(&proba);
    Ok(FamilyVerdict {
        scope: VerdictScope::Flow { id: flow_id(flow) },
        family: model.class_labels[best].clone(),
        probs: model
            .class_labels
            .iter()
            .cloned()
            .zip(proba.iter().copied())
            .collect(),
        votes: None,
    })
}

/// Attribute a window of same-host flows by majority vote over per-flow
/// verdicts. Vote ties break by greatest summed probability mass, then
/// by lowest class index.
pub fn attribute_window(
    model: &LinearModel,
    flows: &[&FlowRecord],
    host: &str,
    window_start: f64,
) -> Result<FamilyVerdict, AttributionError> {
    if flows.is_empty() {
        return Err(AttributionError::EmptyWindow);
    }
    let c = model.class_labels.len();
    let mut votes = vec![0u64; c];
    let mut mass = vec![0.0f64; c];
    for flow in flows {
        let x = model.feature_vector(flow);
        let proba = model.predict_proba(&x)?;
        votes[argmax_tie_low(&proba)] += 1;
        for (m, p) in mass.iter_mut().zip(&proba) {
            *m += p;
        }
    }
    let mut best = 0usize;
    for i in 1..c {
        if votes[i] > votes[best] || (votes[i] == votes[best] && mass[i] > mass[best]) {
            best = i;
        }
    }
    let n = flows.len() as f64;
    Ok(FamilyVerdict {
        scope: VerdictScope::Window {
            host: host.to_string(),
            window_start,
        },
        family: model.class_labels[best].clone(),
        probs: model
            .class_labels
            .iter()
            .cloned()
            .zip(mass.iter().map(|m| m / n))
            .collect(),
        votes: Some(
            model
                .class_labels
                .iter()
                .cloned()
                .zip(votes.iter().copied())
                .collect(),
        ),
    })
}

/// Group flows into tumbling windows per host (host = initiator source
/// address), aligned to each host's first flow.
pub fn windows_by_host<'a>(
    flows: &'a [FlowRecord],
    window_secs: f64,
) -> Vec<(String, f64, Vec<&'a FlowRecord>)> {
    let mut per_host: BTreeMap<String, Vec<&FlowRecord>> = BTreeMap::new();
    for f in flows {
        per_host.entry(f.src_addr.to_string()).or_default().push(f);
    }
    let mut out = Vec::new();
    for (host, mut host_flows) in per_host {
        host_flows.sort_by(|a, b| a.start_time.partial_cmp(&b.start_time).unwrap());
        let base = host_flows[0].start_time;
        let mut windows: BTreeMap<u64, Vec<&FlowRecord>> = BTreeMap::new();
        for f in host_flows {
            let idx = ((f.start_time - base) / window_secs).floor() as u64;
            windows.entry(idx).or_default().push(f);
        }
        for (idx, members) in windows {
            out.push((host.clone(), base + idx as f64 * window_secs, members));
        }
    }
    out
}

/// One family's mean TLS-client feature vector (suite bits, extension
/// bits, key length).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyProfile {
    pub family: String,
    pub mean_vector: Vec<f64>,
    pub flow_count: usize,
}

impl FamilyProfile {
    pub fn from_flows(family: &str, flows: &[&FlowRecord], dict: &FeatureDictionary) -> Self {
        let mut mean = vec![0.0; dict.tls_dim()];
        let mut count = 0usize;
        for f in flows {
            let (bits, _) = tls_client_features(f.tls.as_ref(), dict);
            for (m, v) in mean.iter_mut().zip(&bits) {
                *m += v;
            }
            count += 1;
        }
        if count > 0 {
            for m in &mut mean {
                *m /= count as f64;
            }
        }
        FamilyProfile {
            family: family.to_string(),
            mean_vector: mean,
            flow_count: count,
        }
    }
}

/// Build per-family profiles from labeled flows.
pub fn family_profiles(flows: &[FlowRecord], dict: &FeatureDictionary) -> Vec<FamilyProfile> {
    let mut by_family: BTreeMap<&str, Vec<&FlowRecord>> = BTreeMap::new();
    for f in flows {
        if let Some(label) = f.label.as_deref() {
            by_family.entry(label).or_default().push(f);
        }
    }
    by_family
        .into_iter()
        .map(|(family, members)| FamilyProfile::from_flows(family, &members, dict))
        .collect()
}

/// Squared-exponential similarity between family mean vectors:
/// S[i][j] = exp(-lambda * sum_d (x_i[d] - x_j[d])^2).
pub fn similarity_matrix(
    profiles: &[FamilyProfile],
    lambda: f64,
) -> Result<Vec<Vec<f64>>, AttributionError> {
    if let Some(first) = profiles.first() {
        for p in profiles {
            if p.mean_vector.len() != first.mean_vector.len() {
                return Err(AttributionError::DimensionMismatch(
                    first.mean_vector.len(),
                    p.mean_vector.len(),
                ));
            }
        }
    }
    let n = profiles.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dist2: f64 = profiles[i]
                .mean_vector
                .iter()
                .zip(&profiles[j].mean_vector)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            s[i][j] = (-lambda * dist2).exp();
        }
    }
    Ok(s)
}
