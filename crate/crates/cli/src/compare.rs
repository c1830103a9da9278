//! Metric-by-metric diff of two run manifests.

use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::Value;

use crate::output::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricDiff {
    /// `delta = b - a`.
    Numeric { metric: String, a: f64, b: f64, delta: f64 },
    Categorical { metric: String, a: Value, b: Value },
    Missing { metric: String, present_in: char },
}

pub fn compare(a: &RunManifest, b: &RunManifest) -> Vec<MetricDiff> {
    let keys: BTreeSet<&String> = a.metrics.keys().chain(b.metrics.keys()).collect();
    let mut out = Vec::new();
    for k in keys {
        match (a.metrics.get(k), b.metrics.get(k)) {
            (Some(x), Some(y)) if x == y => {}
            (Some(Value::Number(x)), Some(Value::Number(y))) => {
                let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
                out.push(MetricDiff::Numeric {
                    metric: k.clone(),
                    a: x,
                    b: y,
                    delta: y - x,
                });
            }
            (Some(x), Some(y)) => out.push(MetricDiff::Categorical {
                metric: k.clone(),
                a: x.clone(),
                b: y.clone(),
            }),
            (Some(_), None) => out.push(MetricDiff::Missing {
                metric: k.clone(),
                present_in: 'a',
            }),
            (None, _) => out.push(MetricDiff::Missing {
                metric: k.clone(),
                present_in: 'b',
            }),
        }
    }
    out
}
