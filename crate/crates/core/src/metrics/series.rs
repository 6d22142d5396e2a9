//! Per-layer scalar series and the CSV/JSON report container.
//!
//! Row order is deterministic everywhere: layer ascending, probe in enum
//! order, label lexicographic. CSV numbers use Rust's shortest round-trip
//! formatting for f64.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::forward::ProbePoint;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesCell {
    pub layer: usize,
    pub probe: ProbePoint,
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSeries {
    pub metric: String,
    pub cells: Vec<SeriesCell>,
}

impl LayerSeries {
    pub fn new(metric: impl Into<String>) -> Self {
        LayerSeries {
            metric: metric.into(),
            cells: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: usize, probe: ProbePoint, label: impl Into<String>, value: f64) {
        self.cells.push(SeriesCell {
            layer,
            probe,
            label: label.into(),
            value,
        });
    }

    pub fn sort(&mut self) {
        self.cells
            .sort_by(|a, b| (a.layer, a.probe, &a.label).cmp(&(b.layer, b.probe, &b.label)));
    }

    pub fn get(&self, layer: usize, probe: ProbePoint, label: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.layer == layer && c.probe == probe && c.label == label)
            .map(|c| c.value)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().map(|c| c.value)
    }

    /// Standalone CSV: `layer,probe,label,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,probe,label,value\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.layer,
                c.probe.as_str(),
                c.label,
                c.value
            ));
        }
        out
    }
}

/// A bundle of named series plus scalar results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub series: BTreeMap<String, LayerSeries>,
    pub scalars: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn insert(&mut self, mut series: LayerSeries) {
        series.sort();
        self.series.insert(series.metric.clone(), series);
    }

    pub fn set_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.insert(name.into(), value);
    }

    /// Combined CSV: `metric,layer,probe,label,value`, metrics in name order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,layer,probe,label,value\n");
        for (name, series) in &self.series {
            for c in &series.cells {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    name,
                    c.layer,
                    c.probe.as_str(),
                    c.label,
                    c.value
                ));
            }
        }
        out
    }

    /// JSON value nested by metric name; scalars under `"scalars"`.
    pub fn to_json_value(&self) -> serde_json::Value {
        let mut metrics = serde_json::Map::new();
        for (name, series) in &self.series {
            metrics.insert(
                name.clone(),
                serde_json::to_value(&series.cells).expect("cells serialize"),
            );
        }
        serde_json::json!({
            "metrics": serde_json::Value::Object(metrics),
            "scalars": self.scalars,
        })
    }
}
