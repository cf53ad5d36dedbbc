//! Point error, success detection rate (SDR) and detection reports.
//!
//! Point error is the Euclidean distance between prediction and truth in
//! physical units (per-dimension difference scaled by the pixel spacing).
//! SDR at radius r is the percentage of landmarks with point error <= r
//! (inclusive boundary). Landmarks missing on either side are excluded from
//! both numerator and denominator and counted separately as skipped.

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Spacing};

/// SDR radii in mm, strictly positive and ascending.
#[derive(Debug, Clone)]
pub struct ReportConfig {
    radii: Vec<f64>,
}

impl ReportConfig {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one SDR radius".into(),
            ));
        }
        for w in radii.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidParameter(
                    "radii must be strictly ascending".into(),
                ));
            }
        }
        if !radii.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::InvalidParameter(
                "radii must be finite and > 0".into(),
            ));
        }
        Ok(ReportConfig { radii })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            radii: vec![1.0, 2.0, 2.5, 3.0, 4.0],
        }
    }
}

/// Per-landmark point errors in mm, aligned with the landmark set shape;
/// skipped pairs are non-finite.
#[derive(Debug, Clone)]
pub struct PointErrors {
    n_samples: usize,
    n_classes: usize,
    n_instances: usize,
    values: Vec<f64>,
    class_names: Vec<String>,
}

impl PointErrors {
    pub fn get(&self, n: usize, c: usize, i: usize) -> Option<f64> {
        let v = self.values[(n * self.n_classes + c) * self.n_instances + i];
        v.is_finite().then_some(v)
    }

    /// All evaluated (finite) errors, pooled.
    pub fn valid(&self) -> Vec<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect()
    }

    /// Evaluated errors of one class, pooled over samples and instances.
    pub fn valid_for_class(&self, class: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for n in 0..self.n_samples {
            for i in 0..self.n_instances {
                if let Some(v) = self.get(n, class, i) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn skipped(&self) -> usize {
        self.values.iter().filter(|v| !v.is_finite()).count()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// Euclidean point error in mm per landmark; pairs with a missing side are
/// marked skipped.
pub fn point_error(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    spacing: &Spacing,
) -> Result<PointErrors> {
    if pred.n_samples() != truth.n_samples()
        || pred.n_classes() != truth.n_classes()
        || pred.n_instances() != truth.n_instances()
        || pred.dim() != truth.dim()
    {
        return Err(Error::ShapeMismatch(
            "pred and truth landmark sets differ in shape".into(),
        ));
    }
    if spacing.dim() != pred.dim() {
        return Err(Error::DimensionMismatch {
            expected: pred.dim(),
            got: spacing.dim(),
        });
    }
    let mut values = vec![f64::NAN; pred.n_samples() * pred.n_classes() * pred.n_instances()];
    for (n, c, i, p) in pred.iter() {
        let flat = (n * pred.n_classes() + c) * pred.n_instances() + i;
        if let (Some(p), Some(t)) = (p, truth.get(n, c, i)) {
            let mm2: f64 = p
                .iter()
                .zip(t)
                .zip(spacing.as_slice())
                .map(|((a, b), s)| ((a - b) * s) * ((a - b) * s))
                .sum();
            values[flat] = mm2.sqrt();
        }
    }
    Ok(PointErrors {
        n_samples: pred.n_samples(),
        n_classes: pred.n_classes(),
        n_instances: pred.n_instances(),
        values,
        class_names: truth.class_names().to_vec(),
    })
}

/// Percentage of errors less than or equal to `radius` (inclusive).
pub fn sdr(errors: &[f64], radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter("radius must be > 0".into()));
    }
    if errors.is_empty() {
        return Err(Error::UndefinedResult("SDR of an empty error set".into()));
    }
    let hits = errors.iter().filter(|e| **e <= radius).count();
    Ok(100.0 * hits as f64 / errors.len() as f64)
}

/// SDR values keyed by radius, serialized as a JSON object whose keys keep
/// the configured radius order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdrMap(pub Vec<(String, f64)>);

impl Serialize for SdrMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SdrMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = SdrMap;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map of radius to percentage")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<SdrMap, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, f64>()? {
                    entries.push((k, v));
                }
                Ok(SdrMap(entries))
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// Aggregate statistics over one pool of point errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe_mean_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe_median_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe_std_mm: Option<f64>,
    pub sdr: SdrMap,
}

/// Per-class statistics with the class label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    #[serde(flatten)]
    pub stats: ErrorStats,
}

/// Detection report: per-class and pooled point-error statistics plus SDR
/// at the configured radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub classes: Vec<ClassReport>,
    pub overall: ErrorStats,
    pub skipped: usize,
}

fn format_radius(r: f64) -> String {
    format!("{r}")
}

fn stats_for(errors: &[f64], radii: &[f64]) -> ErrorStats {
    if errors.is_empty() {
        return ErrorStats {
            n: 0,
            pe_mean_mm: None,
            pe_median_mm: None,
            pe_std_mm: None,
            sdr: SdrMap::default(),
        };
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    let std = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    let sdr_entries = radii
        .iter()
        .map(|r| {
            (
                format_radius(*r),
                sdr(errors, *r).expect("non-empty errors"),
            )
        })
        .collect();
    ErrorStats {
        n: errors.len(),
        pe_mean_mm: Some(mean),
        pe_median_mm: Some(median),
        pe_std_mm: Some(std),
        sdr: SdrMap(sdr_entries),
    }
}

/// Aggregate per class and overall. The output is deterministic: identical
/// inputs serialize to byte-identical JSON.
pub fn detection_report(
    pred: &LandmarkSet,
    truth: &LandmarkSet,
    spacing: &Spacing,
    cfg: &ReportConfig,
) -> Result<DetectionReport> {
    let errors = point_error(pred, truth, spacing)?;
    let classes = (0..errors.n_classes())
        .map(|c| ClassReport {
            name: errors.class_names()[c].clone(),
            stats: stats_for(&errors.valid_for_class(c), cfg.radii()),
        })
        .collect();
    Ok(DetectionReport {
        classes,
        overall: stats_for(&errors.valid(), cfg.radii()),
        skipped: errors.skipped(),
    })
}

impl DetectionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text table: one row per class plus the pooled row, a PE column
    /// and one SDR column per radius.
    pub fn to_text_table(&self) -> String {
        let radii: Vec<&str> = self.overall.sdr.0.iter().map(|(k, _)| k.as_str()).collect();
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>6} {:>10} {:>10} {:>10}",
            "class", "n", "PE(mm)", "median", "std"
        ));
        for r in &radii {
            out.push_str(&format!(" {:>9}", format!("SDR@{r}mm")));
        }
        out.push('\n');
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.3}"),
            None => "-".to_string(),
        };
        let mut row = |name: &str, stats: &ErrorStats| {
            out.push_str(&format!(
                "{:<16} {:>6} {:>10} {:>10} {:>10}",
                name,
                stats.n,
                fmt_opt(stats.pe_mean_mm),
                fmt_opt(stats.pe_median_mm),
                fmt_opt(stats.pe_std_mm)
            ));
            for r in &radii {
                let v = stats.sdr.0.iter().find(|(k, _)| k == r).map(|(_, v)| *v);
                match v {
                    Some(v) => out.push_str(&format!(" {:>8.2}%", v)),
                    None => out.push_str(&format!(" {:>9}", "-")),
                }
            }
            out.push('\n');
        };
        for class in &self.classes {
            row(&class.name, &class.stats);
        }
        row("overall", &self.overall);
        out.push_str(&format!("skipped: {}\n", self.skipped));
        out
    }
}
