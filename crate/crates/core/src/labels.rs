//! Weather reference labels and class binning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference weather values attached to one captured frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeatherLabel {
    pub precipitation_mm_h: f64,
    pub wind_speed_km_h: f64,
}

impl WeatherLabel {
    pub fn new(precipitation_mm_h: f64, wind_speed_km_h: f64) -> Self {
        Self {
            precipitation_mm_h,
            wind_speed_km_h,
        }
    }

    /// Class index per metric under `bins`: `[precipitation, wind]`.
    pub fn class_indices(&self, bins: &BinEdges) -> [usize; 2] {
        [
            bins.precipitation_class(self.precipitation_mm_h),
            bins.wind_class(self.wind_speed_km_h),
        ]
    }

    /// Continuous regression targets: `[precipitation, wind]`.
    pub fn values(&self) -> [f64; 2] {
        [self.precipitation_mm_h, self.wind_speed_km_h]
    }
}

/// Rain/no-rain capture scenario recorded in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Rain,
    NoRain,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Rain => "rain",
            Scenario::NoRain => "no_rain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rain" => Some(Scenario::Rain),
            "no_rain" => Some(Scenario::NoRain),
            _ => None,
        }
    }
}

/// Class-bin edges for both weather metrics. A value `v` falls in class
/// `i` when `edges[i-1] <= v < edges[i]`, so `edges.len() + 1` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinEdges {
    pub precipitation_mm_h: Vec<f64>,
    pub wind_km_h: Vec<f64>,
}

impl Default for BinEdges {
    fn default() -> Self {
        Self {
            precipitation_mm_h: vec![2.5, 12.5, 30.0],
            wind_km_h: vec![5.0, 15.0, 30.0],
        }
    }
}

impl BinEdges {
    pub fn validate(&self) -> Result<()> {
        for edges in [&self.precipitation_mm_h, &self.wind_km_h] {
            if edges.is_empty() {
                return Err(Error::InvalidConfig("bin edges must be non-empty".into()));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "bin edges must be strictly increasing, got {edges:?}"
                )));
            }
        }
        Ok(())
    }

    /// Class counts per head: `[precipitation classes, wind classes]`.
    pub fn class_counts(&self) -> [usize; 2] {
        [
            self.precipitation_mm_h.len() + 1,
            self.wind_km_h.len() + 1,
        ]
    }

    pub fn precipitation_class(&self, mm_h: f64) -> usize {
        class_of(&self.precipitation_mm_h, mm_h)
    }

    pub fn wind_class(&self, km_h: f64) -> usize {
        class_of(&self.wind_km_h, km_h)
    }
}

fn class_of(edges: &[f64], value: f64) -> usize {
    edges.iter().take_while(|&&e| value >= e).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_binning() {
        let bins = BinEdges::default();
        assert_eq!(bins.precipitation_class(0.0), 0);
        assert_eq!(bins.precipitation_class(2.5), 1);
        assert_eq!(bins.precipitation_class(12.4), 1);
        assert_eq!(bins.precipitation_class(29.9), 2);
        assert_eq!(bins.precipitation_class(100.0), 3);
        assert_eq!(bins.class_counts(), [4, 4]);
    }

    #[test]
    fn label_class_indices() {
        let bins = BinEdges::default();
        let label = WeatherLabel::new(20.0, 4.9);
        assert_eq!(label.class_indices(&bins), [2, 0]);
    }

    #[test]
    fn monotone_edges_required() {
        let bins = BinEdges {
            precipitation_mm_h: vec![5.0, 5.0],
            wind_km_h: vec![1.0],
        };
        assert!(bins.validate().is_err());
    }
}
