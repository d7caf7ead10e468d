use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../../data/gain_bounds.txt");

/// Componentwise library bounds for `k1..k14`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainBounds {
    pub k_min: [f64; 14],
    pub k_max: [f64; 14],
}

impl Default for GainBounds {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled gain bounds table is valid")
    }
}

impl GainBounds {
    /// Parses 14 whitespace-separated `k_min k_max` rows. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if rows.len() != 14 {
            return Err(Error::Parse(format!(
                "gain bounds need 14 rows, found {}",
                rows.len()
            )));
        }
        let mut k_min = [0.0; 14];
        let mut k_max = [0.0; 14];
        for (i, row) in rows.iter().enumerate() {
            let cols: Vec<&str> = row.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::Parse(format!(
                    "gain bounds row {} needs 2 columns, found {}",
                    i + 1,
                    cols.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("gain bounds row {}: {e}", i + 1)))
            };
            k_min[i] = num(cols[0])?;
            k_max[i] = num(cols[1])?;
        }
        let bounds = Self { k_min, k_max };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..14 {
            let (lo, hi) = (self.k_min[i], self.k_max[i]);
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::validation(
                    format!("k{}", i + 1),
                    format!("bounds must satisfy 0 < k_min <= k_max, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn contains(&self, k: &[f64]) -> bool {
        k.len() == 14
            && k
                .iter()
                .enumerate()
                .all(|(i, v)| *v >= self.k_min[i] && *v <= self.k_max[i])
    }
}
