//! TOML file formats for markets, allocations, prices and certificates.
//!
//! A market file looks like
//!
//! ```toml
//! n = 2
//! m = 2
//! family = "cobb-douglas"
//! budgets = [10.0, 10.0]
//! valuations = [[0.5, 0.5], [0.5, 0.5]]
//! edges = [[0, 1]]
//! ```

use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::market::{Allocation, MarketInstance, PriceVector, UtilityFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub n: usize,
    pub m: usize,
    pub family: UtilityFamily,
    pub budgets: Vec<f64>,
    pub valuations: Vec<Vec<f64>>,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

impl MarketFile {
    pub fn from_market(mkt: &MarketInstance) -> Self {
        Self {
            n: mkt.num_buyers(),
            m: mkt.num_goods(),
            family: mkt.family(),
            budgets: mkt.budgets().to_vec(),
            valuations: mkt
                .raw_valuations()
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            edges: mkt.edges().iter().map(|&(k, i)| [k, i]).collect(),
        }
    }

    pub fn into_market(self) -> Result<MarketInstance> {
        if self.budgets.len() != self.n {
            return Err(MarketError::InvalidMarket(format!(
                "n = {} but {} budgets given",
                self.n,
                self.budgets.len()
            )));
        }
        if self.valuations.len() != self.n || self.valuations.iter().any(|r| r.len() != self.m) {
            return Err(MarketError::InvalidMarket(format!(
                "valuations must be a {}×{} array",
                self.n, self.m
            )));
        }
        let flat: Vec<f64> = self.valuations.into_iter().flatten().collect();
        let v = Array2::from_shape_vec((self.n, self.m), flat)
            .map_err(|e| MarketError::InvalidMarket(e.to_string()))?;
        let edges = self.edges.into_iter().map(|[k, i]| (k, i)).collect();
        MarketInstance::new(self.family, self.budgets, v, edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationFile {
    pub allocation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricesFile {
    pub prices: Vec<f64>,
}

/// Allocation and prices in one file; readable as either of the above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub prices: Vec<f64>,
    pub allocation: Vec<Vec<f64>>,
}

impl SolutionFile {
    pub fn new(x: &Allocation, p: &PriceVector) -> Self {
        Self {
            prices: p.to_vec(),
            allocation: x.to_rows(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| MarketError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| MarketError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| MarketError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| MarketError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_text(path, &text)
}

pub fn market_from_str(text: &str) -> Result<MarketInstance> {
    let file: MarketFile = toml::from_str(text).map_err(|e| MarketError::Parse {
        path: "<string>".into(),
        message: e.to_string(),
    })?;
    file.into_market()
}

pub fn market_to_string(mkt: &MarketInstance) -> String {
    toml::to_string(&MarketFile::from_market(mkt)).expect("market file is always serialisable")
}

pub fn read_market(path: &Path) -> Result<MarketInstance> {
    read_toml::<MarketFile>(path)?.into_market()
}

pub fn write_market(path: &Path, mkt: &MarketInstance) -> Result<()> {
    write_toml(path, &MarketFile::from_market(mkt))
}

pub fn read_allocation(path: &Path) -> Result<Allocation> {
    Allocation::from_rows(&read_toml::<AllocationFile>(path)?.allocation)
}

pub fn read_prices(path: &Path) -> Result<PriceVector> {
    PriceVector::from_vec(read_toml::<PricesFile>(path)?.prices)
}
