use std::sync::Mutex;

use indexmap::IndexMap;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Usage;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("no price configured for model '{0}'")]
    UnknownModel(String),
    #[error("price table: {0}")]
    Invalid(String),
}

/// Dollars per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    #[serde(with = "rust_decimal::serde::str")]
    pub input: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub output: Decimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    pub models: IndexMap<String, ModelPrice>,
}

impl Default for PriceTable {
    /// Rates used for the GPT-3.5 and GPT-4 experiments, plus a free entry
    /// for the offline backends.
    fn default() -> Self {
        let mut models = IndexMap::new();
        models.insert("gpt-3.5-turbo-0301".into(), ModelPrice { input: Decimal::new(150, 2), output: Decimal::new(200, 2) });
        models.insert("gpt-4-32k".into(), ModelPrice { input: Decimal::new(60, 0), output: Decimal::new(120, 0) });
        models.insert("scripted".into(), ModelPrice { input: Decimal::ZERO, output: Decimal::ZERO });
        PriceTable { models }
    }
}

impl PriceTable {
    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        let table: PriceTable = toml::from_str(text).map_err(|e| CostError::Invalid(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), CostError> {
        for (model, price) in &self.models {
            if price.input.is_sign_negative() || price.output.is_sign_negative() {
                return Err(CostError::Invalid(format!("negative rate for '{model}'")));
            }
        }
        Ok(())
    }

    pub fn get(&self, model: &str) -> Result<&ModelPrice, CostError> {
        self.models.get(model).ok_or_else(|| CostError::UnknownModel(model.to_string()))
    }

    /// Exact dollar cost of one usage record.
    pub fn cost(&self, model: &str, usage: Usage) -> Result<Decimal, CostError> {
        let price = self.get(model)?;
        let million = Decimal::from(1_000_000u32);
        Ok(Decimal::from(usage.input_tokens) * price.input / million
            + Decimal::from(usage.output_tokens) * price.output / million)
    }
}

/// Running token and dollar totals. Decimal arithmetic makes the total
/// independent of accumulation order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub per_model: IndexMap<String, Usage>,
    #[serde(with = "rust_decimal::serde::str")]
    pub total: Decimal,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a usage record and returns its cost. Unknown models leave the
    /// ledger untouched.
    pub fn accumulate(&mut self, model: &str, usage: Usage, prices: &PriceTable) -> Result<Decimal, CostError> {
        let cost = prices.cost(model, usage)?;
        *self.per_model.entry(model.to_string()).or_default() += usage;
        self.total += cost;
        Ok(cost)
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (model, usage) in &other.per_model {
            *self.per_model.entry(model.clone()).or_default() += *usage;
        }
        self.total += other.total;
    }

    pub fn usage(&self) -> Usage {
        self.per_model.values().copied().sum()
    }
}

/// A cost ledger shared between concurrent sessions.
#[derive(Debug, Default)]
pub struct SharedCostLedger {
    inner: Mutex<CostLedger>,
    prices: PriceTable,
}

impl SharedCostLedger {
    pub fn new(prices: PriceTable) -> Self {
        SharedCostLedger { inner: Mutex::new(CostLedger::new()), prices }
    }

    pub fn accumulate(&self, model: &str, usage: Usage) -> Result<Decimal, CostError> {
        self.inner.lock().expect("cost ledger lock").accumulate(model, usage, &self.prices)
    }

    pub fn snapshot(&self) -> CostLedger {
        self.inner.lock().expect("cost ledger lock").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn dollars(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn unit_case() {
        let mut ledger = CostLedger::new();
        ledger.accumulate("gpt-3.5-turbo-0301", Usage::new(1_000_000, 1_000_000), &PriceTable::default()).unwrap();
        assert_eq!(ledger.total, dollars("3.50"));
    }

    #[test]
    fn experiment_totals() {
        let prices = PriceTable::default();
        assert_eq!(prices.cost("gpt-3.5-turbo-0301", Usage::new(38_980_000, 1_620_000)).unwrap(), dollars("61.71"));
        let gpt4 = prices.cost("gpt-4-32k", Usage::new(33_953_000, 1_847_000)).unwrap();
        assert_eq!(gpt4, dollars("2258.82"));
        assert!((gpt4 - dollars("2258.81")).abs() <= dollars("0.10"));
    }

    #[test]
    fn unknown_model_is_config_error() {
        let mut ledger = CostLedger::new();
        let err = ledger.accumulate("gpt-5", Usage::new(1, 1), &PriceTable::default()).unwrap_err();
        assert_eq!(err, CostError::UnknownModel("gpt-5".into()));
        assert_eq!(ledger, CostLedger::new());
    }

    #[test]
    fn price_table_from_toml() {
        let table = PriceTable::from_toml("[my-model]\ninput = \"0.50\"\noutput = \"1.5\"\n").unwrap();
        assert_eq!(table.cost("my-model", Usage::new(2_000_000, 1_000_000)).unwrap(), dollars("2.5"));
        assert!(PriceTable::from_toml("[m]\ninput = \"-1\"\noutput = \"1\"\n").is_err());
    }

    #[test]
    fn shared_ledger_serializes_updates() {
        let shared = SharedCostLedger::new(PriceTable::default());
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..100 {
                        shared.accumulate("gpt-4-32k", Usage::new(1000, 10)).unwrap();
                    }
                });
            }
        });
        let snap = shared.snapshot();
        assert_eq!(snap.usage(), Usage::new(800_000, 8_000));
        assert_eq!(snap.total, dollars("48.96"));
    }
}
