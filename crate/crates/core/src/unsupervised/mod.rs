//! Reference-free quality signals: SpeechLMScore over k-means units and
//! ASR confidence from token posteriors.

mod confidence;
mod kmeans;
mod ulm;

pub use confidence::{
    confidence_score, load_posteriors, parse_posteriors, write_posteriors, ConfidenceRecord,
};
pub use kmeans::{
    kmeans_fit, load_quantizer, save_quantizer, KMeansFit, KMeansQuantizer, DEFAULT_CLUSTERS,
    QUANTIZER_FORMAT_VERSION,
};
pub use ulm::{
    load_ulm, save_ulm, speechlm_score, ulm_finetune, ulm_train, NgramCounts, UnitLm, DEFAULT_MIX,
    DEFAULT_ORDER, ULM_FORMAT_VERSION,
};

use crate::error::{Error, Result};

/// A non-empty sequence of unit ids, each below the quantizer's K.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnitSequence {
    units: Vec<u32>,
}

impl UnitSequence {
    pub fn new(units: Vec<u32>, k: usize) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::invalid("unit sequence is empty"));
        }
        if let Some(&u) = units.iter().find(|&&u| u as usize >= k) {
            return Err(Error::invalid(format!("unit {u} is not below K = {k}")));
        }
        Ok(Self { units })
    }

    pub fn units(&self) -> &[u32] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}
