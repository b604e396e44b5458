use serde::{Deserialize, Serialize};

/// One line of the weight-trace log.
///
/// Serialized as a JSON object per line with fields in this order:
/// `iteration`, `strategy`, `gains` (m_1..m_K), `weights` (w_1..w_K),
/// `gamma_hat` (null when the validation gradient vanished).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub iteration: usize,
    pub strategy: String,
    pub gains: Vec<f64>,
    pub weights: Vec<f64>,
    pub gamma_hat: Option<f64>,
}

impl WeightRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("weight record serializes")
    }

    pub fn from_line(line: &str) -> crate::Result<Self> {
        serde_json::from_str(line).map_err(|e| crate::Error::Parse(e.to_string()))
    }
}
