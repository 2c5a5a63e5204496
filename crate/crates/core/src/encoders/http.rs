use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderSpec, FeatureSeq, Modality};
use crate::error::{Error, Result};

/// Adapter for an embedding service speaking a small JSON protocol:
/// `POST {endpoint}` with `{"model", "modality", "input", "max_length"}`,
/// answered by `{"embeddings": [[f32; dim]; rows]}`.
#[derive(Debug, Clone)]
pub struct HttpEncoder {
    model: String,
    endpoint: Option<String>,
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    modality: &'a str,
    input: &'a str,
    max_length: usize,
}

#[derive(Deserialize)]
struct Response {
    embeddings: Vec<Vec<f32>>,
}

impl HttpEncoder {
    pub fn new(model: String, endpoint: Option<String>) -> Self {
        Self { model, endpoint }
    }
}

impl Encoder for HttpEncoder {
    fn backend_id(&self) -> &str {
        &self.model
    }

    fn supports(&self, _modality: Modality) -> bool {
        true
    }

    fn encode_raw(&self, input: &str, spec: &EncoderSpec) -> Result<FeatureSeq> {
        let endpoint = self
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::BackendUnavailable(format!("encoder {} has no endpoint configured", self.model)))?;
        let body = Request {
            model: &self.model,
            modality: spec.modality.as_str(),
            input,
            max_length: spec.max_length,
        };
        let resp: Response = ureq::post(endpoint)
            .send_json(&body)
            .map_err(|e| Error::BackendUnavailable(format!("{endpoint}: {e}")))?
            .into_json()
            .map_err(|e| Error::BackendUnavailable(format!("{endpoint}: bad response: {e}")))?;
        let rows = resp.embeddings.len();
        if resp.embeddings.iter().any(|r| r.len() != spec.output_dim) {
            return Err(Error::DimMismatch(format!(
                "{} returned rows that are not {}-dimensional",
                self.model, spec.output_dim
            )));
        }
        let data = resp.embeddings.into_iter().flatten().collect();
        FeatureSeq::new(data, rows, spec.output_dim, spec.modality, self.model.clone())
    }
}
