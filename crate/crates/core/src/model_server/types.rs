use indexmap::IndexMap;

use crate::protocol::{Payload, ProtocolError, Value};

/// An H×W×3 unsigned 8-bit image. Travels on the wire as
/// `{"shape": [H, W, 3], "dtype": "u8", "data": <bytes>}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, fill: [u8; 3]) -> Self {
        let data = fill.iter().copied().cycle().take(height * width * 3).collect();
        Image { height, width, data }
    }

    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        if row < self.height && col < self.width {
            let i = (row * self.width + col) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_value(&self) -> Value {
        let mut m = Payload::new();
        m.insert(
            "shape".into(),
            Value::Array(vec![
                Value::UInt(self.height as u64),
                Value::UInt(self.width as u64),
                Value::UInt(Self::CHANNELS as u64),
            ]),
        );
        m.insert("dtype".into(), Value::from("u8"));
        m.insert("data".into(), Value::Bin(self.data.clone()));
        Value::Map(m)
    }

    pub fn from_value(v: &Value) -> Result<Self, ProtocolError> {
        let bad = |why: &str| ProtocolError::InvalidPayload(format!("image: {why}"));
        let m = v.as_map().ok_or_else(|| bad("not a map"))?;
        let shape: Vec<u64> = m
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing shape"))?
            .iter()
            .map(|d| d.as_u64().ok_or_else(|| bad("shape entries must be unsigned")))
            .collect::<Result<_, _>>()?;
        if shape.len() != 3 || shape[2] != Self::CHANNELS as u64 {
            return Err(bad("shape must be [H, W, 3]"));
        }
        if m.get("dtype").and_then(Value::as_str) != Some("u8") {
            return Err(bad("dtype must be u8"));
        }
        let data = m.get("data").and_then(Value::as_bin).ok_or_else(|| bad("missing data"))?;
        let (h, w) = (shape[0] as usize, shape[1] as usize);
        if data.len() != h * w * 3 {
            return Err(bad("data length does not match shape"));
        }
        Ok(Image {
            height: h,
            width: w,
            data: data.to_vec(),
        })
    }
}

/// What a benchmark shows the policy at each step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationPayload {
    pub images: IndexMap<String, Image>,
    pub states: Vec<f64>,
    pub task_description: String,
}

impl ObservationPayload {
    pub fn to_payload(&self) -> Payload {
        let mut images = Payload::new();
        for (name, img) in &self.images {
            images.insert(name.clone(), img.to_value());
        }
        let mut p = Payload::new();
        p.insert("images".into(), Value::Map(images));
        p.insert("states".into(), Value::f64_array(&self.states));
        p.insert("task_description".into(), Value::from(self.task_description.as_str()));
        p
    }

    pub fn from_payload(p: &Payload) -> Result<Self, ProtocolError> {
        let mut images = IndexMap::new();
        if let Some(v) = p.get("images") {
            let m = v
                .as_map()
                .ok_or_else(|| ProtocolError::InvalidPayload("images is not a map".into()))?;
            for (name, img) in m {
                images.insert(name.clone(), Image::from_value(img)?);
            }
        }
        let states = match p.get("states") {
            Some(v) => v
                .to_f64_vec()
                .ok_or_else(|| ProtocolError::InvalidPayload("states is not a numeric array".into()))?,
            None => Vec::new(),
        };
        let task_description = match p.get("task_description") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| ProtocolError::InvalidPayload("task_description is not a string".into()))?
                .to_owned(),
            None => String::new(),
        };
        Ok(ObservationPayload {
            images,
            states,
            task_description,
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChunkError {
    #[error("chunk horizon must be at least 1")]
    EmptyHorizon,
    #[error("rows have inconsistent widths")]
    Ragged,
    #[error("action entries must be finite")]
    NonFinite,
}

/// A T×D block of future actions produced by one inference call.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    horizon: usize,
    dim: usize,
    data: Vec<f64>,
    pub issued_step: u64,
}

impl ActionChunk {
    pub fn from_rows(rows: Vec<Vec<f64>>, issued_step: u64) -> Result<Self, ChunkError> {
        let horizon = rows.len();
        if horizon == 0 {
            return Err(ChunkError::EmptyHorizon);
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(ChunkError::Ragged);
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(ChunkError::NonFinite);
        }
        Ok(ActionChunk {
            horizon,
            dim,
            data,
            issued_step,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.horizon)
    }

    /// True if row `step - issued_step` exists.
    pub fn covers(&self, step: u64) -> bool {
        step >= self.issued_step && step - self.issued_step < self.horizon as u64
    }

    pub fn row_at_step(&self, step: u64) -> Option<&[f64]> {
        self.covers(step).then(|| self.row((step - self.issued_step) as usize))
    }
}

/// Per-call context handed to `predict`.
///
/// `step_index` counts predict calls within the episode; `obs_step` is the
/// episode step the observation belongs to (they coincide when re-planning
/// every step).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictContext {
    pub episode_id: String,
    pub step_index: u64,
    pub task_id: String,
    pub obs_step: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_rejects_bad_shapes() {
        assert_eq!(ActionChunk::from_rows(vec![], 0), Err(ChunkError::EmptyHorizon));
        assert_eq!(ActionChunk::from_rows(vec![vec![1.0], vec![1.0, 2.0]], 0), Err(ChunkError::Ragged));
        assert_eq!(ActionChunk::from_rows(vec![vec![f64::NAN]], 0), Err(ChunkError::NonFinite));
    }

    #[test]
    fn chunk_coverage() {
        let c = ActionChunk::from_rows(vec![vec![1.0], vec![2.0]], 3).unwrap();
        assert!(!c.covers(2));
        assert_eq!(c.row_at_step(3), Some(&[1.0][..]));
        assert_eq!(c.row_at_step(4), Some(&[2.0][..]));
        assert!(!c.covers(5));
    }

    #[test]
    fn observation_payload_round_trips() {
        let mut img = Image::new(2, 3, [1, 2, 3]);
        img.put(1, 2, [9, 9, 9]);
        let mut obs = ObservationPayload {
            states: vec![0.5, -1.0],
            task_description: "reach".into(),
            ..Default::default()
        };
        obs.images.insert("agentview".into(), img);
        let back = ObservationPayload::from_payload(&obs.to_payload()).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn image_shape_mismatch_is_rejected() {
        let mut v = Image::new(2, 2, [0, 0, 0]).to_value();
        if let Value::Map(m) = &mut v {
            m.insert("data".into(), Value::Bin(vec![0; 5]));
        }
        assert!(Image::from_value(&v).is_err());
    }
}
