//! Device/cloud message schemas, their canonical byte encoding, and the
//! in-process orchestration of an enrichment session.
//!
//! Every hop goes through [`encode`] and [`decode`], so the bytes recorded in
//! a [`Transcript`] are exactly what a networked deployment would exchange.
//! A frame is a 4-byte big-endian payload length followed by one JSON record
//! terminated by `\n`; the record's `"type"` field names the message.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cloud::{build_plan, draw_samples, EnrichedBatch, PastContextSummary, Provenance, SamplingConfig};
use crate::data::{Dataset, FeatureVector, LabeledSample};
use crate::device::{compute_context_weights, MatchConfig, UploadedWeights};
use crate::directory::{ClusterAssignment, Directory, DirectoryEntry};
use crate::error::{DeltaError, Result};
use crate::model::LinearClassifier;

/// Upload entries below this normalized weight are dropped before sending.
pub const DEFAULT_UPLOAD_MIN_WEIGHT: f64 = 1e-4;

const LEN_PREFIX: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryDownload {
    pub version: u32,
    pub feature_dim: usize,
    pub class_count: usize,
    pub entries: Vec<DirectoryEntry>,
}

impl DirectoryDownload {
    pub fn from_directory(directory: &Directory, version: u32) -> Self {
        DirectoryDownload {
            version,
            feature_dim: directory.feature_dim,
            class_count: directory.class_count,
            entries: directory.entries.clone(),
        }
    }

    pub fn to_directory(&self) -> Result<Directory> {
        let d = Directory {
            entries: self.entries.clone(),
            feature_dim: self.feature_dim,
            class_count: self.class_count,
        };
        d.validate()?;
        Ok(d)
    }
}

/// Directory weights for the new context plus refreshed weights for every
/// past context, in context order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUpload {
    pub device_id: String,
    pub context_id: u32,
    pub current: UploadedWeights,
    pub past: Vec<UploadedWeights>,
}

/// One enriched sample as shipped to the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub context_id: u32,
    pub cluster_id: usize,
    pub label: usize,
    pub feature: Vec<f64>,
    pub importance_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentResponse {
    pub context_id: u32,
    pub records: Vec<EnrichmentRecord>,
}

impl EnrichmentResponse {
    pub fn from_batch(batch: &EnrichedBatch) -> Self {
        EnrichmentResponse {
            context_id: batch.context_id,
            records: batch
                .samples
                .iter()
                .zip(&batch.importance_weights)
                .zip(&batch.provenance)
                .map(|((s, &u), p)| EnrichmentRecord {
                    context_id: batch.context_id,
                    cluster_id: p.cluster_id,
                    label: s.label,
                    feature: s.feature.as_slice().to_vec(),
                    importance_weight: u,
                })
                .collect(),
        }
    }

    pub fn to_batch(&self) -> Result<EnrichedBatch> {
        let mut batch = EnrichedBatch::empty(self.context_id);
        for r in &self.records {
            if !(r.importance_weight > 0.0 && r.importance_weight.is_finite()) {
                return Err(DeltaError::NonFinite("importance weight"));
            }
            batch
                .samples
                .push(LabeledSample::new(FeatureVector::new(r.feature.clone())?, r.label));
            batch.importance_weights.push(r.importance_weight);
            batch.provenance.push(Provenance {
                cluster_id: r.cluster_id,
                cloud_index: None,
            });
        }
        Ok(batch)
    }

    /// Line-delimited enrichment records.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    DirectoryDownload(DirectoryDownload),
    WeightUpload(WeightUpload),
    EnrichmentResponse(EnrichmentResponse),
    Error(ErrorMessage),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::DirectoryDownload(_) => "directory_download",
            Message::WeightUpload(_) => "weight_upload",
            Message::EnrichmentResponse(_) => "enrichment_response",
            Message::Error(_) => "error",
        }
    }

    /// Protocol errors keep their own code and detail.
    pub fn error(err: &DeltaError) -> Self {
        let (code, detail) = match err {
            DeltaError::Protocol { code, detail } => (code.clone(), detail.clone()),
            other => (other.code().to_string(), other.to_string()),
        };
        Message::Error(ErrorMessage { code, detail })
    }
}

/// Frames one message: length prefix, then the JSON record and a newline.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut payload = serde_json::to_vec(msg).expect("messages hold only finite numbers and strings");
    payload.push(b'\n');
    let mut out = Vec::with_capacity(LEN_PREFIX + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

#[derive(Deserialize)]
struct Probe<'a> {
    #[serde(rename = "type", borrow)]
    kind: Cow<'a, str>,
}

fn json_error(offset: usize, payload: &[u8], e: serde_json::Error) -> DeltaError {
    // Payloads are single-line, so the column locates the byte.
    let col = e.column().saturating_sub(1).min(payload.len());
    DeltaError::Decode {
        position: offset + col,
        reason: e.to_string(),
    }
}

fn decode_payload(offset: usize, payload: &[u8]) -> Result<Message> {
    let probe: Probe = serde_json::from_slice(payload).map_err(|e| json_error(offset, payload, e))?;
    let err = |e| json_error(offset, payload, e);
    Ok(match probe.kind.as_ref() {
        "directory_download" => Message::DirectoryDownload(serde_json::from_slice(payload).map_err(err)?),
        "weight_upload" => Message::WeightUpload(serde_json::from_slice(payload).map_err(err)?),
        "enrichment_response" => Message::EnrichmentResponse(serde_json::from_slice(payload).map_err(err)?),
        "error" => Message::Error(serde_json::from_slice(payload).map_err(err)?),
        other => {
            return Err(DeltaError::Decode {
                position: offset,
                reason: format!("unknown message type {other:?}"),
            })
        }
    })
}

/// Decodes the frame at the start of `bytes`, returning the message and the
/// number of bytes consumed.
pub fn decode_frame(bytes: &[u8], offset: usize) -> Result<(Message, usize)> {
    if bytes.len() < LEN_PREFIX {
        return Err(DeltaError::Decode {
            position: offset + bytes.len(),
            reason: "truncated length prefix".into(),
        });
    }
    let len = u32::from_be_bytes(bytes[..LEN_PREFIX].try_into().expect("four bytes")) as usize;
    let end = LEN_PREFIX + len;
    if bytes.len() < end {
        return Err(DeltaError::Decode {
            position: offset + bytes.len(),
            reason: format!(
                "frame declares {len} bytes but only {} remain",
                bytes.len() - LEN_PREFIX
            ),
        });
    }
    let payload = &bytes[LEN_PREFIX..end];
    if payload.last() != Some(&b'\n') {
        return Err(DeltaError::Decode {
            position: offset + end.saturating_sub(1),
            reason: "record is not newline-terminated".into(),
        });
    }
    let msg = decode_payload(offset + LEN_PREFIX, &payload[..payload.len() - 1])?;
    Ok((msg, end))
}

/// Decodes exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    let (msg, used) = decode_frame(bytes, 0)?;
    if used != bytes.len() {
        return Err(DeltaError::Decode {
            position: used,
            reason: format!("{} trailing bytes after frame", bytes.len() - used),
        });
    }
    Ok(msg)
}

/// Decodes a concatenation of frames.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Message>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (msg, used) = decode_frame(&bytes[pos..], pos)?;
        out.push(msg);
        pos += used;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upload,
    Download,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

/// Every frame exchanged between one device and the cloud, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub frames: Vec<Frame>,
}

impl Transcript {
    pub fn record(&mut self, direction: Direction, bytes: &[u8]) {
        self.frames.push(Frame {
            direction,
            bytes: bytes.to_vec(),
        });
    }

    pub fn bytes_in(&self, direction: Direction) -> usize {
        self.frames
            .iter()
            .filter(|f| f.direction == direction)
            .map(|f| f.bytes.len())
            .sum()
    }

    /// All frames concatenated; decodable with [`decode_stream`].
    pub fn to_bytes(&self) -> Vec<u8> {
        self.frames.iter().flat_map(|f| f.bytes.iter().copied()).collect()
    }
}

/// A device feature vector found verbatim in a byte stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLeak {
    pub dataset: String,
    pub sample_index: usize,
}

fn collect_numbers(v: &serde_json::Value, out: &mut Vec<f64>) {
    match v {
        serde_json::Value::Number(n) => out.push(n.as_f64().unwrap_or(f64::NAN)),
        serde_json::Value::Array(a) => a.iter().for_each(|x| collect_numbers(x, out)),
        serde_json::Value::Object(o) => o.values().for_each(|x| collect_numbers(x, out)),
        _ => {}
    }
}

/// Scans a frame stream for any device feature vector: as a contiguous run
/// of decoded numbers anywhere in any record, or as its literal JSON text.
pub fn scan_for_features(stream: &[u8], device_sets: &[&Dataset]) -> Result<Vec<FeatureLeak>> {
    let mut numbers = Vec::new();
    let mut pos = 0;
    while pos < stream.len() {
        if stream.len() - pos < LEN_PREFIX {
            return Err(DeltaError::Decode {
                position: pos,
                reason: "truncated length prefix".into(),
            });
        }
        let len = u32::from_be_bytes(stream[pos..pos + LEN_PREFIX].try_into().expect("four bytes")) as usize;
        let end = pos + LEN_PREFIX + len;
        let payload = stream.get(pos + LEN_PREFIX..end).ok_or(DeltaError::Decode {
            position: pos,
            reason: "truncated frame".into(),
        })?;
        let value: serde_json::Value =
            serde_json::from_slice(payload).map_err(|e| json_error(pos + LEN_PREFIX, payload, e))?;
        collect_numbers(&value, &mut numbers);
        pos = end;
    }
    let mut by_first: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, x) in numbers.iter().enumerate() {
        by_first.entry(x.to_bits()).or_default().push(i);
    }
    let mut leaks = Vec::new();
    for data in device_sets {
        for (si, s) in data.samples.iter().enumerate() {
            let f = s.feature.as_slice();
            let Some(first) = f.first() else { continue };
            let numeric = by_first.get(&first.to_bits()).is_some_and(|starts| {
                starts
                    .iter()
                    .any(|&st| numbers.get(st..st + f.len()).is_some_and(|w| w == f))
            });
            let literal = serde_json::to_vec(f).expect("finite features");
            let textual = stream.windows(literal.len()).any(|w| w == literal.as_slice());
            if numeric || textual {
                leaks.push(FeatureLeak {
                    dataset: data.id.clone(),
                    sample_index: si,
                });
            }
        }
    }
    Ok(leaks)
}

/// Cloud-side state kept per device.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub device_id: String,
    pub directory_version: u32,
    /// Freshest uploaded weights of contexts `1..=t`, in order.
    pub weights: Vec<UploadedWeights>,
}

/// The cloud server: cloud pool, directory and per-device session state.
#[derive(Debug, Clone)]
pub struct CloudServer {
    pub cloud: Dataset,
    pub directory: Directory,
    pub assignment: ClusterAssignment,
    pub sampling: SamplingConfig,
    pub directory_version: u32,
    sessions: BTreeMap<String, SessionState>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl CloudServer {
    pub fn new(cloud: Dataset, directory: Directory, assignment: ClusterAssignment, sampling: SamplingConfig) -> Self {
        CloudServer {
            cloud,
            directory,
            assignment,
            sampling,
            directory_version: 1,
            sessions: BTreeMap::new(),
        }
    }

    pub fn session(&self, device_id: &str) -> Option<&SessionState> {
        self.sessions.get(device_id)
    }

    /// Stage 1 payload.
    pub fn directory_download(&self) -> Vec<u8> {
        encode(&Message::DirectoryDownload(DirectoryDownload::from_directory(
            &self.directory,
            self.directory_version,
        )))
    }

    /// Sampling seed for one (device, context) pair.
    pub fn context_seed(&self, device_id: &str, context_id: u32) -> u64 {
        self.sampling.seed ^ fnv1a(device_id) ^ (context_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }

    fn handle_upload(&mut self, up: WeightUpload) -> Result<EnrichmentResponse> {
        let expected_past = up.context_id.checked_sub(1).ok_or_else(|| DeltaError::Protocol {
            code: "bad_context".into(),
            detail: "context ids start at 1".into(),
        })?;
        if up.current.context_id != up.context_id
            || up.past.len() != expected_past as usize
            || up.past.iter().enumerate().any(|(i, w)| w.context_id != i as u32 + 1)
        {
            return Err(DeltaError::Protocol {
                code: "bad_context".into(),
                detail: format!(
                    "context {} upload must carry weights for contexts 1..={}",
                    up.context_id, up.context_id
                ),
            });
        }
        let n = self.directory.len();
        let current = up.current.dense(n)?;
        let past_dense: Vec<Vec<f64>> = up.past.iter().map(|w| w.dense(n)).collect::<Result<_>>()?;
        let summary = PastContextSummary::from_weight_history(&past_dense, &self.directory)?;
        let plan = build_plan(
            up.context_id,
            &current,
            &self.directory,
            &self.assignment,
            &self.cloud,
            summary.as_ref(),
            &self.sampling,
        )?;
        let seed = self.context_seed(&up.device_id, up.context_id);
        let batch = draw_samples(&plan, &self.cloud, seed, self.sampling.replacement)?;

        let mut weights = up.past;
        weights.push(up.current);
        self.sessions.insert(
            up.device_id.clone(),
            SessionState {
                device_id: up.device_id,
                directory_version: self.directory_version,
                weights,
            },
        );
        Ok(EnrichmentResponse::from_batch(&batch))
    }

    /// Handles one inbound frame and returns the encoded reply. Failures are
    /// reported as `Error` messages.
    pub fn handle(&mut self, frame: &[u8]) -> Vec<u8> {
        let reply = match decode(frame) {
            Ok(Message::WeightUpload(up)) => match self.handle_upload(up) {
                Ok(resp) => Message::EnrichmentResponse(resp),
                Err(e) => Message::error(&e),
            },
            Ok(other) => Message::Error(ErrorMessage {
                code: "unexpected_message".into(),
                detail: format!("cloud cannot handle {}", other.kind()),
            }),
            Err(e) => Message::error(&e),
        };
        encode(&reply)
    }
}

/// Device-side view: its id, the downloaded directory, and the local data of
/// every context seen so far.
#[derive(Debug, Clone)]
pub struct DeviceClient {
    pub device_id: String,
    pub match_cfg: MatchConfig,
    pub upload_min_weight: f64,
    directory: Option<Directory>,
    contexts: Vec<Dataset>,
}

impl DeviceClient {
    pub fn new(device_id: impl Into<String>, match_cfg: MatchConfig) -> Self {
        DeviceClient {
            device_id: device_id.into(),
            match_cfg,
            upload_min_weight: DEFAULT_UPLOAD_MIN_WEIGHT,
            directory: None,
            contexts: Vec::new(),
        }
    }

    pub fn directory(&self) -> Option<&Directory> {
        self.directory.as_ref()
    }

    /// Stage 1: accept the directory download.
    pub fn receive_directory(&mut self, frame: &[u8]) -> Result<()> {
        match decode(frame)? {
            Message::DirectoryDownload(d) => {
                self.directory = Some(d.to_directory()?);
                Ok(())
            }
            Message::Error(e) => Err(DeltaError::Protocol {
                code: e.code,
                detail: e.detail,
            }),
            other => Err(DeltaError::Protocol {
                code: "unexpected_message".into(),
                detail: format!("expected directory_download, got {}", other.kind()),
            }),
        }
    }

    /// Registers the local data of the next context and returns its id.
    pub fn begin_context(&mut self, data: Dataset) -> u32 {
        self.contexts.push(data);
        self.contexts.len() as u32
    }

    pub fn context_data(&self) -> &[Dataset] {
        &self.contexts
    }

    /// Stage 2: weights for the newest context plus recomputed weights for
    /// all past contexts, matched against the current model.
    pub fn prepare_upload(&self, model: &LinearClassifier) -> Result<Message> {
        let directory = self.directory.as_ref().ok_or_else(|| DeltaError::Protocol {
            code: "no_directory".into(),
            detail: "directory has not been downloaded".into(),
        })?;
        let t = self.contexts.len();
        if t == 0 {
            return Err(DeltaError::Empty("device context history"));
        }
        let mut uploads = self
            .contexts
            .iter()
            .enumerate()
            .map(|(i, data)| {
                compute_context_weights(i as u32 + 1, data, directory, model, &self.match_cfg)
                    .map(|w| w.to_upload(self.upload_min_weight))
            })
            .collect::<Result<Vec<_>>>()?;
        let current = uploads.pop().expect("t >= 1");
        Ok(Message::WeightUpload(WeightUpload {
            device_id: self.device_id.clone(),
            context_id: t as u32,
            current,
            past: uploads,
        }))
    }

    /// Stage 3: unpack the enriched batch.
    pub fn receive_enrichment(&self, frame: &[u8]) -> Result<EnrichedBatch> {
        match decode(frame)? {
            Message::EnrichmentResponse(r) => r.to_batch(),
            Message::Error(e) => Err(DeltaError::Protocol {
                code: e.code,
                detail: e.detail,
            }),
            other => Err(DeltaError::Protocol {
                code: "unexpected_message".into(),
                detail: format!("expected enrichment_response, got {}", other.kind()),
            }),
        }
    }
}

/// Stage 1 over the transcript: the cloud sends the directory, the device
/// stores it.
pub fn distribute_directory(device: &mut DeviceClient, cloud: &CloudServer, transcript: &mut Transcript) -> Result<()> {
    let frame = cloud.directory_download();
    transcript.record(Direction::Download, &frame);
    device.receive_directory(&frame)
}

/// Stages 2 and 3 for the device's newest context: weight upload, cloud-side
/// plan and draw, enrichment download. Returns the batch as decoded on the
/// device.
pub fn run_enrichment_session(
    device: &DeviceClient,
    model: &LinearClassifier,
    cloud: &mut CloudServer,
    transcript: &mut Transcript,
) -> Result<EnrichedBatch> {
    let upload = encode(&device.prepare_upload(model)?);
    transcript.record(Direction::Upload, &upload);
    let reply = cloud.handle(&upload);
    transcript.record(Direction::Download, &reply);
    device.receive_enrichment(&reply)
}
