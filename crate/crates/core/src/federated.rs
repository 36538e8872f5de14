//! Federated averaging across simulated hospitals.
//!
//! The shared model is a linear map `predict(x) = W x` with `W` square of
//! side `model_dim`, trained by full-batch gradient descent on
//!
//! ```text
//! loss(W) = 1/(2N) * sum_i |W x_i - t_i|^2
//! ```
//!
//! Only parameters and sample counts ever enter the [`Transcript`]; its
//! payload type has no variant that could carry training pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{forward_kspace, generate_phantom, make_mask, Image, MaskSpec};
use crate::ledger::{Action, Ledger, LedgerError};
use crate::recon::zero_filled_recon;

#[derive(Debug, Error)]
pub enum FederatedError {
    #[error("no reports to aggregate")]
    EmptyReportSet,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub version: u64,
}

impl ModelParams {
    pub fn zeros(model_dim: usize) -> Self {
        Self {
            values: vec![0.0; model_dim * model_dim],
            version: 0,
        }
    }

    /// Side of the square weight matrix, if `values` has square length.
    pub fn model_dim(&self) -> Option<usize> {
        let d = (self.values.len() as f64).sqrt().round() as usize;
        (d * d == self.values.len()).then_some(d)
    }

    /// SHA-256 over the little-endian f64 values followed by the version.
    pub fn digest(&self) -> [u8; 32] {
        let mut bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        bytes.extend_from_slice(&self.version.to_le_bytes());
        crate::sha256(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// A hospital and its private data. Deliberately not `Serialize`.
#[derive(Debug, Clone)]
pub struct HospitalNode {
    pub hospital_id: String,
    local_pairs: Vec<TrainingPair>,
}

impl HospitalNode {
    pub fn new(hospital_id: &str, local_pairs: Vec<TrainingPair>) -> Result<Self, FederatedError> {
        let Some(first) = local_pairs.first() else {
            return Err(FederatedError::InvalidArgument(format!("{hospital_id}: no local data")));
        };
        let d = first.input.len();
        for p in &local_pairs {
            for len in [p.input.len(), p.target.len()] {
                if len != d {
                    return Err(FederatedError::DimensionMismatch { expected: d, got: len });
                }
            }
        }
        Ok(Self {
            hospital_id: hospital_id.into(),
            local_pairs,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.local_pairs.len()
    }

    pub fn dim(&self) -> usize {
        self.local_pairs[0].input.len()
    }

    pub fn local_pairs(&self) -> &[TrainingPair] {
        &self.local_pairs
    }
}

fn check_dim(params: &ModelParams, pairs: &[TrainingPair]) -> Result<usize, FederatedError> {
    let d = pairs.first().map_or(0, |p| p.input.len());
    if params.values.len() != d * d {
        return Err(FederatedError::DimensionMismatch {
            expected: d * d,
            got: params.values.len(),
        });
    }
    Ok(d)
}

/// Mean-squared-error loss and its gradient, both over `pairs`.
pub fn loss_and_gradient(params: &ModelParams, pairs: &[TrainingPair]) -> Result<(f64, Vec<f64>), FederatedError> {
    let d = check_dim(params, pairs)?;
    let w = &params.values;
    let n = pairs.len() as f64;
    let mut grad = vec![0.0; d * d];
    let mut loss = 0.0;
    let mut residual = vec![0.0; d];
    for p in pairs {
        for (r, res) in residual.iter_mut().enumerate() {
            let row = &w[r * d..(r + 1) * d];
            *res = row.iter().zip(&p.input).map(|(a, b)| a * b).sum::<f64>() - p.target[r];
        }
        loss += residual.iter().map(|v| v * v).sum::<f64>();
        for (r, res) in residual.iter().enumerate() {
            for (c, x) in p.input.iter().enumerate() {
                grad[r * d + c] += res * x;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / (2.0 * n), grad))
}

pub fn loss(params: &ModelParams, pairs: &[TrainingPair]) -> Result<f64, FederatedError> {
    loss_and_gradient(params, pairs).map(|(l, _)| l)
}

/// `epochs` full-batch gradient steps on the node's data. Keeps the version.
pub fn local_train(
    params: &ModelParams,
    node: &HospitalNode,
    epochs: usize,
    learning_rate: f64,
) -> Result<ModelParams, FederatedError> {
    if epochs == 0 {
        return Err(FederatedError::InvalidArgument("epochs must be >= 1".into()));
    }
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(FederatedError::InvalidArgument("learning rate must be >= 0".into()));
    }
    let mut out = params.clone();
    for _ in 0..epochs {
        let (_, grad) = loss_and_gradient(&out, &node.local_pairs)?;
        for (w, g) in out.values.iter_mut().zip(&grad) {
            *w -= learning_rate * g;
        }
    }
    Ok(out)
}

/// Sample-weighted element-wise mean; the version is one past the newest report.
pub fn fed_avg(reports: &[(ModelParams, usize)]) -> Result<ModelParams, FederatedError> {
    let Some((first, _)) = reports.first() else {
        return Err(FederatedError::EmptyReportSet);
    };
    let dim = first.values.len();
    let total: usize = reports.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FederatedError::InvalidArgument("total sample count is zero".into()));
    }
    let mut values = vec![0.0; dim];
    for (p, n) in reports {
        if p.values.len() != dim {
            return Err(FederatedError::DimensionMismatch {
                expected: dim,
                got: p.values.len(),
            });
        }
        let w = *n as f64 / total as f64;
        for (acc, v) in values.iter_mut().zip(&p.values) {
            *acc += w * v;
        }
    }
    let version = reports.iter().map(|(p, _)| p.version).max().unwrap_or(0) + 1;
    Ok(ModelParams { values, version })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Broadcast,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "payload_kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Params(ModelParams),
    SampleCount(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: u64,
    pub direction: Direction,
    pub hospital_id: String,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub global: ModelParams,
    pub transcript: Transcript,
    pub global_loss: f64,
    pub participants: Vec<String>,
}

/// Where a round's MODEL_UPDATE entry goes.
pub struct AuditSink<'a> {
    pub ledger: &'a mut Ledger,
    pub actor_id: &'a str,
    pub timestamp: u64,
}

/// One FedAvg round. Hospitals listed in `absent` receive the broadcast but
/// do not report; the average is renormalized over those that do.
pub fn run_round(
    round: u64,
    hospitals: &[HospitalNode],
    global: &ModelParams,
    epochs: usize,
    learning_rate: f64,
    absent: &[&str],
    audit: Option<AuditSink<'_>>,
) -> Result<RoundOutcome, FederatedError> {
    if hospitals.is_empty() {
        return Err(FederatedError::InvalidArgument("at least one hospital is required".into()));
    }
    let mut transcript = Transcript::default();
    for h in hospitals {
        transcript.messages.push(Message {
            round,
            direction: Direction::Broadcast,
            hospital_id: h.hospital_id.clone(),
            payload: Payload::Params(global.clone()),
        });
    }

    let reporting: Vec<&HospitalNode> = hospitals
        .iter()
        .filter(|h| !absent.contains(&h.hospital_id.as_str()))
        .collect();
    // Local training runs concurrently; the join is the aggregation barrier.
    let trained: Vec<Result<ModelParams, FederatedError>> = std::thread::scope(|s| {
        let handles: Vec<_> = reporting
            .iter()
            .map(|h| s.spawn(move || local_train(global, h, epochs, learning_rate)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("local training panicked")).collect()
    });

    let mut reports = Vec::with_capacity(reporting.len());
    for (h, p) in reporting.iter().zip(trained) {
        let p = p?;
        transcript.messages.push(Message {
            round,
            direction: Direction::Report,
            hospital_id: h.hospital_id.clone(),
            payload: Payload::Params(p.clone()),
        });
        transcript.messages.push(Message {
            round,
            direction: Direction::Report,
            hospital_id: h.hospital_id.clone(),
            payload: Payload::SampleCount(h.n_samples()),
        });
        reports.push((p, h.n_samples()));
    }
    let new_global = fed_avg(&reports)?;
    let global_loss = pooled_loss(&new_global, hospitals)?;

    if let Some(sink) = audit {
        sink.ledger
            .append(sink.actor_id, Action::ModelUpdate, new_global.digest(), sink.timestamp)?;
    }
    Ok(RoundOutcome {
        global: new_global,
        transcript,
        global_loss,
        participants: reporting.iter().map(|h| h.hospital_id.clone()).collect(),
    })
}

/// Sample-weighted mean of the hospitals' local losses.
pub fn pooled_loss(params: &ModelParams, hospitals: &[HospitalNode]) -> Result<f64, FederatedError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for h in hospitals {
        total += loss(params, &h.local_pairs)? * h.n_samples() as f64;
        n += h.n_samples();
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalConfig {
    pub hospital_id: String,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub hospitals: Vec<HospitalConfig>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    /// Input and target length; the weight matrix is `model_dim x model_dim`.
    pub model_dim: usize,
}

/// Phantom size used for synthetic patches.
pub const SYNTH_IMAGE_SIZE: usize = 32;

/// Pairs of (degraded patch, phantom patch) as flat vectors of `dim` pixels
/// taken in raster order. The degraded image is a zero-filled reconstruction
/// of a noisy, 2x undersampled acquisition; every seed draws its own noise,
/// mask and patch positions.
pub fn synthetic_pairs(dim: usize, n_samples: usize, seed: u64) -> Result<Vec<TrainingPair>, FederatedError> {
    let n = SYNTH_IMAGE_SIZE;
    if dim == 0 || dim > n * n {
        return Err(FederatedError::InvalidArgument(format!("model_dim must be in 1..={}", n * n)));
    }
    if n_samples == 0 {
        return Err(FederatedError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let bad = |e: &dyn std::fmt::Display| FederatedError::InvalidArgument(e.to_string());
    let phantom = generate_phantom(n).map_err(|e| bad(&e))?;
    let y = forward_kspace(&phantom, 0.02, seed).map_err(|e| bad(&e))?;
    let mask = make_mask(&MaskSpec::random_center(n, 2.0, 0.125, seed)).map_err(|e| bad(&e))?;
    let degraded: Image = zero_filled_recon(&y, &mask).map_err(|e| bad(&e))?.image;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_samples)
        .map(|_| {
            let start = rng.gen_range(0..=n * n - dim);
            TrainingPair {
                input: degraded.pixels[start..start + dim].to_vec(),
                target: phantom.pixels[start..start + dim].to_vec(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationRun {
    pub losses: Vec<f64>,
    pub final_params: ModelParams,
    pub transcript: Transcript,
}

pub fn hospitals_from_config(cfg: &FederationConfig) -> Result<Vec<HospitalNode>, FederatedError> {
    cfg.hospitals
        .iter()
        .map(|h| HospitalNode::new(&h.hospital_id, synthetic_pairs(cfg.model_dim, h.n_samples, h.seed)?))
        .collect()
}

/// Runs `cfg.rounds` rounds from zero parameters. `losses[0]` is the loss
/// before training, `losses[r]` after round `r`.
pub fn run_federation(cfg: &FederationConfig, mut ledger: Option<&mut Ledger>, start_ts: u64) -> Result<FederationRun, FederatedError> {
    if cfg.hospitals.is_empty() {
        return Err(FederatedError::InvalidArgument("at least one hospital is required".into()));
    }
    let hospitals = hospitals_from_config(cfg)?;
    let mut global = ModelParams::zeros(cfg.model_dim);
    let mut losses = vec![pooled_loss(&global, &hospitals)?];
    let mut transcript = Transcript::default();
    for r in 0..cfg.rounds {
        let audit = ledger.as_deref_mut().map(|l| AuditSink {
            ledger: l,
            actor_id: "federation",
            timestamp: start_ts + r as u64,
        });
        let out = run_round(r as u64, &hospitals, &global, cfg.epochs, cfg.learning_rate, &[], audit)?;
        global = out.global;
        losses.push(out.global_loss);
        transcript.messages.extend(out.transcript.messages);
    }
    Ok(FederationRun {
        losses,
        final_params: global,
        transcript,
    })
}
