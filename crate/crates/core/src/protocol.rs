//! Server and client state machines for FedAvg and the score-only protocol.
//!
//! FedAvg: each round the server samples `max(floor(C*N), 1)` clients,
//! broadcasts the global weights, lets every selected client train for `E`
//! epochs and replaces the global model by the shard-size weighted mean.
//!
//! Score-only: every client receives the global weights, trains and/or runs
//! black widow refinement, and uploads only a 4-byte score (holdout loss by
//! default). The server picks the lowest score (lowest client id on ties),
//! requests that client's weights and installs them as the next global model.
//!
//! Client work inside a round runs in parallel when enabled; each client owns
//! its random stream and the server reduces reports in client-id order, so the
//! result does not depend on scheduling.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bwo::{client_bwo_refine, BwoParams};
use crate::cost::{self, CostLedger, CostModel, SCORE_BYTES};
use crate::data::{split_holdout, Dataset, Partition};
use crate::error::{Error, Result};
use crate::model::{evaluate, evaluate_rows, train_epochs, LayerSpec, Params, SgdOptions};
use crate::report::{RoundRow, RoundTrace, RunReport};
use crate::rng::{self, SimRng, Stream};
use crate::scalar::Scalar;

/// What a score-only client does with the broadcast model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Refiner {
    #[serde(rename = "sgd+bwo")]
    SgdThenBwo,
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "bwo")]
    Bwo,
}

impl Refiner {
    fn runs_sgd(self) -> bool {
        matches!(self, Refiner::SgdThenBwo | Refiner::Sgd)
    }

    fn runs_bwo(self) -> bool {
        matches!(self, Refiner::SgdThenBwo | Refiner::Bwo)
    }
}

/// Quantity a client reports as its score; lower is better for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMetric {
    /// Holdout cross-entropy.
    #[default]
    Loss,
    /// `1 - holdout accuracy`.
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPolicy {
    /// `t`: rounds without significant change before stopping.
    pub patience: usize,
    /// `tau`: stop once test accuracy reaches it. `1.0` disables the check.
    pub accuracy_threshold: f64,
    /// `T`
    pub max_rounds: usize,
    /// Accuracy spread below which a window of `patience` rounds counts as a plateau.
    pub min_delta: f64,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self {
            patience: 5,
            accuracy_threshold: 0.70,
            max_rounds: 30,
            min_delta: 0.001,
        }
    }
}

impl StopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::config("stop.patience", "must be at least 1"));
        }
        if !(self.accuracy_threshold > 0.0 && self.accuracy_threshold <= 1.0) {
            return Err(Error::config(
                "stop.accuracy_threshold",
                "must lie in (0, 1]",
            ));
        }
        if self.max_rounds < 1 {
            return Err(Error::config("global_rounds", "must be at least 1"));
        }
        if !self.min_delta.is_finite() || self.min_delta < 0.0 {
            return Err(Error::config(
                "stop.min_delta",
                "must be a finite value >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    Plateau,
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

/// Stop rule over the per-round test accuracies, checked in the order
/// threshold, plateau, budget.
///
/// A plateau is `patience` most recent rounds whose accuracies all lie within
/// a spread smaller than `min_delta`; `min_delta = 0` never plateaus.
pub fn check_stop(accuracies: &[f64], policy: &StopPolicy) -> StopDecision {
    let Some(&last) = accuracies.last() else {
        return StopDecision::Continue;
    };
    if policy.accuracy_threshold < 1.0 && last >= policy.accuracy_threshold {
        return StopDecision::Stop(StopReason::Threshold);
    }
    if policy.patience >= 1 && accuracies.len() >= policy.patience {
        let window = &accuracies[accuracies.len() - policy.patience..];
        let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < policy.min_delta {
            return StopDecision::Stop(StopReason::Plateau);
        }
    }
    if accuracies.len() >= policy.max_rounds {
        return StopDecision::Stop(StopReason::Budget);
    }
    StopDecision::Continue
}

/// Picks `max(floor(C*K), 1)` distinct client ids uniformly, returned in ascending order.
pub fn select_clients<R: Rng + ?Sized>(
    fraction: f64,
    num_clients: usize,
    rng: &mut R,
) -> Vec<usize> {
    let k = cost::clients_per_round(fraction, num_clients);
    let mut ids = index::sample(rng, num_clients, k).into_vec();
    ids.sort_unstable();
    ids
}

/// Shard-size weighted coordinate mean of `(client_id, params, shard_size)` updates.
pub fn aggregate_weighted<S: Scalar>(updates: &[(usize, &Params<S>, usize)]) -> Result<Params<S>> {
    let (_, first, _) = updates
        .first()
        .ok_or_else(|| Error::Protocol("no client updates to aggregate".into()))?;
    for (id, p, _) in updates {
        if !p.same_shape(first) {
            return Err(Error::Protocol(format!(
                "client {id} uploaded parameters with a different shape table"
            )));
        }
    }
    if updates.len() == 1 {
        return Ok((*first).clone());
    }
    let total: usize = updates.iter().map(|(_, _, n)| n).sum();
    if total == 0 {
        return Err(Error::Protocol("aggregate weights sum to zero".into()));
    }
    let mut acc = vec![0.0f64; first.len()];
    for (_, p, n) in updates {
        let w = *n as f64;
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += w * v.as_f64();
        }
    }
    let mut out = (*first).clone();
    let total = total as f64;
    for (o, a) in out.values_mut().iter_mut().zip(acc) {
        *o = S::from_f64_lossy(a / total);
    }
    Ok(out)
}

/// A client's upload in the score-only protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub client_id: u32,
    pub score: f32,
}

impl ScoreReport {
    /// Little-endian `u32` client id followed by the `f32` score.
    pub const WIRE_BYTES: usize = 8;

    pub fn encode(&self) -> [u8; Self::WIRE_BYTES] {
        let mut out = [0u8; Self::WIRE_BYTES];
        out[..4].copy_from_slice(&self.client_id.to_le_bytes());
        out[4..].copy_from_slice(&self.score.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bytes: [u8; Self::WIRE_BYTES] = bytes.try_into().map_err(|_| {
            Error::Protocol(format!(
                "score report must be {} bytes, got {}",
                Self::WIRE_BYTES,
                bytes.len()
            ))
        })?;
        let client_id = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
        let score = f32::from_le_bytes(bytes[4..].try_into().expect("4 bytes"));
        if !score.is_finite() {
            return Err(Error::Protocol(format!(
                "client {client_id} reported a non-finite score"
            )));
        }
        Ok(Self { client_id, score })
    }
}

/// Everything a run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    /// `C`, FedAvg only.
    pub fraction: f64,
    pub sgd: SgdOptions,
    pub refiner: Refiner,
    pub score: ScoreMetric,
    pub bwo: BwoParams,
    pub stop: StopPolicy,
    /// Bytes of the best-model request.
    pub epsilon: u64,
    pub seed: u64,
    pub parallel: bool,
    pub layers: Vec<LayerSpec>,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 1 {
            return Err(Error::config("num_clients", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::config("fraction", "must lie in [0, 1]"));
        }
        if self.sgd.epochs < 1 {
            return Err(Error::config("client_epochs", "must be at least 1"));
        }
        if self.sgd.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !self.sgd.learning_rate.is_finite() || self.sgd.learning_rate < 0.0 {
            return Err(Error::config(
                "learning_rate",
                "must be a finite value >= 0",
            ));
        }
        self.bwo.validate()?;
        self.stop.validate()?;
        crate::model::validate_layers(&self.layers)
    }
}

/// Training set, its client partition and the server-held test set.
#[derive(Debug, Clone)]
pub struct FederatedData<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
    pub partition: Partition,
}

#[derive(Debug, Clone)]
pub struct ClientState<S> {
    pub client_id: usize,
    pub shard: Vec<usize>,
    /// Shard minus the holdout; used for SGD.
    pub train: Vec<usize>,
    /// Last fifth of the shard; used for scores and refinement fitness.
    pub holdout: Vec<usize>,
    pub rng: SimRng,
    pub current_params: Option<Params<S>>,
}

#[derive(Debug, Clone)]
pub struct ServerState<S> {
    pub global_params: Params<S>,
    /// Lowest score reported in any round so far.
    pub best_score: Option<f32>,
    pub best_id: Option<usize>,
    pub round: usize,
    /// `(test accuracy, test loss)` per completed round.
    pub history: Vec<(f64, f64)>,
}

/// Result of one client's local work in a round.
struct LocalUpdate {
    train_loss: f64,
    /// Score-only protocol upload, already serialized.
    wire: Option<[u8; ScoreReport::WIRE_BYTES]>,
}

/// Outcome of one score-only round.
#[derive(Debug, Clone)]
pub struct FedxRound {
    pub best_id: usize,
    pub best_score: f32,
    pub train_loss: f64,
    pub trace: RoundTrace,
}

/// One simulated deployment: server, clients and the byte ledger.
pub struct Federation<'d, S> {
    cfg: FederationConfig,
    data: &'d FederatedData<S>,
    pub clients: Vec<ClientState<S>>,
    pub server: ServerState<S>,
    pub ledger: CostLedger,
    server_rng: SimRng,
}

impl<'d, S: Scalar> Federation<'d, S> {
    pub fn new(
        cfg: FederationConfig,
        data: &'d FederatedData<S>,
        model: CostModel,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.partition.num_clients() != cfg.num_clients {
            return Err(Error::config(
                "num_clients",
                format!(
                    "partition has {} shards for {} clients",
                    data.partition.num_clients(),
                    cfg.num_clients
                ),
            ));
        }
        if data.train.dim() != cfg.layers[0].input_dim {
            return Err(Error::config(
                "model",
                format!(
                    "first layer expects {} features, data has {}",
                    cfg.layers[0].input_dim,
                    data.train.dim()
                ),
            ));
        }
        let global = Params::xavier(&cfg.layers, &mut rng::stream(cfg.seed, Stream::Init, 0))?;
        let clients = data
            .partition
            .assignments
            .iter()
            .enumerate()
            .map(|(id, shard)| {
                if shard.is_empty() {
                    return Err(Error::config(
                        "num_clients",
                        format!("client {id} has an empty shard"),
                    ));
                }
                let (train, holdout) = split_holdout(shard);
                Ok(ClientState {
                    client_id: id,
                    shard: shard.clone(),
                    train,
                    holdout,
                    rng: rng::stream(cfg.seed, Stream::Client, id as u64),
                    current_params: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ledger = CostLedger::new(
            model,
            global.model_bytes(),
            cfg.num_clients as u64,
            cfg.fraction,
            cfg.epsilon,
        );
        let server_rng = rng::stream(cfg.seed, Stream::Server, 0);
        Ok(Self {
            cfg,
            data,
            clients,
            server: ServerState {
                global_params: global,
                best_score: None,
                best_id: None,
                round: 0,
                history: Vec::new(),
            },
            ledger,
            server_rng,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    /// Runs `work` for the flagged clients, in parallel when enabled; results come back in id order.
    fn for_clients<T, F>(&mut self, active: &[bool], work: F) -> Result<Vec<(usize, T)>>
    where
        T: Send,
        F: Fn(&mut ClientState<S>) -> Result<T> + Sync + Send,
    {
        let run = |c: &mut ClientState<S>| -> Option<Result<(usize, T)>> {
            active[c.client_id].then(|| work(c).map(|t| (c.client_id, t)))
        };
        let results: Vec<Option<Result<(usize, T)>>> = if self.cfg.parallel {
            self.clients.par_iter_mut().map(run).collect()
        } else {
            self.clients.iter_mut().map(run).collect()
        };
        results.into_iter().flatten().collect()
    }

    /// Server side of the best-model fetch: sends the request and receives the weights.
    pub fn get_best_model(&mut self, best_id: Option<usize>) -> Result<Params<S>> {
        let id =
            best_id.ok_or_else(|| Error::Protocol("no best client has been assigned".into()))?;
        let client = self
            .clients
            .get(id)
            .ok_or_else(|| Error::Protocol(format!("best client {id} does not exist")))?;
        let params = client
            .current_params
            .clone()
            .ok_or_else(|| Error::Protocol(format!("client {id} holds no model this round")))?;
        self.ledger.charge_down(self.cfg.epsilon);
        self.ledger.charge_up(params.model_bytes());
        if !params.same_shape(&self.server.global_params) {
            return Err(Error::Protocol(format!(
                "client {id} returned parameters with a different shape table"
            )));
        }
        Ok(params)
    }

    fn finish_round(
        &mut self,
        round: usize,
        train_loss: f64,
        best: Option<(usize, f32)>,
        trace: RoundTrace,
        started: Instant,
        log: &mut (Vec<RoundRow>, Vec<RoundTrace>),
    ) -> Result<StopDecision> {
        let eval = evaluate(&self.server.global_params, &self.data.test)?;
        self.server.round = round;
        self.server.history.push((eval.accuracy, eval.loss));
        let entry = *self.ledger.entries.last().expect("round is open");
        log.0.push(RoundRow {
            round,
            train_loss,
            test_accuracy: eval.accuracy,
            test_loss: eval.loss,
            best_client_id: best.map(|(id, _)| id),
            best_score: best.map(|(_, s)| s),
            best_score_ever: self.server.best_score,
            up_bytes: entry.up_bytes,
            down_bytes: entry.down_bytes,
            global_digest: self.server.global_params.digest(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        log.1.push(trace);
        let accuracies: Vec<f64> = self.server.history.iter().map(|h| h.0).collect();
        Ok(check_stop(&accuracies, &self.cfg.stop))
    }

    /// FedAvg: sampled clients train; the server averages their full weights.
    pub fn run_fedavg(mut self) -> Result<RunReport> {
        let start = Instant::now();
        let mut log = (Vec::new(), Vec::new());
        let m = self.server.global_params.model_bytes();
        let mut stop_reason = StopReason::Budget;
        for round in 1..=self.cfg.stop.max_rounds {
            let started = Instant::now();
            let selected = select_clients(
                self.cfg.fraction,
                self.cfg.num_clients,
                &mut self.server_rng,
            );
            let mut active = vec![false; self.cfg.num_clients];
            for &id in &selected {
                active[id] = true;
            }
            self.ledger.open_round(round);
            self.ledger.charge_down(selected.len() as u64 * m);

            let global = self.server.global_params.clone();
            let data = self.data;
            let sgd = self.cfg.sgd;
            let trained = self.for_clients(&active, |c| {
                let out = train_epochs(&global, &data.train, &c.train, &sgd, &mut c.rng)?;
                c.current_params = Some(out.params);
                Ok(*out.epoch_losses.last().expect("at least one epoch"))
            })?;

            let mut updates = Vec::with_capacity(trained.len());
            let mut uploads = Vec::with_capacity(trained.len());
            for (id, _) in &trained {
                let client = &self.clients[*id];
                let params = client.current_params.as_ref().expect("trained this round");
                self.ledger.charge_up(params.model_bytes());
                uploads.push((*id, params.digest()));
                updates.push((*id, params, client.shard.len()));
            }
            let next = aggregate_weighted(&updates)?;
            let weight: usize = updates.iter().map(|u| u.2).sum();
            let train_loss = trained
                .iter()
                .map(|(id, l)| l * self.clients[*id].shard.len() as f64)
                .sum::<f64>()
                / weight as f64;
            self.server.global_params = next;

            let decision = self.finish_round(
                round,
                train_loss,
                None,
                RoundTrace {
                    uploads,
                    scores: Vec::new(),
                },
                started,
                &mut log,
            )?;
            if let StopDecision::Stop(reason) = decision {
                stop_reason = reason;
                break;
            }
        }
        Ok(self.into_report("fedavg", log.0, log.1, stop_reason, start))
    }

    /// One score-only round: broadcast, local refinement, score upload, best-model fetch.
    /// The ledger round must already be open.
    pub fn fedx_round(&mut self) -> Result<FedxRound> {
        let n = self.cfg.num_clients;
        let m = self.server.global_params.model_bytes();
        self.ledger.charge_down(n as u64 * m);

        let global = self.server.global_params.clone();
        let data = self.data;
        let (sgd, refiner, metric, bwo) =
            (self.cfg.sgd, self.cfg.refiner, self.cfg.score, self.cfg.bwo);
        let active = vec![true; n];
        let updates = self.for_clients(&active, |c| {
            local_refine(c, &global, data, sgd, refiner, metric, &bwo)
        })?;

        let mut reports = Vec::with_capacity(n);
        let mut train_loss = 0.0;
        for (id, update) in &updates {
            let wire = update
                .wire
                .ok_or_else(|| Error::Protocol(format!("client {id} sent no score")))?;
            self.ledger.charge_up(SCORE_BYTES);
            reports.push(ScoreReport::decode(&wire)?);
            train_loss += update.train_loss;
        }
        train_loss /= updates.len() as f64;

        let (best_id, best_score) = best_report(&reports, n)?;
        self.server.best_id = Some(best_id);
        self.server.best_score = Some(match self.server.best_score {
            Some(prev) if prev <= best_score => prev,
            _ => best_score,
        });
        let uploads = self
            .clients
            .iter()
            .filter_map(|c| c.current_params.as_ref().map(|p| (c.client_id, p.digest())))
            .collect();
        self.server.global_params = self.get_best_model(Some(best_id))?;
        Ok(FedxRound {
            best_id,
            best_score,
            train_loss,
            trace: RoundTrace {
                uploads,
                scores: reports
                    .iter()
                    .map(|r| (r.client_id as usize, r.score))
                    .collect(),
            },
        })
    }

    /// Score-only protocol: all clients refine and report a score; the best client's weights
    /// become the next global model.
    pub fn run_fedx(mut self, strategy: &str) -> Result<RunReport> {
        let start = Instant::now();
        let mut log = (Vec::new(), Vec::new());
        let mut stop_reason = StopReason::Budget;
        for round in 1..=self.cfg.stop.max_rounds {
            let started = Instant::now();
            self.ledger.open_round(round);
            let r = self.fedx_round()?;
            let decision = self.finish_round(
                round,
                r.train_loss,
                Some((r.best_id, r.best_score)),
                r.trace,
                started,
                &mut log,
            )?;
            if let StopDecision::Stop(reason) = decision {
                stop_reason = reason;
                break;
            }
        }
        Ok(self.into_report(strategy, log.0, log.1, stop_reason, start))
    }

    fn into_report(
        self,
        strategy: &str,
        rows: Vec<RoundRow>,
        trace: Vec<RoundTrace>,
        stop_reason: StopReason,
        start: Instant,
    ) -> RunReport {
        RunReport {
            strategy: strategy.to_string(),
            seed: self.cfg.seed,
            parameter_count: self.server.global_params.len(),
            model_bytes: self.server.global_params.model_bytes(),
            rows,
            stop_reason,
            ledger: self.ledger,
            trace,
            total_wall_ms: start.elapsed().as_secs_f64() * 1e3,
        }
    }
}

/// Argmin over the reports, lowest client id on ties; every client must have reported.
fn best_report(reports: &[ScoreReport], num_clients: usize) -> Result<(usize, f32)> {
    let mut seen = vec![false; num_clients];
    for r in reports {
        let id = r.client_id as usize;
        if id >= num_clients || seen[id] {
            return Err(Error::Protocol(format!(
                "unexpected report from client {id}"
            )));
        }
        seen[id] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Protocol(format!(
            "client {missing} did not report a score"
        )));
    }
    let mut sorted: Vec<&ScoreReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.client_id);
    let mut best = sorted[0];
    for r in &sorted[1..] {
        if r.score < best.score {
            best = r;
        }
    }
    Ok((best.client_id as usize, best.score))
}

fn holdout_score<S: Scalar>(
    params: &Params<S>,
    data: &Dataset<S>,
    holdout: &[usize],
    metric: ScoreMetric,
) -> Result<f64> {
    let eval = evaluate_rows(params, data, holdout)?;
    Ok(match metric {
        ScoreMetric::Loss => eval.loss,
        ScoreMetric::Accuracy => 1.0 - eval.accuracy,
    })
}

fn local_refine<S: Scalar>(
    client: &mut ClientState<S>,
    global: &Params<S>,
    data: &FederatedData<S>,
    sgd: SgdOptions,
    refiner: Refiner,
    metric: ScoreMetric,
    bwo: &BwoParams,
) -> Result<LocalUpdate> {
    let mut params = global.clone();
    let mut train_loss = None;
    if refiner.runs_sgd() {
        let out = train_epochs(&params, &data.train, &client.train, &sgd, &mut client.rng)?;
        train_loss = out.epoch_losses.last().copied();
        params = out.params;
    }
    let holdout = &client.holdout;
    let mut refined_loss = None;
    if refiner.runs_bwo() {
        let fitness = |p: &Params<S>| -> Result<S> {
            Ok(S::from_f64_lossy(
                evaluate_rows(p, &data.train, holdout)?.loss,
            ))
        };
        let out = client_bwo_refine(&params, fitness, bwo, &mut client.rng)?;
        refined_loss = Some(out.loss.as_f64());
        params = out.params;
    }
    let score = match (metric, refined_loss) {
        (ScoreMetric::Loss, Some(loss)) => loss,
        _ => holdout_score(&params, &data.train, holdout, metric)?,
    };
    client.current_params = Some(params);
    let report = ScoreReport {
        client_id: client.client_id as u32,
        score: score as f32,
    };
    Ok(LocalUpdate {
        train_loss: train_loss.unwrap_or(score),
        wire: Some(report.encode()),
    })
}

/// FedAvg over `data` with the given configuration.
pub fn run_fedavg<S: Scalar>(cfg: &FederationConfig, data: &FederatedData<S>) -> Result<RunReport> {
    Federation::new(cfg.clone(), data, CostModel::FedAvg)?.run_fedavg()
}

/// Score-only protocol; `cfg.refiner` selects the client-side local refiner.
pub fn run_fedx<S: Scalar>(
    cfg: &FederationConfig,
    data: &FederatedData<S>,
    strategy: &str,
) -> Result<RunReport> {
    Federation::new(cfg.clone(), data, CostModel::ScoreOnly)?.run_fedx(strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn full_fraction_selects_everyone() {
        assert_eq!(
            select_clients(1.0, 10, &mut seeded(1)),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn tiny_fraction_selects_one() {
        for seed in 0..20 {
            assert_eq!(select_clients(0.05, 10, &mut seeded(seed)).len(), 1);
        }
    }

    #[test]
    fn half_fraction_is_uniform() {
        let mut rng = seeded(99);
        let mut counts = [0usize; 10];
        let trials = 10_000;
        for _ in 0..trials {
            let ids = select_clients(0.5, 10, &mut rng);
            assert_eq!(ids.len(), 5);
            for id in ids {
                counts[id] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.5).abs() < 0.02, "{f}");
        }
    }

    fn vec_params(values: Vec<f32>) -> Params<f32> {
        let layers = [LayerSpec::new(
            1,
            values.len() / 2,
            crate::model::Activation::Identity,
        )];
        Params::from_values(&layers, values).unwrap()
    }

    #[test]
    fn single_update_is_unchanged() {
        let p = vec_params(vec![0.1, -0.3]);
        assert_eq!(aggregate_weighted(&[(4, &p, 17)]).unwrap(), p);
    }

    #[test]
    fn equal_sizes_give_plain_mean() {
        let a = vec_params(vec![0.0, 2.0]);
        let b = vec_params(vec![2.0, 0.0]);
        let out = aggregate_weighted(&[(0, &a, 5), (1, &b, 5)]).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_the_client() {
        let a = vec_params(vec![0.0, 2.0]);
        let b = vec_params(vec![2.0, 0.0, 1.0, 1.0]);
        let err = aggregate_weighted(&[(0, &a, 5), (3, &b, 5)]).unwrap_err();
        assert!(err.to_string().contains("client 3"), "{err}");
    }

    #[test]
    fn score_report_is_eight_bytes() {
        let r = ScoreReport {
            client_id: 7,
            score: 0.625,
        };
        let wire = r.encode();
        assert_eq!(wire.len(), 8);
        assert_eq!(&wire[..4], &[7, 0, 0, 0]);
        assert_eq!(&wire[4..], &0.625f32.to_le_bytes());
        assert_eq!(ScoreReport::decode(&wire).unwrap(), r);
        assert!(ScoreReport::decode(&wire[..7]).is_err());
    }

    #[test]
    fn threshold_stop() {
        let policy = StopPolicy::default();
        assert_eq!(
            check_stop(&[0.65, 0.71], &policy),
            StopDecision::Stop(StopReason::Threshold)
        );
    }

    #[test]
    fn plateau_stop() {
        let policy = StopPolicy {
            accuracy_threshold: 0.9,
            ..StopPolicy::default()
        };
        let h = [0.5, 0.5001, 0.4999, 0.5, 0.5001];
        assert_eq!(
            check_stop(&h, &policy),
            StopDecision::Stop(StopReason::Plateau)
        );
        assert_eq!(check_stop(&h[..4], &policy), StopDecision::Continue);
    }

    #[test]
    fn budget_stop() {
        let policy = StopPolicy::default();
        let h: Vec<f64> = (0..30).map(|i| 0.1 + 0.01 * i as f64).collect();
        assert_eq!(check_stop(&h[..29], &policy), StopDecision::Continue);
        assert_eq!(
            check_stop(&h, &policy),
            StopDecision::Stop(StopReason::Budget)
        );
    }

    #[test]
    fn threshold_of_one_is_disabled() {
        let policy = StopPolicy {
            accuracy_threshold: 1.0,
            min_delta: 0.0,
            ..StopPolicy::default()
        };
        assert_eq!(
            check_stop(&[1.0, 1.0, 1.0, 1.0, 1.0], &policy),
            StopDecision::Continue
        );
    }

    #[test]
    fn best_report_prefers_lowest_id_on_ties() {
        let reports = [
            ScoreReport {
                client_id: 2,
                score: 0.5,
            },
            ScoreReport {
                client_id: 0,
                score: 0.7,
            },
            ScoreReport {
                client_id: 1,
                score: 0.5,
            },
        ];
        assert_eq!(best_report(&reports, 3).unwrap(), (1, 0.5));
        assert!(best_report(&reports[..2], 3).is_err());
    }
}
