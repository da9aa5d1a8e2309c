//! In-process protocol simulator with recorded channels.
//!
//! Parties exchange byte payloads in numbered rounds:
//!
//! * round 0: every client sends one message to every aggregator,
//! * round 1: every aggregator sends its release to the combiner (or, for
//!   selection, its noisy totals to the evaluator),
//! * round 2: the evaluator sends the winning index to the combiner.
//!
//! The combiner is public: whatever reaches it is a public output. The
//! evaluator stands in for a secure computation and is trusted. Channels
//! between any other pair are private, so an adversary sees a message only
//! if it controls one of the endpoints.
//!
//! Every party draws randomness from its own ChaCha20 stream derived from
//! the master seed and its [`PartyId`], so a run is a pure function of
//! `(config, dataset, seed)` regardless of how work is scheduled.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::counting::{self, CountingQuery, Datum, NoisyAggregate};
use crate::error::{Error, Result};
use crate::field::{FieldModulus, FieldVector};
use crate::fss::{self, DpfKey, ReleasedHistogram};
use crate::noise::{self, NoiseSpec, PrivacyBudget, Rational};
use crate::par;
use crate::selection::{self, NoisyTotals};
use crate::sharing::{AdditiveSharer, Accumulator, ShareFrame, Sharer};
use crate::sketch::{self, CombinedSketch, ReleasedSketch, SketchParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Client,
    Aggregator,
    Evaluator,
    Combiner,
}

impl Role {
    fn code(self) -> u64 {
        match self {
            Role::Client => 1,
            Role::Aggregator => 2,
            Role::Evaluator => 3,
            Role::Combiner => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Role::Client => "client",
            Role::Aggregator => "aggregator",
            Role::Evaluator => "evaluator",
            Role::Combiner => "combiner",
        }
    }
}

/// A party. Clients and aggregators are numbered from 1; the evaluator and
/// combiner are unique and carry index 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PartyId {
    pub role: Role,
    pub index: u32,
}

impl PartyId {
    pub const EVALUATOR: PartyId = PartyId {
        role: Role::Evaluator,
        index: 0,
    };
    pub const COMBINER: PartyId = PartyId {
        role: Role::Combiner,
        index: 0,
    };

    pub fn client(i: usize) -> Self {
        PartyId {
            role: Role::Client,
            index: i as u32,
        }
    }

    pub fn aggregator(j: usize) -> Self {
        PartyId {
            role: Role::Aggregator,
            index: j as u32,
        }
    }

    fn is_client(self, i: usize) -> bool {
        self.role == Role::Client && self.index as usize == i
    }

    fn is_aggregator(self, j: usize) -> bool {
        self.role == Role::Aggregator && self.index as usize == j
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            Role::Client | Role::Aggregator => write!(f, "{}:{}", self.role.name(), self.index),
            Role::Evaluator | Role::Combiner => f.write_str(self.role.name()),
        }
    }
}

impl FromStr for PartyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown party {s:?}"));
        match s.split_once(':') {
            None if s == "evaluator" => Ok(PartyId::EVALUATOR),
            None if s == "combiner" => Ok(PartyId::COMBINER),
            None => Err(bad()),
            Some((role, idx)) => {
                let index: u32 = idx.parse().map_err(|_| bad())?;
                if index == 0 {
                    return Err(bad());
                }
                let role = match role {
                    "client" => Role::Client,
                    "aggregator" => Role::Aggregator,
                    _ => return Err(bad()),
                };
                Ok(PartyId { role, index })
            }
        }
    }
}

impl TryFrom<String> for PartyId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PartyId> for String {
    fn from(p: PartyId) -> String {
        p.to_string()
    }
}

/// The randomness stream owned by `party` under `seed`.
pub fn party_rng(seed: u64, party: PartyId) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(party.role.code() << 32 | party.index as u64);
    rng
}

mod hex_payload {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub round: u32,
    pub from: PartyId,
    pub to: PartyId,
    #[serde(rename = "payload_hex", with = "hex_payload")]
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    Count,
    Freq,
    Threshold,
    Sampled,
    Select,
}

impl ProtocolKind {
    /// Protocol byte carried in share frames.
    pub fn id(self) -> u8 {
        match self {
            ProtocolKind::Count => 1,
            ProtocolKind::Freq => 2,
            ProtocolKind::Threshold => 3,
            ProtocolKind::Sampled => 4,
            ProtocolKind::Select => 5,
        }
    }

    pub fn uses_dpf(self) -> bool {
        matches!(self, ProtocolKind::Threshold | ProtocolKind::Sampled)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Count => "count",
            ProtocolKind::Freq => "freq",
            ProtocolKind::Threshold => "threshold",
            ProtocolKind::Sampled => "sampled",
            ProtocolKind::Select => "select",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(ProtocolKind::Count),
            "freq" => Ok(ProtocolKind::Freq),
            "threshold" => Ok(ProtocolKind::Threshold),
            "sampled" => Ok(ProtocolKind::Sampled),
            "select" => Ok(ProtocolKind::Select),
            _ => Err(Error::Parse(format!("unknown protocol {s:?}"))),
        }
    }
}

/// Protocol-specific parameters. A `None` noise scale disables noise and
/// exists for correctness tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum ProtocolSpec {
    Count {
        query: CountingQuery,
        sigma: Option<Rational>,
    },
    Freq {
        sketch: SketchParams,
        sigma0: Option<Rational>,
        /// Elements whose frequency is published.
        points: Vec<u64>,
        /// Heavy-hitter threshold; candidates default to the whole domain.
        tau: Option<f64>,
        candidates: Option<Vec<u64>>,
    },
    Threshold {
        domain_bits: u32,
        sigma: Option<Rational>,
        thresholds: Vec<u64>,
    },
    Sampled {
        queries: Vec<CountingQuery>,
        sigma: Option<Rational>,
    },
    Select {
        queries: Vec<CountingQuery>,
        epsilon: Rational,
    },
}

impl ProtocolSpec {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            ProtocolSpec::Count { .. } => ProtocolKind::Count,
            ProtocolSpec::Freq { .. } => ProtocolKind::Freq,
            ProtocolSpec::Threshold { .. } => ProtocolKind::Threshold,
            ProtocolSpec::Sampled { .. } => ProtocolKind::Sampled,
            ProtocolSpec::Select { .. } => ProtocolKind::Select,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub m: usize,
    pub modulus: FieldModulus,
    pub delta: f64,
    /// Reject moduli that violate the wraparound margin.
    pub enforce_margin: bool,
    #[serde(flatten)]
    pub spec: ProtocolSpec,
}

impl RunConfig {
    pub fn new(m: usize, spec: ProtocolSpec) -> Self {
        RunConfig {
            m,
            modulus: FieldModulus::default(),
            delta: 1e-6,
            enforce_margin: true,
            spec,
        }
    }

    pub fn with_modulus(mut self, modulus: FieldModulus) -> Self {
        self.modulus = modulus;
        self
    }

    pub fn kind(&self) -> ProtocolKind {
        self.spec.kind()
    }

    /// Checks the configuration against a dataset of `n` records.
    pub fn validate(&self, dataset: &[Datum]) -> Result<()> {
        let n = dataset.len();
        if self.m == 0 {
            return Err(Error::NoAggregators);
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if n > u32::MAX as usize || self.m > u32::MAX as usize {
            return Err(Error::Config("too many parties".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidPrivacyParameter(format!("delta = {}", self.delta)));
        }
        if self.kind().uses_dpf() && self.m != 2 {
            return Err(Error::Config(format!(
                "the {} protocol needs exactly 2 aggregators, got {}",
                self.kind(),
                self.m
            )));
        }
        let sd = |s: &Option<Rational>| s.map_or(0.0, Rational::to_f64);
        let noise_scale = match &self.spec {
            ProtocolSpec::Count { sigma, .. } => sd(sigma),
            ProtocolSpec::Freq { sketch, sigma0, points, candidates, .. } => {
                for &x in dataset.iter().chain(points).chain(candidates.iter().flatten()) {
                    sketch.check_domain(x)?;
                }
                match sigma0 {
                    Some(s) => sketch.coordinate_sigma(*s)?.to_f64(),
                    None => 0.0,
                }
            }
            ProtocolSpec::Threshold { domain_bits, sigma, .. } => {
                if *domain_bits > fss::MAX_FULL_DEPTH {
                    return Err(Error::DomainTooLarge {
                        bits: *domain_bits,
                        what: "threshold queries",
                    });
                }
                for &x in dataset {
                    if x >> domain_bits != 0 {
                        return Err(Error::OutOfDomain {
                            value: x,
                            bits: *domain_bits,
                        });
                    }
                }
                sd(sigma)
            }
            ProtocolSpec::Sampled { queries, sigma } => {
                if queries.is_empty() {
                    return Err(Error::NoQueries);
                }
                if fss::sampled_depth(queries.len()) > fss::MAX_FULL_DEPTH {
                    return Err(Error::DomainTooLarge {
                        bits: fss::sampled_depth(queries.len()),
                        what: "sampled queries",
                    });
                }
                sd(sigma)
            }
            ProtocolSpec::Select { queries, epsilon } => {
                if queries.is_empty() {
                    return Err(Error::NoQueries);
                }
                NoiseSpec::laplace(epsilon.two_over()?).margin_scale()
            }
        };
        if self.enforce_margin {
            self.modulus.check_margin(n as u64, self.m, noise_scale)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub element: u64,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAnswer {
    pub threshold: u64,
    pub count: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEstimate {
    pub id: String,
    pub estimate: f64,
}

/// What the combiner publishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum PublicOutputs {
    Count {
        estimate: f64,
    },
    Freq {
        sketch: Vec<i64>,
        estimates: Vec<PointEstimate>,
        heavy_hitters: Option<Vec<PointEstimate>>,
    },
    Threshold {
        counts: Vec<ThresholdAnswer>,
    },
    Sampled {
        estimates: Vec<QueryEstimate>,
        sampling_std_bound: f64,
    },
    Select {
        selected_index: usize,
    },
}

/// Guarantee of one run, derived from a single honest aggregator's noise.
/// Fields that do not apply to a mechanism (or to a run without noise) are
/// `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub mechanism: String,
    pub sigma: Option<f64>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    /// `ε` after amplification by sampling one of `k` queries.
    pub amplified_epsilon: Option<f64>,
    /// Standard deviation of the noise in each published estimate.
    pub predicted_std: Option<f64>,
}

impl PrivacyReport {
    fn none() -> Self {
        PrivacyReport {
            mechanism: "none".into(),
            sigma: None,
            rho: None,
            epsilon: None,
            delta: None,
            amplified_epsilon: None,
            predicted_std: None,
        }
    }

    fn gaussian(sigma: f64, delta: f64, predicted_std: f64) -> Result<Self> {
        let b = PrivacyBudget::from_sigma(sigma, delta)?;
        Ok(PrivacyReport {
            mechanism: "discrete-gaussian".into(),
            sigma: Some(sigma),
            rho: Some(b.rho),
            epsilon: Some(b.epsilon),
            delta: Some(delta),
            amplified_epsilon: None,
            predicted_std: Some(predicted_std),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub protocol: ProtocolKind,
    pub m: usize,
    pub n: usize,
    pub messages: Vec<Message>,
    pub public_outputs: PublicOutputs,
}

impl Transcript {
    /// One JSON record `{round, from, to, payload_hex}` per line.
    pub fn to_jsonl(&self) -> String {
        messages_to_jsonl(&self.messages)
    }

    /// Messages addressed to `party` in `round`.
    pub fn inbox(&self, party: PartyId, round: u32) -> impl Iterator<Item = &Message> {
        inbox(&self.messages, party, round)
    }
}

fn inbox(messages: &[Message], party: PartyId, round: u32) -> impl Iterator<Item = &Message> {
    messages
        .iter()
        .filter(move |msg| msg.to == party && msg.round == round)
}

pub fn messages_to_jsonl(messages: &[Message]) -> String {
    let mut out = String::new();
    for msg in messages {
        out.push_str(&serde_json::to_string(msg).expect("messages serialize"));
        out.push('\n');
    }
    out
}

/// Parses a dump produced by [`Transcript::to_jsonl`]; blank lines are skipped.
pub fn messages_from_jsonl(text: &str) -> Result<Vec<Message>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub transcript: Transcript,
    pub privacy: PrivacyReport,
}

impl ProtocolRun {
    pub fn outputs(&self) -> &PublicOutputs {
        &self.transcript.public_outputs
    }
}

/// Runs a protocol with honest additive sharing.
pub fn run_protocol(config: &RunConfig, dataset: &[Datum], seed: u64) -> Result<ProtocolRun> {
    Simulator::default().run(config, dataset, seed)
}

/// The simulator, parameterised over the sharing scheme used by clients of
/// the share-based protocols.
pub struct Simulator<'a> {
    sharer: &'a dyn Sharer,
}

impl Default for Simulator<'static> {
    fn default() -> Self {
        Simulator {
            sharer: &AdditiveSharer,
        }
    }
}

impl<'a> Simulator<'a> {
    pub fn with_sharer(sharer: &'a dyn Sharer) -> Self {
        Simulator { sharer }
    }

    pub fn run(&self, config: &RunConfig, dataset: &[Datum], seed: u64) -> Result<ProtocolRun> {
        config.validate(dataset)?;
        let n = dataset.len();
        let kind = config.kind();

        let per_client = par::map_range(n, |i| self.client_round(config, i + 1, dataset[i], seed));
        let mut messages = Vec::with_capacity(n * config.m + config.m + 1);
        for batch in per_client {
            messages.extend(batch?);
        }

        let releases = par::map_range(config.m, |j| {
            aggregator_round(config, n, j + 1, &messages, seed)
        });
        for msg in releases {
            messages.push(msg?);
        }

        if kind == ProtocolKind::Select {
            let index = evaluator_round(config, &messages)?;
            messages.push(Message {
                round: 2,
                from: PartyId::EVALUATOR,
                to: PartyId::COMBINER,
                payload: (index as u32).to_le_bytes().to_vec(),
            });
        }

        let public_outputs = combiner_round(config, n, &messages)?;
        let privacy = privacy_report(config, n)?;
        Ok(ProtocolRun {
            transcript: Transcript {
                protocol: kind,
                m: config.m,
                n,
                messages,
                public_outputs,
            },
            privacy,
        })
    }

    fn share_frames(
        &self,
        config: &RunConfig,
        client: usize,
        secret: FieldVector,
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<Message>> {
        let bundle = self.sharer.share_vector(&secret, config.m, rng)?;
        Ok(bundle
            .into_shares()
            .into_iter()
            .enumerate()
            .map(|(j, values)| Message {
                round: 0,
                from: PartyId::client(client),
                to: PartyId::aggregator(j + 1),
                payload: ShareFrame {
                    protocol: config.kind().id(),
                    sender: client as u32,
                    values,
                }
                .encode(),
            })
            .collect())
    }

    fn client_round(
        &self,
        config: &RunConfig,
        client: usize,
        x: Datum,
        seed: u64,
    ) -> Result<Vec<Message>> {
        let mut rng = party_rng(seed, PartyId::client(client));
        let p = config.modulus;
        let keys = match &config.spec {
            ProtocolSpec::Count { query, .. } => {
                let secret = FieldVector::from_values(p, vec![query.eval(x)])?;
                return self.share_frames(config, client, secret, &mut rng);
            }
            ProtocolSpec::Freq { sketch, .. } => {
                let column = sketch::sketch_column(x, sketch)?;
                let secret = FieldVector::from_signed(p, &column);
                return self.share_frames(config, client, secret, &mut rng);
            }
            ProtocolSpec::Select { queries, .. } => {
                let answers = queries.iter().map(|q| q.eval(x)).collect();
                let secret = FieldVector::from_values(p, answers)?;
                return self.share_frames(config, client, secret, &mut rng);
            }
            ProtocolSpec::Threshold { domain_bits, .. } => {
                fss::threshold_client_encode(x, *domain_bits, p, &mut rng)?
            }
            ProtocolSpec::Sampled { queries, .. } => {
                fss::sampled_query_encode(x, queries, fss::LAMBDA, p, &mut rng)?
            }
        };
        Ok([keys.0, keys.1]
            .iter()
            .enumerate()
            .map(|(j, key)| Message {
                round: 0,
                from: PartyId::client(client),
                to: PartyId::aggregator(j + 1),
                payload: key.to_bytes(),
            })
            .collect())
    }
}

fn client_of(msg: &Message, n: usize) -> Result<usize> {
    if msg.from.role != Role::Client || msg.from.index == 0 || msg.from.index as usize > n {
        return Err(Error::Malformed(format!("unexpected sender {}", msg.from)));
    }
    Ok(msg.from.index as usize)
}

fn decode_frame(msg: &Message, config: &RunConfig) -> Result<ShareFrame> {
    let frame = ShareFrame::decode(&msg.payload, config.modulus)?;
    if frame.protocol != config.kind().id() || frame.sender != msg.from.index {
        return Err(Error::Malformed(format!(
            "frame from {} carries the wrong header",
            msg.from
        )));
    }
    Ok(frame)
}

fn release_message(config: &RunConfig, j: usize, to: PartyId, values: FieldVector) -> Message {
    Message {
        round: 1,
        from: PartyId::aggregator(j),
        to,
        payload: ShareFrame {
            protocol: config.kind().id(),
            sender: j as u32,
            values,
        }
        .encode(),
    }
}

fn sum_frames(config: &RunConfig, n: usize, j: usize, messages: &[Message], len: usize) -> Result<FieldVector> {
    let mut acc = Accumulator::new(config.modulus, n, len);
    for msg in inbox(messages, PartyId::aggregator(j), 0) {
        let client = client_of(msg, n)?;
        acc.absorb(client - 1, &decode_frame(msg, config)?.values)?;
    }
    acc.finish()
}

fn aggregator_round(
    config: &RunConfig,
    n: usize,
    j: usize,
    messages: &[Message],
    seed: u64,
) -> Result<Message> {
    let mut rng = party_rng(seed, PartyId::aggregator(j));
    let me = PartyId::aggregator(j);
    match &config.spec {
        ProtocolSpec::Count { sigma, .. } => {
            let shares = inbox(messages, me, 0)
                .map(|msg| {
                    let frame = decode_frame(msg, config)?;
                    let v = frame.values.get(0).filter(|_| frame.values.len() == 1);
                    let v = v.ok_or(Error::LengthMismatch {
                        expected: 1,
                        found: frame.values.len(),
                    })?;
                    Ok((client_of(msg, n)? - 1, v))
                })
                .collect::<Result<Vec<_>>>()?;
            let v = counting::aggregator_accumulate(&shares, n, config.modulus)?;
            let out = counting::aggregator_release(j - 1, v, *sigma, &mut rng);
            let values = FieldVector::from_elements(&[out.value])?;
            Ok(release_message(config, j, PartyId::COMBINER, values))
        }
        ProtocolSpec::Freq { sketch, sigma0, .. } => {
            let sum = sum_frames(config, n, j, messages, sketch.ell())?;
            let sigma = sigma0.map(|s| sketch.coordinate_sigma(s)).transpose()?;
            let out = sketch::aggregator_release_sketch(j - 1, sum, sigma, &mut rng);
            Ok(release_message(config, j, PartyId::COMBINER, out.values))
        }
        ProtocolSpec::Select { queries, epsilon } => {
            let k = queries.len();
            let shares = inbox(messages, me, 0)
                .map(|msg| Ok((client_of(msg, n)? - 1, decode_frame(msg, config)?.values)))
                .collect::<Result<Vec<_>>>()?;
            let noise = NoiseSpec::laplace(epsilon.two_over()?);
            let totals = selection::aggregator_noisy_totals(
                j - 1,
                &shares,
                n,
                k,
                config.modulus,
                Some(noise),
                &mut rng,
            )?;
            Ok(release_message(config, j, PartyId::EVALUATOR, totals.values))
        }
        ProtocolSpec::Threshold { sigma, .. } | ProtocolSpec::Sampled { sigma, .. } => {
            let mut seen = vec![false; n];
            let keys = inbox(messages, me, 0)
                .map(|msg| {
                    let c = client_of(msg, n)?;
                    if std::mem::replace(&mut seen[c - 1], true) {
                        return Err(Error::DuplicateClient(c - 1));
                    }
                    let key = DpfKey::from_bytes(&msg.payload, config.modulus)?;
                    if key.party() as usize != j - 1 {
                        return Err(Error::Malformed(format!("key for the wrong party from {}", msg.from)));
                    }
                    Ok(key)
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(c) = seen.iter().position(|s| !s) {
                return Err(Error::MissingClient(c));
            }
            let len = match &config.spec {
                ProtocolSpec::Threshold { domain_bits, .. } => 1usize << domain_bits,
                ProtocolSpec::Sampled { queries, .. } => queries.len(),
                _ => unreachable!(),
            };
            if keys.iter().any(|k| k.depth() as usize >= usize::BITS as usize || 1usize << k.depth() < len) {
                return Err(Error::Malformed("key depth does not cover the domain".into()));
            }
            let sum = fss::aggregate_keys(&keys, len, config.modulus)?;
            let out = fss::release_histogram(j - 1, sum, *sigma, &mut rng);
            Ok(release_message(config, j, PartyId::COMBINER, out.values))
        }
    }
}

/// Releases addressed to `to` in round 1, one per aggregator, as 0-based
/// (aggregator, values) pairs.
fn collect_releases(config: &RunConfig, messages: &[Message], to: PartyId) -> Result<Vec<(usize, FieldVector)>> {
    inbox(messages, to, 1)
        .map(|msg| {
            if msg.from.role != Role::Aggregator
                || msg.from.index == 0
                || msg.from.index as usize > config.m
            {
                return Err(Error::Malformed(format!("unexpected sender {}", msg.from)));
            }
            Ok((msg.from.index as usize - 1, decode_frame(msg, config)?.values))
        })
        .collect()
}

fn evaluator_round(config: &RunConfig, messages: &[Message]) -> Result<usize> {
    let totals: Vec<NoisyTotals> = collect_releases(config, messages, PartyId::EVALUATOR)?
        .into_iter()
        .map(|(aggregator, values)| NoisyTotals { aggregator, values })
        .collect();
    selection::ideal_argmax(&totals, config.m)
}

fn combiner_round(config: &RunConfig, n: usize, messages: &[Message]) -> Result<PublicOutputs> {
    let releases = || collect_releases(config, messages, PartyId::COMBINER);
    let histograms = || -> Result<Vec<ReleasedHistogram>> {
        Ok(releases()?
            .into_iter()
            .map(|(aggregator, values)| ReleasedHistogram { aggregator, values })
            .collect())
    };
    Ok(match &config.spec {
        ProtocolSpec::Count { .. } => {
            let aggregates = releases()?
                .into_iter()
                .map(|(aggregator, values)| {
                    let value = values.get(0).ok_or(Error::EmptyVector)?;
                    Ok(NoisyAggregate { aggregator, value })
                })
                .collect::<Result<Vec<_>>>()?;
            PublicOutputs::Count {
                estimate: counting::combine(&aggregates, config.m, n, config.modulus)?,
            }
        }
        ProtocolSpec::Freq {
            sketch,
            points,
            tau,
            candidates,
            ..
        } => {
            let released: Vec<ReleasedSketch> = releases()?
                .into_iter()
                .map(|(aggregator, values)| ReleasedSketch { aggregator, values })
                .collect();
            let combined = CombinedSketch::combine(&released, config.m, sketch, n)?;
            let estimates = points
                .iter()
                .map(|&y| {
                    Ok(PointEstimate {
                        element: y,
                        frequency: combined.estimate(y, sketch)?,
                    })
                })
                .collect::<Result<_>>()?;
            let heavy_hitters = tau
                .map(|t| sketch::heavy_hitters(&combined, candidates.as_deref(), t, sketch))
                .transpose()?
                .map(|hits| {
                    hits.into_iter()
                        .map(|(element, frequency)| PointEstimate { element, frequency })
                        .collect()
                });
            PublicOutputs::Freq {
                sketch: combined.coords().to_vec(),
                estimates,
                heavy_hitters,
            }
        }
        ProtocolSpec::Threshold { thresholds, .. } => {
            let counts = fss::threshold_combine(&histograms()?)?;
            PublicOutputs::Threshold {
                counts: thresholds
                    .iter()
                    .map(|&t| ThresholdAnswer {
                        threshold: t,
                        count: counts.count_le(t),
                    })
                    .collect(),
            }
        }
        ProtocolSpec::Sampled { queries, .. } => {
            let est = fss::sampled_query_combine(&histograms()?, n, queries.len())?;
            PublicOutputs::Sampled {
                estimates: queries
                    .iter()
                    .zip(est.estimates)
                    .map(|(q, estimate)| QueryEstimate {
                        id: q.id.clone(),
                        estimate,
                    })
                    .collect(),
                sampling_std_bound: est.sampling_std_bound,
            }
        }
        ProtocolSpec::Select { queries, .. } => {
            let mut outs = inbox(messages, PartyId::COMBINER, 2);
            let msg = outs
                .next()
                .ok_or_else(|| Error::MissingRelease("evaluator".into()))?;
            if outs.next().is_some() || msg.from != PartyId::EVALUATOR || msg.payload.len() != 4 {
                return Err(Error::Malformed("evaluator output must be one 4-byte index".into()));
            }
            let index = u32::from_le_bytes(msg.payload[..].try_into().expect("4 bytes")) as usize;
            if index >= queries.len() {
                return Err(Error::Malformed(format!("selected index {index} out of range")));
            }
            PublicOutputs::Select {
                selected_index: index,
            }
        }
    })
}

/// Privacy accounting for a run over `n` records.
pub fn privacy_report(config: &RunConfig, n: usize) -> Result<PrivacyReport> {
    let m = config.m as f64;
    let n_f = n as f64;
    match &config.spec {
        ProtocolSpec::Count { sigma: Some(s), .. } => {
            let s = s.to_f64();
            PrivacyReport::gaussian(s, config.delta, counting::predicted_std(config.m, s, n))
        }
        ProtocolSpec::Freq {
            sigma0: Some(s), ..
        } => {
            // ‖φ(x)‖₂ = √ℓ and each coordinate carries √ℓ σ0, so the
            // guarantee is that of σ0 at sensitivity 1.
            let s = s.to_f64();
            PrivacyReport::gaussian(s, config.delta, m.sqrt() * s / n_f)
        }
        ProtocolSpec::Threshold { sigma: Some(s), .. } => {
            let s = s.to_f64();
            PrivacyReport::gaussian(s, config.delta, m.sqrt() * s)
        }
        ProtocolSpec::Sampled {
            sigma: Some(s),
            queries,
        } => {
            let k = queries.len();
            let s = s.to_f64();
            let mut r = PrivacyReport::gaussian(s, config.delta, m.sqrt() * s * k as f64 / n_f)?;
            r.amplified_epsilon = Some(noise::amplify_by_sampling(r.epsilon.expect("set"), k)?);
            Ok(r)
        }
        ProtocolSpec::Select { epsilon, .. } => Ok(PrivacyReport {
            mechanism: "discrete-laplace-report-noisy-max".into(),
            sigma: None,
            rho: None,
            epsilon: Some(epsilon.to_f64()),
            delta: Some(0.0),
            amplified_epsilon: None,
            predicted_std: Some(NoiseSpec::laplace(epsilon.two_over()?).std_dev() * m.sqrt()),
        }),
        _ => Ok(PrivacyReport::none()),
    }
}

/// What a coalition of every aggregator but `honest_aggregator` and every
/// client but `protected_client` sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversaryView {
    pub honest_aggregator: usize,
    pub protected_client: usize,
    /// Private-channel messages with a corrupted aggregator at either end.
    pub observed: Vec<Message>,
    /// Messages corrupted clients sent to the honest aggregator; the
    /// adversary authored these itself.
    pub own: Vec<Message>,
    /// Everything addressed to the combiner.
    pub public: Vec<Message>,
}

impl AdversaryView {
    pub fn len(&self) -> usize {
        self.observed.len() + self.own.len() + self.public.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, msg: &Message) -> bool {
        self.observed.contains(msg) || self.own.contains(msg) || self.public.contains(msg)
    }
}

pub fn adversary_view(t: &Transcript, honest_aggregator: usize, protected_client: usize) -> Result<AdversaryView> {
    adversary_view_of(&t.messages, t.m, t.n, honest_aggregator, protected_client)
}

/// Splits a message log into the adversary's view. Parties are 1-based.
pub fn adversary_view_of(
    messages: &[Message],
    m: usize,
    n: usize,
    honest_aggregator: usize,
    protected_client: usize,
) -> Result<AdversaryView> {
    if honest_aggregator == 0 || honest_aggregator > m {
        return Err(Error::PartyOutOfRange(format!("aggregator {honest_aggregator} with m = {m}")));
    }
    if protected_client == 0 || protected_client > n {
        return Err(Error::PartyOutOfRange(format!("client {protected_client} with n = {n}")));
    }
    let corrupt_agg = |p: PartyId| p.role == Role::Aggregator && !p.is_aggregator(honest_aggregator);
    let corrupt_client = |p: PartyId| p.role == Role::Client && !p.is_client(protected_client);
    let mut view = AdversaryView {
        honest_aggregator,
        protected_client,
        observed: Vec::new(),
        own: Vec::new(),
        public: Vec::new(),
    };
    for msg in messages {
        if msg.to == PartyId::COMBINER || msg.from == PartyId::COMBINER {
            view.public.push(msg.clone());
        } else if corrupt_agg(msg.from) || corrupt_agg(msg.to) {
            view.observed.push(msg.clone());
        } else if corrupt_client(msg.from) {
            view.own.push(msg.clone());
        }
    }
    Ok(view)
}

/// Largest party indices seen in a message log, as `(m, n)`.
pub fn infer_party_counts(messages: &[Message]) -> (usize, usize) {
    let max_of = |role: Role| {
        messages
            .iter()
            .flat_map(|msg| [msg.from, msg.to])
            .filter(|p| p.role == role)
            .map(|p| p.index as usize)
            .max()
            .unwrap_or(0)
    };
    (max_of(Role::Aggregator), max_of(Role::Client))
}

/// Significance level of the view tests.
pub const VIEW_TEST_ALPHA: f64 = 0.001;

/// Histogram cells with fewer hits than this in either run are left out of
/// the output log-ratio check.
pub const MIN_RATIO_CELL: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCheck {
    /// Largest `|ln P(x_i) - ln P(x_i')|` allowed by the noise law.
    pub analytic_bound: f64,
    /// Largest empirical `|ln c - ln c'| - slack` over well-populated cells.
    pub worst_excess: f64,
    pub cells_checked: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewTestReport {
    pub trials: usize,
    pub share_statistic: f64,
    pub share_dof: usize,
    pub share_p_value: f64,
    pub share_pass: bool,
    /// Absent when the honest aggregator adds no noise.
    pub output: Option<RatioCheck>,
    pub pass: bool,
}

/// Two-sample chi-square statistic, degrees of freedom and upper-tail
/// p-value for two histograms over the same cells.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let (ra, rb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let (ka, kb) = ((rb / ra).sqrt(), (ra / rb).sqrt());
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y > 0 {
            let d = ka * x as f64 - kb * y as f64;
            stat += d * d / (x + y) as f64;
            cells += 1;
        }
    }
    let dof = cells.saturating_sub(1);
    if dof == 0 {
        return (stat, 0, 1.0);
    }
    let p = ChiSquared::new(dof as f64).expect("positive dof").sf(stat);
    (stat, dof, p)
}

/// Unnormalised pmf of a discrete Gaussian reduced mod `p`, at residue `r`.
pub fn wrapped_gaussian_weight(r: i64, p: i64, sigma: f64) -> f64 {
    let span = (40.0 * sigma / p as f64).ceil() as i64 + 1;
    (-span..=span)
        .map(|t| {
            let z = (r + t * p) as f64;
            (-z * z / (2.0 * sigma * sigma)).exp()
        })
        .sum()
}

/// Empirical check that changing client `protected_client` between the two
/// datasets does not change the adversary's view beyond what the honest
/// aggregator's noise allows. Supports the count protocol at small
/// parameters (`p ≤ 31`, `n ≤ 8`).
///
/// Trial `t` runs the first dataset with seed `seed + 2t` and the second
/// with `seed + 2t + 1`. Two checks follow:
///
/// * the protected client's shares seen by corrupted aggregators must have
///   the same law under both datasets (two-sample chi-square);
/// * from the view, the adversary can strip everything but
///   `q(x_i) + η_j mod p` out of the honest release; the log-ratio of the
///   two empirical pmfs of that residue must stay within the wrapped
///   discrete Gaussian bound plus a `4√(1/c + 1/c')` sampling slack.
pub fn view_distribution_test(
    sharer: &dyn Sharer,
    config: &RunConfig,
    datasets: (&[Datum], &[Datum]),
    honest_aggregator: usize,
    protected_client: usize,
    trials: usize,
    seed: u64,
) -> Result<ViewTestReport> {
    let (first, second) = datasets;
    let ProtocolSpec::Count { query, sigma } = &config.spec else {
        return Err(Error::Config("the view test supports the count protocol".into()));
    };
    let (p, m, n) = (config.modulus.value(), config.m, first.len());
    if p > 31 || n > 8 {
        return Err(Error::Config(format!(
            "view test needs p ≤ 31 and n ≤ 8, got p = {p}, n = {n}"
        )));
    }
    if second.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: second.len(),
        });
    }
    if protected_client == 0 || protected_client > n {
        return Err(Error::PartyOutOfRange(format!("client {protected_client} with n = {n}")));
    }
    if first
        .iter()
        .zip(second)
        .enumerate()
        .any(|(i, (a, b))| i + 1 != protected_client && a != b)
    {
        return Err(Error::Config("datasets must differ only at the protected client".into()));
    }
    let cells = (p as usize).pow((m - 1) as u32);
    if trials == 0 || cells > trials / 5 {
        return Err(Error::Config(format!(
            "{trials} trials are too few for {cells} share cells"
        )));
    }
    let sim = Simulator::with_sharer(sharer);
    let observe = |data: &[Datum], s: u64| -> Result<(usize, u64)> {
        let run = sim.run(config, data, s)?;
        let view = adversary_view(&run.transcript, honest_aggregator, protected_client)?;
        residual_from_view(config, &view, n)
    };
    let samples = par::map_range(trials, |t| -> Result<_> {
        let base = seed.wrapping_add(2 * t as u64);
        Ok((observe(first, base)?, observe(second, base.wrapping_add(1))?))
    });
    let mut share_hist = [vec![0u64; cells], vec![0u64; cells]];
    let mut residual_hist = [vec![0u64; p as usize], vec![0u64; p as usize]];
    for s in samples {
        let (a, b) = s?;
        for (d, (cell, residual)) in [a, b].into_iter().enumerate() {
            share_hist[d][cell] += 1;
            residual_hist[d][residual as usize] += 1;
        }
    }
    let (share_statistic, share_dof, share_p_value) =
        two_sample_chi_square(&share_hist[0], &share_hist[1]);
    let share_pass = share_p_value >= VIEW_TEST_ALPHA;

    let output = sigma.map(|s| {
        let sigma = s.to_f64();
        let (a, b) = (
            query.eval(first[protected_client - 1]) as i64,
            query.eval(second[protected_client - 1]) as i64,
        );
        let p = p as i64;
        let log_w = |r: i64| wrapped_gaussian_weight(r, p, sigma).ln();
        let analytic_bound = (0..p)
            .map(|r| (log_w(r - a) - log_w(r - b)).abs())
            .fold(0.0, f64::max);
        let mut worst_excess = f64::NEG_INFINITY;
        let mut cells_checked = 0;
        for (&c, &d) in residual_hist[0].iter().zip(&residual_hist[1]) {
            if c < MIN_RATIO_CELL || d < MIN_RATIO_CELL {
                continue;
            }
            let (c, d) = (c as f64, d as f64);
            let slack = 4.0 * (1.0 / c + 1.0 / d).sqrt();
            worst_excess = worst_excess.max((c.ln() - d.ln()).abs() - analytic_bound - slack);
            cells_checked += 1;
        }
        RatioCheck {
            analytic_bound,
            worst_excess,
            cells_checked,
            pass: cells_checked > 0 && worst_excess <= 0.0,
        }
    });
    let pass = share_pass && output.as_ref().is_none_or(|o| o.pass);
    Ok(ViewTestReport {
        trials,
        share_statistic,
        share_dof,
        share_p_value,
        share_pass,
        output,
        pass,
    })
}

/// From a count-protocol view: the protected client's shares to corrupted
/// aggregators as one histogram cell, and the residue
/// `V_j - Σ_{k≠i} s_{k,j} + Σ_{l≠j} s_{i,l} = q(x_i) + η_j (mod p)`.
fn residual_from_view(config: &RunConfig, view: &AdversaryView, n: usize) -> Result<(usize, u64)> {
    let p = config.modulus;
    let i = view.protected_client;
    let scalar = |msg: &Message| -> Result<u64> {
        let frame = decode_frame(msg, config)?;
        frame.values.values().first().copied().ok_or(Error::EmptyVector)
    };
    let mut cell = 0usize;
    let mut residual = 0u64;
    for msg in &view.observed {
        if msg.round == 0 && msg.from.is_client(i) {
            let v = scalar(msg)?;
            cell = cell * p.value() as usize + v as usize;
            residual = p.add_raw(residual, v);
        }
    }
    let mut own_clients = 0;
    for msg in &view.own {
        residual = p.sub_raw(residual, scalar(msg)?);
        own_clients += 1;
    }
    let release = view
        .public
        .iter()
        .find(|msg| msg.from.is_aggregator(view.honest_aggregator))
        .ok_or_else(|| Error::MissingRelease(format!("aggregator {}", view.honest_aggregator)))?;
    residual = p.add_raw(residual, scalar(release)?);
    if own_clients != n - 1 {
        return Err(Error::Malformed("view lacks the coalition's own shares".into()));
    }
    Ok((cell, residual))
}
