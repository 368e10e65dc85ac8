//! Federated EM over a star: the server sees only per-example scalars.
//!
//! Each client owns one group of features. In the E-step every client
//! sends its block Q-term for every (example, component) pair, the server
//! adds them up and broadcasts the sums, and every client normalizes the
//! sums into its own copy of the responsibilities. The M-step is local.

use serde::Serialize;

use crate::batch::{BatchSchedule, BatchSpec};
use crate::data::FeatureArrangement;
use crate::error::{Error, Result};
use crate::gmm::local::BlockStats;
use crate::gmm::{EmOptions, FitTrace, GmmParams, Initialization, Responsibilities, StopSpec};
use crate::linalg::{Matrix, SymMatrix};
use crate::party::{assemble, Party, Progress};

/// Everything that crosses the network. Only scalar Q-terms and their sums
/// ever travel; no feature values or parameters do.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Client to server: `Q^n_mk` for the E-step's rows, row-major.
    QTerms { client: usize, values: Vec<f64> },
    /// Server to every client: `Σ_n Q^n_mk`.
    QSums { values: Vec<f64> },
}

impl Message {
    pub fn scalars(&self) -> usize {
        match self {
            Message::QTerms { values, .. } | Message::QSums { values } => values.len(),
        }
    }
}

/// Scalars exchanged in one step. Broadcasts count once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StepComm {
    pub up: usize,
    pub down: usize,
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct FlCommStats {
    /// The initial full E-step of incremental EM (zero otherwise).
    pub setup: StepComm,
    pub e_steps: Vec<StepComm>,
    pub m_steps: Vec<StepComm>,
}

/// View of one client's local state.
pub struct ClientState<'a> {
    pub client: usize,
    party: &'a Party,
}

impl ClientState<'_> {
    /// Columns of the arranged feature order this client observes.
    pub fn feature_range(&self) -> std::ops::Range<usize> {
        self.party.cols.clone()
    }

    pub fn local_data(&self) -> &Matrix {
        &self.party.data
    }

    pub fn weights(&self) -> &[f64] {
        &self.party.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.party.means
    }

    pub fn covariances(&self) -> &[SymMatrix] {
        &self.party.covs
    }

    pub fn gamma(&self) -> &Matrix {
        &self.party.gamma
    }

    pub fn stats(&self) -> Option<&BlockStats> {
        self.party.stats()
    }
}

/// Server plus clients, with the transcript of the last step.
pub struct Federation {
    clients: Vec<Party>,
    arrangement: FeatureArrangement,
    d: usize,
    transcript: Vec<Message>,
}

impl Federation {
    /// `x` is in arranged feature order; client `n` gets
    /// `arrangement.group_ranges[n]`. All clients start from the same
    /// `theta0` (in the simulation it is computed once and sliced, standing
    /// in for a shared seed).
    pub fn new(x: &Matrix, arrangement: &FeatureArrangement, theta0: &GmmParams) -> Result<Self> {
        if x.cols() != arrangement.layout.d() || theta0.layout() != &arrangement.layout {
            return Err(Error::PartitionMismatch(
                "data, arrangement and initial parameters disagree on the layout".into(),
            ));
        }
        let mut block = 0;
        let mut clients = Vec::with_capacity(arrangement.group_ranges.len());
        for (n, r) in arrangement.group_ranges.iter().enumerate() {
            let b = (!r.is_empty()).then(|| {
                block += 1;
                block - 1
            });
            clients.push(Party::new(x, r.clone(), theta0, b).map_err(|e| e.at_agent(n))?);
        }
        Ok(Federation {
            clients,
            arrangement: arrangement.clone(),
            d: x.cols(),
            transcript: Vec::new(),
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client(&self, n: usize) -> ClientState<'_> {
        ClientState {
            client: n,
            party: &self.clients[n],
        }
    }

    pub fn transcript(&self) -> &[Message] {
        &self.transcript
    }

    /// One E-step over `rows` (all examples when `None`). Returns the LL
    /// (the running estimate under incremental EM).
    pub fn e_step(&mut self, rows: Option<&[usize]>) -> Result<(f64, StepComm)> {
        let m = self.clients[0].m();
        let all: Vec<usize>;
        let rows_v = match rows {
            Some(r) => r,
            None => {
                all = (0..m).collect();
                &all
            }
        };
        self.transcript.clear();
        for (n, c) in self.clients.iter().enumerate() {
            self.transcript.push(Message::QTerms {
                client: n,
                values: c.q_terms(rows_v),
            });
        }
        let mut sums = vec![0.0; rows_v.len() * self.clients[0].k()];
        for msg in &self.transcript {
            if let Message::QTerms { values, .. } = msg {
                for (s, q) in sums.iter_mut().zip(values) {
                    *s += q;
                }
            }
        }
        let up = self.transcript.iter().map(Message::scalars).sum();
        let reply = Message::QSums { values: sums };
        let down = reply.scalars();
        let mut ll = 0.0;
        if let Message::QSums { values } = &reply {
            for c in self.clients.iter_mut() {
                ll = match rows {
                    None => c.absorb_all(values, self.d),
                    Some(r) => c.absorb_rows(r, values, self.d),
                };
            }
        }
        let messages = self.transcript.len() + 1;
        self.transcript.push(reply);
        Ok((ll, StepComm { up, down, messages }))
    }

    /// Switches every client to incremental EM from its current
    /// responsibilities.
    pub fn start_incremental(&mut self) {
        self.clients.iter_mut().for_each(Party::start_incremental);
    }

    /// Local M-step at every client; sends nothing.
    pub fn m_step(&mut self, opts: &EmOptions) -> Result<StepComm> {
        self.transcript.clear();
        for (n, c) in self.clients.iter_mut().enumerate() {
            c.m_step(opts).map_err(|e| e.at_agent(n))?;
        }
        Ok(StepComm::default())
    }

    /// Current parameters over the arranged layout, weights from client 0.
    pub fn params(&self) -> Result<GmmParams> {
        let parties: Vec<&Party> = self.clients.iter().collect();
        assemble(&parties, &self.arrangement.layout, self.clients[0].weights.clone())
    }

    pub fn responsibilities(&self) -> Responsibilities {
        self.clients[0].responsibilities()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlConfig {
    pub stop: StopSpec,
    pub opts: EmOptions,
    pub batch: BatchSpec,
}

#[derive(Debug, Clone)]
pub struct FlFit {
    /// Parameters over `arrangement.layout`, at which the last LL was taken.
    pub params: GmmParams,
    pub arrangement: FeatureArrangement,
    pub responsibilities: Responsibilities,
    pub trace: FitTrace,
    pub comm: FlCommStats,
}

/// Federated EM. `x` is in original feature order; the fit runs on the
/// arranged order `arrangement.order`.
pub fn fit_fl(
    x: &Matrix,
    arrangement: &FeatureArrangement,
    k: usize,
    init: &Initialization,
    cfg: &FlConfig,
) -> Result<FlFit> {
    cfg.stop.validate()?;
    let m = x.rows();
    let b = cfg.batch.resolve(m)?;
    let xp = x.select_columns(&arrangement.order);
    let theta0 = init.resolve(&xp, k, &arrangement.layout, &arrangement.order)?;
    let mut fed = Federation::new(&xp, arrangement, &theta0)?;
    let mut comm = FlCommStats::default();
    let mut progress = Progress::new(cfg.stop);
    let mut ll = Vec::new();

    let mut schedule = if b < m {
        let (_, c) = fed.e_step(None)?;
        comm.setup = c;
        fed.start_incremental();
        fed.m_step(&cfg.opts)?;
        Some(BatchSchedule::new(m, b, cfg.batch.seed)?)
    } else {
        None
    };

    let reason = loop {
        let (value, checkpoint, c) = match schedule.as_mut() {
            None => {
                let (v, c) = fed.e_step(None)?;
                (v, true, c)
            }
            Some(s) => {
                let (rows, epoch_end) = s.next_batch();
                let (v, c) = fed.e_step(Some(&rows))?;
                (v, epoch_end, c)
            }
        };
        comm.e_steps.push(c);
        ll.push(value);
        if let Some(reason) = progress.record(&[value], checkpoint) {
            break reason;
        }
        comm.m_steps.push(fed.m_step(&cfg.opts)?);
    };

    Ok(FlFit {
        params: fed.params()?,
        arrangement: arrangement.clone(),
        responsibilities: fed.responsibilities(),
        trace: FitTrace {
            ll,
            converged: reason == crate::gmm::StopReason::LlPlateau,
            stop_reason: reason,
        },
        comm,
    })
}
