//! Synchronous multi-agent simulator.
//!
//! One [`Engine`] owns the iterates of every agent and advances them in
//! lockstep. Each DRSGT iteration `k` does, for every agent `i`:
//!
//! 1. `v_i = P_{X_i}(Y_i)`
//! 2. `X_i ← R_{X_i}(α P_{X_i}(Σ_j (Wᵗ)_ij X_j) − β v_i)`
//! 3. draw `F_i(X_i^{new})` with `N_{k+1}` samples
//! 4. `Y_i ← Σ_j (Wᵗ)_ij Y_j + F_i(X_i^{new}) − F_i(X_i^{old})`
//!
//! Step 4 keeps `Σ_i Y_i = Σ_i F_i` exactly, which is the main runtime check
//! on the tracker.
//!
//! The DRSGD baseline drops the tracker and steps along a single-sample
//! gradient with a diminishing step `β₀/(k+1)^γ`.

use std::ops::ControlFlow;
use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EngineFault, Error, Result};
use crate::network::NetworkSpec;
use crate::oracle::{GradientOracle, SampleCount, SampleSchedule};
use crate::scalar::Real;
use crate::stiefel::{
    default_region_radii, project_tangent, region_membership, retract_raw, RegionReport,
    StiefelPoint, TangentVector,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    /// Gradient tracking with variable sample sizes.
    Drsgt,
    /// Single-sample decentralized Riemannian SGD with step `beta0/(k+1)^decay`.
    Drsgd { beta0: f64, decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    /// Every agent starts from the same random point.
    Common,
    /// Each agent draws its own random point.
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgoConfig {
    pub alpha: f64,
    pub beta: f64,
    pub t: u32,
    pub schedule: SampleSchedule,
    pub algorithm: Algorithm,
    pub init: InitMode,
    pub seed: u64,
    /// Orthonormality audit period in iterations; 0 disables the audit.
    pub audit_every: u64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            t: 1,
            schedule: SampleSchedule::Polynomial(1.0),
            algorithm: Algorithm::Drsgt,
            init: InitMode::Common,
            seed: 0,
            audit_every: 50,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Parameter(format!("beta = {} must be positive", self.beta)));
        }
        if self.t == 0 {
            return Err(Error::Parameter("t must be at least 1".into()));
        }
        if let Algorithm::Drsgd { beta0, decay } = self.algorithm {
            if !(beta0 > 0.0 && beta0.is_finite()) {
                return Err(Error::Parameter(format!("beta0 = {beta0} must be positive")));
            }
            if !(decay >= 0.0 && decay.is_finite()) {
                return Err(Error::Parameter(format!("beta decay {decay} must be nonnegative")));
            }
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Debug)]
pub struct AgentState<T: Real> {
    /// `X_{i,k}`.
    pub x: StiefelPoint<T>,
    /// Tracker `Y_{i,k}`; ambient, not necessarily tangent at `x`.
    pub y: DMatrix<T>,
    /// `F_i(X_{i,k})`, the last averaged gradient sample.
    pub last_grad: TangentVector<T>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub iteration: u64,
    pub samples: SampleCount,
    /// Edge exchanges: each application of `W` to one quantity costs `|E|`.
    pub comm_rounds: u128,
}

/// What an [`Observer`] sees after each iteration (and once before the first).
#[derive(Clone, Copy, Debug)]
pub struct Snapshot<'a, T: Real> {
    pub agents: &'a [AgentState<T>],
    pub counters: &'a Counters,
}

impl<T: Real> Snapshot<'_, T> {
    pub fn points(&self) -> Vec<StiefelPoint<T>> {
        self.agents.iter().map(|a| a.x.clone()).collect()
    }
}

pub trait Observer<T: Real> {
    fn observe(&mut self, snapshot: Snapshot<'_, T>) -> Result<ControlFlow<()>>;
}

impl<T, F> Observer<T> for F
where
    T: Real,
    F: FnMut(Snapshot<'_, T>) -> Result<ControlFlow<()>>,
{
    fn observe(&mut self, snapshot: Snapshot<'_, T>) -> Result<ControlFlow<()>> {
        self(snapshot)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub samples: SampleCount,
    pub comm_rounds: u128,
    pub stopped_early: bool,
    /// `max_{k,i} ‖Y_{i,k}‖_F` over the observed iterations.
    pub max_tracker_norm: f64,
    /// `max_k ‖Ȳ_k − F̄_k‖_F` over the observed iterations.
    pub max_tracking_gap: f64,
}

pub struct Engine<T: Real, O: GradientOracle<T>> {
    oracle: O,
    net: Arc<NetworkSpec<T>>,
    config: AlgoConfig,
    agents: Vec<AgentState<T>>,
    rngs: Vec<ChaCha8Rng>,
    counters: Counters,
    initial_region: RegionReport<T>,
}

impl<T: Real, O: GradientOracle<T>> Engine<T, O> {
    /// Places the agents on the manifold and seeds the trackers with
    /// `Y_{i,0} = F_i(X_{i,0})` drawn with `N_0` samples.
    pub fn new(oracle: O, net: Arc<NetworkSpec<T>>, config: AlgoConfig) -> Result<Self> {
        config.validate()?;
        let n_agents = net.n_agents();
        if oracle.n_agents() != n_agents {
            return Err(Error::Dimension(format!(
                "oracle has {} agents but the network has {n_agents}",
                oracle.n_agents()
            )));
        }
        let diag = net.spectral_diagnostics(config.t);
        if !diag.meets_bound() {
            warn!(
                "t = {} is below the theoretical bound t_min = {} (sigma2 = {:.4})",
                config.t, diag.t_min, diag.sigma2
            );
        }
        if config.alpha > 1.0 {
            warn!("alpha = {} exceeds 1; the local-region analysis assumes alpha <= 1", config.alpha);
        }

        let (n, r) = oracle.problem().shape();
        let mut init_rng = agent_rng(config.seed, 0);
        let starts: Vec<StiefelPoint<T>> = match config.init {
            InitMode::Common => {
                let x0 = StiefelPoint::random(n, r, &mut init_rng)?;
                vec![x0; n_agents]
            }
            InitMode::Independent => (0..n_agents)
                .map(|_| StiefelPoint::random(n, r, &mut init_rng))
                .collect::<Result<_>>()?,
        };
        let mut rngs: Vec<ChaCha8Rng> = (0..n_agents)
            .map(|i| agent_rng(config.seed, i as u64 + 1))
            .collect();

        let mut counters = Counters::default();
        let mut agents = Vec::with_capacity(n_agents);
        for (i, x) in starts.into_iter().enumerate() {
            let state = match config.algorithm {
                Algorithm::Drsgt => {
                    let n0 = config.schedule.sample_size(0)?;
                    let f0 = oracle.draw(i, &x, n0, &mut rngs[i])?;
                    counters.samples = counters.samples.saturating_add(f0.samples_used);
                    AgentState {
                        x,
                        y: f0.value.matrix().clone(),
                        last_grad: f0.value,
                    }
                }
                Algorithm::Drsgd { .. } => AgentState {
                    y: DMatrix::zeros(n, r),
                    last_grad: TangentVector::zero(x.clone()),
                    x,
                },
            };
            agents.push(state);
        }

        let points: Vec<StiefelPoint<T>> = agents.iter().map(|a| a.x.clone()).collect();
        let (d1, d2) = default_region_radii(r);
        let initial_region = region_membership(&points, d1, d2)?;
        if !initial_region.in_region() {
            warn!(
                "initial iterates lie outside the local region (consensus^2 = {:.3e}, max deviation = {:.3e})",
                initial_region.consensus_sq, initial_region.max_deviation
            );
        }

        Ok(Self {
            oracle,
            net,
            config,
            agents,
            rngs,
            counters,
            initial_region,
        })
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.config
    }

    pub fn network(&self) -> &NetworkSpec<T> {
        &self.net
    }

    pub fn oracle(&self) -> &O {
        &self.oracle
    }

    pub fn agents(&self) -> &[AgentState<T>] {
        &self.agents
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn initial_region(&self) -> &RegionReport<T> {
        &self.initial_region
    }

    pub fn points(&self) -> Vec<StiefelPoint<T>> {
        self.agents.iter().map(|a| a.x.clone()).collect()
    }

    pub fn snapshot(&self) -> Snapshot<'_, T> {
        Snapshot {
            agents: &self.agents,
            counters: &self.counters,
        }
    }

    /// `‖(1/N) Σ Y_i − (1/N) Σ F_i(X_i)‖_F`.
    pub fn tracking_gap(&self) -> T {
        tracking_gap(&self.agents)
    }

    /// Advances every agent by one iteration.
    pub fn step(&mut self) -> Result<()> {
        match self.config.algorithm {
            Algorithm::Drsgt => self.drsgt_step()?,
            Algorithm::Drsgd { beta0, decay } => self.drsgd_step(beta0, decay)?,
        }
        let k = self.counters.iteration;
        if self.config.audit_every > 0 && k.is_multiple_of(self.config.audit_every) {
            self.audit()?;
        }
        Ok(())
    }

    fn drsgt_step(&mut self) -> Result<()> {
        let k = self.counters.iteration;
        let t = self.config.t;
        let alpha = T::lit(self.config.alpha);
        let beta = T::lit(self.config.beta);

        let xs: Vec<DMatrix<T>> = self.agents.iter().map(|a| a.x.matrix().clone()).collect();
        let mixed_x = self.net.mix(t, &xs)?;
        let mut new_x = Vec::with_capacity(self.agents.len());
        for (agent, mixed) in self.agents.iter().zip(&mixed_x) {
            let x = agent.x.matrix();
            let v = project_tangent(x, &agent.y);
            let direction = project_tangent(x, mixed) * alpha - v * beta;
            new_x.push(self.retract(x, &direction)?);
        }

        let batch = self.config.schedule.sample_size(k + 1)?;
        let mut new_grads = Vec::with_capacity(self.agents.len());
        for (i, x) in new_x.iter().enumerate() {
            let s = self.oracle.draw(i, x, batch, &mut self.rngs[i])?;
            self.counters.samples = self.counters.samples.saturating_add(s.samples_used);
            new_grads.push(s.value);
        }

        let ys: Vec<DMatrix<T>> = self.agents.iter().map(|a| a.y.clone()).collect();
        let mixed_y = self.net.mix(t, &ys)?;
        for (((agent, x), grad), mixed) in self
            .agents
            .iter_mut()
            .zip(new_x)
            .zip(new_grads)
            .zip(mixed_y)
        {
            agent.y = mixed + grad.matrix() - agent.last_grad.matrix();
            agent.x = x;
            agent.last_grad = grad;
        }

        self.counters.iteration += 1;
        self.counters.comm_rounds += 2 * t as u128 * self.net.n_edges() as u128;
        self.check_tracking()
    }

    fn check_tracking(&self) -> Result<()> {
        let scale = self
            .agents
            .iter()
            .map(|a| a.last_grad.norm().as_f64())
            .fold(1.0, f64::max);
        let gap = self.tracking_gap().as_f64();
        if !(gap <= T::TRACKING_TOL * scale) {
            return Err(self.fault(format!("tracker average drifted from the gradient average by {gap:e}")));
        }
        Ok(())
    }

    fn drsgd_step(&mut self, beta0: f64, decay: f64) -> Result<()> {
        let k = self.counters.iteration;
        let t = self.config.t;
        let alpha = T::lit(self.config.alpha);
        let step = T::lit(beta0 / ((k + 1) as f64).powf(decay));

        let xs: Vec<DMatrix<T>> = self.agents.iter().map(|a| a.x.matrix().clone()).collect();
        let mixed_x = self.net.mix(t, &xs)?;
        let mut updates = Vec::with_capacity(self.agents.len());
        for (i, (agent, mixed)) in self.agents.iter().zip(&mixed_x).enumerate() {
            let g = self.oracle.draw(i, &agent.x, 1, &mut self.rngs[i])?;
            self.counters.samples = self.counters.samples.saturating_add(g.samples_used);
            let x = agent.x.matrix();
            let direction = project_tangent(x, mixed) * alpha - g.value.matrix() * step;
            updates.push((self.retract(x, &direction)?, g.value));
        }
        for (agent, (x, g)) in self.agents.iter_mut().zip(updates) {
            agent.x = x;
            agent.last_grad = g;
        }

        self.counters.iteration += 1;
        self.counters.comm_rounds += t as u128 * self.net.n_edges() as u128;
        Ok(())
    }

    fn retract(&self, x: &DMatrix<T>, direction: &DMatrix<T>) -> Result<StiefelPoint<T>> {
        retract_raw(x, direction)
            .map(StiefelPoint::new_unchecked)
            .map_err(|e| self.fault(format!("retraction failed: {e}")))
    }

    /// Checks every iterate against the orthonormality tolerance.
    pub fn audit(&self) -> Result<()> {
        for (i, a) in self.agents.iter().enumerate() {
            let defect = a.x.orthonormality_defect().as_f64();
            if !(defect <= T::ORTHONORMALITY_TOL) {
                return Err(self.fault(format!(
                    "agent {i} drifted off the manifold: ‖XᵀX − I‖_F = {defect:e}"
                )));
            }
        }
        Ok(())
    }

    fn fault(&self, detail: String) -> Error {
        Error::Fault(Box::new(EngineFault {
            iteration: self.counters.iteration,
            detail,
            snapshot: self
                .agents
                .iter()
                .map(|a| a.x.matrix().transpose().iter().map(|v| v.as_f64()).collect())
                .collect(),
        }))
    }

    /// Runs up to `max_iters` iterations, calling `observer` once before the
    /// first step and after every step. The observer may stop the run early.
    pub fn run<B: Observer<T> + ?Sized>(
        &mut self,
        max_iters: u64,
        observer: &mut B,
    ) -> Result<RunSummary> {
        let mut max_tracker_norm = 0.0f64;
        let mut max_tracking_gap = 0.0f64;
        let mut record = |engine: &Self| {
            for a in &engine.agents {
                max_tracker_norm = max_tracker_norm.max(a.y.norm().as_f64());
            }
            if engine.config.algorithm == Algorithm::Drsgt {
                max_tracking_gap = max_tracking_gap.max(engine.tracking_gap().as_f64());
            }
        };
        record(self);
        let mut stopped_early = observer.observe(self.snapshot())?.is_break();
        while !stopped_early && self.counters.iteration < max_iters {
            self.step()?;
            record(self);
            stopped_early = observer.observe(self.snapshot())?.is_break();
        }
        Ok(RunSummary {
            iterations: self.counters.iteration,
            samples: self.counters.samples,
            comm_rounds: self.counters.comm_rounds,
            stopped_early,
            max_tracker_norm,
            max_tracking_gap,
        })
    }
}

pub fn tracking_gap<T: Real>(agents: &[AgentState<T>]) -> T {
    let Some(first) = agents.first() else {
        return T::zero();
    };
    let mut diff = DMatrix::<T>::zeros(first.y.nrows(), first.y.ncols());
    for a in agents {
        diff += &a.y;
        diff -= a.last_grad.matrix();
    }
    diff.norm() / T::from_usize(agents.len()).unwrap()
}

/// Independent deterministic stream per agent; stream 0 is the initializer.
pub fn agent_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
