//! Training loops: the ECC ensemble (Algorithm A1) and the single-agent CDRL
//! baseline, which is Algorithm A1 with each agent bootstrapping from its own
//! target network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{backup, average_joint_action, EccConfig, EnsembleTargetSnapshot, ReplayBuffer};
use crate::approx::{ApproximatorParams, Dims, TRAINING_KL_SMOOTHING};
use crate::categorical::{Categorical, Support};
use crate::envs::{one_hot, EnvInstance, EnvSpec, Observation};
use crate::error::{Error, Result};
use crate::mdp::argmax;
use crate::schedule::{derive_seed, StreamPurpose};
use crate::tabular::Transition;

/// Seeds of one agent's private RNG streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentStreams {
    pub init: u64,
    pub env: u64,
    pub explore: u64,
    pub replay: u64,
}

impl AgentStreams {
    /// Streams of agent `index` under `master`. Agent `i` of an ensemble and
    /// baseline agent `i` with the same master seed get the same streams.
    pub fn derive(master: u64, index: usize) -> Self {
        let i = index as u64;
        Self {
            init: derive_seed(master, StreamPurpose::Init, i),
            env: derive_seed(master, StreamPurpose::Environment, i),
            explore: derive_seed(master, StreamPurpose::Exploration, i),
            replay: derive_seed(master, StreamPurpose::Replay, i),
        }
    }
}

/// Bootstrap distribution `η(x′, a*)` for every state, plus the backup rule.
/// Built once per clone, so targets cannot drift between clones.
#[derive(Debug, Clone)]
struct TargetTable {
    support: Support,
    gamma: f64,
    next: Vec<Categorical>,
}

impl TargetTable {
    fn build(
        n_states: usize,
        support: Support,
        gamma: f64,
        greedy: impl Fn(&[f64]) -> Result<Categorical>,
    ) -> Result<Self> {
        let next = (0..n_states)
            .map(|x| greedy(&one_hot(x, n_states)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { support, gamma, next })
    }

    fn for_snapshot(snapshot: &EnsembleTargetSnapshot, n_states: usize, gamma: f64) -> Result<Self> {
        Self::build(n_states, *snapshot.support(), gamma, |f| Ok(snapshot.greedy(f)?.1))
    }

    /// Algorithm 1's own-network target: `a* = argmax Q_θ⁻(x′, ·)`.
    fn for_params(params: &ApproximatorParams, n_states: usize, gamma: f64) -> Result<Self> {
        Self::build(n_states, *params.support(), gamma, |f| {
            let mut dists = params.forward(f)?;
            let q: Vec<f64> = dists.iter().map(Categorical::mean).collect();
            Ok(dists.swap_remove(argmax(&q)))
        })
    }

    fn target(&self, t: &Transition) -> Categorical {
        backup(&self.support, &self.next[t.x_next], t, self.gamma)
    }
}

/// One learner's private world: parameters, environment, buffer, streams.
#[derive(Debug, Clone)]
struct Agent {
    params: ApproximatorParams,
    env: EnvInstance,
    state: usize,
    buffer: ReplayBuffer<Transition>,
    explore: ChaCha8Rng,
    replay: ChaCha8Rng,
}

impl Agent {
    fn new(spec: &EnvSpec, cfg: &EccConfig, streams: AgentStreams) -> Result<Self> {
        if cfg.support.len() < 2 {
            return Err(Error::InvalidSupport("support needs at least two atoms".into()));
        }
        let dims = Dims {
            feature_dim: spec.n_states(),
            hidden_dim: cfg.hidden_dim,
            n_actions: spec.n_actions(),
            n_atoms: cfg.support.len(),
        };
        let params = ApproximatorParams::init(cfg.architecture, dims, cfg.support, streams.init)?;
        let mut env = spec.instance(streams.env);
        let state = env.reset().state;
        Ok(Self {
            params,
            env,
            state,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            explore: ChaCha8Rng::seed_from_u64(streams.explore),
            replay: ChaCha8Rng::seed_from_u64(streams.replay),
        })
    }

    /// ε-greedy on the online Q, one environment step, store, reset if done.
    fn act(&mut self, epsilon: f64) -> Result<Transition> {
        let n_states = self.env.spec().n_states();
        let u: f64 = self.explore.random();
        let a = if u < epsilon {
            self.explore.random_range(0..self.env.spec().n_actions())
        } else {
            self.params.greedy_action(&one_hot(self.state, n_states))?
        };
        let outcome = self.env.step(a)?;
        let t = Transition {
            x: self.state,
            a,
            r: outcome.reward,
            x_next: outcome.observation.state,
            terminal: outcome.terminal,
        };
        self.buffer.push(t);
        self.state = if outcome.done() {
            self.env.reset().state
        } else {
            t.x_next
        };
        Ok(t)
    }

    /// One gradient step on the summed KL loss of a uniform minibatch drawn
    /// with replacement from this agent's own buffer.
    fn learn(&mut self, batch_size: usize, cfg: &EccConfig, targets: &TargetTable) -> Result<f64> {
        let n_states = self.env.spec().n_states();
        let indices = self.buffer.sample_indices(batch_size, &mut self.replay);
        let mut grad = vec![0.0; self.params.weights().len()];
        let mut loss = 0.0;
        for i in indices {
            let t = *self.buffer.get(i).expect("index drawn from the filled region");
            let target = targets.target(&t);
            loss += self.params.accumulate_kl_grad(
                &one_hot(t.x, n_states),
                t.a,
                &target,
                TRAINING_KL_SMOOTHING,
                &mut grad,
            )?;
        }
        self.params.apply_update_in_place(&grad, &cfg.learning)?;
        Ok(loss)
    }
}

fn for_each_agent<T: Send>(
    items: &mut [T],
    parallel: bool,
    f: impl Fn(&mut T) -> Result<()> + Sync + Send,
) -> Result<()> {
    if parallel {
        items.par_iter_mut().try_for_each(f)
    } else {
        items.iter_mut().try_for_each(f)
    }
}

/// Anything that can be advanced one outer step of Algorithm A1 and
/// evaluated through its online parameters.
pub trait Learner {
    fn step(&mut self) -> Result<()>;
    fn steps_done(&self) -> u64;
    fn online(&self) -> Vec<&ApproximatorParams>;
    fn snapshot_version(&self) -> u64;
}

/// The ECC ensemble trainer (Algorithm A1).
#[derive(Debug, Clone)]
pub struct EccTrainer {
    cfg: EccConfig,
    n_states: usize,
    agents: Vec<Agent>,
    snapshot: EnsembleTargetSnapshot,
    targets: TargetTable,
    t: u64,
}

impl EccTrainer {
    pub fn new(env: &EnvSpec, cfg: EccConfig) -> Result<Self> {
        let streams = (0..cfg.k).map(|i| AgentStreams::derive(cfg.seed, i)).collect();
        Self::with_streams(env, cfg, streams)
    }

    /// Test mode: every agent uses agent 0's streams, so all agents start
    /// identical and see identical transitions.
    pub fn with_shared_streams(env: &EnvSpec, cfg: EccConfig) -> Result<Self> {
        let streams = vec![AgentStreams::derive(cfg.seed, 0); cfg.k];
        Self::with_streams(env, cfg, streams)
    }

    pub fn with_streams(env: &EnvSpec, cfg: EccConfig, streams: Vec<AgentStreams>) -> Result<Self> {
        cfg.validate()?;
        if streams.len() != cfg.k {
            return Err(Error::InvalidConfig(format!(
                "{} stream sets for k = {}",
                streams.len(),
                cfg.k
            )));
        }
        let agents = streams
            .into_iter()
            .map(|s| Agent::new(env, &cfg, s))
            .collect::<Result<Vec<_>>>()?;
        let snapshot = EnsembleTargetSnapshot::new(agents.iter().map(|a| a.params.clone()).collect(), 0)?;
        let targets = TargetTable::for_snapshot(&snapshot, env.n_states(), cfg.gamma)?;
        Ok(Self {
            cfg,
            n_states: env.n_states(),
            agents,
            snapshot,
            targets,
            t: 0,
        })
    }

    pub fn config(&self) -> &EccConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> &EnsembleTargetSnapshot {
        &self.snapshot
    }

    pub fn agents(&self) -> Vec<&ApproximatorParams> {
        self.agents.iter().map(|a| &a.params).collect()
    }

    pub fn buffer(&self, agent: usize) -> &ReplayBuffer<Transition> {
        &self.agents[agent].buffer
    }

    /// Current environment observation of each agent.
    pub fn observations(&self) -> Vec<Observation> {
        self.agents.iter().map(|a| a.env.observe()).collect()
    }
}

impl Learner for EccTrainer {
    /// One outer iteration `t`: every agent acts, then (every `P_update`
    /// steps) every agent learns against the snapshot, then (every `P_clone`
    /// steps) the snapshot is rebuilt from all online parameters at once.
    fn step(&mut self) -> Result<()> {
        let epsilon = self.cfg.epsilon.value(self.t);
        self.t += 1;
        let parallel = self.cfg.parallel;
        for_each_agent(&mut self.agents, parallel, |a| a.act(epsilon).map(|_| ()))?;
        if self.t.is_multiple_of(self.cfg.update_period) {
            let (cfg, targets) = (&self.cfg, &self.targets);
            for_each_agent(&mut self.agents, parallel, |a| {
                a.learn(cfg.batch_size, cfg, targets).map(|_| ())
            })?;
        }
        if self.cfg.clones_at(self.t) {
            self.snapshot = self.snapshot.recapture(self.agents.iter().map(|a| &a.params))?;
            self.targets = TargetTable::for_snapshot(&self.snapshot, self.n_states, self.cfg.gamma)?;
        }
        Ok(())
    }

    fn steps_done(&self) -> u64 {
        self.t
    }

    fn online(&self) -> Vec<&ApproximatorParams> {
        self.agents()
    }

    fn snapshot_version(&self) -> u64 {
        self.snapshot.version()
    }
}

/// Single-agent CDRL with function approximation: Algorithm A1 with k = 1
/// written against the agent's own target network.
#[derive(Debug, Clone)]
pub struct CdrlTrainer {
    cfg: EccConfig,
    n_states: usize,
    agent: Agent,
    target_params: ApproximatorParams,
    target_version: u64,
    targets: TargetTable,
    t: u64,
}

impl CdrlTrainer {
    /// Baseline agent `index` under `cfg.seed` (`cfg.k` is ignored).
    pub fn new(env: &EnvSpec, cfg: EccConfig, index: usize) -> Result<Self> {
        let streams = AgentStreams::derive(cfg.seed, index);
        Self::with_streams(env, cfg, streams)
    }

    pub fn with_streams(env: &EnvSpec, cfg: EccConfig, streams: AgentStreams) -> Result<Self> {
        cfg.validate()?;
        let agent = Agent::new(env, &cfg, streams)?;
        let target_params = agent.params.clone();
        let targets = TargetTable::for_params(&target_params, env.n_states(), cfg.gamma)?;
        Ok(Self {
            cfg,
            n_states: env.n_states(),
            agent,
            target_params,
            target_version: 0,
            targets,
            t: 0,
        })
    }

    pub fn params(&self) -> &ApproximatorParams {
        &self.agent.params
    }

    pub fn target_params(&self) -> &ApproximatorParams {
        &self.target_params
    }

    pub fn buffer(&self) -> &ReplayBuffer<Transition> {
        &self.agent.buffer
    }
}

impl Learner for CdrlTrainer {
    fn step(&mut self) -> Result<()> {
        let epsilon = self.cfg.epsilon.value(self.t);
        self.t += 1;
        self.agent.act(epsilon)?;
        if self.t.is_multiple_of(self.cfg.update_period) {
            self.agent.learn(self.cfg.batch_size, &self.cfg, &self.targets)?;
        }
        if self.cfg.clones_at(self.t) {
            self.target_params = self.agent.params.clone();
            self.target_version += 1;
            self.targets = TargetTable::for_params(&self.target_params, self.n_states, self.cfg.gamma)?;
        }
        Ok(())
    }

    fn steps_done(&self) -> u64 {
        self.t
    }

    fn online(&self) -> Vec<&ApproximatorParams> {
        vec![&self.agent.params]
    }

    fn snapshot_version(&self) -> u64 {
        self.target_version
    }
}

/// k independently trained CDRL agents advanced in lockstep; their average
/// joint policy is the "CDRL ensemble" baseline.
#[derive(Debug, Clone)]
pub struct IndependentCdrl {
    trainers: Vec<CdrlTrainer>,
    parallel: bool,
}

impl IndependentCdrl {
    pub fn new(env: &EnvSpec, cfg: EccConfig) -> Result<Self> {
        let parallel = cfg.parallel;
        let trainers = (0..cfg.k)
            .map(|i| CdrlTrainer::new(env, cfg.clone(), i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trainers, parallel })
    }

    pub fn trainers(&self) -> &[CdrlTrainer] {
        &self.trainers
    }
}

impl Learner for IndependentCdrl {
    fn step(&mut self) -> Result<()> {
        for_each_agent(&mut self.trainers, self.parallel, |t| t.step())
    }

    fn steps_done(&self) -> u64 {
        self.trainers[0].steps_done()
    }

    fn online(&self) -> Vec<&ApproximatorParams> {
        self.trainers.iter().map(|t| t.params()).collect()
    }

    fn snapshot_version(&self) -> u64 {
        self.trainers[0].snapshot_version()
    }
}

/// When and how policies are evaluated during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalProtocol {
    /// Evaluate after every `period` training steps (partial last window dropped).
    pub period: u64,
    pub episodes: usize,
    /// Evaluation-time exploration (the paper uses 0.001).
    pub epsilon: f64,
}

impl EvalProtocol {
    pub fn new(period: u64, episodes: usize) -> Self {
        Self {
            period,
            episodes,
            epsilon: 0.001,
        }
    }
}

/// Scores at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    /// Mean undiscounted return of each agent's ε-greedy policy.
    pub agent_returns: Vec<f64>,
    /// Mean undiscounted return of the average joint policy.
    pub joint_return: f64,
    pub snapshot_version: u64,
}

/// Mean undiscounted return of `policy` over `episodes` episodes with
/// ε-exploration. All randomness comes from `seed`, so policies evaluated
/// with the same seed face the same environment noise.
pub fn evaluate_policy(
    env: &EnvSpec,
    mut policy: impl FnMut(&Observation) -> Result<usize>,
    episodes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let mut instance = env.instance(derive_seed(seed, StreamPurpose::Environment, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, StreamPurpose::Exploration, 0));
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = instance.reset();
        loop {
            let u: f64 = rng.random();
            let a = if u < epsilon {
                rng.random_range(0..env.n_actions())
            } else {
                policy(&obs)?
            };
            let out = instance.step(a)?;
            total += out.reward;
            if out.done() {
                break;
            }
            obs = out.observation;
        }
    }
    Ok(total / episodes as f64)
}

/// Greedy action of `decide` for every state, computed once per evaluation.
fn policy_table(env: &EnvSpec, decide: impl Fn(&[f64]) -> Result<usize>) -> Result<Vec<usize>> {
    (0..env.n_states())
        .map(|x| decide(&one_hot(x, env.n_states())))
        .collect()
}

fn evaluate_point(
    env: &EnvSpec,
    learner: &dyn Learner,
    proto: &EvalProtocol,
    master_seed: u64,
) -> Result<EvalPoint> {
    let step = learner.steps_done();
    let seed = derive_seed(master_seed, StreamPurpose::Evaluation, step);
    let online = learner.online();
    let run = |table: Vec<usize>| {
        evaluate_policy(env, |o| Ok(table[o.state]), proto.episodes, proto.epsilon, seed)
    };
    let agent_returns = online
        .iter()
        .map(|p| run(policy_table(env, |f| p.greedy_action(f))?))
        .collect::<Result<Vec<_>>>()?;
    let joint_return = run(policy_table(env, |f| average_joint_action(online.iter().copied(), f))?)?;
    Ok(EvalPoint {
        step,
        agent_returns,
        joint_return,
        snapshot_version: learner.snapshot_version(),
    })
}

/// Trains `learner` to `n_steps`, evaluating every `proto.period` steps and
/// handing each point to `on_eval` as soon as it is computed.
pub fn run_with_evaluation(
    env: &EnvSpec,
    learner: &mut dyn Learner,
    n_steps: u64,
    master_seed: u64,
    proto: Option<&EvalProtocol>,
    mut on_eval: impl FnMut(&EvalPoint) -> Result<()>,
) -> Result<()> {
    if let Some(p) = proto {
        if p.period == 0 {
            return Err(Error::InvalidConfig("eval period must be positive".into()));
        }
    }
    while learner.steps_done() < n_steps {
        learner.step()?;
        if let Some(p) = proto {
            if learner.steps_done().is_multiple_of(p.period) {
                on_eval(&evaluate_point(env, learner, p, master_seed)?)?;
            }
        }
    }
    Ok(())
}

/// Result of a complete training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub agents: Vec<ApproximatorParams>,
    pub snapshot_version: u64,
    pub evals: Vec<EvalPoint>,
}

fn finish(env: &EnvSpec, learner: &mut dyn Learner, cfg: &EccConfig, proto: Option<&EvalProtocol>) -> Result<TrainingRun> {
    let mut evals = Vec::new();
    run_with_evaluation(env, learner, cfg.n_steps, cfg.seed, proto, |p| {
        evals.push(p.clone());
        Ok(())
    })?;
    Ok(TrainingRun {
        agents: learner.online().into_iter().cloned().collect(),
        snapshot_version: learner.snapshot_version(),
        evals,
    })
}

/// Runs Algorithm A1 for `cfg.n_steps` steps.
pub fn train_ecc(env: &EnvSpec, cfg: &EccConfig, proto: Option<&EvalProtocol>) -> Result<TrainingRun> {
    let mut trainer = EccTrainer::new(env, cfg.clone())?;
    finish(env, &mut trainer, cfg, proto)
}

/// Trains `cfg.k` independent single-agent CDRL learners.
pub fn train_cdrl(env: &EnvSpec, cfg: &EccConfig, proto: Option<&EvalProtocol>) -> Result<TrainingRun> {
    let mut group = IndependentCdrl::new(env, cfg.clone())?;
    finish(env, &mut group, cfg, proto)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::chain;

    fn small_cfg(env: &EnvSpec, k: usize, n: u64) -> EccConfig {
        EccConfig {
            k,
            buffer_capacity: 500,
            clone_period: 50,
            learning: crate::approx::GradientUpdateRule::new(0.05),
            ..EccConfig::for_env(env, n, 7)
        }
    }

    #[test]
    fn snapshot_version_counts_clones() {
        let env = chain(4).unwrap();
        let mut tr = EccTrainer::new(&env, small_cfg(&env, 3, 400)).unwrap();
        for t in 1..=400u64 {
            tr.step().unwrap();
            assert_eq!(tr.snapshot_version(), t / 50);
        }
    }

    #[test]
    fn buffers_fill_one_transition_per_step() {
        let env = chain(4).unwrap();
        let mut tr = EccTrainer::new(&env, small_cfg(&env, 2, 40)).unwrap();
        for _ in 0..40 {
            tr.step().unwrap();
        }
        assert_eq!(tr.buffer(0).len(), 40);
        assert_eq!(tr.buffer(1).len(), 40);
        assert_ne!(tr.buffer(0).as_slice(), tr.buffer(1).as_slice());
    }

    #[test]
    fn k1_ensemble_matches_cdrl_trainer() {
        let env = chain(4).unwrap();
        let cfg = small_cfg(&env, 1, 300);
        let mut ecc = EccTrainer::new(&env, cfg.clone()).unwrap();
        let mut cdrl = CdrlTrainer::new(&env, cfg, 0).unwrap();
        for _ in 0..300 {
            ecc.step().unwrap();
            cdrl.step().unwrap();
            assert_eq!(ecc.agents()[0], cdrl.params());
            assert_eq!(ecc.buffer(0).as_slice(), cdrl.buffer().as_slice());
        }
    }

    #[test]
    fn parallel_mode_matches_sequential() {
        let env = chain(5).unwrap();
        let cfg = small_cfg(&env, 4, 200);
        let seq = train_ecc(&env, &cfg, None).unwrap();
        let par = train_ecc(&env, &EccConfig { parallel: true, ..cfg }, None).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn evaluation_with_common_seed_is_policy_deterministic() {
        let env = chain(4).unwrap();
        let right = |_: &Observation| Ok(1);
        let a = evaluate_policy(&env, right, 5, 0.001, 9).unwrap();
        let b = evaluate_policy(&env, right, 5, 0.001, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, 1.0);
    }
}
