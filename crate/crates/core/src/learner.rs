//! Tabular SARSA with an exponentially decaying epsilon-greedy schedule.
//!
//! Training records every experienced transition together with its four
//! per-component rewards, so that later composition can re-weight rewards
//! without touching the simulator. Greedy evaluations run every
//! `eval_every` episodes and the post-warmup evaluations are stratified into
//! best, mid and low checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gridworld::{
    component_rewards, step, Action, GridLayout, RewardSpec, StateId, Terminal,
};

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("transition ({state}, {action:?}) leads to both {first} and {second}")]
    ConflictingTransition {
        state: StateId,
        action: Action,
        first: StateId,
        second: StateId,
    },
    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Training budget in episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    X1,
    X5,
    X10,
}

impl Budget {
    pub const ALL: [Budget; 3] = [Budget::X1, Budget::X5, Budget::X10];

    pub fn episodes(self) -> usize {
        match self {
            Budget::X1 => 10_000,
            Budget::X5 => 50_000,
            Budget::X10 => 100_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Budget::X1 => "x1",
            Budget::X5 => "x5",
            Budget::X10 => "x10",
        }
    }
}

impl std::fmt::Display for Budget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Budget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "x1" => Ok(Budget::X1),
            "x5" => Ok(Budget::X5),
            "x10" => Ok(Budget::X10),
            other => Err(format!("unknown budget `{other}` (expected x1, x5 or x10)")),
        }
    }
}

/// SARSA hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the budget after which epsilon sits at `epsilon_end`.
    pub decay_fraction: f64,
    pub eval_every: usize,
    /// Evaluations before this fraction of the budget are not checkpoint candidates.
    pub warmup_fraction: f64,
    pub rng_seed: u64,
}

impl TrainingConfig {
    pub fn new(gamma: f64, episodes: usize, rng_seed: u64) -> Self {
        TrainingConfig {
            alpha: 0.1,
            gamma,
            episodes,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            decay_fraction: 0.8,
            eval_every: 500,
            warmup_fraction: 0.1,
            rng_seed,
        }
    }

    pub fn for_budget(gamma: f64, budget: Budget, rng_seed: u64) -> Self {
        Self::new(gamma, budget.episodes(), rng_seed)
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.episodes == 0 {
            return bad("episodes must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if !(self.epsilon_end <= self.epsilon_start
            && self.epsilon_end > 0.0
            && self.epsilon_start <= 1.0)
        {
            return bad("need 0 < epsilon_end <= epsilon_start <= 1");
        }
        if !(self.decay_fraction > 0.0 && self.decay_fraction <= 1.0) {
            return bad("decay_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Exploration rate for `episode`: `max(end, start * r^episode)` where `r`
/// makes the schedule reach `end` at `decay_fraction` of the budget.
pub fn epsilon_at(cfg: &TrainingConfig, episode: usize) -> f64 {
    let reach = cfg.decay_fraction * cfg.episodes as f64;
    if cfg.epsilon_start <= cfg.epsilon_end || reach <= 0.0 {
        return cfg.epsilon_end;
    }
    let ln_rate = (cfg.epsilon_end / cfg.epsilon_start).ln() / reach;
    (cfg.epsilon_start * (ln_rate * episode as f64).exp()).max(cfg.epsilon_end)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64; 4]) -> Action {
    let mut best = 0;
    for i in 1..4 {
        if values[i] > values[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// Learned action values for the states a policy has visited.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub size: usize,
    pub gamma: f64,
    pub spec: RewardSpec,
    pub entries: BTreeMap<StateId, [f64; 4]>,
}

impl QTable {
    pub fn new(size: usize, gamma: f64, spec: RewardSpec) -> Self {
        QTable {
            size,
            gamma,
            spec,
            entries: BTreeMap::new(),
        }
    }

    pub fn row(&self, s: StateId) -> [f64; 4] {
        self.entries.get(&s).copied().unwrap_or([0.0; 4])
    }

    pub fn value(&self, s: StateId, a: Action) -> f64 {
        self.row(s)[a.index()]
    }

    /// Greedy action; unvisited states behave like all-zero rows.
    pub fn greedy_action(&self, s: StateId) -> Action {
        argmax_lowest(&self.row(s))
    }

    /// Greedy action among `allowed` (lowest index on ties), `None` if empty.
    pub fn greedy_among(&self, s: StateId, allowed: impl IntoIterator<Item = Action>) -> Option<Action> {
        let row = self.row(s);
        let mut allowed: Vec<Action> = allowed.into_iter().collect();
        allowed.sort();
        let mut best: Option<Action> = None;
        for a in allowed {
            if best.map_or(true, |b| row[a.index()] > row[b.index()]) {
                best = Some(a);
            }
        }
        best
    }

    /// Writes the `N gamma spec` header followed by `state_id,q0,q1,q2,q3` rows.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.size, self.gamma, self.spec.tag())?;
        let mut line = String::new();
        for (s, q) in &self.entries {
            line.clear();
            let _ = write!(line, "{},{},{},{},{}", s, q[0], q[1], q[2], q[3]);
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, LearnerError> {
        let err = |line: usize, reason: String| LearnerError::Parse {
            what: "q-table",
            line,
            reason,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(err(1, format!("expected `N gamma spec`, got `{header}`")));
        }
        let size = parts[0].parse().map_err(|e| err(1, format!("{e}")))?;
        let gamma = parts[1].parse().map_err(|e| err(1, format!("{e}")))?;
        let spec = parts[2].parse().map_err(|e| err(1, format!("{e}")))?;
        let mut table = QTable::new(size, gamma, spec);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(err(i + 2, "expected 5 fields".into()));
            }
            let s: StateId = fields[0].parse().map_err(|e| err(i + 2, format!("{e}")))?;
            let mut q = [0.0f64; 4];
            for (k, f) in fields[1..].iter().enumerate() {
                q[k] = f.parse().map_err(|e| err(i + 2, format!("{e}")))?;
                if !q[k].is_finite() {
                    return Err(err(i + 2, "non-finite value".into()));
                }
            }
            table.entries.insert(s, q);
        }
        Ok(table)
    }
}

/// One observed deterministic transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next_state: StateId,
    /// Reward under the recording policy's own objective.
    pub reward: f64,
    /// Exit or hazard; horizon truncation is not recorded as terminal.
    pub terminal: bool,
    /// Unweighted per-component rewards, indexed by `Component::index`.
    pub components: [f64; 4],
}

/// Observed transitions, at most one per `(state, action)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionSet {
    records: BTreeMap<(StateId, Action), Transition>,
}

const TRANSITION_HEADER: &str =
    "state_id,action,next_state_id,reward,terminal,r_path,r_gold,r_hazard,r_lever";

impl TransitionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record; an existing record for the same pair must agree on the
    /// successor state.
    pub fn insert(&mut self, s: StateId, a: Action, t: Transition) -> Result<(), LearnerError> {
        if let Some(prev) = self.records.get(&(s, a)) {
            if prev.next_state != t.next_state {
                return Err(LearnerError::ConflictingTransition {
                    state: s,
                    action: a,
                    first: prev.next_state,
                    second: t.next_state,
                });
            }
            return Ok(());
        }
        self.records.insert((s, a), t);
        Ok(())
    }

    pub fn get(&self, s: StateId, a: Action) -> Option<&Transition> {
        self.records.get(&(s, a))
    }

    pub fn contains(&self, s: StateId, a: Action) -> bool {
        self.records.contains_key(&(s, a))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, Action, &Transition)> {
        self.records.iter().map(|(&(s, a), t)| (s, a, t))
    }

    /// Actions recorded at `s`, in action order.
    pub fn actions_at(&self, s: StateId) -> impl Iterator<Item = Action> + '_ {
        self.records
            .range((s, Action::Up)..=(s, Action::Right))
            .map(|(&(_, a), _)| a)
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{TRANSITION_HEADER}")?;
        let mut line = String::new();
        for ((s, a), t) in &self.records {
            line.clear();
            let _ = write!(
                line,
                "{},{},{},{},{},{},{},{},{}",
                s,
                a.index(),
                t.next_state,
                t.reward,
                t.terminal as u8,
                t.components[0],
                t.components[1],
                t.components[2],
                t.components[3]
            );
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self, LearnerError> {
        let err = |line: usize, reason: String| LearnerError::Parse {
            what: "transition file",
            line,
            reason,
        };
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))??;
        if header != TRANSITION_HEADER {
            return Err(err(1, format!("unexpected header `{header}`")));
        }
        let mut set = TransitionSet::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(err(n, "expected 9 fields".into()));
            }
            let num = |k: usize| -> Result<f64, LearnerError> {
                f[k].parse::<f64>().map_err(|e| err(n, format!("{e}")))
            };
            let s: StateId = f[0].parse().map_err(|e| err(n, format!("{e}")))?;
            let a = f[1]
                .parse::<usize>()
                .ok()
                .and_then(Action::from_index)
                .ok_or_else(|| err(n, "bad action".into()))?;
            let next_state = f[2].parse().map_err(|e| err(n, format!("{e}")))?;
            let terminal = match f[4] {
                "0" => false,
                "1" => true,
                _ => return Err(err(n, "terminal must be 0 or 1".into())),
            };
            let t = Transition {
                next_state,
                reward: num(3)?,
                terminal,
                components: [num(5)?, num(6)?, num(7)?, num(8)?],
            };
            set.insert(s, a, t)?;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: StateId,
    pub action: Action,
    pub next_state: StateId,
    pub terminal: Terminal,
    /// Per-component rewards; re-weighting them re-scores the step under any spec.
    pub rewards: [f64; 4],
}

/// One episode, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    /// Undiscounted return of the recorded steps under `spec`.
    pub fn score(&self, spec: &RewardSpec) -> f64 {
        self.steps.iter().map(|s| spec.weigh(&s.rewards)).sum()
    }

    pub fn final_terminal(&self) -> Option<Terminal> {
        self.steps.last().map(|s| s.terminal)
    }
}

pub fn write_trajectories(trajectories: &[Trajectory], mut w: impl Write) -> io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_trajectories(r: impl BufRead) -> Result<Vec<Trajectory>, LearnerError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LearnerError::Parse {
            what: "trajectory log",
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Runs one episode in the simulator with a deterministic policy and returns
/// the trajectory and its undiscounted return under `spec`.
pub fn rollout(
    layout: &GridLayout,
    spec: &RewardSpec,
    max_steps: u32,
    episode: usize,
    mut policy: impl FnMut(StateId) -> Action,
) -> (Trajectory, f64) {
    let mut state = layout.initial_state();
    let mut steps = Vec::new();
    let mut total = 0.0;
    for _ in 0..max_steps {
        let sid = layout.state_id(&state.key());
        let action = policy(sid);
        let (next, terminal) = step(layout, &state, action);
        let rewards = component_rewards(layout, &state.key(), &next.key(), terminal);
        total += spec.weigh(&rewards);
        steps.push(TrajectoryStep {
            state: sid,
            action,
            next_state: layout.state_id(&next.key()),
            terminal,
            rewards,
        });
        if terminal.ends_episode() {
            break;
        }
        state = next;
    }
    (Trajectory { episode, steps }, total)
}

/// Greedy rollout of a Q-table (ties to the lowest action index).
pub fn greedy_rollout(
    layout: &GridLayout,
    spec: &RewardSpec,
    qtable: &QTable,
    max_steps: u32,
) -> (Trajectory, f64) {
    rollout(layout, spec, max_steps, 0, |s| qtable.greedy_action(s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub episode: usize,
    pub eval_return: f64,
    pub qtable: QTable,
    /// The greedy evaluation rollout at this checkpoint.
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTriple {
    pub best: Checkpoint,
    pub mid: Checkpoint,
    pub low: Checkpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Best,
    Mid,
    Low,
}

impl CheckpointKind {
    pub const ALL: [CheckpointKind; 3] = [CheckpointKind::Best, CheckpointKind::Mid, CheckpointKind::Low];

    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::Best => "best",
            CheckpointKind::Mid => "mid",
            CheckpointKind::Low => "low",
        }
    }
}

impl CheckpointTriple {
    pub fn get(&self, kind: CheckpointKind) -> &Checkpoint {
        match kind {
            CheckpointKind::Best => &self.best,
            CheckpointKind::Mid => &self.mid,
            CheckpointKind::Low => &self.low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub episode: usize,
    pub eval_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub checkpoints: CheckpointTriple,
    /// Every transition experienced during training.
    pub transitions: TransitionSet,
    /// Greedy evaluation rollouts, one per evaluation.
    pub trajectory_log: Vec<Trajectory>,
    pub evaluations: Vec<Evaluation>,
    /// Wall-clock seconds including evaluation rollouts.
    pub seconds: f64,
    pub eval_seconds: f64,
    first_seen: BTreeMap<(StateId, Action), usize>,
}

impl TrainingOutcome {
    /// Transitions first experienced at or before `episode`, i.e. the data a
    /// snapshot taken after that episode had seen.
    pub fn transitions_until(&self, episode: usize) -> TransitionSet {
        let mut set = TransitionSet::new();
        for (s, a, t) in self.transitions.iter() {
            if self.first_seen[&(s, a)] <= episode {
                set.records.insert((s, a), *t);
            }
        }
        set
    }
}

struct Snapshot {
    episode: usize,
    eval_return: f64,
    q: Vec<[f64; 4]>,
    trajectory: Trajectory,
}

fn epsilon_greedy(row: &[f64; 4], eps: f64, rng: &mut ChaCha8Rng) -> Action {
    let explore: f64 = rng.gen();
    if explore < eps {
        Action::ALL[rng.gen_range(0..4)]
    } else {
        argmax_lowest(row)
    }
}

/// On-policy SARSA: `Q(s,a) += alpha * (r + gamma * Q(s',a') - Q(s,a))`.
pub fn train_sarsa(
    layout: &GridLayout,
    spec: &RewardSpec,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome, LearnerError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut eval_seconds = 0.0;
    let n_states = layout.state_count() as usize;
    let mut q = vec![[0.0f64; 4]; n_states];
    const UNSEEN: u32 = u32::MAX;
    let mut first_seen = vec![[UNSEEN; 4]; n_states];
    let mut records: Vec<[Option<Transition>; 4]> = vec![[None; 4]; n_states];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let horizon = layout.horizon();
    let warmup = (cfg.warmup_fraction * cfg.episodes as f64).floor() as usize;

    let mut evaluations = Vec::new();
    let mut trajectory_log = Vec::new();
    // Latest snapshot for each distinct post-warmup return.
    let mut snapshots: Vec<Snapshot> = Vec::new();

    for episode in 0..cfg.episodes {
        let eps = epsilon_at(cfg, episode);
        let mut state = layout.initial_state();
        let mut sid = layout.state_id(&state.key()) as usize;
        let mut action = epsilon_greedy(&q[sid], eps, &mut rng);
        loop {
            let (next, terminal) = step(layout, &state, action);
            let nid = layout.state_id(&next.key()) as usize;
            let components = component_rewards(layout, &state.key(), &next.key(), terminal);
            let r = spec.weigh(&components);
            let slot = &mut records[sid][action.index()];
            if slot.is_none() {
                *slot = Some(Transition {
                    next_state: nid as StateId,
                    reward: r,
                    terminal: terminal.is_absorbing(),
                    components,
                });
                first_seen[sid][action.index()] = episode as u32;
            }

            if terminal.is_absorbing() {
                let cur = q[sid][action.index()];
                q[sid][action.index()] = cur + cfg.alpha * (r - cur);
                break;
            }
            let next_action = epsilon_greedy(&q[nid], eps, &mut rng);
            let target = r + cfg.gamma * q[nid][next_action.index()];
            let cur = q[sid][action.index()];
            q[sid][action.index()] = cur + cfg.alpha * (target - cur);
            if terminal == Terminal::HorizonReached {
                break;
            }
            state = next;
            sid = nid;
            action = next_action;
        }

        if (episode + 1) % cfg.eval_every == 0 || episode + 1 == cfg.episodes {
            let t0 = Instant::now();
            let (trajectory, ret) = rollout(layout, spec, horizon, episode, |s| {
                argmax_lowest(&q[s as usize])
            });
            eval_seconds += t0.elapsed().as_secs_f64();
            evaluations.push(Evaluation {
                episode,
                eval_return: ret,
            });
            if episode >= warmup {
                let snap = Snapshot {
                    episode,
                    eval_return: ret,
                    q: q.clone(),
                    trajectory: trajectory.clone(),
                };
                match snapshots.iter_mut().find(|s| s.eval_return.to_bits() == ret.to_bits()) {
                    Some(slot) => *slot = snap,
                    None => snapshots.push(snap),
                }
            }
            trajectory_log.push(trajectory);
        }
    }

    let post: Vec<Evaluation> = evaluations
        .iter()
        .copied()
        .filter(|e| e.episode >= warmup)
        .collect();
    let (best, mid, low) = stratify(&post);

    let mut transitions = TransitionSet::new();
    let mut seen = BTreeMap::new();
    for (s, row) in records.iter().enumerate() {
        for (a, rec) in row.iter().enumerate() {
            if let Some(t) = rec {
                let action = Action::ALL[a];
                transitions.records.insert((s as StateId, action), *t);
                seen.insert((s as StateId, action), first_seen[s][a] as usize);
            }
        }
    }

    let make = |target: Evaluation| -> Checkpoint {
        let snap = snapshots
            .iter()
            .find(|s| s.eval_return.to_bits() == target.eval_return.to_bits())
            .expect("every post-warmup return has a snapshot");
        let mut qtable = QTable::new(layout.size(), cfg.gamma, spec.clone());
        for (s, row) in first_seen.iter().enumerate() {
            if row.iter().any(|&e| e != UNSEEN && e as usize <= snap.episode) {
                qtable.entries.insert(s as StateId, snap.q[s]);
            }
        }
        Checkpoint {
            episode: snap.episode,
            eval_return: snap.eval_return,
            qtable,
            trajectory: snap.trajectory.clone(),
        }
    };
    let checkpoints = CheckpointTriple {
        best: make(best),
        mid: make(mid),
        low: make(low),
    };

    Ok(TrainingOutcome {
        checkpoints,
        transitions,
        trajectory_log,
        evaluations,
        seconds: started.elapsed().as_secs_f64(),
        eval_seconds,
        first_seen: seen,
    })
}

/// Best = max return, low = min, mid = closest to the median; ties resolve to
/// the latest evaluation.
fn stratify(evals: &[Evaluation]) -> (Evaluation, Evaluation, Evaluation) {
    let pick = |better: &dyn Fn(f64, f64) -> bool| {
        let mut chosen = evals[0];
        for e in &evals[1..] {
            if !better(chosen.eval_return, e.eval_return) {
                chosen = *e;
            }
        }
        chosen
    };
    let best = pick(&|a, b| a > b);
    let low = pick(&|a, b| a < b);
    let mut sorted: Vec<f64> = evals.iter().map(|e| e.eval_return).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mid = pick(&|a, b| (a - median).abs() < (b - median).abs());
    (best, mid, low)
}
