//! Deterministic gridworld: seeded layouts, step dynamics and the four base
//! reward components.
//!
//! A layout is an `N x N` grid with a start cell in the top-left corner, an
//! exit in the bottom-right corner, and randomly placed gold, hazard, block and
//! lever cells. Moves into the boundary or a block leave the agent in place.
//! Episodes end on the exit, on a hazard, or after `N^2` steps.
//!
//! The tabular state is `(agent cell, collected gold bitmask, lever pulled)`;
//! the gold and lever rewards depend on history, so position alone would not be
//! Markov.

use std::cell::Cell as StdCell;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-step cost charged by every active reward component.
pub const STEP_COST: f64 = 0.01;
/// Potential-shaping coefficient on the BFS distance to the exit.
pub const PATH_SHAPING: f64 = 0.1;
pub const PATH_EXIT_BONUS: f64 = 10.0;
pub const GOLD_BONUS: f64 = 5.0;
/// Paid by the gold component on exit, only once every gold cell is collected.
pub const GOLD_EXIT_BONUS: f64 = 10.0;
pub const HAZARD_PENALTY: f64 = 10.0;
/// Dense penalty for moving into a cell orthogonally adjacent to a hazard.
pub const HAZARD_NEAR_PENALTY: f64 = 0.5;
pub const LEVER_BONUS: f64 = 10.0;
pub const LEVER_EXIT_BONUS: f64 = 5.0;

/// Layout generation gives up after this many resampling attempts.
pub const MAX_LAYOUT_ATTEMPTS: u64 = 1000;

/// Tabular state identifier, see [`GridLayout::state_id`].
pub type StateId = u64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unsupported grid size {0} (expected 8 or 16)")]
    UnsupportedSize(usize),
    #[error("role counts need {needed} free cells but the grid has {available}")]
    CountsDoNotFit { needed: usize, available: usize },
    #[error("no feasible layout found within {0} attempts")]
    FeasibilityExhausted(u64),
    #[error("cell ({row}, {col}) lies outside the {size}x{size} grid")]
    OutOfBounds { row: usize, col: usize, size: usize },
    #[error("cell ({row}, {col}) carries more than one role")]
    OverlappingRoles { row: usize, col: usize },
    #[error("at most 31 gold cells are supported, got {0}")]
    TooManyGold(usize),
}

thread_local! {
    static STEP_CALLS: StdCell<u64> = const { StdCell::new(0) };
}

/// Number of [`step`] calls made so far on the current thread.
///
/// Offline phases read this before and after their work to prove they never
/// touched the simulator.
pub fn step_calls() -> u64 {
    STEP_CALLS.with(|c| c.get())
}

/// Grid coordinate, serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

impl From<[usize; 2]> for Cell {
    fn from([row, col]: [usize; 2]) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Base reward components, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Path = 0,
    Gold = 1,
    Hazard = 2,
    Lever = 3,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Path,
        Component::Gold,
        Component::Hazard,
        Component::Lever,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Path => "path",
            Component::Gold => "gold",
            Component::Hazard => "hazard",
            Component::Lever => "lever",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = RewardSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "path" => Ok(Component::Path),
            "gold" => Ok(Component::Gold),
            "hazard" => Ok(Component::Hazard),
            "lever" => Ok(Component::Lever),
            other => Err(RewardSpecError::UnknownComponent(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RewardSpecError {
    #[error("reward spec has no components")]
    Empty,
    #[error("unknown reward component `{0}`")]
    UnknownComponent(String),
    #[error("component `{0}` listed twice")]
    Duplicate(String),
    #[error("weight for `{0}` is not a finite number")]
    BadWeight(String),
}

/// A weighted subset of the base components.
///
/// Serialized as a tag such as `path-gold` (unit weights) or `path*2-gold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RewardSpec {
    // Canonical component order, no duplicates.
    components: Vec<(Component, f64)>,
}

impl RewardSpec {
    pub fn new(mut components: Vec<(Component, f64)>) -> Result<Self, RewardSpecError> {
        if components.is_empty() {
            return Err(RewardSpecError::Empty);
        }
        components.sort_by_key(|(c, _)| *c);
        for pair in components.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(RewardSpecError::Duplicate(pair[0].0.name().into()));
            }
        }
        if let Some((c, _)) = components.iter().find(|(_, w)| !w.is_finite()) {
            return Err(RewardSpecError::BadWeight(c.name().into()));
        }
        Ok(RewardSpec { components })
    }

    pub fn single(c: Component) -> Self {
        RewardSpec {
            components: vec![(c, 1.0)],
        }
    }

    /// Unit-weight sum of the given components.
    pub fn uniform(cs: &[Component]) -> Result<Self, RewardSpecError> {
        Self::new(cs.iter().map(|&c| (c, 1.0)).collect())
    }

    pub fn components(&self) -> &[(Component, f64)] {
        &self.components
    }

    pub fn contains(&self, c: Component) -> bool {
        self.components.iter().any(|(x, _)| *x == c)
    }

    /// Weighted sum of per-component rewards.
    pub fn weigh(&self, parts: &[f64; 4]) -> f64 {
        self.components
            .iter()
            .map(|(c, w)| w * parts[c.index()])
            .sum()
    }

    pub fn tag(&self) -> String {
        self.components
            .iter()
            .map(|(c, w)| {
                if *w == 1.0 {
                    c.name().to_string()
                } else {
                    format!("{}*{}", c.name(), w)
                }
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl fmt::Display for RewardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for RewardSpec {
    type Err = RewardSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Separators are only recognised before a component name so that
        // negative weights such as `path*-1` survive.
        let bytes = s.as_bytes();
        let mut items = Vec::new();
        let mut begin = 0;
        for i in 0..bytes.len() {
            let sep = matches!(bytes[i], b'-' | b'+' | b',');
            if sep && bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphabetic()) {
                items.push(&s[begin..i]);
                begin = i + 1;
            }
        }
        items.push(&s[begin..]);
        let mut parts = Vec::new();
        for item in items.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
            let (name, weight) = match item.split_once('*') {
                Some((n, w)) => {
                    let w: f64 = w
                        .parse()
                        .map_err(|_| RewardSpecError::BadWeight(n.to_string()))?;
                    (n, w)
                }
                None => (item, 1.0),
            };
            parts.push((name.trim().parse::<Component>()?, weight));
        }
        RewardSpec::new(parts)
    }
}

impl TryFrom<String> for RewardSpec {
    type Error = RewardSpecError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RewardSpec> for String {
    fn from(s: RewardSpec) -> String {
        s.tag()
    }
}

/// How many cells of each randomly placed role a layout gets. There is always
/// exactly one lever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub gold: usize,
    pub hazards: usize,
    pub blocks: usize,
}

impl RoleCounts {
    pub fn default_for(size: usize) -> Self {
        if size >= 16 {
            RoleCounts {
                gold: 4,
                hazards: 16,
                blocks: 24,
            }
        } else {
            RoleCounts {
                gold: 3,
                hazards: 4,
                blocks: 6,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Empty,
    Start,
    Exit,
    Gold(u8),
    Hazard,
    Block,
    Lever,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    size: usize,
    seed: u64,
    start: Cell,
    exit: Cell,
    gold: Vec<Cell>,
    hazards: Vec<Cell>,
    blocks: Vec<Cell>,
    lever: Cell,
}

/// An immutable gridworld layout.
///
/// Gold, hazard and block lists are kept sorted row-major; the position of a
/// gold cell in `gold` is its bit in the collected mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr", into = "LayoutRepr")]
pub struct GridLayout {
    size: usize,
    seed: u64,
    start: Cell,
    exit: Cell,
    gold: Vec<Cell>,
    hazards: Vec<Cell>,
    blocks: Vec<Cell>,
    lever: Cell,
    roles: Vec<Role>,
    exit_distance: Vec<Option<u32>>,
    near_hazard: Vec<bool>,
}

impl PartialEq for GridLayout {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size
            && self.seed == other.seed
            && self.start == other.start
            && self.exit == other.exit
            && self.gold == other.gold
            && self.hazards == other.hazards
            && self.blocks == other.blocks
            && self.lever == other.lever
    }
}

impl TryFrom<LayoutRepr> for GridLayout {
    type Error = GridError;
    fn try_from(r: LayoutRepr) -> Result<Self, GridError> {
        GridLayout::new(
            r.size, r.seed, r.start, r.exit, r.gold, r.hazards, r.blocks, r.lever,
        )
    }
}

impl From<GridLayout> for LayoutRepr {
    fn from(l: GridLayout) -> Self {
        LayoutRepr {
            size: l.size,
            seed: l.seed,
            start: l.start,
            exit: l.exit,
            gold: l.gold,
            hazards: l.hazards,
            blocks: l.blocks,
            lever: l.lever,
        }
    }
}

impl GridLayout {
    /// Builds a layout, checking bounds and role disjointness. Feasibility is
    /// not enforced here; see [`check_feasible`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        size: usize,
        seed: u64,
        start: Cell,
        exit: Cell,
        mut gold: Vec<Cell>,
        mut hazards: Vec<Cell>,
        mut blocks: Vec<Cell>,
        lever: Cell,
    ) -> Result<Self, GridError> {
        if size == 0 {
            return Err(GridError::UnsupportedSize(size));
        }
        if gold.len() > 31 {
            return Err(GridError::TooManyGold(gold.len()));
        }
        gold.sort();
        hazards.sort();
        blocks.sort();
        let mut roles = vec![Role::Empty; size * size];
        let mut place = |c: Cell, role: Role| -> Result<(), GridError> {
            if c.row >= size || c.col >= size {
                return Err(GridError::OutOfBounds {
                    row: c.row,
                    col: c.col,
                    size,
                });
            }
            let slot = &mut roles[c.row * size + c.col];
            if *slot != Role::Empty {
                return Err(GridError::OverlappingRoles {
                    row: c.row,
                    col: c.col,
                });
            }
            *slot = role;
            Ok(())
        };
        place(start, Role::Start)?;
        place(exit, Role::Exit)?;
        place(lever, Role::Lever)?;
        for (i, &g) in gold.iter().enumerate() {
            place(g, Role::Gold(i as u8))?;
        }
        for &h in &hazards {
            place(h, Role::Hazard)?;
        }
        for &b in &blocks {
            place(b, Role::Block)?;
        }

        let mut layout = GridLayout {
            size,
            seed,
            start,
            exit,
            gold,
            hazards,
            blocks,
            lever,
            roles,
            exit_distance: Vec::new(),
            near_hazard: Vec::new(),
        };
        // Shaping distance follows hazard-free paths; hazard cells count as
        // unreachable.
        layout.exit_distance = layout.bfs(exit, |r| r != Role::Block && r != Role::Hazard);
        layout.near_hazard = (0..size * size)
            .map(|i| {
                let c = layout.cell_at(i);
                layout
                    .neighbors(c)
                    .any(|n| layout.role(n) == Role::Hazard)
            })
            .collect();
        Ok(layout)
    }

    pub fn size(&self) -> usize {
        self.size
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn start(&self) -> Cell {
        self.start
    }
    pub fn exit(&self) -> Cell {
        self.exit
    }
    pub fn gold(&self) -> &[Cell] {
        &self.gold
    }
    pub fn hazards(&self) -> &[Cell] {
        &self.hazards
    }
    pub fn blocks(&self) -> &[Cell] {
        &self.blocks
    }
    pub fn lever(&self) -> Cell {
        self.lever
    }

    /// Episode horizon, `N^2` steps.
    pub fn horizon(&self) -> u32 {
        (self.size * self.size) as u32
    }

    pub fn all_gold_mask(&self) -> u32 {
        (1u32 << self.gold.len()) - 1
    }

    fn index(&self, c: Cell) -> usize {
        c.row * self.size + c.col
    }

    fn cell_at(&self, i: usize) -> Cell {
        Cell::new(i / self.size, i % self.size)
    }

    fn role(&self, c: Cell) -> Role {
        self.roles[self.index(c)]
    }

    pub fn is_block(&self, c: Cell) -> bool {
        self.role(c) == Role::Block
    }
    pub fn is_hazard(&self, c: Cell) -> bool {
        self.role(c) == Role::Hazard
    }

    /// True when some orthogonal neighbour of `c` is a hazard.
    pub fn near_hazard(&self, c: Cell) -> bool {
        self.near_hazard[self.index(c)]
    }

    /// BFS distance to the exit avoiding blocks and hazards, `None` if there is no such path.
    pub fn exit_distance(&self, c: Cell) -> Option<u32> {
        self.exit_distance[self.index(c)]
    }

    /// Shaping potential: BFS distance, or `N^2` for unreachable cells.
    fn potential(&self, c: Cell) -> f64 {
        self.exit_distance(c).unwrap_or(self.horizon()) as f64
    }

    fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        Action::ALL.iter().filter_map(move |&a| self.offset(c, a))
    }

    /// The in-bounds cell one move away, ignoring blocks.
    fn offset(&self, c: Cell, a: Action) -> Option<Cell> {
        let (r, col) = (c.row as isize, c.col as isize);
        let (r, col) = match a {
            Action::Up => (r - 1, col),
            Action::Down => (r + 1, col),
            Action::Left => (r, col - 1),
            Action::Right => (r, col + 1),
        };
        let n = self.size as isize;
        (r >= 0 && r < n && col >= 0 && col < n).then(|| Cell::new(r as usize, col as usize))
    }

    fn bfs(&self, from: Cell, passable: impl Fn(Role) -> bool) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.size * self.size];
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap();
            for n in self.neighbors(c) {
                let i = self.index(n);
                if dist[i].is_none() && passable(self.roles[i]) {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Number of distinct tabular state ids, `N^2 * 2^(|gold| + 1)`.
    pub fn state_count(&self) -> u64 {
        (self.size * self.size) as u64 * (1u64 << (self.gold.len() + 1))
    }

    /// `agent_index * 2^(|gold|+1) + collected * 2 + lever`.
    pub fn state_id(&self, key: &StateKey) -> StateId {
        let agent = self.index(key.agent) as u64;
        (agent << (self.gold.len() + 1)) | ((key.collected as u64) << 1) | key.lever_pulled as u64
    }

    pub fn decode_state(&self, id: StateId) -> Option<StateKey> {
        if id >= self.state_count() {
            return None;
        }
        let bits = self.gold.len() + 1;
        let agent = (id >> bits) as usize;
        Some(StateKey {
            agent: self.cell_at(agent),
            collected: ((id >> 1) & ((1u64 << self.gold.len()) - 1)) as u32,
            lever_pulled: id & 1 == 1,
        })
    }

    /// Initial state of every episode.
    pub fn initial_state(&self) -> EnvState {
        EnvState {
            agent: self.start,
            collected: 0,
            lever_pulled: false,
            steps_elapsed: 0,
        }
    }

    /// Every non-block cell, row-major.
    pub fn open_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.size * self.size)
            .map(|i| self.cell_at(i))
            .filter(|&c| !self.is_block(c))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// The Markov part of an [`EnvState`]; what tabular methods index on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub agent: Cell,
    pub collected: u32,
    pub lever_pulled: bool,
}

impl StateKey {
    pub fn with_steps(self, steps_elapsed: u32) -> EnvState {
        EnvState {
            agent: self.agent,
            collected: self.collected,
            lever_pulled: self.lever_pulled,
            steps_elapsed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub agent: Cell,
    pub collected: u32,
    pub lever_pulled: bool,
    pub steps_elapsed: u32,
}

impl EnvState {
    pub fn key(&self) -> StateKey {
        StateKey {
            agent: self.agent,
            collected: self.collected,
            lever_pulled: self.lever_pulled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terminal {
    None,
    ExitReached,
    HazardHit,
    HorizonReached,
}

impl Terminal {
    pub fn ends_episode(self) -> bool {
        self != Terminal::None
    }

    /// Exit and hazard end the MDP; the horizon is only a time limit.
    pub fn is_absorbing(self) -> bool {
        matches!(self, Terminal::ExitReached | Terminal::HazardHit)
    }
}

/// Advances the environment by one action.
///
/// Terminal conditions are checked in the order hazard, exit, horizon.
pub fn step(layout: &GridLayout, state: &EnvState, action: Action) -> (EnvState, Terminal) {
    STEP_CALLS.with(|c| c.set(c.get() + 1));

    let mut next = *state;
    next.steps_elapsed += 1;
    if let Some(target) = layout.offset(state.agent, action) {
        if !layout.is_block(target) {
            next.agent = target;
        }
    }
    match layout.role(next.agent) {
        Role::Gold(bit) => next.collected |= 1 << bit,
        Role::Lever => next.lever_pulled = true,
        _ => {}
    }

    let terminal = if layout.is_hazard(next.agent) {
        Terminal::HazardHit
    } else if next.agent == layout.exit {
        Terminal::ExitReached
    } else if next.steps_elapsed >= layout.horizon() {
        Terminal::HorizonReached
    } else {
        Terminal::None
    };
    (next, terminal)
}

/// Per-component rewards of one transition, indexed by [`Component::index`].
/// Each entry already includes that component's step cost.
pub fn component_rewards(
    layout: &GridLayout,
    from: &StateKey,
    to: &StateKey,
    terminal: Terminal,
) -> [f64; 4] {
    let exited = terminal == Terminal::ExitReached;
    let moved = from.agent != to.agent;

    let mut path = PATH_SHAPING * (layout.potential(from.agent) - layout.potential(to.agent));
    if exited {
        path += PATH_EXIT_BONUS;
    }

    let newly = (to.collected & !from.collected).count_ones();
    let mut gold = GOLD_BONUS * newly as f64;
    if exited && to.collected == layout.all_gold_mask() {
        gold += GOLD_EXIT_BONUS;
    }

    let hazard = if terminal == Terminal::HazardHit {
        -HAZARD_PENALTY
    } else if moved && layout.near_hazard(to.agent) {
        -HAZARD_NEAR_PENALTY
    } else {
        0.0
    };

    let mut lever = 0.0;
    if to.lever_pulled && !from.lever_pulled {
        lever += LEVER_BONUS;
    }
    if exited && to.lever_pulled {
        lever += LEVER_EXIT_BONUS;
    }

    [
        path - STEP_COST,
        gold - STEP_COST,
        hazard - STEP_COST,
        lever - STEP_COST,
    ]
}

/// Composite reward of a transition: `sum_i w_i R_i(s, a, s')`.
pub fn reward(
    layout: &GridLayout,
    spec: &RewardSpec,
    from: &StateKey,
    to: &StateKey,
    terminal: Terminal,
) -> f64 {
    spec.weigh(&component_rewards(layout, from, to, terminal))
}

/// True iff hazard-free, block-free paths exist from start to exit and from
/// start to the lever (without passing the exit) and on to the exit.
pub fn check_feasible(layout: &GridLayout) -> bool {
    let open = |r: Role| r != Role::Block && r != Role::Hazard;
    let from_start = layout.bfs(layout.start, open);
    if from_start[layout.index(layout.exit)].is_none() {
        return false;
    }
    let before_exit = layout.bfs(layout.start, |r| open(r) && r != Role::Exit);
    if before_exit[layout.index(layout.lever)].is_none() {
        return false;
    }
    layout.bfs(layout.lever, open)[layout.index(layout.exit)].is_some()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for resampling attempt `attempt` of layout seed `seed`.
pub fn attempt_seed(seed: u64, attempt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(attempt))
}

/// Generates a feasible layout for the experiment grid sizes (8 or 16).
pub fn generate_layout(size: usize, seed: u64, counts: &RoleCounts) -> Result<GridLayout, GridError> {
    if size != 8 && size != 16 {
        return Err(GridError::UnsupportedSize(size));
    }
    generate_layout_any_size(size, seed, counts)
}

/// Like [`generate_layout`] but accepts any size of at least 2; used for the
/// tiny grids the exact solvers can handle.
pub fn generate_layout_any_size(
    size: usize,
    seed: u64,
    counts: &RoleCounts,
) -> Result<GridLayout, GridError> {
    if size < 2 {
        return Err(GridError::UnsupportedSize(size));
    }
    let available = size * size - 2;
    let needed = 1 + counts.gold + counts.hazards + counts.blocks;
    if needed > available {
        return Err(GridError::CountsDoNotFit { needed, available });
    }
    let start = Cell::new(0, 0);
    let exit = Cell::new(size - 1, size - 1);
    let free: Vec<Cell> = (0..size * size)
        .map(|i| Cell::new(i / size, i % size))
        .filter(|&c| c != start && c != exit)
        .collect();

    for attempt in 0..MAX_LAYOUT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt_seed(seed, attempt));
        let mut cells = free.clone();
        cells.shuffle(&mut rng);
        let mut it = cells.into_iter();
        let lever = it.next().expect("at least one free cell");
        let gold: Vec<Cell> = it.by_ref().take(counts.gold).collect();
        let hazards: Vec<Cell> = it.by_ref().take(counts.hazards).collect();
        let blocks: Vec<Cell> = it.by_ref().take(counts.blocks).collect();
        let layout = GridLayout::new(size, seed, start, exit, gold, hazards, blocks, lever)?;
        if check_feasible(&layout) {
            return Ok(layout);
        }
    }
    Err(GridError::FeasibilityExhausted(MAX_LAYOUT_ATTEMPTS))
}
