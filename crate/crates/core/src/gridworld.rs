//! Deterministic 8-connected grid maze with a sparse terminal reward.
//!
//! Illegal moves (into a wall or off the grid) leave the cell unchanged but
//! still consume one step of the horizon, so every state has the same eight
//! actions available.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyTable, StateKey, Token};

/// Number of compass moves.
pub const NUM_ACTIONS: usize = 8;

/// Horizon multiple applied to the clean-start shortest path when a layout
/// does not set one explicitly.
pub const HORIZON_FACTOR: usize = 3;

const CANONICAL_LAYOUT: &str = include_str!("../data/canonical_maze.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::N,
        Action::NE,
        Action::E,
        Action::SE,
        Action::S,
        Action::SW,
        Action::W,
        Action::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    /// (row delta, column delta); rows grow downwards.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::N => (-1, 0),
            Action::NE => (-1, 1),
            Action::E => (0, 1),
            Action::SE => (1, 1),
            Action::S => (1, 0),
            Action::SW => (1, -1),
            Action::W => (0, -1),
            Action::NW => (-1, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::N => "N",
            Action::NE => "NE",
            Action::E => "E",
            Action::SE => "SE",
            Action::S => "S",
            Action::SW => "SW",
            Action::W => "W",
            Action::NW => "NW",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown action `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MazeState {
    pub cell: Cell,
    pub steps_taken: usize,
}

impl MazeState {
    pub const fn at(cell: Cell) -> Self {
        Self {
            cell,
            steps_taken: 0,
        }
    }
}

/// One episode. `states` has one more entry than `moves`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: MazeState,
    pub moves: Vec<Action>,
    pub states: Vec<MazeState>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn reward(&self) -> f64 {
        if self.success {
            1.0
        } else {
            0.0
        }
    }

    pub fn final_state(&self) -> MazeState {
        *self.states.last().expect("trajectory always holds its start state")
    }

    /// (state key, action) pairs in the order they were taken.
    pub fn tokens(&self, world: &GridWorld) -> Vec<Token> {
        self.moves
            .iter()
            .zip(&self.states)
            .map(|(&action, state)| Token::new(world.key(state.cell), action))
            .collect()
    }
}

/// Named cells carried by a layout file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers {
    pub clean_start: Option<Cell>,
    pub misleading_start: Option<Cell>,
    pub junction: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridWorld {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    goal: Cell,
    horizon: usize,
    markers: Markers,
}

impl GridWorld {
    /// Builds and validates a world. `walls` is row-major, `width * height` long.
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        goal: Cell,
        horizon: usize,
        markers: Markers,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Layout("empty grid".into()));
        }
        if walls.len() != width * height {
            return Err(Error::Layout(format!(
                "wall mask has {} entries, expected {}",
                walls.len(),
                width * height
            )));
        }
        if horizon == 0 {
            return Err(Error::Layout("horizon must be positive".into()));
        }
        let world = Self {
            width,
            height,
            walls,
            goal,
            horizon,
            markers,
        };
        world.validate()?;
        Ok(world)
    }

    /// An open grid without interior walls.
    pub fn open(width: usize, height: usize, goal: Cell, horizon: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![false; width * height],
            goal,
            horizon,
            Markers::default(),
        )
    }

    fn validate(&self) -> Result<()> {
        if !self.in_bounds(self.goal) || self.is_wall(self.goal) {
            return Err(Error::Layout(format!("goal {} is not an open cell", self.goal)));
        }
        for (name, cell) in [
            ("clean start", self.markers.clean_start),
            ("misleading start", self.markers.misleading_start),
            ("junction", self.markers.junction),
        ] {
            if let Some(cell) = cell {
                if !self.in_bounds(cell) || self.is_wall(cell) {
                    return Err(Error::Layout(format!("{name} {cell} is not an open cell")));
                }
            }
        }
        for cell in self.open_cells() {
            let movable = Action::ALL
                .iter()
                .any(|&a| self.neighbor(cell, a).is_some_and(|n| n != cell));
            if !movable {
                return Err(Error::Layout(format!("open cell {cell} has no legal move")));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn markers(&self) -> &Markers {
        &self.markers
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Layout("horizon must be positive".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn clean_start(&self) -> Result<Cell> {
        self.markers
            .clean_start
            .ok_or_else(|| Error::Layout("layout has no clean start".into()))
    }

    pub fn misleading_start(&self) -> Result<Cell> {
        self.markers
            .misleading_start
            .ok_or_else(|| Error::Layout("layout has no misleading start".into()))
    }

    pub fn junction(&self) -> Result<Cell> {
        self.markers
            .junction
            .ok_or_else(|| Error::Layout("layout has no junction".into()))
    }

    /// Number of policy rows needed to key every cell.
    pub fn num_keys(&self) -> usize {
        self.width * self.height
    }

    pub fn key(&self, cell: Cell) -> StateKey {
        StateKey(cell.row * self.width + cell.col)
    }

    pub fn cell_of(&self, key: StateKey) -> Cell {
        Cell::new(key.0 / self.width, key.0 % self.width)
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls[cell.row * self.width + cell.col]
    }

    pub fn is_open(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.is_wall(cell)
    }

    pub fn open_cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height)
            .flat_map(move |row| (0..self.width).map(move |col| Cell::new(row, col)))
            .filter(move |&c| !self.is_wall(c))
    }

    /// Cell reached by `action`, or `None` when the move is blocked.
    pub fn neighbor(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dr, dc) = action.delta();
        let row = cell.row.checked_add_signed(dr)?;
        let col = cell.col.checked_add_signed(dc)?;
        let next = Cell::new(row, col);
        self.is_open(next).then_some(next)
    }

    /// Deterministic transition; blocked moves keep the cell.
    pub fn next_cell(&self, cell: Cell, action: Action) -> Cell {
        self.neighbor(cell, action).unwrap_or(cell)
    }

    pub fn check_state(&self, state: MazeState) -> Result<()> {
        if !self.is_open(state.cell) {
            return Err(Error::InvalidState(format!("{} is not an open cell", state.cell)));
        }
        if state.steps_taken > self.horizon {
            return Err(Error::InvalidState(format!(
                "steps_taken {} exceeds horizon {}",
                state.steps_taken, self.horizon
            )));
        }
        Ok(())
    }

    pub fn step(&self, state: MazeState, action: Action) -> Result<MazeState> {
        self.check_state(state)?;
        if state.steps_taken >= self.horizon {
            return Err(Error::InvalidState("horizon exhausted".into()));
        }
        Ok(self.advance(state, action))
    }

    #[inline]
    pub(crate) fn advance(&self, state: MazeState, action: Action) -> MazeState {
        MazeState {
            cell: self.next_cell(state.cell, action),
            steps_taken: state.steps_taken + 1,
        }
    }

    /// Samples actions from `policy` until the goal or the horizon.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        policy: &PolicyTable,
        start: MazeState,
        rng: &mut R,
    ) -> Result<Trajectory> {
        self.check_state(start)?;
        if policy.num_rows() < self.num_keys() {
            return Err(Error::InvalidArgument(format!(
                "policy has {} rows, world needs {}",
                policy.num_rows(),
                self.num_keys()
            )));
        }
        Ok(self.rollout_unchecked(policy, start, rng))
    }

    pub(crate) fn rollout_unchecked<R: Rng + ?Sized>(
        &self,
        policy: &PolicyTable,
        start: MazeState,
        rng: &mut R,
    ) -> Trajectory {
        let mut state = start;
        let mut moves = Vec::new();
        let mut states = vec![state];
        while state.cell != self.goal && state.steps_taken < self.horizon {
            let action = policy.sample_action(self.key(state.cell), rng);
            state = self.advance(state, action);
            moves.push(action);
            states.push(state);
        }
        Trajectory {
            start,
            moves,
            states,
            success: state.cell == self.goal,
        }
    }

    /// Replays a fixed action list; stops early at the goal.
    pub fn replay(&self, start: MazeState, actions: &[Action]) -> Result<Trajectory> {
        self.check_state(start)?;
        let mut state = start;
        let mut moves = Vec::new();
        let mut states = vec![state];
        for &action in actions {
            if state.cell == self.goal {
                break;
            }
            state = self.step(state, action)?;
            moves.push(action);
            states.push(state);
        }
        Ok(Trajectory {
            start,
            moves,
            states,
            success: state.cell == self.goal,
        })
    }

    /// Breadth-first move distances from `from`, treating `blocked` as walls.
    pub fn distances(&self, from: Cell, blocked: &[Cell]) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_keys()];
        if !self.is_open(from) || blocked.contains(&from) {
            return dist;
        }
        dist[self.key(from).0] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(cell) = queue.pop_front() {
            let d = dist[self.key(cell).0].expect("queued cells have a distance");
            for action in Action::ALL {
                if let Some(next) = self.neighbor(cell, action) {
                    let slot = &mut dist[self.key(next).0];
                    if slot.is_none() && !blocked.contains(&next) {
                        *slot = Some(d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
        dist
    }

    pub fn shortest_path_len(&self, from: Cell, to: Cell) -> Option<usize> {
        self.distances(from, &[])[self.key(to).0]
    }

    /// Parses the plain-text layout format (see `data/canonical_maze.txt`).
    pub fn parse_layout(text: &str) -> Result<Self> {
        let mut horizon = None;
        let mut rows: Vec<&str> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim_end();
            if trimmed.is_empty() || trimmed.starts_with("# ") || trimmed == "#" {
                continue;
            }
            if let Some(value) = trimmed.strip_prefix("horizon") {
                let value = value.trim().trim_start_matches('=').trim();
                horizon = Some(value.parse::<usize>().map_err(|_| {
                    Error::Layout(format!("bad horizon value `{value}`"))
                })?);
                continue;
            }
            rows.push(trimmed);
        }
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if height == 0 || width == 0 {
            return Err(Error::Layout("layout has no grid rows".into()));
        }
        let mut walls = Vec::with_capacity(width * height);
        let mut goal = None;
        let mut markers = Markers::default();
        for (row, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Layout(format!(
                    "row {row} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            for (col, ch) in line.chars().enumerate() {
                let cell = Cell::new(row, col);
                let slot = match ch {
                    '#' => None,
                    '.' => Some(None),
                    'G' => Some(Some(&mut goal)),
                    'S' => Some(Some(&mut markers.clean_start)),
                    'M' => Some(Some(&mut markers.misleading_start)),
                    'J' => Some(Some(&mut markers.junction)),
                    other => {
                        return Err(Error::Layout(format!(
                            "unknown character `{other}` at {cell}"
                        )))
                    }
                };
                walls.push(slot.is_none());
                if let Some(Some(marker)) = slot {
                    if marker.replace(cell).is_some() {
                        return Err(Error::Layout(format!("duplicate `{ch}` marker at {cell}")));
                    }
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::Layout("layout has no goal `G`".into()))?;
        // Validate geometry with a placeholder horizon before deriving the real one.
        let provisional = Self::new(width, height, walls, goal, 1, markers)?;
        let horizon = match horizon {
            Some(h) => h,
            None => {
                let start = provisional.clean_start().map_err(|_| {
                    Error::Layout("no horizon line and no clean start to derive it from".into())
                })?;
                let d = provisional.shortest_path_len(start, goal).ok_or_else(|| {
                    Error::Layout("goal unreachable from the clean start".into())
                })?;
                HORIZON_FACTOR * d.max(1)
            }
        };
        let world = provisional.with_horizon(horizon)?;
        world.validate_reachability()?;
        Ok(world)
    }

    /// Every declared start must reach the goal within the horizon.
    fn validate_reachability(&self) -> Result<()> {
        for (name, cell) in [
            ("clean start", self.markers.clean_start),
            ("misleading start", self.markers.misleading_start),
        ] {
            if let Some(cell) = cell {
                match self.shortest_path_len(cell, self.goal) {
                    Some(d) if d <= self.horizon => {}
                    _ => {
                        return Err(Error::Layout(format!(
                            "goal not reachable from the {name} within horizon {}",
                            self.horizon
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load_layout(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_layout(&std::fs::read_to_string(path)?)
    }

    /// Renders the grid rows in the layout format (no comments).
    pub fn to_layout(&self) -> String {
        let mut out = format!("horizon = {}\n", self.horizon);
        for row in 0..self.height {
            for col in 0..self.width {
                let cell = Cell::new(row, col);
                let ch = if self.is_wall(cell) {
                    '#'
                } else if cell == self.goal {
                    'G'
                } else if Some(cell) == self.markers.clean_start {
                    'S'
                } else if Some(cell) == self.markers.misleading_start {
                    'M'
                } else if Some(cell) == self.markers.junction {
                    'J'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// The shipped 12x12 layout.
pub fn canonical_maze() -> GridWorld {
    GridWorld::parse_layout(CANONICAL_LAYOUT).expect("bundled layout is valid")
}

/// Cell on the canonical corridor where two equal-length routes around a
/// pillar split on their way to the junction.
pub const CANONICAL_FORK: Cell = Cell::new(6, 9);

pub fn canonical_layout_text() -> &'static str {
    CANONICAL_LAYOUT
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_world() -> GridWorld {
        GridWorld::open(10, 10, Cell::new(9, 9), 20).unwrap()
    }

    #[test]
    fn open_grid_motion() {
        let w = open_world();
        let s = w.step(MazeState::at(Cell::new(5, 5)), Action::E).unwrap();
        assert_eq!(s.cell, Cell::new(5, 6));
        assert_eq!(s.steps_taken, 1);
    }

    #[test]
    fn boundary_is_noop_that_costs_a_step() {
        let w = open_world();
        let s = w.step(MazeState::at(Cell::new(0, 0)), Action::N).unwrap();
        assert_eq!(s.cell, Cell::new(0, 0));
        assert_eq!(s.steps_taken, 1);
    }

    #[test]
    fn wall_is_noop_that_costs_a_step() {
        let mut walls = vec![false; 100];
        walls[3 * 10 + 4] = true;
        let w = GridWorld::new(10, 10, walls, Cell::new(9, 9), 20, Markers::default()).unwrap();
        let s = w.step(MazeState::at(Cell::new(3, 3)), Action::E).unwrap();
        assert_eq!(s.cell, Cell::new(3, 3));
        assert_eq!(s.steps_taken, 1);
    }

    #[test]
    fn step_rejects_invalid_states() {
        let mut walls = vec![false; 100];
        walls[0] = true;
        let w = GridWorld::new(10, 10, walls, Cell::new(9, 9), 20, Markers::default()).unwrap();
        assert!(w.step(MazeState::at(Cell::new(0, 0)), Action::E).is_err());
        let exhausted = MazeState {
            cell: Cell::new(2, 2),
            steps_taken: 20,
        };
        assert!(w.step(exhausted, Action::E).is_err());
    }

    #[test]
    fn start_at_goal_is_immediate_success() {
        let w = open_world();
        let p = PolicyTable::uniform(w.num_keys(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = w.rollout(&p, MazeState::at(w.goal()), &mut rng).unwrap();
        assert_eq!(t.len(), 0);
        assert!(t.success);
    }

    #[test]
    fn horizon_one_far_goal_fails() {
        let w = open_world().with_horizon(1).unwrap();
        let p = PolicyTable::uniform(w.num_keys(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = w.rollout(&p, MazeState::at(Cell::new(0, 0)), &mut rng).unwrap();
        assert_eq!(t.len(), 1);
        assert!(!t.success);
    }

    #[test]
    fn rollout_respects_transition_and_horizon() {
        let w = canonical_maze();
        let p = PolicyTable::uniform(w.num_keys(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let start = MazeState::at(w.misleading_start().unwrap());
            let t = w.rollout(&p, start, &mut rng).unwrap();
            assert!(t.len() <= w.horizon());
            assert_eq!(t.states.len(), t.moves.len() + 1);
            for (i, &a) in t.moves.iter().enumerate() {
                assert_eq!(w.step(t.states[i], a).unwrap(), t.states[i + 1]);
            }
            let hit = t.states.iter().any(|s| s.cell == w.goal());
            assert_eq!(hit, t.success);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let w = canonical_maze();
        let p = PolicyTable::uniform(w.num_keys(), 1.0);
        let start = MazeState::at(w.clean_start().unwrap());
        let a = w.rollout(&p, start, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = w.rollout(&p, start, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_layout_structure() {
        let w = canonical_maze();
        assert_eq!((w.width(), w.height()), (12, 12));
        let clean = w.clean_start().unwrap();
        let mislead = w.misleading_start().unwrap();
        let junction = w.junction().unwrap();
        assert_ne!(clean, mislead);
        // Clean start top-right, goal bottom-left.
        assert!(clean.row < w.height() / 2 && clean.col >= w.width() / 2);
        assert!(w.goal().row >= w.height() / 2 && w.goal().col < w.width() / 2);
        let d_clean = w.shortest_path_len(clean, w.goal()).unwrap();
        assert!(d_clean < w.horizon());
        assert_eq!(w.horizon(), HORIZON_FACTOR * d_clean);
        assert!(w.shortest_path_len(mislead, w.goal()).unwrap() < w.horizon());
        // Removing the junction disconnects the misleading start from the goal.
        let cut = w.distances(mislead, &[junction]);
        assert_eq!(cut[w.key(w.goal()).0], None);
        assert_eq!(cut[w.key(clean).0], None);
    }

    #[test]
    fn canonical_fork_splits_around_a_pillar() {
        let w = canonical_maze();
        let j = w.junction().unwrap();
        assert_eq!(w.neighbor(CANONICAL_FORK, Action::N), None);
        let left = w.neighbor(CANONICAL_FORK, Action::NW).unwrap();
        let right = w.neighbor(CANONICAL_FORK, Action::NE).unwrap();
        // Each side reaches the junction in three moves without touching the other.
        assert_eq!(w.distances(left, &[right, CANONICAL_FORK])[w.key(j).0], Some(3));
        assert_eq!(w.distances(right, &[left, CANONICAL_FORK])[w.key(j).0], Some(3));
    }

    #[test]
    fn layout_round_trips_through_text() {
        let w = canonical_maze();
        let again = GridWorld::parse_layout(&w.to_layout()).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn layout_rejects_bad_input() {
        assert!(GridWorld::parse_layout("###\n#.#\n###\n").is_err()); // no goal
        assert!(GridWorld::parse_layout("horizon = 4\n#G#\n#x#\n###\n").is_err());
        assert!(GridWorld::parse_layout("horizon = 4\nGG.\n...\n").is_err());
        assert!(GridWorld::parse_layout("horizon = 4\nG..\n..\n").is_err());
        // Start cannot reach the goal within the horizon.
        assert!(GridWorld::parse_layout("horizon = 1\nG...S\n").is_err());
    }
}
