//! 9×9 box-pushing world. A gap row separates the start area from the goal;
//! the agent can only cross once boxes have been shoved into the gap.
//!
//! Coordinates are `(x, y)` with `y` growing towards the goal side.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{StepResult, TaskId};
use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 9;
pub const GRID_STEP_LIMIT: usize = 120;
pub const GRID_ACTIONS: usize = 9;
/// empty, agent, box, gap, filled gap, wall, goal
pub const GRID_PLANES: usize = 7;

const N: i32 = GRID_SIZE as i32;
const GOAL: Pos = (4, 8);
const FIRST_GAP_ROW: i32 = 5;
/// Candidate box sites A, B, C, D.
const BOX_SITES: [Pos; 4] = [(2, 1), (2, 3), (6, 1), (6, 3)];
const ONE_BOX_EASY_SITE: Pos = (4, 1);
const HARD_WALL: Pos = (4, 5);

pub type Pos = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Floor,
    Wall,
    Gap,
    Filled,
    Goal,
}

impl Cell {
    fn walkable(self) -> bool {
        matches!(self, Cell::Floor | Cell::Filled | Cell::Goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> Pos {
        match self {
            Dir::North => (0, 1),
            Dir::East => (1, 0),
            Dir::South => (0, -1),
            Dir::West => (-1, 0),
        }
    }

    fn right(self) -> Dir {
        Dir::ALL[(self.index() + 1) % 4]
    }

    fn left(self) -> Dir {
        Dir::ALL[(self.index() + 3) % 4]
    }

    fn opposite(self) -> Dir {
        Dir::ALL[(self.index() + 2) % 4]
    }

    fn name(self) -> &'static str {
        match self {
            Dir::North => "north",
            Dir::East => "east",
            Dir::South => "south",
            Dir::West => "west",
        }
    }
}

/// Action ids 0..9 in this order. Moves are relative to the facing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridAction {
    Forward,
    Back,
    Left,
    Right,
    RotateLeft,
    RotateRight,
    /// Shove the box in front one cell further.
    Push,
    Noop,
    /// Step back and drag the box in front along.
    Interact,
}

impl GridAction {
    pub const ALL: [GridAction; GRID_ACTIONS] = [
        GridAction::Forward,
        GridAction::Back,
        GridAction::Left,
        GridAction::Right,
        GridAction::RotateLeft,
        GridAction::RotateRight,
        GridAction::Push,
        GridAction::Noop,
        GridAction::Interact,
    ];

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::Domain(format!("grid action id {id} out of range")))
    }

    pub fn id(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridVariant {
    OneBoxEasy,
    OneBoxHard,
    TwoBoxEasy,
    TwoBoxHard,
}

impl GridVariant {
    pub fn task_id(self) -> TaskId {
        match self {
            GridVariant::OneBoxEasy => TaskId::OneBoxEasy,
            GridVariant::OneBoxHard => TaskId::OneBoxHard,
            GridVariant::TwoBoxEasy => TaskId::TwoBoxEasy,
            GridVariant::TwoBoxHard => TaskId::TwoBoxHard,
        }
    }

    pub fn gap_rows(self) -> usize {
        match self {
            GridVariant::OneBoxEasy | GridVariant::OneBoxHard => 1,
            GridVariant::TwoBoxEasy | GridVariant::TwoBoxHard => 2,
        }
    }

    /// Inclusive (x range, y range) the agent may spawn in.
    fn spawn_region(self) -> ((i32, i32), (i32, i32)) {
        match self {
            GridVariant::OneBoxEasy | GridVariant::OneBoxHard => ((0, N - 1), (0, FIRST_GAP_ROW - 1)),
            GridVariant::TwoBoxEasy => ((3, 5), (0, 2)),
            GridVariant::TwoBoxHard => ((3, 5), (1, 2)),
        }
    }

    fn base_cell(self, p: Pos) -> Cell {
        let (_, y) = p;
        if p == GOAL {
            Cell::Goal
        } else if self == GridVariant::TwoBoxHard && p == HARD_WALL {
            Cell::Wall
        } else if (FIRST_GAP_ROW..FIRST_GAP_ROW + self.gap_rows() as i32).contains(&y) {
            Cell::Gap
        } else {
            Cell::Floor
        }
    }
}

fn idx((x, y): Pos) -> usize {
    (y * N + x) as usize
}

fn all_cells() -> impl Iterator<Item = Pos> {
    (0..N).flat_map(|y| (0..N).map(move |x| (x, y)))
}

fn in_bounds((x, y): Pos) -> bool {
    (0..N).contains(&x) && (0..N).contains(&y)
}

fn offset((x, y): Pos, d: Dir) -> Pos {
    let (dx, dy) = d.delta();
    (x + dx, y + dy)
}

/// Everything that changes during an episode. Boxes are kept sorted so that
/// equal configurations compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridState {
    pub variant: GridVariant,
    pub agent: Pos,
    pub facing: Dir,
    pub boxes: Vec<Pos>,
    /// Bit `idx(p)` set once the gap at `p` holds a box.
    pub filled: u128,
}

impl GridState {
    pub fn cell(&self, p: Pos) -> Cell {
        match self.variant.base_cell(p) {
            Cell::Gap if self.filled >> idx(p) & 1 == 1 => Cell::Filled,
            c => c,
        }
    }

    fn has_box(&self, p: Pos) -> bool {
        self.boxes.contains(&p)
    }

    /// Free for the agent to stand on.
    fn open(&self, p: Pos) -> bool {
        in_bounds(p) && self.cell(p).walkable() && !self.has_box(p)
    }

    fn try_move(&mut self, d: Dir) {
        let to = offset(self.agent, d);
        if self.open(to) {
            self.agent = to;
        }
    }

    /// Applies one action. Returns true when the agent stands on the goal.
    pub fn apply(&mut self, action: GridAction) -> bool {
        match action {
            GridAction::Forward => self.try_move(self.facing),
            GridAction::Back => self.try_move(self.facing.opposite()),
            GridAction::Left => self.try_move(self.facing.left()),
            GridAction::Right => self.try_move(self.facing.right()),
            GridAction::RotateLeft => self.facing = self.facing.left(),
            GridAction::RotateRight => self.facing = self.facing.right(),
            GridAction::Noop => {}
            GridAction::Push => {
                let front = offset(self.agent, self.facing);
                let beyond = offset(front, self.facing);
                if self.has_box(front) && in_bounds(beyond) && !self.has_box(beyond) {
                    match self.cell(beyond) {
                        Cell::Floor | Cell::Filled => {
                            let b = self.boxes.iter().position(|&b| b == front).unwrap();
                            self.boxes[b] = beyond;
                            self.boxes.sort_unstable();
                            self.agent = front;
                        }
                        Cell::Gap => {
                            self.boxes.retain(|&b| b != front);
                            self.filled |= 1 << idx(beyond);
                            self.agent = front;
                        }
                        Cell::Wall | Cell::Goal => {}
                    }
                }
            }
            GridAction::Interact => {
                let front = offset(self.agent, self.facing);
                let behind = offset(self.agent, self.facing.opposite());
                if self.has_box(front)
                    && self.open(behind)
                    && matches!(self.cell(behind), Cell::Floor | Cell::Filled)
                {
                    let b = self.boxes.iter().position(|&b| b == front).unwrap();
                    self.boxes[b] = self.agent;
                    self.boxes.sort_unstable();
                    self.agent = behind;
                }
            }
        }
        self.cell(self.agent) == Cell::Goal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridBoxWorld {
    variant: GridVariant,
    state: GridState,
    step_count: usize,
    done: bool,
    started: bool,
}

impl GridBoxWorld {
    pub fn new(variant: GridVariant) -> Self {
        Self {
            variant,
            state: GridState {
                variant,
                agent: (0, 0),
                facing: Dir::North,
                boxes: Vec::new(),
                filled: 0,
            },
            step_count: 0,
            done: false,
            started: false,
        }
    }

    pub fn variant(&self) -> GridVariant {
        self.variant
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn goal(&self) -> Pos {
        GOAL
    }

    pub fn first_gap_row(&self) -> i32 {
        FIRST_GAP_ROW
    }

    pub fn obs_dim(&self) -> usize {
        GRID_PLANES * GRID_SIZE * GRID_SIZE + 4
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boxes: Vec<Pos> = match self.variant {
            GridVariant::OneBoxEasy => vec![ONE_BOX_EASY_SITE],
            GridVariant::TwoBoxHard => vec![BOX_SITES[0], BOX_SITES[1]],
            GridVariant::OneBoxHard | GridVariant::TwoBoxEasy => {
                let mut picked = sample(&mut rng, BOX_SITES.len(), 2).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|k| BOX_SITES[k]).collect()
            }
        };
        let mut state = GridState {
            variant: self.variant,
            agent: (0, 0),
            facing: Dir::North,
            boxes,
            filled: 0,
        };
        let ((x0, x1), (y0, y1)) = self.variant.spawn_region();
        let legal: Vec<Pos> = (y0..=y1)
            .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
            .filter(|&p| state.open(p) && state.cell(p) == Cell::Floor)
            .collect();
        if legal.is_empty() {
            return Err(Error::config(format!("no free spawn cell for {:?}", self.variant)));
        }
        state.agent = legal[rng.random_range(0..legal.len())];
        state.facing = Dir::ALL[rng.random_range(0..4)];
        self.state = state;
        self.step_count = 0;
        self.done = false;
        self.started = true;
        Ok(self.encode_obs())
    }

    pub fn step(&mut self, action: GridAction) -> Result<StepResult> {
        if !self.started {
            return Err(Error::contract("step before reset"));
        }
        if self.done {
            return Err(Error::contract("step after episode end"));
        }
        self.step_count += 1;
        let success = self.state.apply(action);
        self.done = success || self.step_count >= GRID_STEP_LIMIT;
        Ok(StepResult {
            obs: self.encode_obs(),
            reward: if success { 1.0 } else { 0.0 },
            done: self.done,
            success,
        })
    }

    /// One-hot planes (empty, agent, box, gap, filled, wall, goal), each
    /// `y * 9 + x`, followed by the facing one-hot.
    pub fn encode_obs(&self) -> Vec<f64> {
        let cells = GRID_SIZE * GRID_SIZE;
        let mut obs = vec![0.0; self.obs_dim()];
        let s = &self.state;
        for p in all_cells() {
            let plane = if p == s.agent {
                1
            } else if s.has_box(p) {
                2
            } else {
                match s.cell(p) {
                    Cell::Floor => 0,
                    Cell::Gap => 3,
                    Cell::Filled => 4,
                    Cell::Wall => 5,
                    Cell::Goal => 6,
                }
            };
            obs[plane * cells + idx(p)] = 1.0;
        }
        obs[GRID_PLANES * cells + s.facing.index()] = 1.0;
        obs
    }

    pub fn render_ascii(&self) -> String {
        let s = &self.state;
        let mut out = String::with_capacity(GRID_SIZE * (GRID_SIZE + 1));
        for y in (0..N).rev() {
            for x in 0..N {
                let p = (x, y);
                let ch = if p == s.agent {
                    match s.facing {
                        Dir::North => '^',
                        Dir::East => '>',
                        Dir::South => 'v',
                        Dir::West => '<',
                    }
                } else if s.has_box(p) {
                    'B'
                } else {
                    match s.cell(p) {
                        Cell::Floor => '.',
                        Cell::Wall => '#',
                        Cell::Gap => '~',
                        Cell::Filled => '=',
                        Cell::Goal => 'G',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn render_cells(&self) -> serde_json::Value {
        let s = &self.state;
        let collect = |kind: Cell| -> Vec<[i32; 2]> {
            all_cells()
                .filter(|&p| s.cell(p) == kind)
                .map(|(x, y)| [x, y])
                .collect()
        };
        json!({
            "kind": "grid",
            "width": GRID_SIZE,
            "height": GRID_SIZE,
            "agent": [s.agent.0, s.agent.1],
            "facing": s.facing.name(),
            "boxes": s.boxes.iter().map(|b| [b.0, b.1]).collect::<Vec<_>>(),
            "gaps": collect(Cell::Gap),
            "filled": collect(Cell::Filled),
            "walls": collect(Cell::Wall),
            "goal": [GOAL.0, GOAL.1],
        })
    }
}
