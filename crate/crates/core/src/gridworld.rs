//! Four-rooms grid world and offline dataset generation.
//!
//! The default layout is a 15x15 grid split into four 7x7 rooms by a wall
//! row and a wall column, with one doorway per wall segment, a one-cell
//! obstacle at each room center, and a terminal goal in the bottom-right
//! room. Cells map affinely onto ambient coordinates in [-1, 1]^2.

use rand::Rng;

use crate::dataset::{Dataset, RawTransition};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_rng_indexed};

pub const NUM_ACTIONS: usize = 4;

/// Row/col deltas for actions 0..4: up, down, left, right.
const DELTAS: [(isize, isize); NUM_ACTIONS] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

pub const MAX_MOVE_CELLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub next: Cell,
    /// Raw environment reward (1 at the goal, else 0).
    pub reward: f64,
    pub done: bool,
    pub cells_moved: usize,
}

/// Behavior policy used for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorPolicy {
    UniformRandom,
    /// With probability eps acts uniformly, otherwise takes the action that
    /// most reduces BFS distance to the goal (ties to the lowest index).
    EpsGreedyBfs { eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourRooms {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    goal: Cell,
}

impl FourRooms {
    /// The standard 15x15 four-rooms layout: wall row/column 7 with doorways
    /// at (7,3), (7,11), (3,7), (11,7); obstacles at each room center; goal
    /// at (13,13).
    pub fn default_layout() -> Self {
        let (rows, cols) = (15, 15);
        let mut walls = vec![false; rows * cols];
        for c in 0..cols {
            walls[7 * cols + c] = true;
        }
        for r in 0..rows {
            walls[r * cols + 7] = true;
        }
        for (r, c) in [(7, 3), (7, 11), (3, 7), (11, 7)] {
            walls[r * cols + c] = false;
        }
        for (r, c) in [(3, 3), (3, 11), (11, 3), (11, 11)] {
            walls[r * cols + c] = true;
        }
        FourRooms {
            rows,
            cols,
            walls,
            goal: Cell::new(13, 13),
        }
    }

    /// Parses a text layout: '#' wall, '.' free, 'G' goal (exactly one).
    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::invalid("layout text is empty"));
        }
        let rows = lines.len();
        let cols = lines[0].chars().count();
        let mut walls = vec![false; rows * cols];
        let mut goal = None;
        for (r, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != cols {
                return Err(Error::invalid(format!(
                    "layout row {r} has {} cells, expected {cols}",
                    chars.len()
                )));
            }
            for (c, ch) in chars.iter().enumerate() {
                match ch {
                    '#' => walls[r * cols + c] = true,
                    '.' => {}
                    'G' => {
                        if goal.replace(Cell::new(r, c)).is_some() {
                            return Err(Error::invalid("layout has more than one goal"));
                        }
                    }
                    other => {
                        return Err(Error::invalid(format!("unknown layout character {other:?}")))
                    }
                }
            }
        }
        let goal = goal.ok_or_else(|| Error::invalid("layout has no goal cell"))?;
        Ok(FourRooms {
            rows,
            cols,
            walls,
            goal,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cell = Cell::new(r, c);
                out.push(if self.is_wall(cell) {
                    '#'
                } else if cell == self.goal {
                    'G'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        cell.row >= self.rows || cell.col >= self.cols || self.walls[cell.row * self.cols + cell.col]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_wall(cell)
    }

    /// All non-wall cells in row-major order (the goal included).
    pub fn free_cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cell = Cell::new(r, c);
                if self.is_free(cell) {
                    cells.push(cell);
                }
            }
        }
        cells
    }

    /// Ambient coordinates of a cell: (x from column, y from row), each
    /// mapped affinely onto [-1, 1].
    pub fn to_ambient(&self, cell: Cell) -> [f64; 2] {
        [
            2.0 * cell.col as f64 / (self.cols - 1) as f64 - 1.0,
            2.0 * cell.row as f64 / (self.rows - 1) as f64 - 1.0,
        ]
    }

    /// Moves `count` cells in the action direction, stopping before walls
    /// and grid edges; stops on the goal if the move passes over it.
    pub fn step_with_count(&self, cell: Cell, action: usize, count: usize) -> StepOutcome {
        assert!(action < NUM_ACTIONS, "action index out of range");
        let (dr, dc) = DELTAS[action];
        let mut cur = cell;
        let mut moved = 0;
        for _ in 0..count {
            let nr = cur.row as isize + dr;
            let nc = cur.col as isize + dc;
            if nr < 0 || nc < 0 {
                break;
            }
            let next = Cell::new(nr as usize, nc as usize);
            if self.is_wall(next) {
                break;
            }
            cur = next;
            moved += 1;
            if cur == self.goal {
                break;
            }
        }
        let done = cur == self.goal;
        StepOutcome {
            next: cur,
            reward: if done { 1.0 } else { 0.0 },
            done,
            cells_moved: moved,
        }
    }

    /// Environment step: the move count is drawn uniformly from {1, 2, 3}.
    pub fn step(&self, cell: Cell, action: usize, rng: &mut impl Rng) -> StepOutcome {
        let count = rng.gen_range(1..=MAX_MOVE_CELLS);
        self.step_with_count(cell, action, count)
    }

    /// BFS distances (in single-cell moves) from `source` to every cell;
    /// `None` marks walls and unreachable cells.
    pub fn bfs_distances(&self, source: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.rows * self.cols];
        if self.is_wall(source) {
            return dist;
        }
        let mut queue = std::collections::VecDeque::new();
        dist[source.row * self.cols + source.col] = Some(0);
        queue.push_back(source);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur.row * self.cols + cur.col].expect("visited");
            for (dr, dc) in DELTAS {
                let nr = cur.row as isize + dr;
                let nc = cur.col as isize + dc;
                if nr < 0 || nc < 0 {
                    continue;
                }
                let next = Cell::new(nr as usize, nc as usize);
                if self.is_wall(next) {
                    continue;
                }
                let slot = &mut dist[next.row * self.cols + next.col];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    /// Shortest land distance in cell moves; `None` encodes "unreachable"
    /// (the +infinity sentinel).
    pub fn true_land_distance(&self, a: Cell, b: Cell) -> Option<usize> {
        if self.is_wall(a) || self.is_wall(b) {
            return None;
        }
        self.bfs_distances(a)[b.row * self.cols + b.col]
    }

    /// Greedy action toward the goal under BFS distance; `dist_to_goal` is
    /// the output of `bfs_distances(goal)`. Ties break to the lowest index.
    fn greedy_action(&self, cell: Cell, dist_to_goal: &[Option<usize>]) -> usize {
        let mut best = 0;
        let mut best_d = usize::MAX;
        for (a, (dr, dc)) in DELTAS.iter().enumerate() {
            let nr = cell.row as isize + dr;
            let nc = cell.col as isize + dc;
            if nr < 0 || nc < 0 {
                continue;
            }
            let next = Cell::new(nr as usize, nc as usize);
            if self.is_wall(next) {
                continue;
            }
            if let Some(d) = dist_to_goal[next.row * self.cols + next.col] {
                if d < best_d {
                    best_d = d;
                    best = a;
                }
            }
        }
        best
    }

    /// Generates `n` transitions of offline data. Episodes start at a
    /// uniform random free cell (goal excluded) and end at the goal or after
    /// `episode_cap` steps; the last episode may be truncated at row `n`.
    pub fn generate_dataset(
        &self,
        n: usize,
        policy: BehaviorPolicy,
        episode_cap: usize,
        seed: u64,
    ) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("dataset size must be positive"));
        }
        if episode_cap == 0 {
            return Err(Error::invalid("episode cap must be positive"));
        }
        if let BehaviorPolicy::EpsGreedyBfs { eps } = policy {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::invalid("eps must lie in [0, 1]"));
            }
        }
        let starts: Vec<Cell> = self
            .free_cells()
            .into_iter()
            .filter(|&c| c != self.goal)
            .collect();
        if starts.is_empty() {
            return Err(Error::invalid("layout has no valid start cells"));
        }
        let dist_to_goal = self.bfs_distances(self.goal);
        let mut raw = Vec::with_capacity(n);
        let mut episode: u64 = 0;
        let mut init_rng = derive_rng(seed, "gridworld/init");
        'outer: loop {
            let mut rng = derive_rng_indexed(seed, "gridworld/episode", episode);
            let mut cell = starts[init_rng.gen_range(0..starts.len())];
            for _ in 0..episode_cap {
                let action = match policy {
                    BehaviorPolicy::UniformRandom => rng.gen_range(0..NUM_ACTIONS),
                    BehaviorPolicy::EpsGreedyBfs { eps } => {
                        if rng.gen_range(0.0..1.0) < eps {
                            rng.gen_range(0..NUM_ACTIONS)
                        } else {
                            self.greedy_action(cell, &dist_to_goal)
                        }
                    }
                };
                let out = self.step(cell, action, &mut rng);
                let mut onehot = vec![0.0; NUM_ACTIONS];
                onehot[action] = 1.0;
                raw.push(RawTransition {
                    state: self.to_ambient(cell).to_vec(),
                    action: onehot,
                    reward: out.reward,
                    next_state: self.to_ambient(out.next).to_vec(),
                    episode,
                });
                if raw.len() == n {
                    break 'outer;
                }
                if out.done {
                    break;
                }
                cell = out.next;
            }
            episode += 1;
        }
        Dataset::from_raw(2, NUM_ACTIONS, raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn open_layout() -> FourRooms {
        // 15x15 with no interior walls; goal tucked in a corner.
        let mut text = String::new();
        for r in 0..15 {
            for c in 0..15 {
                text.push(if (r, c) == (14, 14) { 'G' } else { '.' });
            }
            text.push('\n');
        }
        FourRooms::from_text(&text).unwrap()
    }

    #[test]
    fn default_layout_counts() {
        let env = FourRooms::default_layout();
        // 225 cells - 25 wall cells (29 in the cross minus 4 doorways) - 4 obstacles.
        assert_eq!(env.free_cells().len(), 196);
        assert!(env.is_wall(Cell::new(7, 0)));
        assert!(env.is_free(Cell::new(7, 3)));
        assert!(env.is_wall(Cell::new(3, 3)));
        assert_eq!(env.goal(), Cell::new(13, 13));
    }

    #[test]
    fn layout_text_round_trips() {
        let env = FourRooms::default_layout();
        let parsed = FourRooms::from_text(&env.to_text()).unwrap();
        assert_eq!(env, parsed);
    }

    #[test]
    fn bad_layouts_are_rejected() {
        assert!(FourRooms::from_text("..\n.").is_err());
        assert!(FourRooms::from_text("..\n..").is_err()); // no goal
        assert!(FourRooms::from_text("G.\n.G").is_err()); // two goals
        assert!(FourRooms::from_text("G?\n..").is_err()); // unknown char
    }

    #[test]
    fn ambient_map_covers_unit_square() {
        let env = FourRooms::default_layout();
        assert_eq!(env.to_ambient(Cell::new(0, 0)), [-1.0, -1.0]);
        assert_eq!(env.to_ambient(Cell::new(14, 14)), [1.0, 1.0]);
        assert_eq!(env.to_ambient(Cell::new(7, 7)), [0.0, 0.0]);
    }

    #[test]
    fn blocked_single_step_stays_put() {
        let env = FourRooms::default_layout();
        // (6,6) moving down runs into wall row 7 (no doorway at col 6).
        for count in 1..=3 {
            let out = env.step_with_count(Cell::new(6, 6), 1, count);
            assert_eq!(out.next, Cell::new(6, 6));
            assert_eq!(out.reward, 0.0);
            assert!(!out.done);
            assert_eq!(out.cells_moved, 0);
        }
        // Grid edge behaves like a wall.
        let out = env.step_with_count(Cell::new(0, 4), 0, 3);
        assert_eq!(out.next, Cell::new(0, 4));
    }

    #[test]
    fn corridor_count_two_moves_exactly_two() {
        let env = FourRooms::default_layout();
        let out = env.step_with_count(Cell::new(1, 1), 3, 2);
        assert_eq!(out.next, Cell::new(1, 3));
        assert_eq!(out.cells_moved, 2);
    }

    #[test]
    fn move_stops_before_obstacle() {
        let env = FourRooms::default_layout();
        // (3,1) moving right with count 3 would pass (3,3); obstacle stops it at (3,2).
        let out = env.step_with_count(Cell::new(3, 1), 3, 3);
        assert_eq!(out.next, Cell::new(3, 2));
        assert_eq!(out.cells_moved, 1);
    }

    #[test]
    fn goal_is_absorbing_mid_move() {
        let env = FourRooms::default_layout();
        let out = env.step_with_count(Cell::new(13, 11), 3, 3);
        assert_eq!(out.next, Cell::new(13, 13));
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
        assert_eq!(out.cells_moved, 2);
    }

    #[test]
    fn step_count_distribution_is_uniform() {
        let env = open_layout();
        let mut rng = derive_rng(123, "counts");
        let mut counts = [0usize; MAX_MOVE_CELLS];
        let n = 30_000;
        for _ in 0..n {
            let out = env.step(Cell::new(7, 7), 3, &mut rng);
            counts[out.cells_moved - 1] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 1.0 / 3.0).abs() < 0.02 / 3.0,
                "count {} frequency {freq}",
                k + 1
            );
        }
    }

    #[test]
    fn random_policy_action_marginal_is_uniform() {
        let env = open_layout();
        let ds = env
            .generate_dataset(30_000, BehaviorPolicy::UniformRandom, 50, 9)
            .unwrap();
        let mut counts = [0usize; NUM_ACTIONS];
        for t in &ds.transitions {
            let a = t.action.iter().position(|&v| v == 1.0).unwrap();
            counts[a] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / ds.len() as f64;
            assert!((freq - 0.25).abs() < 0.02 * 0.25, "frequency {freq}");
        }
    }

    #[test]
    fn all_free_cells_are_reachable_from_goal() {
        let env = FourRooms::default_layout();
        let dist = env.bfs_distances(env.goal());
        for cell in env.free_cells() {
            assert!(dist[cell.row * env.cols() + cell.col].is_some(), "{cell:?}");
        }
    }

    #[test]
    fn land_distance_hand_cases() {
        let env = FourRooms::default_layout();
        // Straddling the (7,3) doorway.
        assert_eq!(env.true_land_distance(Cell::new(6, 3), Cell::new(8, 3)), Some(2));
        assert_eq!(env.true_land_distance(Cell::new(5, 5), Cell::new(5, 6)), Some(1));
        assert_eq!(env.true_land_distance(Cell::new(2, 2), Cell::new(2, 2)), Some(0));
        // (6,6) to (8,6) must detour through the (7,3) doorway.
        assert_eq!(env.true_land_distance(Cell::new(6, 6), Cell::new(8, 6)), Some(8));
        // Walls have no distance.
        assert_eq!(env.true_land_distance(Cell::new(7, 0), Cell::new(1, 1)), None);
    }

    #[test]
    fn dataset_states_stay_in_unit_box_and_are_deterministic() {
        let env = FourRooms::default_layout();
        let a = env
            .generate_dataset(2000, BehaviorPolicy::EpsGreedyBfs { eps: 0.5 }, 50, 77)
            .unwrap();
        let b = env
            .generate_dataset(2000, BehaviorPolicy::EpsGreedyBfs { eps: 0.5 }, 50, 77)
            .unwrap();
        assert_eq!(a, b);
        for t in &a.transitions {
            assert!(t.state.iter().chain(&t.next_state).all(|v| v.abs() <= 1.0));
        }
        // Normalized rewards live in [-1, 1] with the goal at +1.
        assert_eq!(a.r_max, 1.0);
        assert_eq!(a.r_min, 0.0);
        assert!(a.transitions.iter().all(|t| t.reward == -1.0 || t.reward == 1.0));
    }

    #[test]
    fn medium_dataset_reaches_goal_often() {
        let env = FourRooms::default_layout();
        let ds = env
            .generate_dataset(5000, BehaviorPolicy::EpsGreedyBfs { eps: 0.5 }, 50, 3)
            .unwrap();
        let mean = ds.mean_episode_return();
        assert!(mean > 0.5, "mean episodic return {mean}");
    }

    #[test]
    fn invalid_generation_arguments_are_rejected() {
        let env = FourRooms::default_layout();
        assert!(env.generate_dataset(0, BehaviorPolicy::UniformRandom, 50, 1).is_err());
        assert!(env
            .generate_dataset(10, BehaviorPolicy::EpsGreedyBfs { eps: 1.5 }, 50, 1)
            .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn steps_stay_on_free_cells(row in 0usize..15, col in 0usize..15, action in 0usize..4, count in 1usize..4) {
            let env = FourRooms::default_layout();
            let cell = Cell::new(row, col);
            prop_assume!(env.is_free(cell));
            let out = env.step_with_count(cell, action, count);
            prop_assert!(env.is_free(out.next));
            prop_assert!(out.cells_moved <= count);
        }

        #[test]
        fn land_distance_dominates_euclidean(a in 0usize..196, b in 0usize..196) {
            let env = FourRooms::default_layout();
            let cells = env.free_cells();
            let (ca, cb) = (cells[a], cells[b]);
            if let Some(d) = env.true_land_distance(ca, cb) {
                let dx = ca.row as f64 - cb.row as f64;
                let dy = ca.col as f64 - cb.col as f64;
                prop_assert!(d as f64 >= (dx * dx + dy * dy).sqrt() - 1e-12);
            }
        }
    }
}
