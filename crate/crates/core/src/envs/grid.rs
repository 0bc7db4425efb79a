//! Grid helpers shared by the gridworld environments.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Neighbour in direction `dir` (0 up, 1 right, 2 down, 3 left) when it
    /// lies inside a `rows x cols` grid.
    pub fn step(self, dir: u8, rows: usize, cols: usize) -> Option<Pos> {
        match dir % 4 {
            0 if self.row > 0 => Some(Pos::new(self.row - 1, self.col)),
            1 if self.col + 1 < cols => Some(Pos::new(self.row, self.col + 1)),
            2 if self.row + 1 < rows => Some(Pos::new(self.row + 1, self.col)),
            3 if self.col > 0 => Some(Pos::new(self.row, self.col - 1)),
            _ => None,
        }
    }

    /// Direction from `self` to an adjacent cell.
    pub fn direction_to(self, to: Pos) -> Option<u8> {
        if to.row + 1 == self.row && to.col == self.col {
            Some(0)
        } else if to.col == self.col + 1 && to.row == self.row {
            Some(1)
        } else if to.row == self.row + 1 && to.col == self.col {
            Some(2)
        } else if to.col + 1 == self.col && to.row == self.row {
            Some(3)
        } else {
            None
        }
    }
}

/// Breadth-first distances from `from` over free cells. Neighbours are
/// expanded in the fixed order up, right, down, left.
pub fn distances(
    rows: usize,
    cols: usize,
    from: Pos,
    blocked: &dyn Fn(Pos) -> bool,
) -> Vec<Vec<Option<usize>>> {
    let mut dist = vec![vec![None; cols]; rows];
    let mut queue = VecDeque::new();
    dist[from.row][from.col] = Some(0);
    queue.push_back(from);
    while let Some(p) = queue.pop_front() {
        let d = dist[p.row][p.col].unwrap_or(0);
        for dir in 0..4 {
            if let Some(q) = p.step(dir, rows, cols) {
                if dist[q.row][q.col].is_none() && !blocked(q) {
                    dist[q.row][q.col] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
    }
    dist
}

/// First cell on a shortest path from `from` to `goal`, or `None` when the
/// goal is unreachable or already reached.
pub fn next_cell(
    rows: usize,
    cols: usize,
    from: Pos,
    goal: Pos,
    blocked: &dyn Fn(Pos) -> bool,
) -> Option<Pos> {
    if from == goal {
        return None;
    }
    // Distances from the goal: step to any neighbour that is one closer.
    let dist = distances(rows, cols, goal, blocked);
    let here = dist[from.row][from.col]?;
    (0..4)
        .filter_map(|dir| from.step(dir, rows, cols))
        .find(|q| dist[q.row][q.col] == Some(here - 1))
}

/// Shortest-path length, if reachable.
pub fn path_length(
    rows: usize,
    cols: usize,
    from: Pos,
    goal: Pos,
    blocked: &dyn Fn(Pos) -> bool,
) -> Option<usize> {
    distances(rows, cols, from, blocked)[goal.row][goal.col]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_around_obstacle() {
        let wall = |p: Pos| p == Pos::new(1, 1);
        assert_eq!(path_length(3, 3, Pos::new(2, 1), Pos::new(0, 1), &wall), Some(4));
        let first = next_cell(3, 3, Pos::new(2, 1), Pos::new(0, 1), &wall).unwrap();
        assert_eq!(first.row, 2);
        assert_eq!(next_cell(3, 3, Pos::new(0, 1), Pos::new(0, 1), &wall), None);
    }

    #[test]
    fn directions_round_trip() {
        let p = Pos::new(1, 1);
        for dir in 0..4 {
            let q = p.step(dir, 3, 3).unwrap();
            assert_eq!(p.direction_to(q), Some(dir));
        }
        assert_eq!(Pos::new(0, 0).step(0, 3, 3), None);
    }
}
