//! Gridded localization space, gateway geometry and the nine-action move set.
//!
//! Axis convention: row index grows northward (+y), column index grows
//! eastward (+x). Cell `(0, 0)` is the southwest corner and its southwest
//! vertex sits at [`GridMap::origin`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A grid cell. Only [`GridMap::cell`] and the grid's own iterators create
/// these, so every value is in bounds for the map that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    row: usize,
    col: usize,
}

impl CellIndex {
    pub fn row(&self) -> usize {
        self.row
    }

    pub fn col(&self) -> usize {
        self.col
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cell_size: f64,
    origin: Position,
}

impl GridMap {
    pub fn new(rows: usize, cols: usize, cell_size: f64, origin: Position) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGrid(format!("{rows}x{cols} has no cells")));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidGrid(format!("cell size {cell_size} must be positive")));
        }
        if !(origin.x.is_finite() && origin.y.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { rows, cols, cell_size, origin })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Position {
        self.origin
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> Result<CellIndex> {
        if row < self.rows && col < self.cols {
            Ok(CellIndex { row, col })
        } else {
            Err(Error::CellOutOfBounds { row, col, rows: self.rows, cols: self.cols })
        }
    }

    /// Row-major flat index.
    pub fn flat_index(&self, cell: CellIndex) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_from_flat(&self, index: usize) -> Result<CellIndex> {
        self.cell(index / self.cols, index % self.cols)
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.rows).flat_map(move |row| (0..self.cols).map(move |col| CellIndex { row, col }))
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn cell_center(&self, cell: CellIndex) -> Position {
        Position {
            x: self.origin.x + (cell.col as f64 + 0.5) * self.cell_size,
            y: self.origin.y + (cell.row as f64 + 0.5) * self.cell_size,
        }
    }

    /// Cell whose center is closest to `pos`. Positions off the grid clamp to
    /// the nearest boundary cell.
    pub fn nearest_cell(&self, pos: Position) -> CellIndex {
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        CellIndex {
            row: clamp((pos.y - self.origin.y) / self.cell_size, self.rows),
            col: clamp((pos.x - self.origin.x) / self.cell_size, self.cols),
        }
    }

    /// Moves `cell` by `action`, failing if the result would leave the grid.
    pub fn apply_action(&self, cell: CellIndex, action: Action) -> Result<CellIndex> {
        let (dr, dc) = action.offset();
        let row = cell.row as isize + dr;
        let col = cell.col as isize + dc;
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            return Err(Error::ActionLeavesGrid { action, row: cell.row, col: cell.col });
        }
        Ok(CellIndex { row: row as usize, col: col as usize })
    }

    pub fn available_actions(&self, cell: CellIndex) -> ActionSet {
        Action::ALL
            .iter()
            .filter(|a| self.apply_action(cell, **a).is_ok())
            .copied()
            .collect()
    }
}

/// The nine moves: stay, or one cell toward a compass direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Stay,
    N,
    S,
    W,
    E,
    NW,
    NE,
    SW,
    SE,
}

impl Action {
    pub const COUNT: usize = 9;

    /// Indexed by [`Action::index`]; this order is also the Q-network's output order.
    pub const ALL: [Action; Action::COUNT] = [
        Action::Stay,
        Action::N,
        Action::S,
        Action::W,
        Action::E,
        Action::NW,
        Action::NE,
        Action::SW,
        Action::SE,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    /// `(Δrow, Δcol)` with north = +row and east = +col.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Action::Stay => (0, 0),
            Action::N => (1, 0),
            Action::S => (-1, 0),
            Action::W => (0, -1),
            Action::E => (0, 1),
            Action::NW => (1, -1),
            Action::NE => (1, 1),
            Action::SW => (-1, -1),
            Action::SE => (-1, 1),
        }
    }
}

/// Subset of the nine actions, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ActionSet(u16);

impl ActionSet {
    pub const fn empty() -> Self {
        ActionSet(0)
    }

    pub const fn all() -> Self {
        ActionSet((1 << Action::COUNT) - 1)
    }

    pub fn insert(&mut self, action: Action) {
        self.0 |= 1 << action.index();
    }

    pub fn contains(&self, action: Action) -> bool {
        self.0 & (1 << action.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn bits(&self) -> u16 {
        self.0
    }

    pub fn from_bits(bits: u16) -> Self {
        ActionSet(bits & Self::all().0)
    }

    /// Members in [`Action::ALL`] order.
    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        Action::ALL.into_iter().filter(|a| self.contains(*a))
    }

    /// The `n`-th member in [`Action::ALL`] order.
    pub fn nth(&self, n: usize) -> Option<Action> {
        self.iter().nth(n)
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::empty();
        for a in iter {
            set.insert(a);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gateway {
    /// 1-based.
    pub id: u32,
    pub position: Position,
}

/// `gw_rows × gw_cols` gateways on a regular lattice, row-major (rows step
/// north by `dy`, columns step east by `dx`), ids `1..=N`.
pub fn gateway_grid_layout(
    gw_rows: usize,
    gw_cols: usize,
    dx: f64,
    dy: f64,
    origin: Position,
) -> Vec<Gateway> {
    let mut gateways = Vec::with_capacity(gw_rows * gw_cols);
    for r in 0..gw_rows {
        for c in 0..gw_cols {
            gateways.push(Gateway {
                id: (gateways.len() + 1) as u32,
                position: Position::new(origin.x + c as f64 * dx, origin.y + r as f64 * dy),
            });
        }
    }
    gateways
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(rows: usize, cols: usize) -> GridMap {
        GridMap::new(rows, cols, 5.0, Position::new(0.0, 0.0)).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridMap::new(0, 3, 5.0, Position::new(0.0, 0.0)).is_err());
        assert!(GridMap::new(3, 3, 0.0, Position::new(0.0, 0.0)).is_err());
        assert!(GridMap::new(3, 3, -1.0, Position::new(0.0, 0.0)).is_err());
        assert!(map(16, 28).cell(16, 0).is_err());
        assert_eq!(map(16, 28).cell_count(), 448);
    }

    #[test]
    fn cell_centers() {
        let m = map(16, 28);
        assert_eq!(m.cell_center(m.cell(0, 0).unwrap()), Position::new(2.5, 2.5));
        assert_eq!(m.cell_center(m.cell(15, 27).unwrap()), Position::new(137.5, 77.5));
        let m = GridMap::new(4, 4, 10.0, Position::new(100.0, 200.0)).unwrap();
        assert_eq!(m.cell_center(m.cell(1, 1).unwrap()), Position::new(115.0, 215.0));
    }

    #[test]
    fn nearest_cell_cases() {
        let m = map(16, 28);
        assert_eq!(m.nearest_cell(Position::new(2.5, 2.5)), m.cell(0, 0).unwrap());
        assert_eq!(m.nearest_cell(Position::new(6.0, 1.0)), m.cell(0, 1).unwrap());
        assert_eq!(m.nearest_cell(Position::new(-3.0, -3.0)), m.cell(0, 0).unwrap());
        assert_eq!(m.nearest_cell(Position::new(1e6, 1e6)), m.cell(15, 27).unwrap());
    }

    #[test]
    fn apply_action_cases() {
        let m = map(16, 28);
        let c = m.cell(0, 0).unwrap();
        assert_eq!(m.apply_action(c, Action::Stay).unwrap(), c);
        assert_eq!(m.apply_action(c, Action::NE).unwrap(), m.cell(1, 1).unwrap());
        let err = m.apply_action(c, Action::S).unwrap_err();
        assert!(err.to_string().contains("action leaves grid"));
    }

    #[test]
    fn available_action_counts() {
        let m = map(16, 28);
        assert_eq!(m.available_actions(m.cell(7, 7).unwrap()).len(), 9);
        let corner = m.available_actions(m.cell(0, 0).unwrap());
        let expected: ActionSet = [Action::Stay, Action::N, Action::E, Action::NE].into_iter().collect();
        assert_eq!(corner, expected);
        assert_eq!(m.available_actions(m.cell(0, 5).unwrap()).len(), 6);
    }

    #[test]
    fn single_cell_grid_only_stays() {
        let m = map(1, 1);
        let set = m.available_actions(m.cell(0, 0).unwrap());
        assert_eq!(set.len(), 1);
        assert!(set.contains(Action::Stay));
    }

    #[test]
    fn every_available_action_stays_in_bounds() {
        for (rows, cols) in [(2, 2), (3, 5), (4, 4)] {
            let m = map(rows, cols);
            for cell in m.cells() {
                let set = m.available_actions(cell);
                assert!(set.contains(Action::Stay));
                assert!([4, 6, 9].contains(&set.len()));
                for a in Action::ALL {
                    assert_eq!(set.contains(a), m.apply_action(cell, a).is_ok());
                }
                for a in set.iter() {
                    assert!(m.contains(m.apply_action(cell, a).unwrap()));
                }
            }
        }
    }

    #[test]
    fn action_offsets_are_unit_steps() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
            let (dr, dc) = a.offset();
            assert!(dr.abs() <= 1 && dc.abs() <= 1);
            assert_eq!(*a == Action::Stay, (dr, dc) == (0, 0));
        }
    }

    #[test]
    fn gateway_layouts() {
        let gws = gateway_grid_layout(4, 5, 30.0, 24.0, Position::new(0.0, 0.0));
        assert_eq!(gws.len(), 20);
        let ids: Vec<u32> = gws.iter().map(|g| g.id).collect();
        assert_eq!(ids, (1..=20).collect::<Vec<_>>());

        let one = gateway_grid_layout(1, 1, 30.0, 24.0, Position::new(3.0, 4.0));
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].position, Position::new(3.0, 4.0));

        let sq = gateway_grid_layout(2, 2, 10.0, 10.0, Position::new(0.0, 0.0));
        let pos: Vec<(f64, f64)> = sq.iter().map(|g| (g.position.x, g.position.y)).collect();
        assert_eq!(pos, vec![(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)]);
    }

    proptest! {
        #[test]
        fn nearest_cell_inverts_cell_center(rows in 1usize..20, cols in 1usize..20, size in 0.5f64..20.0,
                                            ox in -100.0f64..100.0, oy in -100.0f64..100.0) {
            let m = GridMap::new(rows, cols, size, Position::new(ox, oy)).unwrap();
            for cell in m.cells() {
                prop_assert_eq!(m.nearest_cell(m.cell_center(cell)), cell);
            }
        }

        #[test]
        fn flat_index_round_trip(rows in 1usize..30, cols in 1usize..30) {
            let m = map(rows, cols);
            for (i, cell) in m.cells().enumerate() {
                prop_assert_eq!(m.flat_index(cell), i);
                prop_assert_eq!(m.cell_from_flat(i).unwrap(), cell);
            }
        }
    }
}
