//! Uniform 2D binning over the (x, y) plane.
//!
//! Items are inserted either as points or as axis-aligned footprints and
//! retrieved by cell. Callers do the exact geometric filtering.

#[derive(Debug, Clone)]
pub struct GridIndex {
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    cells: Vec<Vec<u32>>,
}

impl GridIndex {
    /// Empty grid covering `[min, max]` with square cells of side `cell`.
    pub fn new(min: [f64; 2], max: [f64; 2], cell: f64) -> Self {
        let cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let nx = (((max[0] - min[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((max[1] - min[1]) / cell).floor() as usize + 1).max(1);
        // Cap the table size for pathological cell sizes.
        let (nx, ny, cell) = if nx.saturating_mul(ny) > 16_000_000 {
            let span = (max[0] - min[0]).max(max[1] - min[1]).max(1e-9);
            let c = span / 4000.0;
            (
                ((max[0] - min[0]) / c).floor() as usize + 1,
                ((max[1] - min[1]) / c).floor() as usize + 1,
                c,
            )
        } else {
            (nx, ny, cell)
        };
        Self {
            origin: min,
            cell,
            dims: [nx, ny],
            cells: vec![Vec::new(); nx * ny],
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn coord(&self, v: f64, axis: usize) -> Option<usize> {
        let c = ((v - self.origin[axis]) / self.cell).floor();
        if c < 0.0 || !c.is_finite() {
            return None;
        }
        let c = c as usize;
        (c < self.dims[axis]).then_some(c)
    }

    fn clamped(&self, v: f64, axis: usize) -> usize {
        let c = ((v - self.origin[axis]) / self.cell).floor();
        if c.is_nan() || c < 0.0 {
            0
        } else {
            (c as usize).min(self.dims[axis] - 1)
        }
    }

    pub fn insert_point(&mut self, id: usize, x: f64, y: f64) {
        let i = self.clamped(x, 0);
        let j = self.clamped(y, 1);
        self.cells[j * self.dims[0] + i].push(id as u32);
    }

    pub fn insert_box(&mut self, id: usize, min: [f64; 2], max: [f64; 2]) {
        let (i0, i1) = (self.clamped(min[0], 0), self.clamped(max[0], 0));
        let (j0, j1) = (self.clamped(min[1], 1), self.clamped(max[1], 1));
        for j in j0..=j1 {
            for i in i0..=i1 {
                self.cells[j * self.dims[0] + i].push(id as u32);
            }
        }
    }

    /// Items binned into the cell containing `(x, y)`; empty outside the grid.
    pub fn at(&self, x: f64, y: f64) -> &[u32] {
        match (self.coord(x, 0), self.coord(y, 1)) {
            (Some(i), Some(j)) => &self.cells[j * self.dims[0] + i],
            _ => &[],
        }
    }

    /// Visit every item in cells overlapping the square of half-width `r`
    /// around `(x, y)`. Point items are visited once; box items may repeat.
    pub fn for_each_near(&self, x: f64, y: f64, r: f64, mut f: impl FnMut(usize)) {
        let lo = [x - r, y - r];
        let hi = [x + r, y + r];
        let gx = self.origin[0] + self.dims[0] as f64 * self.cell;
        let gy = self.origin[1] + self.dims[1] as f64 * self.cell;
        if hi[0] < self.origin[0] || hi[1] < self.origin[1] || lo[0] > gx || lo[1] > gy {
            return;
        }
        let (i0, i1) = (self.clamped(lo[0], 0), self.clamped(hi[0], 0));
        let (j0, j1) = (self.clamped(lo[1], 1), self.clamped(hi[1], 1));
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &id in &self.cells[j * self.dims[0] + i] {
                    f(id as usize);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_land_in_their_cell() {
        let mut g = GridIndex::new([0.0, 0.0], [10.0, 10.0], 1.0);
        g.insert_point(7, 3.5, 4.2);
        assert_eq!(g.at(3.1, 4.9), &[7]);
        assert!(g.at(2.9, 4.9).is_empty());
        assert!(g.at(-1.0, 0.0).is_empty());
    }

    #[test]
    fn near_query_covers_radius() {
        let mut g = GridIndex::new([0.0, 0.0], [10.0, 10.0], 1.0);
        for (k, p) in [(0, [1.0, 1.0]), (1, [5.0, 5.0]), (2, [5.9, 5.2])].iter() {
            g.insert_point(*k, p[0], p[1]);
        }
        let mut seen = Vec::new();
        g.for_each_near(5.5, 5.5, 0.6, |i| seen.push(i));
        seen.sort();
        assert_eq!(seen, vec![1, 2]);
    }
}
