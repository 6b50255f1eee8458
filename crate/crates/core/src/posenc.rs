//! Joint position encoding for the two-image token sequence.
//!
//! Template and search tokens share one virtual coordinate grid; how the
//! template block is placed relative to the search block is the
//! [`Placement`]. Attention bias is a per-head learned table indexed by the
//! componentwise absolute coordinate difference of a token pair, so placements
//! whose coordinate ranges overlap make distinct token pairs alias the same
//! table entry. The default placement puts the template corner-adjacent,
//! diagonally, which keeps both axes disjoint.

use crate::error::{HitError, Result};
use crate::tensor::Tensor;

/// How template coordinates are arranged relative to the search grid.
/// `Absolute` disables relative bias entirely (tokens get sinusoidal
/// per-position vectors instead) and places the template at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    Diagonal,
    Vertical,
    Horizontal,
    Separate,
    Absolute,
}

impl Placement {
    /// Every selectable placement, in a stable order.
    pub const ALL: [Placement; 5] = [
        Placement::Diagonal,
        Placement::Vertical,
        Placement::Horizontal,
        Placement::Separate,
        Placement::Absolute,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "diag" | "diagonal" => Ok(Self::Diagonal),
            "ver" | "vertical" => Ok(Self::Vertical),
            "hor" | "horizontal" => Ok(Self::Horizontal),
            "sep" | "separate" => Ok(Self::Separate),
            "abs" | "absolute" => Ok(Self::Absolute),
            other => Err(HitError::Config(format!(
                "unknown position encoding '{other}' (expected diag|ver|hor|sep|abs)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Diagonal => "diag",
            Self::Vertical => "ver",
            Self::Horizontal => "hor",
            Self::Separate => "sep",
            Self::Absolute => "abs",
        }
    }
}

/// Token-grid geometry of one attention layer: search extent, template
/// extent, and the placement that fixes the template offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrangement {
    pub kind: Placement,
    /// (width, height) of the search token grid.
    pub search_extent: (usize, usize),
    /// (width, height) of the template token grid.
    pub template_extent: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageRole {
    Search,
    Template,
}

impl Arrangement {
    pub fn new(
        kind: Placement,
        search_extent: (usize, usize),
        template_extent: (usize, usize),
    ) -> Self {
        Self {
            kind,
            search_extent,
            template_extent,
        }
    }

    /// Template origin in the joint grid, fixed by the placement.
    pub fn template_offset(&self) -> (usize, usize) {
        let (ws, hs) = self.search_extent;
        match self.kind {
            Placement::Diagonal => (ws, hs),
            Placement::Vertical => (0, hs),
            Placement::Horizontal => (ws, 0),
            Placement::Separate | Placement::Absolute => (0, 0),
        }
    }

    pub fn search_tokens(&self) -> usize {
        self.search_extent.0 * self.search_extent.1
    }

    pub fn template_tokens(&self) -> usize {
        self.template_extent.0 * self.template_extent.1
    }

    pub fn token_count(&self) -> usize {
        self.search_tokens() + self.template_tokens()
    }

    /// Joint-grid coordinate of a local token position.
    pub fn global_coord(&self, image: ImageRole, local: (usize, usize)) -> Result<(i64, i64)> {
        let (w, h) = match image {
            ImageRole::Search => self.search_extent,
            ImageRole::Template => self.template_extent,
        };
        if local.0 >= w || local.1 >= h {
            return Err(HitError::Config(format!(
                "local coordinate {:?} outside {:?} extent {}x{}",
                local, image, w, h
            )));
        }
        match image {
            ImageRole::Search => Ok((local.0 as i64, local.1 as i64)),
            ImageRole::Template => {
                let (ox, oy) = self.template_offset();
                Ok((local.0 as i64 + ox as i64, local.1 as i64 + oy as i64))
            }
        }
    }

    /// Global coordinates of every token in sequence order: search rows
    /// first, then template rows, both raster order (y outer, x inner).
    pub fn token_coords(&self) -> Vec<(i64, i64)> {
        let mut coords = Vec::with_capacity(self.token_count());
        let (ws, hs) = self.search_extent;
        for y in 0..hs {
            for x in 0..ws {
                coords.push((x as i64, y as i64));
            }
        }
        let (wt, ht) = self.template_extent;
        let (ox, oy) = self.template_offset();
        for y in 0..ht {
            for x in 0..wt {
                coords.push((x as i64 + ox as i64, y as i64 + oy as i64));
            }
        }
        coords
    }

    /// Largest relative index reachable between any two tokens, plus one per
    /// axis: the minimum table extent this arrangement needs.
    pub fn required_table_extent(&self) -> (usize, usize) {
        let coords = self.token_coords();
        let max_x = coords.iter().map(|c| c.0).max().unwrap_or(0);
        let max_y = coords.iter().map(|c| c.1).max().unwrap_or(0);
        // min coordinate is always 0 (search origin), so max == max |delta|.
        (max_x as usize + 1, max_y as usize + 1)
    }

    /// Whether the template/search coordinate ranges intersect, per axis.
    pub fn coordinate_overlap(&self) -> (bool, bool) {
        let (ws, hs) = self.search_extent;
        let (wt, ht) = self.template_extent;
        let (ox, oy) = self.template_offset();
        let x_overlap = ox < ws && ox + wt > 0;
        let y_overlap = oy < hs && oy + ht > 0;
        (x_overlap, y_overlap)
    }

    /// Geometry after a 2x token-grid reduction. Extents must be even; odd
    /// grids have no half-resolution counterpart in this model.
    pub fn halved(&self) -> Result<Arrangement> {
        let (ws, hs) = self.search_extent;
        let (wt, ht) = self.template_extent;
        if ws % 2 != 0 || hs % 2 != 0 {
            return Err(HitError::OddExtent {
                op: "halved",
                extent: self.search_extent,
            });
        }
        if wt % 2 != 0 || ht % 2 != 0 {
            return Err(HitError::OddExtent {
                op: "halved",
                extent: self.template_extent,
            });
        }
        Ok(Arrangement::new(
            self.kind,
            (ws / 2, hs / 2),
            (wt / 2, ht / 2),
        ))
    }
}

/// Componentwise absolute difference of two joint-grid coordinates.
pub fn relative_index(p: (i64, i64), q: (i64, i64)) -> (usize, usize) {
    ((p.0 - q.0).unsigned_abs() as usize, (p.1 - q.1).unsigned_abs() as usize)
}

/// Table extent that covers every placement at the given grid extents, so
/// models that differ only in placement carry identically sized tables.
/// The diagonal placement dominates both axes.
pub fn max_table_extent(
    search_extent: (usize, usize),
    template_extent: (usize, usize),
) -> (usize, usize) {
    (
        search_extent.0 + template_extent.0,
        search_extent.1 + template_extent.1,
    )
}

/// Per-head learned bias values indexed by relative coordinate offset.
/// Layout: [heads][dy][dx].
#[derive(Debug, Clone)]
pub struct BiasTable {
    heads: usize,
    extent_x: usize,
    extent_y: usize,
    data: Tensor,
}

impl BiasTable {
    pub fn zeros(heads: usize, extent_x: usize, extent_y: usize) -> Result<Self> {
        Ok(Self {
            heads,
            extent_x,
            extent_y,
            data: Tensor::zeros(vec![heads, extent_y, extent_x])?,
        })
    }

    pub fn from_tensor(data: Tensor) -> Result<Self> {
        let (heads, extent_y, extent_x) = data.dims3("bias table")?;
        Ok(Self {
            heads,
            extent_x,
            extent_y,
            data,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.extent_x, self.extent_y)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.data
    }

    pub fn at(&self, head: usize, dx: usize, dy: usize) -> f32 {
        debug_assert!(head < self.heads && dx < self.extent_x && dy < self.extent_y);
        self.data.data()[(head * self.extent_y + dy) * self.extent_x + dx]
    }

    fn check_covers(&self, need: (usize, usize)) -> Result<()> {
        if need.0 > self.extent_x || need.1 > self.extent_y {
            return Err(HitError::BiasTableTooSmall {
                have_x: self.extent_x,
                have_y: self.extent_y,
                need_x: need.0,
                need_y: need.1,
            });
        }
        Ok(())
    }
}

/// Square bias matrix for self-attention over an arrangement's full token
/// sequence: entry (i,j) = table[head][|coord_i - coord_j|].
pub fn build_bias_matrix(arr: &Arrangement, table: &BiasTable, head: usize) -> Result<Tensor> {
    table.check_covers(arr.required_table_extent())?;
    let coords = arr.token_coords();
    bias_from_coords(&coords, &coords, table, head)
}

/// Rectangular bias for cross-resolution attention (query tokens may sit at a
/// different coordinate set than the keys, as in the shrink junction).
pub fn bias_from_coords(
    q_coords: &[(i64, i64)],
    k_coords: &[(i64, i64)],
    table: &BiasTable,
    head: usize,
) -> Result<Tensor> {
    if head >= table.heads() {
        return Err(HitError::Config(format!(
            "bias head index {head} out of range ({} heads)",
            table.heads()
        )));
    }
    let tq = q_coords.len();
    let tk = k_coords.len();
    let mut data = Vec::with_capacity(tq * tk);
    for &p in q_coords {
        for &q in k_coords {
            let (dx, dy) = relative_index(p, q);
            table.check_covers((dx + 1, dy + 1))?;
            data.push(table.at(head, dx, dy));
        }
    }
    Tensor::new(vec![tq, tk], data)
}

/// Sinusoidal per-position vectors over a flattened (w, h) grid: channel 2i
/// carries sin(p * w_i), channel 2i+1 carries cos(p * w_i), with the usual
/// geometric frequency ladder. Returns [w*h, channels].
pub fn absolute_encoding(extent: (usize, usize), channels: usize) -> Result<Tensor> {
    if channels % 2 != 0 {
        return Err(HitError::OddChannels(channels));
    }
    let positions = extent.0 * extent.1;
    let mut data = Vec::with_capacity(positions * channels);
    for p in 0..positions {
        for i in 0..channels / 2 {
            let omega = 1.0_f64 / 10000f64.powf(2.0 * i as f64 / channels as f64);
            let angle = p as f64 * omega;
            data.push(angle.sin() as f32);
            data.push(angle.cos() as f32);
        }
    }
    Tensor::new(vec![positions, channels], data)
}
