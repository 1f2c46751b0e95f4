use crate::data::Point;
use crate::error::Result;
use crate::nn::{Binding, Linear, Mlp, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Output heads: direct coordinate regression and the two similarity-map
/// baselines.
#[derive(Clone, Debug)]
pub enum Head {
    /// Token-wise MLP to raw `(x, y)`.
    Coordinate(Mlp),
    /// `(F_s·P₁)(F_q·P₂)ᵀ/√d`.
    Matching { p1: Linear, p2: Linear, d: usize },
    /// Token-wise MLP to `n_q` map logits.
    MapRegression(Mlp),
}

impl Head {
    pub fn coordinate<S: Scalar>(store: &mut ParamStore<S>, d: usize) -> Self {
        Head::Coordinate(Mlp::new(store, "head.coord", d, d, 2))
    }

    pub fn matching<S: Scalar>(store: &mut ParamStore<S>, d: usize) -> Self {
        Head::Matching {
            p1: Linear::new(store, "head.match.p1", d, d),
            p2: Linear::new(store, "head.match.p2", d, d),
            d,
        }
    }

    pub fn map_regression<S: Scalar>(store: &mut ParamStore<S>, d: usize, n_q: usize) -> Self {
        Head::MapRegression(Mlp::new(store, "head.maps", d, d, n_q))
    }

    /// Raw coordinates (`K×2`) for the coordinate head.
    pub fn regress_coordinates<S: Scalar>(mlp: &Mlp, tape: &mut Tape<S>, p: &Binding, f_s: Var) -> Result<Var> {
        mlp.forward(tape, p, f_s)
    }

    /// Similarity maps `K×n_q` for the map heads.
    pub fn similarity_map<S: Scalar>(&self, tape: &mut Tape<S>, p: &Binding, f_s: Var, f_q: Var) -> Result<Option<Var>> {
        match self {
            Head::Coordinate(_) => Ok(None),
            Head::Matching { p1, p2, d } => {
                let a = p1.forward(tape, p, f_s)?;
                let b = p2.forward(tape, p, f_q)?;
                let bt = tape.transpose(b)?;
                let m = tape.matmul(a, bt)?;
                Ok(Some(tape.scale(m, S::one() / S::lit(*d as f64).sqrt())))
            }
            Head::MapRegression(mlp) => Ok(Some(mlp.forward(tape, p, f_s)?)),
        }
    }
}

/// Cell-center coordinate of the largest entry of a `grid×grid` map; ties go
/// to the lowest flat index.
pub fn decode_argmax<S: Scalar>(map: &[S], grid: usize) -> Point {
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    let (r, c) = (best / grid, best % grid);
    let g = grid as f64;
    [(c as f64 + 0.5) / g, (r as f64 + 0.5) / g]
}

/// Flat index of the grid cell containing `p`.
pub fn cell_index(p: Point, grid: usize) -> usize {
    let g = grid as f64;
    let c = ((p[0] * g).floor().max(0.0) as usize).min(grid - 1);
    let r = ((p[1] * g).floor().max(0.0) as usize).min(grid - 1);
    r * grid + c
}
