//! Multiresolution hash-grid texture over UV space.
//!
//! Level `ℓ` has resolution `N_ℓ = floor(N_min · b^ℓ)`, so its lattice has
//! `N_ℓ + 1` vertices per axis. A level whose `(N_ℓ + 1)²` vertices fit in the
//! table is indexed densely (row-major, `v` major); larger levels hash the
//! vertex coordinate into `T` rows. Each query bilinearly interpolates the
//! four surrounding vertex features per level, and the per-level features
//! are concatenated in ascending level order.

use std::rc::Rc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Bound, CustomOp, DiffError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Second hash prime; the first is 1.
pub const HASH_PRIME: u64 = 2_654_435_761;

/// Half-width of the uniform feature initialization.
pub const INIT_RANGE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum TexError {
    #[error("invalid grid config: {0}")]
    Config(String),
    #[error("cell ({cx}, {cy}) outside level {level} lattice of resolution {resolution}")]
    CellOutOfRange { level: usize, cx: usize, cy: usize, resolution: usize },
    #[error("query {index}: uv {uv:?} outside [0,1]²")]
    UvOutOfRange { index: usize, uv: [f64; 2] },
    #[error("query {index}: uv is NaN")]
    NanUv { index: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub levels: usize,
    pub table_size: usize,
    pub features: usize,
    pub min_resolution: usize,
    pub max_resolution: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl GridConfig {
    /// 8 levels of 4 features, 2^16 rows, 16 → 1024.
    pub fn desk() -> Self {
        Self { levels: 8, table_size: 1 << 16, features: 4, min_resolution: 16, max_resolution: 1024 }
    }

    /// 20 levels of 4 features, 2^24 rows, 16 → 4096.
    pub fn paper() -> Self {
        Self { levels: 20, table_size: 1 << 24, features: 4, min_resolution: 16, max_resolution: 4096 }
    }

    pub fn validate(&self) -> Result<(), TexError> {
        if self.levels == 0 {
            return Err(TexError::Config("levels must be at least 1".into()));
        }
        if self.features == 0 {
            return Err(TexError::Config("features must be at least 1".into()));
        }
        if !self.table_size.is_power_of_two() {
            return Err(TexError::Config(format!("table size {} is not a power of two", self.table_size)));
        }
        if self.min_resolution == 0 || self.min_resolution > self.max_resolution {
            return Err(TexError::Config(format!(
                "resolution range {}..{} is invalid",
                self.min_resolution, self.max_resolution
            )));
        }
        Ok(())
    }

    /// Per-level growth factor `b`; 1 for a single level.
    pub fn growth(&self) -> f64 {
        if self.levels <= 1 {
            return 1.0;
        }
        (((self.max_resolution as f64).ln() - (self.min_resolution as f64).ln()) / (self.levels - 1) as f64).exp()
    }

    pub fn embed_width(&self) -> usize {
        self.levels * self.features
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        assert!(level < self.levels, "level {level} out of range");
        if level + 1 == self.levels {
            return self.max_resolution;
        }
        let exact = self.min_resolution as f64 * self.growth().powi(level as i32);
        // guard against exp/ln round-off just below an integer
        let n = (exact * (1.0 + 1e-12)).floor() as usize;
        n.clamp(self.min_resolution, self.max_resolution)
    }

    pub fn is_dense(&self, level: usize) -> bool {
        let side = self.level_resolution(level) + 1;
        side.checked_mul(side).is_some_and(|v| v <= self.table_size)
    }

    pub fn level_rows(&self, level: usize) -> usize {
        if self.is_dense(level) {
            let side = self.level_resolution(level) + 1;
            side * side
        } else {
            self.table_size
        }
    }

    pub fn scalar_count(&self) -> usize {
        (0..self.levels).map(|l| self.level_rows(l) * self.features).sum()
    }

    /// Table row for lattice vertex `(cx, cy)` at `level`.
    pub fn cell_index(&self, level: usize, cx: usize, cy: usize) -> Result<usize, TexError> {
        let n = self.level_resolution(level);
        if cx > n || cy > n {
            return Err(TexError::CellOutOfRange { level, cx, cy, resolution: n });
        }
        Ok(lattice_row(self.is_dense(level), n, self.table_size, cx, cy))
    }
}

#[inline]
fn lattice_row(dense: bool, n: usize, table_size: usize, cx: usize, cy: usize) -> usize {
    if dense {
        cy * (n + 1) + cx
    } else {
        hash_cell(cx as u64, cy as u64, table_size as u64) as usize
    }
}

/// `(cx · 1 XOR cy · π₂) mod T` with 64-bit wrapping products.
#[inline]
pub fn hash_cell(cx: u64, cy: u64, table_size: u64) -> u64 {
    (cx ^ cy.wrapping_mul(HASH_PRIME)) & (table_size - 1)
}

/// Four (row, weight) pairs per query per level.
#[derive(Clone, Debug)]
pub struct EncodePlan {
    pub queries: usize,
    pub levels: usize,
    pub features: usize,
    /// `[query][level][corner]`, flattened.
    pub taps: Vec<(u32, f64)>,
}

impl EncodePlan {
    #[inline]
    pub fn taps(&self, query: usize, level: usize) -> &[(u32, f64)] {
        let start = (query * self.levels + level) * 4;
        &self.taps[start..start + 4]
    }
}

/// Lower cell corner and fractional offset along one axis.
#[inline]
fn axis(coord: f64, n: usize) -> (usize, f64) {
    let x = coord * n as f64;
    let c = (x.floor().max(0.0) as usize).min(n - 1);
    (c, x - c as f64)
}

/// The trainable multiresolution texture; tables live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct HashGridTexture {
    config: GridConfig,
    resolutions: Vec<usize>,
    dense: Vec<bool>,
    tables: Vec<ParamId>,
}

impl HashGridTexture {
    pub fn new<S: Scalar>(
        config: GridConfig,
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
    ) -> Result<Self, TexError> {
        Self::with_init(config, store, |_, _| S::c(rng.random_range(-INIT_RANGE..INIT_RANGE)))
    }

    pub fn zeros<S: Scalar>(config: GridConfig, store: &mut ParamStore<S>) -> Result<Self, TexError> {
        Self::with_init(config, store, |_, _| S::zero())
    }

    fn with_init<S: Scalar>(
        config: GridConfig,
        store: &mut ParamStore<S>,
        mut init: impl FnMut(usize, usize) -> S,
    ) -> Result<Self, TexError> {
        config.validate()?;
        let mut tables = Vec::with_capacity(config.levels);
        for l in 0..config.levels {
            let rows = config.level_rows(l);
            let data: Vec<S> = (0..rows * config.features).map(|i| init(l, i)).collect();
            let t = Tensor::from_vec(&[rows, config.features], data)?;
            tables.push(store.add(format!("grid.level{l}.table"), t));
        }
        let resolutions = (0..config.levels).map(|l| config.level_resolution(l)).collect();
        let dense = (0..config.levels).map(|l| config.is_dense(l)).collect();
        Ok(Self { config, resolutions, dense, tables })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn tables(&self) -> &[ParamId] {
        &self.tables
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.resolutions[level]
    }

    pub fn dense(&self, level: usize) -> bool {
        self.dense[level]
    }

    pub fn embed_width(&self) -> usize {
        self.config.embed_width()
    }

    /// Interpolation taps for every query. With `clamp`, coordinates outside
    /// `[0,1]` are clamped (with a warning) instead of rejected.
    pub fn plan(&self, uvs: &[[f64; 2]], clamp: bool) -> Result<EncodePlan, TexError> {
        let mut clamped = 0usize;
        let mut fixed: Vec<[f64; 2]> = Vec::with_capacity(uvs.len());
        for (i, uv) in uvs.iter().enumerate() {
            if uv[0].is_nan() || uv[1].is_nan() {
                return Err(TexError::NanUv { index: i });
            }
            let inside = (0.0..=1.0).contains(&uv[0]) && (0.0..=1.0).contains(&uv[1]);
            if !inside {
                if !clamp {
                    return Err(TexError::UvOutOfRange { index: i, uv: *uv });
                }
                clamped += 1;
            }
            fixed.push([uv[0].clamp(0.0, 1.0), uv[1].clamp(0.0, 1.0)]);
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} uv queries into [0,1]²");
        }
        let levels = self.config.levels;
        let table_size = self.config.table_size;
        let mut taps = vec![(0u32, 0.0f64); uvs.len() * levels * 4];
        taps.par_chunks_mut(levels * 4).zip(fixed.par_iter()).for_each(|(out, uv)| {
            for l in 0..levels {
                let n = self.resolutions[l];
                let (cx, fx) = axis(uv[0], n);
                let (cy, fy) = axis(uv[1], n);
                let corners = [
                    (cx, cy, (1.0 - fx) * (1.0 - fy)),
                    (cx + 1, cy, fx * (1.0 - fy)),
                    (cx, cy + 1, (1.0 - fx) * fy),
                    (cx + 1, cy + 1, fx * fy),
                ];
                for (k, &(x, y, w)) in corners.iter().enumerate() {
                    out[l * 4 + k] = (lattice_row(self.dense[l], n, table_size, x, y) as u32, w);
                }
            }
        });
        Ok(EncodePlan { queries: uvs.len(), levels, features: self.config.features, taps })
    }

    /// Evaluate embeddings `[queries, L·F]` from table values.
    pub fn encode_values<S: Scalar>(plan: &EncodePlan, tables: &[&Tensor<S>]) -> Tensor<S> {
        let f = plan.features;
        let width = plan.levels * f;
        let mut out = vec![S::zero(); plan.queries * width];
        out.par_chunks_mut(width).enumerate().for_each(|(q, row)| {
            for (l, table) in tables.iter().enumerate() {
                let td = table.data();
                let slice = &mut row[l * f..(l + 1) * f];
                for &(r, w) in plan.taps(q, l) {
                    let w = S::c(w);
                    let src = &td[r as usize * f..(r as usize + 1) * f];
                    for (o, &v) in slice.iter_mut().zip(src) {
                        *o = *o + w * v;
                    }
                }
            }
        });
        Tensor::from_vec(&[plan.queries, width], out).expect("embedding shape")
    }

    /// Scatter `upstream` (`[queries, L·F]`) into per-level table gradients.
    /// Accumulation runs serially in query order.
    pub fn encode_backward<S: Scalar>(
        plan: &EncodePlan,
        upstream: &Tensor<S>,
        table_rows: &[usize],
    ) -> Result<Vec<Tensor<S>>, TexError> {
        let f = plan.features;
        let width = plan.levels * f;
        if upstream.len() != plan.queries * width {
            return Err(DiffError::ShapeMismatch {
                op: "encode_backward",
                lhs: vec![plan.queries, width],
                rhs: upstream.shape().to_vec(),
            }
            .into());
        }
        let mut grads: Vec<Vec<S>> = table_rows.iter().map(|&r| vec![S::zero(); r * f]).collect();
        let ud = upstream.data();
        for q in 0..plan.queries {
            for (l, g) in grads.iter_mut().enumerate() {
                let up = &ud[q * width + l * f..q * width + (l + 1) * f];
                for &(r, w) in plan.taps(q, l) {
                    let w = S::c(w);
                    let dst = &mut g[r as usize * f..(r as usize + 1) * f];
                    for (d, &u) in dst.iter_mut().zip(up) {
                        *d = *d + w * u;
                    }
                }
            }
        }
        grads
            .into_iter()
            .zip(table_rows)
            .map(|(g, &r)| Tensor::from_vec(&[r, f], g).map_err(TexError::from))
            .collect()
    }

    /// Tape-recorded encode; gradients flow to the bound tables only.
    pub fn encode<S: Scalar>(
        &self,
        tape: &Tape<S>,
        params: &Bound,
        uvs: &[[f64; 2]],
    ) -> Result<Var, TexError> {
        self.encode_plan(tape, params, Rc::new(self.plan(uvs, false)?))
    }

    pub fn encode_plan<S: Scalar>(
        &self,
        tape: &Tape<S>,
        params: &Bound,
        plan: Rc<EncodePlan>,
    ) -> Result<Var, TexError> {
        let vars: Vec<Var> = self.tables.iter().map(|&id| params.get(id)).collect();
        let values: Vec<_> = vars.iter().map(|&v| tape.value(v)).collect();
        let refs: Vec<&Tensor<S>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Self::encode_values(&plan, &refs);
        let rows = values.iter().map(|v| v.rows()).collect();
        Ok(tape.custom(&vars, out, Box::new(EncodeOp { plan, rows }))?)
    }
}

struct EncodeOp {
    plan: Rc<EncodePlan>,
    rows: Vec<usize>,
}

impl<S: Scalar> CustomOp<S> for EncodeOp {
    fn name(&self) -> &'static str {
        "hashgrid_encode"
    }

    fn backward(&self, grad_out: &Tensor<S>, _inputs: &[&Tensor<S>], _output: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        HashGridTexture::encode_backward(&self.plan, grad_out, &self.rows)
            .expect("upstream shape matches plan")
            .into_iter()
            .map(Some)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_dense(n: usize, f: usize) -> GridConfig {
        GridConfig { levels: 1, table_size: 1 << 16, features: f, min_resolution: n, max_resolution: n }
    }

    #[test]
    fn paper_preset_resolutions() {
        let c = GridConfig::paper();
        assert_eq!(c.level_resolution(0), 16);
        assert_eq!(c.level_resolution(19), 4096);
        // b = exp(ln(4096/16)/19)
        assert!((c.growth() - 1.3390).abs() < 1e-4, "{}", c.growth());
        assert_eq!(c.level_resolution(1), 21);
        let res: Vec<_> = (0..20).map(|l| c.level_resolution(l)).collect();
        assert!(res.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(c.embed_width(), 80);
    }

    #[test]
    fn single_level_uses_min_resolution() {
        let c = GridConfig { levels: 1, table_size: 1 << 10, features: 2, min_resolution: 8, max_resolution: 64 };
        assert_eq!(c.growth(), 1.0);
        // the single level is also the last one
        assert_eq!(c.level_resolution(0), 64);
    }

    #[test]
    fn dense_cell_indexing() {
        let c = single_dense(16, 1);
        assert!(c.is_dense(0));
        assert_eq!(c.cell_index(0, 0, 0).unwrap(), 0);
        assert_eq!(c.cell_index(0, 3, 2).unwrap(), 37);
        assert!(c.cell_index(0, 17, 0).is_err());
    }

    #[test]
    fn hashed_cell_index_matches_scripted_value() {
        // (5 XOR (9·2654435761 mod 2^64)) mod 2^16, evaluated in Python:
        // (5 ^ ((9*2654435761) % 2**64)) % 2**16 == 18236
        let c = GridConfig { levels: 1, table_size: 1 << 16, features: 1, min_resolution: 1024, max_resolution: 1024 };
        assert!(!c.is_dense(0));
        assert_eq!(c.cell_index(0, 5, 9).unwrap(), 18236);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = GridConfig::desk();
        c.table_size = 1000;
        assert!(c.validate().is_err());
        let mut c = GridConfig::desk();
        c.min_resolution = 2048;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_tables_give_zero_embedding() {
        let mut store = ParamStore::<f64>::new();
        let grid = HashGridTexture::zeros(GridConfig::desk(), &mut store).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape).unwrap();
        let e = grid.encode(&tape, &p, &[[0.3, 0.7], [1.0, 0.0]]).unwrap();
        let v = tape.value(e);
        assert_eq!(v.shape(), &[2, 32]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vertex_query_returns_stored_row() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = HashGridTexture::new(single_dense(4, 3), &mut store, &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape).unwrap();
        // vertex (1, 2) of a 4-cell lattice
        let e = grid.encode(&tape, &p, &[[0.25, 0.5]]).unwrap();
        let row = 2 * 5 + 1;
        let table = store.get(grid.tables()[0]);
        assert_eq!(tape.value(e).data(), &table.data()[row * 3..row * 3 + 3]);
    }

    #[test]
    fn single_cell_bilinear_closed_form() {
        let mut store = ParamStore::<f64>::new();
        let grid = HashGridTexture::zeros(single_dense(1, 1), &mut store).unwrap();
        let (f00, f10, f01, f11) = (0.3, -1.2, 2.5, 0.7);
        *store.get_mut(grid.tables()[0]) = Tensor::from_f64(&[4, 1], &[f00, f10, f01, f11]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut uvs = vec![[0.5, 0.5]];
        uvs.extend((0..20).map(|_| [rng.random::<f64>(), rng.random::<f64>()]));
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let e = tape.value(grid.encode(&tape, &p, &uvs).unwrap());
        assert!((e.data()[0] - (f00 + f10 + f01 + f11) / 4.0).abs() < 1e-15);
        for (i, uv) in uvs.iter().enumerate() {
            let (u, v) = (uv[0], uv[1]);
            let want = f00 * (1.0 - u) * (1.0 - v) + f10 * u * (1.0 - v) + f01 * (1.0 - u) * v + f11 * u * v;
            assert!((e.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_form_partition_of_unity() {
        let mut store = ParamStore::<f32>::new();
        let grid = HashGridTexture::zeros(GridConfig::desk(), &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut uvs: Vec<[f64; 2]> = (0..500).map(|_| [rng.random(), rng.random()]).collect();
        uvs.extend([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.5, 1.0]]);
        let plan = grid.plan(&uvs, false).unwrap();
        for q in 0..plan.queries {
            for l in 0..plan.levels {
                let s: f64 = plan.taps(q, l).iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nan_and_out_of_range_queries() {
        let mut store = ParamStore::<f32>::new();
        let grid = HashGridTexture::zeros(GridConfig::desk(), &mut store).unwrap();
        assert!(matches!(grid.plan(&[[f64::NAN, 0.2]], true), Err(TexError::NanUv { index: 0 })));
        assert!(matches!(grid.plan(&[[0.1, 1.5]], false), Err(TexError::UvOutOfRange { .. })));
        assert!(grid.plan(&[[0.1, 1.0 + 1e-12]], true).is_ok());
    }

    #[test]
    fn backward_zero_upstream_and_one_hot_vertex() {
        let cfg = single_dense(4, 2);
        let mut store = ParamStore::<f64>::new();
        let grid = HashGridTexture::zeros(cfg.clone(), &mut store).unwrap();
        let plan = grid.plan(&[[0.25, 0.75]], false).unwrap();
        let rows = [cfg.level_rows(0)];
        let g = HashGridTexture::encode_backward(&plan, &Tensor::<f64>::zeros(&[1, 2]), &rows).unwrap();
        assert!(g[0].data().iter().all(|&v| v == 0.0));
        let up = Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap();
        let g = HashGridTexture::encode_backward(&plan, &up, &rows).unwrap();
        let nonzero: Vec<_> = g[0].data().iter().enumerate().filter(|(_, &v)| v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0], (2 * (3 * 5 + 1), &1.0));
    }

    #[test]
    fn continuous_across_grid_lines() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = HashGridTexture::new(GridConfig::desk(), &mut store, &mut rng).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        // u = 3/16 is a line of level 0 (and of every finer dense level that divides it)
        let line = 3.0 / 16.0;
        let d = 1e-11;
        let e = tape.value(grid.encode(&tape, &p, &[[line - d, 0.4], [line + d, 0.4]]).unwrap());
        let w = e.last_dim();
        for k in 0..w {
            assert!((e.data()[k] - e.data()[w + k]).abs() < 1e-9);
        }
    }

    #[test]
    fn hashed_collision_rate_matches_birthday_bound() {
        let c = GridConfig { levels: 1, table_size: 1 << 12, features: 1, min_resolution: 1024, max_resolution: 1024 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cells = std::collections::HashSet::new();
        while cells.len() < 3000 {
            cells.insert((rng.random_range(0..=1024usize), rng.random_range(0..=1024usize)));
        }
        let rows: std::collections::HashSet<_> =
            cells.iter().map(|&(x, y)| c.cell_index(0, x, y).unwrap()).collect();
        let k = cells.len() as f64;
        let t = c.table_size as f64;
        let observed = k - rows.len() as f64;
        let expected = k - t * (1.0 - (1.0 - 1.0 / t).powf(k));
        assert!(observed > expected / 2.0 && observed < expected * 2.0, "{observed} vs {expected}");
    }
}
