//! Gradient-check suites per component, run at `f64` with central
//! differences. The `gradcheck` command and the acceptance tests share them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::critic::{add_noise, sample_noise, Conditioning, CriticSpaceAdapter, LoraConfig, LoraDenoiser, NoiseSchedule, ScheduleKind};
use crate::diffcore::{grad_check_with, Bound, DiffError, GradCheckOptions, ParamStore, Tape, Tensor, Var};
use crate::optim::Model;
use crate::scene::{rasterize, sample_reference_uvs, synth, Camera, Vec3};
use crate::texfield::{GridConfig, HashGridTexture};
use crate::xattn::{decode_frame_with, multihead_attention, AttentionShape, DecoderConfig, FrameLayout, Segment};

/// Largest relative error a case may report and still pass.
pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Diffcore,
    Texfield,
    Xattn,
    Critic,
    All,
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diffcore" => Ok(Self::Diffcore),
            "texfield" => Ok(Self::Texfield),
            "xattn" => Ok(Self::Xattn),
            "critic" => Ok(Self::Critic),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown component {s:?} (expected diffcore, texfield, xattn, critic or all)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub component: &'static str,
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{}: max rel error {:.3e} over {} coords",
            if self.passed() { "PASS" } else { "FAIL" },
            self.component,
            self.name,
            self.max_rel_error,
            self.coords_checked
        )
    }
}

type Objective<'a> = Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var, DiffError> + 'a>;

struct Case<'a> {
    name: String,
    point: Vec<Tensor<f64>>,
    f: Objective<'a>,
    max_coords: Option<usize>,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    sample_noise::<f64>(shape, rng).map(|v| v * scale)
}

/// `sum(y ⊙ w)` for a fixed random `w`, so every output coordinate carries
/// a distinct weight.
fn project(tape: &Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var, DiffError> {
    let w = tape.constant(w.clone());
    tape.sum(tape.mul(y, w)?)
}

fn run(component: &'static str, cases: Vec<Case<'_>>, seed: u64) -> Result<Vec<CaseResult>, DiffError> {
    cases
        .into_iter()
        .map(|case| {
            let opts = GradCheckOptions { step: STEP, max_coords: case.max_coords, seed };
            let report = grad_check_with(&case.f, &case.point, &opts)?;
            Ok(CaseResult {
                component,
                name: case.name,
                max_rel_error: report.max_rel_error(),
                coords_checked: report.leaves.iter().map(|l| l.coords_checked).sum(),
            })
        })
        .collect()
}

/// Run the suite for `component` with data drawn from `seed`.
pub fn gradcheck_suite(component: Component, seed: u64) -> Result<Vec<CaseResult>, DiffError> {
    let mut out = Vec::new();
    if matches!(component, Component::Diffcore | Component::All) {
        out.extend(diffcore_suite(seed)?);
    }
    if matches!(component, Component::Texfield | Component::All) {
        out.extend(texfield_suite(seed)?);
    }
    if matches!(component, Component::Xattn | Component::All) {
        out.extend(xattn_suite(seed)?);
    }
    if matches!(component, Component::Critic | Component::All) {
        out.extend(critic_suite(seed)?);
    }
    Ok(out)
}

fn unary<'a>(name: &str, point: Tensor<f64>, w: Tensor<f64>, op: impl Fn(&Tape<f64>, Var) -> Result<Var, DiffError> + 'a) -> Case<'a> {
    Case {
        name: name.into(),
        point: vec![point],
        f: Box::new(move |tape, x| project(tape, op(tape, x[0])?, &w)),
        max_coords: None,
    }
}

fn binary<'a>(
    name: &str,
    a: Tensor<f64>,
    b: Tensor<f64>,
    w: Tensor<f64>,
    op: impl Fn(&Tape<f64>, Var, Var) -> Result<Var, DiffError> + 'a,
) -> Case<'a> {
    Case {
        name: name.into(),
        point: vec![a, b],
        f: Box::new(move |tape, x| project(tape, op(tape, x[0], x[1])?, &w)),
        max_coords: None,
    }
}

fn diffcore_suite(seed: u64) -> Result<Vec<CaseResult>, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    // relu inputs kept away from the kink
    let away = normal(r, &[4, 5], 1.0).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let offset = normal(r, &[4, 5], 1.0);
    let cases = vec![
        binary("add", normal(r, &[4, 5], 1.0), normal(r, &[4, 5], 1.0), normal(r, &[4, 5], 1.0), |t, a, b| t.add(a, b)),
        binary("add_broadcast", normal(r, &[4, 5], 1.0), normal(r, &[5], 1.0), normal(r, &[4, 5], 1.0), |t, a, b| t.add(a, b)),
        binary("sub", normal(r, &[3, 4], 1.0), normal(r, &[3, 4], 1.0), normal(r, &[3, 4], 1.0), |t, a, b| t.sub(a, b)),
        binary("mul", normal(r, &[3, 4], 1.0), normal(r, &[3, 4], 1.0), normal(r, &[3, 4], 1.0), |t, a, b| t.mul(a, b)),
        binary("mul_broadcast", normal(r, &[3, 4], 1.0), normal(r, &[4], 1.0), normal(r, &[3, 4], 1.0), |t, a, b| t.mul(a, b)),
        binary("matmul", normal(r, &[3, 4], 1.0), normal(r, &[4, 5], 1.0), normal(r, &[3, 5], 1.0), |t, a, b| t.matmul(a, b)),
        unary("scale", normal(r, &[6], 1.0), normal(r, &[6], 1.0), |t, a| t.scale(a, -1.7)),
        unary("offset", normal(r, &[4, 5], 1.0), normal(r, &[4, 5], 1.0), move |t, a| t.offset(a, &offset)),
        unary("relu", away, normal(r, &[4, 5], 1.0), |t, a| t.relu(a)),
        unary("sigmoid", normal(r, &[4, 5], 2.0), normal(r, &[4, 5], 1.0), |t, a| t.sigmoid(a)),
        unary("softmax_rows", normal(r, &[4, 6], 2.0), normal(r, &[4, 6], 1.0), |t, a| t.softmax_rows(a)),
        unary("sum", normal(r, &[3, 4], 1.0), normal(r, &[], 1.0), |t, a| t.sum(a)),
        unary("mean", normal(r, &[3, 4], 1.0), normal(r, &[], 1.0), |t, a| t.mean(a)),
        unary("mean_rows", normal(r, &[5, 3], 1.0), normal(r, &[3], 1.0), |t, a| t.mean_rows(a)),
        binary("concat_cols", normal(r, &[3, 2], 1.0), normal(r, &[3, 4], 1.0), normal(r, &[3, 6], 1.0), |t, a, b| {
            t.concat_cols(&[a, b])
        }),
        binary("concat_rows", normal(r, &[2, 3], 1.0), normal(r, &[4, 3], 1.0), normal(r, &[6, 3], 1.0), |t, a, b| {
            t.concat_rows(&[a, b])
        }),
        unary("reshape", normal(r, &[3, 4], 1.0), normal(r, &[2, 6], 1.0), |t, a| t.reshape(a, &[2, 6])),
        unary("gather_rows", normal(r, &[5, 3], 1.0), normal(r, &[6, 3], 1.0), |t, a| t.gather_rows(a, &[4, 0, 0, 2, 4, 1])),
        unary("scatter_rows", normal(r, &[4, 3], 1.0), normal(r, &[6, 3], 1.0), |t, a| t.scatter_rows(a, &[5, 1, 1, 3], 6)),
    ];
    run("diffcore", cases, seed)
}

fn texfield_suite(seed: u64) -> Result<Vec<CaseResult>, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a hashed top level and dense coarse levels; table small enough that
    // most rows are touched by the queries
    let config = GridConfig { levels: 3, table_size: 1 << 6, features: 2, min_resolution: 2, max_resolution: 16 };
    let mut store = ParamStore::<f64>::new();
    let grid = HashGridTexture::new(config, &mut store, &mut rng).map_err(|e| DiffError::Invalid(e.to_string()))?;
    let uvs: Vec<[f64; 2]> = (0..40).map(|_| [rng.random(), rng.random()]).collect();
    let w = normal(&mut rng, &[uvs.len(), grid.embed_width()], 1.0);
    let point: Vec<Tensor<f64>> = store.iter().map(|(_, t)| normal(&mut rng, t.shape(), 0.5)).collect();
    let case = Case {
        name: "hash_grid_encode".into(),
        point,
        f: Box::new(move |tape, x| {
            let p = Bound::from_vars(x.to_vec());
            let emb = grid.encode(tape, &p, &uvs).map_err(|e| DiffError::Invalid(e.to_string()))?;
            project(tape, emb, &w)
        }),
        max_coords: None,
    };
    run("texfield", vec![case], seed)
}

fn xattn_suite(seed: u64) -> Result<Vec<CaseResult>, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = AttentionShape { heads: 2, query_tile: 3, key_tile: 2 };
    let segments = vec![Segment { q: 0..4, k: 0..3 }, Segment { q: 4..7, k: 3..6 }];
    let w_attn = normal(&mut rng, &[7, 6], 1.0);
    let attention = Case {
        name: "multihead_attention".into(),
        point: vec![normal(&mut rng, &[7, 6], 1.0), normal(&mut rng, &[6, 6], 1.0), normal(&mut rng, &[6, 6], 1.0)],
        f: Box::new(move |tape, x| {
            let a = multihead_attention(tape, x[0], x[1], x[2], &segments, shape).map_err(|e| DiffError::Invalid(e.to_string()))?;
            project(tape, a, &w_attn)
        }),
        max_coords: None,
    };

    // the whole decoder on a 4×4 view into a room corner, where several
    // instances share the frame
    let scene = synth::box_room();
    let camera = Camera::new(Vec3::new(0.5, 1.2, 0.5), Vec3::new(-2.0, 0.6, -2.0), Vec3::y(), 70.0, 0.05, 20.0);
    let frame = rasterize(&scene, &camera, 4, 4).map_err(|e| DiffError::Invalid(e.to_string()))?;
    let layout = FrameLayout::new(&frame);
    let refs = sample_reference_uvs(&scene, 5, seed).map_err(|e| DiffError::Invalid(e.to_string()))?;
    let grid = GridConfig { levels: 2, table_size: 1 << 6, features: 2, min_resolution: 2, max_resolution: 8 };
    let decoder = DecoderConfig { heads: 2, head_hidden: 6, head_layers: 2, n_ref: 5, ..DecoderConfig::desk() };
    let model = Model::<f64>::new(grid, decoder, &mut rng).map_err(|e| DiffError::Invalid(e.to_string()))?;
    // zero-initialized layers would make many gradients vanish; check at a
    // generic point instead
    let point: Vec<Tensor<f64>> = model.store.iter().map(|(_, t)| normal(&mut rng, t.shape(), 0.5)).collect();
    let w_img = normal(&mut rng, &[4, 4, 3], 1.0);
    let decoder_case = Case {
        name: format!("decoder_4x4 ({} instances)", layout.groups.len()),
        point,
        f: Box::new(move |tape, x| {
            let p = Bound::from_vars(x.to_vec());
            let img = decode_frame_with(tape, &p, &model.grid, &model.decoder, &layout, Some(&refs))
                .map_err(|e| DiffError::Invalid(e.to_string()))?;
            project(tape, img, &w_img)
        }),
        max_coords: Some(48),
    };
    run("xattn", vec![attention, decoder_case], seed)
}

fn critic_suite(seed: u64) -> Result<Vec<CaseResult>, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (3, 4);
    let lora = LoraDenoiser::<f64>::new(LoraConfig { width: 6, time_freqs: 2, channels: 3, prompt_dim: 2 }, &mut rng)
        .map_err(|e| DiffError::Invalid(e.to_string()))?;
    let schedule = NoiseSchedule::new(ScheduleKind::Linear, 1000).map_err(|e| DiffError::Invalid(e.to_string()))?;
    let render = Tensor::from_vec(&[h, w, 3], (0..h * w * 3).map(|_| rng.random::<f64>()).collect())?;
    let eps = sample_noise::<f64>(&[h, w, 3], &mut rng);
    let depth = Tensor::from_vec(&[h, w], (0..h * w).map(|_| rng.random::<f64>()).collect())?;
    let cond = Conditioning::new(depth, vec![0.3, -0.8]);
    let t = 0.37;
    let x_t = add_noise(&render, schedule.alpha_bar_at(t), &eps).map_err(|e| DiffError::Invalid(e.to_string()))?;
    let point: Vec<Tensor<f64>> = lora.store.iter().map(|(_, t)| normal(&mut rng, t.shape(), 0.5)).collect();
    let lora_case = Case {
        name: "lora_loss".into(),
        point,
        f: Box::new(move |tape, x| {
            let p = Bound::from_vars(x.to_vec());
            let pred = lora.forward(tape, &p, &x_t, &cond, t).map_err(|e| DiffError::Invalid(e.to_string()))?;
            let d = tape.sub(pred, tape.constant(eps.clone()))?;
            tape.mean(tape.mul(d, d)?)
        }),
        max_coords: None,
    };
    let adapter = CriticSpaceAdapter::AvgPool { k: 2 };
    let w_pool = normal(&mut rng, &[3, 3, 3], 1.0);
    let pool_case = unary("avg_pool_adapter", normal(&mut rng, &[5, 6, 3], 1.0), w_pool, move |t, a| {
        adapter.record(t, a).map_err(|e| DiffError::Invalid(e.to_string()))
    });
    run("critic", vec![lora_case, pool_case], seed)
}
