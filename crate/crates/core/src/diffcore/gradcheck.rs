//! Central finite-difference gradient checking at 64-bit precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffError, Tape, Tensor, Var};

/// Gradients below this magnitude are compared absolutely. Central
/// differences at step 1e-5 carry rounding noise of roughly 1e-11 times
/// the size of the intermediate sums, so a coordinate whose true gradient
/// is zero reads as noise at that level.
const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per leaf.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LeafReport {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub coords_checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

/// Check every coordinate of every leaf with step `step`.
pub fn grad_check<F, E>(f: F, point: &[Tensor<f64>], step: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
    E: std::error::Error + Send + Sync + 'static,
{
    grad_check_with(f, point, &GradCheckOptions { step, ..Default::default() })
}

/// Compare the tape gradient of the scalar function `f` at `point` with
/// central differences; relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-5)`.
pub fn grad_check_with<F, E>(
    f: F,
    point: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
    E: std::error::Error + Send + Sync + 'static,
{
    if opts.step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(DiffError::Invalid(format!("step must be positive, got {}", opts.step)));
    }
    let eval = |pt: &[Tensor<f64>]| -> Result<f64, DiffError> {
        let tape = Tape::new();
        let vars = pt.iter().map(|t| tape.constant(t.clone())).collect::<Vec<_>>();
        let out = f(&tape, &vars).map_err(|e| DiffError::Eval(Box::new(e)))?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(DiffError::NotScalar { shape: v.shape().to_vec() });
        }
        Ok(v.item())
    };

    let first = eval(point)?;
    let second = eval(point)?;
    if first.to_bits() != second.to_bits() {
        return Err(DiffError::NonDeterministic);
    }

    let tape = Tape::new();
    let vars = point.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&tape, &vars).map_err(|e| DiffError::Eval(Box::new(e)))?;
    let mut grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = point.to_vec();
    let mut leaves = Vec::with_capacity(point.len());
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.take(*var).expect("leaf gradient");
        let n = point[li].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &c in &coords {
            let x0 = work[li].data()[c];
            work[li].data_mut()[c] = x0 + opts.step;
            let fp = eval(&work)?;
            work[li].data_mut()[c] = x0 - opts.step;
            let fm = eval(&work)?;
            work[li].data_mut()[c] = x0;
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = analytic.data()[c];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max((a - numeric).abs() / denom);
            max_abs = max_abs.max(a.abs());
        }
        leaves.push(LeafReport {
            index: li,
            max_rel_error: max_rel,
            max_abs_analytic: max_abs,
            coords_checked: coords.len(),
        });
    }
    Ok(GradCheckReport { leaves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_function_has_zero_error_and_zero_gradient() {
        let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let report = grad_check(
            |tape, _v| -> Result<Var, DiffError> { Ok(tape.constant(Tensor::scalar(4.2))) },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.leaves[0].max_rel_error, 0.0);
        assert_eq!(report.leaves[0].max_abs_analytic, 0.0);
    }

    #[test]
    fn quadratic_form_matches_symmetrized_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[4, 4]);
        let x = random(&mut rng, &[1, 4]);
        // analytic: (A + Aᵀ) x
        let ad = a.data();
        let xd = x.data();
        let expected: Vec<f64> =
            (0..4).map(|i| (0..4).map(|j| (ad[i * 4 + j] + ad[j * 4 + i]) * xd[j]).sum()).collect();
        let quad = |tape: &Tape<f64>, v: &[Var]| -> Result<Var, DiffError> {
            let am = tape.constant(a.clone());
            let xt = tape.reshape(v[0], &[4, 1])?;
            let ax = tape.matmul(am, xt)?;
            let ax = tape.reshape(ax, &[1, 4])?;
            let p = tape.mul(v[0], ax)?;
            tape.sum(p)
        };
        let report = grad_check(quad, std::slice::from_ref(&x), 1e-5).unwrap();
        assert!(report.max_rel_error() <= 1e-6, "{report:?}");

        let tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let out = quad(&tape, &[xv]).unwrap();
        let g = tape.backward(out).unwrap();
        for (got, want) in g.get(xv).unwrap().data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn non_deterministic_closure_is_rejected() {
        let counter = std::cell::Cell::new(0.0);
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let res = grad_check(
            |tape, v| -> Result<Var, DiffError> {
                counter.set(counter.get() + 1.0);
                let s = tape.sum(v[0])?;
                tape.scale(s, counter.get())
            },
            &[x],
            1e-5,
        );
        assert!(matches!(res, Err(DiffError::NonDeterministic)));
    }
}
