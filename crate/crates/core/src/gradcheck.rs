//! Central-difference gradient checking.
//!
//! The numeric side only ever evaluates objective values (the forward path),
//! so it is independent of the analytic backward pass it is used to verify.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{DiffModel, Objective};

/// Coordinates whose analytic and numeric gradients are both below this
/// magnitude are compared against it instead of each other; at that scale the
/// finite-difference estimate is dominated by round-off.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub checked: usize,
}

fn objective_value(model: &impl DiffModel, obj: &dyn Objective) -> Result<f64> {
    // eval through the scorer interface; row gradients are discarded.
    struct Plain<'a, M>(&'a M);
    impl<M: DiffModel> crate::model::SequenceScorer for Plain<'_, M> {
        fn vocab_size(&self) -> usize {
            self.0.vocab_size()
        }
        fn score_rows(&self, ids: &[u32]) -> Result<ndarray::Array2<f64>> {
            self.0.score_rows(ids)
        }
    }
    Ok(obj.eval(&Plain(model))?.0)
}

/// Compares the analytic gradient of `obj` against central finite differences
/// with step `h` on the given coordinates. Relative error per coordinate is
/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn check_gradient(
    model: &mut impl DiffModel,
    obj: &dyn Objective,
    coords: &[usize],
    h: f64,
) -> Result<GradCheck> {
    let (_, analytic) = model.value_and_grad(obj)?;
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    for &c in coords {
        let orig = model.flat()[c];
        model.flat_mut()[c] = orig + h;
        let fp = objective_value(model, obj)?;
        model.flat_mut()[c] = orig - h;
        let fm = objective_value(model, obj)?;
        model.flat_mut()[c] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[c].abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        let rel = (analytic[c] - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = c;
        }
    }
    Ok(GradCheck { max_rel_err, worst_coord, checked: coords.len() })
}

/// Picks `n` distinct random parameter coordinates.
pub fn random_coords(num_params: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..num_params).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(n.min(num_params));
    all
}
