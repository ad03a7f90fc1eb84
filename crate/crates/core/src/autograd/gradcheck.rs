//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default step, in input units.
pub const GRADCHECK_STEP: f32 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f32,
    /// Check at most this many coordinates (sampled uniformly); `None`
    /// checks every coordinate of every input.
    pub max_coordinates: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { step: GRADCHECK_STEP, max_coordinates: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// `max |analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
}

/// Compares the tape gradient of scalar `f` against central differences
/// at every (or a sample of) input coordinate.
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    gradcheck_with(f, inputs, &GradcheckOptions::default()).map(|r| r.max_rel_error)
}

pub fn gradcheck_with<F>(f: F, inputs: &[Tensor], opts: &GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f32> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t)).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.scalar_value(out))
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t)).collect();
    let out = f(&tape, &vars)?;
    let out_shape = tape.shape(out);
    if out_shape.iter().product::<usize>() != 1 {
        return Err(Error::Usage(format!("gradcheck needs a scalar function, got shape {out_shape:?}")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j))).collect();
    if let Some(limit) = opts.max_coordinates {
        if limit < coords.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked: Vec<usize> = sample(&mut rng, coords.len(), limit).into_vec();
            picked.sort_unstable();
            coords = picked.into_iter().map(|i| coords[i]).collect();
        }
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_err = 0.0f64;
    for &(i, j) in &coords {
        let orig = work[i].data()[j];
        let plus = orig + opts.step;
        let minus = orig - opts.step;
        work[i].data_mut()[j] = plus;
        let fp = eval(&work)?;
        work[i].data_mut()[j] = minus;
        let fm = eval(&work)?;
        work[i].data_mut()[j] = orig;
        // the representable step, not the nominal one
        let numeric = (fp as f64 - fm as f64) / (plus as f64 - minus as f64);
        let err = (analytic[i][j] as f64 - numeric).abs() / numeric.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(GradcheckReport { max_rel_error: max_err, coordinates_checked: coords.len() })
}
