//! Central-difference gradient verification.
//!
//! `check_gradients` builds the computation twice per perturbed element and
//! compares the symmetric difference quotient against the tape's analytic
//! gradient. The difference arithmetic runs in f64 regardless of the tape
//! precision so the check measures the gradient, not the quotient's own
//! roundoff.

use super::{Real, Tape, TapeResult, ValueId};

/// One differentiable input to the function under test.
#[derive(Debug, Clone)]
pub struct FdInput<F> {
    pub name: &'static str,
    pub data: Vec<F>,
    pub shape: Vec<usize>,
}

impl<F: Real> FdInput<F> {
    pub fn new(name: &'static str, data: Vec<F>, shape: &[usize]) -> Self {
        FdInput { name, data, shape: shape.to_vec() }
    }
}

/// A single element where analytic and numeric gradients disagree.
#[derive(Debug, Clone)]
pub struct FdFailure {
    pub input: &'static str,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

impl std::fmt::Display for FdFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[{}]: analytic {:.9e} vs numeric {:.9e} (rel err {:.3e})",
            self.input, self.element, self.analytic, self.numeric, self.error
        )
    }
}

/// Step size and tolerance tuned per precision. f32 needs a coarser step:
/// with ~1e-7 relative roundoff on the function value, a 1e-5 step leaves
/// no signal in the quotient.
pub struct FdSettings {
    pub step: f64,
    pub tolerance: f64,
}

impl FdSettings {
    pub fn for_f64() -> Self {
        FdSettings { step: 1e-5, tolerance: 1e-6 }
    }

    pub fn for_f32() -> Self {
        FdSettings { step: 1e-2, tolerance: 1e-4 }
    }
}

/// Relative error with an absolute floor, so gradients near zero are judged
/// on absolute terms.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1.0)
}

/// Check the analytic gradient of `f` at the given inputs against central
/// differences, element by element. `f` receives a fresh tape and the leaf
/// handles in input order and must return a scalar loss.
///
/// Returns all mismatches; empty means the gradient is verified.
pub fn check_gradients<F, G>(inputs: &[FdInput<F>], settings: &FdSettings, f: G) -> TapeResult<Vec<FdFailure>>
where
    F: Real,
    G: Fn(&mut Tape<F>, &[ValueId]) -> TapeResult<ValueId>,
{
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs
        .iter()
        .map(|inp| tape.leaf(inp.data.clone(), &inp.shape, true))
        .collect::<TapeResult<_>>()?;
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;

    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, inp)| match tape.grad(id) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            None => vec![0.0; inp.data.len()],
        })
        .collect();

    let eval = |points: &[Vec<F>]| -> TapeResult<f64> {
        let mut t = Tape::new();
        t.set_recording(false);
        let ids: Vec<ValueId> = points
            .iter()
            .zip(inputs)
            .map(|(data, inp)| t.leaf(data.clone(), &inp.shape, true))
            .collect::<TapeResult<_>>()?;
        let loss = f(&mut t, &ids)?;
        Ok(t.scalar(loss)?.as_f64())
    };

    let h = settings.step;
    let mut failures = Vec::new();
    let mut points: Vec<Vec<F>> = inputs.iter().map(|inp| inp.data.clone()).collect();
    for (which, inp) in inputs.iter().enumerate() {
        for e in 0..inp.data.len() {
            let orig = points[which][e];
            points[which][e] = F::from_f64(orig.as_f64() + h);
            let up = eval(&points)?;
            points[which][e] = F::from_f64(orig.as_f64() - h);
            let down = eval(&points)?;
            points[which][e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[which][e];
            let error = rel_error(a, numeric);
            if error > settings.tolerance {
                failures.push(FdFailure {
                    input: inp.name,
                    element: e,
                    analytic: a,
                    numeric,
                    error,
                });
            }
        }
    }
    Ok(failures)
}

/// Single-input convenience wrapper around [`check_gradients`].
pub fn check_gradient<F, G>(
    name: &'static str,
    data: Vec<F>,
    shape: &[usize],
    settings: &FdSettings,
    f: G,
) -> TapeResult<Vec<FdFailure>>
where
    F: Real,
    G: Fn(&mut Tape<F>, ValueId) -> TapeResult<ValueId>,
{
    check_gradients(&[FdInput::new(name, data, shape)], settings, |t, ids| f(t, ids[0]))
}
