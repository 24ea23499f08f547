//! Process-wide cache of FFT plans, keyed by transform length.
//!
//! Plans are immutable once built and safe to share across threads; each
//! caller supplies its own scratch buffer.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Plan {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

fn cache() -> &'static Mutex<HashMap<usize, Plan>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Plan>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub(crate) fn plan(len: usize) -> Plan {
    let mut map = cache().lock().unwrap();
    map.entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Plan {
                forward: planner.plan_fft_forward(len),
                inverse: planner.plan_fft_inverse(len),
            }
        })
        .clone()
}

/// In-place unnormalized forward FFT of one buffer of length `plan.len()`.
pub(crate) fn forward(plan: &Plan, buf: &mut [Complex<f64>], scratch: &mut Vec<Complex<f64>>) {
    scratch.resize(plan.forward.get_inplace_scratch_len(), Complex::default());
    plan.forward.process_with_scratch(buf, scratch);
}

/// In-place inverse FFT; divides by the length so that inverse(forward(x)) = x.
pub(crate) fn inverse(plan: &Plan, buf: &mut [Complex<f64>], scratch: &mut Vec<Complex<f64>>) {
    scratch.resize(plan.inverse.get_inplace_scratch_len(), Complex::default());
    plan.inverse.process_with_scratch(buf, scratch);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}
