//! Teacher maintenance. The teacher is never touched by the optimizer; its
//! only update is an exponential moving average of the student, with the
//! momentum coefficient annealed along a half cosine from its start value to
//! its end value over the run.

use crate::error::CarpError;
use crate::model::ModelParams;

/// Half-cosine interpolation from `start` (step 0) to `end` (step `total`).
/// Endpoints are returned exactly; in between the curve is monotone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(start: f64, end: f64, total_steps: usize) -> Self {
        assert!(total_steps > 0, "schedule needs at least one step");
        CosineSchedule { start, end, total_steps }
    }

    pub fn value(&self, step: usize) -> f64 {
        assert!(step <= self.total_steps, "step {step} beyond schedule length {}", self.total_steps);
        if step == 0 {
            return self.start;
        }
        if step == self.total_steps {
            return self.end;
        }
        let progress = step as f64 / self.total_steps as f64;
        self.end + 0.5 * (self.start - self.end) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Cosine-annealed EMA momentum, validated to stay inside [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaSchedule {
    schedule: CosineSchedule,
}

impl EmaSchedule {
    pub fn new(eta_start: f64, eta_end: f64, total_steps: usize) -> Result<Self, CarpError> {
        if !(0.0..=1.0).contains(&eta_start) || !(0.0..=1.0).contains(&eta_end) {
            return Err(CarpError::Config(format!(
                "EMA momentum must lie in [0,1], got start {eta_start} end {eta_end}"
            )));
        }
        if eta_start > eta_end {
            return Err(CarpError::Config(format!(
                "EMA momentum must anneal upward, got start {eta_start} > end {eta_end}"
            )));
        }
        if total_steps == 0 {
            return Err(CarpError::Config("EMA schedule needs at least one step".into()));
        }
        Ok(EmaSchedule { schedule: CosineSchedule::new(eta_start, eta_end, total_steps) })
    }

    pub fn eta(&self, step: usize) -> f64 {
        self.schedule.value(step)
    }
}

/// teacher <- eta * teacher + (1 - eta) * student, elementwise over the whole
/// parameter tree, computed in the delta form t + (1 - eta) * (s - t) so a
/// teacher that already equals the student is an exact fixed point for every
/// eta. eta = 0 copies the student; eta = 1 leaves the teacher untouched bit
/// for bit.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, eta: f64) {
    assert!((0.0..=1.0).contains(&eta), "eta {eta} outside [0,1]");
    let student_slices = student.param_slices();
    let mut teacher_slices = teacher.param_slices_mut();
    assert_eq!(student_slices.len(), teacher_slices.len(), "parameter trees differ");
    if eta == 1.0 {
        return;
    }
    let blend = 1.0 - eta;
    for (t, s) in teacher_slices.iter_mut().zip(&student_slices) {
        assert_eq!(t.len(), s.len(), "parameter tensor shapes differ");
        if eta == 0.0 {
            t.copy_from_slice(s);
            continue;
        }
        for (tv, &sv) in t.iter_mut().zip(s.iter()) {
            *tv += blend * (sv - *tv);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelDims};
    use crate::numerics::Rng;

    fn pair() -> (ModelParams, ModelParams) {
        let dims = ModelDims { input: 3, encoder: vec![4], projector: vec![3], prototypes: 5 };
        let teacher = init_model(&dims, &mut Rng::new(1));
        let student = init_model(&dims, &mut Rng::new(2));
        (teacher, student)
    }

    #[test]
    fn eta_zero_copies_student() {
        let (mut teacher, student) = pair();
        ema_update(&mut teacher, &student, 0.0);
        assert_eq!(teacher, student, "eta = 0 must copy the student exactly");
    }

    #[test]
    fn eta_one_is_bit_identical_identity() {
        let (mut teacher, student) = pair();
        let before = teacher.clone();
        ema_update(&mut teacher, &student, 1.0);
        assert_eq!(teacher, before, "eta = 1 must not change a single bit");
    }

    #[test]
    fn midpoint_arithmetic() {
        let dims = ModelDims { input: 1, encoder: vec![], projector: vec![1], prototypes: 1 };
        let mut teacher = init_model(&dims, &mut Rng::new(0));
        let mut student = init_model(&dims, &mut Rng::new(0));
        teacher.projector[0].weight.set(0, 0, 1.0);
        student.projector[0].weight.set(0, 0, 3.0);
        ema_update(&mut teacher, &student, 0.5);
        assert_eq!(teacher.projector[0].weight.get(0, 0), 2.0, "0.5*1 + 0.5*3 = 2");
    }

    #[test]
    fn ema_is_affine_per_coordinate() {
        let (mut teacher, student) = pair();
        let t0: Vec<f64> = teacher.param_slices().concat();
        let s0: Vec<f64> = student.param_slices().concat();
        let eta = 0.73;
        ema_update(&mut teacher, &student, eta);
        let t1: Vec<f64> = teacher.param_slices().concat();
        for ((a, b), c) in t0.iter().zip(&s0).zip(&t1) {
            assert!(
                (c - (eta * a + (1.0 - eta) * b)).abs() < 5e-15,
                "the delta form must agree with the affine map up to roundoff"
            );
        }
    }

    #[test]
    fn teacher_equal_to_student_is_a_fixed_point() {
        let (_, student) = pair();
        let mut teacher = student.clone();
        ema_update(&mut teacher, &student, 0.97);
        assert_eq!(teacher, student, "agreeing branches must not drift, even by an ulp");
    }

    #[test]
    #[should_panic(expected = "outside [0,1]")]
    fn eta_out_of_range_panics() {
        let (mut teacher, student) = pair();
        ema_update(&mut teacher, &student, 1.5);
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        let s = CosineSchedule::new(0.6, 0.006, 100);
        assert_eq!(s.value(0), 0.6, "start endpoint must be exact");
        assert_eq!(s.value(100), 0.006, "end endpoint must be exact");
        let mid = s.value(50);
        assert!((mid - 0.303).abs() < 1e-12, "midpoint must be the arithmetic mean, got {mid}");
        for step in 1..=100 {
            assert!(s.value(step) <= s.value(step - 1) + 1e-15, "decreasing schedule must be monotone");
        }
    }

    #[test]
    fn ema_schedule_validates_and_is_monotone() {
        assert!(EmaSchedule::new(0.99, 1.0, 10).is_ok());
        assert!(EmaSchedule::new(1.2, 1.3, 10).is_err(), "out of [0,1]");
        assert!(EmaSchedule::new(0.9, 0.5, 10).is_err(), "must anneal upward");
        let e = EmaSchedule::new(0.99, 1.0, 400).unwrap();
        assert_eq!(e.eta(0), 0.99);
        assert_eq!(e.eta(400), 1.0);
        for step in 1..=400 {
            assert!(e.eta(step) >= e.eta(step - 1) - 1e-15, "eta must grow along the run");
        }
    }

    #[test]
    #[should_panic(expected = "beyond schedule length")]
    fn schedule_rejects_steps_past_the_end() {
        let s = CosineSchedule::new(1.0, 0.0, 10);
        let _ = s.value(11);
    }
}
