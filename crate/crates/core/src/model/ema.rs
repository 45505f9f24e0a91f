//! Teacher parameters as an exponential moving average of the student encoder.

use candle_core::{Device, Tensor};

use super::params::{ParamStore, TensorMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub teacher_params: Vec<f64>,
    pub momentum: f64,
}

impl EmaState {
    /// Copies the student parameters whose names start with `prefix`.
    pub fn from_store(store: &ParamStore, prefix: &str, momentum: f64) -> Result<Self> {
        check_momentum(momentum)?;
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut teacher_params = Vec::new();
        for (name, var) in store.iter().filter(|(n, _)| n.starts_with(prefix)) {
            names.push(name.to_string());
            shapes.push(var.as_tensor().dims().to_vec());
            teacher_params.extend(var.as_tensor().flatten_all()?.to_vec1::<f64>()?);
        }
        Ok(Self {
            names,
            shapes,
            teacher_params,
            momentum,
        })
    }

    /// The student's current values in this state's layout.
    pub fn student_flat(&self, store: &ParamStore) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.teacher_params.len());
        for (name, shape) in self.names.iter().zip(&self.shapes) {
            let var = store
                .get(name)
                .ok_or_else(|| Error::invalid(format!("student lacks teacher parameter {name}")))?;
            if var.as_tensor().dims() != shape.as_slice() {
                return Err(Error::shape(shape, var.as_tensor().dims()));
            }
            out.extend(var.as_tensor().flatten_all()?.to_vec1::<f64>()?);
        }
        Ok(out)
    }

    pub fn update_in_place(&mut self, student: &[f64]) -> Result<()> {
        if student.len() != self.teacher_params.len() {
            return Err(Error::shape(self.teacher_params.len(), student.len()));
        }
        let m = self.momentum;
        for (t, s) in self.teacher_params.iter_mut().zip(student) {
            *t = m * *t + (1.0 - m) * s;
        }
        Ok(())
    }

    pub fn to_map(&self) -> Result<TensorMap> {
        let mut map = TensorMap::default();
        let mut offset = 0;
        for (name, shape) in self.names.iter().zip(&self.shapes) {
            let n: usize = shape.iter().product();
            let t = Tensor::from_slice(&self.teacher_params[offset..offset + n], shape.as_slice(), &Device::Cpu)?;
            map.insert(name, t);
            offset += n;
        }
        Ok(map)
    }
}

fn check_momentum(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::invalid(format!("EMA momentum {m} outside [0, 1]")))
    }
}

/// `teacher ← m·teacher + (1−m)·student`, elementwise.
pub fn ema_update(state: &EmaState, student_params: &[f64]) -> Result<EmaState> {
    check_momentum(state.momentum)?;
    let mut next = state.clone();
    next.update_in_place(student_params)?;
    Ok(next)
}

/// Momentum ramped from `base` to `final_m` along a half cosine over `total` steps.
pub fn cosine_momentum(base: f64, final_m: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return final_m;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    final_m - (final_m - base) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(t: f64, m: f64) -> EmaState {
        EmaState {
            names: vec!["w".into()],
            shapes: vec![vec![1]],
            teacher_params: vec![t],
            momentum: m,
        }
    }

    #[test]
    fn momentum_extremes() {
        assert_eq!(ema_update(&state(3.0, 1.0), &[5.0]).unwrap().teacher_params, vec![3.0]);
        assert_eq!(ema_update(&state(3.0, 0.0), &[5.0]).unwrap().teacher_params, vec![5.0]);
        assert!(ema_update(&state(3.0, 0.5), &[5.0, 1.0]).is_err());
    }

    #[test]
    fn geometric_gap() {
        let mut s = state(1.0, 0.99);
        s = ema_update(&s, &[0.0]).unwrap();
        assert_eq!(s.teacher_params[0], 0.99);
        for k in 2..=30 {
            s = ema_update(&s, &[0.0]).unwrap();
            assert!((s.teacher_params[0] - 0.99f64.powi(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_ramp_endpoints() {
        assert_eq!(cosine_momentum(0.996, 1.0, 0, 100), 0.996);
        assert_eq!(cosine_momentum(0.996, 1.0, 100, 100), 1.0);
    }
}
