use crate::error::{Error, Result};
use crate::int3dnet::ModelParams;

/// Adam with bias correction. Moments are kept in double precision;
/// parameters are rounded to single precision after every step so that
/// checkpoints store them exactly.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: ModelParams,
    v: ModelParams,
    steps: u64,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::Numeric(format!("gradient of {name} is not finite")));
        }
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = &grads.at(i).value;
            let m = &mut self.m.at_mut(i).value;
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = &mut self.v.at_mut(i).value;
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (&self.m.at(i).value, &self.v.at(i).value);
            let p = &mut params.at_mut(i).value;
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
            });
        }
        params.quantize_f32();
        if let Some(name) = params.first_non_finite() {
            return Err(Error::Numeric(format!("parameter {name} became non-finite")));
        }
        Ok(())
    }
}
