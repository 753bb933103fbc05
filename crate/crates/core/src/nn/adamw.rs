use std::f64::consts::PI;

use super::layers::Parameters;

/// Learning-rate schedule over optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `min_lr` over `total_steps`.
    Cosine {
        total_steps: usize,
        min_lr: f64,
    },
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: LrSchedule,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            schedule: LrSchedule::Constant,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next step.
    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine { total_steps, min_lr } => {
                let frac = (self.step as f64 / total_steps.max(1) as f64).min(1.0);
                min_lr + 0.5 * (self.learning_rate - min_lr) * (1.0 + (PI * frac).cos())
            }
        }
    }

    /// One AdamW update of every parameter exposed by `params`.
    ///
    /// Returns `false` and leaves parameters and moments untouched when any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut dyn Parameters) -> bool {
        let mut finite = true;
        params.visit_params(&mut |_, g| finite &= g.iter().all(|v| v.is_finite()));
        if !finite {
            return false;
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, decay) = (self.beta1, self.beta2, self.epsilon, 1.0 - lr * self.weight_decay);
        let first = &mut self.first;
        let second = &mut self.second;
        let mut idx = 0;
        params.visit_params(&mut |p, g| {
            if first.len() <= idx {
                first.push(vec![0.0; p.len()]);
                second.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut first[idx], &mut second[idx]);
            assert_eq!(m.len(), p.len(), "parameter layout changed between steps");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
        true
    }
}

/// Free-function form of [`OptimizerState::step`].
pub fn adamw_step(state: &mut OptimizerState, params: &mut dyn Parameters) -> bool {
    state.step(params)
}
