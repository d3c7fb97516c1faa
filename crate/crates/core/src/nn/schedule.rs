/// Step-decay learning rate: constant for an initial plateau, then multiplied
/// by `factor` at the end of the plateau and every `period` epochs after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub initial: f64,
    pub plateau: usize,
    pub period: usize,
    pub factor: f64,
}

impl Default for StepDecay {
    /// 0.01 for epochs 0-9, then x0.1 at epochs 10, 60, 110, ...
    fn default() -> Self {
        Self { initial: 0.01, plateau: 10, period: 50, factor: 0.1 }
    }
}

impl StepDecay {
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.plateau {
            return self.initial;
        }
        let decays = 1 + (epoch - self.plateau) / self.period.max(1);
        self.initial * self.factor.powi(decays as i32)
    }
}

/// Learning rate for `epoch` under the default schedule.
pub fn lr_schedule(epoch: usize) -> f64 {
    StepDecay::default().lr(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn milestones() {
        assert_eq!(lr_schedule(0), 0.01);
        assert_eq!(lr_schedule(9), 0.01);
        assert!((lr_schedule(10) - 1e-3).abs() < 1e-18);
        assert!((lr_schedule(59) - 1e-3).abs() < 1e-18);
        assert!((lr_schedule(60) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(110) - 1e-5).abs() < 1e-19);
        assert!((lr_schedule(160) - 1e-6).abs() < 1e-20);
    }
}
