use crate::{Error, Image, Result};

/// Repeated noisy acquisitions of one static sample.
#[derive(Clone, Debug)]
pub struct CalibrationStack {
    pub observations: Vec<Image>,
    pub signal_estimate: Option<Image>,
}

impl CalibrationStack {
    pub fn new(observations: Vec<Image>) -> Result<Self> {
        let stack = Self {
            observations,
            signal_estimate: None,
        };
        stack.validate()?;
        Ok(stack)
    }

    fn validate(&self) -> Result<()> {
        if self.observations.len() < 2 {
            return Err(Error::Input(format!(
                "calibration needs at least 2 observations, got {}",
                self.observations.len()
            )));
        }
        let dim = self.observations[0].dim();
        if let Some((i, o)) = self.observations.iter().enumerate().find(|(_, o)| o.dim() != dim) {
            return Err(Error::Dimension(format!(
                "calibration observation {i} has shape {:?}, expected {dim:?}",
                o.dim()
            )));
        }
        Ok(())
    }

    /// Pixel-wise mean of the observations; stored on the stack.
    pub fn estimate_signal(&mut self) -> Result<&Image> {
        self.validate()?;
        let mut acc = Image::zeros(self.observations[0].dim());
        for o in &self.observations {
            acc += o;
        }
        acc /= self.observations.len() as f64;
        Ok(self.signal_estimate.insert(acc))
    }

    pub fn pixel_count(&self) -> usize {
        self.observations.iter().map(|o| o.len()).sum()
    }
}
