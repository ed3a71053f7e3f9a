/// One-sample transport delay between the board and the cycler.
#[derive(Debug, Clone)]
pub struct DelayLine<F> {
    slot: Option<F>,
}

impl<F> Default for DelayLine<F> {
    fn default() -> Self {
        Self { slot: None }
    }
}

impl<F> DelayLine<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// A line that already holds `frame`, as if the board had been running
    /// before the first push.
    pub fn primed(frame: F) -> Self {
        Self { slot: Some(frame) }
    }

    /// Inserts the newest frame and returns the one pushed one period
    /// earlier; `None` on a cold start.
    pub fn push(&mut self, frame: F) -> Option<F> {
        self.slot.replace(frame)
    }

    pub fn peek(&self) -> Option<&F> {
        self.slot.as_ref()
    }
}
