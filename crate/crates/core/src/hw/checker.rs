//! Shift-register pattern checker with a set-only activation latch.

use crate::attack::TriggerPattern;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TriggerChecker {
    pattern: Vec<u8>,
    register: Vec<u8>,
    /// Bits shifted in since the last register clear, capped at `d`. The
    /// comparison only counts once the register is full.
    fill: usize,
    latched: bool,
}

impl TriggerChecker {
    pub fn new(pattern: &TriggerPattern) -> Self {
        TriggerChecker {
            pattern: pattern.bits.clone(),
            register: vec![0; pattern.d()],
            fill: 0,
            latched: false,
        }
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    /// Shifts in one timestep's output bit of the monitored neuron. Returns
    /// whether the register equals the pattern after the shift.
    pub fn step(&mut self, bit: bool) -> bool {
        let d = self.register.len();
        self.register.rotate_left(1);
        self.register[d - 1] = bit as u8;
        self.fill = (self.fill + 1).min(d);
        let hit = self.fill == d && self.register == self.pattern;
        self.latched |= hit;
        hit
    }

    pub fn latched(&self) -> bool {
        self.latched
    }

    pub fn register(&self) -> &[u8] {
        &self.register
    }

    /// Empties the shift register. The latch keeps its value.
    pub fn clear_register(&mut self) {
        self.register.fill(0);
        self.fill = 0;
    }

    /// Power-on state: empty register, latch released.
    pub fn power_on(&mut self) {
        self.clear_register();
        self.latched = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(s: &str) -> TriggerChecker {
        TriggerChecker::new(&TriggerPattern::parse(s, 0).unwrap())
    }

    #[test]
    fn exact_pattern_sets_latch_on_last_bit() {
        let mut c = checker("1011");
        for (k, b) in [true, false, true].into_iter().enumerate() {
            assert!(!c.step(b), "bit {k}");
            assert!(!c.latched());
        }
        assert!(c.step(true));
        assert!(c.latched());
    }

    #[test]
    fn latch_survives_silence_and_register_clears() {
        let mut c = checker("1");
        c.step(true);
        for _ in 0..50 {
            c.step(false);
        }
        c.clear_register();
        assert!(c.latched());
        c.power_on();
        assert!(!c.latched());
    }

    #[test]
    fn partial_register_never_matches() {
        // leading zeros of the pattern are not implied by an empty register
        let mut c = checker("01");
        assert!(!c.step(true));
        assert!(!c.latched());
        c.step(false);
        assert!(c.step(true));
    }
}
