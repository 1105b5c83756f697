use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// Event counts for one array (or summed over several).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub set_pulses: u64,
    pub reset_pulses: u64,
    pub device_reads: u64,
    pub chi_writes: u64,
    pub refresh_events: u64,
}

impl EventCounters {
    pub fn programming_pulses(&self) -> u64 {
        self.set_pulses + self.reset_pulses
    }
}

impl Add for EventCounters {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            set_pulses: self.set_pulses + o.set_pulses,
            reset_pulses: self.reset_pulses + o.reset_pulses,
            device_reads: self.device_reads + o.device_reads,
            chi_writes: self.chi_writes + o.chi_writes,
            refresh_events: self.refresh_events + o.refresh_events,
        }
    }
}

impl AddAssign for EventCounters {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for EventCounters {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            set_pulses: self.set_pulses - o.set_pulses,
            reset_pulses: self.reset_pulses - o.reset_pulses,
            device_reads: self.device_reads - o.device_reads,
            chi_writes: self.chi_writes - o.chi_writes,
            refresh_events: self.refresh_events - o.refresh_events,
        }
    }
}

/// Per-layer counters of a network.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCounters {
    pub layers: Vec<EventCounters>,
}

impl LayerCounters {
    pub fn total(&self) -> EventCounters {
        self.layers.iter().fold(EventCounters::default(), |a, &b| a + b)
    }
}
