//! Battery charge polling, reduced to a pure state machine.
//!
//! A battery file reports remaining charge in mAh. Discharge becomes energy
//! (`dmAh x volts x 3.6` Joules); charging or a constant reading yields no
//! samples. The probe is active only while discharge data is meaningful:
//! charging deactivates it, resumed discharge reactivates it, and repeated
//! read failures give up entirely.

/// What the provider loop should do after one poll.
#[derive(Debug, Clone, PartialEq)]
pub enum BatteryAction {
    Activate,
    Deactivate,
    Push(f64),
    /// Too many consecutive failures; delete the probe and exit non-zero.
    GiveUp,
}

#[derive(Debug)]
pub struct BatteryTracker {
    voltage: f64,
    last_mah: Option<f64>,
    active: bool,
    failures: u32,
}

/// Consecutive failed polls tolerated before giving up.
const MAX_FAILURES: u32 = 10;

impl BatteryTracker {
    pub fn new(voltage: f64) -> BatteryTracker {
        BatteryTracker { voltage, last_mah: None, active: false, failures: 0 }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Feed one poll result (`None` = file unreadable or unparseable).
    pub fn observe(&mut self, reading: Option<f64>) -> Vec<BatteryAction> {
        let mut actions = Vec::new();
        let Some(mah) = reading else {
            self.failures += 1;
            if self.failures > MAX_FAILURES {
                actions.push(BatteryAction::GiveUp);
            } else if self.active {
                self.active = false;
                actions.push(BatteryAction::Deactivate);
            }
            return actions;
        };
        self.failures = 0;
        match self.last_mah {
            None => {
                // first good reading establishes the baseline
                self.active = true;
                actions.push(BatteryAction::Activate);
            }
            Some(prev) if mah < prev => {
                if !self.active {
                    self.active = true;
                    actions.push(BatteryAction::Activate);
                }
                actions.push(BatteryAction::Push((prev - mah) * self.voltage * 3.6));
            }
            Some(prev) if mah > prev => {
                // charging: discharge rate is meaningless until it resumes
                if self.active {
                    self.active = false;
                    actions.push(BatteryAction::Deactivate);
                }
            }
            Some(_) => {} // constant charge: nothing to report
        }
        self.last_mah = Some(mah);
        actions
    }
}
