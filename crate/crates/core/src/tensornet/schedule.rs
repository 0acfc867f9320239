use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One exponential-decay segment over the inclusive, 1-based epoch range
/// `epoch_start..=epoch_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub epoch_start: u32,
    pub epoch_end: u32,
    pub lr_init: f64,
    pub lr_final: f64,
}

/// Learning-rate schedules; epochs are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr_a` for epochs `1..=period`, `lr_b` for the next `period`, and so on.
    Alternating {
        lr_a: f64,
        lr_b: f64,
        period: u32,
    },
    SegmentedExponential {
        segments: Vec<Segment>,
    },
}

impl LrSchedule {
    /// Masked-MLP schedule: 5e-4 and 1e-5 swapping every 50 epochs.
    pub fn masked_default() -> Self {
        LrSchedule::Alternating {
            lr_a: 5e-4,
            lr_b: 1e-5,
            period: 50,
        }
    }

    /// Implicit-model schedule: five 100-epoch exponential decays, each one
    /// restarting at a lower rate.
    pub fn implicit_default() -> Self {
        let rows = [
            (1, 100, 1e-3, 1e-5),
            (101, 200, 1e-4, 1e-6),
            (201, 300, 1e-4 / 2.0, 1e-7),
            (301, 400, 1e-5, 1e-8),
            (401, 500, 1e-6, 1e-9),
        ];
        LrSchedule::SegmentedExponential {
            segments: rows
                .iter()
                .map(|&(epoch_start, epoch_end, lr_init, lr_final)| Segment {
                    epoch_start,
                    epoch_end,
                    lr_init,
                    lr_final,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Alternating { lr_a, lr_b, period } => {
                if *period == 0 || *lr_a <= 0.0 || *lr_b <= 0.0 {
                    return Err(Error::InvalidArgument(format!("bad alternating schedule {self:?}")));
                }
            }
            LrSchedule::SegmentedExponential { segments } => {
                if segments.is_empty() {
                    return Err(Error::InvalidArgument("schedule has no segments".into()));
                }
                let mut next = 1;
                for s in segments {
                    if s.epoch_start != next || s.epoch_end < s.epoch_start {
                        return Err(Error::InvalidArgument(format!(
                            "schedule segments must be contiguous from epoch 1; got {}..{}",
                            s.epoch_start, s.epoch_end
                        )));
                    }
                    if s.lr_init <= 0.0 || s.lr_final <= 0.0 {
                        return Err(Error::InvalidArgument("learning rates must be positive".into()));
                    }
                    next = s.epoch_end + 1;
                }
            }
        }
        Ok(())
    }

    /// Last epoch covered, if the schedule is finite.
    pub fn last_epoch(&self) -> Option<u32> {
        match self {
            LrSchedule::Alternating { .. } => None,
            LrSchedule::SegmentedExponential { segments } => segments.last().map(|s| s.epoch_end),
        }
    }

    /// Index of the segment (or alternation block) containing `epoch`.
    pub fn phase(&self, epoch: u32) -> Option<usize> {
        match self {
            LrSchedule::Alternating { period, .. } => (epoch >= 1).then(|| ((epoch - 1) / period) as usize),
            LrSchedule::SegmentedExponential { segments } => segments
                .iter()
                .position(|s| (s.epoch_start..=s.epoch_end).contains(&epoch)),
        }
    }

    pub fn lr_at(&self, epoch: u32) -> Result<f64> {
        if epoch == 0 {
            return Err(Error::OutOfRange("epochs are 1-based".into()));
        }
        match self {
            LrSchedule::Alternating { lr_a, lr_b, period } => {
                let block = (epoch - 1) / period;
                Ok(if block.is_multiple_of(2) { *lr_a } else { *lr_b })
            }
            LrSchedule::SegmentedExponential { segments } => {
                let s = segments
                    .iter()
                    .find(|s| (s.epoch_start..=s.epoch_end).contains(&epoch))
                    .ok_or_else(|| {
                        Error::OutOfRange(format!(
                            "epoch {epoch} beyond schedule end {}",
                            self.last_epoch().unwrap_or(0)
                        ))
                    })?;
                if epoch == s.epoch_start {
                    return Ok(s.lr_init);
                }
                if epoch == s.epoch_end {
                    return Ok(s.lr_final);
                }
                let frac = f64::from(epoch - s.epoch_start) / f64::from(s.epoch_end - s.epoch_start);
                Ok(s.lr_init * (s.lr_final / s.lr_init).powf(frac))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn implicit_table_anchors() {
        let s = LrSchedule::implicit_default();
        s.validate().unwrap();
        assert_eq!(s.lr_at(1).unwrap(), 1e-3);
        assert_eq!(s.lr_at(100).unwrap(), 1e-5);
        assert_eq!(s.lr_at(101).unwrap(), 1e-4);
        assert_eq!(s.lr_at(201).unwrap(), 5e-5);
        assert_eq!(s.lr_at(500).unwrap(), 1e-9);
        assert!(s.lr_at(501).is_err());
        assert!(s.lr_at(0).is_err());
    }

    #[test]
    fn implicit_segment_interior_is_geometric() {
        let s = LrSchedule::implicit_default();
        // 1e-4 · (1e-2)^(49/99)
        let expect = 1e-4 * 10f64.powf(-2.0 * 49.0 / 99.0);
        let got = s.lr_at(150).unwrap();
        assert!((got - expect).abs() / expect < 1e-12);
        assert!((got - 1e-5).abs() / 1e-5 < 0.03);
        // decays monotonically inside a segment
        for e in 101..200 {
            assert!(s.lr_at(e + 1).unwrap() < s.lr_at(e).unwrap());
        }
    }

    #[test]
    fn masked_alternation() {
        let s = LrSchedule::masked_default();
        assert_eq!(s.lr_at(1).unwrap(), 5e-4);
        assert_eq!(s.lr_at(50).unwrap(), 5e-4);
        assert_eq!(s.lr_at(51).unwrap(), 1e-5);
        assert_eq!(s.lr_at(101).unwrap(), 5e-4);
        assert_eq!(s.lr_at(151).unwrap(), 1e-5);
        assert_eq!(s.lr_at(1600).unwrap(), 1e-5);
    }

    #[test]
    fn gaps_are_rejected() {
        let s = LrSchedule::SegmentedExponential {
            segments: vec![
                Segment {
                    epoch_start: 1,
                    epoch_end: 10,
                    lr_init: 1e-3,
                    lr_final: 1e-4,
                },
                Segment {
                    epoch_start: 12,
                    epoch_end: 20,
                    lr_init: 1e-3,
                    lr_final: 1e-4,
                },
            ],
        };
        assert!(s.validate().is_err());
    }
}
