use std::io::Write;

use crate::device::params::ModelParams;
use crate::error::Result;
use crate::protocol::PulseTrain;

/// Threshold voltage sampled at the read points of one train.
#[derive(Debug, Clone, PartialEq)]
pub struct VtTrace {
    entries: Vec<(u32, f64)>,
    params: ModelParams,
    train: PulseTrain,
}

impl VtTrace {
    /// # Panics
    /// If indices are not strictly increasing or the first entry is not index 0.
    pub fn new(entries: Vec<(u32, f64)>, params: ModelParams, train: PulseTrain) -> Self {
        assert!(entries.first().map(|e| e.0) == Some(0), "trace must start at pulse 0");
        assert!(
            entries.windows(2).all(|w| w[0].0 < w[1].0),
            "trace indices must be strictly increasing"
        );
        Self {
            entries,
            params,
            train,
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn train(&self) -> &PulseTrain {
        &self.train
    }

    /// `V_T,N` after the last pulse.
    pub fn final_vt(&self) -> f64 {
        self.entries.last().map(|e| e.1).unwrap_or(self.params.vt0_v)
    }

    pub fn max_vt(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `pulse_index,vt_V` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pulse_index", "vt_V"])?;
        for (i, v) in &self.entries {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
