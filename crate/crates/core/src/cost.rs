//! Per-operation price model of the serverless deployment and the
//! break-even point against a fixed-size ensemble of virtual machines.
//!
//! All prices are in dollars, sizes in kilobytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Price of a function invocation as `base + per_kb * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFn {
    pub base: f64,
    pub per_kb: f64,
}

impl LinearFn {
    pub fn at(&self, s: f64) -> f64 {
        self.base + self.per_kb * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Object-store write, flat per request.
    pub w_obj: f64,
    /// Object-store read, flat per request.
    pub r_obj: f64,
    /// Key-value write per kilobyte.
    pub w_kv_per_kb: f64,
    /// Key-value read per started 4 kB unit.
    pub r_kv_unit: f64,
    /// Queue push per started 64 kB unit.
    pub q_unit: f64,
    pub writer: LinearFn,
    pub distributor: LinearFn,
}

impl Default for CostParams {
    fn default() -> Self {
        // The function coefficients are back-solved so that a 1 kB write
        // costs 1.12e-5 in total: both functions together add 1.2e-6.
        let f = LinearFn {
            base: 0.55e-6,
            per_kb: 0.05e-6,
        };
        CostParams {
            w_obj: 5e-6,
            r_obj: 4e-7,
            w_kv_per_kb: 1.25e-6,
            r_kv_unit: 0.25e-6,
            q_unit: 0.5e-6,
            writer: f,
            distributor: f,
        }
    }
}

fn check_size(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::Cost(format!("size must be positive, got {s}")))
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("w_obj", self.w_obj),
            ("r_obj", self.r_obj),
            ("w_kv_per_kb", self.w_kv_per_kb),
            ("r_kv_unit", self.r_kv_unit),
            ("q_unit", self.q_unit),
            ("writer.base", self.writer.base),
            ("writer.per_kb", self.writer.per_kb),
            ("distributor.base", self.distributor.base),
            ("distributor.per_kb", self.distributor.per_kb),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Cost(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn w_kv(&self, s: f64) -> f64 {
        s * self.w_kv_per_kb
    }

    pub fn r_kv(&self, s: f64) -> f64 {
        (s / 4.0).ceil() * self.r_kv_unit
    }

    pub fn queue(&self, s: f64) -> f64 {
        (s / 64.0).ceil() * self.q_unit
    }

    /// A read touches only the object store.
    pub fn cost_read(&self, s: f64) -> Result<f64> {
        check_size(s)?;
        Ok(self.r_obj)
    }

    /// Two queue pushes, three small key-value writes and one read for the
    /// lock, commit and pop, the object write, and both functions.
    pub fn cost_write(&self, s: f64) -> Result<f64> {
        check_size(s)?;
        Ok(2.0 * self.queue(s)
            + 3.0 * self.w_kv(1.0)
            + self.r_kv(1.0)
            + self.w_obj
            + self.writer.at(s)
            + self.distributor.at(s))
    }

    pub fn cost_per_request(&self, read_fraction: f64, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&read_fraction) {
            return Err(Error::Cost(format!("read fraction must be in [0, 1], got {read_fraction}")));
        }
        Ok(read_fraction * self.cost_read(s)? + (1.0 - read_fraction) * self.cost_write(s)?)
    }

    /// Requests per day at which the serverless bill equals `daily_cost`.
    pub fn break_even(&self, read_fraction: f64, daily_cost: f64, s: f64) -> Result<f64> {
        if !daily_cost.is_finite() || daily_cost <= 0.0 {
            return Err(Error::Cost(format!("daily cost must be positive, got {daily_cost}")));
        }
        let c = self.cost_per_request(read_fraction, s)?;
        if c <= 0.0 {
            return Err(Error::Cost("cost per request is zero".into()));
        }
        Ok(daily_cost / c)
    }
}

/// How a quoted VM price is read: for the whole ensemble or for each VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceBasis {
    Ensemble,
    PerVm,
}

/// One fixed-size ensemble configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub name: String,
    pub instance: String,
    pub vms: u32,
    pub basis: PriceBasis,
    pub vm_daily: f64,
    pub storage_monthly: f64,
}

pub const DAYS_PER_MONTH: f64 = 30.0;

impl Baseline {
    pub fn daily_cost(&self) -> f64 {
        let compute = match self.basis {
            PriceBasis::Ensemble => self.vm_daily,
            PriceBasis::PerVm => self.vm_daily * self.vms as f64,
        };
        compute + self.storage_monthly / DAYS_PER_MONTH
    }
}

/// Three instance sizes, at three and nine VMs, under both price readings.
pub fn baselines() -> Vec<Baseline> {
    let mut out = vec![];
    for (instance, daily) in [("t3.small", 0.5), ("t3.medium", 1.0), ("t3.large", 2.0)] {
        for (vms, storage) in [(3, 4.8), (9, 14.4)] {
            for basis in [PriceBasis::Ensemble, PriceBasis::PerVm] {
                let tag = match basis {
                    PriceBasis::Ensemble => "ensemble",
                    PriceBasis::PerVm => "per-vm",
                };
                out.push(Baseline {
                    name: format!("{instance}-x{vms}-{tag}"),
                    instance: instance.into(),
                    vms,
                    basis,
                    vm_daily: daily,
                    storage_monthly: storage,
                });
            }
        }
    }
    out
}

pub fn baseline(name: &str) -> Option<Baseline> {
    baselines().into_iter().find(|b| b.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub baseline: String,
    pub daily_cost: f64,
    pub read_fraction: f64,
    pub size_kb: f64,
    pub cost_per_request: f64,
    pub break_even: f64,
}

pub fn cost_table(params: &CostParams, baselines: &[Baseline], read_fractions: &[f64], s: f64) -> Result<Vec<CostRow>> {
    params.validate()?;
    let mut rows = vec![];
    for b in baselines {
        for &rf in read_fractions {
            rows.push(CostRow {
                baseline: b.name.clone(),
                daily_cost: b.daily_cost(),
                read_fraction: rf,
                size_kb: s,
                cost_per_request: params.cost_per_request(rf, s)?,
                break_even: params.break_even(rf, b.daily_cost(), s)?,
            });
        }
    }
    Ok(rows)
}
