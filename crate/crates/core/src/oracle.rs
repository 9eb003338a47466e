//! The attacker-facing boundary: probabilities and an explanation map per metered query.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::attribution::{ExplanationMap, XaiMethod};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

pub const DEFAULT_BUDGET: u64 = 50_000;

#[derive(Debug, Clone)]
pub struct OracleResponse {
    pub probs: Tensor,
    pub expl: ExplanationMap,
}

/// Hard cap on the number of model evaluations.
#[derive(Debug)]
pub struct QueryMeter {
    used: AtomicU64,
    budget: u64,
}

impl QueryMeter {
    pub fn new(budget: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::config("query budget must be positive"));
        }
        Ok(QueryMeter {
            used: AtomicU64::new(0),
            budget,
        })
    }

    /// Take one unit of budget, atomically.
    pub fn consume(&self) -> Result<()> {
        self.used
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |u| {
                (u < self.budget).then_some(u + 1)
            })
            .map(|_| ())
            .map_err(|used| Error::BudgetExhausted {
                used,
                budget: self.budget,
            })
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::Acquire)
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.used()
    }
}

impl Default for QueryMeter {
    fn default() -> Self {
        QueryMeter::new(DEFAULT_BUDGET).expect("positive default budget")
    }
}

/// Everything an attacker may do with the target model.
pub trait BlackBox: Sync {
    fn query(&self, x: &Tensor, class_idx: usize) -> Result<OracleResponse>;

    fn input_dims(&self) -> &[usize];

    fn num_classes(&self) -> usize;

    fn queries_used(&self) -> u64;

    fn peek_remaining(&self) -> u64;
}

/// A network wrapped with one explanation method and a query meter.
#[derive(Debug)]
pub struct Oracle {
    net: Network,
    method: XaiMethod,
    meter: QueryMeter,
}

impl Oracle {
    pub fn new(net: Network, method: XaiMethod, budget: u64) -> Result<Self> {
        Ok(Oracle {
            net,
            method,
            meter: QueryMeter::new(budget)?,
        })
    }

    pub fn method(&self) -> &XaiMethod {
        &self.method
    }

    pub fn meter(&self) -> &QueryMeter {
        &self.meter
    }
}

impl BlackBox for Oracle {
    fn query(&self, x: &Tensor, class_idx: usize) -> Result<OracleResponse> {
        self.net.check_input(x)?;
        self.net.check_class(class_idx)?;
        self.meter.consume()?;
        let probs = self.net.forward(x)?.probs;
        let expl = self.method.explain(&self.net, x, class_idx)?;
        Ok(OracleResponse { probs, expl })
    }

    fn input_dims(&self) -> &[usize] {
        self.net.input_dims()
    }

    fn num_classes(&self) -> usize {
        self.net.num_classes()
    }

    fn queries_used(&self) -> u64 {
        self.meter.used()
    }

    fn peek_remaining(&self) -> u64 {
        self.meter.remaining()
    }
}
