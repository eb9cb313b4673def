use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::unit_hash;

/// How an injected backend fault manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// The action errors out before touching any state.
    ErrorBeforeMutation,
    /// The action completes but leaves a dangling relation behind.
    CorruptWrite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Rule {
    rate: f64,
    mode: FaultMode,
    /// Invocations that fail unconditionally before `rate` applies.
    #[serde(default)]
    forced: u64,
}

/// Seeded per-binding fault source. The n-th invocation of a binding
/// fails according to a draw keyed by `(seed, binding, n)`, so a run is
/// reproducible from its seed alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultInjector {
    seed: u64,
    rules: BTreeMap<String, Rule>,
    calls: BTreeMap<String, u64>,
}

impl FaultInjector {
    pub fn new(seed: u64) -> Self {
        FaultInjector { seed, ..Default::default() }
    }

    /// Each invocation of `binding` fails with probability `rate`.
    pub fn with_rate(mut self, binding: &str, rate: f64, mode: FaultMode) -> Self {
        let rule = self.rules.entry(binding.to_string()).or_insert(Rule { rate: 0.0, mode, forced: 0 });
        rule.rate = rate.clamp(0.0, 1.0);
        rule.mode = mode;
        self
    }

    /// The first `times` invocations of `binding` fail.
    pub fn fail_first(mut self, binding: &str, times: u64, mode: FaultMode) -> Self {
        let rule = self.rules.entry(binding.to_string()).or_insert(Rule { rate: 0.0, mode, forced: 0 });
        rule.forced = times;
        rule.mode = mode;
        self
    }

    pub fn always(self, binding: &str, mode: FaultMode) -> Self {
        self.with_rate(binding, 1.0, mode)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Decides whether the next invocation of `binding` fails.
    pub fn draw(&mut self, binding: &str) -> Option<FaultMode> {
        let rule = self.rules.get(binding)?;
        let n = self.calls.entry(binding.to_string()).or_insert(0);
        let index = *n;
        *n += 1;
        if index < rule.forced {
            return Some(rule.mode);
        }
        if rule.rate <= 0.0 {
            return None;
        }
        let key = (unit_hash(&[&self.seed.to_string(), binding, &index.to_string()]) * (1u64 << 53) as f64) as u64;
        let fails = ChaCha8Rng::seed_from_u64(key).gen::<f64>() < rule.rate;
        fails.then_some(rule.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_from_seed() {
        let mk = || FaultInjector::new(11).with_rate("spawn-asset", 0.3, FaultMode::ErrorBeforeMutation);
        let (mut a, mut b) = (mk(), mk());
        let xs: Vec<_> = (0..50).map(|_| a.draw("spawn-asset")).collect();
        let ys: Vec<_> = (0..50).map(|_| b.draw("spawn-asset")).collect();
        assert_eq!(xs, ys);
        let failures = xs.iter().filter(|x| x.is_some()).count();
        assert!(failures > 3 && failures < 30, "{failures}");
    }

    #[test]
    fn forced_then_clean() {
        let mut f = FaultInjector::new(0).fail_first("set-relation", 1, FaultMode::CorruptWrite);
        assert_eq!(f.draw("set-relation"), Some(FaultMode::CorruptWrite));
        assert_eq!(f.draw("set-relation"), None);
        assert_eq!(f.draw("other"), None);
    }
}
