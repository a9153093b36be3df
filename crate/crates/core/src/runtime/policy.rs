//! Grain-size (blocks per fetch) policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchPolicy {
    /// `ceil(grid / pool)`: one fetch per worker.
    Average,
    Fixed(usize),
    /// Larger grains for light kernels and kernels contending on atomics.
    AutoAggressive,
}

impl fmt::Display for FetchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FetchPolicy::Average => f.write_str("average"),
            FetchPolicy::Fixed(g) => write!(f, "fixed:{g}"),
            FetchPolicy::AutoAggressive => f.write_str("auto"),
        }
    }
}

impl FromStr for FetchPolicy {
    type Err = String;

    /// `average`, `fixed:<g>` or `auto`.
    fn from_str(s: &str) -> Result<FetchPolicy, String> {
        match s {
            "average" => Ok(FetchPolicy::Average),
            "auto" => Ok(FetchPolicy::AutoAggressive),
            _ => match s.strip_prefix("fixed:").map(str::parse::<usize>) {
                Some(Ok(g)) if g >= 1 => Ok(FetchPolicy::Fixed(g)),
                _ => Err(format!("bad policy `{s}`: expected average, fixed:<g> with g >= 1, or auto")),
            },
        }
    }
}

/// Static facts about a kernel used by [`FetchPolicy::AutoAggressive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KernelStats {
    pub instruction_estimate: usize,
    pub block_size: usize,
    pub has_atomics: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoConfig {
    /// A kernel is light when `instruction_estimate * block_size` is below this.
    pub light_kernel_threshold: usize,
    /// Grain multiplier over the average grain for kernels with atomics.
    pub atomic_factor: usize,
}

impl Default for AutoConfig {
    fn default() -> AutoConfig {
        AutoConfig { light_kernel_threshold: 64 * 1024, atomic_factor: 2 }
    }
}

pub fn average_grain(grid: usize, pool: usize) -> usize {
    grid.div_ceil(pool.max(1)).max(1)
}

/// Blocks per fetch for one launch. `grid` and `pool` are at least 1.
pub fn resolve_grain(policy: FetchPolicy, grid: usize, pool: usize, stats: KernelStats, auto: &AutoConfig) -> usize {
    let grid = grid.max(1);
    let avg = average_grain(grid, pool);
    let g = match policy {
        FetchPolicy::Average => avg,
        FetchPolicy::Fixed(g) => g.clamp(1, grid),
        FetchPolicy::AutoAggressive => {
            let work = stats.instruction_estimate.saturating_mul(stats.block_size.max(1));
            if stats.has_atomics {
                (avg * auto.atomic_factor.max(1)).min(grid)
            } else if work < auto.light_kernel_threshold {
                avg.max(grid.div_ceil(2))
            } else {
                avg
            }
        }
    };
    log::debug!("grain {g} for policy {policy}, grid {grid}, pool {pool}, {stats:?}");
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIGHT: KernelStats = KernelStats { instruction_estimate: 10, block_size: 32, has_atomics: false };

    #[test]
    fn average_examples() {
        let a = AutoConfig::default();
        assert_eq!(resolve_grain(FetchPolicy::Average, 12, 3, LIGHT, &a), 4);
        assert_eq!(resolve_grain(FetchPolicy::Average, 16, 16, LIGHT, &a), 1);
        assert_eq!(resolve_grain(FetchPolicy::Average, 3, 8, LIGHT, &a), 1);
    }

    #[test]
    fn fixed_is_clamped_to_grid() {
        let a = AutoConfig::default();
        assert_eq!(resolve_grain(FetchPolicy::Fixed(4), 16, 2, LIGHT, &a), 4);
        assert_eq!(resolve_grain(FetchPolicy::Fixed(40), 16, 2, LIGHT, &a), 16);
    }

    #[test]
    fn aggressive_on_light_kernel() {
        let a = AutoConfig::default();
        assert_eq!(resolve_grain(FetchPolicy::AutoAggressive, 12, 3, LIGHT, &a), 6);
        let heavy = KernelStats { instruction_estimate: 10_000, block_size: 1024, has_atomics: false };
        assert_eq!(resolve_grain(FetchPolicy::AutoAggressive, 12, 3, heavy, &a), 4);
        let atomic = KernelStats { has_atomics: true, ..heavy };
        assert_eq!(resolve_grain(FetchPolicy::AutoAggressive, 12, 3, atomic, &a), 8);
        assert_eq!(resolve_grain(FetchPolicy::AutoAggressive, 12, 2, atomic, &a), 12);
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("average".parse::<FetchPolicy>().unwrap(), FetchPolicy::Average);
        assert_eq!("fixed:6".parse::<FetchPolicy>().unwrap(), FetchPolicy::Fixed(6));
        assert_eq!("auto".parse::<FetchPolicy>().unwrap(), FetchPolicy::AutoAggressive);
        assert!("fixed:0".parse::<FetchPolicy>().is_err());
        assert!("greedy".parse::<FetchPolicy>().is_err());
        for p in [FetchPolicy::Average, FetchPolicy::Fixed(3), FetchPolicy::AutoAggressive] {
            assert_eq!(p.to_string().parse::<FetchPolicy>().unwrap(), p);
        }
    }
}
