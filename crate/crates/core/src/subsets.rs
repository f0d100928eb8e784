use itertools::Itertools;

use crate::config::Configuration;
use crate::error::BudgetExceeded;

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Number of subsets of an `n`-set with size in `sizes`.
pub(crate) fn count_subsets(n: usize, sizes: std::ops::RangeInclusive<usize>) -> u128 {
    sizes
        .map(|s| binomial(n, s))
        .fold(0u128, u128::saturating_add)
}

pub(crate) fn check_budget(
    what: &'static str,
    required: u128,
    budget: u128,
) -> Result<(), BudgetExceeded> {
    if required > budget {
        Err(BudgetExceeded {
            what,
            required,
            budget,
        })
    } else {
        Ok(())
    }
}

/// Subsets of `pool` of exactly `size`, in lexicographic order.
pub(crate) fn subsets_of_size(
    pool: &Configuration,
    size: usize,
) -> impl Iterator<Item = Configuration> + '_ {
    pool.iter()
        .combinations(size)
        .map(Configuration::from_indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(12, 2), 66);
        assert_eq!(binomial(12, 0), 1);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(count_subsets(12, 0..=12), 4096);
        assert!(binomial(200, 100) > 1u128 << 100);
    }

    #[test]
    fn lexicographic_subsets() {
        let pool = Configuration::from_indices([1, 4, 7]);
        let got: Vec<Vec<usize>> = subsets_of_size(&pool, 2)
            .map(|s| s.iter().collect())
            .collect();
        assert_eq!(got, vec![vec![1, 4], vec![1, 7], vec![4, 7]]);
        assert_eq!(subsets_of_size(&pool, 0).count(), 1);
    }
}
