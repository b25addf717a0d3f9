use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

/// A stratified train/test partition of item ids.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub ratio: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Splits `(id, category)` items per category so that each category keeps
/// `round(ratio · n)` training items (at least one item on each side).
pub fn make_split(items: &[(String, usize)], ratio: f64, seed: u64) -> Result<SplitSpec, DataError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(super::invariant("ratio", format!("{ratio} not in [0, 1]")));
    }
    let mut by_cat: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, c) in items {
        by_cat.entry(*c).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitSpec {
        ratio,
        train_ids: Vec::new(),
        test_ids: Vec::new(),
    };
    for (cat, mut ids) in by_cat {
        let n = ids.len();
        if n < 2 {
            return Err(super::invariant(
                format!("category {cat}"),
                format!("{n} item(s); at least 2 are needed to split"),
            ));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        split.train_ids.extend(ids[..n_train].iter().map(|s| s.to_string()));
        split.test_ids.extend(ids[n_train..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}
