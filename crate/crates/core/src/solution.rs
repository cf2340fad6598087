use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Anchor, Basket, Catalog, ObjectiveVector};
use crate::error::Result;
use crate::pareto::non_dominated_indices;

/// An integer basket with its objective vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub basket: Basket,
    pub objectives: ObjectiveVector,
}

/// Deduplicates, evaluates and keeps the mutually non-dominated baskets,
/// preserving first-occurrence order.
pub fn non_dominated_solutions<I>(catalog: &Catalog, anchor: &Anchor, baskets: I) -> Result<Vec<Solution>>
where
    I: IntoIterator<Item = Basket>,
{
    let mut seen = HashSet::new();
    let mut unique = Vec::new();
    for b in baskets {
        if seen.insert(b.clone()) {
            let objectives = anchor.evaluate(catalog, &b)?;
            unique.push(Solution { basket: b, objectives });
        }
    }
    let keep = non_dominated_indices(&unique.iter().map(|s| s.objectives).collect::<Vec<_>>())?;
    let mut keep_iter = keep.into_iter().peekable();
    Ok(unique
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if keep_iter.peek() == Some(&i) {
                keep_iter.next();
                Some(s)
            } else {
                None
            }
        })
        .collect())
}
