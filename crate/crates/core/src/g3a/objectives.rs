//! The eleven objectives built from graph operations, so losses reach the
//! operator networks.

use crate::autodiff::{Graph, Tensor, Var};
use crate::domain::{Anchor, Catalog, Feature, NUM_FEATURES};
use crate::error::{check_len, Result};

/// Constants shared by every objective evaluation against one anchor.
#[derive(Clone, Debug)]
pub struct ObjectiveConstants {
    coeffs: Tensor,
    anchor: Tensor,
    anchor_norm: f64,
    inv_reference: Tensor,
    nutrition_mask: Tensor,
}

impl ObjectiveConstants {
    pub fn new(catalog: &Catalog, anchor: &Anchor) -> Result<Self> {
        check_len(catalog.len(), anchor.len())?;
        let coeffs = Tensor::new(catalog.len(), NUM_FEATURES, catalog.coefficient_matrix())?;
        let anchor_col = Tensor::column(anchor.basket().to_f64());
        let totals = anchor.totals();
        let inv_reference = Tensor::row(
            Feature::ALL
                .iter()
                .map(|&f| {
                    let v = totals.get(f);
                    if v > 0.0 { 1.0 / v } else { 0.0 }
                })
                .collect(),
        );
        let nutrition_mask = Tensor::row(
            Feature::NUTRITION
                .iter()
                .map(|&f| if totals.get(f) > 0.0 { 1.0 } else { 0.0 })
                .collect(),
        );
        Ok(Self {
            coeffs,
            anchor: anchor_col,
            anchor_norm: anchor.sq_norm().sqrt(),
            inv_reference,
            nutrition_mask,
        })
    }

    /// `S × 11` objective matrix for the `S × N` rows of `x`.
    ///
    /// A feature whose anchor total is zero contributes a zero ratio, where
    /// the exact evaluation would flag a positive total as infinite.
    pub fn objectives(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let coeffs = g.constant(self.coeffs.clone());
        let anchor = g.constant(self.anchor.clone());
        let inv_ref = g.constant(self.inv_reference.clone());
        let mask = g.constant(self.nutrition_mask.clone());

        let dot = g.matmul(x, anchor)?;
        let sq = g.square(x);
        let sq = g.sum_cols(sq);
        let norm = g.sqrt(sq);
        let norm = g.scale(norm, self.anchor_norm);
        let cos = g.div_or_zero(dot, norm)?;
        let taste = g.one_minus(cos);

        let totals = g.matmul(x, coeffs)?;
        let ratios = g.mul(totals, inv_ref)?;
        let cost = g.slice_cols(ratios, 0, 1)?;
        let nutrition = g.slice_cols(ratios, 1, Feature::NUTRITION.len())?;
        let shortfall = g.one_minus(nutrition);
        let health = g.square(shortfall);
        let health = g.mul(health, mask)?;
        let env = g.slice_cols(ratios, 1 + Feature::NUTRITION.len(), Feature::ENVIRONMENT.len())?;
        g.concat_cols(&[taste, cost, health, env])
    }
}
