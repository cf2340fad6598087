//! Catalog, baskets and the eleven basket objectives.
//!
//! Objective order (all minimized):
//!
//! | index | objective | definition |
//! |-------|-----------|------------|
//! | 0 | taste | `1 - cos(x, x*)` |
//! | 1 | cost | `v_cost(x) / v_cost(x*)` |
//! | 2..=4 | energy, protein, fat | `(1 - v_j(x) / v_j(x*))^2` |
//! | 5..=10 | GHG, acidification, eutrophication, land, water, stressed water | `v_j(x) / v_j(x*)` |
//!
//! Feature totals `v_j(x) = Σ_i c[i][j] x_i` use the catalog's per-unit coefficients.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Number of per-unit product features (cost, nutrition, environment).
pub const NUM_FEATURES: usize = 10;
/// Number of objectives: taste plus one per feature.
pub const NUM_OBJECTIVES: usize = 11;

/// Catalog CSV header, in column order.
pub const CATALOG_HEADER: [&str; 13] = [
    "product_id",
    "name",
    "unit",
    "price_usd",
    "energy_kcal",
    "protein_g",
    "fat_g",
    "ghg_kgco2e",
    "acid_kgso2e",
    "eutro_kgpo4e",
    "land_m2",
    "water_l",
    "stressed_water_l",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Cost,
    Energy,
    Protein,
    Fat,
    Ghg,
    Acidification,
    Eutrophication,
    Land,
    Water,
    StressedWater,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::Cost,
        Feature::Energy,
        Feature::Protein,
        Feature::Fat,
        Feature::Ghg,
        Feature::Acidification,
        Feature::Eutrophication,
        Feature::Land,
        Feature::Water,
        Feature::StressedWater,
    ];

    pub const NUTRITION: [Feature; 3] = [Feature::Energy, Feature::Protein, Feature::Fat];

    pub const ENVIRONMENT: [Feature; 6] = [
        Feature::Ghg,
        Feature::Acidification,
        Feature::Eutrophication,
        Feature::Land,
        Feature::Water,
        Feature::StressedWater,
    ];

    /// Column index inside the coefficient matrix and [`FeatureTotals`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Index of the objective driven by this feature (taste is objective 0).
    pub fn objective_index(self) -> usize {
        self.index() + 1
    }

    pub fn from_index(index: usize) -> Option<Feature> {
        Feature::ALL.get(index).copied()
    }

    pub fn is_nutrition(self) -> bool {
        matches!(self, Feature::Energy | Feature::Protein | Feature::Fat)
    }

    pub fn is_environmental(self) -> bool {
        self.index() >= Feature::Ghg.index()
    }

    /// Catalog CSV column name.
    pub fn column(self) -> &'static str {
        CATALOG_HEADER[self.index() + 3]
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Cost => "cost",
            Feature::Energy => "energy",
            Feature::Protein => "protein",
            Feature::Fat => "fat",
            Feature::Ghg => "ghg",
            Feature::Acidification => "acidification",
            Feature::Eutrophication => "eutrophication",
            Feature::Land => "land",
            Feature::Water => "water",
            Feature::StressedWater => "stressed_water",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::Cost => "USD",
            Feature::Energy => "kcal",
            Feature::Protein | Feature::Fat => "g",
            Feature::Ghg => "kgCO2e",
            Feature::Acidification => "kgSO2e",
            Feature::Eutrophication => "kgPO4e",
            Feature::Land => "m2",
            Feature::Water | Feature::StressedWater => "L",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Objective names in objective order.
pub const OBJECTIVE_NAMES: [&str; NUM_OBJECTIVES] = [
    "taste",
    "cost",
    "energy",
    "protein",
    "fat",
    "ghg",
    "acidification",
    "eutrophication",
    "land",
    "water",
    "stressed_water",
];

/// Objectives whose loss is `(1 - ρ)^2`.
pub fn is_health_objective(objective: usize) -> bool {
    (2..=4).contains(&objective)
}

/// Canonical unit a product is sold and measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "kg")]
    Kg,
    #[serde(rename = "L")]
    L,
    #[serde(rename = "piece")]
    Piece,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Kg => "kg",
            Unit::L => "L",
            Unit::Piece => "piece",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kg" | "KG" | "Kg" => Ok(Unit::Kg),
            "L" | "l" => Ok(Unit::L),
            "piece" | "PIECE" | "Piece" => Ok(Unit::Piece),
            other => Err(Error::UnknownUnit(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub name: String,
    pub unit: Unit,
}

/// Immutable product catalog with per-unit feature coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    products: Vec<Product>,
    coeffs: Vec<[f64; NUM_FEATURES]>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(products: Vec<Product>, coeffs: Vec<[f64; NUM_FEATURES]>) -> Result<Self> {
        check_len(products.len(), coeffs.len())?;
        if products.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let mut index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::InvalidCatalog(format!("duplicate product id `{}`", p.id)));
            }
        }
        for (p, row) in products.iter().zip(&coeffs) {
            if let Some(bad) = row.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::InvalidCatalog(format!(
                    "product `{}` has invalid {} coefficient {}",
                    p.id,
                    Feature::ALL[bad],
                    row[bad]
                )));
            }
        }
        Ok(Self {
            products,
            coeffs,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, i: usize) -> &Product {
        &self.products[i]
    }

    pub fn coeffs(&self) -> &[[f64; NUM_FEATURES]] {
        &self.coeffs
    }

    pub fn coeff(&self, product: usize, feature: Feature) -> f64 {
        self.coeffs[product][feature.index()]
    }

    pub fn index_of(&self, product_id: &str) -> Option<usize> {
        self.index.get(product_id).copied()
    }

    /// Row-major `N × 10` coefficient matrix.
    pub fn coefficient_matrix(&self) -> Vec<f64> {
        self.coeffs.iter().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got != CATALOG_HEADER {
            return Err(Error::InvalidCatalog(format!(
                "unexpected header {:?}",
                got
            )));
        }
        let mut products = Vec::new();
        let mut coeffs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let unit: Unit = rec[2].parse()?;
            let mut row = [0.0; NUM_FEATURES];
            for (j, slot) in row.iter_mut().enumerate() {
                let raw = rec[3 + j].trim();
                *slot = raw.parse().map_err(|_| {
                    Error::InvalidCatalog(format!("bad number `{raw}` in column {}", Feature::ALL[j].column()))
                })?;
            }
            products.push(Product {
                id: rec[0].trim().to_string(),
                name: rec[1].to_string(),
                unit,
            });
            coeffs.push(row);
        }
        Catalog::new(products, coeffs)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CATALOG_HEADER)?;
        for (p, row) in self.products.iter().zip(&self.coeffs) {
            let mut rec = vec![p.id.clone(), p.name.clone(), p.unit.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Non-negative integer product quantities, one entry per catalog product.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Basket(Vec<u32>);

impl Basket {
    pub fn new(quantities: Vec<u32>) -> Self {
        Self(quantities)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn unit(n: usize, product: usize, quantity: u32) -> Self {
        let mut q = vec![0; n];
        q[product] = quantity;
        Self(q)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when no product has a positive quantity.
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&q| q == 0)
    }

    pub fn quantities(&self) -> &[u32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    pub fn total_units(&self) -> u64 {
        self.0.iter().map(|&q| u64::from(q)).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&q| f64::from(q)).collect()
    }

    pub fn scaled(&self, factor: u32) -> Basket {
        Basket(self.0.iter().map(|q| q * factor).collect())
    }

    /// Builds a basket from `product_id → quantity` pairs.
    pub fn from_pairs<'a, I>(catalog: &Catalog, pairs: I) -> Result<Basket>
    where
        I: IntoIterator<Item = (&'a str, u32)>,
    {
        let mut q = vec![0u32; catalog.len()];
        for (id, qty) in pairs {
            let i = catalog
                .index_of(id)
                .ok_or_else(|| Error::UnknownProduct(id.to_string()))?;
            q[i] = q[i].saturating_add(qty);
        }
        Ok(Basket(q))
    }

    /// Non-zero entries as `(product_id, quantity)`, in catalog order.
    pub fn to_pairs<'a>(&self, catalog: &'a Catalog) -> Vec<(&'a str, u32)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0)
            .map(|(i, &q)| (catalog.product(i).id.as_str(), q))
            .collect()
    }

    /// Compact `id:qty;id:qty` rendering used in CSV outputs.
    pub fn encode(&self, catalog: &Catalog) -> String {
        self.to_pairs(catalog)
            .iter()
            .map(|(id, q)| format!("{id}:{q}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Units added and removed relative to `reference`.
    pub fn diff_units(&self, reference: &Basket) -> (u64, u64) {
        let mut added = 0u64;
        let mut removed = 0u64;
        for (&a, &b) in self.0.iter().zip(&reference.0) {
            if a > b {
                added += u64::from(a - b);
            } else {
                removed += u64::from(b - a);
            }
        }
        (added, removed)
    }
}

impl From<Vec<u32>> for Basket {
    fn from(v: Vec<u32>) -> Self {
        Basket(v)
    }
}

/// Per-feature basket totals `v_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureTotals(pub [f64; NUM_FEATURES]);

impl FeatureTotals {
    pub fn get(&self, feature: Feature) -> f64 {
        self.0[feature.index()]
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &FeatureTotals) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &FeatureTotals) -> FeatureTotals {
        let mut out = self.0;
        for (a, b) in out.iter_mut().zip(&other.0) {
            *a -= b;
        }
        FeatureTotals(out)
    }
}

/// `v_j(x) = Σ_i c[i][j] x_i` for every feature.
pub fn feature_totals(catalog: &Catalog, basket: &Basket) -> Result<FeatureTotals> {
    check_len(catalog.len(), basket.len())?;
    let mut totals = [0.0; NUM_FEATURES];
    for (row, &q) in catalog.coeffs().iter().zip(basket.quantities()) {
        if q == 0 {
            continue;
        }
        let q = f64::from(q);
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c * q;
        }
    }
    Ok(FeatureTotals(totals))
}

/// Feature totals for a real-valued quantity vector.
pub fn feature_totals_real(catalog: &Catalog, x: &[f64]) -> Result<FeatureTotals> {
    check_len(catalog.len(), x.len())?;
    let mut totals = [0.0; NUM_FEATURES];
    for (row, &q) in catalog.coeffs().iter().zip(x) {
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c * q;
        }
    }
    Ok(FeatureTotals(totals))
}

/// `ρ_j(x, x_ref) = v_j(x) / v_j(x_ref)`.
pub fn feature_ratio(catalog: &Catalog, x: &Basket, x_ref: &Basket, feature: Feature) -> Result<f64> {
    let num = feature_totals(catalog, x)?.get(feature);
    let den = feature_totals(catalog, x_ref)?.get(feature);
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::UndefinedRatio {
            feature: feature.objective_index() + 1,
        })
    }
}

/// The eleven objective losses of one basket, lower is better.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector(pub [f64; NUM_OBJECTIVES]);

impl ObjectiveVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn taste(&self) -> f64 {
        self.0[0]
    }

    pub fn cosine(&self) -> f64 {
        1.0 - self.0[0]
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.0[feature.objective_index()]
    }

    /// True when a zero reference total made some ratio infinite.
    pub fn is_flagged(&self) -> bool {
        self.0.iter().any(|v| v.is_infinite())
    }
}

impl AsRef<[f64]> for ObjectiveVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Full evaluation of a basket against an anchor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub objectives: ObjectiveVector,
    /// `ρ_j(x, x*)` for every feature.
    pub ratios: [f64; NUM_FEATURES],
    pub cosine: f64,
}

/// The intended basket with its cached totals, shared by every evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    basket: Basket,
    totals: FeatureTotals,
    sq_norm: f64,
}

impl Anchor {
    pub fn new(catalog: &Catalog, x_star: &Basket) -> Result<Self> {
        let totals = feature_totals(catalog, x_star)?;
        if x_star.is_zero() {
            return Err(Error::InvalidAnchor);
        }
        let sq_norm = x_star.quantities().iter().map(|&q| f64::from(q).powi(2)).sum();
        Ok(Self {
            basket: x_star.clone(),
            totals,
            sq_norm,
        })
    }

    pub fn basket(&self) -> &Basket {
        &self.basket
    }

    pub fn totals(&self) -> &FeatureTotals {
        &self.totals
    }

    pub fn len(&self) -> usize {
        self.basket.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basket.is_empty()
    }

    /// Squared Euclidean norm of `x*`.
    pub fn sq_norm(&self) -> f64 {
        self.sq_norm
    }

    /// `ρ_j` with the zero-reference convention: 0 when both totals vanish, +∞ otherwise.
    pub fn ratio(&self, totals: &FeatureTotals, feature: Feature) -> f64 {
        let den = self.totals.get(feature);
        let num = totals.get(feature);
        if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn cosine(&self, x: &Basket) -> Result<f64> {
        self.cosine_real(&x.to_f64())
    }

    /// Cosine similarity to `x*`; zero for the empty basket.
    pub fn cosine_real(&self, x: &[f64]) -> Result<f64> {
        check_len(self.basket.len(), x.len())?;
        let mut dot = 0.0;
        let mut sq = 0.0;
        for (&a, &b) in x.iter().zip(self.basket.quantities()) {
            dot += a * f64::from(b);
            sq += a * a;
        }
        if sq == 0.0 {
            return Ok(0.0);
        }
        Ok(dot / (sq * self.sq_norm).sqrt())
    }

    pub fn assess(&self, catalog: &Catalog, x: &Basket) -> Result<Assessment> {
        let totals = feature_totals(catalog, x)?;
        let cosine = self.cosine(x)?;
        Ok(self.assemble(&totals, cosine))
    }

    pub fn assess_real(&self, catalog: &Catalog, x: &[f64]) -> Result<Assessment> {
        let totals = feature_totals_real(catalog, x)?;
        let cosine = self.cosine_real(x)?;
        Ok(self.assemble(&totals, cosine))
    }

    fn assemble(&self, totals: &FeatureTotals, cosine: f64) -> Assessment {
        let mut ratios = [0.0; NUM_FEATURES];
        let mut losses = [0.0; NUM_OBJECTIVES];
        losses[0] = 1.0 - cosine;
        for f in Feature::ALL {
            let rho = self.ratio(totals, f);
            ratios[f.index()] = rho;
            losses[f.objective_index()] = if f.is_nutrition() {
                if rho.is_infinite() {
                    f64::INFINITY
                } else if self.totals.get(f) > 0.0 {
                    (1.0 - rho).powi(2)
                } else {
                    // nothing to preserve and nothing added
                    0.0
                }
            } else {
                rho
            };
        }
        Assessment {
            objectives: ObjectiveVector(losses),
            ratios,
            cosine,
        }
    }

    pub fn evaluate(&self, catalog: &Catalog, x: &Basket) -> Result<ObjectiveVector> {
        Ok(self.assess(catalog, x)?.objectives)
    }
}

/// Evaluates all eleven objectives of `x` against the anchor's intended basket.
pub fn evaluate_objectives(catalog: &Catalog, x: &Basket, anchor: &Anchor) -> Result<ObjectiveVector> {
    anchor.evaluate(catalog, x)
}
