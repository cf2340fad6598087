//! Catalog and transaction corpus construction.
//!
//! Real data enters as three CSV files: raw transactions, an environmental
//! table and a nutrition table, both keyed by product category. Unit labels
//! are mapped to canonical units through anchored regular expressions, prices
//! are collapsed to one estimate per canonical unit, and per-category
//! coefficients are joined in. A seeded synthetic generator produces
//! catalogs and corpora of the same shape for runs without licensed data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{feature_totals, Basket, Catalog, Feature, Product, Unit, NUM_FEATURES};
use crate::error::{Error, Result};

/// One raw purchase line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTransaction {
    pub household_id: u32,
    pub week: u32,
    pub store_id: u32,
    pub product_label: String,
    pub quantity_value: f64,
    pub quantity_unit: String,
    pub paid_price: f64,
}

/// Maps unit labels matching `pattern` to `canonical_unit`, multiplying by `factor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRule {
    pub pattern: String,
    pub canonical_unit: Unit,
    pub factor: f64,
}

impl UnitRule {
    fn new(pattern: &str, canonical_unit: Unit, factor: f64) -> Self {
        Self {
            pattern: pattern.to_string(),
            canonical_unit,
            factor,
        }
    }
}

/// Grams per avoirdupois pound, exact.
pub const KG_PER_LB: f64 = 0.45359237;
pub const KG_PER_OZ: f64 = KG_PER_LB / 16.0;
pub const L_PER_GAL: f64 = 3.785411784;
pub const L_PER_FL_OZ: f64 = L_PER_GAL / 128.0;

/// US imperial and metric labels seen in grocery data.
pub fn default_unit_rules() -> Vec<UnitRule> {
    vec![
        UnitRule::new(r"(?i)^\s*(lb|lbs|pound|pounds)\s*$", Unit::Kg, KG_PER_LB),
        UnitRule::new(r"(?i)^\s*(oz|ounce|ounces)\s*$", Unit::Kg, KG_PER_OZ),
        UnitRule::new(r"(?i)^\s*(kg|kgs|kilo|kilos|kilogram|kilograms)\s*$", Unit::Kg, 1.0),
        UnitRule::new(r"(?i)^\s*(g|gr|gram|grams)\s*$", Unit::Kg, 0.001),
        UnitRule::new(r"(?i)^\s*(fl\.?\s*oz|fluid\s+ounces?)\s*$", Unit::L, L_PER_FL_OZ),
        UnitRule::new(r"(?i)^\s*(gal|gals|gallon|gallons)\s*$", Unit::L, L_PER_GAL),
        UnitRule::new(r"(?i)^\s*(qt|quart|quarts)\s*$", Unit::L, L_PER_GAL / 4.0),
        UnitRule::new(r"(?i)^\s*(pt|pint|pints)\s*$", Unit::L, L_PER_GAL / 8.0),
        UnitRule::new(r"(?i)^\s*(l|lt|liter|liters|litre|litres)\s*$", Unit::L, 1.0),
        UnitRule::new(r"(?i)^\s*(ml|milliliter|milliliters|millilitre|millilitres)\s*$", Unit::L, 0.001),
        UnitRule::new(r"(?i)^\s*(ct|ea|each|count|pc|pcs|piece|pieces)\s*$", Unit::Piece, 1.0),
    ]
}

/// Compiled unit rules.
#[derive(Clone, Debug)]
pub struct UnitRules {
    rules: Vec<(Regex, UnitRule)>,
}

impl UnitRules {
    pub fn new(rules: Vec<UnitRule>) -> Result<Self> {
        let mut compiled = Vec::with_capacity(rules.len());
        for r in rules {
            if !(r.factor > 0.0 && r.factor.is_finite()) {
                return Err(Error::Config(format!("unit rule `{}` has factor {}", r.pattern, r.factor)));
            }
            compiled.push((Regex::new(&r.pattern)?, r));
        }
        Ok(Self { rules: compiled })
    }

    pub fn standard() -> Self {
        Self::new(default_unit_rules()).expect("default unit rules compile")
    }

    pub fn rules(&self) -> impl Iterator<Item = &UnitRule> {
        self.rules.iter().map(|(_, r)| r)
    }

    fn lookup(&self, label: &str) -> Result<&UnitRule> {
        let mut hits = self.rules.iter().filter(|(re, _)| re.is_match(label));
        let first = hits.next().ok_or_else(|| Error::UnknownUnit(label.to_string()))?;
        let extra = hits.count();
        if extra > 0 {
            return Err(Error::AmbiguousUnit {
                label: label.to_string(),
                count: extra + 1,
            });
        }
        Ok(&first.1)
    }
}

/// Converts `value` in unit `label` to its canonical unit.
pub fn normalize_unit(label: &str, value: f64, rules: &UnitRules) -> Result<(Unit, f64)> {
    let rule = rules.lookup(label)?;
    Ok((rule.canonical_unit, value * rule.factor))
}

/// Per-category environmental coefficients, per canonical unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub category: String,
    pub unit: Unit,
    pub ghg_kgco2e: f64,
    pub acid_kgso2e: f64,
    pub eutro_kgpo4e: f64,
    pub land_m2: f64,
    pub water_l: f64,
    pub stressed_water_l: f64,
}

/// Per-category nutrition coefficients, per canonical unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NutritionRecord {
    pub category: String,
    pub unit: Unit,
    pub energy_kcal: f64,
    pub protein_g: f64,
    pub fat_g: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriceEstimator {
    #[default]
    Mean,
    Median,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedProduct {
    pub label: String,
    pub reason: String,
}

/// Summary of one ingestion run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub transactions_read: usize,
    pub transactions_used: usize,
    pub products: usize,
    pub dropped_products: Vec<DroppedProduct>,
    /// Labels no rule matched, with their counts.
    pub unknown_units: BTreeMap<String, usize>,
    /// Transactions converted per rule pattern.
    pub unit_rule_hits: BTreeMap<String, usize>,
}

/// Category key used to join the three sources: trimmed, upper-cased, single-spaced.
pub fn category_key(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase()
}

fn estimate(values: &mut [f64], estimator: PriceEstimator) -> f64 {
    match estimator {
        PriceEstimator::Mean => values.iter().sum::<f64>() / values.len() as f64,
        PriceEstimator::Median => {
            values.sort_by(f64::total_cmp);
            let n = values.len();
            if n % 2 == 1 {
                values[n / 2]
            } else {
                (values[n / 2 - 1] + values[n / 2]) / 2.0
            }
        }
    }
}

struct Normalized {
    key: String,
    unit: Unit,
    value: f64,
}

fn normalize_transactions(
    transactions: &[RawTransaction],
    rules: &UnitRules,
    report: &mut IngestionReport,
) -> Result<Vec<Option<Normalized>>> {
    let mut out = Vec::with_capacity(transactions.len());
    for t in transactions {
        if !(t.quantity_value > 0.0) || t.paid_price < 0.0 {
            out.push(None);
            continue;
        }
        match rules.lookup(&t.quantity_unit) {
            Ok(rule) => {
                *report.unit_rule_hits.entry(rule.pattern.clone()).or_default() += 1;
                out.push(Some(Normalized {
                    key: category_key(&t.product_label),
                    unit: rule.canonical_unit,
                    value: t.quantity_value * rule.factor,
                }));
            }
            Err(Error::UnknownUnit(label)) => {
                *report.unknown_units.entry(label).or_default() += 1;
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Joins transactions with the coefficient tables into a catalog.
///
/// Products are identified by their category key and ordered by it. Products
/// without environmental or nutrition rows, with units that disagree with the
/// tables, or bought in more than one unit family are dropped and reported.
pub fn build_catalog(
    transactions: &[RawTransaction],
    env: &[EnvRecord],
    nutrition: &[NutritionRecord],
    rules: &UnitRules,
    estimator: PriceEstimator,
) -> Result<(Catalog, IngestionReport)> {
    let mut report = IngestionReport {
        transactions_read: transactions.len(),
        ..Default::default()
    };
    let normalized = normalize_transactions(transactions, rules, &mut report)?;

    let env_by_key: HashMap<String, &EnvRecord> = env.iter().map(|e| (category_key(&e.category), e)).collect();
    let nut_by_key: HashMap<String, &NutritionRecord> =
        nutrition.iter().map(|n| (category_key(&n.category), n)).collect();

    let mut seen_labels: BTreeSet<String> = BTreeSet::new();
    let mut units: BTreeMap<String, BTreeSet<&'static str>> = BTreeMap::new();
    let mut unit_prices: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut display: BTreeMap<String, (String, Unit)> = BTreeMap::new();
    for (t, n) in transactions.iter().zip(&normalized) {
        let key = category_key(&t.product_label);
        seen_labels.insert(key.clone());
        let Some(n) = n else { continue };
        units.entry(n.key.clone()).or_default().insert(n.unit.as_str());
        unit_prices.entry(n.key.clone()).or_default().push(t.paid_price / n.value);
        display.entry(n.key.clone()).or_insert_with(|| (t.product_label.trim().to_string(), n.unit));
    }

    let mut products = Vec::new();
    let mut coeffs = Vec::new();
    for key in &seen_labels {
        let drop = |reason: &str, report: &mut IngestionReport| {
            report.dropped_products.push(DroppedProduct {
                label: key.clone(),
                reason: reason.to_string(),
            })
        };
        let Some(prices) = unit_prices.get_mut(key) else {
            drop("no transaction with a recognised unit", &mut report);
            continue;
        };
        if units[key].len() > 1 {
            drop("mixed unit families", &mut report);
            continue;
        }
        let (name, unit) = display[key].clone();
        let Some(e) = env_by_key.get(key) else {
            drop("missing from environmental table", &mut report);
            continue;
        };
        let Some(nu) = nut_by_key.get(key) else {
            drop("missing from nutrition table", &mut report);
            continue;
        };
        if e.unit != unit || nu.unit != unit {
            drop("table unit differs from purchase unit", &mut report);
            continue;
        }
        let price = estimate(prices, estimator);
        let mut row = [0.0; NUM_FEATURES];
        row[Feature::Cost.index()] = price;
        row[Feature::Energy.index()] = nu.energy_kcal;
        row[Feature::Protein.index()] = nu.protein_g;
        row[Feature::Fat.index()] = nu.fat_g;
        row[Feature::Ghg.index()] = e.ghg_kgco2e;
        row[Feature::Acidification.index()] = e.acid_kgso2e;
        row[Feature::Eutrophication.index()] = e.eutro_kgpo4e;
        row[Feature::Land.index()] = e.land_m2;
        row[Feature::Water.index()] = e.water_l;
        row[Feature::StressedWater.index()] = e.stressed_water_l;
        report.transactions_used += prices.len();
        products.push(Product {
            id: key.clone(),
            name,
            unit,
        });
        coeffs.push(row);
    }
    if products.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    report.products = products.len();
    Ok((Catalog::new(products, coeffs)?, report))
}

/// Aggregates transactions into weekly integer baskets over `catalog`.
///
/// Canonical quantities are summed per household, week and product, then
/// rounded; a product that was bought keeps at least one unit.
pub fn transactions_to_corpus(transactions: &[RawTransaction], catalog: &Catalog, rules: &UnitRules) -> Corpus {
    let mut agg: BTreeMap<(u32, u32, usize), f64> = BTreeMap::new();
    for t in transactions {
        let Some(i) = catalog.index_of(&category_key(&t.product_label)) else {
            continue;
        };
        let Ok((unit, value)) = normalize_unit(&t.quantity_unit, t.quantity_value, rules) else {
            continue;
        };
        if unit != catalog.product(i).unit || !(value > 0.0) {
            continue;
        }
        *agg.entry((t.household_id, t.week, i)).or_default() += value;
    }
    let lines = agg
        .into_iter()
        .map(|((household_id, week, i), v)| BasketLine {
            household_id,
            week,
            product_id: catalog.product(i).id.clone(),
            quantity: (v.round() as u32).max(1),
        })
        .collect();
    Corpus { lines }
}

/// One `(household, week, product)` quantity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasketLine {
    pub household_id: u32,
    pub week: u32,
    pub product_id: String,
    pub quantity: u32,
}

/// A household's basket for one week.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntendedBasket {
    pub household_id: u32,
    pub week: u32,
    pub basket: Basket,
}

/// Weekly purchase history in long format.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub lines: Vec<BasketLine>,
}

impl Corpus {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn households(&self) -> BTreeSet<u32> {
        self.lines.iter().map(|l| l.household_id).collect()
    }

    /// Baskets ordered by household then week.
    pub fn intended_baskets(&self, catalog: &Catalog) -> Result<Vec<IntendedBasket>> {
        let mut grouped: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
        for l in &self.lines {
            let i = catalog
                .index_of(&l.product_id)
                .ok_or_else(|| Error::UnknownProduct(l.product_id.clone()))?;
            let q = grouped
                .entry((l.household_id, l.week))
                .or_insert_with(|| vec![0; catalog.len()]);
            q[i] = q[i].saturating_add(l.quantity);
        }
        Ok(grouped
            .into_iter()
            .filter(|(_, q)| q.iter().any(|&v| v > 0))
            .map(|((household_id, week), q)| IntendedBasket {
                household_id,
                week,
                basket: Basket::new(q),
            })
            .collect())
    }

    /// Keeps only lines of the given households.
    pub fn restrict_to(&self, households: &BTreeSet<u32>) -> Corpus {
        Corpus {
            lines: self
                .lines
                .iter()
                .filter(|l| households.contains(&l.household_id))
                .cloned()
                .collect(),
        }
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let lines = rdr.deserialize().collect::<std::result::Result<Vec<BasketLine>, _>>()?;
        Ok(Self { lines })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for l in &self.lines {
            w.serialize(l)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_csv_records<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Synthetic corpus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_households: usize,
    pub n_weeks: usize,
    pub n_products: usize,
    /// Chance a household shops in a given week.
    pub shop_probability: f64,
    /// Distinct products per basket, inclusive range.
    pub items_per_basket: (usize, usize),
    /// Size of each household's habitual product set, inclusive range.
    pub favourites: (usize, usize),
    /// Chance an item is drawn outside the habitual set.
    pub explore_probability: f64,
    /// Continuation probability of the geometric quantity draw.
    pub extra_unit_probability: f64,
    pub max_quantity: u32,
    /// Log-uniform coefficient ranges, one per feature.
    pub coefficient_ranges: [(f64, f64); NUM_FEATURES],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_households: 500,
            n_weeks: 85,
            n_products: 132,
            shop_probability: 0.67,
            items_per_basket: (3, 14),
            favourites: (12, 40),
            explore_probability: 0.1,
            extra_unit_probability: 0.45,
            max_quantity: 6,
            coefficient_ranges: [
                (0.5, 12.0),
                (20.0, 3500.0),
                (0.5, 250.0),
                (0.1, 300.0),
                (0.2, 60.0),
                (0.002, 0.5),
                (0.001, 0.4),
                (0.1, 120.0),
                (0.5, 3000.0),
                (5.0, 190_000.0),
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_households == 0 || self.n_weeks == 0 || self.n_products == 0 {
            return bad("counts must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.shop_probability)
            || !(0.0..=1.0).contains(&self.explore_probability)
            || !(0.0..1.0).contains(&self.extra_unit_probability)
        {
            return bad("probabilities out of range");
        }
        let (lo, hi) = self.items_per_basket;
        if lo == 0 || lo > hi {
            return bad("items_per_basket must be a non-empty range starting at 1 or more");
        }
        let (flo, fhi) = self.favourites;
        if flo == 0 || flo > fhi || fhi > self.n_products {
            return bad("favourites must be a non-empty range within n_products");
        }
        if self.max_quantity == 0 {
            return bad("max_quantity must be at least 1");
        }
        for &(a, b) in &self.coefficient_ranges {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return bad("coefficient ranges must be positive and ordered");
            }
        }
        Ok(())
    }
}

/// Counts describing a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub households: usize,
    pub weeks: usize,
    pub baskets: usize,
    pub lines: usize,
    pub baskets_per_household_week: f64,
}

impl CorpusStats {
    pub fn of(corpus: &Corpus, weeks: usize) -> Self {
        let baskets: BTreeSet<(u32, u32)> = corpus.lines.iter().map(|l| (l.household_id, l.week)).collect();
        let households = corpus.households().len();
        Self {
            households,
            weeks,
            baskets: baskets.len(),
            lines: corpus.lines.len(),
            baskets_per_household_week: if households == 0 {
                0.0
            } else {
                baskets.len() as f64 / (households * weeks) as f64
            },
        }
    }
}

/// Deterministic synthetic catalog and corpus.
///
/// Coefficients are log-uniform within the configured ranges (ChaCha8
/// stream, `f64` sampling); every other draw is integer valued.
pub fn synth_generate(config: &SynthConfig) -> Result<(Catalog, Corpus)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_products.to_string().len().max(3);
    let mut products = Vec::with_capacity(config.n_products);
    let mut coeffs = Vec::with_capacity(config.n_products);
    for i in 0..config.n_products {
        let unit = match rng.random_range(0..20u32) {
            0..=11 => Unit::Kg,
            12..=14 => Unit::L,
            _ => Unit::Piece,
        };
        let mut row = [0.0; NUM_FEATURES];
        for (slot, &(lo, hi)) in row.iter_mut().zip(&config.coefficient_ranges) {
            let t: f64 = rng.random();
            *slot = (lo.ln() + t * (hi.ln() - lo.ln())).exp().clamp(lo, hi);
        }
        products.push(Product {
            id: format!("P{:0width$}", i + 1),
            name: format!("synthetic product {:0width$}", i + 1),
            unit,
        });
        coeffs.push(row);
    }
    let catalog = Catalog::new(products, coeffs)?;

    let mut lines = Vec::new();
    let shop_cut = (config.shop_probability * 1_000_000.0).round() as u32;
    let explore_cut = (config.explore_probability * 1_000_000.0).round() as u32;
    let extra_cut = (config.extra_unit_probability * 1_000_000.0).round() as u32;
    for h in 0..config.n_households {
        let household_id = (h + 1) as u32;
        let n_fav = rng.random_range(config.favourites.0..=config.favourites.1);
        let favourites: Vec<usize> = sample(&mut rng, config.n_products, n_fav).into_vec();
        for w in 0..config.n_weeks {
            if rng.random_range(0..1_000_000u32) >= shop_cut {
                continue;
            }
            let n_items = rng.random_range(config.items_per_basket.0..=config.items_per_basket.1);
            let mut items: BTreeMap<usize, u32> = BTreeMap::new();
            for _ in 0..n_items {
                let product = if rng.random_range(0..1_000_000u32) < explore_cut {
                    rng.random_range(0..config.n_products)
                } else {
                    favourites[rng.random_range(0..favourites.len())]
                };
                let mut q = 1u32;
                while q < config.max_quantity && rng.random_range(0..1_000_000u32) < extra_cut {
                    q += 1;
                }
                let slot = items.entry(product).or_insert(0);
                *slot = (*slot + q).min(config.max_quantity);
            }
            for (product, quantity) in items {
                lines.push(BasketLine {
                    household_id,
                    week: (w + 1) as u32,
                    product_id: catalog.product(product).id.clone(),
                    quantity,
                });
            }
        }
    }
    Ok((catalog, Corpus { lines }))
}

/// Households ranked by total GHG over all their baskets, highest first.
///
/// Ties resolve by ascending household id. Asking for more households than
/// exist returns all of them.
pub fn select_top_emitters(corpus: &Corpus, catalog: &Catalog, k: usize) -> Result<Vec<u32>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut totals: BTreeMap<u32, f64> = BTreeMap::new();
    for b in corpus.intended_baskets(catalog)? {
        *totals.entry(b.household_id).or_default() += feature_totals(catalog, &b.basket)?.get(Feature::Ghg);
    }
    if k > totals.len() {
        log::warn!("requested top {k} emitters but corpus has {} households", totals.len());
    }
    let mut ranked: Vec<(u32, f64)> = totals.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(h, _)| h).collect())
}
