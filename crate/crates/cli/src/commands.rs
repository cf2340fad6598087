//! Subcommand bodies, writing their tables to any `Write`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ecobasket::dataset::{
    build_catalog, read_csv_records, select_top_emitters, synth_generate, transactions_to_corpus, Corpus, EnvRecord, IngestionReport,
    IntendedBasket, NutritionRecord, PriceEstimator, RawTransaction, SynthConfig, UnitRules,
};
use ecobasket::experiments::{
    compare_dominance, counterfactual_simulate, ratio_report, recommend_corpus, timing_report, BootstrapConfig, CounterfactualConfig,
    DominanceRow, ImpactReport, RatioRow, RecommendationSet, TimingRow,
};
use ecobasket::methods::{basket_seed, recommend, Method, MethodConfigs, Recommendation};
use ecobasket::{Basket, Catalog, Feature, NUM_OBJECTIVES};
use serde::{Deserialize, Serialize};

/// Objective column names, in objective order.
pub const OBJECTIVE_COLUMNS: [&str; NUM_OBJECTIVES] = [
    "z_taste",
    "z_cost",
    "z_energy",
    "z_protein",
    "z_fat",
    "z_ghg",
    "z_acidification",
    "z_eutrophication",
    "z_land",
    "z_water",
    "z_stressed_water",
];

/// Catalog of the default synthetic dataset.
pub fn default_catalog() -> Result<Catalog> {
    let cfg = SynthConfig {
        n_households: 1,
        n_weeks: 1,
        ..Default::default()
    };
    Ok(synth_generate(&cfg)?.0)
}

pub fn load_catalog(path: Option<&Path>) -> Result<Catalog> {
    match path {
        Some(p) => Catalog::from_csv_path(p).with_context(|| format!("loading catalog {}", p.display())),
        None => default_catalog(),
    }
}

#[derive(Debug, Deserialize)]
struct BasketRow {
    product_id: String,
    quantity: u32,
}

/// Reads a `product_id,quantity` CSV; repeated products add up.
pub fn read_basket_csv<R: Read>(reader: R, catalog: &Catalog) -> Result<Basket> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut q = vec![0u32; catalog.len()];
    for row in rdr.deserialize::<BasketRow>() {
        let row = row?;
        let i = catalog
            .index_of(&row.product_id)
            .with_context(|| format!("unknown product {:?}", row.product_id))?;
        q[i] = q[i].saturating_add(row.quantity);
    }
    Ok(Basket::new(q))
}

pub fn write_recommendations<W: Write>(out: W, catalog: &Catalog, recs: &[Recommendation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string(), "passed_filter".into(), "cosine".into()];
    header.extend(OBJECTIVE_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(Feature::ALL.iter().map(|f| format!("ratio_{}", f.name())));
    header.push("basket".into());
    w.write_record(&header)?;
    for (k, r) in recs.iter().enumerate() {
        let mut rec = vec![k.to_string(), r.passed_filter.to_string(), r.cosine.to_string()];
        rec.extend(r.objectives.0.iter().map(|v| v.to_string()));
        rec.extend(r.ratios.iter().map(|v| v.to_string()));
        rec.push(r.basket.encode(catalog));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_weights(text: &str) -> Result<[f64; NUM_OBJECTIVES]> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad weight {s:?}")))
        .collect::<Result<_>>()?;
    validate_weights(&values)
}

pub fn validate_weights(values: &[f64]) -> Result<[f64; NUM_OBJECTIVES]> {
    let weights: [f64; NUM_OBJECTIVES] = values
        .try_into()
        .map_err(|_| anyhow::anyhow!("expected {NUM_OBJECTIVES} weights, got {}", values.len()))?;
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        bail!("weights must be positive and finite");
    }
    Ok(weights)
}

/// Applies optional weight and generation overrides.
pub fn method_configs(base: &MethodConfigs, weights: Option<[f64; NUM_OBJECTIVES]>, generations: Option<usize>) -> MethodConfigs {
    let mut c = base.clone();
    if let Some(w) = weights {
        c = c.with_weights(w);
    }
    if let Some(g) = generations {
        c = c.with_generations(g);
    }
    c
}

pub fn optimize_basket(method: Method, catalog: &Catalog, basket: &Basket, configs: &MethodConfigs, seed: u64) -> Result<Vec<Recommendation>> {
    Ok(recommend(method, catalog, basket, configs, seed)?)
}

/// Where the raw ingestion inputs live.
#[derive(Clone, Debug)]
pub struct IngestPaths {
    pub transactions: PathBuf,
    pub env: PathBuf,
    pub nutrition: PathBuf,
}

pub enum DatasetSource {
    Synthetic(SynthConfig),
    Ingest(IngestPaths, PriceEstimator),
}

pub struct BuiltDataset {
    pub catalog: Catalog,
    pub corpus: Corpus,
    pub report: Option<IngestionReport>,
}

pub fn build_dataset(source: &DatasetSource) -> Result<BuiltDataset> {
    match source {
        DatasetSource::Synthetic(cfg) => {
            let (catalog, corpus) = synth_generate(cfg)?;
            Ok(BuiltDataset {
                catalog,
                corpus,
                report: None,
            })
        }
        DatasetSource::Ingest(paths, estimator) => {
            let tx: Vec<RawTransaction> = read_csv_records(&paths.transactions).context("reading transactions")?;
            let env: Vec<EnvRecord> = read_csv_records(&paths.env).context("reading environmental table")?;
            let nut: Vec<NutritionRecord> = read_csv_records(&paths.nutrition).context("reading nutrition table")?;
            let rules = UnitRules::standard();
            let (catalog, report) = build_catalog(&tx, &env, &nut, &rules, *estimator)?;
            let corpus = transactions_to_corpus(&tx, &catalog, &rules);
            Ok(BuiltDataset {
                catalog,
                corpus,
                report: Some(report),
            })
        }
    }
}

/// Writes `catalog.csv`, `corpus.csv` and, for ingested data, `ingestion.json`.
pub fn write_dataset(dir: &Path, data: &BuiltDataset) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    data.catalog.write_csv(std::fs::File::create(dir.join("catalog.csv"))?)?;
    data.corpus.write_csv(std::fs::File::create(dir.join("corpus.csv"))?)?;
    if let Some(report) = &data.report {
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("ingestion.json"))?, report)?;
    }
    Ok(())
}

/// Intended baskets to evaluate on.
pub struct EvalData {
    pub catalog: Catalog,
    pub baskets: Vec<IntendedBasket>,
}

pub struct EvalSource {
    pub catalog: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub synth: SynthConfig,
    /// Keep only the households with the largest total GHG.
    pub top_emitters: Option<usize>,
    pub limit: Option<usize>,
}

pub fn load_eval_data(src: &EvalSource) -> Result<EvalData> {
    let (catalog, corpus) = match (&src.catalog, &src.corpus) {
        (Some(c), Some(p)) => (load_catalog(Some(c))?, Corpus::from_csv_path(p).with_context(|| format!("loading corpus {}", p.display()))?),
        (None, None) => synth_generate(&src.synth)?,
        _ => bail!("--catalog and --corpus go together"),
    };
    let corpus = match src.top_emitters {
        Some(k) => {
            let keep: BTreeSet<u32> = select_top_emitters(&corpus, &catalog, k)?.into_iter().collect();
            corpus.restrict_to(&keep)
        }
        None => corpus,
    };
    let mut baskets = corpus.intended_baskets(&catalog)?;
    if let Some(n) = src.limit {
        baskets.truncate(n);
    }
    if baskets.is_empty() {
        bail!("no intended baskets to evaluate");
    }
    Ok(EvalData { catalog, baskets })
}

pub fn recommend_all(data: &EvalData, methods: &[Method], configs: &MethodConfigs, seed: u64) -> Result<Vec<(String, RecommendationSet)>> {
    methods
        .iter()
        .map(|&m| {
            log::info!("running {m} on {} baskets", data.baskets.len());
            Ok((m.to_string(), recommend_corpus(m, &data.catalog, &data.baskets, configs, seed)?))
        })
        .collect()
}

fn named(sets: &[(String, RecommendationSet)]) -> Vec<(String, &RecommendationSet)> {
    sets.iter().map(|(n, s)| (n.clone(), s)).collect()
}

pub fn dominance_table(sets: &[(String, RecommendationSet)], bootstrap: &BootstrapConfig) -> Result<Vec<DominanceRow>> {
    Ok(compare_dominance(&named(sets), bootstrap)?)
}

pub fn write_dominance<W: Write>(out: W, rows: &[DominanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "baskets", "mean", "mean_ci_low", "mean_ci_high", "median", "median_ci_low", "median_ci_high"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.baskets.to_string(),
            r.mean.to_string(),
            r.mean_ci.0.to_string(),
            r.mean_ci.1.to_string(),
            r.median.to_string(),
            r.median_ci.0.to_string(),
            r.median_ci.1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn ratio_table(sets: &[(String, RecommendationSet)]) -> Vec<RatioRow> {
    ratio_report(&named(sets))
}

pub fn write_ratios<W: Write>(out: W, rows: &[RatioRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string(), "survivors".into(), "cosine".into()];
    header.extend(Feature::ALL.iter().map(|f| format!("ratio_{}", f.name())));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.survivors.to_string(), r.cosine.map(|c| c.to_string()).unwrap_or_default()];
        match r.ratios {
            Some(ratios) => rec.extend(ratios.iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), Feature::ALL.len())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn impact_table(data: &EvalData, sets: &[(String, RecommendationSet)], config: &CounterfactualConfig) -> Result<Vec<(String, ImpactReport)>> {
    sets.iter()
        .map(|(name, set)| Ok((name.clone(), counterfactual_simulate(&data.catalog, &data.baskets, set, config)?)))
        .collect()
}

pub fn write_impact<W: Write>(out: W, rows: &[(String, ImpactReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "feature",
        "unit",
        "reduction",
        "interval_low",
        "interval_high",
        "baseline_per_basket",
        "counterfactual_per_basket",
        "mean_added_units",
        "mean_removed_units",
        "mean_unreplaced",
    ])?;
    for (name, r) in rows {
        for f in Feature::ALL {
            let j = f.index();
            w.write_record([
                name.clone(),
                f.name().to_string(),
                f.unit().to_string(),
                r.reduction[j].to_string(),
                r.reduction_interval[j].0.to_string(),
                r.reduction_interval[j].1.to_string(),
                r.baseline_per_basket[j].to_string(),
                r.counterfactual_per_basket[j].to_string(),
                r.mean_added_units.to_string(),
                r.mean_removed_units.to_string(),
                r.mean_unreplaced.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn timing_table(data: &EvalData, methods: &[Method], configs: &MethodConfigs, seed: u64, sample: usize) -> Result<Vec<TimingRow>> {
    let step = (data.baskets.len() / sample.max(1)).max(1);
    let picked: Vec<IntendedBasket> = data.baskets.iter().step_by(step).take(sample).cloned().collect();
    let runners: Vec<(String, Box<dyn Fn(&IntendedBasket) -> ecobasket::Result<()>>)> = methods
        .iter()
        .map(|&m| {
            let f: Box<dyn Fn(&IntendedBasket) -> ecobasket::Result<()>> = Box::new(move |b: &IntendedBasket| {
                recommend(m, &data.catalog, &b.basket, configs, basket_seed(seed, b.household_id, b.week)).map(|_| ())
            });
            (m.to_string(), f)
        })
        .collect();
    Ok(timing_report(&runners, &picked)?)
}

pub fn write_timing<W: Write>(out: W, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "runs", "mean_seconds", "std_seconds"])?;
    for r in rows {
        w.write_record([r.method.clone(), r.runs.to_string(), r.mean_seconds.to_string(), r.std_seconds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    baskets: usize,
    products: usize,
    seed: u64,
    dominance: &'a [DominanceRow],
    ratios: &'a [RatioRow],
    impact: Vec<ImpactSummary<'a>>,
    timing: &'a [TimingRow],
}

#[derive(Serialize)]
struct ImpactSummary<'a> {
    method: &'a str,
    #[serde(flatten)]
    report: &'a ImpactReport,
}

pub struct ReportOptions {
    pub bootstrap: BootstrapConfig,
    pub counterfactual: CounterfactualConfig,
    pub timing_sample: usize,
    pub seed: u64,
}

/// Runs every suite and writes the tables, long-format figure data and
/// a JSON summary into `dir`.
pub fn write_report(dir: &Path, data: &EvalData, methods: &[Method], configs: &MethodConfigs, opts: &ReportOptions) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let sets = recommend_all(data, methods, configs, opts.seed)?;
    let dominance = if sets.len() >= 2 { dominance_table(&sets, &opts.bootstrap)? } else { Vec::new() };
    let ratios = ratio_table(&sets);
    let impact = impact_table(data, &sets, &opts.counterfactual)?;
    let timing = timing_table(data, methods, configs, opts.seed, opts.timing_sample)?;

    let create = |name: &str| std::fs::File::create(dir.join(name)).with_context(|| format!("creating {name}"));
    write_dominance(create("dominance.csv")?, &dominance)?;
    write_ratios(create("ratios.csv")?, &ratios)?;
    write_impact(create("impact.csv")?, &impact)?;
    write_timing(create("timing.csv")?, &timing)?;

    let mut w = csv::Writer::from_writer(create("figure_ratios.csv")?);
    w.write_record(["method", "metric", "value"])?;
    for r in &ratios {
        if let (Some(cos), Some(values)) = (r.cosine, r.ratios) {
            w.write_record([r.method.as_str(), "cosine", &cos.to_string()])?;
            for f in Feature::ALL {
                w.write_record([r.method.as_str(), f.name(), &values[f.index()].to_string()])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create("figure_impact.csv")?);
    w.write_record(["method", "feature", "scenario", "value_per_basket"])?;
    for (name, r) in &impact {
        for f in Feature::ALL {
            let j = f.index();
            w.write_record([name.as_str(), f.name(), "intended", &r.baseline_per_basket[j].to_string()])?;
            w.write_record([name.as_str(), f.name(), "counterfactual", &r.counterfactual_per_basket[j].to_string()])?;
        }
    }
    w.flush()?;

    let summary = Summary {
        baskets: data.baskets.len(),
        products: data.catalog.len(),
        seed: opts.seed,
        dominance: &dominance,
        ratios: &ratios,
        impact: impact.iter().map(|(m, r)| ImpactSummary { method: m, report: r }).collect(),
        timing: &timing,
    };
    serde_json::to_writer_pretty(create("summary.json")?, &summary)?;
    Ok(())
}

pub fn parse_methods(text: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<Method>().map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        bail!("no methods given");
    }
    let unique: BTreeSet<Method> = methods.iter().copied().collect();
    if unique.len() != methods.len() {
        bail!("methods listed twice");
    }
    Ok(methods)
}
