use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tradenet::ingest::{build_flow_table, parse_records, Bucket, FlowTable, Granularity, Schema, Section, TradeRecord};
use tradenet::learners::{self, TrainedModel};
use tradenet::netmetrics::{centrality_ranking, metric_series, PageRankConfig};
use tradenet::panel::{align_target, assemble_panel, FeaturePanel, SectionMetrics, SupervisedDataset};
use tradenet::preprocess::{fit_pipeline, FittedPipeline};
use tradenet::rng;
use tradenet::selection::{self, adaptive_race, prepare_folds, race_from_tuning, FamilyRace, Grid, RaceConfig};
use tradenet::shapley::{self, select_background, shap_matrix};
use tradenet::tradegraph::{build_network, TradeNetwork};
use tradenet::Matrix;

use crate::config::{LoadedConfig, RunConfig, SplitKind};
use crate::error::CliError;
use crate::output::{sha256_hex, RunOutputs};

/// Row errors shown before the rest are summarized.
const MAX_REPORTED_ROW_ERRORS: usize = 20;

pub struct Context {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    pub fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn required(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let p = p.as_ref().ok_or_else(|| CliError::usage(format!("config key {key} is required for this command")))?;
        Ok(self.loaded.resolve(p))
    }

    /// A configured path, or `default_name` inside the output directory.
    fn produced(&self, p: &Option<PathBuf>, default_name: &str) -> PathBuf {
        p.as_ref().map(|p| self.loaded.resolve(p)).unwrap_or_else(|| self.out.join(default_name))
    }

    fn outputs(&self) -> RunOutputs {
        RunOutputs::new(&self.out)
    }

    fn commit(&self, outputs: RunOutputs, command: &str) -> Result<PathBuf, CliError> {
        outputs.commit(command, &sha256_hex(&self.loaded.raw), self.seed)
    }

    fn pagerank(&self) -> PageRankConfig {
        PageRankConfig { damping: self.config().networks.damping, ..Default::default() }
    }
}

fn must_exist(path: &Path, role: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("missing input ({role}): {}", path.display())))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn granularity_name(g: Granularity) -> &'static str {
    match g {
        Granularity::Monthly => "monthly",
        Granularity::Quarterly => "quarterly",
        Granularity::Annual => "annual",
    }
}

fn read_flows(path: &Path) -> Result<FlowTable, CliError> {
    let table = FlowTable::read_csv(open(path)?).map_err(|e| CliError::from(e).context(path.display()))?;
    if !table.is_empty() && table.granularity() != Granularity::Annual {
        return Err(CliError::usage(format!("{}: expected an annual flow table", path.display())));
    }
    Ok(table)
}

/// Periods in which `section` has at least one positive flow.
fn active_periods(table: &FlowTable, section: Section) -> Vec<Bucket> {
    table.periods().into_iter().filter(|&p| table.select(section, p).any(|(_, v)| v > 0.0)).collect()
}

fn edge_list_csv(net: &TradeNetwork, out: &mut Vec<u8>) -> tradenet::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin", "destination", "weight"])?;
    for &(o, d, wt) in net.edges() {
        w.write_record([net.nodes()[o].as_str(), net.nodes()[d].as_str(), &wt.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `section,value,relevance_percent`: each section's share of the total
/// value, one decimal.
pub fn relevance_csv(table: &FlowTable, out: &mut Vec<u8>) -> tradenet::Result<()> {
    let total = table.total();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["section", "value", "relevance_percent"])?;
    for (section, value) in table.section_totals() {
        let share = if total > 0.0 { 100.0 * value / total } else { 0.0 };
        w.write_record([section.to_string(), value.to_string(), format!("{share:.1}")])?;
    }
    w.flush()?;
    Ok(())
}

fn load_records(ctx: &Context) -> Result<Vec<TradeRecord>, CliError> {
    let c = ctx.config();
    let records_path = ctx.required(&c.paths.records, "paths.records")?;
    let schema_path = c.paths.schema.as_ref().map(|p| ctx.loaded.resolve(p));
    must_exist(&records_path, "records")?;
    if let Some(p) = &schema_path {
        must_exist(p, "schema")?;
    }
    let (start, end) = c.networks.range()?;
    let schema = match &schema_path {
        Some(p) => Schema::from_toml(&read_text(p)?).map_err(|e| CliError::from(e).context(p.display()))?,
        None => Schema::default(),
    };
    let parsed = parse_records(open(&records_path)?, &schema).map_err(|e| CliError::from(e).context(records_path.display()))?;
    if !parsed.errors.is_empty() {
        let mut msg = format!("{} malformed row(s) in {}", parsed.errors.len(), records_path.display());
        for e in parsed.errors.iter().take(MAX_REPORTED_ROW_ERRORS) {
            msg.push_str(&format!("\n  {}:{}: {}", records_path.display(), e.line, e.message));
        }
        if parsed.errors.len() > MAX_REPORTED_ROW_ERRORS {
            msg.push_str(&format!("\n  ... and {} more", parsed.errors.len() - MAX_REPORTED_ROW_ERRORS));
        }
        return Err(CliError::runtime(msg));
    }
    let in_range = |r: &TradeRecord| start.is_none_or(|s| r.period >= s) && end.is_none_or(|e| r.period <= e);
    let records: Vec<TradeRecord> = parsed.records.into_iter().filter(in_range).collect();
    if records.is_empty() {
        return Err(CliError::runtime(format!("{}: no records in the selected period range", records_path.display())));
    }
    Ok(records)
}

pub fn build_networks(ctx: &Context) -> Result<PathBuf, CliError> {
    let c = ctx.config();
    let records = load_records(ctx)?;
    let mut outputs = ctx.outputs();
    outputs.add_input("records", &ctx.required(&c.paths.records, "paths.records")?)?;
    if let Some(p) = &c.paths.schema {
        outputs.add_input("schema", &ctx.loaded.resolve(p))?;
    }

    let granularity = c.networks.granularity;
    let annual = build_flow_table(records.clone(), Granularity::Annual)?;
    let table = if granularity == Granularity::Annual { annual.table.clone() } else { build_flow_table(records, granularity)?.table };
    if !annual.ties.is_empty() {
        log::info!("{} reconciliation tie(s) at annual granularity", annual.ties.len());
    }

    let present = table.sections();
    let sections: Vec<Section> = if c.networks.sections.is_empty() {
        present.clone()
    } else {
        let mut out = Vec::new();
        for &code in &c.networks.sections {
            let s = Section::new(code)?;
            if !present.contains(&s) {
                return Err(CliError::usage(format!("networks.sections: section {code} has no flows in the selected range")));
            }
            out.push(s);
        }
        out
    };

    let tasks: Vec<(Section, Bucket)> = sections.iter().flat_map(|&s| active_periods(&table, s).into_iter().map(move |p| (s, p))).collect();
    let networks: Vec<TradeNetwork> = tasks.par_iter().map(|&(s, p)| build_network(&table, s, p)).collect::<tradenet::Result<_>>()?;
    let series = sections
        .par_iter()
        .map(|&s| {
            let nets: Vec<TradeNetwork> = networks.iter().filter(|n| n.section() == s).cloned().collect();
            metric_series(&nets, ctx.seed)
        })
        .collect::<tradenet::Result<Vec<_>>>()?;

    if granularity != Granularity::Annual {
        outputs.put_with(format!("flows_{}.csv", granularity_name(granularity)), |b| table.write_csv(b))?;
    }
    outputs.put_with("flows_annual.csv", |b| annual.table.write_csv(b))?;
    outputs.put_with("relevance.csv", |b| relevance_csv(&annual.table, b))?;
    for net in &networks {
        outputs.put_with(format!("networks/s{:02}_{}.csv", net.section().code(), net.period()), |b| edge_list_csv(net, b))?;
    }
    for s in &series {
        outputs.put_with(format!("metrics/s{:02}.csv", s.section.code()), |b| s.write_csv(b))?;
    }
    println!("{} networks over {} section(s)", networks.len(), sections.len());
    ctx.commit(outputs, "build-networks")
}

pub fn rank(ctx: &Context, section: u8, year: i32, top_k: Option<usize>) -> Result<PathBuf, CliError> {
    let flows_path = ctx.produced(&ctx.config().paths.flows, "flows_annual.csv");
    must_exist(&flows_path, "annual flows")?;
    let top_k = top_k.unwrap_or(ctx.config().rank.top_k);
    if top_k < 1 {
        return Err(CliError::usage("top_k must be at least 1"));
    }
    let section = Section::new(section)?;
    let table = read_flows(&flows_path)?;
    let net = match build_network(&table, section, Bucket::Year(year)) {
        Err(tradenet::Error::EmptyNetwork { .. }) => {
            return Err(CliError::usage(format!("no network for section {section} in {year}")));
        }
        other => other?,
    };
    let ranking = centrality_ranking(&net, top_k, ctx.pagerank())?;
    let mut outputs = ctx.outputs();
    outputs.add_input("flows", &flows_path)?;
    outputs.put_with(format!("rankings/s{:02}_{year}.csv", section.code()), |b| ranking.write_csv(b))?;
    ctx.commit(outputs, "rank")
}

pub fn panel(ctx: &Context) -> Result<PathBuf, CliError> {
    let c = ctx.config();
    let flows_path = ctx.produced(&c.paths.flows, "flows_annual.csv");
    let indicators_path = ctx.required(&c.paths.indicators, "paths.indicators")?;
    must_exist(&flows_path, "annual flows")?;
    must_exist(&indicators_path, "indicators")?;
    let table = read_flows(&flows_path)?;
    let indicators = FeaturePanel::read_csv(open(&indicators_path)?).map_err(|e| CliError::from(e).context(indicators_path.display()))?;

    let cfg = c.panel.panel_config();
    let mut per_section = Vec::new();
    for &code in &cfg.sections {
        let section = Section::new(code)?;
        let periods = active_periods(&table, section);
        if periods.is_empty() {
            return Err(CliError::usage(format!("panel.sections: section {code} has no flows")));
        }
        per_section.push((section, periods));
    }
    let metrics: Vec<SectionMetrics> = per_section
        .par_iter()
        .map(|(section, periods)| {
            let nets = periods.iter().map(|&p| build_network(&table, *section, p)).collect::<tradenet::Result<Vec<_>>>()?;
            SectionMetrics::from_networks(&nets, ctx.pagerank(), ctx.seed)
        })
        .collect::<tradenet::Result<_>>()?;
    let panel = assemble_panel(&indicators, &metrics, &cfg)?;

    let mut outputs = ctx.outputs();
    outputs.add_input("flows", &flows_path)?;
    outputs.add_input("indicators", &indicators_path)?;
    outputs.put_with("panel.csv", |b| panel.write_csv(b))?;
    println!("{} panel rows, {} features", panel.len(), panel.names().len());
    ctx.commit(outputs, "panel")
}

fn load_dataset(ctx: &Context, panel_path: &Path) -> Result<SupervisedDataset, CliError> {
    let c = ctx.config();
    let panel = FeaturePanel::read_csv(open(panel_path)?).map_err(|e| CliError::from(e).context(panel_path.display()))?;
    let data = align_target(&panel, &c.panel.growth_feature, c.panel.horizon)?;
    if data.is_empty() {
        return Err(CliError::runtime(format!("{}: no rows with a target", panel_path.display())));
    }
    Ok(data)
}

/// `family,config,folds_completed,mean_rmse,status`.
fn tuning_csv(tuned: &[FamilyRace], out: &mut Vec<u8>) -> tradenet::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "config", "folds_completed", "mean_rmse", "status"])?;
    for fr in tuned {
        for (i, t) in fr.trials.iter().enumerate() {
            let status = if t.failure.is_some() {
                "failed"
            } else if t.eliminated_after.is_some() {
                "eliminated"
            } else if fr.best == Some(i) {
                "best"
            } else {
                "survived"
            };
            let mean = if t.scores.is_empty() { String::new() } else { t.mean_rmse().to_string() };
            w.write_record([fr.family.to_string(), t.spec.label(), t.scores.len().to_string(), mean, status.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn race(ctx: &Context) -> Result<PathBuf, CliError> {
    let c = ctx.config();
    let grid_path = c.paths.grid.as_ref().map(|p| ctx.loaded.resolve(p));
    let panel_path = ctx.produced(&c.paths.panel, "panel.csv");
    if let Some(p) = &grid_path {
        must_exist(p, "grid")?;
    }
    must_exist(&panel_path, "panel")?;
    let grid = match &grid_path {
        Some(p) => Grid::from_toml(&read_text(p)?).map_err(|e| CliError::from(e).context(p.display()))?,
        None => Grid::default_grid(),
    };
    grid.validate()?;
    if c.race.folds < 2 {
        return Err(CliError::usage("race.folds must be at least 2"));
    }

    let data = load_dataset(ctx, &panel_path)?;
    let assignment = match c.race.split {
        SplitKind::Kfold => selection::kfold_split(data.len(), c.race.folds, ctx.seed)?,
        SplitKind::Year => selection::year_blocked_split(&data.labels.iter().map(|l| l.1).collect::<Vec<_>>(), c.race.folds)?,
    };
    let folds = prepare_folds(&data, &assignment, &c.pipeline)?;
    let race_cfg = RaceConfig { min_resamples: c.race.min_resamples, alpha: c.race.alpha };
    let tuned = adaptive_race(&folds, &grid, &race_cfg, ctx.seed)?;
    let result = race_from_tuning(&tuned, folds.len())?;
    let winner = result.winner();

    let pipeline = fit_pipeline(&data.names, &data.kinds, &data.rows, &c.pipeline)?;
    let x = pipeline.apply(&data.rows)?;
    let model = learners::fit(&winner.spec, &x, &data.target, &pipeline.output_names(), ctx.seed)?;

    let mut outputs = ctx.outputs();
    outputs.add_input("panel", &panel_path)?;
    if let Some(p) = &grid_path {
        outputs.add_input("grid", p)?;
    }
    outputs.put_with("leaderboard.csv", |b| result.write_leaderboard(b))?;
    outputs.put_with("fold_scores.csv", |b| result.write_fold_scores(b))?;
    outputs.put_with("tuning.csv", |b| tuning_csv(&tuned, b))?;
    outputs.put("pipeline.json", pipeline.to_json()?.into_bytes());
    outputs.put("winner_model.json", model.to_json()?.into_bytes());
    println!("winner {} ({}), mean RMSE {:.4}", winner.name, winner.spec.label(), winner.summary[&selection::Metric::Rmse].mean);
    ctx.commit(outputs, "race")
}

fn dependence_features(c: &RunConfig, shap: &shapley::ShapMatrix) -> Result<Vec<String>, CliError> {
    if c.explain.dependence.is_empty() {
        if c.explain.dependence_top == 0 {
            return Ok(Vec::new());
        }
        return Ok(shapley::mean_abs_importance(shap, c.explain.dependence_top)?.into_iter().map(|i| i.feature).collect());
    }
    for f in &c.explain.dependence {
        if !shap.feature_names.contains(f) {
            return Err(CliError::usage(format!("explain.dependence: unknown feature {f:?}")));
        }
    }
    Ok(c.explain.dependence.clone())
}

pub fn explain(ctx: &Context, top_k: Option<usize>) -> Result<PathBuf, CliError> {
    let c = ctx.config();
    let model_path = ctx.produced(&c.paths.model, "winner_model.json");
    let pipeline_path = ctx.produced(&c.paths.pipeline, "pipeline.json");
    let panel_path = ctx.produced(&c.paths.panel, "panel.csv");
    must_exist(&model_path, "model")?;
    must_exist(&pipeline_path, "pipeline")?;
    must_exist(&panel_path, "panel")?;
    let top_k = top_k.unwrap_or(c.explain.top_k);
    if top_k < 1 {
        return Err(CliError::usage("top_k must be at least 1"));
    }

    let model = TrainedModel::from_json(&read_text(&model_path)?).map_err(|e| CliError::from(e).context(model_path.display()))?;
    let pipeline = FittedPipeline::from_json(&read_text(&pipeline_path)?).map_err(|e| CliError::from(e).context(pipeline_path.display()))?;
    if pipeline.output_names() != model.feature_names {
        return Err(CliError::runtime(format!(
            "model features do not match the pipeline output ({} vs {} columns)",
            model.feature_names.len(),
            pipeline.output_names().len()
        )));
    }
    let data = load_dataset(ctx, &panel_path)?;
    let x_all = pipeline.apply(&data.rows)?;
    let x: Matrix = if c.explain.observations > 0 {
        select_background(&x_all, c.explain.observations, rng::derive(ctx.seed, 1))
    } else {
        x_all.clone()
    };
    let background = select_background(&x_all, c.explain.background.max(1), rng::derive(ctx.seed, 2));
    let shap = shap_matrix(&model, &x, &background, &model.feature_names, c.explain.shap_method(), rng::derive(ctx.seed, 3))?;

    let importance = shapley::mean_abs_importance(&shap, top_k)?;
    let beeswarm = shapley::beeswarm_export(&shap, &x, top_k)?;
    let mut dependence = BTreeMap::new();
    for f in dependence_features(c, &shap)? {
        let points = shapley::dependence_export(&shap, &x, &f)?;
        dependence.insert(f, points);
    }

    let mut outputs = ctx.outputs();
    outputs.add_input("model", &model_path)?;
    outputs.add_input("pipeline", &pipeline_path)?;
    outputs.add_input("panel", &panel_path)?;
    outputs.put_with("importance.csv", |b| shapley::write_importance(&importance, model.family.name(), b))?;
    outputs.put_with("beeswarm.csv", |b| shapley::write_beeswarm(&beeswarm, b))?;
    let mut dep = Vec::new();
    for (i, (f, points)) in dependence.iter().enumerate() {
        let mut part = Vec::new();
        shapley::write_dependence(f, points, &mut part)?;
        // one header for the concatenated file
        let body = if i == 0 { &part[..] } else { &part[part.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..] };
        dep.extend_from_slice(body);
    }
    if dep.is_empty() {
        shapley::write_dependence("", &[], &mut dep)?;
    }
    outputs.put("dependence.csv", dep);
    println!("explained {} observations of {} features", x.nrows(), x.ncols());
    ctx.commit(outputs, "explain")
}
