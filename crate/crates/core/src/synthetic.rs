//! Seeded fixture generators: a nonlinear regression benchmark, bilateral
//! trade records with dual reporting, and a country-year indicator panel.

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::ingest::{CountryCode, Direction, FlowClass, Section, TradeRecord, YearMonth};
use crate::panel::{FeatureKind, FeaturePanel, SupervisedDataset, Value, YEAR_FEATURE};
use crate::rng;

pub const SIGNAL_FEATURES: usize = 10;

/// `n` rows of standard-normal features `x00..`, the first ten of which
/// drive the target through thresholds, interactions and smooth
/// nonlinearities; the rest are noise. Target noise has sd 0.5.
pub fn nonlinear_benchmark(n: usize, n_noise: usize, seed: u64) -> Result<SupervisedDataset> {
    let p = SIGNAL_FEATURES + n_noise;
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid sd");
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut r)).collect();
        let step = |v: f64, t: f64| if v > t { 1.0 } else { 0.0 };
        let target = 3.0 * step(x[0], 0.5) - 2.0 * step(-x[1], 0.3)
            + 2.0 * x[2] * x[3]
            + 2.5 * step(x[4], 0.0) * x[5]
            + (2.0 * x[6]).sin()
            + 0.8 * x[7]
            + 0.5 * x[8] * x[8]
            + 1.5 * step(x[9], -0.5) * step(x[0], -0.5)
            + noise.sample(&mut r);
        rows.push(x);
        y.push(target);
    }
    let names = (0..p).map(|j| format!("x{j:02}")).collect();
    SupervisedDataset::from_numeric(names, rows, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeFixture {
    pub countries: usize,
    pub sections: Vec<u8>,
    /// Relative size of each section's flows, aligned with `sections`.
    pub section_scale: Vec<f64>,
    pub first_year: i32,
    pub years: usize,
    /// Probability that a directed pair trades in a section at all.
    pub link_probability: f64,
    /// Relative disagreement between the two reports of one flow.
    pub report_noise: f64,
    /// Probability that only one side reports a flow.
    pub single_report: f64,
    /// Probability of an extra re-export record per flow.
    pub re_export: f64,
}

impl Default for TradeFixture {
    fn default() -> Self {
        Self {
            countries: 20,
            sections: vec![16, 5],
            section_scale: vec![2.0, 1.0],
            first_year: 2010,
            years: 2,
            link_probability: 0.3,
            report_noise: 0.1,
            single_report: 0.1,
            re_export: 0.02,
        }
    }
}

pub fn country_codes(n: usize) -> Vec<CountryCode> {
    (0..n).map(|i| CountryCode::new(&format!("C{i:02}")).expect("valid code")).collect()
}

/// Monthly records for every active (section, pair). Each flow is reported
/// as an export by its origin and as an import by its destination, the two
/// values disagreeing by up to `report_noise`.
pub fn trade_records(fx: &TradeFixture, seed: u64) -> Result<Vec<TradeRecord>> {
    if fx.sections.len() != fx.section_scale.len() {
        return Err(Error::invalid("sections and section_scale differ in length"));
    }
    if fx.countries > 100 {
        return Err(Error::invalid("at most 100 synthetic countries"));
    }
    let mut r = rng::seeded(seed);
    let codes = country_codes(fx.countries);
    let size = LogNormal::new(0.0, 1.0).expect("valid");
    let jitter = LogNormal::new(0.0, 0.2).expect("valid");
    let mass: Vec<f64> = codes.iter().map(|_| size.sample(&mut r)).collect();
    let mut out = Vec::new();
    for (&code, &scale) in fx.sections.iter().zip(&fx.section_scale) {
        let section = Section::new(code)?;
        let mut links = Vec::new();
        for o in 0..fx.countries {
            for d in 0..fx.countries {
                if o != d && r.gen_bool(fx.link_probability) {
                    links.push((o, d, scale * mass[o] * mass[d] * size.sample(&mut r)));
                }
            }
        }
        for y in 0..fx.years {
            for month in 1..=12u8 {
                let period = YearMonth::new(fx.first_year + y as i32, month)?;
                for &(o, d, base) in &links {
                    if !r.gen_bool(0.9) {
                        continue;
                    }
                    let v = 1000.0 * base * jitter.sample(&mut r);
                    let single = r.gen_bool(fx.single_report);
                    let keep_export = !single || r.gen_bool(0.5);
                    let rec = |reporter: usize, partner: usize, direction, class, value: f64| TradeRecord {
                        reporter: codes[reporter].clone(),
                        partner: codes[partner].clone(),
                        direction,
                        section,
                        period,
                        value: value.round().max(1.0),
                        flow_class: class,
                    };
                    let noisy = |r: &mut rng::Rng| v * (1.0 + fx.report_noise * r.gen_range(-1.0..1.0));
                    if keep_export {
                        let value = noisy(&mut r);
                        out.push(rec(o, d, Direction::Export, FlowClass::Normal, value));
                    }
                    if !single || !keep_export {
                        let value = noisy(&mut r);
                        out.push(rec(d, o, Direction::Import, FlowClass::Normal, value));
                    }
                    if r.gen_bool(fx.re_export) {
                        out.push(rec(o, d, Direction::Export, FlowClass::ReExport, 0.1 * v));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Country-year indicators `gdp_growth`, `inflation`, `investment`,
/// `trade_openness` and `year`. Growth follows last year's growth,
/// investment and inflation plus noise, so lagged indicators carry signal.
pub fn indicator_panel(countries: &[CountryCode], first_year: i32, years: usize, seed: u64) -> Result<FeaturePanel> {
    let names = ["gdp_growth", "inflation", "investment", "trade_openness", YEAR_FEATURE];
    let mut panel = FeaturePanel::new(names.iter().map(|s| s.to_string()).collect(), vec![FeatureKind::Numeric; names.len()])?;
    let mut r = rng::seeded(seed);
    let n01 = StandardNormal;
    for c in countries {
        let trend: f64 = 2.0 + Distribution::<f64>::sample(&n01, &mut r);
        let openness: f64 = 40.0 + 15.0 * Distribution::<f64>::sample(&n01, &mut r);
        let mut growth = trend;
        let mut inflation = 3.0;
        let mut investment = 22.0;
        for y in 0..years {
            let e: [f64; 4] = std::array::from_fn(|_| n01.sample(&mut r));
            let next_growth = 0.5 * trend + 0.3 * growth + 0.15 * (investment - 22.0) - 0.2 * (inflation - 3.0) + 0.8 * e[0];
            inflation = (2.0 + 0.5 * (inflation - 2.0) + 0.3 * growth.max(0.0) + e[1]).max(-1.0);
            investment = 22.0 + 0.6 * (investment - 22.0) + 1.5 * e[2];
            growth = next_growth;
            let year = first_year + y as i32;
            panel.insert(
                c.clone(),
                year,
                vec![
                    Value::Num(growth),
                    Value::Num(inflation),
                    Value::Num(investment),
                    Value::Num(openness + 2.0 * e[3]),
                    Value::Num(year as f64),
                ],
            )?;
        }
    }
    Ok(panel)
}
