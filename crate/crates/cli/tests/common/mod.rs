#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tradenet::ingest::write_records;
use tradenet::synthetic::{country_codes, indicator_panel, trade_records, TradeFixture};

/// A small grid that races in seconds.
pub const FAST_GRID: &str = r#"
[[model]]
family = "ols"

[[model]]
family = "knn"
neighbors = [3, 7]

[[model]]
family = "rforest"
n_trees = 40
min_node_size = 3

[[model]]
family = "gbt_leaf"
n_trees = 40
max_leaves = [4, 8]
"#;

pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().expect("tempdir") }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write(&self, rel: &str, content: impl AsRef<[u8]>) -> PathBuf {
        let p = self.path(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, content).unwrap();
        p
    }

    pub fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    /// Runs the binary inside the workspace.
    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_tradenet")).args(args).current_dir(self.dir.path()).output().expect("spawn tradenet")
    }

    pub fn run_ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "tradenet {args:?} failed ({:?}):\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    /// Synthetic records and indicators for `fx`.
    pub fn synthetic_inputs(&self, fx: &TradeFixture, seed: u64) {
        let recs = trade_records(fx, seed).unwrap();
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        self.write("records.csv", buf);
        let panel = indicator_panel(&country_codes(fx.countries), fx.first_year, fx.years, seed + 1).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        self.write("indicators.csv", buf);
    }
}

/// Every file under `root` (relative path -> bytes).
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

/// Config for the synthetic pipeline: two sections, fast grid, five folds.
pub fn pipeline_config(seed: u64) -> String {
    format!(
        r#"seed = {seed}

[paths]
records = "records.csv"
indicators = "indicators.csv"
grid = "grid.toml"
output = "out"

[networks]
granularity = "annual"

[panel]
sections = [16, 5]

[race]
folds = 5
min_resamples = 3

[explain]
top_k = 8
permutations = 16
background = 20
observations = 30
"#
    )
}
