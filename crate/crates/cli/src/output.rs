//! CSV output with run metadata on every row.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};

pub const BUILD_ID: &str = env!("TINBC_BUILD_ID");

/// Columns that lead every row.
pub const META_COLUMNS: [&str; 3] = ["build_id", "seed", "samples"];

pub struct RunMeta {
    pub seed: u64,
    pub samples: usize,
}

pub struct Table {
    writer: csv::Writer<BufWriter<File>>,
    meta: [String; 3],
    width: usize,
}

impl Table {
    pub fn create(path: &Path, meta: &RunMeta, columns: &[String]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        let header: Vec<&str> = META_COLUMNS.iter().copied().chain(columns.iter().map(String::as_str)).collect();
        writer.write_record(&header)?;
        Ok(Table {
            writer,
            meta: [BUILD_ID.to_string(), meta.seed.to_string(), meta.samples.to_string()],
            width: columns.len(),
        })
    }

    pub fn row(&mut self, cells: Vec<String>) -> Result<()> {
        anyhow::ensure!(cells.len() == self.width, "row has {} cells, header has {}", cells.len(), self.width);
        self.writer.write_record(self.meta.iter().chain(cells.iter()))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Shortest round-trip form; non-finite values become empty cells.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

pub fn join_num(xs: &[f64], sep: &str) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(sep)
}

pub fn indexed(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}
