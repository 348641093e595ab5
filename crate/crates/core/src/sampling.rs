//! Simulated samples from a solved population, and the `z,y` CSV format
//! shared with real data.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcspace::ModelSpec;
use crate::population::PopulationSolution;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleMeta {
    pub n: usize,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    pub model_hash: Option<String>,
    pub r: Option<f64>,
    pub grid_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub meta: SampleMeta,
}

/// Generator for replication `stream` of an experiment seeded with `seed`.
pub fn replication_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn draw_sample(sol: &PopulationSolution, model: &ModelSpec, n: usize, seed: u64) -> Sample {
    draw_sample_stream(sol, model, n, seed, 0)
}

/// `Z ~ U[-1, 1]`, `Y = y(Z) + sigma(Z) * N(0, 1)`.
pub fn draw_sample_stream(
    sol: &PopulationSolution,
    model: &ModelSpec,
    n: usize,
    seed: u64,
    stream: u64,
) -> Sample {
    let mut rng = replication_rng(seed, stream);
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let zi: f64 = rng.random_range(-1.0..=1.0);
        let e: f64 = rng.sample(StandardNormal);
        z.push(zi);
        y.push(sol.y_at(zi) + model.noise_sd.value(zi) * e);
    }
    Sample {
        z,
        y,
        meta: SampleMeta {
            n,
            seed: Some(seed),
            stream: Some(stream),
            model_hash: Some(sol.model_hash.clone()),
            r: Some(sol.r),
            grid_n: Some(sol.grid_n()),
        },
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("malformed data at row {row}, column {column}: {message}")]
    Field { row: usize, column: String, message: String },
    #[error("malformed data: {0}")]
    Format(String),
}

impl Sample {
    pub fn from_columns(z: Vec<f64>, y: Vec<f64>) -> Sample {
        assert_eq!(z.len(), y.len(), "z and y must have equal length");
        let meta = SampleMeta { n: z.len(), ..SampleMeta::default() };
        Sample { z, y, meta }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Writes `z,y` rows with shortest round-trip float formatting, so a
    /// re-read sample is bit-identical.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "z,y")?;
        for (z, y) in self.z.iter().zip(&self.y) {
            writeln!(w, "{z},{y}")?;
        }
        Ok(())
    }

    /// Reads a `z,y` CSV. Rows are numbered from 1 after the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Sample, DataError> {
        Sample::read_csv_mapped(reader, |z| z)
    }

    /// As `read_csv`, transforming each `z` by `map` before the range check.
    pub fn read_csv_mapped<R: Read, F: Fn(f64) -> f64>(reader: R, map: F) -> Result<Sample, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| DataError::Format(e.to_string()))?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["z", "y"] {
            return Err(DataError::Format(format!("expected header `z,y`, found `{}`", names.join(","))));
        }
        let mut z = Vec::new();
        let mut y = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| DataError::Field {
                row,
                column: "-".into(),
                message: e.to_string(),
            })?;
            let parse = |col: usize, name: &str| -> Result<f64, DataError> {
                let raw = rec.get(col).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| DataError::Field {
                    row,
                    column: name.into(),
                    message: format!("`{raw}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Field { row, column: name.into(), message: "value is not finite".into() });
                }
                Ok(v)
            };
            let zi = map(parse(0, "z")?);
            if !(-1.0..=1.0).contains(&zi) {
                return Err(DataError::Field {
                    row,
                    column: "z".into(),
                    message: format!("{zi} lies outside [-1, 1]; rescale so the cutoff is 0"),
                });
            }
            z.push(zi);
            y.push(parse(1, "y")?);
        }
        Ok(Sample::from_columns(z, y))
    }
}
