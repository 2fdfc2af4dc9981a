//! Dataset files: one CSV holding all three splits plus a key=value sidecar
//! carrying the metadata a CSV cannot (problem id, seed, noise level).
//!
//! Columns are x1..xp, y1..yq, role. Floats are written with 17 significant
//! digits so a load reproduces the saved values bitwise. Writes stage into a
//! temporary sibling and rename, so a failed save leaves no partial file.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::problems::{Dataset, Role};

/// A dataset triple with the provenance needed to rebuild or verify it.
#[derive(Debug, Clone)]
pub struct StoredDataset {
    pub problem_id: u8,
    pub seed: u64,
    pub noise_level: f64,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    path.with_file_name(name)
}

pub(crate) fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(content.as_bytes())?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_dataset(path: &Path, stored: &StoredDataset) -> Result<()> {
    let p = stored.train.x.ncols();
    let q = stored.train.y.ncols();
    let mut csv_text = String::new();
    for c in 0..p {
        csv_text.push_str(&format!("x{},", c + 1));
    }
    for c in 0..q {
        csv_text.push_str(&format!("y{},", c + 1));
    }
    csv_text.push_str("role\n");
    for split in [&stored.train, &stored.val, &stored.test] {
        for i in 0..split.x.nrows() {
            for c in 0..p {
                csv_text.push_str(&format!("{:.16e},", split.x[[i, c]]));
            }
            for c in 0..q {
                csv_text.push_str(&format!("{:.16e},", split.y[[i, c]]));
            }
            csv_text.push_str(split.role.as_str());
            csv_text.push('\n');
        }
    }
    write_atomic(path, &csv_text)?;

    let meta = format!(
        "problem_id={}\nseed={}\nnoise_level={:.16e}\ninput_dim={p}\noutput_dim={q}\n",
        stored.problem_id, stored.seed, stored.noise_level
    );
    write_atomic(&meta_path(path), &meta)
}

fn parse_error(path: &Path, line: usize, field: &str, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    }
}

fn read_meta(path: &Path) -> Result<(u8, u64, f64, usize, usize)> {
    let meta_file = meta_path(path);
    let reader = BufReader::new(fs::File::open(&meta_file)?);
    let mut problem_id = None;
    let mut seed = None;
    let mut noise_level = None;
    let mut input_dim = None;
    let mut output_dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_error(&meta_file, i + 1, "line", "expected key=value".into()))?;
        let bad = |what: &str| parse_error(&meta_file, i + 1, key, format!("bad {what}: {value}"));
        match key {
            "problem_id" => problem_id = Some(value.parse::<u8>().map_err(|_| bad("integer"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("integer"))?),
            "noise_level" => noise_level = Some(value.parse::<f64>().map_err(|_| bad("float"))?),
            "input_dim" => input_dim = Some(value.parse::<usize>().map_err(|_| bad("integer"))?),
            "output_dim" => output_dim = Some(value.parse::<usize>().map_err(|_| bad("integer"))?),
            _ => {}
        }
    }
    let need = |name: &str, v: Option<()>| {
        v.ok_or_else(|| parse_error(&meta_file, 0, name, "missing entry".into()))
    };
    need("problem_id", problem_id.map(|_| ()))?;
    need("seed", seed.map(|_| ()))?;
    need("noise_level", noise_level.map(|_| ()))?;
    need("input_dim", input_dim.map(|_| ()))?;
    need("output_dim", output_dim.map(|_| ()))?;
    Ok((
        problem_id.unwrap(),
        seed.unwrap(),
        noise_level.unwrap(),
        input_dim.unwrap(),
        output_dim.unwrap(),
    ))
}

pub fn load_dataset(path: &Path) -> Result<StoredDataset> {
    let (problem_id, seed, noise_level, p, q) = read_meta(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_error(path, 1, "csv", e.to_string()))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| parse_error(path, 1, "header", e.to_string()))?;
        let mut expected: Vec<String> = (1..=p).map(|c| format!("x{c}")).collect();
        expected.extend((1..=q).map(|c| format!("y{c}")));
        expected.push("role".to_string());
        let got: Vec<String> = headers.iter().map(str::to_string).collect();
        if got != expected {
            return Err(parse_error(
                path,
                1,
                "header",
                format!("expected columns {}, got {}", expected.join(","), got.join(",")),
            ));
        }
    }
    let mut rows: Vec<(Vec<f64>, Vec<f64>, Role)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(path, 0, "row", e.to_string()))?;
        let line = record.position().map(|pos| pos.line() as usize).unwrap_or(0);
        if record.len() != p + q + 1 {
            return Err(parse_error(
                path,
                line,
                "row",
                format!("expected {} fields, got {}", p + q + 1, record.len()),
            ));
        }
        let parse_f64 = |idx: usize, field: String| -> Result<f64> {
            record[idx]
                .parse::<f64>()
                .map_err(|_| parse_error(path, line, &field, format!("bad float: {}", &record[idx])))
        };
        let x: Vec<f64> = (0..p)
            .map(|c| parse_f64(c, format!("x{}", c + 1)))
            .collect::<Result<_>>()?;
        let y: Vec<f64> = (0..q)
            .map(|c| parse_f64(p + c, format!("y{}", c + 1)))
            .collect::<Result<_>>()?;
        let role = match &record[p + q] {
            "train_anchor" => Role::TrainAnchor,
            "validation" => Role::Validation,
            "test" => Role::Test,
            other => {
                return Err(parse_error(
                    path,
                    line,
                    "role",
                    format!("unknown role: {other}"),
                ))
            }
        };
        rows.push((x, y, role));
    }

    let build = |role: Role| -> Result<Dataset> {
        let selected: Vec<&(Vec<f64>, Vec<f64>, Role)> =
            rows.iter().filter(|r| r.2 == role).collect();
        if selected.is_empty() {
            return Err(parse_error(
                path,
                0,
                "role",
                format!("no rows with role {}", role.as_str()),
            ));
        }
        let n = selected.len();
        let mut x = Array2::zeros((n, p));
        let mut y = Array2::zeros((n, q));
        for (i, row) in selected.iter().enumerate() {
            for c in 0..p {
                x[[i, c]] = row.0[c];
            }
            for c in 0..q {
                y[[i, c]] = row.1[c];
            }
        }
        Ok(Dataset { x, y, role, seed })
    };

    Ok(StoredDataset {
        problem_id,
        seed,
        noise_level,
        train: build(Role::TrainAnchor)?,
        val: build(Role::Validation)?,
        test: build(Role::Test)?,
    })
}
