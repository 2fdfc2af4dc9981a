//! Text serialization of trained models.
//!
//! The format is line-oriented and self-describing. Floats are written with
//! 17 significant digits, which round-trips every 64-bit value exactly:
//!
//! ```text
//! mlp-text v1
//! layer_sizes 1 640 640 1
//! activation relu
//! weight 0 640 1
//! <one row per line, space-separated>
//! bias 0 640
//! <one line>
//! ...
//! end
//! ```

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use super::MlpModel;
use crate::error::{Error, Result};

const MAGIC: &str = "mlp-text v1";

/// Writes the model to `path` (staged through a sibling temp file, so an
/// interrupted save never leaves a half-written model at the target).
pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let tmp = staging_path(path);
    {
        let file = fs::File::create(&tmp)?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{MAGIC}")?;
        write!(out, "layer_sizes")?;
        for s in &model.layer_sizes {
            write!(out, " {s}")?;
        }
        writeln!(out)?;
        writeln!(out, "activation relu")?;
        for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
            writeln!(out, "weight {l} {} {}", w.nrows(), w.ncols())?;
            for row in w.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
            writeln!(out, "bias {l} {}", b.len())?;
            let line: Vec<String> = b.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        writeln!(out, "end")?;
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

struct LineReader {
    path: PathBuf,
    lines: Vec<String>,
    cursor: usize,
}

impl LineReader {
    fn next(&mut self, field: &str) -> Result<(usize, String)> {
        if self.cursor >= self.lines.len() {
            return Err(self.err(self.cursor + 1, field, "unexpected end of file"));
        }
        self.cursor += 1;
        Ok((self.cursor, self.lines[self.cursor - 1].clone()))
    }

    fn err(&self, line: usize, field: &str, message: &str) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

fn parse_floats(reader: &LineReader, line_no: usize, line: &str, field: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = line
        .split_ascii_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| reader.err(line_no, field, &format!("not a float: `{tok}`")))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(reader.err(
            line_no,
            field,
            &format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

/// Loads a model written by [`save_model`]. Malformed input reports the line
/// and field; no partially built model escapes.
pub fn load_model(path: &Path) -> Result<MlpModel> {
    let text = fs::read_to_string(path)?;
    let mut reader = LineReader {
        path: path.to_path_buf(),
        lines: text.lines().map(str::to_string).collect(),
        cursor: 0,
    };

    let (no, magic) = reader.next("magic")?;
    if magic.trim() != MAGIC {
        return Err(reader.err(no, "magic", &format!("expected `{MAGIC}`, found `{magic}`")));
    }

    let (no, header) = reader.next("layer_sizes")?;
    let mut toks = header.split_ascii_whitespace();
    if toks.next() != Some("layer_sizes") {
        return Err(reader.err(no, "layer_sizes", "missing `layer_sizes` header"));
    }
    let layer_sizes: Vec<usize> = toks
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| reader.err(no, "layer_sizes", &format!("not an integer: `{t}`")))
        })
        .collect::<Result<_>>()?;
    if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
        return Err(reader.err(no, "layer_sizes", "need at least two positive sizes"));
    }

    let (no, act) = reader.next("activation")?;
    if act.trim() != "activation relu" {
        return Err(reader.err(no, "activation", &format!("unsupported: `{act}`")));
    }

    let layer_count = layer_sizes.len() - 1;
    let mut weights = Vec::with_capacity(layer_count);
    let mut biases = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let field = format!("weight {l}");
        let (no, header) = reader.next(&field)?;
        let expect = format!("weight {l} {} {}", layer_sizes[l + 1], layer_sizes[l]);
        if header.trim() != expect {
            return Err(reader.err(no, &field, &format!("expected `{expect}`, found `{header}`")));
        }
        let mut flat = Vec::with_capacity(layer_sizes[l + 1] * layer_sizes[l]);
        for r in 0..layer_sizes[l + 1] {
            let row_field = format!("weight {l} row {r}");
            let (no, line) = reader.next(&row_field)?;
            flat.extend(parse_floats(&reader, no, &line, &row_field, layer_sizes[l])?);
        }
        let w = Array2::from_shape_vec((layer_sizes[l + 1], layer_sizes[l]), flat)
            .expect("dimensions were checked per row");
        weights.push(w);

        let field = format!("bias {l}");
        let (no, header) = reader.next(&field)?;
        let expect = format!("bias {l} {}", layer_sizes[l + 1]);
        if header.trim() != expect {
            return Err(reader.err(no, &field, &format!("expected `{expect}`, found `{header}`")));
        }
        let (no, line) = reader.next(&field)?;
        let values = parse_floats(&reader, no, &line, &field, layer_sizes[l + 1])?;
        biases.push(Array1::from_vec(values));
    }

    let (no, tail) = reader.next("end")?;
    if tail.trim() != "end" {
        return Err(reader.err(no, "end", &format!("expected `end`, found `{tail}`")));
    }

    Ok(MlpModel {
        layer_sizes,
        weights,
        biases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_forward, mlp_init};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let model = mlp_init(&[3, 10, 7, 2], 31).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = Array2::from_shape_fn((100, 3), |_| rng.gen_range(-10.0..10.0));
        let a = mlp_forward(&model, inputs.view()).unwrap();
        let b = mlp_forward(&loaded, inputs.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let model = mlp_init(&[2, 6, 1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut = text.len() / 2;
        fs::write(&path, &text[..cut]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got {err:?}");
    }

    #[test]
    fn corrupt_float_reports_line_and_field() {
        let model = mlp_init(&[1, 2, 1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let bad = text.replacen("e0", "eXX", 1);
        fs::write(&path, bad).unwrap();
        match load_model(&path).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert!(line > 0);
                assert!(field.contains("weight") || field.contains("bias"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn loaded_model_accepts_recorded_input_width() {
        let model = mlp_init(&[2, 4, 4, 2], 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.layer_sizes, vec![2, 4, 4, 2]);
        let probe = Array2::zeros((1, 2));
        assert!(mlp_forward(&loaded, probe.view()).is_ok());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        fs::write(&path, "something else\n").unwrap();
        let err = load_model(&path).unwrap_err();
        match err {
            Error::Parse { field, .. } => assert_eq!(field, "magic"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
