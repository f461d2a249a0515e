//! Text serialization for tensors, factors, models, and result tables.
//!
//! Tensors use a one-line header `F T N` followed by F*T*N values in storage
//! order (frequency fastest, then slot, then day); the writer puts one day
//! slice per line but the reader accepts any whitespace layout. Masks use
//! the same shape with 0/1 tokens. Matrices use a `rows cols` header and one
//! row per line. Factor sets carry an `F T N R` header and the three
//! matrices labeled A, B, C. Values print in Rust's shortest round-trip
//! form, so write-then-read reproduces every f64 bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::completion::CompletionRecord;
use crate::cp::FactorSet;
use crate::detect::RocCurve;
use crate::error::{Error, Result};
use crate::lstm::LstmModel;
use crate::synth::Scenario;
use crate::tensor::{Mat, MaskTensor3, Tensor3};

pub fn write_tensor(w: &mut impl Write, x: &Tensor3) -> Result<()> {
    let (f, t, n) = x.dims();
    writeln!(w, "{f} {t} {n}")?;
    for day in 0..n {
        let slice = &x.data()[f * t * day..f * t * (day + 1)];
        write_row(w, slice.iter().copied())?;
    }
    Ok(())
}

pub fn read_tensor(r: impl Read) -> Result<Tensor3> {
    let mut tokens = Tokens::new(r);
    let dims = tokens.dims3()?;
    let needed = dims.0 * dims.1 * dims.2;
    let mut data = Vec::with_capacity(needed);
    for _ in 0..needed {
        data.push(tokens.f64()?);
    }
    tokens.expect_end()?;
    Tensor3::new(dims, data)
}

pub fn write_mask(w: &mut impl Write, m: &MaskTensor3) -> Result<()> {
    let (f, t, n) = m.dims();
    writeln!(w, "{f} {t} {n}")?;
    for day in 0..n {
        let slice = &m.bits()[f * t * day..f * t * (day + 1)];
        write_row(w, slice.iter().map(|&b| if b { 1.0 } else { 0.0 }))?;
    }
    Ok(())
}

pub fn read_mask(r: impl Read) -> Result<MaskTensor3> {
    let mut tokens = Tokens::new(r);
    let dims = tokens.dims3()?;
    let needed = dims.0 * dims.1 * dims.2;
    let mut bits = Vec::with_capacity(needed);
    for _ in 0..needed {
        bits.push(tokens.bit()?);
    }
    tokens.expect_end()?;
    MaskTensor3::new(dims, bits)
}

pub fn write_matrix(w: &mut impl Write, m: &Mat) -> Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        write_row(w, m.row(i).iter().copied())?;
    }
    Ok(())
}

pub fn read_matrix(r: impl Read) -> Result<Mat> {
    let mut tokens = Tokens::new(r);
    let (rows, cols) = tokens.dims2()?;
    let m = read_matrix_body(&mut tokens, rows, cols)?;
    tokens.expect_end()?;
    Ok(m)
}

pub fn write_factors(w: &mut impl Write, fs: &FactorSet) -> Result<()> {
    let (f, t, n) = fs.dims();
    writeln!(w, "{f} {t} {n} {}", fs.rank())?;
    for (label, m) in [("A", fs.a()), ("B", fs.b()), ("C", fs.c())] {
        writeln!(w, "{label}")?;
        for i in 0..m.nrows() {
            write_row(w, m.row(i).iter().copied())?;
        }
    }
    Ok(())
}

pub fn read_factors(r: impl Read) -> Result<FactorSet> {
    let mut tokens = Tokens::new(r);
    let (f, t, n, rank) = tokens.dims4()?;
    let mut mats = Vec::with_capacity(3);
    for (label, rows) in [("A", f), ("B", t), ("C", n)] {
        tokens.expect_label(label)?;
        mats.push(read_matrix_body(&mut tokens, rows, rank)?);
    }
    tokens.expect_end()?;
    let c = mats.pop().unwrap();
    let b = mats.pop().unwrap();
    let a = mats.pop().unwrap();
    FactorSet::new(a, b, c)
}

/// CSV of the completion error history. The hidden-error column is blank
/// when no ground truth was supplied.
pub fn write_history_csv(w: &mut impl Write, history: &[CompletionRecord]) -> Result<()> {
    writeln!(w, "iteration,observed_error,hidden_error")?;
    for rec in history {
        match rec.hidden_error {
            Some(h) => writeln!(w, "{},{},{}", rec.iteration, rec.observed_error, h)?,
            None => writeln!(w, "{},{},", rec.iteration, rec.observed_error)?,
        }
    }
    Ok(())
}

/// CSV of fit error against decomposition rank.
pub fn write_rank_sweep_csv(w: &mut impl Write, sweep: &[(usize, f64)]) -> Result<()> {
    writeln!(w, "rank,e_cpd")?;
    for (rank, err) in sweep {
        writeln!(w, "{rank},{err}")?;
    }
    Ok(())
}

/// CSV of ROC operating points, threshold first.
pub fn write_roc_csv(w: &mut impl Write, curve: &RocCurve) -> Result<()> {
    writeln!(w, "gamma,p_f,p_d")?;
    for p in curve.points() {
        writeln!(w, "{},{},{}", p.gamma, p.p_f, p.p_d)?;
    }
    Ok(())
}

/// One row of the method-comparison table: a predictor/mode pairing with
/// its timings and error.
#[derive(Clone, Debug, serde::Serialize)]
pub struct MethodRow {
    pub method: String,
    pub cpd_time: f64,
    pub learning_time: f64,
    pub total_time: f64,
    pub error_percent: f64,
}

pub fn write_table_csv(w: &mut impl Write, rows: &[MethodRow]) -> Result<()> {
    writeln!(w, "method,cpd_time,learning_time,total_time,error_percent")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method, r.cpd_time, r.learning_time, r.total_time, r.error_percent
        )?;
    }
    Ok(())
}

pub fn save_tensor(path: impl AsRef<Path>, x: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, x)?;
    Ok(w.flush()?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn save_mask(path: impl AsRef<Path>, m: &MaskTensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mask(&mut w, m)?;
    Ok(w.flush()?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskTensor3> {
    read_mask(BufReader::new(File::open(path)?))
}

pub fn save_factors(path: impl AsRef<Path>, fs: &FactorSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_factors(&mut w, fs)?;
    Ok(w.flush()?)
}

pub fn load_factors(path: impl AsRef<Path>) -> Result<FactorSet> {
    read_factors(BufReader::new(File::open(path)?))
}

/// JSON weight dump. Reading it back restores the model exactly, so saved
/// models forecast bit-identically.
pub fn save_lstm_model(path: impl AsRef<Path>, model: &LstmModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, model)
        .map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
    Ok(w.flush()?)
}

pub fn load_lstm_model(path: impl AsRef<Path>) -> Result<LstmModel> {
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Scenario config in TOML. Missing keys take their defaults, so a partial
/// file (or an empty one) is valid.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let s: Scenario = toml::from_str(&text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(&text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

pub fn save_scenario(path: impl AsRef<Path>, s: &Scenario) -> Result<()> {
    let text = toml::to_string_pretty(s).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    Ok(w.flush()?)
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn write_row(w: &mut impl Write, vals: impl Iterator<Item = f64>) -> Result<()> {
    let mut first = true;
    for v in vals {
        if first {
            first = false;
        } else {
            w.write_all(b" ")?;
        }
        write!(w, "{v}")?;
    }
    w.write_all(b"\n")?;
    Ok(())
}

fn read_matrix_body(tokens: &mut Tokens, rows: usize, cols: usize) -> Result<Mat> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(tokens.f64()?);
    }
    // Tokens arrive row by row; the matrix stores columns.
    Ok(Mat::from_fn(rows, cols, |i, j| data[i * cols + j]))
}

/// Whitespace tokenizer that tracks line numbers for error messages.
struct Tokens {
    items: std::vec::IntoIter<(usize, String)>,
    line: usize,
}

impl Tokens {
    fn new(r: impl Read) -> Self {
        let reader = BufReader::new(r);
        let mut items = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = match line {
                Ok(l) => l,
                Err(_) => break,
            };
            for tok in line.split_whitespace() {
                items.push((i + 1, tok.to_string()));
            }
        }
        Tokens {
            items: items.into_iter(),
            line: 1,
        }
    }

    fn next_token(&mut self) -> Result<String> {
        match self.items.next() {
            Some((line, tok)) => {
                self.line = line;
                Ok(tok)
            }
            None => Err(Error::Parse {
                line: self.line,
                msg: "unexpected end of input".into(),
            }),
        }
    }

    fn usize(&mut self) -> Result<usize> {
        let tok = self.next_token()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            msg: format!("expected a count, found {tok:?}"),
        })
    }

    fn f64(&mut self) -> Result<f64> {
        let tok = self.next_token()?;
        tok.parse().map_err(|_| Error::Parse {
            line: self.line,
            msg: format!("expected a number, found {tok:?}"),
        })
    }

    fn bit(&mut self) -> Result<bool> {
        let tok = self.next_token()?;
        match tok.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(Error::Parse {
                line: self.line,
                msg: format!("expected 0 or 1, found {tok:?}"),
            }),
        }
    }

    fn dims2(&mut self) -> Result<(usize, usize)> {
        Ok((self.usize()?, self.usize()?))
    }

    fn dims3(&mut self) -> Result<(usize, usize, usize)> {
        Ok((self.usize()?, self.usize()?, self.usize()?))
    }

    fn dims4(&mut self) -> Result<(usize, usize, usize, usize)> {
        Ok((self.usize()?, self.usize()?, self.usize()?, self.usize()?))
    }

    fn expect_label(&mut self, label: &str) -> Result<()> {
        let tok = self.next_token()?;
        if tok == label {
            Ok(())
        } else {
            Err(Error::Parse {
                line: self.line,
                msg: format!("expected block {label:?}, found {tok:?}"),
            })
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        if let Some((line, tok)) = self.items.next() {
            return Err(Error::Parse {
                line,
                msg: format!("trailing content starting at {tok:?}"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::CompletionRecord;
    use crate::detect::roc;
    use crate::lstm::{forecast, train_lstm, TrainConfig};
    use crate::tensor::BoolTensor3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Mix magnitudes so shortest-representation printing gets exercised.
        Tensor3::from_fn(dims, |_, _, _| {
            (rng.random::<f64>() - 0.5) * 10f64.powi(rng.random_range(-8..8))
        })
        .unwrap()
    }

    #[test]
    fn tensor_round_trip_is_exact() {
        let x = random_tensor((4, 5, 6), 1);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &x).unwrap();
        let back = read_tensor(&buf[..]).unwrap();
        assert_eq!(back.dims(), x.dims());
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn tensor_header_and_layout() {
        let x = Tensor3::new((2, 2, 2), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &x).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "2 2 2\n1 2 3 4\n5 6 7 8\n");
    }

    #[test]
    fn reader_accepts_arbitrary_whitespace() {
        let text = "2 1 2\n\n  1.5\t2.5\n3.5   4.5  ";
        let x = read_tensor(text.as_bytes()).unwrap();
        assert_eq!(x.data(), &[1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn mask_round_trip_and_format() {
        let m = BoolTensor3::new((2, 1, 2), vec![true, false, false, true]).unwrap();
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "2 1 2\n1 0\n0 1\n");
        let back = read_mask(&buf[..]).unwrap();
        assert_eq!(back.bits(), m.bits());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mat::from_fn(7, 3, |_, _| rng.random::<f64>() * 1e-7);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let back = read_matrix(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn factor_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fs = FactorSet::new(
            Mat::from_fn(4, 2, |_, _| rng.random::<f64>()),
            Mat::from_fn(5, 2, |_, _| rng.random::<f64>()),
            Mat::from_fn(3, 2, |_, _| rng.random::<f64>()),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_factors(&mut buf, &fs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("4 5 3 2\nA\n"));
        let back = read_factors(&buf[..]).unwrap();
        assert_eq!(back.a(), fs.a());
        assert_eq!(back.b(), fs.b());
        assert_eq!(back.c(), fs.c());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_header = "2 x 2\n1 2 3 4";
        match read_tensor(bad_header.as_bytes()) {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("x")),
            other => panic!("expected parse error, got {other:?}"),
        }

        let short = "2 1 2\n1.0 2.0\n3.0";
        match read_tensor(short.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let trailing = "1 1 1\n1.0\n2.0";
        assert!(matches!(
            read_tensor(trailing.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));

        let bad_bit = "1 1 1\n0.5";
        assert!(matches!(
            read_mask(bad_bit.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn history_csv_blank_hidden_column() {
        let history = vec![
            CompletionRecord {
                iteration: 0,
                observed_error: 0.5,
                hidden_error: Some(0.75),
            },
            CompletionRecord {
                iteration: 1,
                observed_error: 0.25,
                hidden_error: None,
            },
        ];
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &history).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "iteration,observed_error,hidden_error\n0,0.5,0.75\n1,0.25,\n"
        );
    }

    #[test]
    fn rank_sweep_and_table_csvs_have_documented_headers() {
        let mut buf = Vec::new();
        write_rank_sweep_csv(&mut buf, &[(1, 0.5), (2, 0.25)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "rank,e_cpd\n1,0.5\n2,0.25\n");

        let rows = vec![MethodRow {
            method: "lstm+cpd".into(),
            cpd_time: 1.5,
            learning_time: 12.0,
            total_time: 13.5,
            error_percent: 15.26,
        }];
        let mut buf = Vec::new();
        write_table_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,cpd_time,learning_time,total_time,error_percent\n"));
        assert!(text.contains("lstm+cpd,1.5,12,13.5,15.26"));
    }

    #[test]
    fn roc_csv_includes_sentinel_rows() {
        let x = Tensor3::new((2, 2, 1), vec![0.1, 0.9, 0.4, 0.6]).unwrap();
        let truth = BoolTensor3::new((2, 2, 1), vec![false, true, false, true]).unwrap();
        let curve = roc(&x, &truth, 10).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &curve).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("gamma,p_f,p_d"));
        assert_eq!(lines.next(), Some("inf,0,0"));
        assert_eq!(text.lines().last(), Some("-inf,1,1"));
    }

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tns");
        let x = random_tensor((3, 4, 5), 2);
        save_tensor(&path, &x).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn lstm_model_file_round_trip_preserves_forecasts() {
        let series: Vec<f64> = (0..24).map(|i| (i as f64 * 0.3).sin() + 2.0).collect();
        let cfg = TrainConfig {
            epochs: 20,
            num_layers: 1,
            layer_width: 3,
            ..TrainConfig::default()
        };
        let (model, _) = train_lstm(&series, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_lstm_model(&path, &model).unwrap();
        let back = load_lstm_model(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(
            forecast(&back, &series, 5).unwrap(),
            forecast(&model, &series, 5).unwrap()
        );
    }

    #[test]
    fn scenario_file_round_trip_and_partial_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        let s = Scenario::default();
        save_scenario(&path, &s).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(back, s);

        let partial = dir.path().join("partial.toml");
        std::fs::write(&partial, "seed = 3\ndims = [10, 48, 21]\n").unwrap();
        let loaded = load_scenario(&partial).unwrap();
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.dims, (10, 48, 21));
        assert_eq!(loaded.peak_occupancy, Scenario::default().peak_occupancy);

        // Syntactically fine, semantically invalid: validation must run.
        let broken = dir.path().join("broken.toml");
        std::fs::write(&broken, "gmm_sigma = -1.0\n").unwrap();
        assert!(load_scenario(&broken).is_err());

        let unparsable = dir.path().join("unparsable.toml");
        std::fs::write(&unparsable, "dims = \"wide\"\n").unwrap();
        assert!(matches!(
            load_scenario(&unparsable),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        match load_tensor("/nonexistent/path/x.tns") {
            Err(Error::Io(_)) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
