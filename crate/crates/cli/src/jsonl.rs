//! JSON-Lines input and output.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub type Record = Map<String, Value>;

fn open(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(Box::new(BufReader::new(f)))
        }
    }
}

/// Reads one JSON object per non-blank line. Any malformed line fails the
/// whole read with its line number.
pub fn read_records(path: Option<&Path>) -> Result<Vec<Record>> {
    let name = path.map_or_else(|| "<stdin>".to_string(), |p| p.display().to_string());
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.with_context(|| format!("{name}:{}: read failed", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => out.push(m),
            Ok(_) => bail!("{name}:{}: expected a JSON object", i + 1),
            Err(e) => bail!("{name}:{}: {e}", i + 1),
        }
    }
    Ok(out)
}

pub fn read_typed<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_records(Some(path))?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            serde_json::from_value(Value::Object(r))
                .with_context(|| format!("{}: record {}", path.display(), i + 1))
        })
        .collect()
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut s = String::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read_to_string(&mut s)?;
    toml::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

pub struct Output {
    inner: Box<dyn Write>,
}

impl Output {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let inner: Box<dyn Write> = match path {
            None => Box::new(BufWriter::new(io::stdout())),
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
        };
        Ok(Output { inner })
    }

    pub fn line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, value)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn text(&mut self, s: &str) -> Result<()> {
        self.inner.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn get_str<'a>(r: &'a Record, key: &str, line: usize) -> Result<&'a str> {
    r.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow!("record {line}: missing string field {key:?}"))
}

pub fn get_f64(r: &Record, key: &str, line: usize) -> Result<f64> {
    r.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| anyhow!("record {line}: missing numeric field {key:?}"))
}

pub fn get_bool(r: &Record, key: &str, line: usize) -> Result<bool> {
    match r.get(key) {
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::Number(n)) if n.as_u64() == Some(0) || n.as_u64() == Some(1) => {
            Ok(n.as_u64() == Some(1))
        }
        _ => Err(anyhow!("record {line}: missing boolean field {key:?}")),
    }
}

pub fn opt_bool(r: &Record, key: &str, line: usize) -> Result<bool> {
    match r.get(key) {
        None | Some(Value::Null) => Ok(false),
        Some(_) => get_bool(r, key, line),
    }
}

pub fn opt_usize(r: &Record, key: &str, line: usize) -> Result<Option<usize>> {
    match r.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| anyhow!("record {line}: field {key:?} must be a non-negative integer")),
    }
}
