//! On-disk transition datasets.
//!
//! A dataset is a directory holding `header.json` and `transitions.bin`. The
//! binary file is a flat sequence of records:
//!
//! ```text
//! o        height*width*3 bytes (8-bit RGB)
//! action   u32 little-endian
//! reward   f64 little-endian
//! o_next   height*width*3 bytes
//! done     u8 (0 or 1)
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DiscreteAction, Observation, Transition};

pub const FORMAT_NAME: &str = "homomorph-transitions";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_FILE: &str = "header.json";
const DATA_FILE: &str = "transitions.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub height: usize,
    pub width: usize,
    pub n_actions: usize,
    pub count: usize,
}

impl DatasetHeader {
    pub fn new(env: impl Into<String>, height: usize, width: usize, n_actions: usize, count: usize) -> Self {
        Self {
            format: FORMAT_NAME.to_owned(),
            version: FORMAT_VERSION,
            env: env.into(),
            height,
            width,
            n_actions,
            count,
        }
    }
}

pub fn save(dir: &Path, env: &str, transitions: &[Transition]) -> Result<DatasetHeader> {
    let first = transitions
        .first()
        .ok_or_else(|| Error::Config("refusing to write an empty dataset".into()))?;
    let (height, width, _) = first.o.shape();
    let n_actions = first.a.n_actions();
    let header = DatasetHeader::new(env, height, width, n_actions, transitions.len());

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data_path = dir.join(DATA_FILE);
    let file = fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(&data_path, e);
    for t in transitions {
        if t.o.shape() != (height, width, 3) || t.a.n_actions() != n_actions {
            return Err(Error::Shape("dataset records must share image size and action count".into()));
        }
        out.write_all(t.o.pixels()).map_err(io)?;
        out.write_all(&(t.a.index() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&t.r.to_le_bytes()).map_err(io)?;
        out.write_all(t.o_next.pixels()).map_err(io)?;
        out.write_all(&[u8::from(t.done)]).map_err(io)?;
    }
    out.flush().map_err(io)?;

    let header_path = dir.join(HEADER_FILE);
    let json = serde_json::to_string_pretty(&header)?;
    fs::write(&header_path, json).map_err(|e| Error::io(&header_path, e))?;
    Ok(header)
}

pub fn load_header(dir: &Path) -> Result<DatasetHeader> {
    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: DatasetHeader = serde_json::from_str(&text)?;
    if header.format != FORMAT_NAME {
        return Err(Error::format(header_path.display().to_string(), format!("unknown format `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::format(
            header_path.display().to_string(),
            format!("unsupported version {}", header.version),
        ));
    }
    Ok(header)
}

pub fn load(dir: &Path) -> Result<(DatasetHeader, Vec<Transition>)> {
    let header = load_header(dir)?;
    let data_path = dir.join(DATA_FILE);
    let file = fs::File::open(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut input = BufReader::new(file);
    let image_len = header.height * header.width * 3;
    let mut interned: HashSet<Observation> = HashSet::new();
    let mut intern = |pixels: Vec<u8>| -> Result<Observation> {
        let obs = Observation::new(header.height, header.width, pixels)?;
        if let Some(existing) = interned.get(&obs) {
            return Ok(existing.clone());
        }
        interned.insert(obs.clone());
        Ok(obs)
    };

    let mut transitions = Vec::with_capacity(header.count);
    let io = |e| Error::io(&data_path, e);
    for _ in 0..header.count {
        let mut o = vec![0u8; image_len];
        input.read_exact(&mut o).map_err(io)?;
        let mut a = [0u8; 4];
        input.read_exact(&mut a).map_err(io)?;
        let mut r = [0u8; 8];
        input.read_exact(&mut r).map_err(io)?;
        let mut o_next = vec![0u8; image_len];
        input.read_exact(&mut o_next).map_err(io)?;
        let mut done = [0u8; 1];
        input.read_exact(&mut done).map_err(io)?;
        let action = DiscreteAction::new(u32::from_le_bytes(a) as usize, header.n_actions)?;
        transitions.push(Transition {
            o: intern(o)?,
            a: action,
            r: f64::from_le_bytes(r),
            o_next: intern(o_next)?,
            done: done[0] != 0,
        });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(io)? != 0 {
        return Err(Error::format(data_path.display().to_string(), "trailing bytes after last record"));
    }
    Ok((header, transitions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| {
                let o = Observation::new(2, 2, (0..12).map(|p| (p * 7 + i) as u8).collect()).unwrap();
                let o_next = Observation::new(2, 2, (0..12).map(|p| (p * 3 + i) as u8).collect()).unwrap();
                let r = if i % 3 == 0 { -0.1 / 3.0 } else { f64::from_bits(0x3ff0_0000_0000_0001) };
                Transition::new(o, DiscreteAction::new(i % 4, 4).unwrap(), r, o_next, i % 5 == 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = sample(17);
        let header = save(dir.path(), "grid", &data).unwrap();
        assert_eq!(header.count, 17);
        let (loaded_header, loaded) = load(dir.path()).unwrap();
        assert_eq!(header, loaded_header);
        for (a, b) in data.iter().zip(&loaded) {
            assert_eq!(a.o, b.o);
            assert_eq!(a.o_next, b.o_next);
            assert_eq!(a.a, b.a);
            assert_eq!(a.r.to_bits(), b.r.to_bits());
            assert_eq!(a.done, b.done);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(save(dir.path(), "grid", &[]), Err(Error::Config(_))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), "grid", &sample(3)).unwrap();
        let path = dir.path().join(DATA_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
