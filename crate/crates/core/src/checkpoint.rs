//! Parameter snapshots with a config fingerprint header.
//!
//! File layout: one text line `CRABWATCH-CKPT 1 <kind> <fingerprint>`
//! followed by a JSON body.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crabwatch_nn::{ParamStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "CRABWATCH-CKPT";
const VERSION: u32 = 1;

/// SHA-256 of the canonical JSON encoding of `config`.
pub fn fingerprint<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_string(config)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn capture<C: Serialize, T: Scalar>(
        kind: &str,
        config: &C,
        store: &ParamStore<T>,
        epoch: usize,
        loss_history: Vec<f64>,
    ) -> Result<Self> {
        let params = store
            .iter()
            .map(|(_, p)| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Ok(Self {
            kind: kind.to_string(),
            fingerprint: fingerprint(config)?,
            config: serde_json::to_value(config)?,
            epoch,
            loss_history,
            params,
        })
    }

    /// Decodes the stored config, checking it against the fingerprint.
    pub fn config<C: Serialize + for<'de> Deserialize<'de>>(&self) -> Result<C> {
        let cfg: C = serde_json::from_value(self.config.clone())?;
        self.verify(&cfg)?;
        Ok(cfg)
    }

    pub fn verify<C: Serialize>(&self, config: &C) -> Result<()> {
        let expected = fingerprint(config)?;
        if expected != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected, found: self.fingerprint.clone() });
        }
        Ok(())
    }

    /// Copies the snapshot into a store built from the same config.
    pub fn restore<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", store.len()),
                got: format!("{} parameters", self.params.len()),
            });
        }
        for (p, rec) in store.params_mut().iter_mut().zip(&self.params) {
            if p.name != rec.name || p.value.shape() != rec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} {:?}", p.name, p.value.shape()),
                    got: format!("{} {:?}", rec.name, rec.shape),
                });
            }
            p.value = Tensor::new(&rec.shape, rec.data.iter().map(|&v| T::of(v)).collect());
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{MAGIC} {VERSION} {} {}", self.kind, self.fingerprint)?;
        serde_json::to_writer(&mut f, self)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != MAGIC {
            return Err(Error::Parse(format!("{}: not a checkpoint", path.display())));
        }
        if fields[1] != VERSION.to_string() {
            return Err(Error::Parse(format!("checkpoint version {} unsupported", fields[1])));
        }
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        if ckpt.fingerprint != fields[3] || ckpt.kind != fields[2] {
            return Err(Error::FingerprintMismatch { expected: fields[3].to_string(), found: ckpt.fingerprint });
        }
        Ok(ckpt)
    }

    /// One `epoch,mean_loss` row per recorded epoch.
    pub fn loss_csv(&self, column: &str) -> String {
        let mut s = format!("epoch,{column}\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            s.push_str(&format!("{i},{l:.9}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Cfg {
        width: usize,
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut store = ParamStore::<f32>::new(3);
        store.add_uniform("a", &[2, 3], 4);
        store.add_uniform("b", &[5], 1);
        let ckpt = Checkpoint::capture("test", &Cfg { width: 4 }, &store, 7, vec![0.5, 0.25]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/model.ckpt");
        ckpt.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ckpt);
        let mut fresh = ParamStore::<f32>::new(99);
        fresh.add_uniform("a", &[2, 3], 4);
        fresh.add_uniform("b", &[5], 1);
        back.restore(&mut fresh).unwrap();
        for (id, p) in store.iter() {
            assert_eq!(p.value, fresh.get(id).value);
        }
        assert!(back.config::<Cfg>().is_ok());
        assert!(matches!(back.verify(&Cfg { width: 5 }), Err(Error::FingerprintMismatch { .. })));
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&format!("CRABWATCH-CKPT 1 test {}\n", ckpt.fingerprint)));
        assert_eq!(ckpt.loss_csv("mean_l1"), "epoch,mean_l1\n0,0.500000000\n1,0.250000000\n");
    }
}
