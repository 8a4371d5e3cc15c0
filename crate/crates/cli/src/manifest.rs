//! Run manifest: a flat `key=value` file describing everything needed to
//! reproduce a run. Its SHA-256 is stamped into every CSV of the run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flowreg::sketch::Layering;
use flowreg::{Error, PipelineConfig, Result};
use sha2::{Digest, Sha256};

pub const REPORT_FILE: &str = "report.csv";
pub const REGULATION_FILE: &str = "regulation.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub input: PathBuf,
    pub input_sha256: String,
    pub oracle: Option<PathBuf>,
    pub oracle_sha256: Option<String>,
    pub config: PipelineConfig,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        match file.read(&mut buf)? {
            0 => break,
            n => hasher.update(&buf[..n]),
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn layering_name(l: Layering) -> &'static str {
    match l {
        Layering::TwoLayer => "two-layer",
        Layering::SingleLayer => "single-layer",
    }
}

impl RunManifest {
    /// Keys in a fixed order so the text, and thus its digest, is stable.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let p = &c.packet_sketch;
        let opt_path = |o: &Option<PathBuf>| {
            o.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let pairs: Vec<(&str, String)> = vec![
            ("tool", "flowreg".into()),
            ("version", self.version.clone()),
            ("input", self.input.display().to_string()),
            ("input_sha256", self.input_sha256.clone()),
            ("oracle", opt_path(&self.oracle)),
            (
                "oracle_sha256",
                self.oracle_sha256.clone().unwrap_or_default(),
            ),
            ("seed", c.seed.to_string()),
            ("b1", p.b1.to_string()),
            ("b2", p.b2.to_string()),
            ("sat_frac", p.sat_frac.to_string()),
            ("blocks1", p.blocks1.to_string()),
            ("blocks2", p.blocks2.to_string()),
            ("layering", layering_name(p.layering).into()),
            ("packet_sketch_seed", p.seed.to_string()),
            ("byte_sketch_seed", c.byte_sketch.seed.to_string()),
            ("sketch_memory_bytes", c.sketch_memory_bytes().to_string()),
            ("byte_unit", c.byte_unit.to_string()),
            ("epoch_s", c.epoch_len_s.to_string()),
            ("shards", c.shards.to_string()),
            ("wsaf_initial_capacity", c.wsaf_initial_capacity.to_string()),
            ("wsaf_hard_capacity", c.wsaf_hard_capacity.to_string()),
            // Outputs live next to the manifest.
            ("report", REPORT_FILE.into()),
            ("regulation", REGULATION_FILE.into()),
        ];
        pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::malformed(format!("manifest line {}", n + 1), "expected key=value")
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k)
                .ok_or_else(|| Error::malformed("manifest", format!("missing key {k}")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::malformed("manifest", format!("bad value for {k}: {v:?}")))
        }
        let n = |k: &str| get(k).map(|s| s.as_str());

        let layering = match n("layering")? {
            "two-layer" => Layering::TwoLayer,
            "single-layer" => Layering::SingleLayer,
            other => {
                return Err(Error::malformed(
                    "manifest",
                    format!("unknown layering {other:?}"),
                ))
            }
        };
        let (b1, b2, sat, blocks1, blocks2) = (
            num::<u32>("b1", n("b1")?)?,
            num::<u32>("b2", n("b2")?)?,
            num::<f64>("sat_frac", n("sat_frac")?)?,
            num::<usize>("blocks1", n("blocks1")?)?,
            num::<usize>("blocks2", n("blocks2")?)?,
        );
        let mut config = PipelineConfig::with_seed(num("seed", n("seed")?)?).map_sketches(|p| {
            p.b1 = b1;
            p.b2 = b2;
            p.sat_frac = sat;
            p.blocks1 = blocks1;
            p.blocks2 = blocks2;
            p.layering = layering;
        });
        config.byte_unit = num("byte_unit", n("byte_unit")?)?;
        config.epoch_len_s = num("epoch_s", n("epoch_s")?)?;
        config.shards = num("shards", n("shards")?)?;
        config.wsaf_initial_capacity = num("wsaf_initial_capacity", n("wsaf_initial_capacity")?)?;
        config.wsaf_hard_capacity = num("wsaf_hard_capacity", n("wsaf_hard_capacity")?)?;
        if num::<u64>("packet_sketch_seed", n("packet_sketch_seed")?)? != config.packet_sketch.seed
            || num::<u64>("byte_sketch_seed", n("byte_sketch_seed")?)? != config.byte_sketch.seed
        {
            return Err(Error::malformed(
                "manifest",
                "sketch seeds do not derive from the run seed",
            ));
        }

        let nonempty = |k: &str| kv.get(k).filter(|v| !v.is_empty()).cloned();
        Ok(RunManifest {
            version: get("version")?.clone(),
            input: PathBuf::from(get("input")?),
            input_sha256: get("input_sha256")?.clone(),
            oracle: nonempty("oracle").map(PathBuf::from),
            oracle_sha256: nonempty("oracle_sha256"),
            config,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunManifest {
        let mut config = PipelineConfig::with_seed(42).map_sketches(|p| {
            p.sat_frac = 0.8;
            p.layering = Layering::SingleLayer;
        });
        config.shards = 3;
        config.epoch_len_s = 0;
        RunManifest {
            version: "0.1.0".into(),
            input: "traces/a.pcap".into(),
            input_sha256: "ab".repeat(32),
            oracle: Some("traces/a.oracle.csv".into()),
            oracle_sha256: Some("cd".repeat(32)),
            config,
        }
    }

    #[test]
    fn text_round_trip() {
        let m = sample();
        let text = m.to_text();
        assert!(text.contains("\nlayering=single-layer\n"));
        assert_eq!(RunManifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let m = sample();
        assert_eq!(m.digest(), sample().digest());
        let mut other = sample();
        other.config.byte_unit = 32;
        assert_ne!(m.digest(), other.digest());
    }

    #[test]
    fn rejects_missing_and_tampered_keys() {
        let text = sample().to_text();
        assert!(RunManifest::parse(&text.replace("shards=3\n", "")).is_err());
        let tampered = text.replace("seed=42\n", "seed=43\n");
        assert!(RunManifest::parse(&tampered).is_err());
    }

    #[test]
    fn no_oracle() {
        let mut m = sample();
        m.oracle = None;
        m.oracle_sha256 = None;
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
    }
}
