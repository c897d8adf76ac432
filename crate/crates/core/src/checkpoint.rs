//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "TQPOCKPT"
//! version   u32
//! config    u32 length + UTF-8 TOML of the run configuration
//! epoch     u64
//! policy    network (see below)
//! value     network
//! tracker   u8 present flag, then q f64, level f64, updates u64
//! lambda    f64 lambda, f64 delta, u8 mode (0 tilted, 1 plain, 2 fixed
//!           followed by two f64), f64 last_eta
//! rng       32-byte key, u64 stream, u128 word position  (rollout seeds)
//! rng       same, for bootstrap resampling
//! crc32     u32 over every preceding byte
//! ```
//!
//! A network is `u32 input, u32 n_hidden, n_hidden × u32 width, u8 head
//! (0 categorical, 1 gaussian, 2 scalar), u32 head size, u8 bias,
//! u8 activation, u64 parameter count, parameters as f64`.

use std::path::Path;

use crate::constraint::{TiltMode, TiltedMultiplier};
use crate::error::{Error, Result};
use crate::policy::{Activation, Architecture, Head, PolicyParams, ValueParams};
use crate::quantile::QuantileTracker;
use crate::rng::RngState;
use crate::trainer::TrainerState;

pub const MAGIC: &[u8; 8] = b"TQPOCKPT";
pub const FORMAT_VERSION: u32 = 1;

const MAX_HIDDEN_LAYERS: u32 = 64;
const MAX_WIDTH: u32 = 1 << 16;
const MAX_PARAMS: u64 = 1 << 26;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_toml: String,
    pub state: TrainerState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u128(&mut self, x: u128) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn network(&mut self, arch: &Architecture, params: &[f64]) {
        self.u32(arch.input_dim as u32);
        self.u32(arch.hidden.len() as u32);
        for &h in &arch.hidden {
            self.u32(h as u32);
        }
        let (tag, size) = match arch.head {
            Head::Categorical { n_actions } => (0, n_actions),
            Head::Gaussian { dim } => (1, dim),
            Head::Scalar => (2, 1),
        };
        self.u8(tag);
        self.u32(size as u32);
        self.u8(arch.bias as u8);
        self.u8(match arch.activation {
            Activation::Tanh => 0,
        });
        self.u64(params.len() as u64);
        for &p in params {
            self.f64(p);
        }
    }

    fn rng(&mut self, s: &RngState) {
        self.0.extend_from_slice(&s.key);
        self.u64(s.stream);
        self.u128(s.word_pos);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("take returns exactly N bytes"))
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn network(&mut self, what: &str) -> Result<(Architecture, Vec<f64>)> {
        let input_dim = self.u32(what)?;
        let n_hidden = self.u32(what)?;
        if n_hidden > MAX_HIDDEN_LAYERS {
            return Err(Error::Checkpoint(format!("{what}: {n_hidden} hidden layers")));
        }
        let mut hidden = Vec::with_capacity(n_hidden as usize);
        for _ in 0..n_hidden {
            hidden.push(self.u32(what)?);
        }
        let head_tag = self.u8(what)?;
        let head_size = self.u32(what)?;
        if input_dim > MAX_WIDTH || head_size > MAX_WIDTH || hidden.iter().any(|&h| h > MAX_WIDTH) {
            return Err(Error::Checkpoint(format!("{what}: layer width exceeds {MAX_WIDTH}")));
        }
        let head = match head_tag {
            0 => Head::Categorical { n_actions: head_size as usize },
            1 => Head::Gaussian { dim: head_size as usize },
            2 => Head::Scalar,
            t => return Err(Error::Checkpoint(format!("{what}: unknown head tag {t}"))),
        };
        let bias = match self.u8(what)? {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("{what}: bad bias flag {b}"))),
        };
        let activation = match self.u8(what)? {
            0 => Activation::Tanh,
            a => return Err(Error::Checkpoint(format!("{what}: unknown activation {a}"))),
        };
        let arch = Architecture {
            input_dim: input_dim as usize,
            hidden: hidden.into_iter().map(|h| h as usize).collect(),
            head,
            bias,
            activation,
        };
        let count = self.u64(what)?;
        let expected = arch.param_count() as u64;
        if count != expected || count > MAX_PARAMS {
            return Err(Error::Checkpoint(format!("{what}: {count} parameters, architecture needs {expected}")));
        }
        let raw = self.take(count as usize * 8, what)?;
        let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        Ok((arch, params))
    }

    fn rng(&mut self, what: &str) -> Result<RngState> {
        Ok(RngState { key: self.array(what)?, stream: self.u64(what)?, word_pos: self.u128(what)? })
    }
}

pub fn encode(cp: &Checkpoint) -> Vec<u8> {
    let s = &cp.state;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(cp.config_toml.len() as u32);
    w.0.extend_from_slice(cp.config_toml.as_bytes());
    w.u64(s.epoch as u64);
    w.network(s.policy.architecture(), s.policy.theta());
    w.network(s.value.architecture(), s.value.phi());
    match s.tracker {
        Some(t) => {
            w.u8(1);
            w.f64(t.q_current);
            w.f64(t.level);
            w.u64(t.update_count);
        }
        None => w.u8(0),
    }
    let m = &s.multiplier;
    w.f64(m.lambda);
    w.f64(m.delta);
    match m.mode {
        TiltMode::Tilted => w.u8(0),
        TiltMode::Plain => w.u8(1),
        TiltMode::Fixed(up, down) => {
            w.u8(2);
            w.f64(up);
            w.f64(down);
        }
    }
    w.f64(m.last_eta);
    w.rng(&RngState::capture(&s.rng));
    w.rng(&RngState::capture(&s.bootstrap_rng));
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parses and validates a checkpoint; never panics on malformed input.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing checkpoint header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let len = r.u32("config length")? as usize;
    let config_toml = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?
        .to_string();
    let epoch = usize::try_from(r.u64("epoch")?).map_err(|_| Error::Checkpoint("epoch overflows usize".into()))?;
    let (pa, pt) = r.network("policy")?;
    let policy = PolicyParams::new(pa, pt).map_err(|e| Error::Checkpoint(format!("policy: {e}")))?;
    let (va, vp) = r.network("value")?;
    let value = ValueParams::new(va, vp).map_err(|e| Error::Checkpoint(format!("value: {e}")))?;
    let tracker = match r.u8("tracker flag")? {
        0 => None,
        1 => {
            let q = r.f64("tracker")?;
            let level = r.f64("tracker")?;
            let count = r.u64("tracker")?;
            let mut t = QuantileTracker::new(q, level).map_err(|e| Error::Checkpoint(format!("tracker: {e}")))?;
            t.update_count = count;
            Some(t)
        }
        f => return Err(Error::Checkpoint(format!("bad tracker flag {f}"))),
    };
    let lambda = r.f64("multiplier")?;
    let delta = r.f64("multiplier")?;
    let mode = match r.u8("multiplier mode")? {
        0 => TiltMode::Tilted,
        1 => TiltMode::Plain,
        2 => TiltMode::Fixed(r.f64("fixed rates")?, r.f64("fixed rates")?),
        m => return Err(Error::Checkpoint(format!("unknown multiplier mode {m}"))),
    };
    let last_eta = r.f64("multiplier")?;
    let mut multiplier =
        TiltedMultiplier::new(lambda, delta, mode).map_err(|e| Error::Checkpoint(format!("multiplier: {e}")))?;
    multiplier.last_eta = last_eta;
    let rng = r.rng("rollout rng")?.restore();
    let bootstrap_rng = r.rng("bootstrap rng")?.restore();
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        config_toml,
        state: TrainerState { policy, value, tracker, multiplier, epoch, rng, bootstrap_rng },
    })
}

pub fn save(path: &Path, cp: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(cp))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RunConfig, Variant};
    use crate::envs::preset;
    use crate::trainer::{Trainer, TrainerState};
    use rand::RngCore;

    fn trained(variant: Variant) -> (RunConfig, TrainerState) {
        let cfg = RunConfig {
            algorithm: variant,
            epochs: 3,
            batch_episodes: 8,
            horizon: 6,
            network: crate::config::NetworkSettings {
                policy_hidden: vec![4],
                value_hidden: vec![3],
                init_log_std: -0.5,
            },
            fixed_tilt_rates: Some((0.3, 0.7)),
            ..RunConfig::default()
        };
        let (mut t, _) = Trainer::new(cfg.clone(), preset("chain", 6).unwrap()).unwrap();
        t.run(|_, _| Ok(())).unwrap();
        (cfg, t.state)
    }

    fn same_state(a: &TrainerState, b: &TrainerState) {
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.value, b.value);
        assert_eq!(a.tracker, b.tracker);
        assert_eq!(a.multiplier, b.multiplier);
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.rng.clone().next_u64(), b.rng.clone().next_u64());
        assert_eq!(a.bootstrap_rng.clone().next_u64(), b.bootstrap_rng.clone().next_u64());
    }

    #[test]
    fn round_trip() {
        for v in [Variant::Tqpo, Variant::TqpoNoTilt, Variant::TqpoFixedTilt] {
            let (cfg, state) = trained(v);
            let cp = Checkpoint { config_toml: cfg.to_toml_string(), state };
            let back = decode(&encode(&cp)).unwrap();
            assert_eq!(back.config_toml, cp.config_toml);
            same_state(&back.state, &cp.state);
            assert_eq!(encode(&back), encode(&cp));
        }
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let (cfg, _) = trained(Variant::Tqpo);
        let env = preset("chain", 6).unwrap();
        let (mut full, _) = Trainer::new(RunConfig { epochs: 6, ..cfg.clone() }, env.clone()).unwrap();
        let all = full.run(|_, _| Ok(())).unwrap();

        let (mut first, _) = Trainer::new(RunConfig { epochs: 3, ..cfg.clone() }, env.clone()).unwrap();
        first.run(|_, _| Ok(())).unwrap();
        let bytes = encode(&Checkpoint { config_toml: String::new(), state: first.state.clone() });
        let (mut second, _) = Trainer::new(RunConfig { epochs: 6, ..cfg }, env).unwrap();
        second.state = decode(&bytes).unwrap().state;
        let rest = second.run(|_, _| Ok(())).unwrap();
        assert_eq!(&all[3..], &rest[..]);
    }

    #[test]
    fn rejects_corruption() {
        let (cfg, state) = trained(Variant::Tqpo);
        let bytes = encode(&Checkpoint { config_toml: cfg.to_toml_string(), state });
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"not a checkpoint").is_err());
        for i in [0, 9, 40, bytes.len() / 2, bytes.len() - 2] {
            let mut bad = bytes.clone();
            bad[i] ^= 0x5a;
            assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))), "flip at {i}");
        }
        let mut v2 = bytes.clone();
        v2[8] = 2;
        let err = decode(&v2).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
