//! Velocity predictors: the trainable denoiser and an exact oracle used to
//! test the sampler.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::schedule::NoiseSchedule;
use super::unet::{ConditionInput, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::field::{Grid, Latent};
use crate::problem::ProblemSpec;

/// Vector-Jacobian product `gᵀ ∂v/∂z` at the point of a previous forward pass.
pub type Vjp<'a> = Box<dyn FnOnce(&Latent) -> Latent + 'a>;

pub trait VelocityModel: Send + Sync {
    fn velocity(&self, z: &Latent, t: usize, sched: &NoiseSchedule, spec: &ProblemSpec) -> Result<Latent>;

    /// Velocity plus a closure computing input-gradient products at `z`.
    fn velocity_with_vjp<'a>(&'a self, z: &Latent, t: usize, sched: &NoiseSchedule, spec: &ProblemSpec) -> Result<(Latent, Vjp<'a>)>;
}

/// Per-point and scalar conditioning features. Coordinates map to `[-1,1]`,
/// forces are scaled by the largest load magnitude.
pub fn featurize(spec: &ProblemSpec) -> ConditionInput {
    let c = |v: f64| (2.0 * v - 1.0) as f32;
    let flag = |b: bool| if b { 1.0f32 } else { 0.0 };
    let fmax = spec.loads.iter().map(|l| l.fx.hypot(l.fy)).fold(0.0, f64::max);
    let scale = if fmax > 0.0 { 1.0 / fmax } else { 0.0 };
    ConditionInput {
        supports: spec.supports.iter().map(|s| [c(s.x), c(s.y), flag(s.fix_x), flag(s.fix_y)]).collect(),
        loads: spec.loads.iter().map(|l| [c(l.x), c(l.y), (l.fx * scale) as f32, (l.fy * scale) as f32]).collect(),
        volume_fraction: spec.volume_fraction as f32,
        cell_size: spec.cell_size as f32,
        aspect: [spec.aspect[0] as f32, spec.aspect[1] as f32],
    }
}

/// Trained conditional velocity network with its (averaged) weights.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub net: UNet,
    pub params: Vec<f32>,
    /// Number of steps of the schedule used for training (timesteps are fed as `t/T`).
    pub train_steps: usize,
}

const MAGIC: &[u8; 8] = b"TOPODIFF";
const VERSION: u32 = 1;

impl Denoiser {
    pub fn new(config: UNetConfig, seed: u64, train_steps: usize) -> Self {
        let net = UNet::new(config);
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { net, params, train_steps }
    }

    /// Hex digest identifying the architecture (not the weights).
    pub fn arch_hash(&self) -> String {
        let cfg = serde_json::to_vec(&self.net.config).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&cfg);
        for (name, shape, _) in &self.net.layout.entries {
            h.update(name.as_bytes());
            for d in shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        hex(&h.finalize()[..16])
    }

    /// Digest of architecture and weights.
    pub fn weights_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.arch_hash().as_bytes());
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize()[..16])
    }

    fn condition_and_check(&self, z: &Latent) -> Result<()> {
        let d = self.net.config.divisor();
        if z.width() % d != 0 || z.height() % d != 0 {
            return Err(Error::InvalidRequest(format!("latent {}x{} not divisible by {d}", z.width(), z.height())));
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let cfg = serde_json::to_vec(&self.net.config)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let arch = self.arch_hash();
        w.write_all(&(arch.len() as u32).to_le_bytes())?;
        w.write_all(arch.as_bytes())?;
        let sched = b"cosine";
        w.write_all(&(sched.len() as u32).to_le_bytes())?;
        w.write_all(sched)?;
        w.write_all(&(self.train_steps as u32).to_le_bytes())?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.net.layout.entries.len() as u32).to_le_bytes())?;
        for (name, shape, slot) in &self.net.layout.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in shape {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            for v in slot.of(&self.params) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a denoiser checkpoint (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let arch = read_string(&mut r)?;
        let sched = read_string(&mut r)?;
        if sched != "cosine" {
            return Err(Error::Checkpoint(format!("unknown schedule {sched}")));
        }
        let train_steps = read_u32(&mut r)? as usize;
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config: UNetConfig = serde_json::from_slice(&cfg)?;
        let net = UNet::new(config);
        let mut params = vec![0.0f32; net.num_params()];
        let n = read_u32(&mut r)? as usize;
        if n != net.layout.entries.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {n}", net.layout.entries.len())));
        }
        for (name, shape, slot) in &net.layout.entries {
            let got = read_string(&mut r)?;
            let ndim = read_u32(&mut r)? as usize;
            let dims: Vec<usize> = (0..ndim).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
            if &got != name || &dims != shape {
                return Err(Error::Checkpoint(format!("tensor {got} {dims:?} does not match {name} {shape:?}")));
            }
            let mut buf = vec![0u8; 4 * slot.len];
            r.read_exact(&mut buf)?;
            for (v, b) in slot.of_mut(&mut params).iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        let d = Self { net, params, train_steps };
        if d.arch_hash() != arch {
            return Err(Error::Checkpoint("architecture hash mismatch".into()));
        }
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint("string length out of range".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn to_f32(z: &Latent) -> Vec<f32> {
    z.values().iter().map(|v| *v as f32).collect()
}

fn from_f32(w: usize, h: usize, v: &[f32]) -> Latent {
    Latent(Grid { width: w, height: h, values: v.iter().map(|x| *x as f64).collect() })
}

impl VelocityModel for Denoiser {
    fn velocity(&self, z: &Latent, t: usize, sched: &NoiseSchedule, spec: &ProblemSpec) -> Result<Latent> {
        self.condition_and_check(z)?;
        let (v, _) = self.net.forward(&self.params, &to_f32(z), z.height(), z.width(), sched.t_frac(t) as f32, &featurize(spec));
        Ok(from_f32(z.width(), z.height(), &v))
    }

    fn velocity_with_vjp<'a>(&'a self, z: &Latent, t: usize, sched: &NoiseSchedule, spec: &ProblemSpec) -> Result<(Latent, Vjp<'a>)> {
        self.condition_and_check(z)?;
        let (w, h) = (z.width(), z.height());
        let (v, cache) = self.net.forward(&self.params, &to_f32(z), h, w, sched.t_frac(t) as f32, &featurize(spec));
        let vjp: Vjp<'a> = Box::new(move |g: &Latent| {
            let dz = self.net.backward(&self.params, None, &cache, &to_f32(g));
            from_f32(w, h, &dz)
        });
        Ok((from_f32(w, h, &v), vjp))
    }
}

/// Knows the clean latent and returns the exact velocity
/// `v = (√ᾱ z_t − z0) / √(1−ᾱ)`, so that `ẑ0 == z0` at every step.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub z0: Latent,
}

impl OracleModel {
    fn exact(&self, z: &Latent, t: usize, sched: &NoiseSchedule) -> (Latent, f64) {
        let a = sched.alpha_bar(t);
        if a >= 1.0 {
            return (Latent(Grid::filled(z.width(), z.height(), 0.0)), 0.0);
        }
        let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
        (Latent(z.0.zip_with(&self.z0.0, |zt, z0| (sa * zt - z0) / sb)), sa / sb)
    }
}

impl VelocityModel for OracleModel {
    fn velocity(&self, z: &Latent, t: usize, sched: &NoiseSchedule, _spec: &ProblemSpec) -> Result<Latent> {
        Ok(self.exact(z, t, sched).0)
    }

    fn velocity_with_vjp<'a>(&'a self, z: &Latent, t: usize, sched: &NoiseSchedule, _spec: &ProblemSpec) -> Result<(Latent, Vjp<'a>)> {
        let (v, slope) = self.exact(z, t, sched);
        Ok((v, Box::new(move |g: &Latent| Latent(g.0.map(|x| slope * x)))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSpec;

    #[test]
    fn checkpoint_round_trip() {
        let d = Denoiser::new(UNetConfig::tiny(), 3, 1000);
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = Denoiser::read_from(&buf[..]).unwrap();
        assert_eq!(back.params, d.params);
        assert_eq!(back.arch_hash(), d.arch_hash());
        assert_eq!(back.train_steps, 1000);
        buf[0] = b'X';
        assert!(matches!(Denoiser::read_from(&buf[..]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn featurize_scales_forces() {
        let mut s = ProblemSpec::cantilever(8, 4, 0.5);
        s.loads[0].fy = 4.0;
        let c = featurize(&s);
        assert_eq!(c.loads[0], [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.supports[0][..2], [-1.0, -1.0]);
    }

    #[test]
    fn embedding_block_structure() {
        // Specs differing only in volume fraction differ only in the VF block.
        let d = Denoiser::new(UNetConfig::default(), 5, 1000);
        let a = ProblemSpec::cantilever(8, 4, 0.3);
        let mut b = a.clone();
        b.volume_fraction = 0.55;
        let ea = d.net.embed(&d.params, &featurize(&a));
        let eb = d.net.embed(&d.params, &featurize(&b));
        let cfg = &d.net.config;
        let vf = 2 * cfg.point_out..2 * cfg.point_out + cfg.vf_dim;
        for k in 0..ea.len() {
            if vf.contains(&k) {
                continue;
            }
            assert_eq!(ea[k], eb[k], "entry {k}");
        }
        assert!(vf.clone().any(|k| ea[k] != eb[k]));
    }

    #[test]
    fn duplicated_load_pools_to_the_same_embedding() {
        let d = Denoiser::new(UNetConfig::default(), 6, 1000);
        let a = ProblemSpec::cantilever(8, 4, 0.3);
        let mut b = a.clone();
        b.loads.push(b.loads[0]);
        assert_eq!(d.net.embed(&d.params, &featurize(&a)), d.net.embed(&d.params, &featurize(&b)));
    }
}
