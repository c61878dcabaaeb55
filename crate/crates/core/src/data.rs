//! Sequence files, manifests, boundary targets, joint-speed statistics and
//! the synthetic speed-contrast generator.
//!
//! Sequence file layout (little-endian):
//!
//! ```text
//! b"DESTSEQ1" | C u32 | T u32 | V u32 | C·T·V f64 in (c,t,v) order | T u32 labels
//! ```
//!
//! A manifest is a JSON array of `{id, data_path, label_in_file}`; relative
//! paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, MotionChannels};
use crate::error::{DestError, Result};
use crate::loss::BoundaryTarget;
use crate::tensor::Tensor;

pub const SEQ_MAGIC: &[u8; 8] = b"DESTSEQ1";

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub id: String,
    /// `C×T×V`.
    pub coords: Tensor,
    pub labels: Vec<usize>,
}

impl SequenceSample {
    pub fn new(id: impl Into<String>, coords: Tensor, labels: Vec<usize>) -> Result<Self> {
        let s = SequenceSample {
            id: id.into(),
            coords,
            labels,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let sh = self.coords.shape();
        if sh.len() != 3 {
            return Err(DestError::Data(format!(
                "sequence {}: coordinates must be C×T×V, got {sh:?}",
                self.id
            )));
        }
        if self.labels.len() != sh[1] {
            return Err(DestError::Data(format!(
                "sequence {}: {} labels for {} frames",
                self.id,
                self.labels.len(),
                sh[1]
            )));
        }
        if let Some(i) = self.coords.data().iter().position(|x| !x.is_finite()) {
            return Err(DestError::Data(format!(
                "sequence {}: non-finite coordinate at flat index {i}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.coords.shape()[2]
    }

    /// Keeps every `stride`-th frame.
    pub fn strided(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(DestError::Config("stride must be at least 1".into()));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let (c, t, v) = (self.channels(), self.frames(), self.joints());
        let keep: Vec<usize> = (0..t).step_by(stride).collect();
        let src = self.coords.data();
        let mut data = Vec::with_capacity(c * keep.len() * v);
        for ci in 0..c {
            for &ti in &keep {
                data.extend_from_slice(&src[(ci * t + ti) * v..(ci * t + ti + 1) * v]);
            }
        }
        let labels = keep.iter().map(|&ti| self.labels[ti]).collect();
        SequenceSample::new(self.id.clone(), Tensor::new(vec![c, keep.len(), v], data)?, labels)
    }

    /// Frame differences `x[:,t,v] − x[:,t−1,v]` (zero at `t = 0`), appended
    /// to or replacing the coordinates.
    pub fn with_motion(&self, mode: MotionChannels) -> Self {
        if mode == MotionChannels::None {
            return self.clone();
        }
        let (c, t, v) = (self.channels(), self.frames(), self.joints());
        let x = self.coords.data();
        let mut vel = vec![0.0; c * t * v];
        for ci in 0..c {
            for ti in 1..t {
                for vi in 0..v {
                    let i = (ci * t + ti) * v + vi;
                    vel[i] = x[i] - x[i - v];
                }
            }
        }
        let data = match mode {
            MotionChannels::Append => [x, &vel[..]].concat(),
            _ => vel,
        };
        let coords = Tensor::new(vec![mode.channels(c), t, v], data).expect("shape matches data");
        SequenceSample {
            id: self.id.clone(),
            coords,
            labels: self.labels.clone(),
        }
    }

    /// Per-channel z-score over all frames and joints. Constant channels are
    /// only centred.
    pub fn zscored(&self) -> Self {
        let (c, t, v) = (self.channels(), self.frames(), self.joints());
        let mut out = self.clone();
        let n = (t * v) as f64;
        for chunk in out.coords.data_mut().chunks_mut(t * v).take(c) {
            let mean = chunk.iter().sum::<f64>() / n;
            let var = chunk.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for x in chunk.iter_mut() {
                *x = (*x - mean) / sd;
            }
        }
        out
    }
}

pub fn encode_sequence(s: &SequenceSample) -> Vec<u8> {
    let (c, t, v) = (s.channels(), s.frames(), s.joints());
    let mut out = Vec::with_capacity(8 + 12 + 8 * c * t * v + 4 * t);
    out.extend_from_slice(SEQ_MAGIC);
    for d in [c, t, v] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in s.coords.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &l in &s.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out
}

pub fn decode_sequence(bytes: &[u8], id: &str, origin: &Path) -> Result<SequenceSample> {
    let perr = |msg: String| DestError::Parse {
        path: origin.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < 20 || &bytes[..8] != SEQ_MAGIC {
        return Err(perr("missing DESTSEQ1 header".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let (c, t, v) = (u32_at(8), u32_at(12), u32_at(16));
    let n = c * t * v;
    let want = 20 + 8 * n + 4 * t;
    if bytes.len() != want {
        return Err(perr(format!(
            "expected {want} bytes for C={c} T={t} V={v}, found {}",
            bytes.len()
        )));
    }
    let coords: Vec<f64> = bytes[20..20 + 8 * n]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels: Vec<usize> = bytes[20 + 8 * n..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    SequenceSample::new(id, Tensor::new(vec![c, t, v], coords)?, labels)
}

pub fn write_sequence(path: &Path, s: &SequenceSample) -> Result<()> {
    fs::write(path, encode_sequence(s)).map_err(|e| DestError::io(path, e))
}

pub fn read_sequence(path: &Path, id: &str) -> Result<SequenceSample> {
    let bytes = fs::read(path).map_err(|e| DestError::io(path, e))?;
    decode_sequence(&bytes, id, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub data_path: PathBuf,
    pub label_in_file: bool,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| DestError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DestError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Raw samples in manifest order.
pub fn load_raw(manifest: &Path) -> Result<Vec<SequenceSample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            if !e.label_in_file {
                return Err(DestError::Data(format!(
                    "sequence {}: external label files are not supported",
                    e.id
                )));
            }
            let p = base.join(&e.data_path);
            if !p.exists() {
                return Err(DestError::Data(format!(
                    "sequence {}: file {} not found",
                    e.id,
                    p.display()
                )));
            }
            read_sequence(&p, &e.id)
        })
        .collect()
}

/// Loads every sequence in the manifest, then strides, adds motion channels
/// and (optionally) z-scores.
pub fn load_dataset(manifest: &Path, cfg: &DataConfig) -> Result<Vec<SequenceSample>> {
    load_raw(manifest)?
        .into_iter()
        .map(|s| {
            let s = s.strided(cfg.stride)?.with_motion(cfg.motion);
            Ok(if cfg.normalize { s.zscored() } else { s })
        })
        .collect()
}

/// Writes one file per sample plus `manifest.json`; returns the manifest path.
pub fn save_dataset(dir: &Path, samples: &[SequenceSample]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| DestError::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let name = PathBuf::from(format!("{}.seq", s.id));
        write_sequence(&dir.join(&name), s)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            data_path: name,
            label_in_file: true,
        });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&entries).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| DestError::io(&path, e))?;
    Ok(path)
}

pub fn derive_boundaries(labels: &[usize]) -> BoundaryTarget {
    BoundaryTarget::from_labels(labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpeedStats {
    pub mean: Vec<f64>,
    /// Population variance.
    pub variance: Vec<f64>,
    pub frames: usize,
}

impl JointSpeedStats {
    /// Joint indices from fastest to slowest mean speed.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.mean.len()).collect();
        idx.sort_by(|&a, &b| self.mean[b].total_cmp(&self.mean[a]).then(a.cmp(&b)));
        idx
    }
}

/// Mean and variance per joint of `‖x[:,t,v] − x[:,t−1,v]‖₂`.
pub fn joint_speed_stats(samples: &[SequenceSample]) -> Result<JointSpeedStats> {
    let joints = samples
        .first()
        .map(|s| s.joints())
        .ok_or_else(|| DestError::Data("speed statistics need at least one sequence".into()))?;
    let mut sum = vec![0.0; joints];
    let mut sq = vec![0.0; joints];
    let mut n = 0usize;
    let mut speeds = Vec::new();
    for s in samples {
        if s.joints() != joints {
            return Err(DestError::Data(format!(
                "sequence {} has {} joints, expected {joints}",
                s.id,
                s.joints()
            )));
        }
        let (c, t) = (s.channels(), s.frames());
        if t < 2 {
            log::warn!("sequence {} has fewer than 2 frames; skipped", s.id);
            continue;
        }
        let x = s.coords.data();
        for ti in 1..t {
            for v in 0..joints {
                let d2: f64 = (0..c)
                    .map(|ci| {
                        let d = x[(ci * t + ti) * joints + v] - x[(ci * t + ti - 1) * joints + v];
                        d * d
                    })
                    .sum();
                speeds.push(d2.sqrt());
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(DestError::Data("no sequence has at least 2 frames".into()));
    }
    for frame in speeds.chunks(joints) {
        for (v, s) in frame.iter().enumerate() {
            sum[v] += s;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    for frame in speeds.chunks(joints) {
        for (v, s) in frame.iter().enumerate() {
            sq[v] += (s - mean[v]) * (s - mean[v]);
        }
    }
    Ok(JointSpeedStats {
        mean,
        variance: sq.iter().map(|s| s / n as f64).collect(),
        frames: n,
    })
}

/// Per-class angular frequency of every joint's oscillation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// `speed[class][joint]`, radians per frame.
    pub speed: Vec<Vec<f64>>,
    /// Oscillation amplitude per joint.
    pub amplitude: Vec<f64>,
    /// Standard deviation of per-frame drift velocity.
    pub drift: f64,
    /// Standard deviation of additive coordinate noise.
    pub noise: f64,
    /// Joints that are fast in every class.
    pub fast_joints: Vec<usize>,
}

pub const FAST_SPEED: f64 = 0.6;
pub const BOOST_SPEED: f64 = 0.3;
pub const SLOW_SPEED: f64 = 0.05;

/// Ankles and feet of the bundled 25-joint layout.
pub const KINECT25_FAST_JOINTS: [usize; 4] = [14, 15, 18, 19];

impl SpeedProfile {
    pub fn classes(&self) -> usize {
        self.speed.len()
    }

    pub fn joints(&self) -> usize {
        self.amplitude.len()
    }

    /// A fixed set of always-fast joints, and per class a disjoint,
    /// equally sized set of moderately fast joints. Every class has the same
    /// multiset of frequencies, so only the joint identity tells them apart.
    pub fn speed_contrast(classes: usize, joints: usize) -> Result<Self> {
        if classes < 2 {
            return Err(DestError::Config(format!(
                "speed-contrast needs at least 2 classes, got {classes}"
            )));
        }
        let fast: Vec<usize> = if joints == 25 {
            KINECT25_FAST_JOINTS.to_vec()
        } else {
            let n = (joints / 6).max(1);
            (joints.saturating_sub(n)..joints).collect()
        };
        let rest: Vec<usize> = (0..joints).filter(|j| !fast.contains(j)).collect();
        let per_class = rest.len() / classes;
        if per_class == 0 {
            return Err(DestError::Config(format!(
                "{joints} joints leave too few non-fast joints for {classes} classes"
            )));
        }
        let speed = (0..classes)
            .map(|c| {
                let mut row = vec![SLOW_SPEED; joints];
                for &j in &fast {
                    row[j] = FAST_SPEED;
                }
                for &j in &rest[c * per_class..(c + 1) * per_class] {
                    row[j] = BOOST_SPEED;
                }
                row
            })
            .collect();
        Ok(SpeedProfile {
            speed,
            amplitude: vec![0.5; joints],
            drift: 0.002,
            noise: 0.02,
            fast_joints: fast,
        })
    }

    /// Everything at rest.
    pub fn still(classes: usize, joints: usize) -> Self {
        SpeedProfile {
            speed: vec![vec![0.0; joints]; classes],
            amplitude: vec![0.5; joints],
            drift: 0.0,
            noise: 0.0,
            fast_joints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes() < 2 {
            return Err(DestError::Config("a profile needs at least 2 classes".into()));
        }
        if self.speed.iter().any(|r| r.len() != self.joints()) {
            return Err(DestError::Config("every class needs one speed per joint".into()));
        }
        let bad = |x: &f64| !x.is_finite() || *x < 0.0;
        if self.speed.iter().flatten().any(bad)
            || self.amplitude.iter().any(bad)
            || bad(&self.drift)
            || bad(&self.noise)
        {
            return Err(DestError::Config(
                "profile speeds, amplitudes and noise levels must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sequences: usize,
    pub frames: usize,
    pub channels: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Segment lengths between `T/12` and `T/4`.
    pub fn new(sequences: usize, frames: usize, seed: u64) -> Self {
        let min_segment = (frames / 12).max(4);
        SynthSpec {
            sequences,
            frames,
            channels: 3,
            min_segment,
            max_segment: (frames / 4).max(min_segment),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.channels == 0 {
            return Err(DestError::Config("frames and channels must be positive".into()));
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return Err(DestError::Config(format!(
                "invalid segment bounds [{}, {}]",
                self.min_segment, self.max_segment
            )));
        }
        Ok(())
    }
}

/// Per-sequence class layout: random segment lengths within bounds, no two
/// neighbouring segments share a class.
fn sample_labels(rng: &mut ChaCha8Rng, spec: &SynthSpec, classes: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(spec.frames);
    let mut prev: Option<usize> = None;
    while labels.len() < spec.frames {
        let choices: Vec<usize> = (0..classes).filter(|&c| Some(c) != prev).collect();
        let c = *choices.choose(rng).expect("at least two classes");
        let len = rng.gen_range(spec.min_segment..=spec.max_segment);
        let len = len.min(spec.frames - labels.len());
        labels.extend(std::iter::repeat(c).take(len));
        prev = Some(c);
    }
    labels
}

/// Per-sequence perturbation of the shared rest pose.
pub const POSE_JITTER: f64 = 0.05;

/// Sinusoid-plus-drift joint trajectories around one rest pose shared by the
/// whole dataset. The phase integrates the class's
/// frequency, so trajectories stay continuous across segment changes.
pub fn synthesize(profile: &SpeedProfile, spec: &SynthSpec) -> Result<Vec<SequenceSample>> {
    profile.validate()?;
    spec.validate()?;
    let (c, t, v) = (spec.channels, spec.frames, profile.joints());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, profile.noise.max(0.0)).map_err(|e| DestError::Config(e.to_string()))?;
    let drift = Normal::new(0.0, profile.drift.max(0.0)).map_err(|e| DestError::Config(e.to_string()))?;
    let rest_pose: Vec<f64> = (0..c * v).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let jitter = Normal::new(0.0, POSE_JITTER).expect("valid jitter");
    (0..spec.sequences)
        .map(|i| {
            let labels = sample_labels(&mut rng, spec, profile.classes());
            let base: Vec<f64> = rest_pose.iter().map(|p| p + jitter.sample(&mut rng)).collect();
            let mut phase: Vec<f64> = (0..c * v)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            let mut offset = vec![0.0; c * v];
            let mut velocity = vec![0.0; c * v];
            let mut data = vec![0.0; c * t * v];
            for ti in 0..t {
                let class = labels[ti];
                if ti == 0 || labels[ti - 1] != class {
                    for x in velocity.iter_mut() {
                        *x = drift.sample(&mut rng);
                    }
                }
                for ci in 0..c {
                    for vi in 0..v {
                        let k = ci * v + vi;
                        if ti > 0 {
                            phase[k] += profile.speed[class][vi];
                            offset[k] += velocity[k];
                        }
                        let n = if profile.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                        data[(ci * t + ti) * v + vi] =
                            base[k] + offset[k] + profile.amplitude[vi] * phase[k].sin() + n;
                    }
                }
            }
            SequenceSample::new(format!("seq_{i:04}"), Tensor::new(vec![c, t, v], data)?, labels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_of_small_sequence() {
        let b = derive_boundaries(&[0, 0, 1, 1, 2]);
        assert_eq!(b.indicator, vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(b.positive_weight, Some(2.5));
    }

    #[test]
    fn encode_decode_is_bitwise() {
        let spec = SynthSpec::new(1, 30, 1);
        let s = &synthesize(&SpeedProfile::speed_contrast(2, 8).unwrap(), &spec).unwrap()[0];
        let back = decode_sequence(&encode_sequence(s), &s.id, Path::new("mem")).unwrap();
        assert_eq!(&back, s);
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let s = SequenceSample::new("a", Tensor::zeros(&[1, 2, 1]), vec![0, 0]).unwrap();
        let bytes = encode_sequence(&s);
        assert!(matches!(
            decode_sequence(&bytes[..bytes.len() - 1], "a", Path::new("x")),
            Err(DestError::Parse { .. })
        ));
    }

    #[test]
    fn label_count_mismatch_is_data_error() {
        assert!(matches!(
            SequenceSample::new("a", Tensor::zeros(&[1, 3, 1]), vec![0]),
            Err(DestError::Data(_))
        ));
    }

    #[test]
    fn single_joint_unit_speed() {
        let data = vec![0.0, 1.0, 2.0, 3.0];
        let s = SequenceSample::new("a", Tensor::new(vec![1, 4, 1], data).unwrap(), vec![0; 4]).unwrap();
        let st = joint_speed_stats(&[s]).unwrap();
        assert_eq!(st.mean, vec![1.0]);
        assert_eq!(st.variance, vec![0.0]);
    }

    #[test]
    fn still_profile_is_static() {
        let spec = SynthSpec::new(2, 20, 5);
        for s in synthesize(&SpeedProfile::still(2, 3), &spec).unwrap() {
            let st = joint_speed_stats(&[s]).unwrap();
            assert!(st.mean.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn fast_joints_rank_first() {
        let profile = SpeedProfile::speed_contrast(4, 25).unwrap();
        let data = synthesize(&profile, &SynthSpec::new(3, 200, 7)).unwrap();
        let rank = joint_speed_stats(&data).unwrap().ranking();
        let mut top: Vec<usize> = rank[..4].to_vec();
        top.sort();
        assert_eq!(top, KINECT25_FAST_JOINTS);
    }

    #[test]
    fn classes_share_frequency_multiset() {
        let p = SpeedProfile::speed_contrast(4, 25).unwrap();
        let sorted = |r: &Vec<f64>| {
            let mut r = r.clone();
            r.sort_by(f64::total_cmp);
            r
        };
        for row in &p.speed[1..] {
            assert_eq!(sorted(row), sorted(&p.speed[0]));
            assert_ne!(row, &p.speed[0]);
        }
    }

    #[test]
    fn one_class_rejected() {
        assert!(matches!(SpeedProfile::speed_contrast(1, 25), Err(DestError::Config(_))));
    }

    #[test]
    fn zscore_centres_channels() {
        let spec = SynthSpec::new(1, 50, 2);
        let s = synthesize(&SpeedProfile::speed_contrast(2, 6).unwrap(), &spec).unwrap()[0].zscored();
        for chunk in s.coords.data().chunks(50 * 6) {
            let m = chunk.iter().sum::<f64>() / chunk.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn stride_keeps_every_other_frame() {
        let s = SequenceSample::new(
            "a",
            Tensor::new(vec![1, 5, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![0, 0, 1, 1, 2],
        )
        .unwrap();
        let t = s.strided(2).unwrap();
        assert_eq!(t.coords.data(), &[0.0, 2.0, 4.0]);
        assert_eq!(t.labels, vec![0, 1, 2]);
    }
}
