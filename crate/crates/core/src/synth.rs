//! Labeled synthetic traces.
//!
//! Packet sizes are normal draws clamped to `[40, 65535]`; inter-arrival
//! gaps are log-normal with the profile's mean and standard deviation.
//! Every flow gets its own 5-tuple and its own ChaCha stream, so a flow's
//! packets depend only on the seed and the flow's position.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ClassLabel, Flow, FlowKey};
use crate::packet_io::{PacketRecord, PROTO_TCP, TCP_ACK, TCP_PSH};

pub const MIN_PACKET_SIZE: f64 = 40.0;
pub const MAX_PACKET_SIZE: f64 = 65535.0;
/// Generated gaps are capped well below the default idle timeout.
pub const MAX_GAP_US: u64 = 30_000_000;
const EPOCH_US: u64 = 1_600_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub size_mean: f64,
    pub size_std: f64,
    /// Mean of the inter-arrival distribution, seconds.
    pub iat_mean: f64,
    /// Standard deviation of the inter-arrival distribution, seconds.
    pub iat_std: f64,
    pub ack_prob: f64,
    pub rwnd_range: (u32, u32),
    pub flows: usize,
    pub packets_per_flow: (usize, usize),
}

impl ClassProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        let finite = [self.size_mean, self.size_std, self.iat_mean, self.iat_std, self.ack_prob];
        if finite.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad(format!("profile parameters must be finite and non-negative: {self:?}"));
        }
        if self.size_mean == 0.0 && self.size_std == 0.0 {
            return bad("degenerate size distribution (zero mean and zero std)".into());
        }
        if self.iat_mean == 0.0 {
            return bad("inter-arrival mean must be positive".into());
        }
        if self.ack_prob > 1.0 {
            return bad(format!("ack_prob {} exceeds 1", self.ack_prob));
        }
        if self.rwnd_range.0 > self.rwnd_range.1 {
            return bad(format!("empty receive-window range {:?}", self.rwnd_range));
        }
        let (lo, hi) = self.packets_per_flow;
        if lo < 2 || lo > hi {
            return bad(format!("packets_per_flow {:?} must satisfy 2 <= min <= max", self.packets_per_flow));
        }
        Ok(())
    }

    /// `(mu, sigma)` of the underlying normal for the inter-arrival log-normal.
    fn iat_lognormal(&self) -> (f64, f64) {
        let cv2 = (self.iat_std / self.iat_mean).powi(2);
        let sigma2 = cv2.ln_1p();
        (self.iat_mean.ln() - sigma2 / 2.0, sigma2.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledProfile {
    pub label: ClassLabel,
    pub profile: ClassProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Well separated classes.
    ScidmzLike,
    /// Overlapping classes, with part of the unknown traffic mimicking the
    /// known class.
    GeneralLike,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::ScidmzLike => "scidmz-like",
            Preset::GeneralLike => "general-like",
        }
    }

    pub fn profiles(self) -> Vec<LabeledProfile> {
        match self {
            Preset::ScidmzLike => scidmz_like(200),
            Preset::GeneralLike => general_like(200),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scidmz-like" => Ok(Preset::ScidmzLike),
            "general-like" => Ok(Preset::GeneralLike),
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }
}

/// Bulk transfers (near-MTU packets, sub-millisecond gaps) against small,
/// slow request/response traffic. Size means are 15 standard deviations
/// apart. Flows run up to 80k packets so that 1000-packet subflows still
/// reach the 15-subflow floor within the first quarter of a flow.
pub fn scidmz_like(flows_per_class: usize) -> Vec<LabeledProfile> {
    vec![
        LabeledProfile {
            label: ClassLabel::Known,
            profile: ClassProfile {
                size_mean: 1400.0,
                size_std: 60.0,
                iat_mean: 0.000_2,
                iat_std: 0.000_2,
                ack_prob: 0.95,
                rwnd_range: (262_144, 1_048_576),
                flows: flows_per_class,
                packets_per_flow: (4_000, 80_000),
            },
        },
        LabeledProfile {
            label: ClassLabel::Unknown,
            profile: ClassProfile {
                size_mean: 500.0,
                size_std: 60.0,
                iat_mean: 0.002,
                iat_std: 0.003,
                ack_prob: 0.8,
                rwnd_range: (16_384, 65_535),
                flows: flows_per_class,
                packets_per_flow: (4_000, 80_000),
            },
        },
    ]
}

/// Overlapping classes: a quarter of the unknown flows are drawn from a
/// profile close to the known one.
pub fn general_like(flows_per_class: usize) -> Vec<LabeledProfile> {
    let mimic = flows_per_class / 4;
    vec![
        LabeledProfile {
            label: ClassLabel::Known,
            profile: ClassProfile {
                size_mean: 900.0,
                size_std: 450.0,
                iat_mean: 0.002,
                iat_std: 0.004,
                ack_prob: 0.9,
                rwnd_range: (32_768, 262_144),
                flows: flows_per_class,
                packets_per_flow: (500, 3_000),
            },
        },
        LabeledProfile {
            label: ClassLabel::Unknown,
            profile: ClassProfile {
                size_mean: 600.0,
                size_std: 450.0,
                iat_mean: 0.003,
                iat_std: 0.006,
                ack_prob: 0.85,
                rwnd_range: (16_384, 131_072),
                flows: flows_per_class - mimic,
                packets_per_flow: (500, 3_000),
            },
        },
        LabeledProfile {
            label: ClassLabel::Unknown,
            profile: ClassProfile {
                size_mean: 860.0,
                size_std: 460.0,
                iat_mean: 0.002_1,
                iat_std: 0.004,
                ack_prob: 0.9,
                rwnd_range: (32_768, 262_144),
                flows: mimic,
                packets_per_flow: (500, 3_000),
            },
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    /// Flows in generation order, each labeled.
    pub flows: Vec<Flow>,
}

impl SyntheticTrace {
    pub fn flows_of(&self, label: ClassLabel) -> Vec<Flow> {
        self.flows
            .iter()
            .filter(|f| f.label == Some(label))
            .cloned()
            .collect()
    }

    pub fn packet_count(&self) -> usize {
        self.flows.iter().map(Flow::len).sum()
    }

    /// All packets merged by timestamp; ties keep flow order.
    pub fn records(&self) -> Vec<PacketRecord> {
        let mut all: Vec<(u64, usize, usize)> = self
            .flows
            .iter()
            .enumerate()
            .flat_map(|(f, flow)| {
                flow.packets
                    .iter()
                    .enumerate()
                    .map(move |(i, p)| (p.timestamp_us, f, i))
            })
            .collect();
        all.sort_unstable();
        all.into_iter()
            .map(|(_, f, i)| self.flows[f].packets[i])
            .collect()
    }

    pub fn labels(&self) -> HashMap<FlowKey, ClassLabel> {
        self.flows
            .iter()
            .filter_map(|f| f.label.map(|l| (f.key, l)))
            .collect()
    }

    /// Sidecar lines `flow_key label`.
    pub fn write_labels<W: Write>(&self, mut out: W) -> io::Result<()> {
        for f in &self.flows {
            if let Some(label) = f.label {
                writeln!(out, "{} {}", f.key, label)?;
            }
        }
        out.flush()
    }
}

/// Parses `flow_key label` lines; blank lines and `#` comments are skipped.
pub fn parse_labels(text: &str) -> Result<HashMap<FlowKey, ClassLabel>> {
    let mut labels = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let (key, label) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| parse_err("expected `flow_key label`".into()))?;
        let key: FlowKey = key.parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let label: ClassLabel = label.trim().parse().map_err(|e: Error| parse_err(e.to_string()))?;
        labels.insert(key, label);
    }
    Ok(labels)
}

fn flow_endpoints(global_index: usize, profile_index: usize) -> (Ipv4Addr, u16, Ipv4Addr, u16) {
    let host = u32::try_from(global_index + 1).expect("too many synthetic flows");
    assert!(host < 1 << 24, "too many synthetic flows");
    let src = Ipv4Addr::from(0x0A00_0000 | host);
    let src_port = 20_000 + (global_index % 40_000) as u16;
    let dst = Ipv4Addr::new(172, 16, (profile_index % 256) as u8, 1);
    let dst_port = 5_000 + profile_index as u16;
    (src, src_port, dst, dst_port)
}

fn generate_flow(
    profile: &ClassProfile,
    label: ClassLabel,
    profile_index: usize,
    global_index: usize,
    seed: u64,
) -> Result<Flow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(global_index as u64);

    let size_dist = Normal::new(profile.size_mean, profile.size_std)
        .map_err(|e| Error::invalid(format!("size distribution: {e}")))?;
    let (mu, sigma) = profile.iat_lognormal();
    let gap_dist =
        LogNormal::new(mu, sigma).map_err(|e| Error::invalid(format!("gap distribution: {e}")))?;

    let (lo, hi) = profile.packets_per_flow;
    let count = rng.random_range(lo..=hi);
    let (src_ip, src_port, dst_ip, dst_port) = flow_endpoints(global_index, profile_index);
    let mut ts = EPOCH_US + rng.random_range(0..60_000_000u64);
    let mut packets = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            let gap_us = (gap_dist.sample(&mut rng) * 1e6).round() as u64;
            ts += gap_us.clamp(1, MAX_GAP_US);
        }
        let size = size_dist
            .sample(&mut rng)
            .round()
            .clamp(MIN_PACKET_SIZE, MAX_PACKET_SIZE) as u32;
        let tcp_flags = if rng.random_bool(profile.ack_prob) {
            TCP_ACK | TCP_PSH
        } else {
            TCP_PSH
        };
        let recv_window_bytes = rng.random_range(profile.rwnd_range.0..=profile.rwnd_range.1);
        packets.push(PacketRecord {
            timestamp_us: ts,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol: PROTO_TCP,
            size_bytes: size,
            tcp_flags,
            recv_window_bytes,
        });
    }
    let key = FlowKey::of(&packets[0], true);
    Ok(Flow {
        key,
        packets,
        label: Some(label),
    })
}

pub fn generate(profiles: &[LabeledProfile], seed: u64) -> Result<SyntheticTrace> {
    if profiles.is_empty() {
        return Err(Error::invalid("at least one class profile is required"));
    }
    for p in profiles {
        p.profile.validate()?;
    }
    let mut flows = Vec::new();
    let mut global = 0;
    for (pi, lp) in profiles.iter().enumerate() {
        for _ in 0..lp.profile.flows {
            flows.push(generate_flow(&lp.profile, lp.label, pi, global, seed)?);
            global += 1;
        }
    }
    Ok(SyntheticTrace { flows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::assemble_flows;

    fn small(flows: usize, range: (usize, usize)) -> ClassProfile {
        ClassProfile {
            size_mean: 800.0,
            size_std: 100.0,
            iat_mean: 0.001,
            iat_std: 0.002,
            ack_prob: 0.5,
            rwnd_range: (1000, 2000),
            flows,
            packets_per_flow: range,
        }
    }

    fn labeled(label: ClassLabel, profile: ClassProfile) -> LabeledProfile {
        LabeledProfile { label, profile }
    }

    #[test]
    fn flow_count_and_lengths() {
        let t = generate(&[labeled(ClassLabel::Known, small(10, (50, 100)))], 1).unwrap();
        assert_eq!(t.flows.len(), 10);
        for f in &t.flows {
            assert!((50..=100).contains(&f.len()));
            assert!(f.packets.windows(2).all(|w| w[0].timestamp_us < w[1].timestamp_us));
            assert!(f.packets.iter().all(|p| (40..=65535).contains(&p.size_bytes)));
            assert!(f.packets.iter().all(|p| (1000..=2000).contains(&p.recv_window_bytes)));
        }
        let keys: std::collections::HashSet<_> = t.flows.iter().map(|f| f.key).collect();
        assert_eq!(keys.len(), 10);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = [
            labeled(ClassLabel::Known, small(5, (20, 40))),
            labeled(ClassLabel::Unknown, small(5, (20, 40))),
        ];
        let render = |t: &SyntheticTrace| {
            let mut out = Vec::new();
            crate::packet_io::write_records_to(&t.records(), &mut out).unwrap();
            out
        };
        let a = generate(&p, 7).unwrap();
        let b = generate(&p, 7).unwrap();
        assert_eq!(render(&a), render(&b));
        assert_ne!(render(&a), render(&generate(&p, 8).unwrap()));
    }

    #[test]
    fn degenerate_profiles_rejected() {
        let mut p = small(1, (10, 10));
        p.size_mean = 0.0;
        p.size_std = 0.0;
        assert!(generate(&[labeled(ClassLabel::Known, p)], 0).is_err());
        let mut p = small(1, (1, 10));
        assert!(generate(&[labeled(ClassLabel::Known, p.clone())], 0).is_err());
        p.packets_per_flow = (10, 5);
        assert!(generate(&[labeled(ClassLabel::Known, p)], 0).is_err());
        assert!(generate(&[], 0).is_err());
    }

    #[test]
    fn size_mean_within_three_standard_errors() {
        let t = generate(&[labeled(ClassLabel::Known, small(100, (1000, 1000)))], 3).unwrap();
        let sizes: Vec<f64> = t.flows.iter().flat_map(|f| f.packets.iter().map(|p| f64::from(p.size_bytes))).collect();
        assert_eq!(sizes.len(), 100_000);
        let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
        // clamping at 40 is unreachable from N(800, 100); rounding adds no bias
        let bound = 3.0 * 100.0 / (sizes.len() as f64).sqrt();
        assert!((mean - 800.0).abs() <= bound, "mean {mean}, bound {bound}");
    }

    #[test]
    fn iat_lognormal_matches_requested_moments() {
        let p = small(1, (2, 2));
        let (mu, sigma) = p.iat_lognormal();
        let mean = (mu + sigma * sigma / 2.0).exp();
        let var = (sigma * sigma).exp_m1() * (2.0 * mu + sigma * sigma).exp();
        assert!((mean - 0.001).abs() < 1e-15);
        assert!((var.sqrt() - 0.002).abs() < 1e-12);
    }

    #[test]
    fn flows_survive_reassembly() {
        let p = [
            labeled(ClassLabel::Known, small(8, (30, 60))),
            labeled(ClassLabel::Unknown, small(8, (30, 60))),
        ];
        let t = generate(&p, 11).unwrap();
        let mut flows = assemble_flows(&t.records(), true, crate::flow::DEFAULT_IDLE_TIMEOUT_US).unwrap();
        let mut original = t.flows.clone();
        for f in &mut original {
            f.label = None;
        }
        flows.sort_by_key(|f| f.key);
        original.sort_by_key(|f| f.key);
        assert_eq!(flows, original);
    }

    #[test]
    fn labels_sidecar_round_trip() {
        let p = [
            labeled(ClassLabel::Known, small(3, (2, 5))),
            labeled(ClassLabel::Unknown, small(2, (2, 5))),
        ];
        let t = generate(&p, 2).unwrap();
        let mut out = Vec::new();
        t.write_labels(&mut out).unwrap();
        let parsed = parse_labels(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(parsed, t.labels());
        assert_eq!(parsed.values().filter(|l| **l == ClassLabel::Unknown).count(), 2);
        assert!(matches!(parse_labels("10.0.0.1:1-10.0.0.2:2/6 maybe"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn presets_parse() {
        assert_eq!("scidmz-like".parse::<Preset>().unwrap(), Preset::ScidmzLike);
        assert!("dmz".parse::<Preset>().is_err());
        for preset in [Preset::ScidmzLike, Preset::GeneralLike] {
            for p in preset.profiles() {
                p.profile.validate().unwrap();
            }
        }
        let sep = scidmz_like(1);
        let gap = (sep[0].profile.size_mean - sep[1].profile.size_mean).abs();
        assert!(gap >= 5.0 * sep[0].profile.size_std.max(sep[1].profile.size_std));
    }
}
