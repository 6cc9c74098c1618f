//! Flow assembly by 5-tuple and segmentation into N-packet subflows.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet_io::PacketRecord;

pub const DEFAULT_IDLE_TIMEOUT_US: u64 = 60_000_000;

/// Ground-truth or predicted traffic class. `Unknown` is the positive class
/// everywhere a score is involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Known,
    Unknown,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Known, ClassLabel::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Known => "known",
            ClassLabel::Unknown => "unknown",
        }
    }

    /// 1.0 for unknown, 0.0 for known.
    pub fn target(self) -> f64 {
        match self {
            ClassLabel::Known => 0.0,
            ClassLabel::Unknown => 1.0,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" | "k" => Ok(ClassLabel::Known),
            "unknown" | "u" => Ok(ClassLabel::Unknown),
            other => Err(Error::invalid(format!("unrecognised class label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: Ipv4Addr,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (ip, port) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::invalid(format!("endpoint {s:?} lacks a port")))?;
        Ok(Endpoint {
            ip: ip
                .parse()
                .map_err(|_| Error::invalid(format!("bad IPv4 address in {s:?}")))?,
            port: port
                .parse()
                .map_err(|_| Error::invalid(format!("bad port in {s:?}")))?,
        })
    }
}

/// Flow identity. Rendered as `a_ip:a_port-b_ip:b_port/proto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub endpoint_a: Endpoint,
    pub endpoint_b: Endpoint,
    pub protocol: u8,
}

impl FlowKey {
    /// With `bidirectional`, the endpoints are sorted so both directions of
    /// a conversation share one key; otherwise `a` is the source.
    pub fn of(packet: &PacketRecord, bidirectional: bool) -> Self {
        let src = Endpoint {
            ip: packet.src_ip,
            port: packet.src_port,
        };
        let dst = Endpoint {
            ip: packet.dst_ip,
            port: packet.dst_port,
        };
        let (endpoint_a, endpoint_b) = if bidirectional && dst < src {
            (dst, src)
        } else {
            (src, dst)
        };
        FlowKey {
            endpoint_a,
            endpoint_b,
            protocol: packet.protocol,
        }
    }
}

pub fn flow_key_of(packet: &PacketRecord, bidirectional: bool) -> FlowKey {
    FlowKey::of(packet, bidirectional)
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}/{}", self.endpoint_a, self.endpoint_b, self.protocol)
    }
}

impl FromStr for FlowKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed flow key {s:?}"));
        let (endpoints, proto) = s.rsplit_once('/').ok_or_else(bad)?;
        let (a, b) = endpoints.split_once('-').ok_or_else(bad)?;
        Ok(FlowKey {
            endpoint_a: a.parse()?,
            endpoint_b: b.parse()?,
            protocol: proto.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub key: FlowKey,
    pub packets: Vec<PacketRecord>,
    pub label: Option<ClassLabel>,
}

impl Flow {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Consecutive non-overlapping `n`-packet windows; the tail of fewer than
    /// `n` packets is not yielded.
    pub fn subflows(&self, n: usize) -> impl ExactSizeIterator<Item = Subflow<'_>> + '_ {
        assert!(n >= 1, "subflow size must be positive");
        self.packets
            .chunks_exact(n)
            .enumerate()
            .map(move |(index, packets)| Subflow {
                flow_key: self.key,
                index,
                packets,
            })
    }

    pub fn subflow_count(&self, n: usize) -> usize {
        self.packets.len() / n
    }
}

/// `n` consecutive packets of one flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subflow<'a> {
    pub flow_key: FlowKey,
    pub index: usize,
    pub packets: &'a [PacketRecord],
}

impl Subflow<'_> {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

/// Subflows of a flow and the number of trailing packets left over.
#[derive(Debug, Clone)]
pub struct Segmentation<'a> {
    pub subflows: Vec<Subflow<'a>>,
    pub dropped_packets: usize,
}

pub fn segment_subflows(flow: &Flow, n: usize) -> Result<Segmentation<'_>> {
    if n < 2 {
        return Err(Error::invalid(format!("subflow size must be at least 2, got {n}")));
    }
    Ok(Segmentation {
        subflows: flow.subflows(n).collect(),
        dropped_packets: flow.len() % n,
    })
}

/// Streaming 5-tuple flow table with idle-timeout splitting.
#[derive(Debug, Clone)]
pub struct FlowAssembler {
    pub bidirectional: bool,
    pub idle_timeout_us: u64,
    /// How far back in time a packet may arrive before it is rejected.
    pub reorder_slack_us: u64,
}

impl Default for FlowAssembler {
    fn default() -> Self {
        FlowAssembler {
            bidirectional: true,
            idle_timeout_us: DEFAULT_IDLE_TIMEOUT_US,
            reorder_slack_us: 0,
        }
    }
}

impl FlowAssembler {
    pub fn new(bidirectional: bool, idle_timeout_us: u64) -> Self {
        FlowAssembler {
            bidirectional,
            idle_timeout_us,
            ..Default::default()
        }
    }

    /// Flows are returned in order of their first packet.
    pub fn assemble(&self, records: &[PacketRecord]) -> Result<Vec<Flow>> {
        let mut flows: Vec<Flow> = Vec::new();
        // key -> (index into `flows`, latest timestamp seen in that flow)
        let mut active: HashMap<FlowKey, (usize, u64)> = HashMap::new();
        let mut latest = 0u64;

        for (i, packet) in records.iter().enumerate() {
            if i > 0 && packet.timestamp_us + self.reorder_slack_us < latest {
                return Err(Error::OutOfOrder {
                    timestamp_us: packet.timestamp_us,
                    previous_us: latest,
                    slack_us: self.reorder_slack_us,
                });
            }
            latest = latest.max(packet.timestamp_us);

            let key = FlowKey::of(packet, self.bidirectional);
            match active.get_mut(&key) {
                Some((idx, last_ts))
                    if packet.timestamp_us.saturating_sub(*last_ts) < self.idle_timeout_us =>
                {
                    let flow = &mut flows[*idx];
                    if packet.timestamp_us >= *last_ts {
                        flow.packets.push(*packet);
                    } else {
                        let pos = flow
                            .packets
                            .partition_point(|p| p.timestamp_us <= packet.timestamp_us);
                        flow.packets.insert(pos, *packet);
                    }
                    *last_ts = (*last_ts).max(packet.timestamp_us);
                }
                _ => {
                    active.insert(key, (flows.len(), packet.timestamp_us));
                    flows.push(Flow {
                        key,
                        packets: vec![*packet],
                        label: None,
                    });
                }
            }
        }
        Ok(flows)
    }
}

pub fn assemble_flows(
    records: &[PacketRecord],
    bidirectional: bool,
    idle_timeout_us: u64,
) -> Result<Vec<Flow>> {
    FlowAssembler::new(bidirectional, idle_timeout_us).assemble(records)
}

/// Applies labels by flow key; flows without an entry stay unlabeled.
pub fn apply_labels(flows: &mut [Flow], labels: &HashMap<FlowKey, ClassLabel>) {
    for flow in flows {
        flow.label = labels.get(&flow.key).copied();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet_io::{PROTO_TCP, TCP_ACK};
    use proptest::prelude::*;

    fn pkt(ts: u64, src: (u8, u16), dst: (u8, u16)) -> PacketRecord {
        PacketRecord {
            timestamp_us: ts,
            src_ip: Ipv4Addr::new(10, 0, 0, src.0),
            dst_ip: Ipv4Addr::new(10, 0, 0, dst.0),
            src_port: src.1,
            dst_port: dst.1,
            protocol: PROTO_TCP,
            size_bytes: 100,
            tcp_flags: TCP_ACK,
            recv_window_bytes: 1000,
        }
    }

    #[test]
    fn bidirectional_key_sorts_endpoints() {
        let p = pkt(0, (1, 4000), (2, 443));
        let k = FlowKey::of(&p, true);
        assert_eq!(k.endpoint_a.to_string(), "10.0.0.1:4000");
        assert_eq!(FlowKey::of(&p.mirrored(), true), k);
        assert_ne!(FlowKey::of(&p, false), FlowKey::of(&p.mirrored(), false));
    }

    #[test]
    fn flow_key_text_round_trip() {
        let k = FlowKey::of(&pkt(0, (9, 1), (3, 65535)), true);
        let s = k.to_string();
        assert_eq!(s, "10.0.0.3:65535-10.0.0.9:1/6");
        assert_eq!(s.parse::<FlowKey>().unwrap(), k);
        assert!("10.0.0.1:80/6".parse::<FlowKey>().is_err());
    }

    #[test]
    fn single_flow_under_timeout() {
        let recs: Vec<_> = (0..10).map(|i| pkt(i * 1_000_000, (1, 1), (2, 2))).collect();
        let flows = assemble_flows(&recs, true, 60_000_000).unwrap();
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].len(), 10);
    }

    #[test]
    fn idle_gap_splits_flow() {
        let mut ts = 0;
        let mut recs = Vec::new();
        for i in 0..10 {
            if i == 4 {
                ts += 61_000_000;
            } else if i > 0 {
                ts += 1_000;
            }
            recs.push(pkt(ts, (1, 1), (2, 2)));
        }
        let flows = assemble_flows(&recs, true, 60_000_000).unwrap();
        assert_eq!(flows.iter().map(Flow::len).collect::<Vec<_>>(), vec![4, 6]);
    }

    #[test]
    fn gap_equal_to_timeout_splits() {
        let recs = vec![pkt(0, (1, 1), (2, 2)), pkt(60_000_000, (1, 1), (2, 2))];
        assert_eq!(assemble_flows(&recs, true, 60_000_000).unwrap().len(), 2);
    }

    #[test]
    fn out_of_order_rejected() {
        let recs = vec![pkt(10, (1, 1), (2, 2)), pkt(5, (1, 1), (2, 2))];
        match assemble_flows(&recs, true, 60_000_000) {
            Err(Error::OutOfOrder { timestamp_us, .. }) => assert_eq!(timestamp_us, 5),
            other => panic!("expected out-of-order error, got {other:?}"),
        }
    }

    #[test]
    fn reorder_slack_reinserts_in_time_order() {
        let recs = vec![
            pkt(10, (1, 1), (2, 2)),
            pkt(20, (1, 1), (2, 2)),
            pkt(15, (1, 1), (2, 2)),
        ];
        let asm = FlowAssembler {
            reorder_slack_us: 10,
            ..Default::default()
        };
        let flows = asm.assemble(&recs).unwrap();
        let ts: Vec<_> = flows[0].packets.iter().map(|p| p.timestamp_us).collect();
        assert_eq!(ts, vec![10, 15, 20]);
    }

    #[test]
    fn segmentation_counts() {
        let flow = |n: usize| Flow {
            key: FlowKey::of(&pkt(0, (1, 1), (2, 2)), true),
            packets: (0..n as u64).map(|i| pkt(i, (1, 1), (2, 2))).collect(),
            label: None,
        };
        let f = flow(250);
        let s = segment_subflows(&f, 25).unwrap();
        assert_eq!((s.subflows.len(), s.dropped_packets), (10, 0));
        let f = flow(24);
        let s = segment_subflows(&f, 25).unwrap();
        assert_eq!((s.subflows.len(), s.dropped_packets), (0, 24));
        let f = flow(2070);
        let s = segment_subflows(&f, 1000).unwrap();
        assert_eq!((s.subflows.len(), s.dropped_packets), (2, 70));
        assert_eq!(s.subflows[1].index, 1);
        assert_eq!(s.subflows[1].packets[0].timestamp_us, 1000);
        assert!(segment_subflows(&f, 1).is_err());
    }

    /// Group-by oracle: bucket packets by key with a linear scan, in first-seen order.
    fn brute_force_groups(records: &[PacketRecord]) -> Vec<Vec<PacketRecord>> {
        let mut keys: Vec<FlowKey> = Vec::new();
        let mut groups: Vec<Vec<PacketRecord>> = Vec::new();
        for r in records {
            let k = FlowKey::of(r, true);
            match keys.iter().position(|x| *x == k) {
                Some(i) => groups[i].push(*r),
                None => {
                    keys.push(k);
                    groups.push(vec![*r]);
                }
            }
        }
        groups
    }

    #[test]
    fn interleaved_keys_match_group_by_oracle() {
        let endpoints = [((1, 10), (2, 20)), ((3, 30), (2, 20)), ((1, 11), (4, 40))];
        let recs: Vec<_> = (0..60u64)
            .map(|i| {
                let (a, b) = endpoints[(i * 7 % 3) as usize];
                if i % 2 == 0 {
                    pkt(i * 100, a, b)
                } else {
                    pkt(i * 100, b, a)
                }
            })
            .collect();
        let flows = assemble_flows(&recs, true, DEFAULT_IDLE_TIMEOUT_US).unwrap();
        assert_eq!(flows.len(), 3);
        let got: Vec<Vec<PacketRecord>> = flows.into_iter().map(|f| f.packets).collect();
        assert_eq!(got, brute_force_groups(&recs));
    }

    proptest! {
        #[test]
        fn partition_and_coverage(
            steps in prop::collection::vec((0u64..5_000_000, 0u8..4, any::<bool>()), 1..300),
            n in 2usize..20,
        ) {
            let mut ts = 0;
            let recs: Vec<_> = steps.iter().map(|&(gap, who, dir)| {
                ts += gap;
                let (a, b) = ((who, 1000 + u16::from(who)), (200, 443));
                if dir { pkt(ts, a, b) } else { pkt(ts, b, a) }
            }).collect();
            let flows = assemble_flows(&recs, true, 3_000_000).unwrap();
            prop_assert_eq!(flows.iter().map(Flow::len).sum::<usize>(), recs.len());
            for f in &flows {
                prop_assert!(f.packets.windows(2).all(|w| w[0].timestamp_us <= w[1].timestamp_us));
                prop_assert!(f.packets.windows(2).all(|w| w[1].timestamp_us - w[0].timestamp_us < 3_000_000));
                let seg = segment_subflows(f, n).unwrap();
                let joined: Vec<_> = seg.subflows.iter().flat_map(|s| s.packets.iter().copied()).collect();
                prop_assert_eq!(&joined[..], &f.packets[..f.len() / n * n]);
                prop_assert!(seg.subflows.iter().all(|s| s.len() == n));
                prop_assert!(seg.subflows.iter().enumerate().all(|(i, s)| s.index == i));
            }
        }

        #[test]
        fn key_symmetry(a in any::<u32>(), b in any::<u32>(), pa in any::<u16>(), pb in any::<u16>()) {
            let p = PacketRecord {
                src_ip: Ipv4Addr::from(a), dst_ip: Ipv4Addr::from(b),
                src_port: pa, dst_port: pb, ..pkt(0, (1, 1), (2, 2))
            };
            prop_assert_eq!(FlowKey::of(&p, true), FlowKey::of(&p.mirrored(), true));
        }
    }
}
